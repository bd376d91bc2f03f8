import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvxq import envs
from cvxq.features import TabularBasis
from cvxq.oracles import value_iteration
from cvxq.program import (
    EpisodicUpdateSpec,
    build_episodic_qp,
    build_primal_lp,
    dqn_tdiff,
    episode_matrices,
    extract_theta,
    gamma,
    mu_vector,
    solve_batch,
    solve_episodic,
)
from cvxq.sampling import TrajectorySegment, tdiff
from cvxq.solver import OPTIMAL


def _grid_segments(seed=0, n=60):
    env = envs.GridWorld(3)
    rng = np.random.default_rng(seed)
    segs = []
    states = [x for x in env.enumerate_states() if not env.in_goal(x)]
    for _ in range(n):
        x = states[rng.integers(len(states))]
        u = float(rng.integers(4))
        segs.append(TrajectorySegment(x, u, env.cost(x, u), env.step(x, u), 1))
    return env, segs


def test_gamma_zero_at_origin_and_convex():
    env, segs = _grid_segments()
    fmap = TabularBasis(env)
    acts = env.actions()
    assert gamma(np.zeros(fmap.dim), segs, fmap, acts) == 0.0

    rng = np.random.default_rng(1)
    a = rng.standard_normal(fmap.dim)
    b = rng.standard_normal(fmap.dim)
    for t in (0.0, 0.25, 0.5, 0.9, 1.0):
        mid = gamma(t * a + (1 - t) * b, segs, fmap, acts)
        assert mid <= t * gamma(a, segs, fmap, acts) + (1 - t) * gamma(b, segs, fmap, acts) + 1e-12


def test_gamma_counts_only_violations():
    env, segs = _grid_segments(n=10)
    fmap = TabularBasis(env)
    acts = env.actions()
    theta = np.random.default_rng(2).standard_normal(fmap.dim)
    manual = np.mean([max(0.0, -tdiff(fmap, theta, s, acts)) for s in segs])
    assert np.isclose(gamma(theta, segs, fmap, acts), manual)
    with pytest.raises(ValueError):
        gamma(theta, [], fmap, acts)


def test_mu_vector_policies():
    env, segs = _grid_segments(n=12)
    fmap = TabularBasis(env)
    emp = mu_vector("empirical", segs, fmap)
    assert np.isclose(emp.weights.sum(), 1.0)
    assert len(emp.pairs) == 12
    uni = mu_vector("uniform-support", segs, fmap)
    assert len(uni.pairs) <= 12  # duplicates merged
    exp = mu_vector("explicit", [], fmap, pairs=[(np.zeros(2), 0.0)], weights=[1.0])
    assert exp.psi_bar[fmap.pair_index(np.zeros(2), 0.0)] == 1.0
    with pytest.raises(ValueError):
        mu_vector("explicit", [], fmap, pairs=[(np.zeros(2), 0.0)], weights=[0.5])
    with pytest.raises(ValueError):
        mu_vector("nope", segs, fmap)
    with pytest.raises(ValueError):
        mu_vector("empirical", [], fmap)


def test_mu_vector_warns_when_degenerate():
    env = envs.GridWorld(3)
    fmap = TabularBasis(env)
    x_e, u_e = env.equilibrium
    with pytest.warns(UserWarning, match="degenerate"):
        mu_vector("explicit", [], fmap, pairs=[(x_e, u_e)], weights=[1.0])


def test_episode_matrices_row_order_and_fast_path():
    env, segs = _grid_segments(n=8)
    fmap = TabularBasis(env)
    acts = env.actions()
    M, C, Psi = episode_matrices(segs, fmap, acts)
    B = len(segs)
    assert M.shape == (4 * B, fmap.dim) and C.shape == (B,)
    # action-major: row j*B + k is psi(z_k) - psi(x_end_k, actions[j])
    for j, u in enumerate(acts):
        for k, s in enumerate(segs):
            row = fmap.psi(s.x_start, s.u) - fmap.psi(s.x_end, u)
            assert np.array_equal(M[j * B + k], row)
            assert np.array_equal(Psi[k], fmap.psi(s.x_start, s.u))

    # the vectorized separable path must agree with the generic loop
    env2 = envs.MountainCar()
    from cvxq.features import RffStateFeatures, SeparableBasis

    fmap2 = SeparableBasis(env2, RffStateFeatures(20, env2.state_bounds, seed=3))
    rng = np.random.default_rng(5)
    segs2 = []
    for _ in range(6):
        x = np.array([rng.uniform(-1.1, 0.5), rng.uniform(-0.06, 0.06)])
        u = float(rng.choice(env2.actions()))
        segs2.append(TrajectorySegment(x, u, 1.0, env2.step(x, u), 1))
    M_fast, C2, Psi_fast = episode_matrices(segs2, fmap2, env2.actions())

    class _Plain:
        dim = fmap2.dim

        def psi(self, x, u):
            return fmap2.psi(x, u)

    M_slow = np.array(
        [
            fmap2.psi(s.x_start, s.u) - fmap2.psi(s.x_end, u)
            for u in env2.actions()
            for s in segs2
        ]
    )
    assert np.allclose(M_fast, M_slow, atol=1e-12)


def test_batch_lp_recovers_q_star_under_full_coverage():
    env = envs.GridWorld(3)
    fmap = TabularBasis(env)
    acts = env.actions()
    segs = [
        TrajectorySegment(x, u, env.cost(x, u), env.step(x, u), 1)
        for x in env.enumerate_states()
        if not env.in_goal(x)
        for u in acts
    ]
    mu = mu_vector("uniform-support", segs, fmap)
    lp = build_primal_lp(segs, fmap, acts, mu)
    res = solve_batch(lp)
    assert res.status == OPTIMAL
    Q, states, actions = value_iteration(env, tol=1e-12)
    for i, x in enumerate(states):
        for j, u in enumerate(actions):
            idx = fmap.pair_index(x, u)
            got = res.x[idx] if idx >= 0 else 0.0
            assert abs(got - Q[i, j]) < 1e-7, (x, u, got, Q[i, j])


def test_batch_lp_zero_mu_short_circuits():
    env, segs = _grid_segments(n=5)
    fmap = TabularBasis(env)
    x_e, u_e = env.equilibrium
    with pytest.warns(UserWarning):
        mu = mu_vector("explicit", segs, fmap, pairs=[(x_e, u_e)], weights=[1.0])
    lp = build_primal_lp(segs, fmap, env.actions(), mu)
    res = solve_batch(lp)
    assert res.status == OPTIMAL and np.all(res.x == 0.0) and res.obj == 0.0


def test_theta_zero_always_feasible():
    """Gamma(0) = 0 for every environment: the zero model never violates
    the sampled Bellman inequalities because stage costs are nonnegative."""
    for env, fdim in (
        (envs.GridWorld(4), None),
        (envs.MountainCar(), 20),
        (envs.CartPole(), 20),
        (envs.Acrobot(), 20),
        (envs.Lqr1d(n_actions=11), None),
    ):
        rng = np.random.default_rng(11)
        acts = env.actions()
        if fdim is None:
            from cvxq.features import LqrQuadraticBasis

            fmap = (
                TabularBasis(env) if isinstance(env, envs.GridWorld) else LqrQuadraticBasis()
            )
        else:
            from cvxq.features import RffStateFeatures, SeparableBasis

            fmap = SeparableBasis(env, RffStateFeatures(fdim, env.state_bounds, seed=1))
        segs = []
        for _ in range(25):
            lo, hi = env.state_bounds[:, 0], env.state_bounds[:, 1]
            x = rng.uniform(lo, hi)
            u = float(acts[rng.integers(len(acts))])
            segs.append(TrajectorySegment(x, u, env.cost(x, u), env.step(x, u), 1))
        assert gamma(np.zeros(fmap.dim), segs, fmap, acts) == 0.0


def test_dqn_tdiff_is_affine_in_theta():
    env, segs = _grid_segments(n=1)
    fmap = TabularBasis(env)
    acts = env.actions()
    rng = np.random.default_rng(3)
    theta_n = rng.standard_normal(fmap.dim)
    a = rng.standard_normal(fmap.dim)
    b = rng.standard_normal(fmap.dim)
    s = segs[0]
    f = lambda th: dqn_tdiff(th, theta_n, s, fmap, acts)
    assert np.isclose(f(0.5 * a + 0.5 * b), 0.5 * f(a) + 0.5 * f(b))
    # frozen target: constant in the first argument's x_end values
    q_next = float(np.min(fmap.q_values(theta_n, s.x_end, acts)))
    assert np.isclose(f(np.zeros(fmap.dim)), s.cost + q_next)


def test_episodic_spec_validation():
    with pytest.raises(ValueError):
        EpisodicUpdateSpec(alpha=0.0)
    with pytest.raises(ValueError):
        EpisodicUpdateSpec(kappa=-1.0)
    with pytest.raises(ValueError):
        EpisodicUpdateSpec(regularizer="Huber")


@pytest.mark.parametrize("reg", ["DqnSquare", "HingeSquare", "L2", "L1"])
def test_episodic_qp_solves_and_extracts(reg):
    env, segs = _grid_segments(n=20)
    fmap = TabularBasis(env)
    acts = env.actions()
    mu = mu_vector("empirical", segs, fmap)
    spec = EpisodicUpdateSpec(kappa=0.5, tol=0.0, alpha=10.0, regularizer=reg)
    theta_n = np.zeros(fmap.dim)
    qp = build_episodic_qp(theta_n, segs, spec, fmap, acts, mu)
    res = solve_episodic(qp)
    assert res.status == OPTIMAL
    theta = extract_theta(qp, res)
    assert theta.shape == (fmap.dim,)
    # Tol = 0 forces feasibility: no Bellman violation at the new theta
    assert gamma(theta, segs, fmap, acts) < 1e-5


def test_episodic_qp_proximal_term_limits_movement():
    env, segs = _grid_segments(n=20)
    fmap = TabularBasis(env)
    acts = env.actions()
    mu = mu_vector("empirical", segs, fmap)
    theta_n = np.zeros(fmap.dim)
    small = build_episodic_qp(theta_n, segs, EpisodicUpdateSpec(alpha=1e-6), fmap, acts, mu)
    large = build_episodic_qp(theta_n, segs, EpisodicUpdateSpec(alpha=1e3), fmap, acts, mu)
    th_small = extract_theta(small, solve_episodic(small))
    th_large = extract_theta(large, solve_episodic(large))
    assert np.linalg.norm(th_small - theta_n) < 1e-3
    assert np.linalg.norm(th_large - theta_n) > np.linalg.norm(th_small - theta_n)


def test_episodic_qp_approaches_batch_lp():
    """With kappa = 0, Tol = 0 and a huge proximal radius the episodic update
    is the batch LP up to the vanishing quadratic term."""
    env = envs.GridWorld(3)
    fmap = TabularBasis(env)
    acts = env.actions()
    segs = [
        TrajectorySegment(x, u, env.cost(x, u), env.step(x, u), 1)
        for x in env.enumerate_states()
        if not env.in_goal(x)
        for u in acts
    ]
    mu = mu_vector("uniform-support", segs, fmap)
    lp = build_primal_lp(segs, fmap, acts, mu)
    lp_res = solve_batch(lp)
    spec = EpisodicUpdateSpec(kappa=0.0, tol=0.0, alpha=1e7)
    qp = build_episodic_qp(np.zeros(fmap.dim), segs, spec, fmap, acts, mu)
    th = extract_theta(qp, solve_episodic(qp))
    assert float(mu.psi_bar @ th) > lp_res.obj - 1e-4
    assert gamma(th, segs, fmap, acts) < 1e-6


def test_l1_regularizer_shrinks_coefficients():
    env, segs = _grid_segments(n=30)
    fmap = TabularBasis(env)
    acts = env.actions()
    mu = mu_vector("empirical", segs, fmap)
    free = build_episodic_qp(
        np.zeros(fmap.dim), segs, EpisodicUpdateSpec(kappa=0.0, alpha=100.0), fmap, acts, mu
    )
    taxed = build_episodic_qp(
        np.zeros(fmap.dim),
        segs,
        EpisodicUpdateSpec(kappa=5.0, alpha=100.0, regularizer="L1"),
        fmap,
        acts,
        mu,
    )
    th_free = extract_theta(free, solve_episodic(free))
    th_taxed = extract_theta(taxed, solve_episodic(taxed))
    assert np.abs(th_taxed).sum() < np.abs(th_free).sum()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000))
def test_episodic_slack_bound_holds(seed):
    env, segs = _grid_segments(seed=seed, n=15)
    fmap = TabularBasis(env)
    acts = env.actions()
    mu = mu_vector("empirical", segs, fmap)
    spec = EpisodicUpdateSpec(kappa=0.1, tol=0.3, alpha=50.0)
    qp = build_episodic_qp(np.zeros(fmap.dim), segs, spec, fmap, acts, mu)
    res = solve_episodic(qp)
    assert res.status == OPTIMAL
    theta = extract_theta(qp, res)
    # the epigraph mean-slack cap bounds the realized Bellman violation
    assert gamma(theta, segs, fmap, acts) <= spec.tol + 1e-6
