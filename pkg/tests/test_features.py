import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvxq import envs
from cvxq.features import (
    LqrQuadraticBasis,
    RffStateFeatures,
    SeparableBasis,
    TabularBasis,
    qbar,
)


def test_rff_deterministic_under_seed():
    env = envs.MountainCar()
    a = RffStateFeatures(100, env.state_bounds, seed=11)
    b = RffStateFeatures(100, env.state_bounds, seed=11)
    c = RffStateFeatures(100, env.state_bounds, seed=12)
    x = np.array([-0.3, 0.01])
    assert np.array_equal(a(x), b(x))
    assert not np.array_equal(a(x), c(x))


def test_rff_dim_must_split_across_bandwidths():
    env = envs.MountainCar()
    with pytest.raises(ValueError):
        RffStateFeatures(101, env.state_bounds, seed=0)
    with pytest.raises(ValueError):
        RffStateFeatures(100, env.state_bounds, sigmas=[0.5, -1.0], seed=0)


def test_rff_batch_matches_scalar():
    env = envs.MountainCar()
    feats = RffStateFeatures(60, env.state_bounds, seed=4)
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.uniform(-1.2, 0.6, 32), rng.uniform(-0.07, 0.07, 32)])
    K = feats.batch(X)
    assert K.shape == (32, 60)
    for i in range(32):
        assert np.allclose(K[i], feats(X[i]))


def test_rff_inner_product_approximates_gaussian_kernel():
    # one bandwidth so the target kernel is exactly exp(-|dx|^2 / sigma^2)
    # on the rescaled coordinates; Monte Carlo over many features
    bounds = np.array([[0.0, 1.0], [0.0, 1.0]])
    sigma = 0.7
    feats = RffStateFeatures(4000, bounds, sigmas=[sigma], seed=123)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(0, 1, 2)
        y = rng.uniform(0, 1, 2)
        approx = float(feats(x) @ feats(y))
        exact = np.exp(-np.sum((x - y) ** 2) / sigma**2)
        worst = max(worst, abs(approx - exact))
    assert worst < 0.06  # ~1/sqrt(d) Monte Carlo error


def test_separable_basis_block_structure():
    env = envs.MountainCar()
    feats = RffStateFeatures(20, env.state_bounds, seed=2)
    fmap = SeparableBasis(env, feats)
    x = np.array([-0.4, 0.02])
    assert fmap.dim == 60
    vec = fmap.psi(x, 0.0)  # action index 1 of (-1, 0, 1)
    assert np.array_equal(vec[20:40], feats(x))
    assert np.all(vec[:20] == 0) and np.all(vec[40:] == 0)


def test_separable_basis_zero_at_equilibrium_and_goal():
    env = envs.MountainCar()
    fmap = SeparableBasis(env, RffStateFeatures(20, env.state_bounds, seed=2))
    x_e, u_e = env.equilibrium
    assert np.all(fmap.psi(x_e, u_e) == 0)
    # any state in the goal set maps to zero features for every action
    for u in env.actions():
        assert np.all(fmap.psi(np.array([0.55, 0.02]), u) == 0)


def test_separable_q_values_match_q_value():
    env = envs.MountainCar()
    fmap = SeparableBasis(env, RffStateFeatures(20, env.state_bounds, seed=5))
    rng = np.random.default_rng(1)
    theta = rng.standard_normal(fmap.dim)
    x = np.array([-0.2, -0.03])
    actions = env.actions()
    vals = fmap.q_values(theta, x, actions)
    for j, u in enumerate(actions):
        assert np.isclose(vals[j], fmap.q_value(theta, x, u))
        assert np.isclose(vals[j], theta @ fmap.psi(x, u))


def test_qbar_returns_min_and_lowest_index_argmin():
    env = envs.GridWorld(3)
    fmap = TabularBasis(env)
    theta = np.zeros(fmap.dim)
    val, u = qbar(fmap, theta, np.array([0.0, 0.0]), env.actions())
    assert val == 0.0 and u == env.actions()[0]  # tie broken toward index 0

    theta = np.ones(fmap.dim)
    idx = fmap.pair_index(np.array([0.0, 0.0]), 1.0)
    theta[idx] = -5.0
    val, u = qbar(fmap, theta, np.array([0.0, 0.0]), env.actions())
    assert val == -5.0 and u == 1.0


def test_tabular_basis_indicator_structure():
    env = envs.GridWorld(3)
    fmap = TabularBasis(env)
    assert fmap.dim == 9 * 4 - 1  # every pair except the equilibrium
    x = np.array([1.0, 0.0])
    vec = fmap.psi(x, 2.0)
    assert vec.sum() == 1.0
    assert vec[fmap.pair_index(x, 2.0)] == 1.0
    x_e, u_e = env.equilibrium
    assert fmap.pair_index(x_e, u_e) == -1
    assert np.all(fmap.psi(x_e, u_e) == 0)


def test_tabular_pair_indices_are_a_bijection():
    env = envs.GridWorld(3)
    fmap = TabularBasis(env)
    seen = set()
    for x in env.enumerate_states():
        for u in env.actions():
            idx = fmap.pair_index(x, u)
            if idx >= 0:
                seen.add(idx)
    assert seen == set(range(fmap.dim))


def test_lqr_quadratic_basis():
    fmap = LqrQuadraticBasis()
    x = np.array([2.0])
    assert np.allclose(fmap.psi(x, 3.0), [4.0, 12.0, 9.0])
    theta = np.array([1.0, 0.5, 2.0])
    us = np.array([-1.0, 0.0, 1.0])
    vals = fmap.q_values(theta, x, us)
    expected = [4.0 + 2 * 2 * u * 0.5 + 2.0 * u * u for u in us]
    assert np.allclose(vals, expected)


@settings(max_examples=30, deadline=None)
@given(
    t=st.floats(0.0, 1.0),
    x0=st.floats(-1.1, 0.5),
    v0=st.floats(-0.06, 0.06),
)
def test_qbar_is_concave_along_theta_lines(t, x0, v0):
    # qbar is a min of linear functions of theta, hence concave:
    # qbar(t a + (1-t) b) >= t qbar(a) + (1-t) qbar(b)
    env = envs.MountainCar()
    fmap = SeparableBasis(env, RffStateFeatures(20, env.state_bounds, seed=9))
    rng = np.random.default_rng(42)
    a = rng.standard_normal(fmap.dim)
    b = rng.standard_normal(fmap.dim)
    x = np.array([x0, v0])
    actions = env.actions()
    lhs = qbar(fmap, t * a + (1 - t) * b, x, actions)[0]
    rhs = t * qbar(fmap, a, x, actions)[0] + (1 - t) * qbar(fmap, b, x, actions)[0]
    assert lhs >= rhs - 1e-9
