import numpy as np
import pytest

from cvxq.solver import (
    INFEASIBLE,
    NUMERICAL_FAILURE,
    OPTIMAL,
    UNBOUNDED,
    SolverTolerances,
    StandardForm,
    read_standard_form,
    recession_probe,
    solve,
    unbounded_certificate,
    verify_kkt,
    write_standard_form,
)

from lp_oracle import random_instances, solve_lp


def test_standard_form_validation():
    with pytest.raises(ValueError):
        StandardForm(q=[1.0, 2.0], A=[[1.0]], b=[1.0])  # column mismatch
    with pytest.raises(ValueError):
        StandardForm(q=[1.0], A=[[1.0]], b=[1.0, 2.0])  # row mismatch
    with pytest.raises(ValueError):
        StandardForm(q=[1.0], P=[[1.0, 0.0], [0.0, 1.0]])
    form = StandardForm(q=[1.0, 0.0], A=[[1.0, 0.0]], b=[2.0])
    assert form.n == 2 and form.n_ineq == 1 and form.n_eq == 0
    assert form.is_lp()


def test_lp_simple_box():
    # min -x - y  s.t. x <= 1, y <= 1, -x <= 0, -y <= 0
    form = StandardForm(
        q=[-1.0, -1.0],
        A=[[1, 0], [0, 1], [-1, 0], [0, -1]],
        b=[1, 1, 0, 0],
    )
    res = solve(form)
    assert res.status == OPTIMAL
    assert np.allclose(res.x, [1, 1], atol=1e-9)
    assert np.isclose(res.obj, -2.0)
    assert verify_kkt(form, res)["passed"]


def test_lp_with_equality():
    # min x + y  s.t. x + y = 1, x >= 0, y >= 0
    form = StandardForm(q=[1.0, 1.0], A=[[-1, 0], [0, -1]], b=[0, 0], G=[[1, 1]], h=[1])
    res = solve(form)
    assert res.status == OPTIMAL
    assert np.isclose(res.obj, 1.0)
    assert res.eq_mult.shape == (1,)


def test_lp_infeasible_and_unbounded():
    form = StandardForm(q=[1.0], A=[[1.0], [-1.0]], b=[-1.0, -1.0])  # x <= -1 and x >= 1
    assert solve(form).status == INFEASIBLE

    form = StandardForm(q=[-1.0], A=[[-1.0]], b=[0.0])  # min -x, x >= 0
    res = solve(form)
    assert res.status == UNBOUNDED
    v = unbounded_certificate(form)
    assert v is not None and form.q @ v < 0 and np.all(form.A @ v <= 1e-12)


def test_qp_matches_hand_solution():
    # min 0.5 (x-3)^2 expanded: P = [[1]], q = [-3]; constraint x <= 2 binds
    form = StandardForm(q=[-3.0], P=[[1.0]], A=[[1.0]], b=[2.0])
    res = solve(form)
    assert res.status == OPTIMAL
    assert np.isclose(res.x[0], 2.0, atol=1e-6)
    assert np.isclose(res.ineq_mult[0], 1.0, atol=1e-5)  # gradient balance: x - 3 + lam = 0
    assert verify_kkt(form, res)["passed"]


def test_qp_with_equality_projection():
    # projection of (1, 2) onto {x + y = 1}: answer (0, 1)
    form = StandardForm(q=[-1.0, -2.0], P=np.eye(2), G=[[1.0, 1.0]], h=[1.0])
    res = solve(form)
    assert res.status == OPTIMAL
    assert np.allclose(res.x, [0.0, 1.0], atol=1e-6)


def test_optimal_gate_rejects_corrupted_multipliers():
    form = StandardForm(
        q=[-1.0, -1.0],
        A=[[1, 0], [0, 1], [-1, 0], [0, -1]],
        b=[1, 1, 0, 0],
    )
    res = solve(form)
    res.ineq_mult = res.ineq_mult + 0.5  # fault injection
    with pytest.raises(ValueError):
        res.status = NUMERICAL_FAILURE
        verify_kkt(form, res)
    res.status = OPTIMAL
    assert not verify_kkt(form, res)["passed"]


def test_solver_is_deterministic():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((12, 4))
    b = rng.uniform(0.5, 2.0, 12)
    q = rng.standard_normal(4)
    form = StandardForm(q=q, A=A, b=b)
    r1, r2 = solve(form), solve(form)
    assert np.array_equal(r1.x, r2.x)
    assert np.array_equal(r1.ineq_mult, r2.ineq_mult)

    P = np.eye(4)
    formq = StandardForm(q=q, A=A, b=b, P=P)
    r1, r2 = solve(formq), solve(formq)
    assert np.array_equal(r1.x, r2.x)


def test_lp_agrees_with_vertex_enumeration():
    bounded, unbounded = random_instances(seed=77, n_bounded=15, n_unbounded=5)
    for q, A, b in bounded:
        res = solve(StandardForm(q=q, A=A, b=b))
        status, value, _ = solve_lp(q, A, b)
        assert status == "Optimal" and res.status == OPTIMAL
        assert abs(res.obj - value) <= 1e-8 * (1 + abs(value))
    for q, A, b in unbounded:
        form = StandardForm(q=q, A=A, b=b)
        assert solve(form).status == UNBOUNDED
        assert solve_lp(q, A, b)[0] == "Unbounded"
        v = unbounded_certificate(form)
        assert v is not None
        assert np.max(A @ v) <= 1e-12 and q @ v < 0


def test_recession_probe_finds_direction():
    # A v <= 0 admits v = (1, 1) direction
    A = np.array([[1.0, -1.0], [-1.0, 1.0]])
    v = recession_probe(A)
    assert v is not None
    assert np.max(A @ v) <= 1e-9 and np.max(np.abs(v)) == 1.0


def test_recession_probe_zero_column_shortcut():
    A = np.array([[1.0, 0.0], [-1.0, 0.0]])
    v = recession_probe(A)
    assert v is not None and v[1] == 1.0 and v[0] == 0.0


def test_recession_probe_pointed_cone_returns_none():
    # rows +/- e_i: only v = 0 satisfies Av <= 0
    A = np.vstack([np.eye(3), -np.eye(3)])
    assert recession_probe(A) is None
    with pytest.raises(ValueError):
        recession_probe(np.zeros(3))


def test_standard_form_text_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    form = StandardForm(
        q=rng.standard_normal(3),
        A=rng.standard_normal((4, 3)),
        b=rng.standard_normal(4),
        G=rng.standard_normal((1, 3)),
        h=rng.standard_normal(1),
        P=np.diag(rng.uniform(0.5, 2.0, 3)),
    )
    path = tmp_path / "program.txt"
    write_standard_form(path, form, sense="min")
    back, sense = read_standard_form(path)
    assert sense == "min"
    assert np.array_equal(back.q, form.q)
    assert np.array_equal(back.A, form.A)
    assert np.array_equal(back.b, form.b)
    assert np.array_equal(back.G, form.G)
    assert np.array_equal(back.h, form.h)
    assert np.array_equal(back.P, np.asarray(form.P))

    lp = StandardForm(q=form.q, A=form.A, b=form.b)
    write_standard_form(path, lp)
    back, _ = read_standard_form(path)
    assert back.P is None and back.G is None


def test_optimal_gate_downgrades_loose_qp_solutions():
    """A crude unpolished QP solve must not earn the Optimal label."""
    rng = np.random.default_rng(3)
    n = 6
    M = rng.standard_normal((n, n))
    form = StandardForm(
        q=rng.standard_normal(n),
        A=rng.standard_normal((10, n)),
        b=rng.uniform(0.5, 2.0, 10),
        P=M @ M.T + 0.1 * np.eye(n),
    )
    assert solve(form).status == OPTIMAL
    loose = solve(
        form,
        SolverTolerances(
            qp_eps=1e-2,
            qp_polish=False,
            feasibility=1e-12,
            complementarity=1e-12,
            stationarity=1e-12,
        ),
    )
    assert loose.status == NUMERICAL_FAILURE
    assert "residuals above tolerance" in loose.diagnostics
