"""Dense LP/QP solving in one standard form, with honest status reporting.

Problems are minimizations of 0.5 x'Px + q'x over {Ax <= b, Gx = h}.  Linear
programs go to HiGHS, quadratic ones to OSQP; both return multipliers for
every constraint row and are checked against KKT residuals before a result is
labelled Optimal.  Unbounded linear programs come back with a certified
recession direction instead of a bare status.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

__all__ = [
    "OPTIMAL",
    "UNBOUNDED",
    "INFEASIBLE",
    "NUMERICAL_FAILURE",
    "SolverTolerances",
    "StandardForm",
    "SolveResult",
    "solve",
    "verify_kkt",
    "recession_probe",
    "unbounded_certificate",
    "write_standard_form",
    "read_standard_form",
    "write_kkt_report",
]

OPTIMAL = "Optimal"
UNBOUNDED = "Unbounded"
INFEASIBLE = "Infeasible"
NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolverTolerances:
    """Acceptance thresholds for labelling a result Optimal."""

    feasibility: float = 1e-8  # absolute, on constraint residuals
    complementarity: float = 1e-8  # relative to 1 + |objective|
    stationarity: float = 1e-6  # absolute on the KKT gradient
    qp_eps: float = 1e-9  # OSQP absolute/relative tolerance
    qp_max_iter: int = 200_000
    qp_polish: bool = True
    # iteration-based rho adaptation keeps OSQP runs bit-reproducible
    qp_adaptive_rho_interval: int = 25


def _as_dense(M):
    if M is None:
        return None
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, float)


class StandardForm:
    """min 0.5 x'Px + q'x  s.t.  Ax <= b, Gx = h.

    P is optional (None means LP) and must be symmetric psd.  A and G may be
    dense or scipy-sparse; duplicate or rank-deficient rows are allowed.
    """

    def __init__(self, q, A=None, b=None, G=None, h=None, P=None):
        self.q = np.asarray(q, float).reshape(-1)
        n = self.q.size
        self.A = A if (A is None or sp.issparse(A)) else np.asarray(A, float)
        self.b = None if b is None else np.asarray(b, float).reshape(-1)
        self.G = G if (G is None or sp.issparse(G)) else np.asarray(G, float)
        self.h = None if h is None else np.asarray(h, float).reshape(-1)
        self.P = P if (P is None or sp.issparse(P)) else np.asarray(P, float)
        if (self.A is None) != (self.b is None):
            raise ValueError("A and b must be given together")
        if (self.G is None) != (self.h is None):
            raise ValueError("G and h must be given together")
        if self.A is not None:
            if self.A.shape[1] != n or self.A.shape[0] != self.b.size:
                raise ValueError("inequality block dimensions inconsistent")
        if self.G is not None:
            if self.G.shape[1] != n or self.G.shape[0] != self.h.size:
                raise ValueError("equality block dimensions inconsistent")
        if self.P is not None:
            if self.P.shape != (n, n):
                raise ValueError("P must be n-by-n")
            asym_max = abs(self.P - self.P.T).max()
            if asym_max > 1e-12:
                raise ValueError("P must be symmetric within 1e-12")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def n_ineq(self) -> int:
        return 0 if self.A is None else self.A.shape[0]

    @property
    def n_eq(self) -> int:
        return 0 if self.G is None else self.G.shape[0]

    def is_lp(self) -> bool:
        if self.P is None:
            return True
        data = self.P.data if sp.issparse(self.P) else self.P
        return not np.any(data)

    def objective(self, x) -> float:
        val = float(self.q @ x)
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None = None
    obj: float | None = None
    ineq_mult: np.ndarray | None = None
    eq_mult: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None  # recession direction when Unbounded
    diagnostics: str = ""


def _residuals(form: StandardForm, x, lam, nu) -> dict:
    out = {}
    obj = form.objective(x)
    grad = form.q.copy()
    if form.P is not None:
        grad = grad + form.P @ x
    out["primal_ineq"] = 0.0
    out["complementarity"] = 0.0
    out["dual_feasibility"] = 0.0
    if form.A is not None:
        slack = form.b - form.A @ x
        out["primal_ineq"] = float(max(0.0, -slack.min())) if slack.size else 0.0
        if lam is not None:
            grad = grad + form.A.T @ lam
            out["dual_feasibility"] = float(max(0.0, -lam.min())) if lam.size else 0.0
            comp = np.abs(lam * slack).max() if slack.size else 0.0
            out["complementarity"] = float(comp) / (1.0 + abs(obj))
    out["primal_eq"] = 0.0
    if form.G is not None:
        res = form.G @ x - form.h
        out["primal_eq"] = float(np.abs(res).max()) if res.size else 0.0
        if nu is not None:
            grad = grad + form.G.T @ nu
    out["stationarity"] = float(np.abs(grad).max())
    return out


def _solve_lp(form: StandardForm, tol: SolverTolerances) -> SolveResult:
    # HiGHS defaults stop around 1e-7; run it tighter than the acceptance
    # gates so a clean LP never gets downgraded for solver slack alone.
    res = linprog(
        form.q,
        A_ub=form.A,
        b_ub=form.b,
        A_eq=form.G,
        b_eq=form.h,
        bounds=(None, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if res.status == 2:
        return SolveResult(INFEASIBLE, diagnostics=res.message)
    if res.status == 3:
        cert = unbounded_certificate(form)
        return SolveResult(UNBOUNDED, certificate=cert, diagnostics=res.message)
    if res.status != 0:
        return SolveResult(NUMERICAL_FAILURE, diagnostics=res.message)
    x = np.asarray(res.x, float)
    # HiGHS reports marginals with the opposite sign of our KKT convention.
    lam = -np.asarray(res.ineqlin.marginals, float) if form.A is not None else None
    nu = -np.asarray(res.eqlin.marginals, float) if form.G is not None else None
    rr = _residuals(form, x, lam, nu)
    result = SolveResult(OPTIMAL, x=x, obj=form.objective(x), ineq_mult=lam, eq_mult=nu, residuals=rr)
    return _gate_optimal(result, rr, tol, res.message)


def _solve_qp(form: StandardForm, tol: SolverTolerances) -> SolveResult:
    import osqp

    n = form.n
    rows = []
    lo = []
    up = []
    if form.A is not None:
        rows.append(sp.csc_matrix(form.A))
        lo.append(np.full(form.n_ineq, -np.inf))
        up.append(form.b)
    if form.G is not None:
        rows.append(sp.csc_matrix(form.G))
        lo.append(form.h)
        up.append(form.h)
    if rows:
        A = sp.vstack(rows, format="csc")
        lo = np.concatenate(lo)
        up = np.concatenate(up)
    else:
        A = sp.csc_matrix((0, n))
        lo = np.zeros(0)
        up = np.zeros(0)
    P = form.P if form.P is not None else sp.csc_matrix((n, n))
    prob = osqp.OSQP()
    prob.setup(
        P=sp.csc_matrix(P),
        q=form.q,
        A=A,
        l=lo,
        u=up,
        verbose=False,
        eps_abs=tol.qp_eps,
        eps_rel=tol.qp_eps,
        max_iter=tol.qp_max_iter,
        polishing=tol.qp_polish,
        adaptive_rho_interval=tol.qp_adaptive_rho_interval,
    )
    res = prob.solve(raise_error=False)
    status = res.info.status.lower()
    if "primal infeasible" in status:
        return SolveResult(INFEASIBLE, diagnostics=res.info.status)
    if "dual infeasible" in status:
        return SolveResult(UNBOUNDED, diagnostics=res.info.status)
    if "solved" not in status or "inaccurate" in status:
        x = None if res.x is None else np.asarray(res.x, float)
        return SolveResult(NUMERICAL_FAILURE, x=x, diagnostics=res.info.status)
    x = np.asarray(res.x, float)
    y = np.asarray(res.y, float)
    lam = y[: form.n_ineq] if form.A is not None else None
    nu = y[form.n_ineq :] if form.G is not None else None
    rr = _residuals(form, x, lam, nu)
    result = SolveResult(OPTIMAL, x=x, obj=form.objective(x), ineq_mult=lam, eq_mult=nu, residuals=rr)
    return _gate_optimal(result, rr, tol, res.info.status)


def _gate_optimal(result, rr, tol, message) -> SolveResult:
    # Refuse the Optimal label when residuals exceed the configured gates.
    ok = (
        rr["primal_ineq"] <= tol.feasibility
        and rr["primal_eq"] <= tol.feasibility
        and rr["dual_feasibility"] <= tol.feasibility
        and rr["complementarity"] <= tol.complementarity
        and rr["stationarity"] <= tol.stationarity
    )
    if ok:
        return result
    result.status = NUMERICAL_FAILURE
    result.diagnostics = f"residuals above tolerance: {rr} ({message})"
    return result


def solve(form: StandardForm, tol: SolverTolerances | None = None) -> SolveResult:
    """Solve a StandardForm, routing LPs to HiGHS and QPs to OSQP."""
    tol = tol or SolverTolerances()
    if form.is_lp():
        return _solve_lp(form, tol)
    return _solve_qp(form, tol)


def verify_kkt(form: StandardForm, result: SolveResult, tol: SolverTolerances | None = None) -> dict:
    """Recompute KKT residuals for an Optimal result and report pass/fail."""
    if result.status != OPTIMAL:
        raise ValueError("verify_kkt requires an Optimal result")
    tol = tol or SolverTolerances()
    rr = _residuals(form, result.x, result.ineq_mult, result.eq_mult)
    return {
        "residuals": rr,
        "tolerances": {
            "feasibility": tol.feasibility,
            "complementarity": tol.complementarity,
            "stationarity": tol.stationarity,
        },
        "passed": bool(
            rr["primal_ineq"] <= tol.feasibility
            and rr["primal_eq"] <= tol.feasibility
            and rr["dual_feasibility"] <= tol.feasibility
            and rr["complementarity"] <= tol.complementarity
            and rr["stationarity"] <= tol.stationarity
        ),
    }


def write_kkt_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def unbounded_certificate(form: StandardForm, tol: float = 1e-10) -> np.ndarray | None:
    """Improving recession direction for an LP: Av <= 0, Gv = 0, q'v < 0.

    Searches the box-truncated recession cone; returns None when no strictly
    improving direction is found there (numerically degenerate case).
    """
    zeros_b = np.zeros(form.n_ineq) if form.A is not None else None
    zeros_h = np.zeros(form.n_eq) if form.G is not None else None
    res = linprog(
        form.q,
        A_ub=form.A,
        b_ub=zeros_b,
        A_eq=form.G,
        b_eq=zeros_h,
        bounds=(-1.0, 1.0),
        method="highs",
    )
    if res.status != 0 or res.fun is None or res.fun > -tol:
        return None
    return np.asarray(res.x, float)


def recession_probe(A, feas_tol: float = 0.0) -> np.ndarray | None:
    """Nonzero direction v with Av <= 0, or None when only v = 0 qualifies.

    Enumerates coordinate-sign pins: for each coordinate j and sign s the
    feasibility LP {Av <= 0, v_j = s, -1 <= v <= 1} is attempted, so any
    returned direction has its largest-magnitude coordinate pinned at 1.
    Columns of A that are exactly zero short-circuit to the corresponding
    unit vector.
    """
    A = np.asarray(A, float)
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    n = A.shape[1]
    if A.shape[0] == 0:
        v = np.zeros(n)
        v[0] = 1.0
        return v
    col_max = np.abs(A).max(axis=0)
    zero_cols = np.flatnonzero(col_max == 0.0)
    if zero_cols.size:
        v = np.zeros(n)
        v[zero_cols[0]] = 1.0
        return v
    c = np.zeros(n)
    b = np.full(A.shape[0], feas_tol)
    for sign in (1.0, -1.0):
        for j in range(n):
            bounds = [(-1.0, 1.0)] * n
            bounds[j] = (sign, sign)
            res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
            if res.status == 0:
                return np.asarray(res.x, float)
    return None


# -- plain-text serialization ------------------------------------------


def _fmt_vector(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def write_standard_form(path, form: StandardForm, sense: str = "min") -> None:
    """Serialize to a line-oriented text format with full float precision."""
    lines = ["CONVEX-PROGRAM v1", f"SENSE {sense}", f"NVARS {form.n}"]
    lines.append("Q_LINEAR")
    lines.append(_fmt_vector(form.q))
    if form.P is None:
        lines.append("P_TRIPLETS 0")
    else:
        Pc = sp.coo_matrix(form.P)
        lines.append(f"P_TRIPLETS {Pc.nnz}")
        for i, j, v in zip(Pc.row, Pc.col, Pc.data):
            lines.append(f"{i} {j} {float(v)!r}")
    A = _as_dense(form.A)
    lines.append(f"A_ROWS {0 if A is None else A.shape[0]}")
    if A is not None:
        for row, bi in zip(A, form.b):
            lines.append(_fmt_vector(row) + " <= " + repr(float(bi)))
    G = _as_dense(form.G)
    lines.append(f"G_ROWS {0 if G is None else G.shape[0]}")
    if G is not None:
        for row, hi in zip(G, form.h):
            lines.append(_fmt_vector(row) + " == " + repr(float(hi)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_standard_form(path) -> tuple[StandardForm, str]:
    """Inverse of write_standard_form; returns (form, sense)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if lines[0] != "CONVEX-PROGRAM v1":
        raise ValueError("unrecognized header")
    sense = lines[1].split()[1]
    n = int(lines[2].split()[1])
    assert lines[3] == "Q_LINEAR"
    q = np.array([float(t) for t in lines[4].split()])
    pos = 5
    nnz = int(lines[pos].split()[1])
    pos += 1
    P = None
    if nnz:
        P = np.zeros((n, n))
        for _ in range(nnz):
            i, j, v = lines[pos].split()
            P[int(i), int(j)] = float(v)
            pos += 1
    n_a = int(lines[pos].split()[1])
    pos += 1
    A = b = None
    if n_a:
        A = np.zeros((n_a, n))
        b = np.zeros(n_a)
        for r in range(n_a):
            left, right = lines[pos].split("<=")
            A[r] = [float(t) for t in left.split()]
            b[r] = float(right)
            pos += 1
    n_g = int(lines[pos].split()[1])
    pos += 1
    G = h = None
    if n_g:
        G = np.zeros((n_g, n))
        h = np.zeros(n_g)
        for r in range(n_g):
            left, right = lines[pos].split("==")
            G[r] = [float(t) for t in left.split()]
            h[r] = float(right)
            pos += 1
    return StandardForm(q, A=A, b=b, G=G, h=h, P=P), sense
