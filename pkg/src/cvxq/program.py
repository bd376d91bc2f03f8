"""Convex training programs built from trajectory segments.

Two programs share one constraint fabric.  The batch linear program maximizes
the mu-weighted value theta'psi_bar subject to one Bellman inequality row per
(segment, action) pair.  The episodic quadratic program relaxes those rows
through per-segment slacks with a mean-slack budget Tol, adds a proximal term
anchored at the previous iterate, and optionally a regularizer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import solver
from .features import FeatureMap, SeparableBasis
from .sampling import TrajectorySegment, tdiff
from .solver import OPTIMAL, SolveResult, SolverTolerances, StandardForm

__all__ = [
    "REGULARIZERS",
    "MuVector",
    "EpisodicUpdateSpec",
    "ConvexProgram",
    "mu_vector",
    "gamma",
    "episode_matrices",
    "build_primal_lp",
    "solve_batch",
    "build_episodic_qp",
    "solve_episodic",
    "dqn_tdiff",
]

REGULARIZERS = ("DqnSquare", "HingeSquare", "L2", "L1")


@dataclass
class MuVector:
    """Feature average under a discrete weighting measure over pairs."""

    psi_bar: np.ndarray
    pairs: list
    weights: np.ndarray


@dataclass
class EpisodicUpdateSpec:
    """Knobs of one episodic update: budget, proximal weight, regularizer."""

    kappa: float = 0.01
    tol: float = 0.0
    alpha: float = 1.0
    regularizer: str = "DqnSquare"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kappa < 0 or self.tol < 0:
            raise ValueError("kappa and tol must be nonnegative")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")


@dataclass
class ConvexProgram:
    """A min/max program over (q, P, A, b, G, h) with bookkeeping metadata."""

    sense: str
    q: np.ndarray
    A: object = None
    b: np.ndarray | None = None
    G: object = None
    h: np.ndarray | None = None
    P: object = None
    meta: dict = field(default_factory=dict)

    def standard_form(self) -> StandardForm:
        q = -self.q if self.sense == "max" else self.q
        return StandardForm(q, A=self.A, b=self.b, G=self.G, h=self.h, P=self.P)

    def write(self, path) -> None:
        solver.write_standard_form(path, self.standard_form(), sense="min")


def mu_vector(policy: str, segments, fmap: FeatureMap, pairs=None, weights=None) -> MuVector:
    """Feature average psi_bar under the chosen weighting measure.

    'empirical' weights observed segment-start pairs with multiplicity,
    'uniform-support' weights each distinct observed pair equally, and
    'explicit' takes pairs/weights directly (weights on the simplex).
    """
    if policy == "explicit":
        if pairs is None or weights is None:
            raise ValueError("explicit policy needs pairs and weights")
        weights = np.asarray(weights, float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        chosen = list(pairs)
    elif policy in ("empirical", "uniform-support"):
        if not segments:
            raise ValueError("no segments to build mu from")
        observed = [(s.x_start, s.u) for s in segments]
        if policy == "uniform-support":
            seen = {}
            for x, u in observed:
                seen.setdefault((tuple(np.asarray(x, float)), float(u)), (x, u))
            chosen = list(seen.values())
        else:
            chosen = observed
        weights = np.full(len(chosen), 1.0 / len(chosen))
    else:
        raise ValueError(f"unknown mu policy {policy!r}")
    psi_bar = np.zeros(fmap.dim)
    for w, (x, u) in zip(weights, chosen):
        psi_bar += w * fmap.psi(x, u)
    if not np.any(psi_bar):
        warnings.warn("mu is concentrated where features vanish; objective is degenerate")
    return MuVector(psi_bar, chosen, weights)


def gamma(theta, segments, fmap: FeatureMap, actions) -> float:
    """Mean negative-part Bellman error (1/N) * sum max{0, -tdiff}."""
    if not segments:
        raise ValueError("gamma needs at least one segment")
    total = 0.0
    for seg in segments:
        d = tdiff(fmap, theta, seg, actions)
        if d < 0.0:
            total -= d
    return total / len(segments)


def episode_matrices(segments, fmap: FeatureMap, actions):
    """Constraint fabric of a segment batch.

    Returns (M, C, Psi): M stacks the rows (psi(z_k) - psi(x_next_k, u))' in
    action-major order (all segments under the first action, then the second,
    ...), C holds segment costs, Psi the realized-pair features psi(z_k).
    """
    if not segments:
        raise ValueError("no segments")
    actions = np.asarray(actions, float)
    n_u = len(actions)
    B = len(segments)
    C = np.array([s.cost for s in segments])
    if isinstance(fmap, SeparableBasis) and np.array_equal(actions, fmap.actions):
        X0 = np.array([s.x_start for s in segments])
        XN = np.array([s.x_end for s in segments])
        u_idx = np.array([fmap._action_index[float(s.u)] for s in segments])
        Psi = np.zeros((B, fmap.dim))
        w = fmap.state_dim_features
        cols = (u_idx * w)[:, None] + np.arange(w)[None, :]
        Psi[np.arange(B)[:, None], cols] = fmap.state_matrix(X0)
        KN = fmap.state_matrix(XN)
        M = np.tile(Psi, (n_u, 1))
        for j in range(n_u):
            M[j * B : (j + 1) * B, j * w : (j + 1) * w] -= KN
    else:
        Psi = np.array([fmap.psi(s.x_start, s.u) for s in segments])
        M = np.empty((n_u * B, fmap.dim))
        for j, u in enumerate(actions):
            for k, s in enumerate(segments):
                M[j * B + k] = Psi[k] - fmap.psi(s.x_end, u)
    return M, C, Psi


def build_primal_lp(segments, fmap: FeatureMap, actions, mu: MuVector) -> ConvexProgram:
    """max theta'psi_bar subject to every Bellman inequality row."""
    M, C, _ = episode_matrices(segments, fmap, actions)
    n_u = len(actions)
    return ConvexProgram(
        sense="max",
        q=np.asarray(mu.psi_bar, float),
        A=M,
        b=np.tile(C, n_u),
        meta={"kind": "batch-lp", "n_segments": len(segments), "n_actions": n_u},
    )


def solve_batch(lp: ConvexProgram, tol: SolverTolerances | None = None) -> SolveResult:
    """Solve the batch LP; degenerate zero objective short-circuits to theta = 0.

    The returned objective is reported in the program's own sense.
    """
    if not np.any(lp.q):
        d = lp.q.size
        zero = np.zeros(d)
        return SolveResult(
            OPTIMAL,
            x=zero,
            obj=0.0,
            ineq_mult=np.zeros(lp.A.shape[0]) if lp.A is not None else None,
            residuals={"note": "degenerate objective; theta = 0 is optimal"},
            diagnostics="zero objective vector",
        )
    res = solver.solve(lp.standard_form(), tol)
    if res.status == OPTIMAL and lp.sense == "max":
        res.obj = -res.obj
    return res


def dqn_tdiff(theta, theta_n, seg: TrajectorySegment, fmap: FeatureMap, actions) -> float:
    """Bellman difference with the bootstrap target frozen at theta_n."""
    target = seg.cost + float(np.min(fmap.q_values(theta_n, seg.x_end, actions)))
    return target - fmap.q_value(theta, seg.x_start, seg.u)


def build_episodic_qp(
    theta_n,
    segments,
    spec: EpisodicUpdateSpec,
    fmap: FeatureMap,
    actions,
    mu: MuVector,
) -> ConvexProgram:
    """One proximal update as a QP over (theta, slacks[, abs-value epigraph]).

    Constraints: s_k >= row violation for every action row, s_k >= 0, and
    mean(s) <= Tol.  Objective: -theta'psi_bar + regularizer(kappa) +
    (1/(2 alpha)) ||theta - theta_n||^2.
    """
    theta_n = np.asarray(theta_n, float)
    M, C, Psi = episode_matrices(segments, fmap, actions)
    d = fmap.dim
    B = len(segments)
    n_u = len(actions)
    n_rows = n_u * B

    slack_sel = sp.csc_matrix(
        (-np.ones(n_rows), (np.arange(n_rows), np.tile(np.arange(B), n_u))),
        shape=(n_rows, B),
    )
    blocks = [
        sp.hstack([sp.csc_matrix(M), slack_sel], format="csc"),
        sp.hstack([sp.csc_matrix((B, d)), -sp.identity(B, format="csc")], format="csc"),
        sp.hstack([sp.csc_matrix((1, d)), sp.csc_matrix(np.full((1, B), 1.0 / B))], format="csc"),
    ]
    ub = [np.tile(C, n_u), np.zeros(B), np.array([spec.tol])]

    P_theta = sp.identity(d, format="csc") / spec.alpha
    q_theta = -np.asarray(mu.psi_bar, float) - theta_n / spec.alpha
    P_slack = sp.csc_matrix((B, B))
    n_extra = 0
    q_extra = np.zeros(0)

    if spec.regularizer == "DqnSquare" and spec.kappa > 0:
        targets = C + _qbar_batch(fmap, theta_n, [s.x_end for s in segments], actions)
        scale = 2.0 * spec.kappa / B
        P_theta = P_theta + scale * sp.csc_matrix(Psi.T @ Psi)
        q_theta = q_theta - scale * (Psi.T @ targets)
    elif spec.regularizer == "HingeSquare" and spec.kappa > 0:
        P_slack = (2.0 * spec.kappa / B) * sp.identity(B, format="csc")
    elif spec.regularizer == "L2" and spec.kappa > 0:
        P_theta = P_theta + 2.0 * spec.kappa * sp.identity(d, format="csc")
    elif spec.regularizer == "L1" and spec.kappa > 0:
        n_extra = d
        q_extra = np.full(d, spec.kappa)
        blocks = [sp.hstack([blk, sp.csc_matrix((blk.shape[0], d))], format="csc") for blk in blocks]
        eye = sp.identity(d, format="csc")
        blocks.append(sp.hstack([eye, sp.csc_matrix((d, B)), -eye], format="csc"))
        blocks.append(sp.hstack([-eye, sp.csc_matrix((d, B)), -eye], format="csc"))
        ub += [np.zeros(d), np.zeros(d)]

    A = sp.vstack(blocks, format="csc")
    b = np.concatenate(ub)
    P = sp.block_diag(
        [P_theta, P_slack] + ([sp.csc_matrix((d, d))] if n_extra else []), format="csc"
    )
    q = np.concatenate([q_theta, np.zeros(B), q_extra])
    return ConvexProgram(
        sense="min",
        q=q,
        A=A,
        b=b,
        P=P,
        meta={
            "kind": "episodic-qp",
            "n_theta": d,
            "n_slack": B,
            "n_extra": n_extra,
            "regularizer": spec.regularizer,
        },
    )


def _qbar_batch(fmap: FeatureMap, theta, states, actions) -> np.ndarray:
    if isinstance(fmap, SeparableBasis) and np.array_equal(np.asarray(actions, float), fmap.actions):
        K = fmap.state_matrix(np.asarray(states, float))
        heads = np.asarray(theta).reshape(fmap.n_actions, fmap.state_dim_features)
        return (K @ heads.T).min(axis=1)
    return np.array([float(np.min(fmap.q_values(theta, x, actions))) for x in states])


def solve_episodic(qp: ConvexProgram, tol: SolverTolerances | None = None) -> SolveResult:
    """Solve the episodic QP; theta is the leading block of the optimizer."""
    return solver.solve(qp.standard_form(), tol)


def extract_theta(qp: ConvexProgram, result: SolveResult) -> np.ndarray:
    if result.x is None:
        raise ValueError("no primal point to extract from")
    return np.asarray(result.x[: qp.meta["n_theta"]], float)
