"""Dual linear program, optimality audits, and boundedness diagnostics.

The dual of the batch LP prices trajectory rows: a nonnegative weight per
(segment, action) whose feature balance must reproduce the mu-vector.  At an
optimum the weights behave like an occupation measure over the optimal path,
which is checkable exactly in the tabular case once cost ties are broken.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .features import FeatureMap, TabularBasis
from .oracles import greedy_path, value_iteration
from .program import ConvexProgram, MuVector, episode_matrices
from .sampling import tdiff

__all__ = [
    "BOUNDED",
    "UNBOUNDED_CERTIFIED",
    "INCONCLUSIVE_SHORT_DATA",
    "UnsupportedBasisError",
    "DualCertificate",
    "CovarianceReport",
    "build_dual_lp",
    "varpi_from_vector",
    "dual_certificate",
    "slackness_audit",
    "tie_break_env",
    "occupancy_audit",
    "exact_occupancy_audit",
    "covariance_report",
    "boundedness_verdict",
    "write_report",
]

BOUNDED = "Bounded"
UNBOUNDED_CERTIFIED = "UnboundedCertified"
INCONCLUSIVE_SHORT_DATA = "InconclusiveShortData"


class UnsupportedBasisError(TypeError):
    """An audit was asked to run on a basis kind it is not defined for."""


def build_dual_lp(segments, fmap: FeatureMap, actions, mu: MuVector) -> ConvexProgram:
    """Exact LP dual of build_primal_lp on the same data.

    min sum_{k,u} varpi_{k,u} * C_k  s.t.  M' varpi = psi_bar, varpi >= 0,
    with M the primal constraint matrix (so the blocks here are transposes of
    the primal's, by construction).
    """
    M, C, _ = episode_matrices(segments, fmap, actions)
    n_rows = M.shape[0]
    n_u = len(actions)
    return ConvexProgram(
        sense="min",
        q=np.tile(C, n_u),
        A=-np.eye(n_rows),
        b=np.zeros(n_rows),
        G=M.T,
        h=np.asarray(mu.psi_bar, float),
        meta={"kind": "dual-lp", "n_segments": len(segments), "n_actions": n_u},
    )


def varpi_from_vector(vec, n_segments: int, n_actions: int) -> np.ndarray:
    """Reshape an action-major row vector into the (segment, action) table."""
    vec = np.asarray(vec, float)
    if vec.size != n_segments * n_actions:
        raise ValueError("vector length does not match the instance shape")
    return vec.reshape(n_actions, n_segments).T


@dataclass
class DualCertificate:
    varpi: np.ndarray  # (n_segments, n_actions), nonnegative
    objective: float
    equality_residual: float
    min_entry: float


def dual_certificate(dual_lp: ConvexProgram, result) -> DualCertificate:
    if result.x is None:
        raise ValueError("need a solved dual LP")
    varpi_vec = np.asarray(result.x, float)
    residual = float(np.abs(dual_lp.G @ varpi_vec - dual_lp.h).max())
    table = varpi_from_vector(varpi_vec, dual_lp.meta["n_segments"], dual_lp.meta["n_actions"])
    return DualCertificate(
        varpi=table,
        objective=float(dual_lp.q @ varpi_vec),
        equality_residual=residual,
        min_entry=float(varpi_vec.min()) if varpi_vec.size else 0.0,
    )


def slackness_audit(
    theta,
    varpi,
    segments,
    fmap: FeatureMap,
    actions,
    activation_tol: float = 1e-8,
    tol: float = 1e-6,
) -> list[dict]:
    """Complementary-slackness findings for a primal-dual pair.

    Every weight above activation_tol must sit on a segment whose Bellman
    difference vanishes and on an action that attains the greedy minimum at
    the segment's endpoint.  Returns the violations (empty list = clean).
    """
    varpi = np.asarray(varpi, float)
    actions = np.asarray(actions, float)
    if varpi.shape != (len(segments), len(actions)):
        raise ValueError("varpi shape does not match (segments, actions)")
    findings = []
    for k, seg in enumerate(segments):
        row = varpi[k]
        if not np.any(row > activation_tol):
            continue
        d_k = tdiff(fmap, theta, seg, actions)
        q_next = fmap.q_values(theta, seg.x_end, actions)
        q_min = float(q_next.min())
        for j in np.flatnonzero(row > activation_tol):
            if abs(d_k) > tol:
                findings.append(
                    {"segment": k, "action": float(actions[j]), "condition": "tight-tdiff", "residual": d_k}
                )
            excess = float(q_next[j]) - q_min
            if excess > tol:
                findings.append(
                    {"segment": k, "action": float(actions[j]), "condition": "argmin-action", "residual": excess}
                )
    return findings


class _TieBreakEnv:
    """Adds 1e-9 * pair_index to each pair's cost, equilibrium pair untouched.

    Makes the optimal policy unique so occupancy comparisons are well posed;
    goal self-loops off the equilibrium action pick up a tiny positive cost,
    which is what pins the dual mass at goal arrivals onto u^e.
    """

    def __init__(self, env, basis: TabularBasis):
        self._env = env
        self._basis = basis

    def __getattr__(self, name):
        return getattr(self._env, name)

    def cost(self, x, u):
        base = self._env.cost(x, u)
        idx = self._basis.pair_index(x, u)
        return base if idx < 0 else base + 1e-9 * idx


def tie_break_env(env, basis: TabularBasis):
    return _TieBreakEnv(env, basis)


def occupancy_audit(varpi, fmap: FeatureMap, mu: MuVector) -> dict:
    """Per-action dual mass versus optimal-path action usage (tabular only).

    The oracle side runs value iteration under tie-broken costs and follows
    the unique greedy continuation from each mu-support pair: the feature
    balance telescopes along that path, so each intermediate arrival
    contributes its departing action and the goal arrival contributes u^e.
    """
    if not isinstance(fmap, TabularBasis):
        raise UnsupportedBasisError("occupancy audit requires a tabular basis")
    env = tie_break_env(fmap.env, fmap)
    Q, states, actions = value_iteration(env)
    action_index = {float(u): j for j, u in enumerate(actions)}
    x_e, u_e = fmap.env.equilibrium
    counts = np.zeros(len(actions))
    for w, (x, u) in zip(mu.weights, mu.pairs):
        if fmap.pair_index(x, u) < 0:
            continue  # equilibrium pair carries no feature mass
        x1 = env.step(x, float(u))
        for _, a in greedy_path(env, Q, states, actions, x1):
            counts[action_index[float(a)]] += w
        counts[action_index[float(u_e)]] += w
    varpi = np.asarray(varpi, float)
    dual_sums = varpi.sum(axis=0)
    return {
        "actions": [float(u) for u in actions],
        "dual_sums": dual_sums.tolist(),
        "oracle_counts": counts.tolist(),
        "max_abs_diff": float(np.abs(dual_sums - counts).max()),
    }


def _exact_solve(columns, rhs):
    """Unique rational solution of sum_j x_j * columns[j] = rhs, or None.

    Plain Gauss-Jordan over Fraction; None when the columns are dependent or
    the system is inconsistent, both of which mean the float support did not
    pin down a single vertex.
    """
    m = len(columns)
    d = len(rhs)
    aug = [[Fraction(columns[j][i]) for j in range(m)] + [rhs[i]] for i in range(d)]
    pivot_row_of = {}
    row = 0
    for col in range(m):
        piv = next((r for r in range(row, d) if aug[r][col] != 0), None)
        if piv is None:
            return None
        aug[row], aug[piv] = aug[piv], aug[row]
        inv = Fraction(1, 1) / aug[row][col]
        aug[row] = [v * inv for v in aug[row]]
        lead = aug[row]
        for r in range(d):
            if r != row and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * p for a, p in zip(aug[r], lead)]
        pivot_row_of[col] = row
        row += 1
    for r in range(row, d):
        if aug[r][m] != 0:
            return None
    return [aug[pivot_row_of[c]][m] for c in range(m)]


def exact_occupancy_audit(
    varpi,
    segments,
    fmap: FeatureMap,
    activation_tol: float = 1e-8,
    mu_exact=None,
) -> dict:
    """Occupancy identity checked over the rationals (tabular only).

    The float dual solution is trusted only for which variables are active.
    Their values are re-derived from the equality constraints restricted to
    that support, with Fraction arithmetic throughout, so the per-action mass
    can be compared against the oracle path counts by literal equality
    instead of within a solver tolerance.  Duplicate data rows share a column
    after merging by (held pair, alternative action), which also removes the
    one degeneracy a vertex solution is allowed to have here.

    ``mu_exact`` supplies the weighting measure as ((x, u), Fraction) items;
    None means the empirical measure over segment starts.
    """
    if not isinstance(fmap, TabularBasis):
        raise UnsupportedBasisError("exact occupancy audit requires a tabular basis")
    env = tie_break_env(fmap.env, fmap)
    actions = np.asarray(fmap.env.actions(None), float)
    n_u = len(actions)
    B = len(segments)
    varpi = np.asarray(varpi, float)
    if varpi.shape != (B, n_u):
        raise ValueError("varpi shape does not match the dataset")
    if mu_exact is None:
        mu_exact = [((s.x_start, s.u), Fraction(1, B)) for s in segments]

    def unit_vec(x, u):
        vec = fmap.psi(x, float(u))
        return [int(v) for v in vec]

    # Merge duplicate rows by the full column identity (held pair, arrival
    # state, alternative action); two segments only share a column when both
    # endpoints agree, which restart rows from the goal do not.
    support: dict[tuple, float] = Counter()
    reps: dict[tuple, tuple] = {}
    for j in range(n_u):
        for k, seg in enumerate(segments):
            if varpi[k, j] > activation_tol:
                end = tuple(float(v) for v in np.asarray(seg.x_end, float))
                key = (fmap.pair_index(seg.x_start, seg.u), end, j)
                support[key] += varpi[k, j]
                reps.setdefault(key, seg)
    keys = sorted(support)
    columns = []
    for key in keys:
        j = key[-1]
        seg = reps[key]
        start = unit_vec(seg.x_start, seg.u)
        arrive = unit_vec(seg.x_end, actions[j])
        columns.append([a - b for a, b in zip(start, arrive)])

    mu_weight: dict[int, Fraction] = Counter()
    mu_rep: dict[int, tuple] = {}
    for (x, u), w in mu_exact:
        idx = fmap.pair_index(x, float(u))
        if idx < 0:
            continue
        mu_weight[idx] += Fraction(w)
        mu_rep.setdefault(idx, (np.asarray(x, float), float(u)))
    rhs = [mu_weight.get(i, Fraction(0)) for i in range(fmap.dim)]

    out = {
        "actions": [float(u) for u in actions],
        "support_size": len(keys),
        "exact_match": False,
    }
    solution = _exact_solve(columns, rhs)
    if solution is None:
        out["reason"] = "support does not determine a unique nonnegative vertex"
        return out
    if any(v < 0 for v in solution):
        out["reason"] = "reconstructed dual mass has a negative entry"
        return out

    sums = [Fraction(0)] * n_u
    for key, value in zip(keys, solution):
        sums[key[-1]] += value

    Q, states, acts = value_iteration(env)
    action_index = {float(u): j for j, u in enumerate(acts)}
    _, u_e = fmap.env.equilibrium
    counts = [Fraction(0)] * n_u
    for idx, w in mu_weight.items():
        x, u = mu_rep[idx]
        x1 = env.step(x, u)
        for _, a in greedy_path(env, Q, states, acts, x1):
            counts[action_index[float(a)]] += w
        counts[action_index[float(u_e)]] += w

    out["dual_sums"] = [str(s) for s in sums]
    out["oracle_counts"] = [str(c) for c in counts]
    out["exact_match"] = sums == counts
    return out


@dataclass
class CovarianceReport:
    psi_bar: np.ndarray
    second_moment: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    rank: int
    threshold: float
    n_samples: int

    @property
    def dim(self) -> int:
        return self.psi_bar.size

    def as_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_samples": self.n_samples,
            "eigenvalues": self.eigenvalues.tolist(),
            "rank": self.rank,
            "threshold": self.threshold,
        }


def covariance_report(data, fmap: FeatureMap, threshold: float = 1e-8) -> CovarianceReport:
    """Empirical feature mean/covariance over the visited pairs.

    ``data`` is either a segment list (uses start pairs) or explicit (x, u)
    pairs.  Numerical rank counts eigenvalues above threshold * lambda_max.
    """
    pairs = [(s.x_start, s.u) if hasattr(s, "x_start") else s for s in data]
    if not pairs:
        raise ValueError("no pairs to analyze")
    if len(pairs) < fmap.dim:
        warnings.warn("fewer samples than feature dimensions; rank is data-limited")
    Psi = np.array([fmap.psi(x, u) for x, u in pairs])
    psi_bar = Psi.mean(axis=0)
    R = (Psi.T @ Psi) / len(pairs)
    Sigma = R - np.outer(psi_bar, psi_bar)
    Sigma = 0.5 * (Sigma + Sigma.T)
    eigs = np.linalg.eigvalsh(Sigma)
    lam_max = float(eigs.max()) if eigs.size else 0.0
    rank = int(np.sum(eigs > threshold * lam_max)) if lam_max > 0 else 0
    return CovarianceReport(psi_bar, R, Sigma, eigs, rank, threshold, len(pairs))


def boundedness_verdict(report: CovarianceReport, probe_outcomes) -> dict:
    """Cross-check the covariance rank against recession-probe checkpoints.

    ``probe_outcomes`` is a list of (n_segments, direction-or-None) in
    increasing n.  Probe infeasibility at the largest checkpoint certifies a
    bounded region for the observed data; a surviving direction is a
    certificate only when the covariance is also rank-deficient, otherwise
    the data is too short to tell.
    """
    if not probe_outcomes:
        raise ValueError("need at least one probe checkpoint")
    outcomes = sorted(probe_outcomes, key=lambda t: t[0])
    last_n, last_dir = outcomes[-1]
    if last_dir is None:
        verdict = BOUNDED
    elif report.rank < report.dim:
        verdict = UNBOUNDED_CERTIFIED
    else:
        verdict = INCONCLUSIVE_SHORT_DATA
    return {
        "verdict": verdict,
        "checkpoints": [
            {"n_segments": int(n), "direction_found": d is not None} for n, d in outcomes
        ],
        "covariance_rank": report.rank,
        "dim": report.dim,
        "direction": None if last_dir is None else np.asarray(last_dir, float).tolist(),
    }


def write_report(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
