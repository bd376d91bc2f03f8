"""Temporal-difference Q-learning with linear features, the contrast method.

The recursion theta <- theta + alpha * D * psi(z) is a root-finding scheme,
not a descent scheme, and with function approximation its mean flow need not
be stable.  The scalar-LQR specialization makes that failure reproducible:
the greedy value has the closed form beta * x^2 with beta = theta1 -
theta2^2/theta3, which stops being defined the moment theta3 crosses zero.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap, LqrQuadraticBasis, qbar

__all__ = [
    "UndefinedMinimizerError",
    "WatkinsState",
    "watkins_step",
    "lqr_qbar",
    "lqr_greedy_gain",
    "mean_flow_estimate",
    "lqr_watkins_run",
    "LqrRunResult",
    "write_theta_trace",
]


class UndefinedMinimizerError(ArithmeticError):
    """The quadratic-in-u model lost positive curvature (theta3 <= 0)."""


@dataclass
class WatkinsState:
    theta: np.ndarray
    alpha: float = 1e-3
    threshold: float = 1e6
    diverged: bool = False
    event: str | None = None
    step_count: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=100))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float).copy()
        if self.alpha <= 0:
            raise ValueError("step size must be positive")

    def _latch(self, event: str):
        self.diverged = True
        self.event = event


def watkins_step(state: WatkinsState, transition, fmap: FeatureMap, actions) -> WatkinsState:
    """One update theta += alpha * D * psi(z) on transition (x, u, c, x_next)."""
    if state.diverged:
        raise RuntimeError(f"iteration already diverged ({state.event})")
    x, u, c, x_next = transition
    feat = fmap.psi(x, u)
    d = -float(feat @ state.theta) + float(c) + qbar(fmap, state.theta, x_next, actions)[0]
    state.theta = state.theta + state.alpha * d * feat
    state.step_count += 1
    norm = float(np.linalg.norm(state.theta))
    state.history.append(norm)
    if not np.all(np.isfinite(state.theta)):
        state._latch("non-finite parameters")
    elif norm > state.threshold:
        state._latch("norm threshold exceeded")
    return state


def lqr_qbar(theta, x) -> float:
    """Greedy value beta * x^2 for Q(x,u) = t1 x^2 + 2 t2 xu + t3 u^2.

    Requires theta3 > 0; otherwise the minimum over u does not exist.
    """
    t1, t2, t3 = float(theta[0]), float(theta[1]), float(theta[2])
    if t3 <= 0.0:
        raise UndefinedMinimizerError(f"theta3 = {t3} <= 0")
    beta = t1 - t2 * t2 / t3
    xf = float(np.asarray(x).reshape(-1)[0])
    return beta * xf * xf


def lqr_greedy_gain(theta) -> float:
    """Gain K with greedy input u = -K x."""
    t2, t3 = float(theta[1]), float(theta[2])
    if t3 <= 0.0:
        raise UndefinedMinimizerError(f"theta3 = {t3} <= 0")
    return t2 / t3


def mean_flow_estimate(theta, transitions, fmap: FeatureMap, actions=None) -> np.ndarray:
    """Empirical mean of D(theta) * psi(z) over recorded transitions.

    With actions=None the feature map must be the quadratic LQR basis and the
    greedy value uses the continuous-input closed form.
    """
    transitions = list(transitions)
    if not transitions:
        raise ValueError("need at least one transition")
    theta = np.asarray(theta, float)
    if actions is None and not isinstance(fmap, LqrQuadraticBasis):
        raise ValueError("continuous greedy value is only defined for the quadratic basis")
    acc = np.zeros(fmap.dim)
    for x, u, c, x_next in transitions:
        feat = fmap.psi(x, u)
        if actions is None:
            q_next = lqr_qbar(theta, x_next)
        else:
            q_next = qbar(fmap, theta, x_next, actions)[0]
        d = -float(feat @ theta) + float(c) + q_next
        acc += d * feat
    return acc / len(transitions)


@dataclass
class LqrRunResult:
    theta: np.ndarray
    diverged: bool
    event: str | None
    iters_run: int
    trace: list  # (iteration, theta triple) checkpoints
    max_norm: float


def lqr_watkins_run(
    theta0,
    n_iters: int,
    alpha: float = 1e-3,
    seed: int = 0,
    dt: float = 0.1,
    gain: float | None = None,
    threshold: float = 1e6,
    record_every: int = 1000,
) -> LqrRunResult:
    """Run the recursion on the scalar LQR under a sinusoid-probed input.

    The behavior input is u(t) = -K x(t) + sum_i sin((10 + 40 v_i) t) with
    ten frequencies, v_i uniform on [-1, 1], applied to x+ = x + dt*u with
    stage cost dt*(x^2 + u^2).  K defaults to the optimal gain.
    """
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1.0, 1.0, size=10)
    freqs = 10.0 + 40.0 * v
    if gain is None:
        p = (dt + math.sqrt(dt * dt + 4.0)) / 2.0
        gain = p / (1.0 + p * dt)
    basis = LqrQuadraticBasis()
    theta = np.asarray(theta0, float).copy()
    trace = [(0, theta.copy())]
    x = 0.0
    max_norm = float(np.linalg.norm(theta))
    for k in range(n_iters):
        t = k * dt
        u = -gain * x + float(np.sin(freqs * t).sum())
        c = dt * (x * x + u * u)
        x_next = x + dt * u
        feat = basis.psi((x,), u)
        try:
            q_next = lqr_qbar(theta, x_next)
        except UndefinedMinimizerError as err:
            return LqrRunResult(theta, True, str(err), k, trace, max_norm)
        d = -float(feat @ theta) + c + q_next
        theta = theta + alpha * d * feat
        norm = float(np.linalg.norm(theta))
        max_norm = max(max_norm, norm)
        if not np.isfinite(norm):
            return LqrRunResult(theta, True, "non-finite parameters", k + 1, trace, max_norm)
        if norm > threshold:
            return LqrRunResult(theta, True, "norm threshold exceeded", k + 1, trace, max_norm)
        if (k + 1) % record_every == 0:
            trace.append((k + 1, theta.copy()))
        x = x_next
    if trace[-1][0] != n_iters:
        trace.append((n_iters, theta.copy()))
    return LqrRunResult(theta, False, None, n_iters, trace, max_norm)


def write_theta_trace(path, trace) -> None:
    """CSV of (iteration, theta components) checkpoints."""
    if not trace:
        raise ValueError("empty trace")
    d = len(np.asarray(trace[0][1]).reshape(-1))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + [f"theta_{i}" for i in range(d)])
        for it, th in trace:
            writer.writerow([int(it)] + [repr(float(v)) for v in np.asarray(th).reshape(-1)])
