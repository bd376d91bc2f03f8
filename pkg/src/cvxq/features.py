"""State-action feature maps used to parametrize Q-function approximations.

All maps share one convention: features vanish identically on goal states and
at the equilibrium pair, which pins Q(z^e) = 0 under any parameter vector and
keeps the zero-cost absorbing set consistent with a zero value there.
"""

from __future__ import annotations

import csv

import numpy as np

from .envs import Environment

__all__ = [
    "FeatureMap",
    "SeparableBasis",
    "RffStateFeatures",
    "TabularBasis",
    "LqrQuadraticBasis",
    "qbar",
    "write_feature_matrix_csv",
]


class FeatureMap:
    """Maps a state-action pair to a feature vector psi(x, u) in R^d."""

    dim: int

    def psi(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def q_value(self, theta, x, u) -> float:
        return float(self.psi(x, u) @ theta)

    def q_values(self, theta, x, actions) -> np.ndarray:
        """Q(x, u) for every u in ``actions``; subclasses may vectorize."""
        return np.array([self.q_value(theta, x, u) for u in actions])


def qbar(fmap: FeatureMap, theta, x, actions):
    """Greedy value and action: min over the action set, lowest index on ties."""
    vals = fmap.q_values(theta, x, actions)
    idx = int(np.argmin(vals))
    return float(vals[idx]), float(actions[idx])


class SeparableBasis(FeatureMap):
    """Kronecker-style basis: one state-feature block per action.

    psi(x, u) places the state feature vector in the block of the matching
    action and zeros elsewhere, so Q(x, u; theta) = k(x)' theta_u with an
    independent head per action.  Goal states map to the zero vector.
    """

    def __init__(self, env: Environment, state_features):
        self.env = env
        self.state_features = state_features
        self.actions = np.asarray(env.actions(None), float)
        self.n_actions = len(self.actions)
        self.state_dim_features = state_features.dim
        self.dim = self.n_actions * state_features.dim
        self._action_index = {float(u): i for i, u in enumerate(self.actions)}
        self._x_e = np.asarray(env.equilibrium[0], float)
        self._u_e = float(env.equilibrium[1])

    def state_vector(self, x) -> np.ndarray:
        if self.env.in_goal(x):
            return np.zeros(self.state_dim_features)
        return self.state_features(np.asarray(x, float))

    def psi(self, x, u):
        out = np.zeros(self.dim)
        if float(u) == self._u_e and np.array_equal(np.asarray(x, float), self._x_e):
            return out
        j = self._action_index[float(u)]
        w = self.state_dim_features
        out[j * w : (j + 1) * w] = self.state_vector(x)
        return out

    def q_values(self, theta, x, actions=None):
        k = self.state_vector(x)
        w = self.state_dim_features
        heads = np.asarray(theta).reshape(self.n_actions, w)
        vals = heads @ k
        if np.array_equal(np.asarray(x, float), self._x_e):
            vals = vals.copy()
            vals[self._action_index[self._u_e]] = 0.0
        if actions is None:
            return vals
        idx = [self._action_index[float(u)] for u in actions]
        return vals[idx]

    def state_matrix(self, X) -> np.ndarray:
        """Rows of state features for a batch of states, goal rows zeroed."""
        X = np.asarray(X, float)
        K = self.state_features.batch(X)
        goal = np.array([self.env.in_goal(x) for x in X])
        if goal.any():
            K = K.copy()
            K[goal] = 0.0
        return K

    def psi_matrix(self, X, u_indices) -> np.ndarray:
        """psi(x_i, u_i) rows for states X and per-row action indices."""
        K = self.state_matrix(X)
        n, w = K.shape
        out = np.zeros((n, self.dim))
        cols = (np.asarray(u_indices, int) * w)[:, None] + np.arange(w)[None, :]
        out[np.arange(n)[:, None], cols] = K
        return out


class RffStateFeatures:
    """Random Fourier cosine features over a rescaled state box.

    States are first rescaled coordinatewise to [0, 1] using ``bounds``.  The
    ``dim`` features are split evenly across the bandwidths in ``sigmas``; for
    bandwidth sigma each weight coordinate is N(0, 2/sigma^2) and each offset
    is uniform on [0, 2*pi), giving features sqrt(2/dim) * cos(w'x + b) whose
    inner products approximate the Gaussian kernel exp(-||dx||^2 / sigma^2).
    """

    def __init__(self, dim: int, bounds, sigmas=None, seed: int = 0):
        if sigmas is None:
            sigmas = np.linspace(0.05, 4.0, 10)
        sigmas = np.asarray(sigmas, float)
        if np.any(sigmas <= 0.0):
            raise ValueError("bandwidths must be positive")
        if dim % len(sigmas) != 0:
            raise ValueError("dim must be divisible by the number of bandwidths")
        bounds = np.asarray(bounds, float)
        n_coords = bounds.shape[0]
        counts = np.full(len(sigmas), dim // len(sigmas), int)
        rng = np.random.default_rng(seed)
        w_blocks = [rng.normal(0.0, np.sqrt(2.0) / s, size=(c, n_coords)) for s, c in zip(sigmas, counts)]
        b_blocks = [rng.uniform(0.0, 2.0 * np.pi, size=c) for c in counts]
        self.W = np.vstack(w_blocks)
        self.b = np.concatenate(b_blocks)
        self.dim = dim
        self.sigmas = sigmas
        self.lo = bounds[:, 0]
        self.span = bounds[:, 1] - bounds[:, 0]
        self.amp = np.sqrt(2.0 / dim)

    def __call__(self, x) -> np.ndarray:
        z = (np.asarray(x, float) - self.lo) / self.span
        return self.amp * np.cos(self.W @ z + self.b)

    def batch(self, X) -> np.ndarray:
        Z = (np.asarray(X, float) - self.lo) / self.span
        return self.amp * np.cos(Z @ self.W.T + self.b)


class TabularBasis(FeatureMap):
    """Indicator basis over the finite state-action set of a grid environment.

    One coordinate per (state, action) pair except the equilibrium pair,
    which is excluded so Q(z^e) = 0 holds identically.  ``pair_index`` gives
    the enumeration order used by the coordinates (equilibrium pair -> -1).
    """

    def __init__(self, env):
        self.env = env
        self.states = env.enumerate_states()
        self.actions = np.asarray(env.actions(None), float)
        x_e, u_e = env.equilibrium
        self._index: dict[tuple, int] = {}
        self._pairs: list[tuple[np.ndarray, float]] = []
        skipped = False
        for x in self.states:
            for u in self.actions:
                key = self._key(x, u)
                if not skipped and np.array_equal(x, x_e) and float(u) == float(u_e):
                    self._index[key] = -1
                    skipped = True
                    continue
                self._index[key] = len(self._pairs)
                self._pairs.append((x, float(u)))
        if not skipped:
            raise ValueError("equilibrium pair not found among enumerated pairs")
        self.dim = len(self._pairs)

    @staticmethod
    def _key(x, u):
        return (int(round(float(x[0]))), int(round(float(x[1]))), float(u))

    def pair_index(self, x, u) -> int:
        return self._index[self._key(x, u)]

    def pairs(self):
        return list(self._pairs)

    def psi(self, x, u):
        out = np.zeros(self.dim)
        i = self.pair_index(x, u)
        if i >= 0:
            out[i] = 1.0
        return out

    def q_values(self, theta, x, actions):
        theta = np.asarray(theta)
        vals = np.empty(len(actions))
        for j, u in enumerate(actions):
            i = self.pair_index(x, u)
            vals[j] = theta[i] if i >= 0 else 0.0
        return vals


class LqrQuadraticBasis(FeatureMap):
    """Quadratic monomial basis (x^2, 2xu, u^2) for scalar linear systems.

    With theta = (a, b, c) the model is Q(x, u) = a x^2 + 2b xu + c u^2, the
    exact parametrization of the scalar LQR Q-function.
    """

    dim = 3

    def psi(self, x, u):
        xf = float(np.asarray(x).reshape(-1)[0])
        uf = float(u)
        return np.array([xf * xf, 2.0 * xf * uf, uf * uf])

    def q_values(self, theta, x, actions):
        xf = float(np.asarray(x).reshape(-1)[0])
        us = np.asarray(actions, float)
        return theta[0] * xf * xf + 2.0 * theta[1] * xf * us + theta[2] * us * us


def write_feature_matrix_csv(path, fmap: FeatureMap, pairs) -> None:
    """Dump psi(x, u) rows for the given (x, u) pairs to a CSV file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "u"] + [f"psi_{i}" for i in range(fmap.dim)])
        for x, u in pairs:
            row = [repr(list(np.asarray(x, float))), repr(float(u))]
            row += [repr(float(v)) for v in fmap.psi(x, u)]
            writer.writerow(row)
