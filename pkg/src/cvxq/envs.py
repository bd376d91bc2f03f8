"""Deterministic control environments with a common absorbing-goal convention.

Every environment exposes a finite ordered action set, a pure transition map,
a nonnegative stage cost that vanishes on the equilibrium pair and on goal
states, and an initial-state sampler.  Goal states are absorbing: every action
self-loops at zero cost, so infinite-horizon cost-to-go is finite wherever the
goal is reachable.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ActionDomainError",
    "Environment",
    "GridWorld",
    "MountainCar",
    "CartPole",
    "Acrobot",
    "Lqr1d",
    "RolloutResult",
    "rollout",
]


class ActionDomainError(ValueError):
    """Raised when an action outside actions(x) is applied."""


class Environment:
    """Base class; subclasses fill in dynamics and metadata.

    Attributes
    ----------
    state_dim : int
        Length of the state vector.
    state_bounds : ndarray, shape (state_dim, 2)
        Box containing every reachable state; used for binning and for
        rescaling by feature maps.
    equilibrium : tuple (x_e, u_e)
        Pair fixed by the dynamics with zero cost.
    """

    state_dim: int
    state_bounds: np.ndarray
    equilibrium: tuple[np.ndarray, float]

    def actions(self, x=None) -> np.ndarray:
        """Ordered action values available at ``x`` (state-independent here)."""
        raise NotImplementedError

    def step(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def cost(self, x, u) -> float:
        raise NotImplementedError

    def in_goal(self, x) -> bool:
        """Membership in the absorbing goal set (empty by default)."""
        return False

    def is_failure(self, x) -> bool:
        """Terminal failure test; ends episodes without absorbing."""
        return False

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    # -- shared checks -------------------------------------------------

    def _check_equilibrium(self) -> None:
        # Constructor-time sanity: z^e must be a zero-cost fixed point.
        x_e, u_e = self.equilibrium
        x_next = self.step(x_e, u_e)
        if not np.array_equal(np.asarray(x_next, float), np.asarray(x_e, float)):
            raise AssertionError("equilibrium state is not a fixed point")
        if self.cost(x_e, u_e) != 0.0:
            raise AssertionError("equilibrium cost is nonzero")

    def _require_action(self, u: float) -> None:
        if u not in self._action_set:
            raise ActionDomainError(f"action {u!r} not in action set")


class GridWorld(Environment):
    """n-by-n deterministic grid with an absorbing goal corner.

    States are (row, col) pairs stored as float vectors.  Actions are the
    ordered values [0, 1, 2, 3] meaning right, down, left, up; moves off the
    edge stay in place.  Stage cost is 1 off the goal and 0 on it.
    """

    def __init__(self, n: int = 3):
        if n < 2:
            raise ValueError("grid needs n >= 2")
        self.n = n
        self.state_dim = 2
        self.state_bounds = np.array([[0.0, n - 1.0], [0.0, n - 1.0]])
        self.goal = (n - 1, n - 1)
        self._actions = np.array([0.0, 1.0, 2.0, 3.0])
        self._action_set = {0.0, 1.0, 2.0, 3.0}
        self._moves = {0.0: (0, 1), 1.0: (1, 0), 2.0: (0, -1), 3.0: (-1, 0)}
        self.equilibrium = (np.array([n - 1.0, n - 1.0]), 0.0)
        self._check_equilibrium()

    def actions(self, x=None):
        return self._actions

    def in_goal(self, x):
        return int(round(float(x[0]))) == self.goal[0] and int(round(float(x[1]))) == self.goal[1]

    def step(self, x, u):
        self._require_action(float(u))
        if self.in_goal(x):
            return np.asarray(x, float).copy()
        r, c = int(round(float(x[0]))), int(round(float(x[1])))
        dr, dc = self._moves[float(u)]
        r2 = min(max(r + dr, 0), self.n - 1)
        c2 = min(max(c + dc, 0), self.n - 1)
        return np.array([float(r2), float(c2)])

    def cost(self, x, u):
        self._require_action(float(u))
        return 0.0 if self.in_goal(x) else 1.0

    def reset(self, rng):
        # uniform over non-goal cells
        while True:
            r = int(rng.integers(self.n))
            c = int(rng.integers(self.n))
            if (r, c) != self.goal:
                return np.array([float(r), float(c)])

    def enumerate_states(self) -> list[np.ndarray]:
        return [np.array([float(r), float(c)]) for r in range(self.n) for c in range(self.n)]


class MountainCar(Environment):
    """Standard underpowered-car-on-a-hill benchmark.

    position in [-1.2, 0.6], velocity in [-0.07, 0.07], actions (-1, 0, +1)
    with force coefficient 1e-3 and gravity term 2.5e-3*cos(3p).  Goal is
    position >= 0.5 (absorbing).  Stage cost is 1 per step off the goal.
    """

    GOAL_POSITION = 0.5

    def __init__(self, init_box=((-0.6, -0.4), (0.0, 0.0))):
        self.state_dim = 2
        self.state_bounds = np.array([[-1.2, 0.6], [-0.07, 0.07]])
        self.init_box = np.asarray(init_box, float)
        self._actions = np.array([-1.0, 0.0, 1.0])
        self._action_set = {-1.0, 0.0, 1.0}
        self.equilibrium = (np.array([self.GOAL_POSITION, 0.0]), 0.0)
        self._check_equilibrium()

    def actions(self, x=None):
        return self._actions

    def in_goal(self, x):
        return float(x[0]) >= self.GOAL_POSITION

    def step(self, x, u):
        self._require_action(float(u))
        p = float(x[0])
        v = float(x[1])
        if p >= self.GOAL_POSITION:
            return np.array([p, v])
        v2 = v + 0.001 * u - 0.0025 * math.cos(3.0 * p)
        if v2 > 0.07:
            v2 = 0.07
        elif v2 < -0.07:
            v2 = -0.07
        p2 = p + v2
        if p2 > 0.6:
            p2 = 0.6
        elif p2 < -1.2:
            p2 = -1.2
            if v2 < 0.0:
                v2 = 0.0  # inelastic left wall
        return np.array([p2, v2])

    def step_batch(self, X, u):
        """Vectorized transition over rows of ``X``; same map as step()."""
        X = np.asarray(X, float)
        P, V = X[:, 0], X[:, 1]
        V2 = np.clip(V + 0.001 * u - 0.0025 * np.cos(3.0 * P), -0.07, 0.07)
        P2 = np.clip(P + V2, -1.2, 0.6)
        V2 = np.where((P2 == -1.2) & (V2 < 0.0), 0.0, V2)
        done = P >= self.GOAL_POSITION
        return np.stack([np.where(done, P, P2), np.where(done, V, V2)], axis=1)

    def cost(self, x, u):
        self._require_action(float(u))
        return 0.0 if float(x[0]) >= self.GOAL_POSITION else 1.0

    def reset(self, rng):
        return rng.uniform(self.init_box[:, 0], self.init_box[:, 1])


class CartPole(Environment):
    """Cart-pole balance task, Euler-integrated at 0.02 s.

    State (x, x_dot, theta, theta_dot).  Actions are horizontal forces
    (-10, +10).  Failure when |x| > 2.4 or |theta| > 12 degrees; the goal set
    is a small box around the upright equilibrium, absorbing at zero cost.
    """

    TAU = 0.02
    GRAVITY = 9.8
    CART_MASS = 1.0
    POLE_MASS = 0.1
    POLE_HALF_LENGTH = 0.5
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * math.pi / 180.0

    def __init__(self, goal_tol: float = 0.05, init_scale: float = 0.05):
        self.state_dim = 4
        lim = np.array([self.X_LIMIT, 3.0, self.THETA_LIMIT, 3.5])
        self.state_bounds = np.stack([-lim, lim], axis=1)
        self.goal_tol = float(goal_tol)
        self.init_scale = float(init_scale)
        self._actions = np.array([-10.0, 10.0])
        self._action_set = {-10.0, 10.0}
        self.equilibrium = (np.zeros(4), -10.0)
        self._check_equilibrium()

    def actions(self, x=None):
        return self._actions

    def in_goal(self, x):
        return bool(np.all(np.abs(np.asarray(x, float)) <= self.goal_tol))

    def is_failure(self, x):
        return abs(float(x[0])) > self.X_LIMIT or abs(float(x[2])) > self.THETA_LIMIT

    def step(self, x, u):
        self._require_action(float(u))
        if self.in_goal(x):
            return np.asarray(x, float).copy()
        pos, vel, theta, omega = (float(x[0]), float(x[1]), float(x[2]), float(x[3]))
        total = self.CART_MASS + self.POLE_MASS
        ml = self.POLE_MASS * self.POLE_HALF_LENGTH
        sin_t, cos_t = math.sin(theta), math.cos(theta)
        tmp = (u + ml * omega * omega * sin_t) / total
        alpha = (self.GRAVITY * sin_t - cos_t * tmp) / (
            self.POLE_HALF_LENGTH * (4.0 / 3.0 - self.POLE_MASS * cos_t * cos_t / total)
        )
        acc = tmp - ml * alpha * cos_t / total
        return np.array(
            [
                pos + self.TAU * vel,
                vel + self.TAU * acc,
                theta + self.TAU * omega,
                omega + self.TAU * alpha,
            ]
        )

    def cost(self, x, u):
        self._require_action(float(u))
        return 0.0 if self.in_goal(x) else 1.0

    def reset(self, rng):
        return rng.uniform(-self.init_scale, self.init_scale, size=4)


def _wrap_pi(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


class Acrobot(Environment):
    """Two-link underactuated pendulum; torque on the second joint.

    State (theta1, theta2, dtheta1, dtheta2), torque actions (-1, 0, +1).
    Goal: -cos(theta1) - cos(theta1 + theta2) > 1 (tip above the bar),
    absorbing at zero cost; 1 per step otherwise.  Dynamics follow the
    standard book formulation, Euler-integrated in four 0.05 s substeps per
    0.2 s control interval, velocities clipped at (4*pi, 9*pi).
    """

    DT = 0.2
    SUBSTEPS = 4
    MAX_VEL1 = 4.0 * math.pi
    MAX_VEL2 = 9.0 * math.pi

    def __init__(self, init_scale: float = 0.1):
        self.state_dim = 4
        self.state_bounds = np.array(
            [
                [-math.pi, math.pi],
                [-math.pi, math.pi],
                [-self.MAX_VEL1, self.MAX_VEL1],
                [-self.MAX_VEL2, self.MAX_VEL2],
            ]
        )
        self.init_scale = float(init_scale)
        self._actions = np.array([-1.0, 0.0, 1.0])
        self._action_set = {-1.0, 0.0, 1.0}
        self.equilibrium = (np.array([math.pi, 0.0, 0.0, 0.0]), 0.0)
        self._check_equilibrium()

    def actions(self, x=None):
        return self._actions

    def in_goal(self, x):
        t1, t2 = float(x[0]), float(x[1])
        return -math.cos(t1) - math.cos(t1 + t2) > 1.0

    def _accel(self, s, torque):
        m = 1.0
        l1 = 1.0
        lc = 0.5
        inertia = 1.0
        g = 9.8
        t1, t2, w1, w2 = s
        d1 = m * lc * lc + m * (l1 * l1 + lc * lc + 2.0 * l1 * lc * math.cos(t2)) + 2.0 * inertia
        d2 = m * (lc * lc + l1 * lc * math.cos(t2)) + inertia
        phi2 = m * lc * g * math.cos(t1 + t2 - math.pi / 2.0)
        phi1 = (
            -m * l1 * lc * w2 * w2 * math.sin(t2)
            - 2.0 * m * l1 * lc * w2 * w1 * math.sin(t2)
            + (m * lc + m * l1) * g * math.cos(t1 - math.pi / 2.0)
            + phi2
        )
        a2 = (torque + (d2 / d1) * phi1 - m * l1 * lc * w1 * w1 * math.sin(t2) - phi2) / (
            m * lc * lc + inertia - d2 * d2 / d1
        )
        a1 = -(d2 * a2 + phi1) / d1
        return a1, a2

    def step(self, x, u):
        self._require_action(float(u))
        if self.in_goal(x):
            return np.asarray(x, float).copy()
        t1, t2, w1, w2 = (float(x[0]), float(x[1]), float(x[2]), float(x[3]))
        h = self.DT / self.SUBSTEPS
        for _ in range(self.SUBSTEPS):
            a1, a2 = self._accel((t1, t2, w1, w2), float(u))
            t1 += h * w1
            t2 += h * w2
            w1 += h * a1
            w2 += h * a2
        w1 = min(max(w1, -self.MAX_VEL1), self.MAX_VEL1)
        w2 = min(max(w2, -self.MAX_VEL2), self.MAX_VEL2)
        return np.array([_wrap_pi(t1), _wrap_pi(t2), w1, w2])

    def cost(self, x, u):
        self._require_action(float(u))
        return 0.0 if self.in_goal(x) else 1.0

    def reset(self, rng):
        return rng.uniform(-self.init_scale, self.init_scale, size=4)


class Lqr1d(Environment):
    """Scalar double-integrator-free LQR: x+ = x + dt*u, cost dt*(x^2 + u^2).

    The action set is a finite symmetric grid by default; pass
    ``n_actions=None`` for the continuous-input variant used by the
    closed-form Q-learning baseline (whose greedy minimizer never enumerates
    actions).
    """

    def __init__(self, dt: float = 0.1, u_max: float = 3.0, n_actions: int | None = 41,
                 init_range: float = 1.0, state_clip: float = 50.0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        self.u_max = float(u_max)
        self.state_dim = 1
        self.state_clip = float(state_clip)
        self.state_bounds = np.array([[-state_clip, state_clip]])
        self.init_range = float(init_range)
        if n_actions is None:
            self._actions = None
        else:
            if n_actions < 2:
                raise ValueError("need at least 2 grid actions")
            self._actions = np.linspace(-u_max, u_max, n_actions)
        self.equilibrium = (np.array([0.0]), 0.0)
        self._check_equilibrium()

    @property
    def continuous(self) -> bool:
        return self._actions is None

    def actions(self, x=None):
        if self._actions is None:
            raise ActionDomainError("continuous-input instance has no finite action set")
        return self._actions

    def _require_action(self, u):
        """Validate u and return it snapped to the grid (grids never have
        exactly representable spacing, so nominal values like -0.9 must hit)."""
        if self._actions is None:
            if not math.isfinite(u):
                raise ActionDomainError("action must be finite")
            return u
        i = int(np.argmin(np.abs(self._actions - u)))
        if abs(self._actions[i] - u) > 1e-9:
            raise ActionDomainError(f"action {u!r} not on the input grid")
        return float(self._actions[i])

    def step(self, x, u):
        u = self._require_action(float(u))
        return np.array([float(x[0]) + self.dt * u])

    def cost(self, x, u):
        u = self._require_action(float(u))
        xf = float(x[0])
        return self.dt * (xf * xf + u * u)

    def reset(self, rng):
        return rng.uniform(-self.init_range, self.init_range, size=1)


class RolloutResult:
    """States, actions, and costs from a closed-loop rollout."""

    def __init__(self, states, actions, costs):
        self.states = states
        self.actions = actions
        self.costs = costs

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs))

    def __len__(self):
        return len(self.actions)


def rollout(env: Environment, policy, x0, max_steps: int) -> RolloutResult:
    """Run ``policy`` (a state -> action callable) from ``x0``.

    Stops at goal entry, terminal failure, or after ``max_steps`` transitions.
    The returned state list includes the final state, so it is one longer
    than the action/cost lists.
    """
    x = np.asarray(x0, float)
    states = [x]
    acts: list[float] = []
    costs: list[float] = []
    for _ in range(max_steps):
        if env.in_goal(x) or env.is_failure(x):
            break
        u = float(policy(x))
        costs.append(env.cost(x, u))
        acts.append(u)
        x = env.step(x, u)
        states.append(x)
    return RolloutResult(states, acts, costs)
