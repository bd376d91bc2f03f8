"""Trajectory collection with state-dependent decision times.

A behavior policy picks an action only at sampling instants; the action is
held constant in between.  The next instant is whichever comes first: a cap of
``n_bar`` raw steps, or the first raw step at which the state leaves its
current bin.  Costs accumulated over the held interval become the stage cost
of one decision-level transition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .envs import Environment

__all__ = [
    "Binning",
    "NeedsMoreData",
    "TrajectorySegment",
    "next_sample_time",
    "collect_segments",
    "tdiff",
    "write_segments_csv",
    "read_segments_csv",
]


class NeedsMoreData(ValueError):
    """A recorded trajectory ends before the next decision time is resolved."""


class Binning:
    """Uniform rectangular partition of a state box.

    ``index`` flattens the per-coordinate cells into one integer; points
    outside the box are clamped into the boundary cells.
    """

    def __init__(self, bounds, shape):
        self.bounds = np.asarray(bounds, float)
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != self.bounds.shape[0]:
            raise ValueError("one bin count per state coordinate required")
        if any(s < 1 for s in self.shape):
            raise ValueError("bin counts must be positive")
        self.lo = self.bounds[:, 0]
        self.span = self.bounds[:, 1] - self.bounds[:, 0]
        self._shape_arr = np.asarray(self.shape)

    def cell(self, x) -> tuple[int, ...]:
        z = (np.asarray(x, float) - self.lo) / self.span
        cells = np.clip(np.floor(z * self._shape_arr).astype(int), 0, self._shape_arr - 1)
        return tuple(int(c) for c in cells)

    def index(self, x) -> int:
        return int(np.ravel_multi_index(self.cell(x), self.shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class TrajectorySegment:
    """One decision-level transition: action held from x_start to x_end."""

    x_start: np.ndarray
    u: float
    cost: float
    x_end: np.ndarray
    raw_steps: int


def next_sample_time(states, binning: Binning, t0: int, n_bar: int) -> int:
    """Next decision index along a recorded raw-state sequence.

    Returns min(t0 + n_bar, first t > t0 with a bin change).  Raises
    NeedsMoreData when the recording ends before either branch resolves.
    """
    if n_bar < 1:
        raise ValueError("n_bar must be at least 1")
    b0 = binning.index(states[t0])
    last = len(states) - 1
    for t in range(t0 + 1, min(t0 + n_bar, last) + 1):
        if binning.index(states[t]) != b0:
            return t
    if t0 + n_bar > last:
        raise NeedsMoreData(f"trajectory ends at index {last}, need {t0 + n_bar}")
    return t0 + n_bar


def collect_segments(
    env: Environment,
    behavior,
    x0,
    binning: Binning,
    n_bar: int,
    max_segments: int,
    max_raw_steps: int,
):
    """Roll one episode, holding each chosen action until the next instant.

    ``behavior`` maps a state to an action.  The episode ends at the goal, at
    a failure state, or at either budget.  Returns (segments, final_state,
    raw_steps_used).
    """
    if n_bar < 1:
        raise ValueError("n_bar must be at least 1")
    segments: list[TrajectorySegment] = []
    x = np.asarray(x0, float)
    raw_total = 0
    while len(segments) < max_segments and raw_total < max_raw_steps:
        if env.in_goal(x) or env.is_failure(x):
            break
        u = float(behavior(x))
        b0 = binning.index(x)
        cost = 0.0
        steps = 0
        y = x
        while True:
            cost += env.cost(y, u)
            y = env.step(y, u)
            steps += 1
            raw_total += 1
            if (
                steps >= n_bar
                or binning.index(y) != b0
                or env.in_goal(y)
                or env.is_failure(y)
                or raw_total >= max_raw_steps
            ):
                break
        segments.append(TrajectorySegment(x, u, cost, y, steps))
        x = y
    return segments, x, raw_total


def tdiff(fmap, theta, segment: TrajectorySegment, actions) -> float:
    """Bellman difference of one segment under the model Q(x,u) = psi(x,u)'theta.

    Positive when the inequality Q(x_start, u) <= cost + min_u' Q(x_end, u')
    holds with slack, negative when it is violated.
    """
    q_here = fmap.q_value(theta, segment.x_start, segment.u)
    q_next = float(np.min(fmap.q_values(theta, segment.x_end, actions)))
    return segment.cost + q_next - q_here


def write_segments_csv(path, segments) -> None:
    """Store segments as CSV; floats are written with full repr precision."""
    if not segments:
        raise ValueError("nothing to write")
    d = len(np.asarray(segments[0].x_start, float))
    header = (
        [f"x_start_{i}" for i in range(d)]
        + ["u", "cost"]
        + [f"x_end_{i}" for i in range(d)]
        + ["raw_steps"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in segments:
            row = [repr(float(v)) for v in np.asarray(s.x_start, float)]
            row += [repr(float(s.u)), repr(float(s.cost))]
            row += [repr(float(v)) for v in np.asarray(s.x_end, float)]
            row.append(str(int(s.raw_steps)))
            writer.writerow(row)


def read_segments_csv(path) -> list[TrajectorySegment]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for name in header if name.startswith("x_start_"))
        out = []
        for row in reader:
            vals = [float(v) for v in row[: 2 * d + 2]]
            out.append(
                TrajectorySegment(
                    x_start=np.array(vals[:d]),
                    u=vals[d],
                    cost=vals[d + 1],
                    x_end=np.array(vals[d + 2 : 2 * d + 2]),
                    raw_steps=int(row[2 * d + 2]),
                )
            )
    return out
