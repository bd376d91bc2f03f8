"""Episodic training loop, exploration, validation, config, persistence.

A run is driven by one JSON-serializable ExperimentConfig.  Randomness is
split into independent named streams derived from the run seed (resets,
behavior, evaluation, initialization), so repeated runs with the same config
and seed reproduce every trace byte for byte.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from . import envs as envs_mod
from .features import (
    FeatureMap,
    LqrQuadraticBasis,
    RffStateFeatures,
    SeparableBasis,
    TabularBasis,
    qbar,
)
from .program import (
    EpisodicUpdateSpec,
    build_episodic_qp,
    extract_theta,
    gamma,
    mu_vector,
    solve_episodic,
)
from .sampling import Binning, TrajectorySegment, collect_segments
from .solver import OPTIMAL, SolverTolerances

__all__ = [
    "EnvConfig",
    "BasisConfig",
    "SamplingConfig",
    "EpisodicConfig",
    "ExplorationConfig",
    "ValidationConfig",
    "ExperimentConfig",
    "ExplorationSchedule",
    "EpisodeRecord",
    "TrainResult",
    "ValidationResult",
    "MultiRunResult",
    "TRAINING_TOLERANCES",
    "make_env",
    "make_feature_map",
    "behavior_action",
    "train",
    "validate",
    "multi_run",
    "greedy_rollout",
    "collect_pair_coverage_dataset",
    "collect_random_segments",
    "load_config",
    "apply_env_overrides",
    "save_run",
    "write_metrics_csv",
    "save_theta",
    "load_theta",
]

# Training accepts OSQP's own convergence test at moderate accuracy; the
# strict defaults stay in place for audits and batch solves.
TRAINING_TOLERANCES = SolverTolerances(
    feasibility=1e-2,
    complementarity=float("inf"),
    stationarity=float("inf"),
    qp_eps=1e-5,
    qp_max_iter=10_000,
    qp_polish=False,
)


class EnvConfig(BaseModel):
    name: Literal["gridworld", "mountaincar", "cartpole", "acrobot", "lqr1d"]
    params: dict = Field(default_factory=dict)


class BasisConfig(BaseModel):
    kind: Literal["rff-separable", "tabular", "lqr-quadratic"]
    dim: int = 100  # state features per action block (rff-separable only)
    sigmas: Optional[list[float]] = None
    seed: int = 0


class SamplingConfig(BaseModel):
    bins: list[int] = Field(default_factory=lambda: [20, 20])
    n_bar: int = 50


class EpisodicConfig(BaseModel):
    kappa: float = 0.01
    tol: float = 0.0
    alpha: float = 1.0
    regularizer: Literal["DqnSquare", "HingeSquare", "L2", "L1"] = "DqnSquare"


class ExplorationConfig(BaseModel):
    eps0: float = 0.05
    xi: float = 0.0
    eps_max: float = 0.95

    @model_validator(mode="after")
    def _ranges(self):
        if not (0.0 <= self.eps0 <= 1.0 and 0.0 <= self.eps_max <= 1.0 and 0.0 <= self.xi <= 1.0):
            raise ValueError("exploration parameters must lie in [0, 1]")
        return self


class ValidationConfig(BaseModel):
    max_decisions: int = 200
    max_raw_steps: int = 20_000
    n_runs: int = 1
    fixed_start: Optional[list[float]] = None


class ExperimentConfig(BaseModel):
    env: EnvConfig
    basis: BasisConfig
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    episodic: EpisodicConfig = Field(default_factory=EpisodicConfig)
    exploration: ExplorationConfig = Field(default_factory=ExplorationConfig)
    validation: ValidationConfig = Field(default_factory=ValidationConfig)
    n_episodes: int = 100
    max_segments_per_episode: int = 350
    max_raw_steps_per_episode: int = 15_000
    mu_policy: Literal["empirical", "uniform-support"] = "empirical"
    theta0: Literal["zeros", "normal"] = "zeros"
    eval_every: int = 1
    abort_on_solver_failure: bool = False
    seed: int = 0
    runs: int = 1
    out_dir: Optional[str] = None


def make_env(cfg: EnvConfig):
    table = {
        "gridworld": envs_mod.GridWorld,
        "mountaincar": envs_mod.MountainCar,
        "cartpole": envs_mod.CartPole,
        "acrobot": envs_mod.Acrobot,
        "lqr1d": envs_mod.Lqr1d,
    }
    params = dict(cfg.params)
    if cfg.name == "mountaincar" and "init_box" in params:
        params["init_box"] = np.asarray(params["init_box"], float)
    return table[cfg.name](**params)


def make_feature_map(cfg: BasisConfig, env) -> FeatureMap:
    if cfg.kind == "tabular":
        return TabularBasis(env)
    if cfg.kind == "lqr-quadratic":
        return LqrQuadraticBasis()
    state_features = RffStateFeatures(cfg.dim, env.state_bounds, sigmas=cfg.sigmas, seed=cfg.seed)
    return SeparableBasis(env, state_features)


@dataclass
class ExplorationSchedule:
    """Monotone exploration weight: eps growing by (1 + xi) up to eps_max."""

    eps0: float
    xi: float
    eps_max: float
    value: float = field(init=False)

    def __post_init__(self):
        self.value = min(self.eps0, self.eps_max)

    def advance(self) -> float:
        self.value = min((1.0 + self.xi) * self.value, self.eps_max)
        return self.value


def behavior_action(fmap: FeatureMap, theta, x, actions, eps: float, rng: np.random.Generator) -> float:
    """Greedy with probability eps, otherwise uniform over the action set."""
    if rng.random() < eps:
        return qbar(fmap, theta, x, actions)[1]
    return float(actions[rng.integers(len(actions))])


@dataclass
class EpisodeRecord:
    episode: int
    epsilon: float
    n_segments: int
    raw_steps: int
    gamma_value: float
    reward: float
    theta_norm: float
    solver_status: str


@dataclass
class TrainResult:
    config: ExperimentConfig
    seed: int
    theta: np.ndarray
    thetas: list  # theta after each episode, theta0 first
    records: list

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])


def _rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *extra])


def _theta0(config: ExperimentConfig, fmap: FeatureMap, seed: int) -> np.ndarray:
    if config.theta0 == "normal":
        return _rng(seed, 3).standard_normal(fmap.dim)
    return np.zeros(fmap.dim)


def greedy_rollout(env, fmap, theta, x0, binning, n_bar, max_decisions, max_raw_steps):
    """Segmented rollout under the pure greedy policy; returns (segments, reached_goal)."""
    actions = np.asarray(env.actions(None), float)

    def policy(x):
        return qbar(fmap, theta, x, actions)[1]

    segments, x_final, _ = collect_segments(
        env, policy, x0, binning, n_bar, max_decisions, max_raw_steps
    )
    return segments, bool(env.in_goal(x_final))


def _evaluate(env, fmap, theta, config: ExperimentConfig, rng) -> float:
    v = config.validation
    if v.fixed_start is not None:
        x0 = np.asarray(v.fixed_start, float)
    else:
        x0 = env.reset(rng)
    binning = Binning(env.state_bounds, config.sampling.bins)
    segments, _ = greedy_rollout(
        env, fmap, theta, x0, binning, config.sampling.n_bar, v.max_decisions, v.max_raw_steps
    )
    return -float(sum(s.cost for s in segments))


def train(config: ExperimentConfig, seed: int | None = None) -> TrainResult:
    """Run the episodic loop: explore, segment, one proximal update per episode.

    Solver failures are recorded and the previous iterate is carried forward
    unless the config asks to abort.
    """
    seed = config.seed if seed is None else seed
    env = make_env(config.env)
    fmap = make_feature_map(config.basis, env)
    actions = np.asarray(env.actions(None), float)
    binning = Binning(env.state_bounds, config.sampling.bins)
    spec = EpisodicUpdateSpec(
        kappa=config.episodic.kappa,
        tol=config.episodic.tol,
        alpha=config.episodic.alpha,
        regularizer=config.episodic.regularizer,
    )
    schedule = ExplorationSchedule(
        config.exploration.eps0, config.exploration.xi, config.exploration.eps_max
    )
    rng_reset = _rng(seed, 0)
    rng_behavior = _rng(seed, 1)

    theta = _theta0(config, fmap, seed)
    thetas = [theta.copy()]
    records: list[EpisodeRecord] = []
    for n in range(config.n_episodes):
        eps_n = schedule.value
        x0 = env.reset(rng_reset)
        segments, _, raw_steps = collect_segments(
            env,
            lambda x: behavior_action(fmap, theta, x, actions, eps_n, rng_behavior),
            x0,
            binning,
            config.sampling.n_bar,
            config.max_segments_per_episode,
            config.max_raw_steps_per_episode,
        )
        status = "Skipped"
        if segments:
            mu = mu_vector(config.mu_policy, segments, fmap)
            qp = build_episodic_qp(theta, segments, spec, fmap, actions, mu)
            res = solve_episodic(qp, TRAINING_TOLERANCES)
            status = res.status
            if res.status == OPTIMAL:
                theta = extract_theta(qp, res)
            elif config.abort_on_solver_failure:
                raise RuntimeError(f"solver failed on episode {n}: {res.diagnostics}")
        gamma_value = gamma(theta, segments, fmap, actions) if segments else 0.0
        if config.eval_every and (n % config.eval_every == 0 or n == config.n_episodes - 1):
            reward = _evaluate(env, fmap, theta, config, _rng(seed, 2, n))
        else:
            reward = records[-1].reward if records else 0.0
        records.append(
            EpisodeRecord(
                episode=n,
                epsilon=eps_n,
                n_segments=len(segments),
                raw_steps=raw_steps,
                gamma_value=gamma_value,
                reward=reward,
                theta_norm=float(np.linalg.norm(theta)),
                solver_status=status,
            )
        )
        thetas.append(theta.copy())
        schedule.advance()
    return TrainResult(config=config, seed=seed, theta=theta, thetas=thetas, records=records)


@dataclass
class ValidationResult:
    reward: float  # average over validation episodes, Eq.-(22)-style sign
    episode_rewards: list
    goal_hits: int


def validate(theta, config: ExperimentConfig, n_runs: int | None = None, seed: int | None = None) -> ValidationResult:
    """Average cumulative reward of the pure greedy policy from fresh starts."""
    n_runs = config.validation.n_runs if n_runs is None else n_runs
    if n_runs < 1:
        raise ValueError("need at least one validation run")
    seed = config.seed if seed is None else seed
    env = make_env(config.env)
    fmap = make_feature_map(config.basis, env)
    theta = np.asarray(theta, float)
    if theta.shape != (fmap.dim,):
        raise ValueError(f"theta has {theta.size} entries, basis needs {fmap.dim}")
    binning = Binning(env.state_bounds, config.sampling.bins)
    rng = _rng(seed, 4)
    v = config.validation
    rewards = []
    hits = 0
    for _ in range(n_runs):
        if v.fixed_start is not None:
            x0 = np.asarray(v.fixed_start, float)
        else:
            x0 = env.reset(rng)
        segments, reached = greedy_rollout(
            env, fmap, theta, x0, binning, config.sampling.n_bar, v.max_decisions, v.max_raw_steps
        )
        rewards.append(-float(sum(s.cost for s in segments)))
        hits += int(reached)
    return ValidationResult(
        reward=float(np.mean(rewards)), episode_rewards=rewards, goal_hits=hits
    )


@dataclass
class MultiRunResult:
    runs: list  # TrainResult per run
    reward_percentiles: dict  # {"p10": [...], "p50": [...], "p90": [...]} per episode


def _train_for_pool(payload):
    config_data, run_index = payload
    config = ExperimentConfig(**config_data)
    result = train(config, seed=config.seed + run_index)
    return result


def multi_run(config: ExperimentConfig, n_runs: int | None = None, n_workers: int = 1) -> MultiRunResult:
    """Independent runs with per-run seeds and standard-normal initializations."""
    n_runs = config.runs if n_runs is None else n_runs
    if n_runs < 2:
        raise ValueError("multi_run needs at least two runs")
    config = config.model_copy(update={"theta0": "normal"})
    payloads = [(config.model_dump(), i) for i in range(n_runs)]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_train_for_pool, payloads))
    else:
        results = [_train_for_pool(p) for p in payloads]
    rewards = np.array([r.rewards for r in results])
    pct = {
        "p10": np.percentile(rewards, 10, axis=0).tolist(),
        "p50": np.percentile(rewards, 50, axis=0).tolist(),
        "p90": np.percentile(rewards, 90, axis=0).tolist(),
    }
    return MultiRunResult(runs=results, reward_percentiles=pct)


def collect_pair_coverage_dataset(
    env, fmap, rng, episode_len: int = 40, goal_dwell: int = 4, max_episodes: int = 500
):
    """Uniform-random unit segments until every pair has started one.

    Episodes run until absorption, dwell at the goal a few extra steps so the
    goal self-loop pairs (equilibrium pair among them) appear as starts, and
    the jump to the next episode's start state is recorded as one more
    segment held from the goal.  Those restart rows are valid Bellman
    constraints (the cost-to-go vanishes at the goal) and close the data into
    a single chain, which is what makes the boundedness diagnostics decisive
    on fully covered data.  Requires a tabular basis to track coverage;
    raises if the budget runs out first.
    """
    if not isinstance(fmap, TabularBasis):
        raise TypeError("coverage tracking needs a tabular basis")
    actions = np.asarray(env.actions(None), float)
    needed = {
        fmap.pair_index(x, u) for x in fmap.env.enumerate_states() for u in actions
    }
    seen: set[int] = set()
    segments: list[TrajectorySegment] = []
    pending = None  # (goal state, held action) waiting for the next start state
    n_restarts = 0

    def record(x, u, y):
        segments.append(TrajectorySegment(x, float(u), float(env.cost(x, float(u))), y, 1))
        seen.add(fmap.pair_index(x, float(u)))

    for _ in range(max_episodes):
        x = np.asarray(env.reset(rng), float)
        if pending is not None:
            record(pending[0], pending[1], x)
            pending = None
            n_restarts += 1
        steps = 0
        while steps < episode_len and not env.in_goal(x):
            u = actions[rng.integers(len(actions))]
            y = env.step(x, float(u))
            record(x, u, y)
            x = y
            steps += 1
        if env.in_goal(x):
            for _ in range(goal_dwell):
                u = actions[rng.integers(len(actions))]
                record(x, u, env.step(x, float(u)))
            pending = (x, actions[rng.integers(len(actions))])
        if needed <= seen and n_restarts > 0:
            return segments
    raise RuntimeError("pair coverage not reached within the episode budget")


def collect_random_segments(
    config: ExperimentConfig, seed: int | None = None, n_episodes: int | None = None
):
    """Segments from uniform-random behavior under the config's sampling scheme."""
    seed = config.seed if seed is None else seed
    n_episodes = config.n_episodes if n_episodes is None else n_episodes
    env = make_env(config.env)
    fmap = make_feature_map(config.basis, env)
    actions = np.asarray(env.actions(None), float)
    binning = Binning(env.state_bounds, config.sampling.bins)
    rng_reset = _rng(seed, 0)
    rng_behavior = _rng(seed, 1)
    pooled = []
    for _ in range(n_episodes):
        x0 = env.reset(rng_reset)
        segs, _, _ = collect_segments(
            env,
            lambda x: float(actions[rng_behavior.integers(len(actions))]),
            x0,
            binning,
            config.sampling.n_bar,
            config.max_segments_per_episode,
            config.max_raw_steps_per_episode,
        )
        pooled.extend(segs)
    return pooled, env, fmap, actions


# -- configuration and persistence --------------------------------------


def apply_env_overrides(data: dict, environ=None) -> dict:
    """Overlay CVXQ_-prefixed environment variables onto raw config data.

    Nested fields use double underscores (CVXQ_EPISODIC__KAPPA=0.1); values
    are parsed as JSON when possible, kept as strings otherwise.
    """
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(data))  # deep copy
    for key, raw in sorted(environ.items()):
        if not key.startswith("CVXQ_"):
            continue
        path = key[len("CVXQ_") :].lower().split("__")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return out


def load_config(path, environ=None, **cli_overrides) -> ExperimentConfig:
    """JSON file -> CVXQ_ environment overrides -> explicit CLI overrides."""
    with open(path) as fh:
        data = json.load(fh)
    data = apply_env_overrides(data, environ)
    for key, value in cli_overrides.items():
        if value is not None:
            data[key] = value
    return ExperimentConfig(**data)


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "epsilon", "gamma", "reward", "theta_norm", "solver_status"])
        for r in records:
            writer.writerow(
                [
                    r.episode,
                    repr(float(r.epsilon)),
                    repr(float(r.gamma_value)),
                    repr(float(r.reward)),
                    repr(float(r.theta_norm)),
                    r.solver_status,
                ]
            )


def save_theta(out_dir, theta, config: ExperimentConfig) -> None:
    theta = np.asarray(theta, float)
    with open(os.path.join(out_dir, "theta.bin"), "wb") as fh:
        fh.write(theta.astype("<f8").tobytes())
    sidecar = {
        "format": "float64-le",
        "count": int(theta.size),
        "basis": config.basis.model_dump(),
        "env": config.env.model_dump(),
    }
    with open(os.path.join(out_dir, "theta.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_theta(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return np.frombuffer(fh.read(), dtype="<f8").copy()


def save_run(out_dir, result: TrainResult) -> None:
    """Persist one run: metrics CSV, final parameters, and the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result.records)
    save_theta(out_dir, result.theta, result.config)
    manifest = {
        "config": result.config.model_dump(),
        "seed": result.seed,
        "episodes_run": len(result.records),
        "final_theta_norm": float(np.linalg.norm(result.theta)),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
