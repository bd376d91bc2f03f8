"""Operation implementations behind the service endpoints and CLI commands."""

from __future__ import annotations

import os

import numpy as np

from .. import duality, harness, oracles, solver
from ..baseline import lqr_watkins_run
from ..features import TabularBasis
from ..program import build_primal_lp, mu_vector, solve_batch
from ..sampling import TrajectorySegment
from .schemas import (
    DiagnoseRequest,
    DiagnoseResponse,
    DualAuditRequest,
    DualAuditResponse,
    LqrCompareRequest,
    LqrCompareResponse,
    TrainRequest,
    TrainResponse,
    ValidateRequest,
    ValidateResponse,
)

__all__ = ["run_train", "run_validate", "run_diagnose", "run_dual_audit", "run_lqr_compare"]


def _effective_config(config, seed=None, episodes=None, runs=None, out=None):
    update = {}
    if seed is not None:
        update["seed"] = seed
    if episodes is not None:
        update["n_episodes"] = episodes
    if runs is not None:
        update["runs"] = runs
    if out is not None:
        update["out_dir"] = out
    return config.model_copy(update=update) if update else config


def run_train(req: TrainRequest) -> TrainResponse:
    config = _effective_config(req.config, req.seed, req.episodes, req.runs, req.out)
    out_dir = config.out_dir
    if config.runs > 1:
        result = harness.multi_run(config, config.runs, n_workers=req.workers)
        last = result.runs[-1]
        if out_dir:
            for i, run in enumerate(result.runs):
                harness.save_run(os.path.join(out_dir, f"run_{i:03d}"), run)
            duality.write_report(
                os.path.join(out_dir, "percentiles.json"), result.reward_percentiles
            )
        return TrainResponse(
            seed=config.seed,
            episodes=config.n_episodes,
            runs=config.runs,
            final_theta_norm=float(np.linalg.norm(last.theta)),
            final_reward=float(last.records[-1].reward) if last.records else 0.0,
            reward_percentiles=result.reward_percentiles,
            out_dir=out_dir,
        )
    result = harness.train(config)
    if out_dir:
        harness.save_run(out_dir, result)
    return TrainResponse(
        seed=result.seed,
        episodes=config.n_episodes,
        runs=1,
        final_theta_norm=float(np.linalg.norm(result.theta)),
        final_reward=float(result.records[-1].reward) if result.records else 0.0,
        theta=result.theta.tolist(),
        out_dir=out_dir,
    )


def run_validate(req: ValidateRequest) -> ValidateResponse:
    if (req.theta is None) == (req.theta_path is None):
        raise ValueError("provide exactly one of theta or theta_path")
    theta = (
        np.asarray(req.theta, float) if req.theta is not None else harness.load_theta(req.theta_path)
    )
    result = harness.validate(theta, req.config, n_runs=req.runs, seed=req.seed)
    return ValidateResponse(
        reward=result.reward,
        episode_rewards=[float(r) for r in result.episode_rewards],
        goal_hits=result.goal_hits,
    )


def run_diagnose(req: DiagnoseRequest) -> DiagnoseResponse:
    """Covariance rank plus recession probes at growing data checkpoints."""
    segments, env, fmap, actions = harness.collect_random_segments(
        req.config, seed=req.seed, n_episodes=req.episodes
    )
    if not segments:
        raise RuntimeError("no data collected; increase the episode budget")
    report = duality.covariance_report(segments, fmap)
    checkpoints = sorted({max(1, len(segments) // 4), max(1, len(segments) // 2), len(segments)})
    from ..program import episode_matrices

    outcomes = []
    for n in checkpoints:
        M, _, _ = episode_matrices(segments[:n], fmap, actions)
        outcomes.append((n, solver.recession_probe(M)))
    verdict = duality.boundedness_verdict(report, outcomes)
    payload = {"covariance": report.as_dict(), "verdict": verdict}
    out_path = None
    if req.out:
        os.makedirs(req.out, exist_ok=True)
        out_path = os.path.join(req.out, "diagnose.json")
        duality.write_report(out_path, payload)
    return DiagnoseResponse(
        covariance=report.as_dict(), verdict=verdict, n_segments=len(segments), out_path=out_path
    )


def run_dual_audit(req: DualAuditRequest) -> DualAuditResponse:
    """Solve primal and dual on one dataset and audit the optimality claims."""
    config = req.config
    env = harness.make_env(config.env)
    fmap = harness.make_feature_map(config.basis, env)
    actions = np.asarray(env.actions(None), float)
    seed = config.seed if req.seed is None else req.seed
    rng = np.random.default_rng([seed, 10])
    tabular = isinstance(fmap, TabularBasis)
    if tabular:
        data_env = duality.tie_break_env(env, fmap)
        segments = harness.collect_pair_coverage_dataset(data_env, fmap, rng)
    else:
        segments, _, _, _ = harness.collect_random_segments(config, seed=seed)
        data_env = env
    if not segments:
        raise RuntimeError("no data collected")
    mu = mu_vector("empirical", segments, fmap)
    lp = build_primal_lp(segments, fmap, actions, mu)
    primal = solve_batch(lp)
    if primal.status != solver.OPTIMAL:
        raise RuntimeError(f"primal LP not solved: {primal.status} {primal.diagnostics}")
    dual_lp = duality.build_dual_lp(segments, fmap, actions, mu)
    dual = solver.solve(dual_lp.standard_form())
    if dual.status != solver.OPTIMAL:
        raise RuntimeError(f"dual LP not solved: {dual.status} {dual.diagnostics}")
    gap = float(primal.obj - dual.obj)
    rel_gap = abs(gap) / (1.0 + abs(primal.obj))
    kkt = solver.verify_kkt(lp.standard_form(), primal)
    varpi = duality.varpi_from_vector(dual.x, len(segments), len(actions))
    findings = duality.slackness_audit(primal.x, varpi, segments, fmap, actions)
    occupancy = None
    if tabular:
        occupancy = duality.occupancy_audit(varpi, fmap, mu)
        occupancy["exact"] = duality.exact_occupancy_audit(varpi, segments, fmap)
    payload = {
        "n_segments": len(segments),
        "primal_objective": float(primal.obj),
        "dual_objective": float(dual.obj),
        "gap": gap,
        "relative_gap": rel_gap,
        "kkt": kkt,
        "slackness_findings": findings,
        "occupancy": occupancy,
    }
    out_path = None
    if req.out:
        os.makedirs(req.out, exist_ok=True)
        out_path = os.path.join(req.out, "dual_audit.json")
        duality.write_report(out_path, payload)
    return DualAuditResponse(
        n_segments=len(segments),
        primal_objective=float(primal.obj),
        dual_objective=float(dual.obj),
        gap=gap,
        relative_gap=rel_gap,
        kkt_passed=bool(kkt["passed"]),
        slackness_findings=findings,
        occupancy_supported=tabular,
        occupancy=occupancy,
        out_path=out_path,
    )


def run_lqr_compare(req: LqrCompareRequest) -> LqrCompareResponse:
    """Convex batch solve and the temporal-difference recursion, side by side."""
    from ..envs import Lqr1d
    from ..features import LqrQuadraticBasis

    env = Lqr1d(dt=req.dt, u_max=req.u_max, n_actions=req.n_actions)
    fmap = LqrQuadraticBasis()
    actions = np.asarray(env.actions(None), float)
    rng = np.random.default_rng([req.seed, 20])
    segments = []
    for _ in range(req.episodes):
        x = env.reset(rng)
        for _ in range(req.steps_per_episode):
            u = float(actions[rng.integers(len(actions))])
            cost = env.cost(x, u)
            y = env.step(x, u)
            segments.append(TrajectorySegment(x, u, float(cost), y, 1))
            x = y
    mu = mu_vector("empirical", segments, fmap)
    lp = build_primal_lp(segments, fmap, actions, mu)
    res = solve_batch(lp)
    if res.status != solver.OPTIMAL:
        raise RuntimeError(f"batch LP not solved: {res.status} {res.diagnostics}")
    oracle = oracles.riccati_scalar(req.dt)
    rel = np.abs(res.x - oracle.theta) / np.abs(oracle.theta)
    inits = req.watkins_inits or [[1.0, 5.0, 0.1], list(oracle.theta)]
    watkins = []
    traces = []
    for i, init in enumerate(inits):
        run = lqr_watkins_run(
            np.asarray(init, float),
            req.watkins_iters,
            alpha=req.watkins_alpha,
            seed=req.seed + i,
            dt=req.dt,
        )
        watkins.append(
            {
                "init": [float(v) for v in init],
                "diverged": run.diverged,
                "event": run.event,
                "iters_run": run.iters_run,
                "max_norm": run.max_norm,
                "final_theta": [float(v) for v in run.theta],
            }
        )
        traces.append(run.trace)
    out_dir = None
    if req.out:
        out_dir = req.out
        os.makedirs(out_dir, exist_ok=True)
        from ..baseline import write_theta_trace

        for i, trace in enumerate(traces):
            write_theta_trace(os.path.join(out_dir, f"watkins_trace_{i}.csv"), trace)
        duality.write_report(
            os.path.join(out_dir, "lqr_compare.json"),
            {
                "theta_convex": res.x.tolist(),
                "theta_oracle": oracle.theta.tolist(),
                "max_relative_error": float(rel.max()),
                "watkins": watkins,
            },
        )
    return LqrCompareResponse(
        theta_convex=res.x.tolist(),
        theta_oracle=oracle.theta.tolist(),
        max_relative_error=float(rel.max()),
        watkins=watkins,
        out_dir=out_dir,
    )
