"""Command-line interface.

Each subcommand builds a typed request and either executes it in-process or,
with --server, posts it to a running service instance.  Exit codes: 0 on
success, 1 on runtime failure (bad config contents, solver trouble, I/O),
2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from pydantic import ValidationError

from .harness import load_config
from .service import ops
from .service.schemas import (
    DiagnoseRequest,
    DualAuditRequest,
    LqrCompareRequest,
    TrainRequest,
    ValidateRequest,
)

_ENDPOINTS = {
    TrainRequest: ("/train", ops.run_train),
    ValidateRequest: ("/validate", ops.run_validate),
    DiagnoseRequest: ("/diagnose", ops.run_diagnose),
    DualAuditRequest: ("/dual-audit", ops.run_dual_audit),
    LqrCompareRequest: ("/lqr-compare", ops.run_lqr_compare),
}


def _dispatch(req, server: str | None):
    path, local = _ENDPOINTS[type(req)]
    if server is None:
        resp = local(req)
        return resp.model_dump(exclude_none=True)
    import httpx

    r = httpx.post(server.rstrip("/") + path, json=req.model_dump(), timeout=None)
    if r.status_code != 200:
        raise RuntimeError(f"server returned {r.status_code}: {r.text}")
    return r.json()


def _emit(payload: dict) -> int:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _load(args) -> object:
    return load_config(args.config)


def _cmd_train(args) -> int:
    req = TrainRequest(
        config=_load(args),
        seed=args.seed,
        episodes=args.episodes,
        runs=args.runs,
        out=args.out,
        workers=args.workers,
    )
    payload = _dispatch(req, args.server)
    payload.pop("theta", None)  # keep terminal output small; theta.bin has it
    return _emit(payload)


def _cmd_validate(args) -> int:
    req = ValidateRequest(
        config=_load(args),
        theta_path=args.theta,
        runs=args.runs,
        seed=args.seed,
    )
    return _emit(_dispatch(req, args.server))


def _cmd_diagnose(args) -> int:
    req = DiagnoseRequest(config=_load(args), episodes=args.episodes, seed=args.seed, out=args.out)
    return _emit(_dispatch(req, args.server))


def _cmd_dual_audit(args) -> int:
    req = DualAuditRequest(config=_load(args), seed=args.seed, out=args.out)
    return _emit(_dispatch(req, args.server))


def _cmd_lqr_compare(args) -> int:
    fields = {}
    if args.config:
        with open(args.config) as fh:
            fields = json.load(fh)
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.iters is not None:
        fields["watkins_iters"] = args.iters
    if args.out is not None:
        fields["out"] = args.out
    req = LqrCompareRequest(**fields)
    return _emit(_dispatch(req, args.server))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvxq", description="Convex Q-learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--server", default=None, help="base URL of a running service")

    p = sub.add_parser("train", help="run episodic training and persist results")
    common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("validate", help="score a stored parameter vector")
    common(p)
    p.add_argument("--theta", required=True, help="path to theta.bin")
    p.add_argument("--runs", type=int, default=None)
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("diagnose", help="covariance rank and boundedness verdict")
    common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(handler=_cmd_diagnose)

    p = sub.add_parser("dual-audit", help="primal/dual solve with optimality audits")
    common(p)
    p.set_defaults(handler=_cmd_dual_audit)

    p = sub.add_parser("lqr-compare", help="convex batch solve versus the TD recursion")
    common(p, config_required=False)
    p.add_argument("--iters", type=int, default=None, help="TD iteration budget")
    p.set_defaults(handler=_cmd_lqr_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValidationError, ValueError, RuntimeError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
