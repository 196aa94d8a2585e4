"""``srmdp`` command line: solve / eval / surprise / tradeoff / domain-export / posterior."""
from __future__ import annotations

import argparse
import json
import sys

from . import experiments as ex
from . import io as sio
from .errors import ArgumentError, SrmdpError

COMMANDS = ("solve", "eval", "surprise", "tradeoff", "domain-export", "posterior")


def _grid(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srmdp", description="Soft-robust policies for batch RL on tabular MDPs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--domain", help="riverswim, inventory, toy, random, or an MDP .json file")
    p.add_argument("--algorithm", help=f"one of {', '.join(ex.ALGORITHMS)} (comma list for tradeoff)")
    p.add_argument("--alpha", type=float)
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float)
    lam.add_argument("--lambda-grid", dest="lambda_grid", type=_grid)
    p.add_argument("--models", dest="n_models", type=int, help="training ensemble size")
    p.add_argument("--test-models", type=int, help="held-out ensemble size")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--features", choices=("poly2", "one_hot"))
    p.add_argument("--eval-on", choices=("test", "train"), help="ensemble used for reported metrics (posterior: which ensemble to write)")
    p.add_argument("--batch-size", type=int, help="transitions (or demand observations) in the batch")
    p.add_argument("--node-limit", type=int, help="branch-and-bound node limit")
    p.add_argument("--policy", help="policy JSON for eval")
    p.add_argument("--policy-out", help="write the solved policy as JSON")
    p.add_argument("--summary-out", help="surprise: write the per-method summary here instead of stdout")
    p.add_argument("--timing", action="store_true", default=None, help="record wall-clock runtime_ms")
    return p


def config_from_args(args: argparse.Namespace) -> ex.ExperimentConfig:
    base = ex.ExperimentConfig.from_dict(sio.read_json(args.config)) if args.config else ex.ExperimentConfig()
    grid = [args.lam] if args.lam is not None else args.lambda_grid
    if args.command == "tradeoff" and grid is None and not args.config:
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    return ex.with_overrides(
        base,
        domain=args.domain,
        algorithm=args.algorithm,
        alpha=args.alpha,
        lambda_grid=grid,
        n_models=args.n_models,
        test_models=args.test_models,
        seed=args.seed,
        trials=args.trials,
        tol=args.tol,
        out=args.out,
        features=args.features,
        eval_on=args.eval_on,
        batch_size=args.batch_size,
        node_limit=args.node_limit,
        policy=args.policy,
        policy_out=args.policy_out,
        timing=args.timing,
    )


def run(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    if args.command == "solve":
        rows, _ = ex.cmd_solve(cfg)
        sio.write_text(cfg.out, ex.results_csv(rows))
    elif args.command == "tradeoff":
        sio.write_text(cfg.out, ex.results_csv(ex.cmd_tradeoff(cfg)))
    elif args.command == "eval":
        sio.write_text(cfg.out, ex.results_csv([ex.cmd_eval(cfg)]))
    elif args.command == "surprise":
        rows, summary = ex.cmd_surprise(cfg)
        if cfg.out:
            sio.write_text(cfg.out, sio.rows_to_csv(ex.SURPRISE_HEADER, rows))
        sio.write_text(args.summary_out, sio.rows_to_csv(ex.SUMMARY_HEADER, summary))
    elif args.command == "domain-export":
        setup = ex.build_domain(cfg)
        sio.write_text(cfg.out, sio.dumps(sio.mdp_to_dict(setup.mdp, setup.true_model)))
    elif args.command == "posterior":
        setup = ex.build_domain(cfg)
        # the training ensemble unless the held-out one is asked for explicitly
        which = args.eval_on or "train"
        sio.write_text(cfg.out, sio.dumps(sio.ensemble_to_dict(setup.mdp, setup.ensemble(which))))
    else:  # pragma: no cover - argparse restricts the choices
        raise ArgumentError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except SrmdpError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(diag), file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print(json.dumps({"error": "MemoryError", "message": "out of memory", "exit_code": 4}), file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
