"""Command-line entry point: ``posthoc-bandit <subcommand> [options]``.

On failure a single machine-readable line ``{"error": ..., "type": ...}`` is
written to stderr and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from typing import Optional, Sequence

from . import oracles
from .experiments import (
    RunConfig,
    run_exp1,
    run_exp2_mse,
    run_exp2_regret,
    run_offline_eval,
)
from .kernels import BACKEND

# (seed, trials, steps, alpha, lambda) per subcommand
DEFAULTS = {
    "exp1": dict(trials=40, steps=1000, alpha=0.1, ridge_lambda=1.0, num_actions=10, posthoc_dim=3),
    "exp2-mse": dict(trials=10, steps=2000, alpha=0.1, ridge_lambda=1e-6, num_actions=10, posthoc_dim=10),
    "exp2-regret": dict(trials=10, steps=10000, alpha=0.1, ridge_lambda=1e-6, num_actions=10, posthoc_dim=10),
    "offline-eval": dict(trials=20, steps=0, alpha=0.01, ridge_lambda=1.0, num_actions=0, posthoc_dim=0),
}


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _learners(text: str) -> tuple:
    if text == "both":
        return ("context-only", "posthoc")
    if text not in ("context-only", "posthoc"):
        raise argparse.ArgumentTypeError("learner must be context-only, posthoc or both")
    return (text,)


def _common(p: argparse.ArgumentParser, *, dims: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int)
    p.add_argument("--alpha", type=float, help="LinUCB confidence width")
    p.add_argument("--lambda", dest="ridge_lambda", type=float, help="ridge regularisation strength")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--jobs", type=int, default=1, help="trials run in parallel processes")
    p.add_argument("--learner", dest="learners", type=_learners, default=("context-only", "posthoc"),
                   help="context-only, posthoc or both (default both)")
    if dims:
        p.add_argument("--steps", type=int)
        p.add_argument("--K", dest="num_actions", type=int)
        p.add_argument("--d-p", dest="posthoc_dim", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posthoc-bandit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exp1", help="synthetic low-dimension post hoc context")
    _common(p)
    p.add_argument("--d-c", dest="context_dims", type=_ints, default=(10, 100),
                   help="comma-separated context dimensions (default 10,100)")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--n-boot", type=int, default=10000)

    for name, helptext in (("exp2-mse", "MNIST learning speed under uniform exploration"),
                           ("exp2-regret", "MNIST cumulative regret with LinUCB")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--data-dir", help="directory with the four MNIST IDX files "
                                          "(default: $POSTHOC_BANDIT_DATA)")
        p.add_argument("--d-c", dest="pca_components", type=int, default=200, help="PCA components")
        p.add_argument("--no-intercept", dest="intercept", action="store_false",
                       help="do not append a constant feature to the PCA coordinates")
        if name == "exp2-mse":
            p.add_argument("--eval-every", type=int, default=10)
            p.add_argument("--test-subset", type=int, default=2000)

    p = sub.add_parser("offline-eval", help="replay a logged interaction set")
    _common(p, dims=False)
    p.add_argument("log", help="interaction log (JSON lines)")
    p.add_argument("--imputation", choices=("herded", "dr"), default="dr")
    p.add_argument("--alpha-grid", type=_floats, default=(0.0, 0.001, 0.01, 0.1, 1.0))
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--K", dest="num_actions", type=int, help="number of actions (default: inferred)")

    p = sub.add_parser("proptest-oracles", help="run the independent oracle checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = dict(DEFAULTS[args.command])
    fields = RunConfig.__dataclass_fields__
    for key, value in vars(args).items():
        if key in fields and value is not None:
            base[key] = value
    if args.command == "exp1":
        base["context_dims"] = tuple(base["context_dims"])
    cfg = replace(RunConfig(), **base)
    if cfg.trials < 1:
        raise ValueError("--trials must be >= 1")
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "proptest-oracles":
            results = oracles.run_all(seed=args.seed)
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1
        cfg = config_from_args(args)
        print(json.dumps({"command": args.command, "backend": BACKEND, "config": cfg.echo()}, sort_keys=True),
              file=sys.stderr)
        if args.command == "exp1":
            res = run_exp1(cfg)
            for dc, r in res.items():
                means = {m: round(float(v.mean()), 4) for m, v in r["final_regret"].items()}
                ci = r.get("final_difference_ci")
                print(f"d_c={dc} final cumulative regret {means}"
                      + (f" difference 95% CI [{ci[0]:.3f}, {ci[1]:.3f}]" if ci else ""))
        elif args.command == "exp2-mse":
            res = run_exp2_mse(cfg)
            print(f"floor test MSE {res['floor']['test_mse']:.4f} "
                  f"(greedy test loss {res['floor']['greedy_test_loss']:.4f})")
            for k, c in res["curves"].items():
                print(f"{k}: final MSE {c.mean[-1]:.4g}")
        elif args.command == "exp2-regret":
            res = run_exp2_regret(cfg)
            for m, v in res["final_regret"].items():
                print(f"{m}: final cumulative regret {v.mean():.2f}")
        elif args.command == "offline-eval":
            res = run_offline_eval(cfg, args.log)
            for row in res["sweep"]:
                print(json.dumps(row, sort_keys=True))
            print(f"best alpha {res['best_alpha']}")
        print(f"outputs in {cfg.out_dir}", file=sys.stderr)
        return 0
    except Exception as exc:  # noqa: BLE001
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
