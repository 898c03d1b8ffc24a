"""Command line entry point.

Exit status is 0 on success, 1 for configuration or input errors and 2 for
numerical failures (non-finite flow output, diverged training, degenerate
weights).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .estimators import is_estimate, make_report, make_weighted_sample, snis_estimate
from .experiments import (
    ConfigError,
    RunConfig,
    default_recipe,
    point_set,
    replication_seed,
    resolve_flow,
    run_experiment,
    target_for,
    train_recipe,
)
from .flows import FlowNumericError, forward, log_density
from .normal import gaussian_map
from .persist import FlowSchemaError, flow_save
from .targets import test_function
from .training import TrainingDivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numeric failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> tuple[int, ...]:
    try:
        out = []
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        return tuple(out)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dimension list {text!r}; use e.g. 2,3,8 or 2-10")


def _common(p: argparse.ArgumentParser, n_default: int = 2**14) -> None:
    p.add_argument("--seq", choices=["mc", "sobol", "halton", "lattice"], default="sobol")
    p.add_argument("--map", dest="map_kind", choices=["inverse", "box-muller"], default="inverse")
    p.add_argument("--n", type=int, default=n_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flow", help="flow JSON file, or a directory of <target>_d<d>.json")
    p.add_argument("--out", default="results")
    p.add_argument("--train", action="store_true",
                   help="fit missing flows with the default recipe instead of using shipped ones")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowqmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit flows and write them as JSON")
    p.add_argument("--target", choices=["gmm", "dualmoon"], required=True)
    p.add_argument("--dims", type=_dims, default=(2,))
    p.add_argument("--steps", type=int, help="override the recipe's step count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="flows")

    p = sub.add_parser("sample", help="push a point set through a flow; write x and log density")
    _common(p, 2**10)
    p.add_argument("--target", choices=["gmm", "dualmoon"], default="dualmoon")
    p.add_argument("--dims", type=_dims, default=(2,))

    p = sub.add_parser("estimate", help="replicated importance sampling estimates")
    _common(p)
    p.add_argument("--target", choices=["gmm", "dualmoon"], default="dualmoon")
    p.add_argument("--dims", type=_dims, default=(2,))
    p.add_argument("--phi", default=None, help="test function, e.g. gmm:phi3 (default: phi1)")
    p.add_argument("--reps", type=int, default=10)

    p = sub.add_parser("experiment", help="run one of the replicated experiments")
    p.add_argument("name", choices=["gmm", "dim-sweep", "seq-compare", "markov"])
    _common(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--dims", type=_dims, default=tuple(range(2, 11)))
    p.add_argument("--phi", default="dualmoon:phi1")
    p.add_argument("--log2-n-range", type=_dims, default=(8, 17),
                   help="smallest and largest log2 n for seq-compare, e.g. 8,17")
    return parser


def _single_dim(args) -> int:
    if len(args.dims) != 1:
        raise ConfigError("this command takes a single dimension")
    return args.dims[0]


def _run_config(args, experiment: str) -> RunConfig:
    return RunConfig(experiment, seq=args.seq, map_kind=args.map_kind, n=args.n,
                     reps=getattr(args, "reps", 2), dims=args.dims, flow=args.flow,
                     seed=args.seed, out=args.out, train=args.train,
                     **({"phi": args.phi} if experiment != "gmm" and args.phi else {}))


def cmd_train(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for d in args.dims:
        recipe = default_recipe(args.target, d)
        changes = {"seed": args.seed}
        if args.steps is not None:
            changes["steps"] = args.steps
        recipe = type(recipe)(**{**asdict(recipe), **changes})
        path = out / f"{recipe.name}.json"
        flow = train_recipe(recipe, out / f"{recipe.name}.loss.csv")
        flow_save(flow, path, meta={"recipe": asdict(recipe)})
        print(path)


def cmd_sample(args) -> None:
    d = _single_dim(args)
    cfg = RunConfig("gmm", seq=args.seq, map_kind=args.map_kind, n=args.n,
                    flow=args.flow, seed=args.seed, out=args.out, train=args.train, dims=(d,))
    flow = resolve_flow(cfg, args.target, d)
    pts = point_set(cfg.seq, cfg.n, d, replication_seed(cfg.seed, "sample", 0))
    x, _ = forward(flow, gaussian_map(pts, cfg.map_kind).values)
    logq = log_density(flow, x)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "samples.csv"
    header = ",".join([f"x{i + 1}" for i in range(d)] + ["log_density"])
    np.savetxt(path, np.column_stack([x, logq]), delimiter=",", header=header,
               comments="", fmt="%.17g")
    print(path)


def cmd_estimate(args) -> None:
    d = _single_dim(args)
    phi_name = args.phi or f"{args.target}:phi1"
    phi = test_function(phi_name)
    cfg = RunConfig("gmm", seq=args.seq, map_kind=args.map_kind, n=args.n, reps=args.reps,
                    flow=args.flow, seed=args.seed, out=args.out, train=args.train, dims=(d,))
    target = target_for(args.target, d)
    flow = resolve_flow(cfg, args.target, d)
    values = []
    for r in range(cfg.reps):
        pts = point_set(cfg.seq, cfg.n, d, replication_seed(cfg.seed, f"estimate/{cfg.seq}", r))
        ws = make_weighted_sample(flow, target, pts, cfg.map_kind)
        values.append(is_estimate(ws, phi) if ws.normalized else snis_estimate(ws, phi))
    rep = make_report(phi_name, values)
    kind = "IS" if target.log_norm_const is not None else "SNIS"
    print(f"{kind} {phi_name} seq={cfg.seq} map={cfg.map_kind} n={cfg.n} reps={cfg.reps}: "
          f"mean {rep.mean:.10g}  sd {rep.std:.4g}  se {rep.stderr:.4g}")


def cmd_experiment(args) -> None:
    cfg = _run_config(args, args.name)
    if cfg.experiment == "seq_compare":
        if len(args.log2_n_range) != 2:
            raise ConfigError("--log2-n-range takes two values")
        cfg = RunConfig(**{**asdict(cfg), "log2_n_range": tuple(args.log2_n_range)})
    for name, path in run_experiment(cfg).items():
        print(f"{name}: {path}")


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "estimate": cmd_estimate,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (FlowNumericError, TrainingDivergenceError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FlowSchemaError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
