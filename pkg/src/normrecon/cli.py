"""Command-line entry point: ``normrecon <command> ...``."""

import argparse
import json
import math
import sys

import numpy as np

from . import harness
from .bounds import bound_eq2, bound_eq3
from .estimators import SolverConfig, fit
from .linalg import read_matrix, write_matrix
from .norms import norms_report
from .rademacher import (MaxBracketConfig, finite_class_gap, max_ball_rad_bracket,
                         trace_ball_rad_exact, trace_ball_rad_mc)
from .rng import make_rng
from .sampling import (PER_ENTRY, PER_OBSERVATION, WITH, WITHOUT, ObservationSet, noise_from_spec,
                       observe, planted_low_rank, sample_indices)

MODES = {"with": WITH, "without": WITHOUT, WITH: WITH, WITHOUT: WITHOUT}


def _dump(obj, fh=None):
    json.dump(obj, fh or sys.stdout, indent=2, default=harness._json_default)
    (fh or sys.stdout).write("\n")


def cmd_norms(args):
    _dump(norms_report(read_matrix(args.matrix), seed=args.seed))
    return 0


def cmd_sample(args):
    M = read_matrix(args.matrix) if args.matrix else planted_low_rank(args.n, args.m, args.r, seed=args.seed)
    n, m = M.shape
    idx = sample_indices(n, m, args.s, MODES[args.mode], seed=args.seed)
    noise = noise_from_spec(args.noise, args.sigma, n, m)
    obs = observe(M, idx, noise, args.semantics, seed=args.seed)
    obs.write(args.out)
    if args.truth:
        write_matrix(args.truth, M)
    return 0


def cmd_fit(args):
    obs = ObservationSet.read(args.obs)
    constraint = args.constraint.replace("-", "_")
    B = math.inf if args.B is None else args.B
    cfg = SolverConfig(loss=args.loss, constraint=constraint, iterations=args.iters, rank_budget=args.k,
                       restarts=args.restarts, seed=args.seed)
    res = fit(obs, constraint, args.A, B, args.loss, cfg)
    write_matrix(args.out, res.estimate)
    if args.report:
        with open(args.report, "w") as fh:
            _dump(res.report(), fh)
    return 0


def _rad_common(args, est):
    out = dict(est.as_dict())
    out.update(bound_eq2=bound_eq2(args.A, args.n, args.m, args.s),
               bound_eq3=bound_eq3(args.A, args.n, args.m, args.s, args.K), K=args.K,
               config={"n": args.n, "m": args.m, "s": args.s, "A": args.A, "mc": args.mc,
                       "trials": args.trials, "seed": args.seed})
    return out


def cmd_rad(args):
    sample = sample_indices(args.n, args.m, args.s, WITH, seed=args.seed)
    if args.kind == "trace-mc":
        out = _rad_common(args, trace_ball_rad_mc(sample, args.A, args.mc, seed=args.seed))
    elif args.kind == "trace-exact":
        out = _rad_common(args, trace_ball_rad_exact(sample, args.A))
    elif args.kind == "max-bracket":
        est, upper = max_ball_rad_bracket(sample, args.A, MaxBracketConfig(num_mc=args.mc, seed=args.seed))
        out = _rad_common(args, est)
        out["upper"] = upper
    else:
        rng = make_rng(args.seed, "cli-gap")
        Y = rng.integers(-2, 3, size=(args.n, args.m)).astype(float)
        cls = [rng.integers(-1, 2, size=(args.n, args.m)).astype(float) for _ in range(args.class_size)]
        exact = args.n * args.m <= 9 and args.s <= 4
        res = finite_class_gap(cls, Y, args.s, loss=args.loss, exact=exact, trials=args.trials, seed=args.seed)
        data = res.as_json()
        out = {"mean": data["expectation_float"][WITHOUT],
               "std_error": data["std_error"][WITHOUT],
               "mean_with_replacement": data["expectation_float"][WITH],
               "gap": data,
               "bound_eq2": bound_eq2(args.A, args.n, args.m, args.s),
               "bound_eq3": bound_eq3(args.A, args.n, args.m, args.s, args.K), "K": args.K,
               "config": {"n": args.n, "m": args.m, "s": args.s, "A": args.A, "trials": args.trials,
                          "seed": args.seed, "class_size": args.class_size, "loss": args.loss}}
    if args.json:
        _dump(out)
    else:
        for k in ("mean", "std_error", "bound_eq2", "bound_eq3", "upper"):
            if k in out:
                print(f"{k}: {out[k]:.6g}")
    return 0


def cmd_experiment(args):
    cfg = harness.load_config(args.scenario, args.config, args.override)
    if args.out_dir:
        cfg = harness.replace(cfg, out_dir=args.out_dir)
    report = harness.run_scenario(cfg)
    for name, a in report.assertions.items():
        print(f"{'PASS' if a['passed'] else 'FAIL'} {name}")
    if report.slope:
        for metric, e in report.slope.items():
            if e.get("slope") is not None:
                print(f"slope[{metric}] = {e['slope']:.3f} +- {e['stderr']:.3f} (R^2 {e['r2']:.3f})")
    return 0 if report.passed else 2


def build_parser():
    p = argparse.ArgumentParser(prog="normrecon", description="Max-norm and trace-norm matrix reconstruction")
    sub = p.add_subparsers(dest="command", required=True)

    norms = sub.add_parser("norms", help="norm diagnostics")
    nsub = norms.add_subparsers(dest="action", required=True)
    rep = nsub.add_parser("report", help="print norms, max-norm bracket and incoherence as JSON")
    rep.add_argument("matrix")
    rep.add_argument("--seed", type=int, default=0)
    rep.set_defaults(func=cmd_norms)

    sample = sub.add_parser("sample", help="observation generation")
    ssub = sample.add_subparsers(dest="action", required=True)
    gen = ssub.add_parser("gen", help="sample positions of a matrix and write an observation file")
    gen.add_argument("--n", type=int, default=32)
    gen.add_argument("--m", type=int, default=32)
    gen.add_argument("--r", type=int, default=2, help="rank of the planted matrix when --matrix is absent")
    gen.add_argument("--s", type=int, required=True)
    gen.add_argument("--mode", choices=sorted(MODES), default="with")
    gen.add_argument("--noise", choices=["none", "gaussian", "uniform", "two_point"], default="none")
    gen.add_argument("--sigma", type=float, default=0.0)
    gen.add_argument("--semantics", choices=[PER_ENTRY, PER_OBSERVATION], default=PER_ENTRY)
    gen.add_argument("--matrix", help="ground-truth matrix file (default: planted low-rank)")
    gen.add_argument("--truth", help="also write the ground-truth matrix here")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_sample)

    f = sub.add_parser("fit", help="constrained empirical risk minimisation")
    f.add_argument("--obs", required=True)
    f.add_argument("--constraint", choices=["trace", "max", "trace-box", "max-box"], required=True)
    f.add_argument("--A", type=float, required=True)
    f.add_argument("--B", type=float)
    f.add_argument("--loss", choices=["abs", "squared"], default="squared")
    f.add_argument("--iters", type=int, default=2000)
    f.add_argument("--k", type=int, help="factor width for the max-norm solvers")
    f.add_argument("--restarts", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--report")
    f.set_defaults(func=cmd_fit)

    rad = sub.add_parser("rad", help="Rademacher complexity estimates")
    rad.add_argument("kind", choices=["trace-mc", "trace-exact", "max-bracket", "gap"])
    rad.add_argument("--n", type=int, required=True)
    rad.add_argument("--m", type=int, required=True)
    rad.add_argument("--s", type=int, required=True)
    rad.add_argument("--A", type=float, default=1.0)
    rad.add_argument("--K", type=float, default=1.0, help="constant of the expected trace-ball bound")
    rad.add_argument("--mc", type=int, default=1000)
    rad.add_argument("--trials", type=int, default=2000)
    rad.add_argument("--class-size", type=int, default=3)
    rad.add_argument("--loss", choices=["abs", "squared"], default="abs")
    rad.add_argument("--seed", type=int, default=0)
    rad.add_argument("--json", action="store_true", help="print the full JSON record")
    rad.set_defaults(func=cmd_rad)

    exp = sub.add_parser("experiment", help="run a scenario; exit 0 pass, 2 assertion failure, 1 error")
    exp.add_argument("scenario", choices=sorted(harness.SCENARIOS))
    exp.add_argument("--config")
    exp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    exp.add_argument("--out-dir", required=True)
    exp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
