"""Command-line entry point: ``replica-ising <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import asymptotics, diagnostics, harness, plotting
from .estimators import linr_fit, logr_fit, score
from .ising_sim import gen_grid2d, gen_rr_graph, load_dataset, metropolis_sample, save_dataset
from .replica_eos import EosProblem, predict_metrics, solve
from .spectra import build_density

log = logging.getLogger("replica_ising")


def _write_csv(path: Path, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)
    log.info("wrote %s", path)
    return path


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=harness._jsonable)
    log.info("wrote %s", path)
    return path


def _plan(args, **overrides) -> harness.ExperimentPlan:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    if args.seed is not None:
        base["seed"] = args.seed
    base.update({k: v for k, v in overrides.items() if v is not None})
    return harness.ExperimentPlan.from_dict(base)


def _loss(name: str) -> str:
    aliases = {"linr": "quadratic", "logr": "logistic"}
    name = aliases.get(name.lower(), name.lower())
    if name not in harness.LOSSES:
        raise argparse.ArgumentTypeError(f"unknown loss {name!r}")
    return name


def _lambda_grid(spec: str) -> np.ndarray:
    lo, hi, n = spec.split(":")
    return np.linspace(float(lo), float(hi), int(n))


# ---------------------------------------------------------------- subcommands

def cmd_spectrum(args):
    rho = build_density(args.d, args.K0)
    lo, hi = rho.support
    g = np.linspace(lo, hi, args.points)
    path = _write_csv(args.out_dir / "spectrum.csv", ["gamma", "rho"], zip(g, rho(g)))
    _write_json(args.out_dir / "spectrum.json", {**rho.metadata(), "mean": rho.mean})
    if args.plot:
        plotting.plot_spectrum(path)


def cmd_eos(args):
    density = build_density(args.d, args.K0)
    M = args.M if args.M is not None else int(round(args.alpha * args.N))
    seed = 0 if args.seed is None else args.seed
    prob = EosProblem(args.loss, M, args.N, args.lam, args.d, args.K0, density, T_MC=args.T_MC, seed=seed)
    sol = solve(prob, finite_size=not args.asymptotic)
    metrics = predict_metrics(sol.params, sol.trials, prob)
    out = {"problem": {"loss": args.loss, "M": M, "N": args.N, "lambda": args.lam, "d": args.d,
                       "K0": args.K0, "T_MC": args.T_MC, "seed": seed,
                       "mode": "asymptotic" if args.asymptotic else "finite"},
           **sol.to_dict(), "metrics": metrics.to_dict()}
    print(_write_json(args.out or args.out_dir / f"eos_{args.loss}.json", out))


def cmd_complexity(args):
    rows = []
    for lam in _lambda_grid(args.lambdas):
        for loss in args.losses:
            try:
                fn = asymptotics.sample_complexity if loss == "quadratic" else asymptotics.logr_sample_complexity
                r = fn(float(lam), args.K0, args.d)
                rows.append((float(lam), r.c, r.c0, loss))
            except ValueError as exc:
                log.warning("lambda=%g %s: %s", lam, loss, exc)
    path = _write_csv(args.out_dir / "complexity.csv", ["lambda", "c", "c0", "loss"], rows)
    if args.plot:
        plotting.plot_complexity(path)


def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    if args.family == "grid2d":
        model = gen_grid2d(args.L, args.K0)
    else:
        model = gen_rr_graph(args.N, args.d, args.K0, args.sign_mode, rng)
    data = metropolis_sample(model, args.M, args.burn_in, args.thin, rng)
    data.provenance["seed"] = args.seed
    path = save_dataset(data, args.out_dir / args.name, model, csv=args.csv)
    print(path)


def cmd_fit(args):
    data, model = load_dataset(args.dataset)
    fit = linr_fit if args.loss == "quadratic" else logr_fit
    est = fit(data, args.center, args.lam)
    out = est.to_json()
    if model is not None:
        out["metrics"] = score(est, model, args.center).to_dict()
    path = _write_json(args.out_dir / f"fit_{args.loss}_{args.center}.json", out)
    print(path)


def cmd_experiment(args):
    plan = _plan(args)
    rows = harness.run_experiment(plan, args.threads)
    path = args.out_dir / "experiment.csv"
    harness._write_csv(path, harness.EXPERIMENT_COLUMNS, rows)
    if args.plot:
        plotting.plot_comparison(path)


def cmd_compare(args):
    plan = _plan(args)
    res = harness.run_comparison(plan, args.threads, args.out_dir)
    sys.stdout.write(harness.format_summary(res["summary"]))
    if args.plot:
        plotting.plot_comparison(args.out_dir / "comparison.csv")


def cmd_scaling(args):
    plan = _plan(args)
    harness.run_scaling(plan, args.threads, args.out_dir)
    if args.plot:
        plotting.plot_scaling(args.out_dir / "scaling.csv")


def cmd_diag_haar(args):
    reports, meta = diagnostics.haar_cumulant_check(args.N, args.d, args.K0, args.replicates, args.k_max,
                                                    rng=args.seed, solver=args.solver)
    cols = list(reports[0].to_dict())
    path = _write_csv(args.out_dir / "haar_cumulants.csv", cols, [list(r.to_dict().values()) for r in reports])
    _write_json(args.out_dir / "haar_cumulants.json",
                {**meta, "N": args.N, "d": args.d, "K0": args.K0, "seed": args.seed})
    if args.plot:
        plotting.plot_haar(path)


def cmd_diag_ansatz(args):
    chi = args.chi
    if chi is None:
        density = build_density(args.d, args.K0)
        M = int(round(args.alpha * args.N))
        prob = EosProblem("quadratic", M, args.N, args.lam, args.d, args.K0, density)
        chi = solve(prob, finite_size=False).params.chi
        log.info("chi from the asymptotic EOS at alpha=%g: %.6g", args.alpha, chi)
    rep = diagnostics.ansatz1_check(args.d, args.K0, args.lam, chi)
    path = _write_csv(args.out_dir / "ansatz.csv", ["generation", "margin", "holds"],
                      [(r["generation"], r["margin"], r["holds"]) for r in rep.rows()])
    _write_json(args.out_dir / "ansatz.json", {"d": args.d, "K0": args.K0, "lambda": args.lam, "chi": chi,
                                              "J": rep.J, "holds": rep.holds})
    if args.plot:
        plotting.plot_ansatz(path)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="ExperimentPlan JSON")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for trials")
    common.add_argument("--out-dir", type=Path, default=None, help="default: the plan's out_dir, else ./results")
    common.add_argument("--plot", action="store_true", help="also write PNGs next to the CSVs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="replica-ising", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp, d=3, K0=0.4):
        sp.add_argument("--d", type=int, default=d)
        sp.add_argument("--K0", "--k0", dest="K0", type=float, default=K0)

    s = sub.add_parser("spectrum", parents=[common], help="covariance eigenvalue density")
    model_args(s)
    s.add_argument("--points", type=int, default=401)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("eos", parents=[common], help="solve the equations of state")
    model_args(s)
    s.add_argument("--loss", type=_loss, default="quadratic", help="quadratic|logistic (or linr|logr)")
    s.add_argument("--N", "--n", dest="N", type=int, default=200)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--M", "--m", dest="M", type=int)
    g.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--lam", "--lambda", dest="lam", type=float, default=0.3)
    s.add_argument("--T-MC", "--tmc", dest="T_MC", type=int, default=200)
    s.add_argument("--asymptotic", action="store_true", help="expectation form instead of sampled trials")
    s.add_argument("--out", type=Path, default=None, help="JSON path (default: OUT_DIR/eos_<loss>.json)")
    s.set_defaults(func=cmd_eos)

    s = sub.add_parser("complexity", parents=[common], help="critical constant c0 over a lambda grid")
    model_args(s)
    s.add_argument("--lambdas", default="0.05:0.35:31", help="lo:hi:count")
    s.add_argument("--losses", nargs="+", type=_loss, default=list(harness.LOSSES))
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("simulate", parents=[common], help="generate a model and Metropolis samples")
    model_args(s)
    s.add_argument("--family", choices=["rr", "grid2d"], default="rr")
    s.add_argument("--N", type=int, default=200)
    s.add_argument("--L", type=int, default=15)
    s.add_argument("--M", type=int, default=1000)
    s.add_argument("--sign-mode", choices=["uniform", "random_sign"], default="random_sign")
    s.add_argument("--burn-in", type=int, default=1000)
    s.add_argument("--thin", type=int, default=10)
    s.add_argument("--name", default="dataset")
    s.add_argument("--csv", action="store_true", help="also write spins as CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="neighborhood regression on a saved dataset")
    s.add_argument("dataset", type=Path)
    s.add_argument("--center", type=int, default=0)
    s.add_argument("--lam", "--lambda", dest="lam", type=float, default=0.3)
    s.add_argument("--loss", type=_loss, default="quadratic", help="quadratic|logistic (or linr|logr)")
    s.set_defaults(func=cmd_fit)

    for name, fn, helptext in (("experiment", cmd_experiment, "simulation cells of a plan"),
                               ("compare", cmd_compare, "theory vs simulation over a plan"),
                               ("scaling", cmd_scaling, "M = c log N sweep of a plan")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.set_defaults(func=fn)

    s = sub.add_parser("diag-haar", parents=[common], help="trace-power cumulants of covariance eigenvectors")
    model_args(s)
    s.add_argument("--N", type=int, default=1000)
    s.add_argument("--replicates", type=int, default=200)
    s.add_argument("--k-max", type=int, default=8)
    s.add_argument("--solver", choices=["eigh", "jacobi"], default="eigh")
    s.set_defaults(func=cmd_diag_haar)

    s = sub.add_parser("diag-ansatz", parents=[common], help="sparse-solution subgradient margins")
    model_args(s)
    s.add_argument("--lam", "--lambda", dest="lam", type=float, default=0.3)
    s.add_argument("--chi", type=float, default=None, help="default: solve the asymptotic EOS")
    s.add_argument("--N", type=int, default=200)
    s.add_argument("--alpha", type=float, default=4.0)
    s.set_defaults(func=cmd_diag_ansatz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.seed is None and args.command in ("simulate", "diag-haar"):
        args.seed = 0
    if args.command in ("experiment", "compare", "scaling") and args.config is None:
        build_parser().error(f"{args.command} needs --config PLAN.json")
    if args.out_dir is None:
        args.out_dir = Path(_plan(args).out_dir) if args.config else Path("results")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
