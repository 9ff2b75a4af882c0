"""Experiment plans, seeding, theory-vs-simulation comparison and M = c log N sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import asymptotics
from .estimators import SelectionMetrics, aggregate, linr_fit, logr_fit, score
from .ising_sim import gen_grid2d, gen_rr_graph, metropolis_sample
from .replica_eos import EosProblem, predict_metrics, solve
from .spectra import build_density, empirical_density

log = logging.getLogger(__name__)

__all__ = ["ExperimentPlan", "cell_seed", "run_comparison", "run_experiment", "run_scaling",
           "simulate_cell", "theory_cell", "COMPARISON_COLUMNS", "EXPERIMENT_COLUMNS", "SCALING_COLUMNS"]

# purpose tags partition the seed space: theory never touches experiment streams
TAG_EXPERIMENT = 1
TAG_THEORY = 2

LOSSES = ("quadratic", "logistic")
FITTERS = {"quadratic": linr_fit, "logistic": logr_fit}


@dataclass
class ExperimentPlan:
    family: str = "rr"  # rr | grid2d
    N: int | None = 200
    L: int | None = None
    d: int = 3
    K0: float = 0.4
    sign_mode: str = "random_sign"
    lambdas: list = field(default_factory=lambda: [0.3])
    alphas: list | None = field(default_factory=lambda: [0.5, 1, 2, 3, 4, 6, 8])
    cs: list | None = None
    Ns: list | None = None
    losses: list = field(default_factory=lambda: list(LOSSES))
    trials: int = 200
    T_MC: int = 200
    seed: int = 0
    out_dir: str = "results"
    burn_in: int = 1000
    thin: int = 10
    density: str = "auto"  # auto | analytic | empirical

    def __post_init__(self):
        if self.family not in ("rr", "grid2d"):
            raise ValueError(f"family must be rr or grid2d, got {self.family!r}")
        if self.family == "grid2d":
            if self.L is None:
                raise ValueError("grid2d plans need L")
            self.N, self.d = self.L * self.L, 4
        if not self.lambdas or any(not lam > 0 for lam in self.lambdas):
            raise ValueError("lambdas must be a non-empty list of positive values")
        if not self.losses or any(x not in LOSSES for x in self.losses):
            raise ValueError(f"losses must be a non-empty subset of {LOSSES}")
        if self.trials < 1 or self.T_MC < 1:
            raise ValueError("trials and T_MC must be >= 1")
        if self.alphas is not None and len(self.alphas) == 0:
            raise ValueError("alphas grid is empty")
        if self.cs is not None and (len(self.cs) == 0 or not self.Ns):
            raise ValueError("a (c, N) grid needs non-empty cs and Ns")
        if self.density not in ("auto", "analytic", "empirical"):
            raise ValueError(f"unknown density {self.density!r}")
        for M in self.sample_sizes():
            if M < 1:
                raise ValueError("derived sample size M < 1")

    # -- grids
    def alpha_cells(self) -> list[tuple[float, int]]:
        return [(float(a), max(int(round(a * self.N)), 0)) for a in (self.alphas or [])]

    def scaling_cells(self) -> list[tuple[float, int, int]]:
        if self.cs is None:
            return []
        return [(float(c), int(N), int(round(c * math.log(N)))) for c in self.cs for N in self.Ns]

    def sample_sizes(self) -> list[int]:
        return [M for _, M in self.alpha_cells()] + [M for *_, M in self.scaling_cells()]

    # -- io
    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def cell_seed(master: int, tag: int, *key: int) -> int:
    """Integer seed of one cell; a pure function of (master, purpose tag, cell key)."""
    ss = np.random.SeedSequence(master, spawn_key=(tag, *key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _trial_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))


def _model(plan: ExperimentPlan, rng):
    if plan.family == "grid2d":
        return gen_grid2d(plan.L, plan.K0)
    return gen_rr_graph(plan.N, plan.d, plan.K0, plan.sign_mode, rng)


def _density(plan: ExperimentPlan, N: int):
    mode = plan.density
    if mode == "auto":
        mode = "empirical" if plan.family == "grid2d" else "analytic"
    if mode == "analytic":
        return build_density(plan.d, plan.K0)
    model = gen_grid2d(plan.L, plan.K0) if plan.family == "grid2d" else \
        gen_rr_graph(N, plan.d, plan.K0, plan.sign_mode, np.random.default_rng(plan.seed))
    return empirical_density(model)


# ---------------------------------------------------------------- experiment

def _one_trial(args):
    plan, N, M, seed, r = args
    rng = _trial_rng(seed, r)
    sub = ExperimentPlan.from_dict({**plan.to_dict(), "N": N}) if plan.family == "rr" else plan
    model = _model(sub, rng)
    data = metropolis_sample(model, M, plan.burn_in, plan.thin, rng)
    center = int(rng.integers(model.N))
    out = {}
    for lam in plan.lambdas:
        for loss in plan.losses:
            est = FITTERS[loss](data, center, lam)
            m = score(est, model, center)
            m.extra = {"kkt": est.kkt_residual, "converged": est.converged}
            out[(lam, loss)] = m
    return out


def simulate_cell(plan: ExperimentPlan, N: int, M: int, seed: int, threads: int = 1) -> dict:
    """R independent (graph, samples, center) trials, shared across lambdas and losses.

    Returns {(lam, loss): aggregated SelectionMetrics}.
    """
    jobs = [(plan, N, M, seed, r) for r in range(plan.trials)]
    if threads > 1:
        with ProcessPoolExecutor(threads) as ex:
            results = list(ex.map(_one_trial, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_one_trial(j) for j in jobs]
    agg = {}
    for key in results[0]:
        rows = [res[key] for res in results]
        m = aggregate(rows)
        m.extra = {"max_kkt": max(r.extra["kkt"] for r in rows),
                   "all_converged": all(r.extra["converged"] for r in rows)}
        agg[key] = m
    return agg


# ---------------------------------------------------------------- theory

def theory_cell(plan: ExperimentPlan, loss: str, lam: float, N: int, M: int, seed: int,
                density=None) -> SelectionMetrics:
    """Finite-size EOS prediction for one cell."""
    density = _density(plan, N) if density is None else density
    prob = EosProblem(loss, M, N, lam, plan.d, plan.K0, density, T_MC=plan.T_MC, seed=seed)
    sol = solve(prob, finite_size=True)
    m = predict_metrics(sol.params, sol.trials, prob)
    m.extra = {**m.extra, "converged": sol.converged, "iterations": sol.iterations,
               "max_residual": max(sol.residuals.values()), "flags": ";".join(sorted({str(f) for f in sol.flags}))}
    return m


# ---------------------------------------------------------------- tables

COMPARISON_COLUMNS = ["family", "N", "M", "alpha", "lambda", "loss", "source", "precision", "precision_se",
                      "recall", "recall_se", "rss", "rss_se", "fpr", "n_trials", "n_excluded",
                      "master_seed", "cell_seed", "error"]

EXPERIMENT_COLUMNS = ["alpha", "lambda", "loss", "precision", "precision_se", "recall", "recall_se", "rss",
                      "rss_se", "family", "N", "M", "n_trials", "n_excluded", "master_seed", "cell_seed", "error"]

SCALING_COLUMNS = ["c", "N", "precision", "precision_se", "recall", "recall_se", "side",
                   "loss", "lambda", "M", "c0", "n_trials", "n_excluded", "master_seed", "cell_seed"]


def _fmt(x):
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return x


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _metric_row(m: SelectionMetrics) -> dict:
    return {"precision": m.precision, "precision_se": m.precision_se, "recall": m.recall,
            "recall_se": m.recall_se, "rss": m.rss, "rss_se": m.rss_se, "fpr": m.fpr,
            "n_trials": m.n_trials, "n_excluded": m.n_excluded}


def _nan_row():
    return {k: float("nan") for k in ("precision", "precision_se", "recall", "recall_se", "rss", "rss_se", "fpr")}


def run_experiment(plan: ExperimentPlan, threads: int = 1) -> list[dict]:
    """Experiment rows only, one per (alpha, lambda, loss)."""
    rows = []
    for ai, (alpha, M) in enumerate(plan.alpha_cells()):
        seed = cell_seed(plan.seed, TAG_EXPERIMENT, ai)
        t0 = time.perf_counter()
        try:
            res = simulate_cell(plan, plan.N, M, seed, threads)
            err = ""
        except Exception as exc:  # keep going with other cells
            log.exception("experiment cell alpha=%s failed", alpha)
            res, err = {}, f"{type(exc).__name__}: {exc}"
        log.info("experiment alpha=%g M=%d: %.1fs", alpha, M, time.perf_counter() - t0)
        for lam in plan.lambdas:
            for loss in plan.losses:
                base = {"family": plan.family, "N": plan.N, "M": M, "alpha": alpha, "lambda": lam,
                        "loss": loss, "source": "experiment", "master_seed": plan.seed, "cell_seed": seed}
                m = res.get((lam, loss))
                rows.append({**base, **(_metric_row(m) if m else _nan_row()), "error": err})
    return rows


def run_comparison(plan: ExperimentPlan, threads: int = 1, out_dir=None) -> dict:
    """Theory (finite-size EOS) and experiment for every (alpha, lambda, loss) cell.

    Writes ``comparison.csv`` and ``summary.json`` under ``out_dir`` (when given)
    and returns {"rows": [...], "summary": {...}}.
    """
    rows = run_experiment(plan, threads)
    density = None
    for ai, (alpha, M) in enumerate(plan.alpha_cells()):
        for li, lam in enumerate(plan.lambdas):
            # one seed per (alpha, lambda): both losses see the same sampled neighborhoods
            seed = cell_seed(plan.seed, TAG_THEORY, ai, li)
            for loss in plan.losses:
                base = {"family": plan.family, "N": plan.N, "M": M, "alpha": alpha, "lambda": lam,
                        "loss": loss, "source": "theory", "master_seed": plan.seed, "cell_seed": seed}
                t0 = time.perf_counter()
                try:
                    if density is None:
                        density = _density(plan, plan.N)
                    m = theory_cell(plan, loss, lam, plan.N, M, seed, density)
                    rows.append({**base, **_metric_row(m), "error": ""})
                except Exception as exc:
                    log.exception("theory cell alpha=%s lambda=%s loss=%s failed", alpha, lam, loss)
                    rows.append({**base, **_nan_row(), "error": f"{type(exc).__name__}: {exc}"})
                log.info("theory %s alpha=%g: %.1fs", loss, alpha, time.perf_counter() - t0)
    summary = summarize(rows)
    if out_dir is not None:
        out = Path(out_dir)
        _write_csv(out / "comparison.csv", COMPARISON_COLUMNS, rows)
        with open(out / "summary.json", "w") as fh:
            json.dump({"plan": plan.to_dict(), **summary}, fh, indent=2, default=_jsonable)
        (out / "summary.txt").write_text(format_summary(summary))
    return {"rows": rows, "summary": summary}


def _jsonable(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


def pair_rows(rows: list[dict]) -> list[tuple[dict, dict]]:
    """(theory, experiment) row pairs keyed by (alpha, lambda, loss)."""
    th, ex = {}, {}
    for r in rows:
        key = (r["alpha"], r["lambda"], r["loss"])
        (th if r["source"] == "theory" else ex)[key] = r
    return [(th[k], ex[k]) for k in th if k in ex]


def summarize(rows: list[dict], abs_tol: float = 0.03, n_se: float = 3.0) -> dict:
    """Max |theory - experiment| per metric and loss, plus per-cell agreement flags."""
    out = {"max_abs_gap": {}, "max_rel_rss_gap": {}, "cells": []}
    for t, e in pair_rows(rows):
        cell = {"alpha": t["alpha"], "lambda": t["lambda"], "loss": t["loss"]}
        for k in ("precision", "recall"):
            gap = abs(t[k] - e[k])
            se = math.hypot(t[k + "_se"], e[k + "_se"])
            cell[k + "_gap"] = gap
            both_undefined = math.isnan(t[k]) and math.isnan(e[k])  # nothing selected in either
            cell[k + "_ok"] = bool(both_undefined or gap <= max(abs_tol, n_se * se))
            key = f"{t['loss']}:{k}"
            if not math.isnan(gap):
                out["max_abs_gap"][key] = max(out["max_abs_gap"].get(key, 0.0), gap)
        rel = abs(t["rss"] - e["rss"]) / e["rss"] if e["rss"] else float("nan")
        cell["rss_rel_gap"] = rel
        if not math.isnan(rel):
            out["max_rel_rss_gap"][t["loss"]] = max(out["max_rel_rss_gap"].get(t["loss"], 0.0), rel)
        out["cells"].append(cell)
    return out


def format_summary(summary: dict) -> str:
    lines = ["max |theory - experiment|:"]
    for k, v in sorted(summary["max_abs_gap"].items()):
        lines.append(f"  {k:24s} {v:.4f}")
    for k, v in sorted(summary["max_rel_rss_gap"].items()):
        lines.append(f"  {k + ':rss (relative)':24s} {v:.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- scaling

def threshold_constant(loss: str, lam: float, K0: float, d: int) -> float:
    fn = asymptotics.sample_complexity if loss == "quadratic" else asymptotics.logr_sample_complexity
    return fn(lam, K0, d).c0


def run_scaling(plan: ExperimentPlan, threads: int = 1, out_dir=None) -> list[dict]:
    """Experimental precision/recall over the (c, N) grid with M = round(c ln N).

    Each row is annotated with the predicted side of the threshold
    ("above" when c > c0(lambda), else "below").
    """
    if plan.cs is None:
        raise ValueError("run_scaling needs a (c, N) grid (cs, Ns)")
    rows = []
    c0 = {(lam, loss): threshold_constant(loss, lam, plan.K0, plan.d)
          for lam in plan.lambdas for loss in plan.losses}
    for ci, (c, N, M) in enumerate(plan.scaling_cells()):
        seed = cell_seed(plan.seed, TAG_EXPERIMENT, 1000 + ci)
        t0 = time.perf_counter()
        res = simulate_cell(plan, N, M, seed, threads)
        log.info("scaling c=%g N=%d M=%d: %.1fs", c, N, M, time.perf_counter() - t0)
        for lam in plan.lambdas:
            for loss in plan.losses:
                m = res[(lam, loss)]
                k = c0[(lam, loss)]
                rows.append({"c": c, "N": N, "precision": m.precision, "precision_se": m.precision_se,
                             "recall": m.recall, "recall_se": m.recall_se,
                             "side": "above" if c > k else "below", "loss": loss, "lambda": lam, "M": M,
                             "c0": k, "n_trials": m.n_trials, "n_excluded": m.n_excluded,
                             "master_seed": plan.seed, "cell_seed": seed})
    if out_dir is not None:
        _write_csv(Path(out_dir) / "scaling.csv", SCALING_COLUMNS, rows)
    return rows
