"""Optional PNG renderings of the CSV outputs (the CSVs remain the primary product)."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LOSS_STYLE = {"quadratic": ("C0", "LinR"), "logistic": ("C3", "LogR")}


def _read(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _f(x) -> float:
    return float(x) if x not in ("", None) else float("nan")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_comparison(csv_path) -> Path:
    """RSS / precision / recall vs alpha; lines = theory, markers with error bars = experiment."""
    csv_path = Path(csv_path)
    rows = _read(csv_path)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    groups = defaultdict(list)
    for r in rows:
        groups[(r["loss"], r["source"], r["lambda"])].append(r)
    for (loss, source, lam), rs in sorted(groups.items()):
        rs.sort(key=lambda r: _f(r["alpha"]))
        color, name = LOSS_STYLE[loss]
        a = [_f(r["alpha"]) for r in rs]
        for ax, key in zip(axes, ("rss", "precision", "recall")):
            y = [_f(r[key]) for r in rs]
            if source == "theory":
                ax.plot(a, y, "-", color=color, label=f"{name} theory (λ={lam})")
            else:
                ax.errorbar(a, y, yerr=[_f(r[key + "_se"]) for r in rs], fmt="o", ms=4, capsize=2,
                            color=color, mfc="none", label=f"{name} experiment (λ={lam})")
    for ax, key in zip(axes, ("RSS", "Precision", "Recall")):
        ax.set_xlabel("α = M/N")
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    return _save(fig, csv_path.with_suffix(".png"))


def plot_scaling(csv_path) -> Path:
    """Precision and recall vs N for each c (M = c ln N)."""
    csv_path = Path(csv_path)
    rows = _read(csv_path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    groups = defaultdict(list)
    for r in rows:
        groups[(r["loss"], r["c"], r["side"])].append(r)
    for i, ((loss, c, side), rs) in enumerate(sorted(groups.items())):
        rs.sort(key=lambda r: _f(r["N"]))
        N = [_f(r["N"]) for r in rs]
        for ax, key in zip(axes, ("precision", "recall")):
            ax.errorbar(N, [_f(r[key]) for r in rs], yerr=[_f(r[key + "_se"]) for r in rs],
                        fmt="o-" if side == "above" else "s--", ms=4, capsize=2, color=f"C{i}",
                        label=f"{LOSS_STYLE[loss][1]} c={c} ({side} c0)")
    for ax, key in zip(axes, ("Precision", "Recall")):
        ax.set_xscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    return _save(fig, csv_path.with_suffix(".png"))


def plot_complexity(csv_path) -> Path:
    """c0 vs lambda for each loss."""
    csv_path = Path(csv_path)
    rows = _read(csv_path)
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    by_loss = defaultdict(list)
    for r in rows:
        by_loss[r["loss"]].append(r)
    for loss, rs in by_loss.items():
        rs.sort(key=lambda r: _f(r["lambda"]))
        color, name = LOSS_STYLE[loss]
        ax.plot([_f(r["lambda"]) for r in rs], [_f(r["c0"]) for r in rs], color=color, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("λ")
    ax.set_ylabel("c0")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, csv_path.with_suffix(".png"))


def plot_spectrum(csv_path) -> Path:
    csv_path = Path(csv_path)
    rows = _read(csv_path)
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    ax.plot([_f(r["gamma"]) for r in rows], [_f(r["rho"]) for r in rows])
    ax.set_xlabel("γ")
    ax.set_ylabel("ρ(γ)")
    ax.grid(alpha=0.3)
    return _save(fig, csv_path.with_suffix(".png"))


def plot_haar(csv_path) -> Path:
    """Cumulants of Tr(O^k), Tr(O^-k) with error bars against the Haar values."""
    csv_path = Path(csv_path)
    rows = _read(csv_path)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for which, marker in (("O^k", "o"), ("O^-k", "s")):
        rs = sorted((r for r in rows if r["which"] == which), key=lambda r: int(r["k"]))
        k = [int(r["k"]) for r in rs]
        for ax, key, se in zip(axes, ("mean", "variance", "third_cumulant"),
                               ("mean_se", "variance_se", "third_se")):
            ax.errorbar(k, [_f(r[key]) for r in rs], yerr=[_f(r[se]) for r in rs], fmt=marker, ms=4,
                        capsize=2, mfc="none", label=which)
    rs = sorted((r for r in rows if r["which"] == "O^k"), key=lambda r: int(r["k"]))
    k = [int(r["k"]) for r in rs]
    axes[0].plot(k, [_f(r["haar_mean"]) for r in rs], "k_", ms=12, label="Haar")
    axes[1].plot(k, [_f(r["haar_variance"]) for r in rs], "k_", ms=12, label="Haar")
    axes[2].axhline(0, color="k", lw=0.8)
    for ax, key in zip(axes, ("mean", "variance", "3rd cumulant")):
        ax.set_xlabel("k")
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    return _save(fig, csv_path.with_suffix(".png"))


def plot_ansatz(csv_path) -> Path:
    csv_path = Path(csv_path)
    rows = _read(csv_path)
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    ax.plot([int(r["generation"]) for r in rows], [_f(r["margin"]) for r in rows], "o-")
    ax.axhline(0, color="k", lw=0.8)
    ax.set_xlabel("generation a")
    ax.set_ylabel("subgradient margin")
    ax.grid(alpha=0.3)
    return _save(fig, csv_path.with_suffix(".png"))
