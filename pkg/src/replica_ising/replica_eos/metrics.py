"""Selection metrics predicted from a solved EOS."""

from __future__ import annotations

import numpy as np
from scipy.special import erfc
from scipy.stats import binom

from ..estimators import SelectionMetrics
from .core import ActiveTrialSet, EosProblem, OrderParams, soft

__all__ = ["predict_metrics", "sample_inactive", "expected_precision"]


def expected_precision(tp: int, n_inactive: int, fpr: float) -> tuple[float, float]:
    """(E[precision; defined], P(defined)) for FP ~ Binomial(n_inactive, fpr).

    Precision tp/(tp+FP) is undefined when nothing is selected.  With tp > 0 it
    is always defined; with tp = 0 it is 0 whenever FP > 0, which happens with
    probability 1 - (1-fpr)^n_inactive.
    """
    if tp > 0:
        k = np.arange(n_inactive + 1)
        pmf = binom.pmf(k, n_inactive, fpr)
        return float(np.dot(pmf, tp / (tp + k))), 1.0
    q = -np.expm1(n_inactive * np.log1p(-fpr)) if fpr < 1 else 1.0
    return 0.0, float(q)


def predict_metrics(params: OrderParams, trials: ActiveTrialSet, prob: EosProblem) -> SelectionMetrics:
    """Precision, recall and RSS from the active-set trials and the inactive-set threshold.

    The inactive coordinates are i.i.d. soft-thresholded Gaussians, so the number
    selected is Binomial(N-d-1, FPR); precision is averaged over that law exactly
    and over the trials where it is defined (``n_excluded`` is the expected
    number of trials without any selection, rounded).
    """
    d = prob.d
    fpr = float(erfc(prob.threshold_arg(params.H)))
    n_in = prob.N - d - 1
    J = trials.J
    tp = (J != 0).sum(axis=1)
    pv = np.array([expected_precision(int(k), n_in, fpr) for k in tp])
    v, q = pv[:, 0], pv[:, 1]
    # average over trials with defined precision, as the experiment does:
    # each trial counts with the probability that its precision is defined
    n_def = float(q.sum())
    if n_def >= 1.0:
        precision = float(v.sum() / n_def)
        resid = v - precision * q
        prec_se = float(np.sqrt((resid**2).sum() / max(tp.size - 1, 1) / tp.size) / q.mean()) if tp.size > 1 else 0.0
    else:  # fewer than one trial expected to select anything
        precision = prec_se = float("nan")
    rec = tp / d
    rss = ((J - prob.true_couplings[None, :]) ** 2).sum(axis=1) + params.R

    def se(v):
        return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0

    return SelectionMetrics(
        precision=precision,
        recall=float(rec.mean()),
        rss=float(rss.mean()),
        tp=float(tp.mean()),
        fp=n_in * fpr,
        fn=float(d - tp.mean()),
        precision_se=prec_se,
        recall_se=se(rec),
        rss_se=se(rss),
        fpr=fpr,
        n_trials=trials.T,
        n_excluded=int(round(tp.size - n_def)),
        extra={"R": params.R, "active_rss": float((rss - params.R).mean())},
    )


def sample_inactive(params: OrderParams, prob: EosProblem, count: int, rng=None, lam: float | None = None) -> np.ndarray:
    """Draws of the inactive-coordinate estimate ``sqrt(H)/(K sqrt(N)) soft(z, lam M / sqrt(H N))``."""
    rng = np.random.default_rng(rng)
    lam = prob.lam if lam is None else lam
    z = rng.standard_normal(count)
    thr = lam * prob.M / np.sqrt(params.H * prob.N)
    return np.sqrt(params.H) / (params.K * np.sqrt(prob.N)) * soft(z, thr)
