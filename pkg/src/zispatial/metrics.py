"""Validation metrics and MCMC diagnostics."""

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "rmspe",
    "auc",
    "ess_batch_means",
    "coverage",
    "chain_ess",
]


def rmspe(truth, predicted):
    """Root mean squared prediction error over paired vectors."""
    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if truth.shape != predicted.shape or truth.ndim != 1 or len(truth) < 1:
        raise ValueError("truth and prediction must be equal-length vectors")
    return float(np.sqrt(np.mean((truth - predicted) ** 2)))


def auc(labels, scores):
    """Area under the ROC curve via the Mann-Whitney statistic.

    ``labels`` are 0/1 (1 = nonzero observation), ``scores`` the predicted
    presence probabilities.  Tied scores count half; the result is invariant
    under strictly increasing transformations of the scores.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores must have equal length")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("labels must contain both classes")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


def ess_batch_means(x):
    """Batch-means standard error and effective sample size of a chain.

    Uses floor(sqrt(T)) equal-length batches (leading remainder dropped);
    the asymptotic variance is batch_length * Var(batch means) and
    ESS = T * s^2 / sigma2_hat.  Returns ``(se, ess)``.
    """
    x = np.asarray(x, dtype=float)
    T = len(x)
    if T < 100:
        raise ValueError("chain too short for batch means (need >= 100)")
    n_batches = int(np.floor(np.sqrt(T)))
    batch_len = T // n_batches
    used = n_batches * batch_len
    xs = x[T - used :]
    s2 = xs.var(ddof=1)
    if s2 <= 0:
        raise ValueError("zero variance")
    means = xs.reshape(n_batches, batch_len).mean(axis=1)
    sigma2 = batch_len * means.var(ddof=1)
    se = float(np.sqrt(sigma2 / used))
    ess = float(used * s2 / sigma2)
    return se, ess


def chain_ess(samples, seconds=None):
    """Column-wise batch-means diagnostics for a (T, d) sample matrix.

    Returns a dict of arrays ``se``, ``ess``, and (when ``seconds`` is
    given) ``es_per_sec``.  Degenerate (constant) columns yield NaN rather
    than raising, so sidecar reports never fail on fixed parameters.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    d = samples.shape[1]
    se = np.full(d, np.nan)
    ess = np.full(d, np.nan)
    for j in range(d):
        try:
            se[j], ess[j] = ess_batch_means(samples[:, j])
        except ValueError:
            pass
    out = {"se": se, "ess": ess}
    if seconds is not None:
        out["es_per_sec"] = ess / seconds
    return out


def coverage(sample_sets, truths, level=0.95):
    """Fraction of replicates whose central credible interval covers truth.

    ``sample_sets`` is a sequence of (T, d) posterior sample matrices (one
    per replicate) and ``truths`` the length-d vector of true values.
    Returns per-parameter coverage rates.
    """
    truths = np.asarray(truths, dtype=float)
    if len(sample_sets) < 2:
        raise ValueError("need at least two replicates")
    alpha = (1.0 - level) / 2.0
    hits = np.zeros(len(truths))
    for samples in sample_sets:
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        lo = np.quantile(samples, alpha, axis=0)
        hi = np.quantile(samples, 1.0 - alpha, axis=0)
        hits += (lo <= truths) & (truths <= hi)
    return hits / len(sample_sets)
