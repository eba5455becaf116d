"""Classification metrics and the two-sample rank-sum test."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .timeseries import N_CLASSES

EXACT_MAX_N = 12


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same shape")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(confusion) -> np.ndarray:
    cm = np.asarray(confusion)
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + 0.5 * (fp + fn)
    return np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)


def uwaf(confusion) -> tuple[float, np.ndarray]:
    """Unweighted average F1 over classes with support; returns (uwaf, per-class F1).

    Per-class F1 is tp / (tp + (fp + fn) / 2). Classes without true frames are
    left out of the mean (their F1 entry is still reported, as 0 or the value
    implied by false positives).
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0) or not np.all(np.equal(np.mod(cm, 1), 0)):
        raise ValueError("confusion matrix must hold non-negative integer counts")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is all zeros")
    f1 = per_class_f1(cm)
    support = cm.sum(axis=1) > 0
    return float(f1[support].mean()), f1


# ------------------------------------------------------------------ rank sum

def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def ranksum_test(a, b) -> float:
    """Two-sided Wilcoxon-Mann-Whitney p-value.

    Exact (enumerating every assignment of the pooled midranks) when the
    combined size is at most 12; otherwise a normal approximation with tie
    correction and a 0.5 continuity correction.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    n = n1 + n2
    ranks = _midranks(np.concatenate([a, b]))
    w_obs = ranks[:n1].sum()
    mean = n1 * (n + 1) / 2
    dev = abs(w_obs - mean)
    if n <= EXACT_MAX_N:
        tol = 1e-9 * max(1.0, mean)
        hits = total = 0
        for idx in itertools.combinations(range(n), n1):
            total += 1
            if abs(ranks[list(idx)].sum() - mean) >= dev - tol:
                hits += 1
        return hits / total
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts**3 - counts))
    var = n1 * n2 / 12 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))
