"""Partition agreement, support recovery, coefficient and prediction error."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Partition
from .errors import InvalidInputError

EXHAUSTIVE_MATCH_MAX_K = 6


def _labels(a) -> np.ndarray:
    return np.asarray(a.labels if isinstance(a, Partition) else a).ravel()


def _pair(a, b):
    a, b = _labels(a), _labels(b)
    if a.size != b.size:
        raise InvalidInputError(f"partitions have different lengths ({a.size} vs {b.size})")
    return a, b


def _codes(x) -> tuple[np.ndarray, int]:
    """Dense 0-based codes of a label vector, and their count."""
    if x.size and np.issubdtype(x.dtype, np.integer) and x.min() >= 0 and x.max() < 4 * x.size + 16:
        used = np.bincount(x) > 0
        remap = np.cumsum(used) - 1
        return remap[x], int(used.sum())
    _, inv = np.unique(x, return_inverse=True)
    return inv.ravel(), int(inv.max()) + 1 if x.size else 0


def contingency(a, b) -> np.ndarray:
    """Counts of samples per (label in ``a``, label in ``b``) pair, empty labels dropped."""
    a, b = _pair(a, b)
    ia, ka = _codes(a)
    ib, kb = _codes(b)
    return np.bincount(ia * kb + ib, minlength=ka * kb).reshape(ka, kb)


def _pairs(x) -> int:
    x = np.asarray(x, dtype=np.int64)
    return int((x * (x - 1) // 2).sum())


def ari(a, b) -> float:
    """Adjusted Rand index (Hubert and Arabie)."""
    t = contingency(a, b)
    n = int(t.sum())
    pairs = n * (n - 1) // 2
    index = _pairs(t)
    ra = _pairs(t.sum(axis=1))
    rb = _pairs(t.sum(axis=0))
    expected = ra * rb / pairs if pairs > 0 else 0.0
    top = 0.5 * (ra + rb)
    if top == expected:
        # both partitions trivial in the same way (one block, or all singletons)
        return 1.0
    return float((index - expected) / (top - expected))


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """Mutual information over the arithmetic mean of the two entropies.

    Two single-block partitions score 1.
    """
    t = contingency(a, b)
    if t.shape[0] <= 1 and t.shape[1] <= 1:
        return 1.0
    n = t.sum()
    pa, pb = t.sum(axis=1), t.sum(axis=0)
    nz = t > 0
    outer = np.outer(pa, pb)
    mi = float(np.sum(t[nz] / n * np.log(t[nz] * n / outer[nz])))
    ha, hb = _entropy(pa), _entropy(pb)
    denom = 0.5 * (ha + hb)
    if denom <= 0:
        return 1.0
    return float(min(max(mi / denom, 0.0), 1.0))


def mcc(tp: float, fp: float, tn: float, fn: float) -> float:
    """Matthews correlation; 0 whenever a marginal of the confusion table is 0."""
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(denom))


@dataclass(frozen=True)
class IdentificationReport:
    tpr: float
    fpr: float
    mcc: float
    matched_perm: tuple[int, ...]
    """``matched_perm[e]`` is the true subgroup matched to estimated subgroup ``e`` (-1 if none)."""
    counts: tuple[int, int, int, int] = (0, 0, 0, 0)
    """(TP, FP, TN, FN) over the concatenated supports."""


def match_labels(est, truth, K_est: int | None = None, K_true: int | None = None) -> tuple[int, ...]:
    """Injective map of estimated to true labels maximizing the number of agreeing samples.

    Exhaustive over permutations while the smaller label count is at most
    six (first maximum in lexicographic order); assignment solver beyond.
    """
    e, t = _pair(est, truth)
    Ke = int(K_est if K_est is not None else (e.max() + 1 if e.size else 1))
    Kt = int(K_true if K_true is not None else (t.max() + 1 if t.size else 1))
    agree = np.zeros((Ke, Kt), dtype=np.int64)
    np.add.at(agree, (e, t), 1)
    m = min(Ke, Kt)
    if m <= EXHAUSTIVE_MATCH_MAX_K:
        best, best_map = -1, None
        for rows in itertools.combinations(range(Ke), m):
            for cols in itertools.permutations(range(Kt), m):
                score = int(agree[list(rows), list(cols)].sum())
                if score > best:
                    best, best_map = score, dict(zip(rows, cols))
    else:
        r, c = linear_sum_assignment(-agree)
        best_map = dict(zip(r.tolist(), c.tolist()))
    return tuple(best_map.get(k, -1) for k in range(Ke))


def support_counts(est_supports, true_supports, perm) -> tuple[int, int, int, int]:
    """Confusion counts over concatenated supports of matched subgroups.

    Unmatched estimated subgroups are compared against an empty support and
    unmatched true subgroups against an empty estimate.
    """
    S_e = np.asarray(est_supports, dtype=bool)
    S_t = np.asarray(true_supports, dtype=bool)
    p = S_t.shape[1]
    if S_e.shape[1] != p:
        raise InvalidInputError("estimated and true supports have different p")
    est_rows, true_rows = [], []
    used = set()
    for e, t in enumerate(perm):
        est_rows.append(S_e[e])
        true_rows.append(S_t[t] if t >= 0 else np.zeros(p, dtype=bool))
        if t >= 0:
            used.add(t)
    for t in range(S_t.shape[0]):
        if t not in used:
            est_rows.append(np.zeros(p, dtype=bool))
            true_rows.append(S_t[t])
    E, T = np.concatenate(est_rows), np.concatenate(true_rows)
    tp = int(np.sum(E & T))
    fp = int(np.sum(E & ~T))
    tn = int(np.sum(~E & ~T))
    fn = int(np.sum(~E & T))
    return tp, fp, tn, fn


def identification_report(est, truth) -> IdentificationReport:
    """TPR, FPR and MCC of support recovery after matching subgroup labels.

    ``est`` needs ``partition`` and ``betas`` (a :class:`FitResult` does),
    ``truth`` needs ``partition`` and ``betas`` too.
    """
    Be = np.atleast_2d(np.asarray(est.betas))
    Bt = np.atleast_2d(np.asarray(truth.betas))
    perm = match_labels(est.partition, truth.partition, Be.shape[0], Bt.shape[0])
    tp, fp, tn, fn = support_counts(Be != 0, Bt != 0, perm)
    tpr = tp / (tp + fn) if tp + fn else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return IdentificationReport(tpr, fpr, mcc(tp, fp, tn, fn), perm, (tp, fp, tn, fn))


def rmse(est, truth) -> float:
    """``sqrt(sum_i |beta_hat[g_hat_i] - beta[g_i]|^2 / n)``; needs no label matching."""
    ge, gt = _pair(est.partition, truth.partition)
    Be = np.atleast_2d(np.asarray(est.betas, dtype=float))
    Bt = np.atleast_2d(np.asarray(truth.betas, dtype=float))
    if Be.shape[1] != Bt.shape[1]:
        raise InvalidInputError("estimated and true coefficients have different p")
    # squared distance between every (estimated, true) coefficient pair, then look up per sample
    d2 = ((Be[:, None, :] - Bt[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2[ge, gt].mean()))


def pmre(y, yhat, return_excluded: bool = False):
    """Mean of ``|(y_i - yhat_i) / y_i|`` over the samples with ``y_i != 0``."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise InvalidInputError("y and yhat have different lengths")
    keep = y != 0
    if not np.any(keep):
        raise InvalidInputError("relative error is undefined when every response is zero")
    value = float(np.mean(np.abs((y[keep] - yhat[keep]) / y[keep])))
    if return_excluded:
        return value, int(np.sum(~keep))
    return value


def stability(a, b, index_map=None) -> float:
    """Mean absolute difference of the co-membership matrices on the shared samples.

    ``b`` labels a subset of ``a``'s samples; ``index_map[j]`` is the position
    in ``a`` of ``b``'s sample ``j`` (identity when omitted).
    """
    la, lb = _labels(a), _labels(b)
    if index_map is None:
        if la.size != lb.size:
            raise InvalidInputError("without index_map both partitions must cover the same samples")
        index_map = np.arange(lb.size)
    index_map = np.asarray(index_map, dtype=np.int64)
    if index_map.size != lb.size:
        raise InvalidInputError("index_map needs one entry per sample of b")
    if index_map.size == 0:
        raise InvalidInputError("no shared samples")
    sa = la[index_map]
    A = sa[:, None] == sa[None, :]
    B = lb[:, None] == lb[None, :]
    return float(np.mean(A != B))
