"""Detection metrics and activation statistics.

Scores follow the convention "higher means more in-distribution".
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidParameter
from .numcore import active_count

TPR_LEVEL = 95  # percent


def _pair(id_scores, ood_scores):
    s_id = np.asarray(id_scores, dtype=np.float64).ravel()
    s_ood = np.asarray(ood_scores, dtype=np.float64).ravel()
    if s_id.size == 0 or s_ood.size == 0:
        raise InvalidParameter("AUROC/FPR95 need non-empty ID and OOD score sets")
    return s_id, s_ood


def auroc(id_scores, ood_scores):
    """P(ID score > OOD score) with ties counted one half, via the rank-sum statistic."""
    s_id, s_ood = _pair(id_scores, ood_scores)
    n, m = s_id.size, s_ood.size
    ranks = rankdata(np.concatenate([s_id, s_ood]), method="average")
    u = ranks[:n].sum() - n * (n + 1) / 2.0
    return float(u / (n * m))


def auroc_bruteforce(id_scores, ood_scores):
    s_id, s_ood = _pair(id_scores, ood_scores)
    diff = s_id[:, None] - s_ood[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (s_id.size * s_ood.size))


def _tpr_ok(count, n):
    # count / n >= 0.95 in exact integer arithmetic
    return count * 100 >= TPR_LEVEL * n


def fpr95(id_scores, ood_scores):
    """OOD acceptance rate at the largest threshold that keeps 95% of ID.

    A sample is accepted as ID when its score is >= the threshold.
    """
    s_id, s_ood = _pair(id_scores, ood_scores)
    n = s_id.size
    need = -(-TPR_LEVEL * n // 100)  # ceil(0.95 n)
    tau = np.sort(s_id)[::-1][need - 1]
    return float(np.count_nonzero(s_ood >= tau) / s_ood.size)


def fpr95_bruteforce(id_scores, ood_scores):
    s_id, s_ood = _pair(id_scores, ood_scores)
    best = None
    for tau in np.unique(np.concatenate([s_id, s_ood])):
        if _tpr_ok(np.count_nonzero(s_id >= tau), s_id.size) and (best is None or tau > best):
            best = tau
    return float(np.count_nonzero(s_ood >= best) / s_ood.size)


def activation_entropy(activations):
    """Per-unit Bernoulli entropy (nats) of the on/off indicator, and its mean."""
    A = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    if A.shape[0] == 0:
        raise InvalidParameter("activation_entropy needs at least one sample")
    p = (A > 0).mean(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(p < 1, (1 - p) * np.log1p(-p), 0.0))
    return h, float(h.mean())


def mean_sparsity(activations, cap=1.0):
    """Mean of 1 / active_count over samples; all-inactive samples contribute ``cap``."""
    A = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    if A.shape[0] == 0:
        raise InvalidParameter("mean_sparsity needs at least one sample")
    c = active_count(A)
    inv = np.where(c > 0, 1.0 / np.maximum(c, 1), cap)
    return float(inv.mean())


def spearman(x, y):
    """Rank correlation with average ranks for ties; 0 when either side is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidParameter("spearman needs equal-length inputs")
    if x.size < 3:
        raise InvalidParameter("spearman needs at least 3 points")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        return 0.0
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))


def accuracy(logits, labels):
    return float(np.mean(np.asarray(logits).argmax(-1) == np.asarray(labels)))
