"""OOD scores under one convention: a higher score means more in-distribution.

Feature-based scores read the last hidden layer a^(L). Distance-based scores
(knn, ssd, residual, mahalanobis) need a bank of ID features; the norm
family and NAN do not.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameter, InvalidState
from .net import MlpModel, forward, head, normalize_rows
from .numcore import (
    GaussianModel,
    active_count,
    fit_gaussian,
    kmeans,
    logsumexp,
    lp_norm,
    make_rng,
    pca_subspace,
    percentile,
    sign_vec,
    softmax,
)

FUSION_EPS = 1e-12
DEFAULT_K = 10
DEFAULT_LABEL_FREE_CLUSTERS = 5
DEFAULT_REACT_PERCENTILE = 90.0

CLASSIFIER_KINDS = ("msp", "maxlogit", "energy", "kl_uniform")
FEATURE_KINDS = ("l1", "lp", "inv_l0", "nan", "embedding", "hidden_conf")
BANK_KINDS = ("mahalanobis", "knn", "ssd", "residual")
FUSABLE = ("knn", "ssd", "mahalanobis", "residual")
_PARAMS = {"knn": "k", "lp": "p", "ssd": "clusters", "residual": "dim"}


# ---------------------------------------------------------------------------
# kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreKind:
    """A score family plus its parameter; ``fused`` wraps a distance kind."""

    name: str
    param: float | None = None
    base: ScoreKind | None = None
    react: bool = False

    def __post_init__(self):
        known = CLASSIFIER_KINDS + FEATURE_KINDS + BANK_KINDS + ("fused",)
        if self.name not in known:
            raise InvalidParameter(f"unknown score kind {self.name!r}")
        if self.name == "fused":
            if self.base is None or self.base.name not in FUSABLE:
                raise InvalidParameter(f"fused needs a distance base in {FUSABLE}")
        elif self.base is not None:
            raise InvalidParameter(f"{self.name} takes no base kind")
        if self.param is not None:
            if self.name not in _PARAMS:
                raise InvalidParameter(f"{self.name} takes no parameter")
            if self.name == "lp":
                if not self.param > 0:
                    raise InvalidParameter("lp needs p > 0")
            elif self.param < 1 or self.param != int(self.param):
                raise InvalidParameter(f"{_PARAMS[self.name]} must be an integer >= 1")

    @classmethod
    def parse(cls, text):
        """Parse e.g. ``nan``, ``knn:k=5``, ``lp:p=2``, ``fused:ssd``, ``react+nan``."""
        if isinstance(text, cls):
            return text
        s = str(text).strip().lower()
        react = s.startswith("react+")
        if react:
            s = s[len("react+"):]
        if s.startswith("fused:"):
            return cls("fused", base=cls.parse(s[len("fused:"):]), react=react)
        m = re.fullmatch(r"([a-z_0-9]+)(?::([a-z]+)=([0-9.eE+-]+))?", s)
        if not m:
            raise InvalidParameter(f"cannot parse score kind {text!r}")
        name, key, value = m.groups()
        if name == "l2":
            name, key, value = "lp", "p", "2"
        param = None
        if key is not None:
            if _PARAMS.get(name) != key:
                raise InvalidParameter(f"{name} has no parameter {key!r}")
            try:
                param = float(value)
            except ValueError as exc:
                raise InvalidParameter(f"bad value in {text!r}") from exc
        return cls(name, param, react=react)

    @property
    def label(self):
        core = f"fused:{self.base.label}" if self.name == "fused" else self.name
        if self.param is not None:
            v = int(self.param) if self.param == int(self.param) else self.param
            core += f":{_PARAMS[self.name]}={v}"
        return ("react+" if self.react else "") + core

    @property
    def needs_bank(self):
        return self.react or self.name in BANK_KINDS or self.name == "fused"

    def __str__(self):
        return self.label


# ---------------------------------------------------------------------------
# bank
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BankIndex:
    features: np.ndarray
    normalized_features: np.ndarray
    gaussian: GaussianModel | None = None
    clusters: tuple = ()           # one single-mean GaussianModel per cluster
    pca: tuple | None = None       # (mean, basis)
    react_threshold: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.features.shape[0]

    def rectified(self):
        """The same bank built from ReAct-clipped features (cached)."""
        if self.react_threshold is None:
            raise InvalidState("bank has no ReAct threshold")
        if "bank" not in self._cache:
            self._cache["bank"] = _assemble(
                react_rectify(self.features, self.react_threshold), self._cache["labels"],
                self._cache["opts"], None)
        return self._cache["bank"]

    def cluster_models(self, count=None):
        """Per-cluster Gaussians; ``count`` refits k-means with that many clusters."""
        if count is None or len(self.clusters) == int(count):
            return self.clusters
        count = int(count)
        key = ("clusters", count)
        if key not in self._cache:
            if not 1 <= count <= len(self) or len(self) < 2:
                raise InvalidParameter(f"clusters must lie in [1, {len(self)}]")
            opts = self._cache.get("opts", {"seed": 0, "shrinkage": 0.05})
            self._cache[key] = _fit_clusters(self.features, count, opts, self.gaussian)
        return self._cache[key]

    def subspace(self, dim=None):
        """(mean, basis) of the top ``dim`` principal directions; None means the built-in one."""
        if dim is None or (self.pca is not None and self.pca[1].shape[1] == int(dim)):
            return self.pca
        dim = int(dim)
        key = ("pca", dim)
        if key not in self._cache:
            if not 1 <= dim <= self.features.shape[1]:
                raise InvalidParameter(f"residual dim must lie in [1, {self.features.shape[1]}]")
            self._cache[key] = pca_subspace(self.features, dim)
        return self._cache[key]


def _freeze(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _fit_clusters(F, n_clusters, opts, pooled):
    n_clusters = min(int(n_clusters), F.shape[0])
    km = kmeans(F, n_clusters, make_rng(opts["seed"], "bank", "kmeans"))
    fitted = []
    for c in range(n_clusters):
        members = F[km.assignments == c]
        if len(members) >= 2:
            fitted.append(fit_gaussian([members], opts["shrinkage"]))
        else:
            # a singleton falls back to the pooled precision
            fitted.append(GaussianModel(km.centroids[c:c + 1], pooled.shared_cov_inv,
                                        opts["shrinkage"]))
    return tuple(fitted)


def _assemble(F, labels, opts, react_threshold):
    n, d = F.shape
    if labels is not None:
        groups = [F[labels == c] for c in np.unique(labels)]
    else:
        groups = [F]
    gaussian = fit_gaussian(groups, opts["shrinkage"]) if n >= 2 else None

    n_clusters = opts["clusters"]
    if n_clusters is None:
        n_clusters = len(groups) if labels is not None else DEFAULT_LABEL_FREE_CLUSTERS
    clusters = _fit_clusters(F, n_clusters, opts, gaussian) if n >= 2 else ()

    dim = opts["residual_dim"]
    if dim is None:
        dim = max(1, d // 4)
    dim = min(int(dim), d)
    pca = pca_subspace(F, dim) if n >= dim + 1 else None

    bank = BankIndex(_freeze(F), _freeze(normalize_rows(F)), gaussian, clusters, pca,
                     react_threshold)
    bank._cache.update(labels=labels, opts=opts)
    return bank


def build_bank(model: MlpModel, features, labels=None, clusters=None, residual_dim=None,
               react_percentile=DEFAULT_REACT_PERCENTILE, shrinkage=0.05, seed=0):
    """Index the last-hidden-layer features of ID inputs ``features``.

    ``labels`` drives the class Gaussians (one pooled Gaussian if None) and
    the default SSD cluster count.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[0] == 0:
        raise InvalidParameter("bank needs at least one sample")
    F = forward(model, X).last_hidden
    y = None if labels is None else np.asarray(labels, dtype=np.int64)
    threshold = None
    if react_percentile is not None:
        threshold = float(percentile(F.ravel(), react_percentile))
    opts = {"clusters": clusters, "residual_dim": residual_dim, "shrinkage": shrinkage,
            "seed": seed}
    return _assemble(F, y, opts, threshold)


# ---------------------------------------------------------------------------
# individual scores
# ---------------------------------------------------------------------------

def nan_score(a):
    """||a||_1 / ||a||_0, zero when nothing is active. Works row-wise."""
    a = np.asarray(a, dtype=np.float64)
    count = active_count(a)
    l1 = lp_norm(a, 1)
    return np.where(count > 0, l1 / np.maximum(count, 1), 0.0)


def classifier_scores(logits):
    """msp, maxlogit, energy and kl_uniform from logits (1-D or batch)."""
    z = np.asarray(logits, dtype=np.float64)
    K = z.shape[-1]
    p = softmax(z)
    logp = z - np.asarray(logsumexp(z))[..., None] if z.ndim > 1 else z - logsumexp(z)
    neg_entropy = (p * logp).sum(-1)
    return {
        "msp": p.max(-1),
        "maxlogit": z.max(-1),
        "energy": logsumexp(z),
        "kl_uniform": neg_entropy + math.log(K) if K > 1 else np.zeros(z.shape[:-1]),
    }


def mahalanobis_score(f, g: GaussianModel | None):
    if g is None:
        raise InvalidState("Gaussian model is not fitted")
    return -g.sq_mahalanobis(f).min(-1)


def knn_score(f, bank: BankIndex, k=DEFAULT_K, chunk=1024):
    """Minus the distance from f/||f|| to its k-th nearest normalized bank vector."""
    k = int(k)
    if not 1 <= k <= len(bank):
        raise InvalidParameter(f"k must lie in [1, {len(bank)}], got {k}")
    q = normalize_rows(np.atleast_2d(np.asarray(f, dtype=np.float64)))
    B = bank.normalized_features
    sq_b = (B * B).sum(1)
    out = np.empty(q.shape[0])
    for s in range(0, q.shape[0], chunk):
        qb = q[s:s + chunk]
        d2 = (qb * qb).sum(1)[:, None] + sq_b[None, :] - 2.0 * qb @ B.T
        order = np.argpartition(d2, k - 1, axis=1)[:, :k]
        # exact distances for the k candidates
        diff = qb[:, None, :] - B[order]
        exact = np.sqrt((diff * diff).sum(-1))
        out[s:s + chunk] = -np.sort(exact, axis=1)[:, k - 1]
    return out[0] if np.ndim(f) == 1 else out


def ssd_score(f, bank: BankIndex, clusters=None):
    models = bank.cluster_models(clusters) if bank.clusters else ()
    if not models:
        raise InvalidState("bank has no fitted clusters")
    dist = np.stack([g.sq_mahalanobis(f)[..., 0] for g in models], -1)
    return -dist.min(-1)


def residual_score(f, bank: BankIndex, dim=None):
    pca = bank.subspace(dim)
    if pca is None:
        raise InvalidState("bank has no principal subspace")
    mean, P = pca
    c = np.asarray(f, dtype=np.float64) - mean
    r = c - (c @ P) @ P.T
    return -lp_norm(r, 2)


def react_rectify(a, threshold):
    if not math.isfinite(threshold):
        raise InvalidParameter("ReAct threshold must be finite")
    return np.minimum(np.asarray(a, dtype=np.float64), threshold)


def fuse_distance_nan(distance_score, nan):
    """(-d) / NAN with the NAN floored at 1e-12."""
    nan = np.asarray(nan, dtype=np.float64)
    if np.any(nan < 0):
        raise InvalidParameter("NAN must be non-negative")
    return np.asarray(distance_score, dtype=np.float64) / np.maximum(nan, FUSION_EPS)


def hidden_confidence(model: MlpModel, a_last):
    """max_k of the binarised last-layer classifier applied to a^(L)."""
    B = sign_vec(model.output_weight().T)
    return (np.asarray(a_last) @ B.T).max(-1)


# ---------------------------------------------------------------------------
# dataset-level dispatch
# ---------------------------------------------------------------------------

def _features_of(X):
    return X.features if hasattr(X, "features") else np.asarray(X, dtype=np.float64)


def _distance(kind: ScoreKind, a, bank: BankIndex):
    if kind.name == "mahalanobis":
        return mahalanobis_score(a, bank.gaussian)
    if kind.name == "knn":
        return knn_score(a, bank, DEFAULT_K if kind.param is None else kind.param)
    if kind.name == "ssd":
        return ssd_score(a, bank, kind.param)
    return residual_score(a, bank, kind.param)


def _score(model, kind: ScoreKind, a, emb, logits, bank):
    name = kind.name
    if name in CLASSIFIER_KINDS:
        return classifier_scores(logits)[name]
    if name == "l1":
        return lp_norm(a, 1)
    if name == "lp":
        return lp_norm(a, 2.0 if kind.param is None else kind.param)
    if name == "inv_l0":
        c = active_count(a)
        return np.where(c > 0, 1.0 / np.maximum(c, 1), 0.0)
    if name == "nan":
        return nan_score(a)
    if name == "embedding":
        return lp_norm(emb, 2)
    if name == "hidden_conf":
        return hidden_confidence(model, a)
    if name == "fused":
        return fuse_distance_nan(_distance(kind.base, a, bank), nan_score(a))
    return _distance(kind, a, bank)


def _check_bank(kind: ScoreKind, bank):
    if not kind.needs_bank:
        return bank
    if bank is None:
        raise InvalidParameter(f"score {kind.label!r} needs a bank of ID features")
    if kind.react:
        if bank.react_threshold is None:
            raise InvalidParameter(f"score {kind.label!r} needs a ReAct threshold in the bank")
        if kind.name in BANK_KINDS or kind.name == "fused":
            return bank.rectified()
    return bank


def score_many(model: MlpModel, X, kinds, bank: BankIndex | None = None):
    """Evaluate several kinds from one forward pass; returns {label: scores}."""
    kinds = [ScoreKind.parse(k) for k in kinds]
    X = np.atleast_2d(_features_of(X))
    banks = {k.label: _check_bank(k, bank) for k in kinds}
    trace = forward(model, X)
    out = {}
    rectified = None
    for kind in kinds:
        if kind.react:
            if rectified is None:
                a_r = react_rectify(trace.last_hidden, bank.react_threshold)
                emb_r, _, logits_r = head(model, a_r)
                rectified = (a_r, emb_r, logits_r)
            a, emb, logits = rectified
        else:
            a, emb, logits = trace.last_hidden, trace.embedding, trace.logits
        out[kind.label] = np.asarray(_score(model, kind, a, emb, logits, banks[kind.label]),
                                     dtype=np.float64).reshape(X.shape[0])
    return out


def score_dataset(model: MlpModel, dataset, kind, bank: BankIndex | None = None):
    kind = ScoreKind.parse(kind)
    return score_many(model, dataset, [kind], bank)[kind.label]


def write_scores_csv(path, blocks):
    """Write ``blocks`` = [(is_ood, {label: scores})] as one CSV.

    Rows are numbered consecutively across blocks in the given order.
    """
    labels = list(blocks[0][1]) if blocks else []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "is_ood", *labels])
        sid = 0
        for is_ood, table in blocks:
            if list(table) != labels:
                raise InvalidParameter("every block must carry the same score columns")
            n = len(next(iter(table.values()))) if table else 0
            for i in range(n):
                w.writerow([sid, int(bool(is_ood)), *(repr(float(table[c][i])) for c in labels)])
                sid += 1
