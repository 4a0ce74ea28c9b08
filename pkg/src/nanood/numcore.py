"""Dense numerics: norms, softmax, percentiles, k-means, Gaussian fits, PCA, RNG streams.

Everything works on float64 numpy arrays. Vectors are 1-D arrays, matrices
2-D; batched variants operate along the last axis.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidParameter, NumericalFailure

DEFAULT_SHRINKAGE = 0.05


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def _name_key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Return a Philox generator for the stream ``names`` under ``seed``.

    Streams with different names are statistically independent, and the same
    (seed, names) pair always yields the same draw sequence.
    """
    if seed < 0 or seed >= 2**64:
        raise InvalidParameter(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_name_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))


def split_rng(rng: np.random.Generator, *names: str | int) -> np.random.Generator:
    """Derive an independent child stream from ``rng`` without advancing it."""
    ss = rng.bit_generator.seed_seq
    key = tuple(ss.spawn_key) + tuple(_name_key(n) for n in names)
    child = np.random.SeedSequence(ss.entropy, spawn_key=key)
    return np.random.Generator(np.random.Philox(child))


# ---------------------------------------------------------------------------
# vector primitives
# ---------------------------------------------------------------------------

def lp_norm(v, p=2.0, axis=-1):
    """l_p norm along ``axis``; ``p=np.inf`` gives the max-abs norm."""
    if not p > 0:
        raise InvalidParameter(f"p must be positive, got {p}")
    v = np.abs(np.asarray(v, dtype=np.float64))
    if v.size == 0:
        return np.zeros(v.shape[:-1]) if v.ndim > 1 else 0.0
    if np.isinf(p):
        return v.max(axis=axis)
    if p == 1:
        return v.sum(axis=axis)
    # scale by the max entry so tiny or huge vectors neither underflow nor overflow
    m = v.max(axis=axis, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    u = v / safe
    if p == 2:
        s = np.sqrt(np.square(u).sum(axis=axis))
    else:
        s = np.power(np.power(u, p).sum(axis=axis), 1.0 / p)
    return s * np.squeeze(safe, axis=axis) * (np.squeeze(m, axis=axis) > 0)


def active_count(v, axis=-1):
    """Number of strictly positive entries; zeros count as deactivated."""
    return np.count_nonzero(np.asarray(v) > 0, axis=axis)


def sign_vec(v):
    """Entrywise sign with sign(0) = -1."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v > 0, 1.0, -1.0)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True)), axis=axis)
    return float(out) if out.ndim == 0 else out


def percentile(values, q):
    """Lower nearest-rank percentile: sorted[ceil(q/100 * n) - 1], index clamped."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise InvalidParameter("percentile of an empty array")
    if not 0 <= q <= 100:
        raise InvalidParameter(f"q must lie in [0, 100], got {q}")
    idx = math.ceil(Fraction(q) * n / 100) - 1
    return float(v[min(max(idx, 0), n - 1)])


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

class KMeansResult(NamedTuple):
    centroids: np.ndarray
    assignments: np.ndarray
    inertia_history: list


def _sq_dists(points, centroids):
    d = (np.square(points).sum(1)[:, None] - 2.0 * points @ centroids.T
         + np.square(centroids).sum(1)[None, :])
    return np.maximum(d, 0.0)


def kmeans(points, k, rng, max_iter=100):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are reseeded to the point farthest from its centroid.
    ``inertia_history`` holds the within-cluster sum of squares after each
    assignment step and is non-increasing.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise InvalidParameter(f"k must be in [1, {n}], got {k}")

    # k-means++ seeding
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centroid; take an unused one
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centroids[j:j + 1])[:, 0])

    history = []
    assign = None
    for _ in range(max(max_iter, 1)):
        d = _sq_dists(X, centroids)
        new_assign = d.argmin(1)
        history.append(float(d[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j]:
                centroids[j] = X[assign == j].mean(0)
        for j in np.flatnonzero(counts == 0):
            own = _sq_dists(X, centroids)[np.arange(n), assign]
            far = int(own.argmax())
            centroids[j] = X[far]
            assign[far] = j
    return KMeansResult(centroids, assign, history)


# ---------------------------------------------------------------------------
# Gaussian models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianModel:
    """Class-conditional Gaussians sharing one (shrunk) covariance."""

    means: np.ndarray          # (K, d)
    shared_cov_inv: np.ndarray  # (d, d)
    shrinkage: float

    @cached_property
    def _whitener(self):
        # P = R R^T, so x^T P x = ||x R||^2
        try:
            return np.linalg.cholesky(self.shared_cov_inv)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("precision matrix is not positive definite") from exc

    def sq_mahalanobis(self, f):
        """Squared Mahalanobis distance of f (d,) or (n, d) to every mean."""
        R = self._whitener
        y = np.asarray(f, dtype=np.float64) @ R
        diff = y[..., None, :] - self.means @ R
        return (diff * diff).sum(-1)


def shrink_covariance(cov, shrinkage):
    d = cov.shape[0]
    return (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / d) * np.eye(d)


def _precision(cov):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("covariance is singular") from exc
    diag = np.diag(chol)
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise NumericalFailure("covariance is numerically singular")
    inv_chol = np.linalg.inv(chol)
    prec = inv_chol.T @ inv_chol
    return 0.5 * (prec + prec.T)


def pooled_covariance(groups: Sequence[np.ndarray]):
    """Within-group scatter divided by the total sample count."""
    groups = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in groups if len(g)]
    n = sum(g.shape[0] for g in groups)
    means = np.stack([g.mean(0) for g in groups])
    scatter = sum((g - m).T @ (g - m) for g, m in zip(groups, means))
    return means, scatter / n


def fit_gaussian(features_by_class, shrinkage=DEFAULT_SHRINKAGE):
    """Fit class means and a shared shrunk covariance.

    ``features_by_class`` is a sequence of (n_k, d) arrays. The covariance is
    blended toward (trace/d) * I before inversion; a singular result raises
    NumericalFailure.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidParameter(f"shrinkage must lie in [0, 1], got {shrinkage}")
    total = sum(len(g) for g in features_by_class)
    if total < 2:
        raise InvalidParameter("need at least two samples to fit a Gaussian")
    means, cov = pooled_covariance(features_by_class)
    prec = _precision(shrink_covariance(cov, shrinkage))
    return GaussianModel(means, prec, float(shrinkage))


# ---------------------------------------------------------------------------
# principal subspace
# ---------------------------------------------------------------------------

def pca_subspace(features, dim):
    """Mean and an orthonormal (d, dim) basis of the top principal directions."""
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    if not 1 <= dim <= d:
        raise InvalidParameter(f"dim must be in [1, {d}], got {dim}")
    if n < dim + 1:
        raise InvalidParameter(f"need at least {dim + 1} samples, got {n}")
    mean = X.mean(0)
    cov = (X - mean).T @ (X - mean) / n
    _, vecs = np.linalg.eigh(cov)
    basis = vecs[:, ::-1][:, :dim]
    # Gram-Schmidt cleanup keeps orthonormality at 1e-15 even for clustered eigenvalues
    basis, _ = np.linalg.qr(basis)
    return mean, basis
