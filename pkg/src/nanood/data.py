"""Synthetic ID/OOD generators and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidParameter, ParseError

ROLES = ("id_train", "id_test", "ood", "id")
OOD_KINDS = ("uniform_box", "shifted_gaussian", "scaled_gaussian", "interpolated")


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    features: np.ndarray
    labels: np.ndarray | None = None
    role: str = "id"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        if X.ndim != 2:
            raise InvalidParameter("features must be a 2-D array")
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise InvalidParameter("need exactly one label per sample")
            if y.size and y.min() < 0:
                raise InvalidParameter("labels must be non-negative")
            object.__setattr__(self, "labels", y)
        if self.role not in ROLES:
            raise InvalidParameter(f"unknown dataset role {self.role!r}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return 0 if self.labels is None or not len(self.labels) else int(self.labels.max()) + 1


def gen_blobs(K, d, n_per_class, spread, separation, rng, name="blobs"):
    """Isotropic Gaussian classes whose means sit on a sphere of radius ``separation``."""
    if K < 1 or d < 2 or n_per_class < 1 or spread < 0 or separation < 0:
        raise InvalidParameter("gen_blobs needs K >= 1, d >= 2, n_per_class >= 1 and "
                               "non-negative spread/separation")
    dirs = rng.standard_normal((K, d))
    means = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    X = np.concatenate([m + spread * rng.standard_normal((n_per_class, d)) for m in means])
    y = np.repeat(np.arange(K), n_per_class)
    meta = {"kind": "blobs", "K": K, "d": d, "n_per_class": n_per_class,
            "spread": spread, "separation": separation}
    return Dataset(name, X, y, "id", meta)


def split(dataset: Dataset, rng, train_fraction=0.8):
    """Stratified, disjoint and exhaustive train/test split."""
    if not 0 < train_fraction < 1:
        raise InvalidParameter("train_fraction must lie in (0, 1)")
    n = len(dataset)
    groups = ([np.arange(n)] if dataset.labels is None
              else [np.flatnonzero(dataset.labels == c) for c in np.unique(dataset.labels)])
    tr, te = [], []
    for idx in groups:
        idx = rng.permutation(idx)
        cut = int(round(train_fraction * len(idx)))
        tr.append(idx[:cut])
        te.append(idx[cut:])
    tr = np.sort(np.concatenate(tr))
    te = np.sort(np.concatenate(te))

    def take(idx, role):
        y = None if dataset.labels is None else dataset.labels[idx]
        return Dataset(f"{dataset.name}_{role}", dataset.features[idx], y, role, dict(dataset.meta))

    return take(tr, "id_train"), take(te, "id_test")


def _class_stats(reference: Dataset):
    X = reference.features
    if reference.labels is None:
        groups = [X]
    else:
        groups = [X[reference.labels == c] for c in np.unique(reference.labels)]
    means = np.stack([g.mean(0) for g in groups])
    resid = np.concatenate([g - g.mean(0) for g in groups])
    spread = float(np.sqrt(np.mean(np.square(resid))))
    return means, spread, groups


def gen_ood(kind, reference: Dataset, n, rng, variance_factor=9.0, shift=4.0,
            box_scale=1.5, name=None):
    """Draw ``n`` OOD samples of family ``kind`` relative to ``reference``.

    uniform_box      uniform over the reference bounding box scaled by ``box_scale``
    shifted_gaussian class means moved ``shift`` spreads in a random direction
    scaled_gaussian  reference class means, covariance times ``variance_factor``
    interpolated     convex mixes of two ID points from different classes
    """
    if len(reference) == 0:
        raise InvalidParameter("reference dataset is empty")
    if kind not in OOD_KINDS:
        raise InvalidParameter(f"unknown OOD family {kind!r}")
    X = reference.features
    d = X.shape[1]
    means, spread, groups = _class_stats(reference)
    K = len(means)
    params = {}
    if kind == "uniform_box":
        lo, hi = X.min(0), X.max(0)
        center, half = (lo + hi) / 2, (hi - lo) / 2 * box_scale
        out = center + half * rng.uniform(-1.0, 1.0, size=(n, d))
        params = {"box_scale": box_scale}
    elif kind == "shifted_gaussian":
        dirs = rng.standard_normal((K, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        shifted = means + shift * spread * dirs
        comp = rng.integers(K, size=n)
        out = shifted[comp] + spread * rng.standard_normal((n, d))
        params = {"shift": shift}
    elif kind == "scaled_gaussian":
        comp = rng.integers(K, size=n)
        out = means[comp] + math.sqrt(variance_factor) * spread * rng.standard_normal((n, d))
        params = {"variance_factor": variance_factor}
    else:
        lam = rng.uniform(0.25, 0.75, size=(n, 1))
        if K >= 2:
            ca = rng.integers(K, size=n)
            cb = (ca + rng.integers(1, K, size=n)) % K
            pa = np.array([groups[c][rng.integers(len(groups[c]))] for c in ca])
            pb = np.array([groups[c][rng.integers(len(groups[c]))] for c in cb])
        else:
            ia = rng.integers(len(X), size=n)
            ib = (ia + rng.integers(1, max(len(X), 2), size=n)) % len(X)
            pa, pb = X[ia], X[ib]
        out = lam * pa + (1.0 - lam) * pb
    meta = {"kind": kind, "n": n, **params}
    return Dataset(name or kind, out, None, "ood", meta)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def save_csv(dataset: Dataset, path):
    path = Path(path)
    d = dataset.dim
    header = [f"f{i}" for i in range(d)]
    if dataset.labels is not None:
        header.append("label")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(dataset.features):
            cells = [repr(float(v)) for v in row]
            if dataset.labels is not None:
                cells.append(str(int(dataset.labels[i])))
            w.writerow(cells)


def load_csv(path, role="id", name=None) -> Dataset:
    """Parse ``f0,...,f{d-1}[,label]`` rows; errors carry the 1-based line number."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("missing header row", path, 1)
    header = [h.strip() for h in rows[0]]
    has_label = bool(header) and header[-1] == "label"
    feats = header[:-1] if has_label else header
    if feats != [f"f{i}" for i in range(len(feats))]:
        raise ParseError("header must read f0,...,f{d-1}[,label]", path, 1)
    d = len(feats)
    width = d + int(has_label)
    X = np.empty((len(rows) - 1, d))
    y = np.empty(len(rows) - 1, dtype=np.int64) if has_label else None
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", path, line)
        try:
            X[i] = [float(c) for c in row[:d]]
        except ValueError as exc:
            raise ParseError(f"non-numeric cell: {exc}", path, line) from exc
        if not np.all(np.isfinite(X[i])):
            raise ParseError("non-finite value", path, line)
        if has_label:
            try:
                y[i] = int(row[d])
            except ValueError as exc:
                raise ParseError(f"label must be an integer: {row[d]!r}", path, line) from exc
    if X.shape[0] == 0:
        X = X.reshape(0, d)
    return Dataset(name or path.stem, X, y, role)


def write_manifest(path, dataset: Dataset, seed, kind=None, params=None):
    doc = {
        "name": dataset.name,
        "kind": kind or dataset.meta.get("kind", "csv"),
        "params": params if params is not None else
        {k: v for k, v in dataset.meta.items() if k != "kind"},
        "seed": seed,
        "n": len(dataset),
        "d": dataset.dim,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def with_role(dataset: Dataset, role: str) -> Dataset:
    return replace(dataset, role=role)
