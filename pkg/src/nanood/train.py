"""Labeling schemes and the SGD training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import InvalidParameter, NumericalFailure
from .net import MlpModel, backward, build_mlp
from .numcore import make_rng

MAX_INSTANCE_CLASSES = 2048


class LabelScheme(str, Enum):
    """How training labels are assigned.

    S  ground-truth classes
    I  one class per sample, no augmentation
    Is one class per sample, with augmentation
    R  uniform random binary labels, fixed once drawn
    O  every sample in a single class
    """

    S = "S"
    I = "I"  # noqa: E741
    IS = "Is"
    R = "R"
    O = "O"  # noqa: E741

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value == value:
                return member
        raise InvalidParameter(f"unknown labeling scheme {value!r}; expected one of "
                               f"{[m.value for m in cls]}")

    @property
    def is_instance(self):
        return self in (LabelScheme.I, LabelScheme.IS)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr0: float = 0.06
    momentum: float = 0.9
    weight_decay: float = 5e-4
    scheme: LabelScheme = LabelScheme.S
    augment_noise_sigma: float = 0.0
    augment_dropout: float = 0.1
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", LabelScheme.parse(self.scheme))
        if not self.lr0 > 0:
            raise InvalidParameter("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidParameter("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidParameter("batch_size and epochs must be >= 1")
        if self.weight_decay < 0 or self.augment_noise_sigma < 0:
            raise InvalidParameter("weight_decay and augment_noise_sigma must be >= 0")
        if not 0 <= self.augment_dropout < 1:
            raise InvalidParameter("augment_dropout must lie in [0, 1)")
        if self.checkpoint_every < 0:
            raise InvalidParameter("checkpoint_every must be >= 0")


def scheme_num_classes(scheme, dataset: Dataset):
    scheme = LabelScheme.parse(scheme)
    if scheme is LabelScheme.S:
        if dataset.labels is None:
            raise InvalidParameter("scheme S needs a labeled dataset")
        return dataset.num_classes
    if scheme.is_instance:
        return len(dataset)
    return 2 if scheme is LabelScheme.R else 1


def assign_labels(dataset: Dataset, scheme, rng) -> Dataset:
    """Return ``dataset`` relabeled under ``scheme``; ground truth kept in ``meta``."""
    scheme = LabelScheme.parse(scheme)
    n = len(dataset)
    if n == 0:
        raise InvalidParameter("cannot label an empty dataset")
    if scheme is LabelScheme.S:
        if dataset.labels is None:
            raise InvalidParameter("scheme S needs a labeled dataset")
        y = dataset.labels.copy()
    elif scheme.is_instance:
        if n > MAX_INSTANCE_CLASSES:
            raise InvalidParameter(f"instance schemes support at most {MAX_INSTANCE_CLASSES} "
                                   f"samples, got {n}")
        y = np.arange(n)
    elif scheme is LabelScheme.R:
        y = rng.integers(0, 2, size=n)
    else:
        y = np.zeros(n, dtype=np.int64)
    meta = dict(dataset.meta, scheme=scheme.value)
    return replace(dataset, labels=y, meta=meta)


def augment(x, sigma, rng, dropout=0.1):
    """Gaussian jitter of scale ``sigma`` then independent coordinate dropout."""
    if sigma < 0:
        raise InvalidParameter("sigma must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    out = x + sigma * rng.standard_normal(x.shape) if sigma > 0 else x.copy()
    if dropout > 0:
        out[rng.random(x.shape) < dropout] = 0.0
    return out


def cosine_lr(t, total, lr0):
    if total <= 0:
        raise InvalidParameter("total must be positive")
    if not 0 <= t <= total:
        raise InvalidParameter(f"t must lie in [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    lr: float


@dataclass
class TrainResult:
    model: MlpModel
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # [(epoch, MlpModel)]


def init_model(dataset: Dataset, config: TrainConfig, hidden_dims, activation="relu",
               use_bias=False, temperature=0.1, embed_dim=None, input_norm=True):
    """Build a fresh model sized for ``dataset`` under the configured scheme."""
    K = scheme_num_classes(config.scheme, dataset)
    rng = make_rng(config.seed, "init")
    return build_mlp([dataset.dim, *hidden_dims], activation, use_bias, K, temperature,
                     rng, embed_dim=embed_dim, input_norm=input_norm)


def train(model: MlpModel, dataset: Dataset, config: TrainConfig, on_checkpoint=None):
    """Minimise cross-entropy over cosine logits with SGD + momentum.

    Weight decay is decoupled: parameters shrink by ``lr * weight_decay``
    each step independently of the gradient (biases are not decayed).
    Checkpoints are kept at epoch 0, every ``checkpoint_every`` epochs and at
    the end; ``on_checkpoint(epoch, model)`` is called for each.
    """
    if dataset.labels is None:
        raise InvalidParameter("training needs a labeled dataset (see assign_labels)")
    if dataset.labels.max() >= model.num_classes:
        raise InvalidParameter("dataset labels exceed the model's class count")
    X, y = dataset.features, dataset.labels
    n = len(dataset)
    shuffle_rng = make_rng(config.seed, "train", "shuffle")
    aug_rng = make_rng(config.seed, "train", "augment")
    augmenting = config.scheme is LabelScheme.IS

    params = model.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    result = TrainResult(model)

    def checkpoint(epoch, m):
        result.checkpoints.append((epoch, m))
        if on_checkpoint is not None:
            on_checkpoint(epoch, m)

    checkpoint(0, model)
    for t in range(config.epochs):
        lr = cosine_lr(t, config.epochs, config.lr0)
        order = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        current = model
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = X[idx]
            if augmenting:
                xb = augment(xb, config.augment_noise_sigma, aug_rng, config.augment_dropout)
            current = model.with_params(params)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads, tr = backward(current, xb, y[idx], return_trace=True)
            except NumericalFailure as exc:
                raise NumericalFailure(f"training diverged at epoch {t + 1}: {exc}",
                                       epoch=t + 1) from exc
            loss_sum += loss * len(idx)
            for k, g in grads.items():
                v = velocity[k]
                v *= config.momentum
                v += g
                p = params[k]
                if config.weight_decay and not k.startswith("b"):
                    p *= 1.0 - lr * config.weight_decay
                p -= lr * v
            correct += int(np.count_nonzero(tr.logits.argmax(1) == y[idx]))
        model = model.with_params(params)
        result.history.append(EpochRecord(t + 1, loss_sum / n, correct / n, lr))
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise NumericalFailure(f"non-finite parameters at epoch {t + 1}", epoch=t + 1)
        last = t + 1 == config.epochs
        if last or (config.checkpoint_every and (t + 1) % config.checkpoint_every == 0):
            checkpoint(t + 1, model)
    result.model = model
    return result


def write_history_csv(history, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "train_acc", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.loss), repr(r.train_acc), repr(r.lr)])
