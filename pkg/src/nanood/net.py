"""Rectifier MLP with cosine-similarity logits, trace capture and manual backprop.

Shapes follow the column-feature convention ``z^(l) = W^(l)T a^(l-1) + b^(l)``
with each ``W^(l)`` stored as a ``(d_{l-1}, d_l)`` array, so a batch of row
vectors propagates as ``A @ W``. The classification head is

    g = U^T a^(L),    logit_k = (1/T) * cos(w_k, g)

where ``U`` defaults to the identity and ``w_k`` are the class prototypes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import InvalidParameter, NumericalFailure, ParseError
from .numcore import softmax

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
ACTIVATION_KINDS = ("relu", "leaky_relu", "gelu")
MODEL_FORMAT = "nanood-mlp/1"


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise InvalidParameter(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise InvalidParameter(f"leaky slope must lie in (0, 1), got {self.slope}")

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        return z * ndtr(z)

    def derivative(self, z):
        if self.kind == "relu":
            return (z > 0).astype(np.float64)
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        return ndtr(z) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)

    def ratio(self, z):
        return activation_ratio(z, self)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "leaky_relu":
            d["slope"] = self.slope
        return d

    @classmethod
    def parse(cls, spec):
        """Accept an Activation, a dict, or strings like ``"leaky_relu:0.1"``."""
        if isinstance(spec, Activation):
            return spec
        if isinstance(spec, dict):
            return cls(**spec)
        name, _, slope = str(spec).partition(":")
        name = name.strip().lower().replace("-", "_")
        name = {"leakyrelu": "leaky_relu", "leaky": "leaky_relu"}.get(name, name)
        return cls(name, float(slope)) if slope else cls(name)


def activation_ratio(z, kind: Activation):
    """Entrywise sigma(z)/z with the convention ratio = 0 where z == 0.

    For ReLU this is the 0/1 gate, for LeakyReLU the {slope, 1} gate and for
    GeLU the Gaussian CDF.
    """
    z = np.asarray(z, dtype=np.float64)
    if kind.kind == "relu":
        r = (z > 0).astype(np.float64)
    elif kind.kind == "leaky_relu":
        r = np.where(z > 0, 1.0, kind.slope)
    else:
        r = ndtr(z)
    return np.where(z == 0, 0.0, r)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Immutable MLP parameters plus head configuration."""

    weights: tuple
    prototypes: np.ndarray
    activation: Activation = field(default_factory=Activation)
    temperature: float = 0.1
    biases: tuple | None = None
    projection: np.ndarray | None = None
    input_norm: bool = True

    def __post_init__(self):
        if not self.weights:
            raise InvalidParameter("model needs at least one hidden layer")
        if not self.temperature > 0:
            raise InvalidParameter(f"temperature must be positive, got {self.temperature}")
        ws = tuple(_frozen(w) for w in self.weights)
        for i in range(1, len(ws)):
            if ws[i - 1].shape[1] != ws[i].shape[0]:
                raise InvalidParameter(f"layer {i} -> {i + 1} dimension mismatch")
        object.__setattr__(self, "weights", ws)
        if self.biases is not None:
            bs = tuple(_frozen(b) for b in self.biases)
            if len(bs) != len(ws) or any(b.shape != (w.shape[1],) for b, w in zip(bs, ws)):
                raise InvalidParameter("bias shapes do not match layer widths")
            object.__setattr__(self, "biases", bs)
        embed = ws[-1].shape[1]
        if self.projection is not None:
            U = _frozen(self.projection)
            if U.ndim != 2 or U.shape[0] != ws[-1].shape[1]:
                raise InvalidParameter("projection must have shape (d_L, embed_dim)")
            object.__setattr__(self, "projection", U)
            embed = U.shape[1]
        P = _frozen(self.prototypes)
        if P.ndim != 2 or P.shape[1] != embed:
            raise InvalidParameter(f"prototypes must have shape (K, {embed})")
        object.__setattr__(self, "prototypes", P)
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def depth(self):
        """Number of hidden layers L."""
        return len(self.weights)

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_classes(self):
        return self.prototypes.shape[0]

    @property
    def embed_dim(self):
        return self.prototypes.shape[1]

    @property
    def use_bias(self):
        return self.biases is not None

    @cached_property
    def _unit_prototypes(self):
        # (prototype norms (K, 1), unit prototypes (K, e)); parameters never change in place
        norms = np.sqrt(np.square(self.prototypes).sum(1, keepdims=True))
        return norms, normalize_rows(self.prototypes)

    def output_weight(self):
        """W^(L+1) = U W with W the (embed, K) prototype matrix; shape (d_L, K)."""
        W = self.prototypes.T
        return W if self.projection is None else self.projection @ W

    def params(self):
        """Named copies of every trainable array."""
        out = {f"W{i + 1}": w.copy() for i, w in enumerate(self.weights)}
        if self.biases is not None:
            out.update({f"b{i + 1}": b.copy() for i, b in enumerate(self.biases)})
        if self.projection is not None:
            out["projection"] = self.projection.copy()
        out["prototypes"] = self.prototypes.copy()
        return out

    def with_params(self, params):
        L = self.depth
        return replace(
            self,
            weights=tuple(params[f"W{i + 1}"] for i in range(L)),
            biases=None if self.biases is None else tuple(params[f"b{i + 1}"] for i in range(L)),
            projection=None if self.projection is None else params["projection"],
            prototypes=params["prototypes"],
        )


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Every intermediate quantity of one forward pass.

    Arrays are 1-D for a single input or 2-D (n, .) for a batch. ``post[0]``
    is the network input a^(0) after optional l2 normalisation and
    ``pre[l - 1]`` is z^(l).
    """

    x: np.ndarray
    pre: tuple
    post: tuple
    embedding: np.ndarray
    inner_logits: np.ndarray
    logits: np.ndarray

    def z(self, l):
        if not 1 <= l <= len(self.pre):
            raise InvalidParameter(f"pre-activation layer must be in [1, {len(self.pre)}]")
        return self.pre[l - 1]

    def a(self, l):
        if not 0 <= l <= len(self.pre):
            raise InvalidParameter(f"layer must be in [0, {len(self.pre)}]")
        return self.post[l]

    @property
    def last_hidden(self):
        return self.post[-1]

    def __len__(self):
        return 1 if self.x.ndim == 1 else self.x.shape[0]


def normalize_rows(x):
    x = np.asarray(x, dtype=np.float64)
    n = np.sqrt(np.square(x).sum(-1, keepdims=True))
    return np.divide(x, n, out=np.zeros_like(x), where=n != 0)


def head(model: MlpModel, a_last, with_inner=True):
    """(embedding, inner-product logits, cosine logits) from a^(L).

    ``with_inner=False`` skips the inner-product logits (returned as None);
    training only needs the cosine form.
    """
    g = a_last if model.projection is None else a_last @ model.projection
    inner = g @ model.prototypes.T if with_inner else None
    g_hat = normalize_rows(g)
    logits = (g_hat @ model._unit_prototypes[1].T) / model.temperature
    return g, inner, logits


def forward(model: MlpModel, x, with_inner=True) -> ForwardTrace:
    """Run the network on one input (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dims[0] or x.ndim not in (1, 2):
        raise InvalidParameter(f"input dimension {x.shape} does not match {model.dims[0]}")
    a = normalize_rows(x) if model.input_norm else x.copy()
    pre, post = [], [a]
    for i, W in enumerate(model.weights):
        z = a @ W
        if model.biases is not None:
            z = z + model.biases[i]
        a = model.activation(z)
        pre.append(z)
        post.append(a)
    g, inner, logits = head(model, a, with_inner)
    return ForwardTrace(x, tuple(pre), tuple(post), g, inner, logits)


def build_mlp(layer_dims, activation="relu", use_bias=False, num_classes=2,
              temperature=0.1, rng=None, embed_dim=None, input_norm=True):
    """Initialise an MLP.

    ``layer_dims`` lists the input width followed by each hidden width.
    Weights are uniform on +-sqrt(6 / fan_in), biases zero and prototypes
    random unit vectors. A learnable projection U is added only when
    ``embed_dim`` is given.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidParameter(f"need an input and at least one hidden layer, got {layer_dims}")
    if num_classes < 1:
        raise InvalidParameter("num_classes must be >= 1")
    if not temperature > 0:
        raise InvalidParameter(f"temperature must be positive, got {temperature}")
    if rng is None:
        raise InvalidParameter("build_mlp needs an explicit rng")

    def uniform(fan_in, fan_out):
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    weights = [uniform(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]] if use_bias else None
    projection = None
    e = dims[-1]
    if embed_dim is not None:
        projection = uniform(dims[-1], int(embed_dim))
        e = int(embed_dim)
    protos = normalize_rows(rng.standard_normal((num_classes, e)))
    return MlpModel(tuple(weights), protos, Activation.parse(activation), temperature,
                    None if biases is None else tuple(biases), projection, input_norm)


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def cross_entropy(logits, labels):
    z = logits - logits.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def backward(model: MlpModel, X, y, loss_kind="cross_entropy", return_trace=False):
    """Mean loss over the batch and its exact gradient for every parameter.

    Returns ``(loss, grads)`` where ``grads`` is keyed like ``model.params()``;
    with ``return_trace`` the forward trace is appended as a third element
    (its ``inner_logits`` are None).
    """
    if loss_kind != "cross_entropy":
        raise InvalidParameter(f"unsupported loss {loss_kind!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0 or y.shape != (n,):
        raise InvalidParameter("batch must be non-empty with one label per row")
    K = model.num_classes
    if y.min() < 0 or y.max() >= K:
        raise InvalidParameter(f"labels must lie in [0, {K})")

    tr = forward(model, X, with_inner=False)
    loss = cross_entropy(tr.logits, y)
    if not np.isfinite(loss):
        raise NumericalFailure("non-finite loss")

    dlogits = softmax(tr.logits)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dS = dlogits / model.temperature          # d loss / d cosine

    pnorm, P_hat = model._unit_prototypes
    g = tr.embedding
    gnorm = np.sqrt(np.square(g).sum(1, keepdims=True))
    g_hat = np.divide(g, gnorm, out=np.zeros_like(g), where=gnorm != 0)

    dP_hat = dS.T @ g_hat
    dP = (dP_hat - P_hat * (dP_hat * P_hat).sum(1, keepdims=True)) / pnorm
    dg_hat = dS @ P_hat
    dg = np.divide(dg_hat - g_hat * (dg_hat * g_hat).sum(1, keepdims=True), gnorm,
                   out=np.zeros_like(g), where=gnorm != 0)

    grads = {"prototypes": dP}
    a_last = tr.post[-1]
    if model.projection is not None:
        grads["projection"] = a_last.T @ dg
        da = dg @ model.projection.T
    else:
        da = dg
    for l in range(model.depth, 0, -1):
        dz = da * model.activation.derivative(tr.pre[l - 1])
        grads[f"W{l}"] = tr.post[l - 1].T @ dz
        if model.biases is not None:
            grads[f"b{l}"] = dz.sum(0)
        if l > 1:
            da = dz @ model.weights[l - 1].T
    if return_trace:
        return loss, grads, tr
    return loss, grads


def loss_value(model: MlpModel, X, y):
    return cross_entropy(forward(model, np.atleast_2d(X)).logits, np.asarray(y))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _flat(a):
    return [float(v) for v in np.asarray(a).ravel()]


def model_to_dict(model: MlpModel):
    d = {
        "format": MODEL_FORMAT,
        "dims": model.dims,
        "activation": model.activation.to_dict(),
        "temperature": model.temperature,
        "input_norm": model.input_norm,
        "use_bias": model.use_bias,
        "weights": [_flat(w) for w in model.weights],
        "biases": None if model.biases is None else [_flat(b) for b in model.biases],
        "projection": None if model.projection is None else {
            "shape": list(model.projection.shape), "data": _flat(model.projection)},
        "prototypes": {"shape": list(model.prototypes.shape), "data": _flat(model.prototypes)},
    }
    return d


def model_from_dict(d):
    try:
        if d.get("format") != MODEL_FORMAT:
            raise ParseError(f"unsupported model format {d.get('format')!r}")
        dims = d["dims"]
        weights = [np.array(w, dtype=np.float64).reshape(dims[i], dims[i + 1])
                   for i, w in enumerate(d["weights"])]
        biases = None
        if d.get("biases") is not None:
            biases = tuple(np.array(b, dtype=np.float64) for b in d["biases"])
        proj = d.get("projection")
        if proj is not None:
            proj = np.array(proj["data"], dtype=np.float64).reshape(proj["shape"])
        pr = d["prototypes"]
        protos = np.array(pr["data"], dtype=np.float64).reshape(pr["shape"])
        return MlpModel(tuple(weights), protos, Activation.parse(d["activation"]),
                        d["temperature"], biases, proj, bool(d.get("input_norm", True)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed model document: {exc}") from exc


def model_to_json(model: MlpModel) -> str:
    # float repr is the shortest string that round-trips bit-exactly
    return json.dumps(model_to_dict(model))


def model_from_json(text: str) -> MlpModel:
    try:
        return model_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc


def save_model(model: MlpModel, path):
    Path(path).write_text(model_to_json(model))


def load_model(path) -> MlpModel:
    try:
        return model_from_json(Path(path).read_text())
    except ParseError as exc:
        raise ParseError(str(exc), path=path) from exc
