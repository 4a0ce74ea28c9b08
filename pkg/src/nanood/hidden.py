"""Hidden classifiers: the input-dependent linear map from a hidden layer to the logits.

For a bias-free network the inner-product logit factors through any hidden
layer l as ``psi(x) = C^(l)(x) a^(l)``, where the coefficient matrix is built
from the weights above l and the gates ``D^(j) = diag(sigma(z_j) / z_j)``.
Binarising C gives the hidden classifier ``psi_bar = sign(C) a``. With biases
the identity gains an additive term ``gamma(l, x)``.

All functions accept a single-sample trace (1-D arrays) or a batch trace.
For a batch, C has shape (n, K, d_l), except at the last hidden layer where
it does not depend on the input and stays (K, d_L).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .net import ForwardTrace, MlpModel, activation_ratio, forward
from .numcore import lp_norm, sign_vec, softmax

NORM_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class HiddenClassifier:
    layer: int
    C: np.ndarray
    B: np.ndarray
    gamma: np.ndarray | None
    trace: ForwardTrace
    pre_activation: bool = False

    @property
    def shared(self):
        """True when C is the same for every sample in the trace."""
        return self.C.ndim == 2

    def features(self):
        return self.trace.z(self.layer) if self.pre_activation else self.trace.a(self.layer)


def _descend(model: MlpModel, trace: ForwardTrace, l: int, ratio=None):
    """Return (C^(l), gamma, D^(l)-gated C-hat^(l) or None)."""
    L = model.depth
    gate = ratio or (lambda z: activation_ratio(z, model.activation))
    M = model.output_weight().T                      # C^(L): (K, d_L)
    gamma = None
    for j in range(L, l, -1):
        C_hat = M * gate(trace.z(j))[..., None, :]   # C-hat^(j)
        if model.biases is not None:
            term = C_hat @ model.biases[j - 1]
            gamma = term if gamma is None else gamma + term
        M = C_hat @ model.weights[j - 1].T           # C^(j-1)
    if model.biases is not None and gamma is None:
        gamma = np.zeros(trace.inner_logits.shape)
    return M, gamma


def coefficient_matrix(model: MlpModel, trace: ForwardTrace, l: int, ratio=None):
    """Hidden classifier over a^(l), 0 <= l <= L.

    ``ratio`` overrides the gate function sigma(z)/z; it exists only to let
    the verification suite inject faults.
    """
    if not 0 <= l <= model.depth:
        raise InvalidParameter(f"layer must lie in [0, {model.depth}], got {l}")
    C, gamma = _descend(model, trace, l, ratio)
    return HiddenClassifier(l, C, sign_vec(C), gamma, trace, False)


def pre_activation_classifier(model: MlpModel, trace: ForwardTrace, l: int, ratio=None):
    """Hidden classifier over z^(l), 1 <= l <= L: C-hat^(l) = C^(l) D^(l)."""
    if not 1 <= l <= model.depth:
        raise InvalidParameter(f"pre-activation layer must lie in [1, {model.depth}], got {l}")
    gate = ratio or (lambda z: activation_ratio(z, model.activation))
    C, gamma = _descend(model, trace, l, ratio)
    C_hat = C * gate(trace.z(l))[..., None, :]
    return HiddenClassifier(l, C_hat, sign_vec(C_hat), gamma, trace, True)


def _apply(M, v):
    if M.ndim == 2:
        return v @ M.T
    return np.einsum("...kd,...d->...k", M, v)


def linear_logits(hc: HiddenClassifier):
    """C f (+ gamma); equals the network's inner-product logits."""
    out = _apply(hc.C, hc.features())
    return out if hc.gamma is None else out + hc.gamma


def hidden_logits(hc: HiddenClassifier, trace: ForwardTrace):
    """psi_bar = B f for the trace the classifier was computed from."""
    if trace is not hc.trace:
        raise InvalidParameter("hidden classifier was computed from a different trace")
    return _apply(hc.B, hc.features())


def approx_error(trace: ForwardTrace, hc: HiddenClassifier, k):
    """(||f||_1 - psi_bar_k, ||f||_inf * ||sign(f) - b_k||_1) for feature f.

    ``k`` is a class index, or an index array with one entry per sample.
    """
    if trace is not hc.trace:
        raise InvalidParameter("hidden classifier was computed from a different trace")
    f = hc.features()
    if f.ndim == 1:
        b_k = hc.B[k]
    else:
        rows = np.arange(f.shape[0])
        k = np.broadcast_to(np.asarray(k), rows.shape)
        b_k = hc.B[k] if hc.shared else hc.B[rows, k]
    # sum of |f_i| - b_ki f_i term by term: each term is >= 0, so rounding
    # cannot push the total below zero and aligned samples give exactly 0
    error = (np.abs(f) - b_k * f).sum(-1)
    bound = lp_norm(f, np.inf) * lp_norm(sign_vec(f) - b_k, 1)
    return error, bound


@dataclass
class HiddenDiagnostics:
    layer: int
    hidden_accuracy: float
    mean_prediction_entropy: float
    mean_sign_difference_target: float
    mean_normalized_error_target: float
    mean_normalized_error_nontarget: float

    def as_row(self):
        return [self.layer, self.hidden_accuracy, self.mean_prediction_entropy,
                self.mean_sign_difference_target, self.mean_normalized_error_target,
                self.mean_normalized_error_nontarget]


def slice_trace(trace: ForwardTrace, idx):
    return ForwardTrace(trace.x[idx], tuple(z[idx] for z in trace.pre),
                        tuple(a[idx] for a in trace.post), trace.embedding[idx],
                        trace.inner_logits[idx], trace.logits[idx])


def hidden_diagnostics(model: MlpModel, features, labels, l=None, max_elems=4_000_000):
    """Accuracy, confidence and alignment statistics of the layer-l hidden classifier.

    Normalized errors are (||a||_1 - psi_bar_k) / max(||a||_1, 1e-12); the
    non-target value averages over every k != y.
    """
    l = model.depth if l is None else l
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    K = model.num_classes
    trace = forward(model, X)
    d = model.dims[l]
    chunk = n if l == model.depth else max(1, max_elems // max(K * d, 1))

    correct = 0
    ent_sum = sign_sum = err_t_sum = err_nt_sum = 0.0
    for start in range(0, n, chunk):
        idx = slice(start, start + chunk)
        tr = slice_trace(trace, idx)
        yb = y[idx]
        hc = coefficient_matrix(model, tr, l)
        psi_bar = hidden_logits(hc, tr)
        a = tr.a(l)
        correct += int(np.count_nonzero(psi_bar.argmax(1) == yb))
        p = softmax(psi_bar)
        ent_sum += float(-(p * np.log(np.where(p > 0, p, 1.0))).sum())
        rows = np.arange(len(yb))
        b_y = hc.B[yb] if hc.shared else hc.B[rows, yb]
        sign_sum += float(lp_norm(sign_vec(a) - b_y, 1).sum())
        l1 = np.maximum(lp_norm(a, 1), NORM_FLOOR)
        err = (lp_norm(a, 1)[:, None] - psi_bar) / l1[:, None]
        err_t = err[rows, yb]
        err_t_sum += float(err_t.sum())
        if K > 1:
            err_nt_sum += float(((err.sum(1) - err_t) / (K - 1)).sum())
    return HiddenDiagnostics(l, correct / n, ent_sum / n, sign_sum / n, err_t_sum / n,
                             err_nt_sum / n)
