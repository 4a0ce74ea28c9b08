"""Numerical checks of the hidden-classifier identity and alignment bound on random nets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hidden import approx_error, coefficient_matrix, linear_logits, pre_activation_classifier
from .net import Activation, build_mlp, forward
from .numcore import lp_norm, make_rng, sign_vec

IDENTITY_TOL = 1e-9
BOUND_TOL = 1e-9
EQUALITY_TOL = 1e-12
DEPTHS = (2, 3, 5)
ACTIVATIONS = ("relu", "leaky_relu", "gelu")


@dataclass
class CaseResult:
    depth: int
    activation: str
    bias: bool
    max_identity_residual: float = 0.0
    max_bound_violation: float = -np.inf
    min_lower_gap: float = np.inf
    max_equality_gap: float = 0.0
    equality_cases: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures

    def as_dict(self):
        return {"depth": self.depth, "activation": self.activation, "bias": self.bias,
                "max_identity_residual": self.max_identity_residual,
                "max_bound_violation": self.max_bound_violation,
                "min_lower_gap": self.min_lower_gap,
                "max_equality_gap": self.max_equality_gap,
                "equality_cases": self.equality_cases, "ok": self.ok,
                "failures": self.failures}


@dataclass
class VerificationReport:
    cases: list

    @property
    def ok(self):
        return all(c.ok for c in self.cases)

    @property
    def max_identity_residual(self):
        return max(c.max_identity_residual for c in self.cases)

    @property
    def max_bound_violation(self):
        return max(c.max_bound_violation for c in self.cases)

    def failing(self):
        return [(c.depth, c.activation, c.bias) for c in self.cases if not c.ok]

    def as_dict(self):
        return {"ok": self.ok, "max_identity_residual": self.max_identity_residual,
                "max_bound_violation": self.max_bound_violation,
                "cases": [c.as_dict() for c in self.cases]}


def _residual(psi, approx):
    return float(np.max(np.abs(psi - approx) / (1.0 + np.abs(psi))))


def check_case(depth, activation, bias, seed=0, n_samples=100, d_in=8, width=12,
               num_classes=5, fault=None):
    """Identity and bound checks for one random net.

    ``fault`` is an optional replacement for the gate function sigma(z)/z.
    """
    act = Activation.parse(activation)
    rng = make_rng(seed, "verify", depth, act.kind, int(bias))
    model = build_mlp([d_in] + [width] * depth, act, bias, num_classes, 0.1, rng,
                      input_norm=False)
    if bias:
        # non-zero biases so the offset term is exercised
        params = model.params()
        params.update({f"b{i + 1}": 0.3 * rng.standard_normal(width) for i in range(depth)})
        model = model.with_params(params)
    X = 2.0 * rng.standard_normal((n_samples, d_in))
    trace = forward(model, X)
    psi = trace.inner_logits
    res = CaseResult(depth, act.kind, bias)

    for l in range(depth + 1):
        hc = coefficient_matrix(model, trace, l, ratio=fault)
        r = _residual(psi, linear_logits(hc))
        res.max_identity_residual = max(res.max_identity_residual, r)
        if not r < IDENTITY_TOL:
            res.failures.append(f"identity at layer {l}: residual {r:.3e}")

        a = hc.features()
        for k in range(num_classes):
            err, bound = approx_error(trace, hc, k)
            res.min_lower_gap = min(res.min_lower_gap, float(err.min()))
            res.max_bound_violation = max(res.max_bound_violation, float((err - bound).max()))
            b_k = hc.B[k] if hc.shared else hc.B[:, k]
            match = np.all(sign_vec(a) == b_k, axis=-1)
            if np.any(match):
                res.equality_cases += int(match.sum())
                res.max_equality_gap = max(res.max_equality_gap, float(np.abs(err[match]).max()))
        if res.min_lower_gap < -BOUND_TOL:
            res.failures.append(f"lower bound at layer {l}: {res.min_lower_gap:.3e}")
        if res.max_bound_violation > BOUND_TOL:
            res.failures.append(f"upper bound at layer {l}: excess {res.max_bound_violation:.3e}")
        if res.max_equality_gap > EQUALITY_TOL:
            res.failures.append(f"equality at layer {l}: gap {res.max_equality_gap:.3e}")

    for l in range(1, depth + 1):
        hc = pre_activation_classifier(model, trace, l, ratio=fault)
        r = _residual(psi, linear_logits(hc))
        res.max_identity_residual = max(res.max_identity_residual, r)
        if not r < IDENTITY_TOL:
            res.failures.append(f"pre-activation identity at layer {l}: residual {r:.3e}")
    return res


def _wrong_gate(z):
    # deliberately treats every unit as a ReLU gate
    return (np.asarray(z) > 0).astype(np.float64)


def run_verification(seed=0, n_samples=100, depths=DEPTHS, activations=ACTIVATIONS,
                     inject_fault=None, width=12):
    """Sweep depth x activation x bias. ``inject_fault`` names an activation
    kind whose gate is replaced by a wrong one."""
    cases = []
    for depth in depths:
        for kind in activations:
            fault = _wrong_gate if inject_fault and Activation.parse(inject_fault).kind == \
                Activation.parse(kind).kind else None
            for bias in (False, True):
                cases.append(check_case(depth, kind, bias, seed, n_samples, width=width,
                                        fault=fault))
    return VerificationReport(cases)


def holder_chain_violation(v):
    """Largest excess in ||v||_inf <= ||v||_2 <= ||v||_1 <= sqrt(d) ||v||_2 <= d ||v||_inf."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    d = v.shape[-1]
    inf, two, one = lp_norm(v, np.inf), lp_norm(v, 2), lp_norm(v, 1)
    excess = np.stack([inf - two, two - one, one - np.sqrt(d) * two, np.sqrt(d) * two - d * inf])
    scale = np.maximum(1.0, d * inf)
    return float((excess / scale).max())
