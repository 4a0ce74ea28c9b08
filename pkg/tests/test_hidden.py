import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nanood.errors import InvalidParameter
from nanood.hidden import (
    approx_error,
    coefficient_matrix,
    hidden_diagnostics,
    hidden_logits,
    linear_logits,
    pre_activation_classifier,
)
from nanood.net import MlpModel, activation_ratio, build_mlp, forward
from nanood.numcore import lp_norm, make_rng, sign_vec


def _toy(protos=((1.0, 1.0), (-1.0, -1.0))):
    return MlpModel((np.eye(2),), np.array(protos), input_norm=False)


def _random(depth, act, bias, seed=0, width=9, K=4):
    m = build_mlp([6] + [width] * depth, act, bias, K, 0.1, make_rng(seed, "h"), input_norm=False)
    if bias:
        p = m.params()
        r = make_rng(seed, "hb")
        p.update({k: 0.3 * r.standard_normal(v.shape) for k, v in p.items() if k.startswith("b")})
        m = m.with_params(p)
    return m


def test_last_layer_is_output_weight():
    m = _random(3, "relu", False)
    tr = forward(m, make_rng(1).standard_normal((5, 6)))
    hc = coefficient_matrix(m, tr, 3)
    assert np.array_equal(hc.C, m.output_weight().T) and hc.shared


def test_pre_activation_last_layer():
    m = _random(2, "gelu", False)
    tr = forward(m, make_rng(1).standard_normal(6))
    hc = pre_activation_classifier(m, tr, 2)
    D = activation_ratio(tr.z(2), m.activation)
    assert np.array_equal(hc.C, m.output_weight().T * D[None, :])


def test_layer_range_checked():
    m = _random(2, "relu", False)
    tr = forward(m, np.ones(6))
    with pytest.raises(InvalidParameter):
        coefficient_matrix(m, tr, 3)
    with pytest.raises(InvalidParameter):
        pre_activation_classifier(m, tr, 0)


def test_hidden_logits_examples():
    m = _toy()
    tr = forward(m, np.array([1.0, 2.0]))
    hc = coefficient_matrix(m, tr, 1)
    assert hidden_logits(hc, tr).tolist() == [3.0, -3.0]
    assert approx_error(tr, hc, 1) == (6.0, 8.0)
    assert approx_error(tr, hc, 0) == (0.0, 0.0)


def test_zero_feature():
    m = _toy()
    tr = forward(m, np.array([-1.0, -2.0]))
    hc = coefficient_matrix(m, tr, 1)
    assert hidden_logits(hc, tr).tolist() == [0.0, 0.0]
    assert approx_error(tr, hc, 0) == (0.0, 0.0)


def test_trace_mismatch_rejected():
    m = _toy()
    t1, t2 = forward(m, np.ones(2)), forward(m, np.ones(2))
    with pytest.raises(InvalidParameter):
        hidden_logits(coefficient_matrix(m, t1, 1), t2)


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "gelu"])
@pytest.mark.parametrize("bias", [False, True])
@pytest.mark.parametrize("depth", [2, 3, 5])
def test_decomposition_identity(depth, act, bias):
    m = _random(depth, act, bias, seed=depth)
    tr = forward(m, 2 * make_rng(depth, "x").standard_normal((40, 6)))
    psi = tr.inner_logits
    for l in range(depth + 1):
        r = np.abs(psi - linear_logits(coefficient_matrix(m, tr, l))) / (1 + np.abs(psi))
        assert r.max() < 1e-9, l
    for l in range(1, depth + 1):
        r = np.abs(psi - linear_logits(pre_activation_classifier(m, tr, l))) / (1 + np.abs(psi))
        assert r.max() < 1e-9, l


def test_relu_pre_activation_matches_post_exactly():
    m = _random(3, "relu", False, seed=9)
    tr = forward(m, make_rng(2).standard_normal((20, 6)))
    for l in (1, 2, 3):
        a = linear_logits(coefficient_matrix(m, tr, l))
        z = linear_logits(pre_activation_classifier(m, tr, l))
        assert np.abs(a - z).max() <= 1e-12 * (1 + np.abs(a).max())


@given(st.integers(0, 10**6), st.integers(2, 4), st.sampled_from(["relu", "leaky_relu", "gelu"]),
       st.booleans())
def test_alignment_bound(seed, depth, act, bias):
    m = _random(depth, act, bias, seed=seed, width=7, K=3)
    tr = forward(m, 2 * make_rng(seed, "x").standard_normal((10, 6)))
    for l in range(1, depth + 1):
        hc = coefficient_matrix(m, tr, l)
        for k in range(3):
            err, bound = approx_error(tr, hc, np.full(10, k))
            direct = lp_norm(hc.features(), 1) - hidden_logits(hc, tr)[:, k]
            assert np.allclose(err, direct, rtol=1e-12, atol=1e-12)
            assert np.all(err >= 0)
            assert np.all(err <= bound + 1e-9)


def test_aligned_sample_has_zero_error():
    # prototype sign pattern matches the activation pattern of the input
    m = _toy(((1.0, 1.0), (1.0, -1.0)))
    tr = forward(m, np.array([[0.5, 3.0]]))
    hc = coefficient_matrix(m, tr, 1)
    assert np.array_equal(sign_vec(tr.a(1)[0]), hc.B[0])
    assert hidden_logits(hc, tr)[0, 0] == lp_norm(tr.a(1)[0], 1)
    d = hidden_diagnostics(m, tr.x, [0])
    assert d.mean_sign_difference_target == 0 and d.mean_normalized_error_target == 0
    assert d.hidden_accuracy == 1.0


def test_untrained_hidden_accuracy_near_chance():
    accs = []
    for seed in range(8):
        r = make_rng(seed, "chance")
        m = build_mlp([16, 64, 64], "relu", False, 10, 0.1, make_rng(seed, "net"))
        X = r.standard_normal((500, 16))
        y = np.repeat(np.arange(10), 50)
        accs.append(hidden_diagnostics(m, X, y).hidden_accuracy)
    assert abs(np.mean(accs) - 0.1) <= 0.05


def test_diagnostics_chunking_matches_single_pass():
    m = _random(3, "gelu", True, seed=3)
    X = make_rng(5).standard_normal((30, 6))
    y = make_rng(6).integers(0, 4, 30)
    full = hidden_diagnostics(m, X, y, l=1)
    chunked = hidden_diagnostics(m, X, y, l=1, max_elems=4 * 9 * 7)
    assert np.allclose(full.as_row(), chunked.as_row(), rtol=1e-12)
