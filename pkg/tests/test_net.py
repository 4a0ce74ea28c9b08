import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nanood.errors import InvalidParameter, NumericalFailure, ParseError
from nanood.net import (
    Activation,
    MlpModel,
    activation_ratio,
    backward,
    build_mlp,
    forward,
    loss_value,
    model_from_json,
    model_to_json,
)
from nanood.numcore import make_rng
from scipy.stats import norm


def _net(dims=(4, 8, 8), act="relu", bias=False, K=3, seed=0, embed=None, input_norm=True):
    m = build_mlp(list(dims), act, bias, K, 0.1, make_rng(seed, "net"), embed_dim=embed,
                  input_norm=input_norm)
    if bias:
        p = m.params()
        r = make_rng(seed, "bias")
        p.update({k: 0.3 * r.standard_normal(v.shape) for k, v in p.items() if k.startswith("b")})
        m = m.with_params(p)
    return m


def test_build_shapes():
    m = _net()
    assert [w.shape for w in m.weights] == [(4, 8), (8, 8)]
    assert m.prototypes.shape == (3, 8)
    assert m.depth == 2 and m.num_classes == 3


def test_build_deterministic():
    a, b = _net(seed=5), _net(seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert np.array_equal(a.prototypes, b.prototypes)


@pytest.mark.parametrize("kwargs", [dict(temperature=0), dict(layer_dims=[4]),
                                    dict(layer_dims=[4, 0])])
def test_build_rejects(kwargs):
    args = dict(layer_dims=[4, 8], activation="relu", use_bias=False, num_classes=2,
                temperature=0.1, rng=make_rng(0))
    args.update(kwargs)
    with pytest.raises(InvalidParameter):
        build_mlp(**args)


def test_leaky_slope_range():
    with pytest.raises(InvalidParameter):
        Activation("leaky_relu", 1.5)


def test_forward_identity_weights():
    m = MlpModel((np.eye(2),), np.eye(2), input_norm=False)
    tr = forward(m, np.array([1.0, -1.0]))
    assert tr.a(1).tolist() == [1.0, 0.0]


def test_forward_dimension_mismatch():
    with pytest.raises(InvalidParameter):
        forward(_net(), np.zeros(5))


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "gelu"])
@pytest.mark.parametrize("bias", [False, True])
def test_forward_matches_straight_line_oracle(act, bias):
    m = _net((5, 7, 6, 4), act, bias, K=3, embed=3)
    x = make_rng(1).standard_normal(5)
    # independent scalar-loop evaluation
    a = list(x / np.sqrt(sum(v * v for v in x)))
    for i, W in enumerate(m.weights):
        z = [sum(a[r] * W[r, c] for r in range(len(a))) for c in range(W.shape[1])]
        if bias:
            z = [zc + m.biases[i][c] for c, zc in enumerate(z)]
        if act == "relu":
            a = [max(v, 0.0) for v in z]
        elif act == "leaky_relu":
            a = [v if v > 0 else 0.01 * v for v in z]
        else:
            a = [v * norm.cdf(v) for v in z]
    g = np.array(a) @ m.projection
    cos = [g @ p / (np.linalg.norm(g) * np.linalg.norm(p)) for p in m.prototypes]
    tr = forward(m, x)
    assert np.allclose(tr.a(3), a, rtol=0, atol=1e-14)
    assert np.allclose(tr.logits, np.array(cos) / 0.1, rtol=0, atol=1e-13)


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "gelu"])
def test_trace_consistency_and_bounded_logits(act):
    m = _net((6, 10, 10), act, True, K=4)
    tr = forward(m, 5 * make_rng(2).standard_normal((50, 6)))
    for l in (1, 2):
        assert np.abs(tr.a(l) - m.activation(tr.z(l))).max() <= 1e-14
    assert np.abs(tr.logits).max() <= 1 / m.temperature + 1e-12


def test_forward_bit_identical_on_repeat():
    m = _net()
    x = make_rng(3).standard_normal((9, 4))
    t1, t2 = forward(m, x), forward(m, x)
    assert all(np.array_equal(p, q) for p, q in zip(t1.post, t2.post))


def test_zero_embedding_gives_zero_logits():
    m = MlpModel((-np.eye(2),), np.eye(2), input_norm=False)
    tr = forward(m, np.array([1.0, 1.0]))
    assert np.array_equal(tr.logits, [0.0, 0.0])


def test_activation_ratio_examples():
    assert activation_ratio([2, -3, 0], Activation("relu")).tolist() == [1, 0, 0]
    assert activation_ratio([-5], Activation("leaky_relu", 0.01)).tolist() == [0.01]
    assert activation_ratio([0], Activation("gelu")).tolist() == [0]


@given(st.lists(st.floats(-20, 20).filter(lambda v: v != 0), min_size=1, max_size=8),
       st.sampled_from(["relu", "leaky_relu", "gelu"]))
def test_activation_ratio_times_z_is_sigma(z, kind):
    act = Activation(kind)
    z = np.array(z)
    assert np.allclose(activation_ratio(z, act) * z, act(z), rtol=1e-15, atol=1e-300)


def _finite_difference(m, X, y, key, step=1e-5):
    p = m.params()
    out = np.zeros_like(p[key])
    for idx in np.ndindex(p[key].shape):
        plus, minus = dict(p), dict(p)
        plus[key] = p[key].copy()
        minus[key] = p[key].copy()
        plus[key][idx] += step
        minus[key][idx] -= step
        out[idx] = (loss_value(m.with_params(plus), X, y)
                    - loss_value(m.with_params(minus), X, y)) / (2 * step)
    return out


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "gelu"])
@pytest.mark.parametrize("bias", [False, True])
def test_gradients_match_finite_differences(act, bias):
    m = _net((4, 5, 5), act, bias, K=3, seed=11, embed=3)
    r = make_rng(4)
    X = r.standard_normal((6, 4))
    y = r.integers(0, 3, 6)
    _, grads = backward(m, X, y)
    for key, g in grads.items():
        fd = _finite_difference(m, X, y, key)
        rel = np.abs(fd - g).max() / max(np.abs(fd).max(), np.abs(g).max(), 1e-8)
        assert rel < 1e-4, key


def test_duplicated_batch_same_gradient():
    m = _net((4, 6, 6), "gelu", True, K=3)
    r = make_rng(5)
    X, y = r.standard_normal((7, 4)), r.integers(0, 3, 7)
    _, g1 = backward(m, X, y)
    _, g2 = backward(m, np.vstack([X, X]), np.concatenate([y, y]))
    for k in g1:
        assert np.abs(g1[k] - g2[k]).max() <= 1e-12


def test_gradient_vanishes_at_minimum():
    # 1-D embedding with opposite prototypes: the cosine logit is already at its
    # maximum for the target and flat in the single weight
    m = MlpModel((np.array([[2.0]]),), np.array([[1.0], [-1.0]]), input_norm=False)
    loss, g = backward(m, np.array([[1.0]]), np.array([0]))
    assert abs(g["W1"][0, 0]) < 1e-10
    assert np.abs(g["prototypes"]).max() < 1e-10


def test_backward_label_range():
    with pytest.raises(InvalidParameter):
        backward(_net(), np.zeros((1, 4)) + 1, np.array([7]))


def test_backward_nonfinite_loss():
    m = _net()
    p = m.params()
    p["W1"] = np.full_like(p["W1"], np.nan)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericalFailure):
            backward(m.with_params(p), np.ones((1, 4)), np.array([0]))


@pytest.mark.parametrize("embed,bias,act", [(None, False, "relu"), (3, True, "leaky_relu:0.2")])
def test_model_json_round_trip_bit_exact(embed, bias, act):
    m = _net((4, 6, 5), act, bias, K=3, embed=embed)
    back = model_from_json(model_to_json(m))
    assert back.activation == m.activation and back.temperature == m.temperature
    for a, b in zip(m.params().values(), back.params().values()):
        assert np.array_equal(a, b)


def test_model_json_bad_format():
    with pytest.raises(ParseError):
        model_from_json('{"format": "other"}')
