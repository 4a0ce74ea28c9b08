import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nanood.data import Dataset
from nanood.errors import InvalidParameter
from nanood.evaluate import EvalReport, ScoreResult, build_report, mean_auroc
from nanood.metrics import (
    accuracy,
    activation_entropy,
    auroc,
    auroc_bruteforce,
    fpr95,
    fpr95_bruteforce,
    mean_sparsity,
    spearman,
)
from nanood.net import MlpModel, build_mlp
from nanood.numcore import make_rng

scores = arrays(np.float64, st.integers(1, 40), elements=st.integers(-5, 5).map(float))


def test_auroc_examples():
    assert auroc([2, 3], [0, 1]) == 1.0
    assert auroc([1, 3], [2, 4]) == 0.25
    assert auroc([1, 1], [1, 1]) == 0.5


def test_auroc_empty():
    with pytest.raises(InvalidParameter):
        auroc([], [1.0])
    with pytest.raises(InvalidParameter):
        fpr95([1.0], [])


def test_fpr95_examples():
    assert fpr95(np.arange(1, 21), [0, 1.5, 3]) == pytest.approx(1 / 3)
    assert fpr95([5, 6, 7], [1, 2]) == 0.0
    ids = make_rng(0).standard_normal(40)
    assert fpr95(ids, ids.copy()) >= 0.95


def test_fast_metrics_equal_bruteforce_on_random_sets():
    r = make_rng(0, "metric-oracle")
    for _ in range(200):
        n, m = int(r.integers(1, 60)), int(r.integers(1, 60))
        levels = int(r.integers(2, 12))  # few levels forces ties
        s_id = r.integers(0, levels, n) / 3.0
        s_ood = r.integers(0, levels, m) / 3.0 - 0.5
        assert auroc(s_id, s_ood) == auroc_bruteforce(s_id, s_ood)
        assert fpr95(s_id, s_ood) == fpr95_bruteforce(s_id, s_ood)


@given(scores, scores)
def test_auroc_matches_pair_count(s_id, s_ood):
    assert auroc(s_id, s_ood) == auroc_bruteforce(s_id, s_ood)
    assert fpr95(s_id, s_ood) == fpr95_bruteforce(s_id, s_ood)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30, unique=True))
def test_auroc_complement_without_ties(values):
    v = np.array(values)
    k = len(v) // 2
    a, b = v[:k] if k else v[:1], v[k:]
    if k == 0:
        return
    assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-12)


@given(scores, scores)
def test_auroc_monotone_transform_invariance(s_id, s_ood):
    f = lambda x: np.exp(x / 3.0) * 2 + 7  # noqa: E731
    assert auroc(f(s_id), f(s_ood)) == auroc(s_id, s_ood)


def test_activation_entropy_examples():
    A = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 0.0]])
    h, mean = activation_entropy(A)
    assert h[0] == pytest.approx(math.log(2), rel=1e-15)
    assert h[1] == 0 and h[2] == 0
    assert mean == pytest.approx(math.log(2) / 3)


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 6)),
              elements=st.floats(-1, 1)))
def test_activation_entropy_range(A):
    h, _ = activation_entropy(A)
    assert np.all(h >= 0) and np.all(h <= math.log(2) + 1e-15)


def test_mean_sparsity_examples():
    assert mean_sparsity(np.ones((3, 4))) == 0.25
    assert mean_sparsity([[1, 0, 2, 0]]) == 0.5
    assert mean_sparsity([[0, 0, 0]]) == 1.0
    assert mean_sparsity([[1, 0, 2, 0], [0, 0, 0, 0]]) == 0.75


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 25, 90]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert spearman([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5)
    assert spearman([1, 1, 1], [1, 2, 3]) == 0.0
    with pytest.raises(InvalidParameter):
        spearman([1, 2, 3], [1, 2])


def test_accuracy():
    assert accuracy(np.array([[1, 0], [0, 1], [1, 0]]), [0, 1, 1]) == pytest.approx(2 / 3)


# --- reports -------------------------------------------------------------------

def _sep_model():
    return MlpModel((np.eye(2),), np.eye(2), input_norm=False)


def test_report_on_perfect_separation():
    r = make_rng(1)
    id_tr = Dataset("tr", 5 + r.random((20, 2)), role="id_train")
    id_te = Dataset("te", 5 + r.random((20, 2)), role="id_test")
    ood = Dataset("far", -5 - r.random((15, 2)), role="ood")
    rep = build_report(_sep_model(), id_tr, id_te, [ood], ["l1", "nan", "embedding"])
    for s in rep.scores:
        assert s.auroc == 1.0 and s.fpr95 == 0.0 and s.train_auroc == 1.0


def test_report_null_case_near_half():
    r = make_rng(2)
    m = build_mlp([6, 32, 32], "relu", False, 4, 0.1, make_rng(3))
    X = r.standard_normal((1500, 6))
    tr, te, oo = (Dataset("a", X[:500], role="id_train"), Dataset("b", X[500:1000], role="id_test"),
                  Dataset("c", X[1000:], role="ood"))
    rep = build_report(m, tr, te, [oo], ["msp", "l1", "nan"])
    for s in rep.scores:
        assert abs(s.auroc - 0.5) <= 0.05


def test_report_json_round_trip_bit_exact():
    r = make_rng(4)
    tr = Dataset("a", r.standard_normal((30, 2)), role="id_train")
    te = Dataset("b", r.standard_normal((30, 2)), role="id_test")
    oo = [Dataset(n, r.standard_normal((20, 2)) * 2, role="ood") for n in ("x", "y")]
    rep = build_report(_sep_model(), tr, te, oo, ["l1", "energy"], run_id="r", seed=3,
                       config_digest="abc", threads=2)
    text = rep.to_json()
    back = EvalReport.from_json(text)
    assert back.to_json() == text
    assert back.get("l1", "y").auroc == rep.get("l1", "y").auroc
    assert mean_auroc(rep, "l1") == pytest.approx(np.mean([s.auroc for s in rep.scores
                                                           if s.name == "l1"]))


def test_threaded_report_equals_serial():
    r = make_rng(5)
    tr = Dataset("a", r.standard_normal((30, 2)), role="id_train")
    te = Dataset("b", r.standard_normal((30, 2)), role="id_test")
    oo = [Dataset(n, r.standard_normal((20, 2)) * 2, role="ood") for n in "pqrs"]
    a = build_report(_sep_model(), tr, te, oo, ["l1", "nan"], threads=1).to_json()
    b = build_report(_sep_model(), tr, te, oo, ["l1", "nan"], threads=4).to_json()
    assert a == b


def test_score_result_range_checked():
    with pytest.raises(InvalidParameter):
        ScoreResult("x", "y", 1.5, 0.0, 0.5, 0.5)


def test_duplicate_ood_names_rejected():
    d = Dataset("a", np.ones((3, 2)), role="ood")
    with pytest.raises(InvalidParameter):
        build_report(_sep_model(), d, d, [d, d], ["l1"])
