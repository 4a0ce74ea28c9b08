import numpy as np
import pytest

from nanood.data import Dataset, gen_blobs
from nanood.errors import InvalidParameter, NumericalFailure
from nanood.numcore import make_rng
from nanood.train import (
    LabelScheme,
    TrainConfig,
    assign_labels,
    augment,
    cosine_lr,
    init_model,
    train,
    write_history_csv,
)


def _blobs(K=2, d=4, n=30, sep=6.0, seed=0):
    return gen_blobs(K, d, n, 1.0, sep, make_rng(seed, "blobs"))


def _perceptron_separable(X, y, epochs=1000):
    """Independent oracle: a bias-augmented perceptron converges iff separable."""
    Xa = np.hstack([X, np.ones((len(X), 1))])
    s = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(Xa.shape[1])
    for _ in range(epochs):
        errors = 0
        for xi, si in zip(Xa, s):
            if si * (xi @ w) <= 0:
                w += si * xi
                errors += 1
        if errors == 0:
            return True
    return False


# --- labels --------------------------------------------------------------------

def test_scheme_o_labels():
    ds = Dataset("x", np.zeros((5, 2)), None, "id_train")
    assert assign_labels(ds, "O", make_rng(0)).labels.tolist() == [0] * 5


def test_scheme_i_labels():
    ds = Dataset("x", np.zeros((3, 2)), None, "id_train")
    assert assign_labels(ds, "I", make_rng(0)).labels.tolist() == [0, 1, 2]


def test_scheme_r_deterministic_and_binary():
    ds = Dataset("x", np.zeros((50, 2)), None, "id_train")
    a = assign_labels(ds, "R", make_rng(3, "labels")).labels
    b = assign_labels(ds, "R", make_rng(3, "labels")).labels
    assert np.array_equal(a, b) and set(a.tolist()) == {0, 1}


def test_scheme_s_needs_labels():
    ds = Dataset("x", np.zeros((3, 2)), None, "id_train")
    with pytest.raises(InvalidParameter):
        assign_labels(ds, "S", make_rng(0))


def test_unknown_scheme():
    with pytest.raises(InvalidParameter):
        LabelScheme.parse("Z")


# --- augmentation and schedule ----------------------------------------------

def test_augment_identity_when_disabled():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(augment(x, 0.0, make_rng(0), dropout=0.0), x)


def test_augment_monte_carlo_mean():
    x = np.array([1.0, -2.0, 3.0, 0.5])
    sigma = 0.5
    rng = make_rng(1, "aug")
    draws = np.array([augment(x, sigma, rng) for _ in range(10000)])
    # each coordinate: keep w.p. 0.9, plus N(0, sigma^2) on kept coords
    var = 0.9 * (x ** 2 + sigma ** 2) - (0.9 * x) ** 2
    tol = 3 * np.sqrt(var) / np.sqrt(10000)
    assert np.all(np.abs(draws.mean(0) - 0.9 * x) <= tol)


def test_cosine_lr_examples():
    assert cosine_lr(0, 10, 0.06) == 0.06
    assert cosine_lr(10, 10, 0.06) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(5, 10, 0.06) == pytest.approx(0.03, rel=1e-15)
    with pytest.raises(InvalidParameter):
        cosine_lr(0, 0, 0.06)


@pytest.mark.parametrize("kwargs", [dict(lr0=0), dict(momentum=1.0), dict(batch_size=0)])
def test_train_config_validation(kwargs):
    with pytest.raises(InvalidParameter):
        TrainConfig(**kwargs)


# --- training ------------------------------------------------------------------

def test_separable_blobs_reach_full_accuracy():
    ds = _blobs()
    assert _perceptron_separable(ds.features, ds.labels)
    cfg = TrainConfig(epochs=40, batch_size=16, lr0=0.06)
    model = init_model(ds, cfg, [16, 16])
    res = train(model, ds, cfg)
    assert res.history[-1].train_acc == 1.0
    from nanood.net import forward
    assert (forward(res.model, ds.features).logits.argmax(1) == ds.labels).all()


def test_training_bit_identical_across_runs():
    ds = _blobs(K=3, n=20)
    cfg = TrainConfig(epochs=5, batch_size=8, seed=4)
    runs = [train(init_model(ds, cfg, [8, 8]), ds, cfg).model for _ in range(2)]
    for a, b in zip(runs[0].params().values(), runs[1].params().values()):
        assert np.array_equal(a, b)


def test_scheme_o_only_weight_decay_shrinks_weights():
    ds = assign_labels(_blobs(K=3, n=20), "O", make_rng(0))
    cfg = TrainConfig(epochs=6, batch_size=16, weight_decay=5e-3, scheme="O", checkpoint_every=1)
    model = init_model(ds, cfg, [8, 8])
    assert model.num_classes == 1
    res = train(model, ds, cfg)
    assert all(r.loss == 0.0 for r in res.history)
    norms = [[np.linalg.norm(w) for w in m.weights] for _, m in res.checkpoints]
    for prev, cur in zip(norms, norms[1:]):
        assert all(c < p for p, c in zip(prev, cur))


def test_loss_non_increasing_over_ten_epoch_windows():
    ds = gen_blobs(8, 32, 40, 1.0, 6.0, make_rng(0, "data", "blobs"))
    cfg = TrainConfig(epochs=60, batch_size=64)
    res = train(init_model(ds, cfg, [64, 64]), ds, cfg)
    losses = [r.loss for r in res.history]
    for t in range(len(losses) - 10):
        assert losses[t + 10] <= losses[t]


def test_divergence_reports_epoch():
    ds = _blobs()
    cfg = TrainConfig(epochs=3, batch_size=16, lr0=1e300, momentum=0.0)
    with np.errstate(all="ignore"):
        with pytest.raises(NumericalFailure) as info:
            train(init_model(ds, cfg, [8]), ds, cfg)
    assert info.value.epoch == 1


def test_checkpoints_and_history_csv(tmp_path):
    ds = _blobs(n=10)
    cfg = TrainConfig(epochs=5, batch_size=8, checkpoint_every=2)
    seen = []
    res = train(init_model(ds, cfg, [4]), ds, cfg, on_checkpoint=lambda e, m: seen.append(e))
    assert seen == [0, 2, 4, 5]
    write_history_csv(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,train_acc,lr" and len(lines) == 6


def test_train_requires_labels():
    ds = Dataset("x", np.ones((3, 2)), None, "id_train")
    cfg = TrainConfig(epochs=1, scheme="O")
    model = init_model(ds, cfg, [4])
    with pytest.raises(InvalidParameter):
        train(model, ds, cfg)
