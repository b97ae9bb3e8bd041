import numpy as np
import pytest
from numpy.testing import assert_array_equal
from sklearn.datasets import load_digits

from svrgraph.stats import make_rng
from svrgraph.trainer import (
    TrainConfig,
    TrainingDiverged,
    he_init,
    loss_and_grads,
    mlp_logits,
    train_mlp,
    train_weights,
    width_experiment,
)


@pytest.fixture(scope="module")
def digits():
    X, y = load_digits(return_X_y=True)
    X = X / 16.0
    return X[:1200], y[:1200], X[1200:], y[1200:]


def finite_difference_error(widths, seed=0, h=1e-6):
    rng = make_rng(seed)
    ws = he_init(widths, rng)
    X = rng.standard_normal((8, widths[0]))
    y = rng.integers(0, widths[-1], 8)
    _, grads = loss_and_grads(ws, X, y)
    worst = 0.0
    for W, G in zip(ws, grads):
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + h
            lp, _ = loss_and_grads(ws, X, y)
            W[idx] = old - h
            lm, _ = loss_and_grads(ws, X, y)
            W[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - G[idx]) / max(abs(fd), abs(G[idx]), 1e-6))
    return worst


def test_gradient_check():
    assert finite_difference_error([6, 5, 4]) <= 1e-5


def test_he_init_scale():
    ws = he_init([400, 300], make_rng(0))
    assert abs(ws[0].std() - np.sqrt(2 / 400)) < 0.01 * np.sqrt(2 / 400) * 3


def test_zero_lr_keeps_init(digits):
    X, y = digits[0], digits[1]
    cfg = TrainConfig((64, 10, 10), epochs=1, lr=0.0, seed=4)
    ws = train_weights(cfg, X, y)
    for a, b in zip(ws, he_init(cfg.widths, make_rng(4))):
        assert_array_equal(a, b)


def test_bit_reproducible(digits):
    cfg = TrainConfig((64, 16, 10), epochs=1, seed=11)
    a = train_weights(cfg, digits[0], digits[1])
    b = train_weights(cfg, digits[0], digits[1])
    for wa, wb in zip(a, b):
        assert_array_equal(wa, wb)


def test_loss_decreases_and_learns(digits):
    log = []
    spec, store, acc = train_mlp(TrainConfig((64, 32, 10), epochs=8, seed=1), digits, log)
    assert [row[0] for row in log] == list(range(1, 9))
    assert log[-1][1] < log[0][1]
    assert acc > 0.8
    assert len(spec) == 2 and store["fc0"].shape == (32, 64)


def test_divergence_reported(digits):
    X = digits[0].copy()
    X[5, 3] = np.inf
    with pytest.raises(TrainingDiverged):
        train_weights(TrainConfig((64, 32, 10), epochs=1, batch_size=len(X)), X, digits[1])


def test_subset(digits):
    cfg = TrainConfig((64, 8, 10), epochs=1, subset=100)
    assert len(train_weights(cfg, *digits[:2])) == 2


def test_input_size_checked(digits):
    with pytest.raises(ValueError):
        train_weights(TrainConfig((50, 8, 10)), digits[0], digits[1])


@pytest.mark.parametrize(
    "kwargs", [dict(widths=(5,)), dict(epochs=0), dict(lr=-1.0), dict(batch_size=0), dict(subset=0)]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_config_records_hyperparameters():
    d = TrainConfig().to_dict()
    assert d["lr"] == 0.05 and d["batch_size"] == 64 and d["init"] == "he_normal"


def test_width_experiment_shape(digits):
    rows = width_experiment([6, 12], 2, digits, TrainConfig(epochs=1, seed=3))
    assert [r.n for r in rows] == [6, 12]
    for r in rows:
        assert len(r.d_out) == len(r.d_in) == 2  # three linear maps, two adjacencies
        assert all(1 <= d <= r.n for d in r.d_out + r.d_in)
        assert 0 <= r.accuracy <= 1
        assert all(0 <= f <= 1 for f in r.d_out_le_d_in)


def test_logits_shape(digits):
    ws = he_init([64, 5, 3], make_rng(0))
    assert mlp_logits(ws, digits[0][:4]).shape == (4, 3)
