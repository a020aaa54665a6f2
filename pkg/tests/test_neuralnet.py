"""Tests for the numpy network stack: shapes, gradients, heads, Adam and training."""

from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from calibration.neuralnet import (
    Adam,
    EarlyStopping,
    LayerSpec,
    Loss,
    OptimizerConfig,
    OutputHead,
    build,
    from_document,
    initialize_output,
    learning_rate,
    loss_and_grad,
    read_head,
    split_indices,
    train,
)
from common.errors import BuildError, ConfigError, TrainingError

WIND_SEQUENCE = [
    {"kind": "conv1d", "filters": 24, "kernel_size": 3, "activation": "relu"},
    {"kind": "pool1d", "mode": "max", "pool_size": 2},
    {"kind": "flatten"},
    {"kind": "dense", "units": 25, "activation": "relu"},
    {"kind": "dense", "units": 16},
]
GHI_SEQUENCE = [
    {"kind": "conv1d", "filters": 35, "kernel_size": 5, "activation": "relu"},
    {"kind": "pool1d", "mode": "avg", "pool_size": 2},
    {"kind": "conv1d", "filters": 16, "kernel_size": 2, "activation": "relu"},
    {"kind": "flatten"},
    {"kind": "dense", "units": 30, "activation": "relu"},
    {"kind": "dense", "units": 12},
]


@pytest.mark.parametrize(
    "specs, input_shape, shapes",
    [
        (WIND_SEQUENCE, (16, 3), [(14, 24), (7, 24), (168,), (25,), (16,)]),
        (GHI_SEQUENCE, (12, 2), [(8, 35), (4, 35), (3, 16), (48,), (30,), (12,)]),
    ],
)
def test_sequence_networks_chain_shapes(specs, input_shape, shapes) -> None:
    net = build(specs, OutputHead.POINT, input_shape, seed=0)

    assert [layer.output_shape for layer in net.layers] == shapes
    assert net.forward(np.ones((5, *input_shape))).shape == (5, shapes[-1][0])


def test_kernel_longer_than_sequence_is_a_build_error() -> None:
    specs = [{"kind": "conv1d", "filters": 2, "kernel_size": 5}, {"kind": "flatten"}, {"kind": "dense", "units": 1}]

    with pytest.raises(BuildError) as excinfo:
        build(specs, OutputHead.POINT, (4, 1), seed=0)

    assert excinfo.value.layer_index == 0


def test_output_layer_must_be_dense_with_two_distribution_outputs() -> None:
    with pytest.raises(BuildError):
        build([{"kind": "dense", "units": 4}, {"kind": "normalization"}], OutputHead.POINT, (3,), seed=0)
    with pytest.raises(BuildError):
        build([{"kind": "dense", "units": 3}], OutputHead.TN_EXP_EXP, (3,), seed=0)


def test_layer_spec_requires_kind_fields() -> None:
    with pytest.raises(ValidationError):
        LayerSpec(kind="dense")
    with pytest.raises(ValidationError):
        LayerSpec(kind="pool1d", mode="max", pool_size=0)


def test_same_seed_gives_same_initial_weights() -> None:
    first = build(WIND_SEQUENCE, OutputHead.POINT, (16, 3), seed=11)
    second = build(WIND_SEQUENCE, OutputHead.POINT, (16, 3), seed=11)

    for a, b in zip(first.get_weights(), second.get_weights()):
        np.testing.assert_array_equal(a, b)


def _numeric_gradient(net, x, y, loss, array, index, h=1e-6):
    original = array[index]
    array[index] = original + h
    up = loss_and_grad(loss, net.forward(x), y)[0]
    array[index] = original - h
    down = loss_and_grad(loss, net.forward(x), y)[0]
    array[index] = original
    return (up - down) / (2 * h)


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_backprop_matches_finite_differences(mode: str) -> None:
    specs = [
        {"kind": "conv1d", "filters": 3, "kernel_size": 2, "activation": "elu"},
        {"kind": "pool1d", "mode": mode, "pool_size": 2},
        {"kind": "flatten"},
        {"kind": "dense", "units": 4, "activation": "exponential"},
        {"kind": "dense", "units": 2},
    ]
    rng = np.random.default_rng(2)
    net = build(specs, OutputHead.POINT, (7, 2), seed=4)
    x = rng.normal(size=(6, 7, 2))
    y = rng.normal(size=(6, 2))

    _, grad = loss_and_grad(Loss.MSE, net.forward(x), y)
    net.backward(grad)

    for param, analytic in zip(net.parameters(), net.gradients()):
        for index in [(0,) * param.ndim, tuple(s - 1 for s in param.shape)]:
            numeric = _numeric_gradient(net, x, y, Loss.MSE, param, index)
            assert analytic[index] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


@pytest.mark.parametrize("loss", [Loss.CRPS_TN, Loss.CRPS_CN0, Loss.CRPS_LN])
def test_crps_loss_gradient_wrt_raw_outputs(loss: Loss) -> None:
    raw = np.array([[2.5, 1.5], [1.8, 2.2], [3.0, 2.0]])
    y = np.array([1.0, 0.0, 2.2])

    _, grad = loss_and_grad(loss, raw, y)

    h = 1e-6
    for i in range(raw.shape[0]):
        for j in range(2):
            up, down = raw.copy(), raw.copy()
            up[i, j] += h
            down[i, j] -= h
            numeric = (loss_and_grad(loss, up, y)[0] - loss_and_grad(loss, down, y)[0]) / (2 * h)
            assert grad[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_heads_read_raw_outputs() -> None:
    raw = np.array([[np.e**2, np.e], [8.0, np.e]])

    mu, sigma, _, _ = read_head(OutputHead.TN_EXP_EXP, raw[:1])
    assert mu[0] == pytest.approx(2.0)
    assert sigma[0] == pytest.approx(1.0)

    mu, sigma, _, _ = read_head(OutputHead.CN0_CUBE_EXP, raw[1:])
    assert mu[0] == pytest.approx(2.0)
    assert sigma[0] == pytest.approx(1.0)

    with pytest.raises(ConfigError):
        read_head(OutputHead.POINT, raw)


def test_non_finite_outputs_abort_training() -> None:
    with pytest.raises(TrainingError):
        loss_and_grad(Loss.MAE, np.array([[np.nan]]), np.array([1.0]))


def test_adam_first_step_moves_each_parameter_by_the_learning_rate() -> None:
    params = [np.array([1.0, -2.0, 0.5])]
    grads = [np.array([0.3, -40.0, 1e-3])]

    Adam(lr=0.01).step(params, grads)

    np.testing.assert_allclose(params[0], [0.99, -1.99, 0.49], atol=1e-6)


def test_step_schedule_applies_multipliers_cumulatively() -> None:
    schedule = [(8, 0.5), (28, 0.5), (48, 0.5), (68, 0.5)]

    assert learning_rate(0.01, schedule, 7) == pytest.approx(0.01)
    assert learning_rate(0.01, schedule, 8) == pytest.approx(0.005)
    assert learning_rate(0.01, schedule, 30) == pytest.approx(0.0025)
    assert learning_rate(0.01, schedule, 100) == pytest.approx(0.000625)


def test_schedule_epochs_must_increase() -> None:
    with pytest.raises(ValidationError):
        OptimizerConfig(schedule=[(5, 0.5), (5, 0.5)])


def test_split_is_seeded_and_disjoint() -> None:
    train_idx, val_idx = split_indices(50, 0.2, seed=3)

    assert len(val_idx) == 10
    assert not set(train_idx) & set(val_idx)
    np.testing.assert_array_equal(split_indices(50, 0.2, seed=3)[1], val_idx)


def _regression(n: int = 400, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = (x @ np.array([1.5, -2.0, 0.5]) + 0.1 * rng.normal(size=n))[:, None]
    return x, y


def _stop_epoch(patience: int, losses) -> tuple[int, EarlyStopping]:
    stopper = EarlyStopping(patience)
    for epoch, value in enumerate(losses, start=1):
        if stopper.update(epoch, value):
            return epoch, stopper
    return 0, stopper


@pytest.mark.parametrize(
    "patience, losses, stop, best",
    [
        (3, [1.0, 0.8, 0.9, 0.85, 0.82, 0.5], 5, 2),
        (2, [1.0, 0.9, 0.95, 0.7, 0.8, 0.9], 6, 4),
        (2, [1.0, 1.0, 1.0], 3, 1),
        (2, [1.0, 0.9, 0.8, 0.7], 0, 4),
    ],
)
def test_early_stopping_counts_epochs_without_a_new_best(patience: int, losses, stop: int, best: int) -> None:
    epoch, stopper = _stop_epoch(patience, losses)

    assert epoch == stop
    assert stopper.best_epoch == best


def test_training_reduces_the_loss() -> None:
    x, y = _regression()
    net = build([{"kind": "dense", "units": 8, "activation": "elu"}, {"kind": "dense", "units": 1}],
                OutputHead.POINT, (3,), seed=1)
    opt = OptimizerConfig(initial_lr=0.01, batch_size=32, max_epochs=30, patience=30, seed=1)

    _, history = train(net, x, y, opt, Loss.MSE)

    assert history.epochs == 30
    assert history.train_loss[-1] < history.train_loss[0]
    assert history.val_loss[-1] < 0.5 * history.val_loss[0]


def test_training_is_reproducible() -> None:
    x, y = _regression(n=120)
    specs = [{"kind": "dense", "units": 4, "activation": "relu"}, {"kind": "dense", "units": 1}]
    opt = OptimizerConfig(batch_size=16, max_epochs=5, seed=9)

    first, _ = train(build(specs, OutputHead.POINT, (3,), seed=2), x, y, opt, Loss.MAE)
    second, _ = train(build(specs, OutputHead.POINT, (3,), seed=2), x, y, opt, Loss.MAE)

    for a, b in zip(first.get_weights(), second.get_weights()):
        np.testing.assert_array_equal(a, b)


def test_rows_without_target_are_dropped_and_all_missing_fails() -> None:
    x, y = _regression(n=50)
    y[::2] = np.nan
    net = build([{"kind": "dense", "units": 1}], OutputHead.POINT, (3,), seed=0)

    _, history = train(net, x, y, OptimizerConfig(max_epochs=2, batch_size=8), Loss.MSE)
    assert np.isfinite(history.train_loss).all()

    with pytest.raises(TrainingError):
        train(net, x, np.full_like(y, np.nan), OptimizerConfig(max_epochs=1), Loss.MSE)


def test_normalization_statistics_come_from_the_first_epoch() -> None:
    x, y = _regression(n=90, seed=5)
    x = x * np.array([3.0, 0.5, 10.0]) + np.array([1.0, -2.0, 40.0])
    net = build([{"kind": "normalization"}, {"kind": "dense", "units": 1}], OutputHead.POINT, (3,), seed=0)
    opt = OptimizerConfig(batch_size=7, max_epochs=3, patience=5, seed=4)

    train(net, x, y, opt, Loss.MSE)

    train_idx, _ = split_indices(len(x), opt.val_fraction, opt.seed)
    state = net.layers[0].state
    np.testing.assert_allclose(state["mean"], x[train_idx].mean(axis=0))
    np.testing.assert_allclose(state["variance"], x[train_idx].var(axis=0))
    assert state["count"][0] == len(train_idx)


def test_output_initialization_reads_target_mean() -> None:
    net = build([{"kind": "dense", "units": 2}], OutputHead.LN_MOMENTS, (3,), seed=0)
    targets = np.array([2.0, 4.0, np.nan, 6.0])

    initialize_output(net, targets)

    m, v = net.predict_params(np.zeros((1, 3)))
    assert m[0] == pytest.approx(4.0)
    assert v[0] == pytest.approx(np.var([2.0, 4.0, 6.0]))


def test_document_restores_the_network() -> None:
    net = build(GHI_SEQUENCE, OutputHead.POINT, (12, 2), seed=6)
    x = np.random.default_rng(1).uniform(size=(4, 12, 2))

    restored = from_document(net.to_document())

    np.testing.assert_allclose(restored.forward(x), net.forward(x))
    with pytest.raises(ConfigError):
        from_document({**net.to_document(), "version": 2})
