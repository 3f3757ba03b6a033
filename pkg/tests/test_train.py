"""
test_train.py - gradients, Adam, the one-cycle schedule, synthetic tasks and the
training loop.
"""

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from core.core_errors import ConfigError, DimensionMismatchError, InvalidSizeError
from core.core_graph import make_random_connected
from model.model_checkpoint import load_checkpoint, save_checkpoint
from model.model_dbgnn import ModelConfig, init_model
from model.model_train import (
    LRSchedule,
    OptimizerState,
    TrainConfig,
    adam_step,
    collate,
    evaluate,
    grad,
    gradient_check,
    loss_value,
    make_batch,
    make_longrange_task,
    one_cycle_lr,
    split_counts,
    train,
)


def _tiny_model(seed=0, **overrides):
    base = dict(K=1, T=3, hidden_n=6, hidden_e=6, dropout_n=0.0, dropout_e=0.0, spread=0.2)
    base.update(overrides)
    return init_model(ModelConfig(**base), np.random.default_rng(seed))


#####################################
# Learning rate and Adam
#####################################


def test_one_cycle_endpoints():
    sched = LRSchedule(max_lr=1e-2, total_steps=100, initial_div=32, final_div=5.8e5, warmup=0.3)
    assert one_cycle_lr(sched, 0) == pytest.approx(1e-2 / 32)
    assert one_cycle_lr(sched, 30) == pytest.approx(1e-2)
    assert abs(one_cycle_lr(sched, 100) - 1e-2 / 5.8e5) < 1e-9
    with pytest.raises(InvalidSizeError):
        one_cycle_lr(sched, 101)


@settings(max_examples=50, deadline=None)
@given(total=st.integers(1, 500), frac=st.floats(0.0, 1.0))
def test_one_cycle_never_exceeds_peak(total, frac):
    sched = LRSchedule(max_lr=3e-3, total_steps=total)
    lr = one_cycle_lr(sched, int(frac * total))
    assert 0.0 < lr <= 3e-3 * (1 + 1e-12)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    opt = OptimizerState.create(params)
    new, state = adam_step(opt, params, {"w": np.zeros(2)}, 0.1)
    assert np.array_equal(new["w"], params["w"])
    assert state.step == 1


def test_adam_constant_gradient_step_size():
    params = {"w": np.zeros(3)}
    opt = OptimizerState.create(params)
    g = {"w": np.array([2.0, -0.5, 1e-3])}
    for _ in range(50):
        prev = params["w"]
        params, opt = adam_step(opt, params, g, 0.01)
    step = params["w"] - prev
    assert np.allclose(step, -0.01 * np.sign(g["w"]), rtol=1e-3)


def test_adam_does_not_mutate_inputs():
    params = {"w": np.ones(2)}
    opt = OptimizerState.create(params)
    adam_step(opt, params, {"w": np.ones(2)}, 0.1)
    assert np.array_equal(params["w"], np.ones(2))
    assert not np.any(opt.m["w"])


def test_adam_shape_mismatch():
    params = {"w": np.ones(2)}
    with pytest.raises(DimensionMismatchError):
        adam_step(OptimizerState.create(params), params, {"w": np.ones(3)}, 0.1)
    with pytest.raises(DimensionMismatchError):
        adam_step(OptimizerState.create(params), params, {"v": np.ones(2)}, 0.1)


#####################################
# Tasks and Batching
#####################################


def test_split_counts():
    assert split_counts(20) == (14, 3, 3)
    assert split_counts(1) == (1, 0, 0)
    assert sum(split_counts(47)) == 47


def test_distance_targets_on_path8():
    task = make_longrange_task("distance_regression", "path", 8, 6, seed=0)
    for src, x, y in zip(task.sources, task.node_inputs, task.targets):
        assert x[src, 0] == 1.0 and x.sum() == 1.0
        assert np.allclose(y[:, 0], np.abs(np.arange(8) - src) / 7.0)
        assert y.min() >= 0.0 and y.max() <= 1.0


def test_parity_targets():
    task = make_longrange_task("parity_source", "grid", 8, 3, seed=1)
    assert set(np.unique(np.concatenate(task.targets))) <= {-1.0, 1.0}


def test_task_seeds_change_sources():
    a = make_longrange_task("distance_regression", "path", 32, 10, seed=0)
    b = make_longrange_task("distance_regression", "path", 32, 10, seed=1)
    assert a.sources != b.sources


def test_task_splits_partition():
    task = make_longrange_task("distance_regression", "ladder", 10, 20, seed=2)
    all_ids = sorted(task.splits["train"] + task.splits["val"] + task.splits["test"])
    assert all_ids == list(range(20))
    assert [len(task.splits[s]) for s in ("train", "val", "test")] == [14, 3, 3]


@pytest.mark.parametrize(
    "args, error",
    [
        (("distance_regression", "path", 7, 4), InvalidSizeError),
        (("shortest_path", "path", 8, 4), ConfigError),
        (("distance_regression", "torus", 8, 4), ConfigError),
    ],
)
def test_task_errors(args, error):
    with pytest.raises(error):
        make_longrange_task(*args, seed=0)


def test_collate_builds_disjoint_union():
    task = make_longrange_task("distance_regression", "path", 8, 4, seed=0)
    batch = collate(task, [2, 0])
    assert batch.graph.num_nodes == 16
    assert list(batch.node_offsets) == [0, 8]
    assert np.array_equal(batch.targets[:8], task.targets[2])
    assert np.allclose(batch.pool.sum(axis=1), 1.0)
    with pytest.raises(InvalidSizeError):
        collate(task, [])


def test_batched_forward_equals_per_graph():
    task = make_longrange_task("distance_regression", "path", 8, 4, seed=3)
    model = _tiny_model()
    batch = collate(task, [0, 1, 2])
    together = loss_value(model, batch)
    separate = np.mean([loss_value(model, collate(task, [i])) for i in (0, 1, 2)])
    assert together == pytest.approx(separate, rel=1e-12)


#####################################
# Gradients
#####################################


def test_gradients_cover_every_parameter():
    task = make_longrange_task("distance_regression", "path", 8, 2, seed=0)
    model = _tiny_model()
    grads, loss = grad(model, collate(task, [0, 1]), train_mode=False)
    assert set(grads) == set(model.params)
    assert all(grads[k].shape == v.shape for k, v in model.params.items())
    assert loss > 0


def test_full_model_gradient_check():
    rng = np.random.default_rng(0)
    g = make_random_connected(10, rng)
    config = ModelConfig(
        d_n_in=2, d_e_in=2, K=2, T=4, hidden_n=8, hidden_e=8,
        dropout_n=0.1, dropout_e=0.1, spread=0.3,
    )
    model = init_model(config, rng)
    batch = make_batch(
        g,
        rng.normal(size=(g.num_nodes, 2)),
        rng.normal(size=(g.num_directed_edges, 2)),
        rng.normal(size=(g.num_nodes, 1)),
    )
    errors = gradient_check(model, batch, h=1e-5, seed=4)
    assert max(errors.values()) < 1e-4


def test_gradient_check_detects_faulty_adjoint():
    task = make_longrange_task("distance_regression", "path", 8, 1, seed=0)
    model = _tiny_model()
    errors = gradient_check(model, collate(task, [0]), adjoint_faults=("scatter_sum",))
    assert max(errors.values()) > 1e-2


def test_pooled_model_gradient_check():
    task = make_longrange_task("distance_regression", "path", 8, 3, seed=1)
    model = _tiny_model(pooling="mean", head=True, dropout_n=0.2)
    errors = gradient_check(model, collate(task, [0, 1, 2]), loss_fn="huber", seed=2)
    assert max(errors.values()) < 1e-4


#####################################
# Training Loop
#####################################


def test_zero_learning_rate_leaves_model_unchanged():
    task = make_longrange_task("distance_regression", "path", 8, 8, seed=0)
    model = _tiny_model()
    report = train(model, task, TrainConfig(epochs=3, batch_size=4, max_lr=0.0))
    for name, value in model.params.items():
        assert np.array_equal(report.model.params[name], value)
    assert report.history["train_loss"].nunique() == 1
    assert list(report.history.columns) == ["epoch", "train_loss", "val_loss", "metric", "lr"]


def test_training_is_deterministic():
    task = make_longrange_task("distance_regression", "path", 8, 8, seed=0)
    config = TrainConfig(epochs=3, batch_size=2, max_lr=1e-2, seed=5)
    a = train(_tiny_model(dropout_n=0.1), task, config)
    b = train(_tiny_model(dropout_n=0.1), task, config)
    pd.testing.assert_frame_equal(a.history, b.history)


def test_resume_repeats_the_uninterrupted_run(tmp_path):
    task = make_longrange_task("distance_regression", "path", 8, 8, seed=0)
    config = TrainConfig(epochs=6, batch_size=2, max_lr=1e-2, seed=1)
    full = train(_tiny_model(dropout_n=0.1), task, config)

    first = train(_tiny_model(dropout_n=0.1), task, config, end_epoch=3)
    path = save_checkpoint(
        tmp_path.joinpath("last.json"), first.model, 3, first.optimizer, config, first.best_state
    )
    ckpt = load_checkpoint(path)
    second = train(ckpt.model, task, config, ckpt.optimizer, start_epoch=ckpt.epoch, best=ckpt.best)

    for name, value in full.model.params.items():
        assert np.array_equal(second.model.params[name], value)
        assert np.array_equal(second.best_model.params[name], full.best_model.params[name])
    resumed = pd.concat([first.history, second.history], ignore_index=True)
    pd.testing.assert_frame_equal(resumed, full.history)
    assert second.best_epoch == full.best_epoch
    assert second.best_score == full.best_score
    assert pd.DataFrame(second.final_metrics).equals(pd.DataFrame(full.final_metrics))


def test_resume_without_best_state_forgets_the_earlier_best():
    task = make_longrange_task("distance_regression", "path", 8, 8, seed=0)
    config = TrainConfig(epochs=4, batch_size=2, max_lr=1e-2, seed=1)
    first = train(_tiny_model(), task, config, end_epoch=2)
    second = train(first.model, task, config, first.optimizer, start_epoch=2)
    assert second.best_epoch > 2
    kept = train(first.model, task, config, first.optimizer, start_epoch=2, best=first.best_state)
    assert kept.best_score <= first.best_score


def test_training_reduces_loss():
    task = make_longrange_task("distance_regression", "path", 8, 1, seed=0)
    model = _tiny_model(K=2, T=4, hidden_n=8, hidden_e=8)
    report = train(model, task, TrainConfig(epochs=60, batch_size=1, max_lr=1e-2))
    losses = report.history["train_loss"]
    assert losses.iloc[-1] < losses.iloc[0]
    assert math.isnan(report.history["val_loss"].iloc[0])
    assert report.final_metrics["train"]["loss"] == pytest.approx(losses.min())


def test_early_stopping():
    task = make_longrange_task("distance_regression", "path", 8, 8, seed=0)
    report = train(_tiny_model(), task, TrainConfig(epochs=20, batch_size=4, max_lr=0.0, patience=2))
    assert report.stopped_early
    assert report.epochs_run == 3
    assert report.best_epoch == 1


def test_evaluate_empty_split_is_nan():
    task = make_longrange_task("distance_regression", "path", 8, 1, seed=0)
    metrics = evaluate(_tiny_model(), task, "val")
    assert all(math.isnan(v) for v in metrics.values())


def test_train_config_validation():
    with pytest.raises(InvalidSizeError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(loss="l1")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})


@pytest.mark.slow
def test_memorizes_a_single_graph():
    task = make_longrange_task("distance_regression", "path", 8, 1, seed=0)
    model = _tiny_model(K=2, T=8, hidden_n=16, hidden_e=16)
    report = train(model, task, TrainConfig(epochs=500, batch_size=1, max_lr=1e-2))
    assert report.history["train_loss"].min() < 1e-3


@pytest.mark.slow
def test_long_range_regression_is_learnable():
    task = make_longrange_task("distance_regression", "path", 32, 48, seed=0)
    config = ModelConfig(K=2, T=16, hidden_n=32, hidden_e=32)
    report = train(
        init_model(config, np.random.default_rng(0)),
        task,
        TrainConfig(epochs=223, batch_size=4, max_lr=2e-3),
    )
    assert report.final_metrics["val"]["r2"] >= 0.9
