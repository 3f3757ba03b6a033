"""
model_train.py - gradients, Adam, one-cycle learning rate, synthetic tasks and
the training loop.

Minibatches are disjoint unions of task graphs, so one forward pass handles the
whole batch. Every epoch draws its shuffling and dropout masks from a generator
seeded with (seed, epoch); a run resumed from a checkpoint therefore repeats
the uninterrupted run exactly.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterable, Mapping, Optional, Sequence

# Import external packages
import numpy as np
import pandas as pd
from scipy import sparse

# Import functions from local modules
from core.core_errors import (
    ConfigError,
    DimensionMismatchError,
    InvalidSizeError,
    NumericFailureError,
)
from core.core_graph import Graph, disjoint_union, distances, make_grid, make_ladder, make_path
from core.core_metrics import mae, r_squared
from model.model_dbgnn import DBGNNModel, dbgnn_forward, trace_forward
from model.model_tape import Tape
from utils.utils_logger import logger

TASK_KINDS = ("distance_regression", "parity_source")
TASK_FAMILIES = ("path", "grid", "ladder")
SPLITS = ("train", "val", "test")

# Rows of the lattice used by the grid task family.
GRID_TASK_ROWS = 5

#####################################
# Optimizer
#####################################


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: Mapping[str, np.ndarray], **hyper) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(
    opt: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if set(params) != set(grads) or set(params) != set(opt.m):
        raise DimensionMismatchError("Parameters, gradients and moments name different keys.")
    t = opt.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape or opt.m[name].shape != p.shape:
            raise DimensionMismatchError(
                f"{name}: parameter {p.shape}, gradient {g.shape}, moment {opt.m[name].shape}."
            )
        m = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        v = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        m_hat = m / (1.0 - opt.beta1**t)
        v_hat = v / (1.0 - opt.beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        new_m[name], new_v[name] = m, v
    state = OptimizerState(new_m, new_v, t, opt.beta1, opt.beta2, opt.eps)
    return new_params, state


#####################################
# Learning Rate Schedule
#####################################


@dataclass(frozen=True)
class LRSchedule:
    max_lr: float
    total_steps: int
    initial_div: float = 32.0
    final_div: float = 5.8e5
    warmup: float = 0.3


def one_cycle_lr(sched: LRSchedule, step: int) -> float:
    """
    Cosine rise from max_lr/initial_div to max_lr over the warmup fraction, then
    cosine decay to max_lr/final_div at step == total_steps.
    """
    if not 0 <= step <= sched.total_steps:
        raise InvalidSizeError(f"step {step} outside [0, {sched.total_steps}].")
    start = sched.max_lr / sched.initial_div
    end = sched.max_lr / sched.final_div
    peak_step = sched.warmup * sched.total_steps
    if peak_step > 0 and step <= peak_step:
        pct = step / peak_step
        return _cosine(start, sched.max_lr, pct)
    decay_steps = sched.total_steps - peak_step
    pct = 1.0 if decay_steps <= 0 else (step - peak_step) / decay_steps
    return _cosine(sched.max_lr, end, pct)


def _cosine(begin: float, end: float, pct: float) -> float:
    """Cosine interpolation from begin (pct=0) to end (pct=1)."""
    return end + (begin - end) * (1.0 + math.cos(math.pi * pct)) / 2.0


#####################################
# Synthetic Tasks
#####################################


@dataclass(frozen=True)
class SyntheticTask:
    """Node regression on copies of one graph with different source nodes."""

    kind: str
    family: str
    graphs: tuple[Graph, ...]
    node_inputs: tuple[np.ndarray, ...]
    edge_inputs: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    sources: tuple[int, ...]
    splits: Mapping[str, tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.graphs)


def _task_graph(family: str, size: int) -> Graph:
    if family == "path":
        return make_path(size)
    if family == "grid":
        return make_grid(GRID_TASK_ROWS, size)
    if family == "ladder":
        return make_ladder(size)
    raise ConfigError(f"Unknown task graph family '{family}', expected one of {TASK_FAMILIES}.")


def split_counts(n: int) -> tuple[int, int, int]:
    """70/15/15 by rounded counts; the test split takes the remainder."""
    n_train = int(round(0.7 * n))
    n_val = min(int(round(0.15 * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def make_longrange_task(
    kind: str, graph_family: str, size: int, n_graphs: int, seed: int
) -> SyntheticTask:
    """
    One random source node per graph carries input 1, every edge input is 1.
    Targets are hop distance to the source divided by the graph diameter, or
    (-1)^distance for parity_source.
    """
    if kind not in TASK_KINDS:
        raise ConfigError(f"Unknown task kind '{kind}', expected one of {TASK_KINDS}.")
    if size < 8:
        raise InvalidSizeError(f"Task graphs need size >= 8, got {size}.")
    if n_graphs < 1:
        raise InvalidSizeError(f"n_graphs must be >= 1, got {n_graphs}.")
    rng = np.random.default_rng(seed)
    g = _task_graph(graph_family, size)
    dist = distances(g)
    diameter = float(np.max(dist))
    edge_in = np.ones((g.num_directed_edges, 1))

    sources = tuple(int(s) for s in rng.integers(0, g.num_nodes, n_graphs))
    node_inputs, targets = [], []
    for src in sources:
        x = np.zeros((g.num_nodes, 1))
        x[src, 0] = 1.0
        node_inputs.append(x)
        d = dist[src][:, None]
        targets.append(d / diameter if kind == "distance_regression" else (-1.0) ** d)

    order = rng.permutation(n_graphs)
    n_train, n_val, _ = split_counts(n_graphs)
    splits = {
        "train": tuple(int(i) for i in order[:n_train]),
        "val": tuple(int(i) for i in order[n_train:n_train + n_val]),
        "test": tuple(int(i) for i in order[n_train + n_val:]),
    }
    logger.info(
        f"Task {kind} on {graph_family}-{size}: {n_graphs} graphs, "
        f"splits {[len(splits[s]) for s in SPLITS]}"
    )
    return SyntheticTask(
        kind=kind,
        family=graph_family,
        graphs=(g,) * n_graphs,
        node_inputs=tuple(node_inputs),
        edge_inputs=(edge_in,) * n_graphs,
        targets=tuple(targets),
        sources=sources,
        splits=splits,
    )


#####################################
# Batching
#####################################


@dataclass(frozen=True)
class Batch:
    graph: Graph
    node_in: np.ndarray
    edge_in: np.ndarray
    targets: np.ndarray
    pool: sparse.csr_matrix
    node_offsets: np.ndarray
    indices: tuple[int, ...]


def make_batch(g: Graph, node_in: np.ndarray, edge_in: np.ndarray, targets: np.ndarray) -> Batch:
    """Batch holding a single graph."""
    pool = sparse.csr_matrix(np.full((1, g.num_nodes), 1.0 / g.num_nodes))
    return Batch(
        graph=g,
        node_in=np.asarray(node_in, dtype=np.float64),
        edge_in=np.asarray(edge_in, dtype=np.float64),
        targets=np.asarray(targets, dtype=np.float64),
        pool=pool,
        node_offsets=np.zeros(1, dtype=np.int64),
        indices=(0,),
    )


def collate(task: SyntheticTask, indices: Sequence[int]) -> Batch:
    """Disjoint union of the selected graphs with stacked inputs and targets."""
    indices = tuple(int(i) for i in indices)
    if not indices:
        raise InvalidSizeError("Cannot collate an empty batch.")
    graphs = [task.graphs[i] for i in indices]
    union, offsets = disjoint_union(graphs)
    rows = np.concatenate([np.full(g.num_nodes, b) for b, g in enumerate(graphs)])
    weights = np.concatenate([np.full(g.num_nodes, 1.0 / g.num_nodes) for g in graphs])
    pool = sparse.csr_matrix(
        (weights, (rows, np.arange(union.num_nodes))), shape=(len(graphs), union.num_nodes)
    )
    return Batch(
        graph=union,
        node_in=np.vstack([task.node_inputs[i] for i in indices]),
        edge_in=np.vstack([task.edge_inputs[i] for i in indices]),
        targets=np.vstack([task.targets[i] for i in indices]),
        pool=pool,
        node_offsets=offsets,
        indices=indices,
    )


#####################################
# Gradients
#####################################


def _batch_targets(model: DBGNNModel, batch: Batch) -> np.ndarray:
    if model.config.pooling == "mean":
        return batch.pool @ batch.targets
    return batch.targets


def loss_value(
    model: DBGNNModel,
    batch: Batch,
    loss_fn: str = "mse",
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Loss of the plain numpy forward pass, no tape."""
    pred = dbgnn_forward(model, batch.graph, batch.node_in, batch.edge_in, train_mode, rng, batch.pool)
    target = _batch_targets(model, batch).reshape(pred.shape)
    if loss_fn == "mse":
        return float(np.mean((pred - target) ** 2))
    if loss_fn == "huber":
        r = np.abs(pred - target)
        quad = np.minimum(r, 1.0)
        return float(np.mean(0.5 * quad**2 + (r - quad)))
    raise ConfigError(f"Unknown loss '{loss_fn}'.")


def grad(
    model: DBGNNModel,
    batch: Batch,
    loss_fn: str = "mse",
    train_mode: bool = True,
    rng: Optional[np.random.Generator] = None,
    adjoint_faults: Iterable[str] = (),
) -> tuple[dict[str, np.ndarray], float]:
    """
    Reverse-mode gradients of the scalar loss for every parameter.

    Raises:
        NumericFailureError: if the forward pass produced NaN or Inf.
    """
    tape = Tape(adjoint_faults=frozenset(adjoint_faults))
    leaves = {name: tape.leaf(value, name=name) for name, value in model.params.items()}
    with np.errstate(over="ignore", invalid="ignore"):
        out = trace_forward(
            model, batch.graph, batch.node_in, batch.edge_in, tape, leaves, train_mode, rng, batch.pool
        )
    if not np.all(np.isfinite(out.value)):
        raise NumericFailureError("Non-finite model output in the forward pass.")
    target = _batch_targets(model, batch)
    if loss_fn == "mse":
        loss = tape.mse(out, target)
    elif loss_fn == "huber":
        loss = tape.huber(out, target)
    else:
        raise ConfigError(f"Unknown loss '{loss_fn}'.")
    tape.backward(loss)
    return tape.gradients(leaves.values()), float(loss.value)


def gradient_check(
    model: DBGNNModel,
    batch: Batch,
    h: float = 1e-5,
    loss_fn: str = "mse",
    seed: int = 0,
    train_mode: bool = True,
    adjoint_faults: Iterable[str] = (),
) -> dict[str, float]:
    """
    Relative error ||g_ad - g_fd|| / max(||g_ad|| + ||g_fd||, 1e-12) per
    parameter, with central differences. Each evaluation reseeds the generator
    so every pass sees the same dropout masks.
    """
    if not model.params:
        raise InvalidSizeError("Model has no parameters to check.")
    analytic, _ = grad(
        model, batch, loss_fn, train_mode, np.random.default_rng(seed), adjoint_faults
    )
    errors: dict[str, float] = {}
    for name, value in model.params.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = {}
            for sign in (1.0, -1.0):
                p = dict(model.params)
                p[name] = value.copy()
                p[name][idx] += sign * h
                shifted[sign] = loss_value(
                    model.with_params(p), batch, loss_fn, train_mode, np.random.default_rng(seed)
                )
            numeric[idx] = (shifted[1.0] - shifted[-1.0]) / (2.0 * h)
        diff = float(np.linalg.norm(analytic[name] - numeric))
        scale = max(float(np.linalg.norm(analytic[name]) + np.linalg.norm(numeric)), 1e-12)
        errors[name] = diff / scale
        logger.debug(f"gradcheck {name}: relative error {errors[name]:.3e}")
    return errors


#####################################
# Training Loop
#####################################


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 50
    max_lr: float = 6.1e-4
    initial_div: float = 32.0
    final_div: float = 5.8e5
    warmup: float = 0.3
    loss: str = "mse"
    metric: str = "r2"
    patience: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSizeError("epochs and batch_size must be >= 1.")
        if self.loss not in ("mse", "huber"):
            raise ConfigError(f"Unknown loss '{self.loss}'.")
        if self.metric not in ("r2", "mae"):
            raise ConfigError(f"Unknown metric '{self.metric}'.")
        if self.max_lr < 0:
            raise ConfigError("max_lr must be >= 0.")

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown training config keys: {sorted(unknown)}")
        return cls(**dict(data))


def evaluate(
    model: DBGNNModel, task: SyntheticTask, split: str, loss_fn: str = "mse"
) -> dict[str, float]:
    """Eval-mode loss, R^2 and MAE on one split; NaN for an empty split."""
    return evaluate_indices(model, task, task.splits.get(split, ()), loss_fn)


def evaluate_all(model: DBGNNModel, task: SyntheticTask, loss_fn: str = "mse") -> dict[str, float]:
    """Metrics over every graph of the task, ignoring its splits."""
    return evaluate_indices(model, task, range(len(task.graphs)), loss_fn)


def evaluate_indices(
    model: DBGNNModel, task: SyntheticTask, indices: Iterable[int], loss_fn: str = "mse"
) -> dict[str, float]:
    indices = tuple(int(i) for i in indices)
    if not indices:
        return {"loss": math.nan, "r2": math.nan, "mae": math.nan}
    batch = collate(task, indices)
    pred = dbgnn_forward(model, batch.graph, batch.node_in, batch.edge_in, False, None, batch.pool)
    target = _batch_targets(model, batch).reshape(pred.shape)
    try:
        r2 = r_squared(pred, target)
    except (NumericFailureError, InvalidSizeError):
        r2 = math.nan
    return {
        "loss": loss_value(model, batch, loss_fn),
        "r2": r2,
        "mae": mae(pred, target),
    }


@dataclass(frozen=True)
class BestState:
    """Model selection bookkeeping carried across a resume."""

    model: DBGNNModel
    epoch: int
    score: float = math.inf
    stale: int = 0


@dataclass
class TrainingReport:
    history: pd.DataFrame
    model: DBGNNModel
    best_model: DBGNNModel
    best_epoch: int
    optimizer: OptimizerState
    final_metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    stopped_early: bool = False
    best_score: float = math.inf
    stale: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.history)

    @property
    def best_state(self) -> BestState:
        return BestState(self.best_model, self.best_epoch, self.best_score, self.stale)


def batches_per_epoch(task: SyntheticTask, config: TrainConfig) -> int:
    return max(1, math.ceil(len(task.splits["train"]) / config.batch_size))


def train(
    model: DBGNNModel,
    task: SyntheticTask,
    config: TrainConfig,
    optimizer: Optional[OptimizerState] = None,
    start_epoch: int = 0,
    end_epoch: Optional[int] = None,
    best: Optional[BestState] = None,
) -> TrainingReport:
    """
    Minibatch Adam with a one-cycle schedule over all epochs.

    History columns: epoch, train_loss, val_loss, metric, lr. train_loss is the
    eval-mode loss on the training split after the epoch. The best model is
    the one with the lowest validation loss (training loss when there is no
    validation split). Pass optimizer, start_epoch and best to resume; end_epoch
    stops early while the schedule still spans config.epochs.
    """
    stop = config.epochs if end_epoch is None else min(end_epoch, config.epochs)
    if not 0 <= start_epoch <= stop:
        raise InvalidSizeError(f"start_epoch {start_epoch} outside [0, {stop}].")
    train_idx = np.array(task.splits["train"], dtype=np.int64)
    if len(train_idx) == 0:
        raise InvalidSizeError("The training split is empty.")
    per_epoch = batches_per_epoch(task, config)
    sched = LRSchedule(
        max_lr=config.max_lr,
        total_steps=config.epochs * per_epoch,
        initial_div=config.initial_div,
        final_div=config.final_div,
        warmup=config.warmup,
    )
    opt = optimizer if optimizer is not None else OptimizerState.create(model.params)
    has_val = bool(task.splits.get("val"))
    metric_split = "val" if has_val else "train"

    rows = []
    if best is None:
        best = BestState(model, start_epoch)
    best_model, best_epoch, best_score, stale = best.model, best.epoch, best.score, best.stale
    stopped_early = False
    for epoch in range(start_epoch, stop):
        rng = np.random.default_rng((config.seed, epoch))
        order = rng.permutation(train_idx)
        lr = 0.0
        for b in range(per_epoch):
            step = epoch * per_epoch + b
            lr = one_cycle_lr(sched, step)
            batch = collate(task, order[b * config.batch_size:(b + 1) * config.batch_size])
            try:
                grads, _ = grad(model, batch, config.loss, True, rng)
            except NumericFailureError as e:
                logger.error(f"Numeric failure at epoch {epoch + 1}, step {step}, lr {lr:.3e}: {e}")
                raise
            params, opt = adam_step(opt, model.params, grads, lr)
            model = model.with_params(params)

        train_eval = evaluate(model, task, "train", config.loss)
        val_eval = evaluate(model, task, "val", config.loss) if has_val else train_eval
        metric_eval = val_eval if has_val else train_eval
        rows.append(
            {
                "epoch": epoch + 1,
                "train_loss": train_eval["loss"],
                "val_loss": val_eval["loss"] if has_val else math.nan,
                "metric": metric_eval[config.metric],
                "lr": lr,
            }
        )
        score = val_eval["loss"]
        if score < best_score:
            best_model, best_epoch, best_score, stale = model, epoch + 1, score, 0
        else:
            stale += 1
        if (epoch + 1) % 10 == 0 or epoch + 1 == config.epochs:
            logger.info(
                f"epoch {epoch + 1}/{config.epochs} train {train_eval['loss']:.4e} "
                f"{metric_split} {config.metric} {metric_eval[config.metric]:.4f} lr {lr:.2e}"
            )
        if config.patience and stale >= config.patience:
            logger.info(f"Early stop at epoch {epoch + 1}, best epoch {best_epoch}")
            stopped_early = True
            break

    history = pd.DataFrame(rows, columns=["epoch", "train_loss", "val_loss", "metric", "lr"])
    final = {split: evaluate(best_model, task, split, config.loss) for split in SPLITS}
    return TrainingReport(
        history=history,
        model=model,
        best_model=best_model,
        best_epoch=best_epoch,
        optimizer=opt,
        final_metrics=final,
        stopped_early=stopped_early,
        best_score=best_score,
        stale=stale,
    )
