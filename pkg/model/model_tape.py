"""
model_tape.py - reverse-mode differentiation over a fixed set of numpy primitives.

Every primitive evaluates its forward value immediately and records

    (op name, input vars, output var, forward closure, adjoint closure)

on the tape. backward() walks the records in reverse and accumulates adjoints
into the inputs, so a weight used by many steps collects the sum of all its
contributions.

Example:

    tape = Tape()
    w = tape.leaf(np.ones((2, 2)), name="w")
    x = tape.constant(np.eye(2))
    loss = tape.mse(tape.tanh(tape.matmul(x, w)), np.zeros((2, 2)))
    tape.backward(loss)
    tape.gradient(w)
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

# Import external packages
import numpy as np
from scipy import sparse

# Import functions from local modules
from core.core_errors import ConfigError, DimensionMismatchError, NumericFailureError
from core.core_graph import Graph

PRIMITIVES = (
    "matmul",
    "add",
    "scale",
    "relu",
    "tanh",
    "identity",
    "gather_diff",
    "scatter_sum",
    "dropout",
    "mean_pool",
    "mse",
    "huber",
)

# Multiplier applied to a corrupted adjoint rule.
FAULT_FACTOR = 1.5

#####################################
# Types
#####################################


@dataclass(eq=False)
class Var:
    value: np.ndarray
    index: int
    requires_grad: bool
    name: Optional[str] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


@dataclass
class Record:
    op: str
    inputs: tuple[Var, ...]
    output: Var
    forward: Callable[..., np.ndarray]
    adjoint: Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]]


@dataclass
class Tape:
    """Records primitives in execution order and back-propagates adjoints."""

    adjoint_faults: frozenset = field(default_factory=frozenset)
    records: list[Record] = field(default_factory=list)
    leaves: list[Var] = field(default_factory=list)
    _count: int = 0
    _adjoints: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.adjoint_faults) - set(PRIMITIVES)
        if unknown:
            raise ConfigError(f"Unknown primitives in adjoint_faults: {sorted(unknown)}")
        self.adjoint_faults = frozenset(self.adjoint_faults)

    #####################################
    # Leaves
    #####################################

    def _new_var(self, value, requires_grad: bool, name: Optional[str] = None) -> Var:
        var = Var(np.asarray(value, dtype=np.float64), self._count, requires_grad, name)
        self._count += 1
        return var

    def leaf(self, value, name: Optional[str] = None) -> Var:
        """A differentiable input, typically a parameter."""
        var = self._new_var(np.array(value, dtype=np.float64, copy=True), True, name)
        self.leaves.append(var)
        return var

    def constant(self, value) -> Var:
        return self._new_var(value, False)

    def _record(
        self,
        op: str,
        inputs: Sequence[Var],
        forward: Callable[..., np.ndarray],
        adjoint: Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]],
    ) -> Var:
        value = forward(*(v.value for v in inputs))
        out = self._new_var(value, any(v.requires_grad for v in inputs))
        self.records.append(Record(op, tuple(inputs), out, forward, adjoint))
        return out

    #####################################
    # Linear Algebra
    #####################################

    def matmul(self, a: Var, b: Var, transpose_b: bool = False) -> Var:
        """a @ b, or a @ b.T with transpose_b."""
        left = a.shape[-1]
        right = b.shape[1] if transpose_b else b.shape[0]
        if left != right:
            raise DimensionMismatchError(
                f"matmul of {a.shape} and {b.shape} (transpose_b={transpose_b})."
            )
        if transpose_b:
            return self._record(
                "matmul",
                (a, b),
                lambda x, y: x @ y.T,
                lambda g: (g @ b.value, g.T @ a.value),
            )
        return self._record(
            "matmul",
            (a, b),
            lambda x, y: x @ y,
            lambda g: (g @ b.value.T, a.value.T @ g),
        )

    def add(self, a: Var, b: Var) -> Var:
        """Elementwise sum; a 1-D b is broadcast over the rows of a."""
        if b.value.ndim == 1 and a.value.ndim == 2:
            if b.shape[0] != a.shape[1]:
                raise DimensionMismatchError(f"bias {b.shape} for rows of {a.shape}.")
            return self._record(
                "add", (a, b), lambda x, y: x + y, lambda g: (g, g.sum(axis=0))
            )
        if a.shape != b.shape:
            raise DimensionMismatchError(f"add of {a.shape} and {b.shape}.")
        return self._record("add", (a, b), lambda x, y: x + y, lambda g: (g, g))

    def scale(self, a: Var, c: float) -> Var:
        c = float(c)
        return self._record("scale", (a,), lambda x: c * x, lambda g: (c * g,))

    #####################################
    # Nonlinearities
    #####################################

    def relu(self, a: Var) -> Var:
        return self._record(
            "relu",
            (a,),
            lambda x: np.maximum(x, 0.0),
            lambda g: (g * (a.value > 0),),
        )

    def tanh(self, a: Var) -> Var:
        out: list[Var] = []

        def adjoint(g):
            return (g * (1.0 - out[0].value ** 2),)

        var = self._record("tanh", (a,), np.tanh, adjoint)
        out.append(var)
        return var

    def identity(self, a: Var) -> Var:
        return self._record("identity", (a,), lambda x: x.copy(), lambda g: (g,))

    def activate(self, a: Var, name: str) -> Var:
        if name == "tanh":
            return self.tanh(a)
        if name == "relu":
            return self.relu(a)
        if name == "identity":
            return self.identity(a)
        raise ConfigError(f"Unknown nonlinearity '{name}'.")

    #####################################
    # Graph Primitives
    #####################################

    def gather_diff(self, x: Var, g: Graph) -> Var:
        """Per directed edge (i, j): x_i - x_j."""
        op = g.gather_matrix
        return self._record(
            "gather_diff", (x,), lambda v: op @ v, lambda grad: (op.T @ grad,)
        )

    def scatter_sum(self, e: Var, g: Graph) -> Var:
        """Per node i: sum of e over the outgoing directed edges (i, j)."""
        op = g.scatter_matrix
        return self._record(
            "scatter_sum", (e,), lambda v: op @ v, lambda grad: (op.T @ grad,)
        )

    def dropout(self, a: Var, mask: np.ndarray) -> Var:
        """Multiply by a fixed mask; the mask is part of the record."""
        mask = np.asarray(mask, dtype=np.float64)
        return self._record(
            "dropout", (a,), lambda x: x * mask, lambda g: (g * mask,)
        )

    def mean_pool(self, x: Var, pool: Optional[sparse.spmatrix] = None) -> Var:
        """
        Rows of pool @ x. pool is a (graphs x nodes) averaging matrix; None means
        the mean over all rows.
        """
        if pool is None:
            n = x.shape[0]
            pool = sparse.csr_matrix(np.full((1, n), 1.0 / n))
        op = sparse.csr_matrix(pool)
        return self._record(
            "mean_pool", (x,), lambda v: op @ v, lambda g: (op.T @ g,)
        )

    #####################################
    # Losses
    #####################################

    @staticmethod
    def _row_weights(n: int, weights) -> np.ndarray:
        if weights is None:
            return np.ones(n)
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != (n,):
            raise DimensionMismatchError(f"{w.size} row weights for {n} rows.")
        return w

    def mse(self, pred: Var, target, weights=None) -> Var:
        """Weighted mean squared error over rows and columns."""
        target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
        w = self._row_weights(pred.shape[0], weights)[:, None]
        denom = max(float(w.sum()) * pred.shape[1], 1e-300)

        def forward(p):
            return np.asarray(np.sum(w * (p - target) ** 2) / denom)

        return self._record(
            "mse", (pred,), forward, lambda g: (g * 2.0 * w * (pred.value - target) / denom,)
        )

    def huber(self, pred: Var, target, weights=None, delta: float = 1.0) -> Var:
        target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
        w = self._row_weights(pred.shape[0], weights)[:, None]
        denom = max(float(w.sum()) * pred.shape[1], 1e-300)

        def forward(p):
            r = np.abs(p - target)
            quad = np.minimum(r, delta)
            return np.asarray(np.sum(w * (0.5 * quad**2 + delta * (r - quad))) / denom)

        def adjoint(g):
            r = pred.value - target
            return (g * w * np.clip(r, -delta, delta) / denom,)

        return self._record("huber", (pred,), forward, adjoint)

    #####################################
    # Backward and Replay
    #####################################

    def backward(self, loss: Var) -> None:
        """Accumulate adjoints of the scalar loss into every recorded var."""
        if loss.value.size != 1:
            raise DimensionMismatchError(f"backward needs a scalar, got {loss.shape}.")
        if not np.all(np.isfinite(loss.value)):
            raise NumericFailureError("Non-finite loss, refusing to back-propagate.")
        self._adjoints = {loss.index: np.ones_like(loss.value)}
        for record in reversed(self.records):
            grad_out = self._adjoints.get(record.output.index)
            if grad_out is None or not record.output.requires_grad:
                continue
            grads = record.adjoint(grad_out)
            if record.op in self.adjoint_faults:
                grads = tuple(None if g is None else FAULT_FACTOR * g for g in grads)
            for var, grad in zip(record.inputs, grads):
                if grad is None or not var.requires_grad:
                    continue
                grad = np.asarray(grad).reshape(var.shape)
                if var.index in self._adjoints:
                    self._adjoints[var.index] = self._adjoints[var.index] + grad
                else:
                    self._adjoints[var.index] = grad

    def gradient(self, var: Var) -> np.ndarray:
        """Adjoint of var after backward(); zeros when the loss does not depend on it."""
        grad = self._adjoints.get(var.index)
        return np.zeros_like(var.value) if grad is None else grad

    def gradients(self, variables: Iterable[Var]) -> dict[str, np.ndarray]:
        return {v.name: self.gradient(v) for v in variables}

    def replay(self) -> float:
        """Re-run every forward closure from the leaves; return the max deviation."""
        values: dict[int, np.ndarray] = {}
        deviation = 0.0
        for record in self.records:
            inputs = [values.get(v.index, v.value) for v in record.inputs]
            value = record.forward(*inputs)
            values[record.output.index] = value
            diff = np.max(np.abs(value - record.output.value)) if value.size else 0.0
            deviation = max(deviation, float(diff))
        return deviation
