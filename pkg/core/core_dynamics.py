"""
core_dynamics.py - forward time evolution of node and edge features.

Features are stored as rows: node_features is |N| x d_n and edge_features is
|E_dir| x d_e, one row per directed edge. With G the edge-gather-difference
operator and S the node-scatter-sum operator, one linear DB step is

    x <- x + (S e) W_ne^T + x W_beta_n^T
    e <- e + (G x) W_en^T - e W_beta_e^T

where every term on the right uses the time-t values.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

# Import external packages
import numpy as np
import pandas as pd

# Import functions from local modules
from core.core_errors import (
    ConfigError,
    DimensionMismatchError,
    InvalidGraphError,
    InvalidSizeError,
    NumericOverflowError,
)
from core.core_graph import Graph
from core.core_metrics import dirichlet_trace, is_degenerate
from utils.utils_logger import logger

#####################################
# Nonlinearities
#####################################


def relu(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def identity(u: np.ndarray) -> np.ndarray:
    return u


NONLINEARITIES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "relu": relu,
    "identity": identity,
}

STEPPER_KINDS = ("lindb", "db1s", "mpnn_linear", "mpnn_sigma")


def get_nonlinearity(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return NONLINEARITIES[name]
    except KeyError:
        raise ConfigError(
            f"Unknown nonlinearity '{name}', expected one of {sorted(NONLINEARITIES)}."
        ) from None


#####################################
# Types
#####################################


@dataclass(frozen=True)
class FeatureState:
    node_features: np.ndarray
    edge_features: np.ndarray

    @classmethod
    def zeros(cls, g: Graph, d_n: int, d_e: int) -> "FeatureState":
        return cls(
            np.zeros((g.num_nodes, d_n)), np.zeros((g.num_directed_edges, d_e))
        )

    @property
    def d_n(self) -> int:
        return self.node_features.shape[1]

    @property
    def d_e(self) -> int:
        return self.edge_features.shape[1]

    def check(self, g: Graph) -> None:
        if self.node_features.ndim != 2 or self.edge_features.ndim != 2:
            raise DimensionMismatchError("Feature matrices must be two-dimensional.")
        if self.node_features.shape[0] != g.num_nodes:
            raise DimensionMismatchError(
                f"{self.node_features.shape[0]} node rows for {g.num_nodes} nodes."
            )
        if self.edge_features.shape[0] != g.num_directed_edges:
            raise DimensionMismatchError(
                f"{self.edge_features.shape[0]} edge rows for "
                f"{g.num_directed_edges} directed edges."
            )

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.node_features))
            and np.all(np.isfinite(self.edge_features))
        )

    def activation(self) -> np.ndarray:
        """Per-node L2 norm of the node feature row."""
        return np.linalg.norm(self.node_features, axis=1)


@dataclass(frozen=True)
class DBWeights:
    W_ne: np.ndarray
    W_en: np.ndarray
    W_beta_n: np.ndarray
    W_beta_e: np.ndarray

    @property
    def d_n(self) -> int:
        return self.W_ne.shape[0]

    @property
    def d_e(self) -> int:
        return self.W_ne.shape[1]

    def check(self) -> None:
        d_n, d_e = self.d_n, self.d_e
        expected = {
            "W_ne": (d_n, d_e),
            "W_en": (d_e, d_n),
            "W_beta_n": (d_n, d_n),
            "W_beta_e": (d_e, d_e),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise DimensionMismatchError(f"{name} has shape {actual}, expected {shape}.")

    def is_oscillatory(self, tol: float = 1e-12) -> bool:
        return bool(
            np.max(np.abs(self.W_ne + self.W_en.T)) <= tol
            and np.max(np.abs(self.W_beta_n + self.W_beta_n.T)) <= tol
            and np.max(np.abs(self.W_beta_e + self.W_beta_e.T)) <= tol
        )


@dataclass(frozen=True)
class MPNNWeights:
    W_n: np.ndarray
    W_e: np.ndarray
    beta_n: np.ndarray

    @classmethod
    def from_db(cls, w: DBWeights) -> "MPNNWeights":
        """Reuse DB weights: W_n <- W_ne, W_e <- W_en, beta_n <- W_beta_n."""
        return cls(W_n=w.W_ne, W_e=w.W_en, beta_n=w.W_beta_n)

    def check(self) -> None:
        d_n, d_e = self.W_n.shape
        if self.W_e.shape != (d_e, d_n) or self.beta_n.shape != (d_n, d_n):
            raise DimensionMismatchError(
                f"Inconsistent MPNN weights W_n {self.W_n.shape}, "
                f"W_e {self.W_e.shape}, beta_n {self.beta_n.shape}."
            )


@dataclass(frozen=True)
class StepperSpec:
    kind: str
    nonlinearity: str = "tanh"
    edge_nonlinearity: bool = False
    dropout_rate: float = 0.0
    train_mode: bool = False

    def __post_init__(self):
        if self.kind not in STEPPER_KINDS:
            raise ConfigError(
                f"Unknown stepper '{self.kind}', expected one of {STEPPER_KINDS}."
            )
        get_nonlinearity(self.nonlinearity)
        check_dropout_rate(self.dropout_rate)

    @property
    def label(self) -> str:
        if self.kind == "db1s":
            return f"db1s_{self.nonlinearity}"
        if self.kind == "mpnn_sigma":
            return "mpnn_sigma_edge" if self.edge_nonlinearity else "mpnn_sigma"
        return self.kind


@dataclass(frozen=True)
class Trajectory:
    """
    Rollout of a stepper. activations is (T+1) x |N|, dirichlet has T+1 entries.
    states holds every FeatureState unless the rollout ran with record_states=False.
    """

    stepper: str
    activations: np.ndarray
    dirichlet: np.ndarray
    degenerate: np.ndarray
    final: FeatureState
    states: tuple[FeatureState, ...] = field(default=())

    @property
    def num_steps(self) -> int:
        return len(self.dirichlet) - 1

    def activation_frame(self) -> pd.DataFrame:
        steps, nodes = self.activations.shape
        return pd.DataFrame(
            {
                "step": np.repeat(np.arange(steps), nodes),
                "node_id": np.tile(np.arange(nodes), steps),
                "activation": self.activations.ravel(),
            }
        )


#####################################
# Steppers
#####################################


def check_dropout_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}.")


def dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: kept entries are 1/(1-rate), dropped are 0."""
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def _check_db(g: Graph, w: DBWeights, s: FeatureState) -> None:
    w.check()
    s.check(g)
    if s.d_n != w.d_n or s.d_e != w.d_e:
        raise DimensionMismatchError(
            f"State dims ({s.d_n}, {s.d_e}) do not match weights ({w.d_n}, {w.d_e})."
        )


def _check_mpnn(g: Graph, w: MPNNWeights, s: FeatureState) -> None:
    w.check()
    s.check(g)
    if s.d_n != w.W_n.shape[0]:
        raise DimensionMismatchError(
            f"State has d_n={s.d_n}, MPNN weights expect {w.W_n.shape[0]}."
        )


def lindb_step(g: Graph, w: DBWeights, s: FeatureState) -> FeatureState:
    _check_db(g, w, s)
    x, e = s.node_features, s.edge_features
    x_new = x + (g.scatter_matrix @ e) @ w.W_ne.T + x @ w.W_beta_n.T
    e_new = e + (g.gather_matrix @ x) @ w.W_en.T - e @ w.W_beta_e.T
    return FeatureState(x_new, e_new)


def mpnn_linear_step(g: Graph, w: MPNNWeights, s: FeatureState) -> FeatureState:
    _check_mpnn(g, w, s)
    x = s.node_features
    messages = (g.gather_matrix @ x) @ w.W_e.T
    x_new = x + (g.scatter_matrix @ messages) @ w.W_n.T + x @ w.beta_n.T
    return FeatureState(x_new, messages)


def mpnn_sigma_step(
    g: Graph, w: MPNNWeights, s: FeatureState, edge_nonlinearity: bool
) -> FeatureState:
    _check_mpnn(g, w, s)
    x = s.node_features
    messages = (g.gather_matrix @ x) @ w.W_e.T
    if edge_nonlinearity:
        messages = relu(messages)
    x_new = relu((g.scatter_matrix @ messages) @ w.W_n.T + x @ w.beta_n.T)
    return FeatureState(x_new, messages)


def db1s_step(
    g: Graph,
    w: DBWeights,
    s: FeatureState,
    dropout_rate: float,
    train_mode: bool,
    rng: Optional[np.random.Generator],
    nonlinearity: str = "tanh",
    edge_dropout_rate: Optional[float] = None,
) -> FeatureState:
    """
    One linear DB step, then dropout (train mode only), then the nonlinearity.

    The node mask is drawn before the edge mask. edge_dropout_rate defaults to
    dropout_rate.
    """
    edge_rate = dropout_rate if edge_dropout_rate is None else edge_dropout_rate
    check_dropout_rate(dropout_rate)
    check_dropout_rate(edge_rate)
    sigma = get_nonlinearity(nonlinearity)
    stepped = lindb_step(g, w, s)
    x, e = stepped.node_features, stepped.edge_features
    if train_mode and (dropout_rate > 0 or edge_rate > 0):
        if rng is None:
            raise ConfigError("Dropout in train mode needs a random generator.")
        x = x * dropout_mask(rng, x.shape, dropout_rate)
        e = e * dropout_mask(rng, e.shape, edge_rate)
    return FeatureState(sigma(x), sigma(e))


#####################################
# Initialization
#####################################


def init_weights(
    d_n: int, d_e: int, spread: float, oscillatory: bool, rng: np.random.Generator
) -> DBWeights:
    """
    Normal(0, spread^2) weights. In oscillatory mode only W_en and the strict
    upper triangles of the mass matrices are sampled, then W_ne = -W_en^T and
    the mass matrices are antisymmetrized.
    """
    if spread <= 0:
        raise ConfigError(f"spread must be positive, got {spread}.")
    if d_n < 1 or d_e < 1:
        raise InvalidSizeError(f"Feature dims must be positive, got ({d_n}, {d_e}).")
    if not oscillatory:
        return DBWeights(
            W_ne=rng.normal(0.0, spread, (d_n, d_e)),
            W_en=rng.normal(0.0, spread, (d_e, d_n)),
            W_beta_n=rng.normal(0.0, spread, (d_n, d_n)),
            W_beta_e=rng.normal(0.0, spread, (d_e, d_e)),
        )
    w_en = rng.normal(0.0, spread, (d_e, d_n))
    upper_n = np.triu(rng.normal(0.0, spread, (d_n, d_n)), k=1)
    upper_e = np.triu(rng.normal(0.0, spread, (d_e, d_e)), k=1)
    return DBWeights(
        W_ne=-w_en.T.copy(),
        W_en=w_en,
        W_beta_n=upper_n - upper_n.T,
        W_beta_e=upper_e - upper_e.T,
    )


def spreading_initial_state(
    g: Graph, d_n: int, d_e: int, rng: np.random.Generator
) -> FeatureState:
    """Random normal features on the first column of a lattice graph, zeros elsewhere."""
    if g.layout is None:
        raise InvalidGraphError("Spreading initial state needs a lattice graph.")
    rows, cols = g.layout
    state = FeatureState.zeros(g, d_n, d_e)
    state.node_features[np.arange(rows) * cols] = rng.normal(0.0, 1.0, (rows, d_n))
    return state


def point_initial_state(
    g: Graph, d_n: int, d_e: int, rng: np.random.Generator, node: int = 0
) -> FeatureState:
    """Random normal features on a single node, zeros elsewhere."""
    if not 0 <= node < g.num_nodes:
        raise InvalidGraphError(f"Node {node} not in graph of {g.num_nodes} nodes.")
    state = FeatureState.zeros(g, d_n, d_e)
    row = rng.normal(0.0, 1.0, d_n)
    while not np.any(row):
        row = rng.normal(0.0, 1.0, d_n)
    state.node_features[node] = row
    return state


def wave_crossing_steps(w: DBWeights, distance: float, max_steps: int) -> int:
    """Steps a wave moving ||W_en||_2 hops per step needs to cover distance."""
    speed = float(np.linalg.norm(w.W_en, 2))
    if speed == 0.0:
        return max_steps
    return int(min(max_steps, max(1, math.ceil(distance / speed))))


#####################################
# Rollout
#####################################


def make_stepper(
    g: Graph,
    spec: StepperSpec,
    weights: Union[DBWeights, MPNNWeights],
    rng: Optional[np.random.Generator],
) -> Callable[[FeatureState], FeatureState]:
    if spec.kind in ("lindb", "db1s"):
        if not isinstance(weights, DBWeights):
            raise ConfigError(f"Stepper '{spec.kind}' needs DB weights.")
        if spec.kind == "lindb":
            return lambda s: lindb_step(g, weights, s)
        return lambda s: db1s_step(
            g, weights, s, spec.dropout_rate, spec.train_mode, rng, spec.nonlinearity
        )
    mpnn = MPNNWeights.from_db(weights) if isinstance(weights, DBWeights) else weights
    if spec.kind == "mpnn_linear":
        return lambda s: mpnn_linear_step(g, mpnn, s)
    return lambda s: mpnn_sigma_step(g, mpnn, s, spec.edge_nonlinearity)


def evolve(
    g: Graph,
    stepper: Union[StepperSpec, str],
    weights: Union[DBWeights, MPNNWeights],
    s0: FeatureState,
    T: int,
    rng: Optional[np.random.Generator] = None,
    record_states: bool = True,
) -> Trajectory:
    """
    Apply the stepper T times with shared weights and record diagnostics.

    Raises:
        NumericOverflowError: when a state stops being finite; .step is the
            index of the first bad state.
    """
    spec = StepperSpec(stepper) if isinstance(stepper, str) else stepper
    if T < 1:
        raise InvalidSizeError(f"evolve needs T >= 1, got {T}.")
    s0.check(g)
    step = make_stepper(g, spec, weights, rng)

    activations = np.empty((T + 1, g.num_nodes))
    dirichlet = np.empty(T + 1)
    degenerate = np.zeros(T + 1, dtype=bool)
    states: list[FeatureState] = []

    state = FeatureState(s0.node_features.copy(), s0.edge_features.copy())
    for t in range(T + 1):
        if t > 0:
            with np.errstate(over="ignore", invalid="ignore"):
                state = step(state)
            if not state.is_finite():
                logger.warning(f"{spec.label} rollout left the finite range at step {t}")
                raise NumericOverflowError(
                    f"Non-finite features after step {t} of {spec.label}.", step=t
                )
        activations[t] = state.activation()
        dirichlet[t] = dirichlet_trace(g, state.node_features)
        degenerate[t] = is_degenerate(state.node_features)
        if record_states:
            states.append(state)

    logger.debug(f"Evolved {spec.label} for {T} steps on {g.num_nodes} nodes")
    return Trajectory(
        stepper=spec.label,
        activations=activations,
        dirichlet=dirichlet,
        degenerate=degenerate,
        final=state,
        states=tuple(states),
    )
