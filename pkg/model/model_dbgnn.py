"""
model_dbgnn.py - DBGNN architecture: encoders, K DB T-step blocks with skip
connections, MLP decoder, optional mean pooling and head.

Parameters live in a flat dict of named numpy arrays:

    node_encoder.weight, node_encoder.bias, edge_encoder.weight, edge_encoder.bias
    layers.{k}.W_ne, layers.{k}.W_en, layers.{k}.W_beta_n, layers.{k}.W_beta_e
    skips.{k}.node, skips.{k}.edge
    decoder.0.weight, decoder.0.bias, decoder.1.weight, decoder.1.bias
    head.0.weight, head.0.bias, head.1.weight, head.1.bias   (only with a head)

Linear maps use the row convention y = x @ weight.T + bias. Blocks do not
share weights; the T steps inside a block do. After block k the ORIGINAL
encoder outputs are mixed back in through skips.{k}.

With layer_kind "mpnn_sigma" every block holds layers.{k}.W_n, W_e and beta_n
instead and iterates the MPNN-sigma update, for equal-depth baselines.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping, Optional

# Import external packages
import numpy as np
from scipy import sparse

# Import functions from local modules
from core.core_errors import ConfigError, DimensionMismatchError, InvalidSizeError
from core.core_graph import Graph
from core.core_dynamics import (
    DBWeights,
    FeatureState,
    MPNNWeights,
    check_dropout_rate,
    db1s_step,
    dropout_mask,
    get_nonlinearity,
    init_weights,
    mpnn_sigma_step,
    relu,
)
from model.model_tape import Tape, Var

LAYER_KINDS = ("db", "mpnn_sigma")
POOLING_MODES = ("none", "mean")

#####################################
# Configuration
#####################################


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults follow the power-grid setup."""

    d_n_in: int = 1
    d_e_in: int = 1
    d_out: int = 1
    K: int = 2
    T: int = 68
    hidden_n: int = 113
    hidden_e: int = 109
    dropout_n: float = 1.4e-2
    dropout_e: float = 1.9e-3
    nonlinearity: str = "tanh"
    pooling: str = "none"
    head: bool = False
    layer_kind: str = "db"
    edge_nonlinearity: bool = True
    spread: float = 0.1
    oscillatory: bool = True

    def __post_init__(self):
        if self.K < 1 or self.T < 1:
            raise InvalidSizeError(f"K and T must be >= 1, got K={self.K}, T={self.T}.")
        for name in ("d_n_in", "d_e_in", "d_out", "hidden_n", "hidden_e"):
            if getattr(self, name) < 1:
                raise InvalidSizeError(f"{name} must be >= 1.")
        if self.layer_kind not in LAYER_KINDS:
            raise ConfigError(f"layer_kind must be one of {LAYER_KINDS}.")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}.")
        if self.head and self.pooling == "none":
            raise ConfigError("A head MLP needs pooling.")
        check_dropout_rate(self.dropout_n)
        check_dropout_rate(self.dropout_e)
        get_nonlinearity(self.nonlinearity)

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**dict(data))


#####################################
# Model
#####################################


@dataclass(frozen=True)
class DBGNNModel:
    config: ModelConfig
    params: Mapping[str, np.ndarray]

    def with_params(self, params: Mapping[str, np.ndarray]) -> "DBGNNModel":
        missing = set(self.params) - set(params)
        if missing:
            raise ConfigError(f"Missing parameters: {sorted(missing)}")
        for name, value in self.params.items():
            if np.shape(params[name]) != value.shape:
                raise DimensionMismatchError(
                    f"{name} has shape {np.shape(params[name])}, expected {value.shape}."
                )
        return DBGNNModel(self.config, {k: np.asarray(params[k]) for k in self.params})

    @property
    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def blocks(self) -> dict[str, list[str]]:
        """Parameter names grouped by the component that owns them."""
        groups: dict[str, list[str]] = {}
        for name in self.params:
            prefix = name.rsplit(".", 1)[0]
            groups.setdefault(prefix, []).append(name)
        return groups


def _dense(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(in_dim), (out_dim, in_dim))


def init_model(config: ModelConfig, rng: np.random.Generator) -> DBGNNModel:
    """Random initial parameters; dynamics weights use init_weights."""
    c = config
    params: dict[str, np.ndarray] = {
        "node_encoder.weight": _dense(rng, c.hidden_n, c.d_n_in),
        "node_encoder.bias": np.zeros(c.hidden_n),
        "edge_encoder.weight": _dense(rng, c.hidden_e, c.d_e_in),
        "edge_encoder.bias": np.zeros(c.hidden_e),
    }
    for k in range(c.K):
        if c.layer_kind == "db":
            w = init_weights(c.hidden_n, c.hidden_e, c.spread, c.oscillatory, rng)
            params[f"layers.{k}.W_ne"] = w.W_ne
            params[f"layers.{k}.W_en"] = w.W_en
            params[f"layers.{k}.W_beta_n"] = w.W_beta_n
            params[f"layers.{k}.W_beta_e"] = w.W_beta_e
        else:
            params[f"layers.{k}.W_n"] = rng.normal(0.0, c.spread, (c.hidden_n, c.hidden_n))
            params[f"layers.{k}.W_e"] = rng.normal(0.0, c.spread, (c.hidden_n, c.hidden_n))
            params[f"layers.{k}.beta_n"] = rng.normal(0.0, c.spread, (c.hidden_n, c.hidden_n))
        params[f"skips.{k}.node"] = rng.normal(0.0, c.spread, (c.hidden_n, c.hidden_n))
        if c.layer_kind == "db":
            params[f"skips.{k}.edge"] = rng.normal(0.0, c.spread, (c.hidden_e, c.hidden_e))
    params["decoder.0.weight"] = _dense(rng, c.hidden_n, c.hidden_n)
    params["decoder.0.bias"] = np.zeros(c.hidden_n)
    params["decoder.1.weight"] = _dense(rng, c.d_out, c.hidden_n)
    params["decoder.1.bias"] = np.zeros(c.d_out)
    if c.head:
        params["head.0.weight"] = _dense(rng, c.d_out, c.d_out)
        params["head.0.bias"] = np.zeros(c.d_out)
        params["head.1.weight"] = _dense(rng, c.d_out, c.d_out)
        params["head.1.bias"] = np.zeros(c.d_out)
    return DBGNNModel(config, params)


def total_steps(model: DBGNNModel) -> int:
    """Node-to-node update steps in one forward pass: K * T."""
    return model.config.K * model.config.T


def layer_weights(model: DBGNNModel, k: int) -> DBWeights:
    if model.config.layer_kind != "db":
        raise ConfigError("layer_weights is only defined for DB blocks.")
    if not 0 <= k < model.config.K:
        raise InvalidSizeError(f"Block {k} out of range for K={model.config.K}.")
    p = model.params
    return DBWeights(
        W_ne=p[f"layers.{k}.W_ne"],
        W_en=p[f"layers.{k}.W_en"],
        W_beta_n=p[f"layers.{k}.W_beta_n"],
        W_beta_e=p[f"layers.{k}.W_beta_e"],
    )


def _mpnn_weights(params: Mapping[str, np.ndarray], k: int) -> MPNNWeights:
    return MPNNWeights(
        W_n=params[f"layers.{k}.W_n"],
        W_e=params[f"layers.{k}.W_e"],
        beta_n=params[f"layers.{k}.beta_n"],
    )


def _check_inputs(model: DBGNNModel, g: Graph, node_in: np.ndarray, edge_in: np.ndarray):
    c = model.config
    if node_in.shape != (g.num_nodes, c.d_n_in):
        raise DimensionMismatchError(
            f"node_in has shape {node_in.shape}, expected {(g.num_nodes, c.d_n_in)}."
        )
    if edge_in.shape != (g.num_directed_edges, c.d_e_in):
        raise DimensionMismatchError(
            f"edge_in has shape {edge_in.shape}, expected "
            f"{(g.num_directed_edges, c.d_e_in)}."
        )


#####################################
# Forward Pass (numpy)
#####################################


def dbts_forward(
    g: Graph,
    layer: DBWeights,
    T: int,
    dropout: tuple[float, float],
    s: FeatureState,
    train_mode: bool,
    rng: Optional[np.random.Generator],
    nonlinearity: str = "tanh",
) -> FeatureState:
    """DB T-step layer: T db1s steps sharing one weight set."""
    if T < 1:
        raise InvalidSizeError(f"T must be >= 1, got {T}.")
    node_rate, edge_rate = dropout
    for _ in range(T):
        s = db1s_step(g, layer, s, node_rate, train_mode, rng, nonlinearity, edge_rate)
    return s


def encode_inputs(model: DBGNNModel, node_in: np.ndarray, edge_in: np.ndarray) -> FeatureState:
    """Hidden-space state produced by the node and edge encoders."""
    p = model.params
    return FeatureState(
        np.asarray(node_in, dtype=np.float64) @ p["node_encoder.weight"].T + p["node_encoder.bias"],
        np.asarray(edge_in, dtype=np.float64) @ p["edge_encoder.weight"].T + p["edge_encoder.bias"],
    )


def _mean_pool_matrix(num_nodes: int) -> sparse.csr_matrix:
    return sparse.csr_matrix(np.full((1, num_nodes), 1.0 / num_nodes))


def dbgnn_forward(
    model: DBGNNModel,
    g: Graph,
    node_in: np.ndarray,
    edge_in: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[sparse.spmatrix] = None,
) -> np.ndarray:
    """
    Encode, run K T-step blocks with skips, decode, then pool and head.

    Returns |N| x d_out, or graphs x d_out when the model pools (one row for a
    single graph unless a pooling matrix is given).
    """
    c, p = model.config, model.params
    node_in = np.asarray(node_in, dtype=np.float64)
    edge_in = np.asarray(edge_in, dtype=np.float64)
    _check_inputs(model, g, node_in, edge_in)

    encoded = encode_inputs(model, node_in, edge_in)
    h_n, h_e = encoded.node_features, encoded.edge_features
    state = encoded
    for k in range(c.K):
        if c.layer_kind == "db":
            state = dbts_forward(
                g,
                layer_weights(model, k),
                c.T,
                (c.dropout_n, c.dropout_e),
                state,
                train_mode,
                rng,
                c.nonlinearity,
            )
            state = FeatureState(
                state.node_features + h_n @ p[f"skips.{k}.node"].T,
                state.edge_features + h_e @ p[f"skips.{k}.edge"].T,
            )
        else:
            w = _mpnn_weights(p, k)
            x = state.node_features
            for _ in range(c.T):
                x = mpnn_sigma_step(g, w, FeatureState(x, h_e), c.edge_nonlinearity).node_features
            state = FeatureState(x + h_n @ p[f"skips.{k}.node"].T, h_e)

    hidden = relu(state.node_features @ p["decoder.0.weight"].T + p["decoder.0.bias"])
    out = hidden @ p["decoder.1.weight"].T + p["decoder.1.bias"]
    if c.pooling == "mean":
        op = _mean_pool_matrix(g.num_nodes) if pool is None else pool
        out = op @ out
        if c.head:
            out = relu(out @ p["head.0.weight"].T + p["head.0.bias"])
            out = out @ p["head.1.weight"].T + p["head.1.bias"]
    return np.asarray(out)


#####################################
# Forward Pass (recorded on a tape)
#####################################


def _linear(tape: Tape, x: Var, weight: Var, bias: Var) -> Var:
    return tape.add(tape.matmul(x, weight, transpose_b=True), bias)


def trace_forward(
    model: DBGNNModel,
    g: Graph,
    node_in: np.ndarray,
    edge_in: np.ndarray,
    tape: Tape,
    params: Mapping[str, Var],
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[sparse.spmatrix] = None,
) -> Var:
    """
    Same computation as dbgnn_forward, recorded on the tape. params maps every
    parameter name to a tape leaf. Dropout masks are drawn from rng in the same
    order as the numpy path, so both agree for equal seeds.
    """
    c = model.config
    node_in = np.asarray(node_in, dtype=np.float64)
    edge_in = np.asarray(edge_in, dtype=np.float64)
    _check_inputs(model, g, node_in, edge_in)

    h_n = _linear(tape, tape.constant(node_in), params["node_encoder.weight"], params["node_encoder.bias"])
    h_e = _linear(tape, tape.constant(edge_in), params["edge_encoder.weight"], params["edge_encoder.bias"])
    x, e = h_n, h_e
    use_dropout = train_mode and (c.dropout_n > 0 or c.dropout_e > 0)
    if use_dropout and rng is None:
        raise ConfigError("Dropout in train mode needs a random generator.")

    for k in range(c.K):
        if c.layer_kind == "db":
            w_ne = params[f"layers.{k}.W_ne"]
            w_en = params[f"layers.{k}.W_en"]
            w_bn = params[f"layers.{k}.W_beta_n"]
            w_be = params[f"layers.{k}.W_beta_e"]
            for _ in range(c.T):
                x_next = tape.add(
                    tape.add(x, tape.matmul(tape.scatter_sum(e, g), w_ne, transpose_b=True)),
                    tape.matmul(x, w_bn, transpose_b=True),
                )
                e_next = tape.add(
                    tape.add(e, tape.matmul(tape.gather_diff(x, g), w_en, transpose_b=True)),
                    tape.scale(tape.matmul(e, w_be, transpose_b=True), -1.0),
                )
                if use_dropout:
                    x_next = tape.dropout(x_next, dropout_mask(rng, x_next.shape, c.dropout_n))
                    e_next = tape.dropout(e_next, dropout_mask(rng, e_next.shape, c.dropout_e))
                x = tape.activate(x_next, c.nonlinearity)
                e = tape.activate(e_next, c.nonlinearity)
            x = tape.add(x, tape.matmul(h_n, params[f"skips.{k}.node"], transpose_b=True))
            e = tape.add(e, tape.matmul(h_e, params[f"skips.{k}.edge"], transpose_b=True))
        else:
            w_n = params[f"layers.{k}.W_n"]
            w_e = params[f"layers.{k}.W_e"]
            b_n = params[f"layers.{k}.beta_n"]
            for _ in range(c.T):
                messages = tape.matmul(tape.gather_diff(x, g), w_e, transpose_b=True)
                if c.edge_nonlinearity:
                    messages = tape.relu(messages)
                x = tape.relu(
                    tape.add(
                        tape.matmul(tape.scatter_sum(messages, g), w_n, transpose_b=True),
                        tape.matmul(x, b_n, transpose_b=True),
                    )
                )
            x = tape.add(x, tape.matmul(h_n, params[f"skips.{k}.node"], transpose_b=True))

    hidden = tape.relu(_linear(tape, x, params["decoder.0.weight"], params["decoder.0.bias"]))
    out = _linear(tape, hidden, params["decoder.1.weight"], params["decoder.1.bias"])
    if c.pooling == "mean":
        out = tape.mean_pool(out, pool)
        if c.head:
            out = tape.relu(_linear(tape, out, params["head.0.weight"], params["head.0.bias"]))
            out = _linear(tape, out, params["head.1.weight"], params["head.1.bias"])
    return out
