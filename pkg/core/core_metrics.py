"""
core_metrics.py - Dirichlet energy, prediction metrics and front tracking.

Dirichlet energy measures how different the features of adjacent nodes are:

    DE(x) = tr(x^T L x) / tr(x^T x)
          = sum over undirected edges ||x_i - x_j||^2 / sum over nodes ||x_i||^2

Each unordered edge is counted once so that both forms agree.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass
from typing import Sequence, TYPE_CHECKING

# Import external packages
import numpy as np

# Import functions from local modules
from core.core_errors import (
    ConfigError,
    DimensionMismatchError,
    InvalidSizeError,
    NumericFailureError,
)
from core.core_graph import Graph

if TYPE_CHECKING:
    from core.core_dynamics import Trajectory

#####################################
# Dirichlet Energy
#####################################


def _as_matrix(g: Graph, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != g.num_nodes:
        raise DimensionMismatchError(
            f"Expected {g.num_nodes} node rows, got {x.shape[0]}."
        )
    return x


def is_degenerate(x: np.ndarray) -> bool:
    """True when every feature is zero, where the energy is reported as 0."""
    return not np.any(np.asarray(x))


def dirichlet_trace(g: Graph, x: np.ndarray) -> float:
    """tr(x^T L x) / tr(x^T x); 0.0 for an all-zero embedding."""
    x = _as_matrix(g, x)
    norm = float(np.sum(x * x))
    if norm == 0.0:
        return 0.0
    return float(np.sum(x * (g.laplacian_matrix @ x))) / norm


def dirichlet_edges(g: Graph, x: np.ndarray) -> float:
    """Squared feature differences over undirected edges, normalized; 0.0 if all zero."""
    x = _as_matrix(g, x)
    norm = float(np.sum(x * x))
    if norm == 0.0 or g.num_edges == 0:
        return 0.0
    diff = g.incidence_matrix.T @ x
    return float(np.sum(diff * diff)) / norm


@dataclass(frozen=True)
class DirichletSeries:
    values: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def dirichlet_series(g: Graph, node_states: Sequence[np.ndarray]) -> DirichletSeries:
    """Per-step normalized Dirichlet energy of a sequence of node embeddings."""
    values = np.array([dirichlet_trace(g, x) for x in node_states], dtype=np.float64)
    flags = np.array([is_degenerate(x) for x in node_states], dtype=bool)
    return DirichletSeries(values=values, degenerate=flags)


#####################################
# Prediction Metrics
#####################################


def _paired(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise DimensionMismatchError(
            f"Prediction has {p.size} values, target has {t.size}."
        )
    return p, t


def r_squared(pred, target) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    p, t = _paired(pred, target)
    if p.size < 2:
        raise InvalidSizeError("R^2 needs at least two values.")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise NumericFailureError("R^2 is undefined for a constant target.")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def mae(pred, target) -> float:
    p, t = _paired(pred, target)
    if p.size == 0:
        raise InvalidSizeError("MAE of an empty input.")
    return float(np.mean(np.abs(p - t)))


#####################################
# Front Tracking
#####################################


def front_arrival(traj: "Trajectory", threshold_fraction: float) -> np.ndarray:
    """
    First step at which each node's activation exceeds
    threshold_fraction * (global max activation). Unreached nodes are NaN.
    """
    if not 0.0 < threshold_fraction < 1.0:
        raise ConfigError(
            f"threshold_fraction must be in (0, 1), got {threshold_fraction}."
        )
    act = np.asarray(traj.activations, dtype=np.float64)
    arrivals = np.full(act.shape[1], np.nan)
    peak = float(np.max(act)) if act.size else 0.0
    if peak == 0.0:
        return arrivals
    above = act > threshold_fraction * peak
    reached = above.any(axis=0)
    arrivals[reached] = np.argmax(above[:, reached], axis=0)
    return arrivals


def front_slope(arrivals: np.ndarray, far_field_fraction: float = 0.5) -> float:
    """
    Log-log slope of arrival step against node index over the far field.

    Nodes with index >= max(1, far_field_fraction * furthest reached index) and a
    positive arrival step are fitted. Returns inf when fewer than two remain,
    which is how a stalled front reads.
    """
    arrivals = np.asarray(arrivals, dtype=np.float64)
    index = np.arange(len(arrivals))
    reached = np.isfinite(arrivals) & (arrivals > 0) & (index >= 1)
    if not reached.any():
        return float("inf")
    cutoff = max(1.0, far_field_fraction * float(index[reached].max()))
    fit = reached & (index >= cutoff)
    if int(fit.sum()) < 2:
        return float("inf")
    slope, _ = np.polyfit(np.log(index[fit]), np.log(arrivals[fit]), 1)
    return float(slope)
