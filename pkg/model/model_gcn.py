"""
model_gcn.py - deep GCN baseline for Dirichlet-energy comparisons.

Each layer computes x <- ReLU(A_hat x W_k) with the symmetric normalized
propagation A_hat = D~^(-1/2) (A + I) D~^(-1/2). No bias terms.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass

# Import external packages
import numpy as np
from scipy import sparse

# Import functions from local modules
from core.core_errors import ConfigError, DimensionMismatchError, InvalidSizeError
from core.core_graph import Graph, adjacency

#####################################
# Types
#####################################


@dataclass(frozen=True)
class GCNBaseline:
    """Layer weights; the propagation matrix comes from the graph at call time."""

    weights: tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]


#####################################
# Construction
#####################################


def normalized_adjacency(g: Graph) -> sparse.csr_matrix:
    """D~^(-1/2) (A + I) D~^(-1/2) with self-loops added."""
    a_tilde = adjacency(g) + sparse.identity(g.num_nodes, format="csr")
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a_tilde.sum(axis=1)).ravel())
    d = sparse.diags(inv_sqrt)
    return (d @ a_tilde @ d).tocsr()


def init_gcn(
    d_in: int, hidden: int, depth: int, spread: float, rng: np.random.Generator
) -> GCNBaseline:
    """Normal(0, spread^2) weights: d_in x hidden, then hidden x hidden."""
    if depth < 1:
        raise InvalidSizeError(f"GCN depth must be >= 1, got {depth}.")
    if spread <= 0:
        raise ConfigError(f"spread must be positive, got {spread}.")
    dims = [d_in] + [hidden] * depth
    return GCNBaseline(
        tuple(rng.normal(0.0, spread, (dims[k], dims[k + 1])) for k in range(depth))
    )


#####################################
# Forward Pass
#####################################


def gcn_forward(
    model: GCNBaseline, g: Graph, node_in: np.ndarray, depth: int
) -> list[np.ndarray]:
    """Embeddings after each of the first depth layers."""
    if not 1 <= depth <= model.depth:
        raise InvalidSizeError(f"depth must be in [1, {model.depth}], got {depth}.")
    x = np.asarray(node_in, dtype=np.float64)
    if x.shape != (g.num_nodes, model.d_in):
        raise DimensionMismatchError(
            f"node_in has shape {x.shape}, expected {(g.num_nodes, model.d_in)}."
        )
    a_hat = normalized_adjacency(g)
    embeddings = []
    for w in model.weights[:depth]:
        x = np.maximum(a_hat @ x @ w, 0.0)
        embeddings.append(x)
    return embeddings
