"""
core_dirac.py - topological Dirac operator with mass term and its spectrum.

The operator acts on stacked (node, edge) features:

    | beta*I_N      b*B      |
    | b*B^T      -beta*I_E   |

with one edge column per canonical undirected edge. Eigenpairs are computed
with a dense cyclic Jacobi solver.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass

# Import external packages
import numpy as np
from scipy import sparse

# Import functions from local modules
from core.core_errors import DimensionMismatchError, InvalidSizeError, NumericFailureError
from core.core_graph import Graph, laplacian, one_down_laplacian
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

DEFAULT_MAX_SIZE = 512
DEFAULT_MAX_SWEEPS = 100
DEFAULT_TOLERANCE = 1e-12

# Eigenvalues below this magnitude count as kernel modes.
ZERO_TOLERANCE = 1e-9

#####################################
# Types
#####################################


@dataclass(frozen=True)
class DiracOperator:
    matrix: np.ndarray
    b: float
    beta: float
    n_nodes: int
    n_edges: int

    @property
    def size(self) -> int:
        return self.n_nodes + self.n_edges


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues; eigenvector columns stack node part over edge part."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual: float
    orthonormality_error: float
    sweeps: int


@dataclass(frozen=True)
class SpectralReport:
    pos_count: int
    neg_count: int
    zero_count: int
    min_abs_nonkernel: float
    gap_holds: bool
    gated: bool
    counts_match_blocks: bool
    residual: float

    def as_dict(self) -> dict:
        return {
            "pos_count": self.pos_count,
            "neg_count": self.neg_count,
            "zero_count": self.zero_count,
            "min_abs_nonkernel": self.min_abs_nonkernel,
            "gap_holds": self.gap_holds,
            "gated": self.gated,
            "counts_match_blocks": self.counts_match_blocks,
            "residual": self.residual,
        }


#####################################
# Assembly
#####################################


def assemble(g: Graph, b: float, beta: float) -> DiracOperator:
    """Dense symmetric Dirac operator with coupling b and mass beta."""
    n, m = g.num_nodes, g.num_edges
    coupling = float(b) * g.incidence_matrix
    mass_n = sparse.identity(n, format="csr") * float(beta)
    mass_e = sparse.identity(m, format="csr") * -float(beta)
    if m == 0:
        block = mass_n
    else:
        block = sparse.bmat([[mass_n, coupling], [coupling.T, mass_e]])
    matrix = np.asarray(block.toarray(), dtype=np.float64)
    return DiracOperator(matrix=matrix, b=float(b), beta=float(beta), n_nodes=n, n_edges=m)


def operator_identity_residuals(g: Graph, b: float) -> dict[str, float]:
    """
    Max-abs residuals of B B^T = L and D^2 = b^2 diag(B B^T, B^T B) at beta = 0.
    """
    b_dense = g.incidence_matrix.toarray()
    lap = laplacian(g)
    deg = np.diag(g.degrees.astype(np.float64))
    adj = np.zeros_like(lap)
    adj[g.sources, g.targets] = 1.0
    dirac = assemble(g, b, 0.0).matrix
    expected = np.zeros_like(dirac)
    n = g.num_nodes
    expected[:n, :n] = b_dense @ b_dense.T
    expected[n:, n:] = one_down_laplacian(g)
    expected *= float(b) ** 2
    return {
        "incidence_laplacian": float(np.max(np.abs(b_dense @ b_dense.T - (deg - adj)))),
        "laplacian_degree_adjacency": float(np.max(np.abs(lap - (deg - adj)))),
        "dirac_square": float(np.max(np.abs(dirac @ dirac - expected))),
    }


#####################################
# Cyclic Jacobi Eigensolver
#####################################


def _off_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _rotation(app: float, aqq: float, apq: float) -> tuple[float, float]:
    theta = (aqq - app) / (2.0 * apq)
    if abs(theta) > 1e150:
        t = 1.0 / (2.0 * theta)
    else:
        sign = 1.0 if theta >= 0 else -1.0
        t = sign / (abs(theta) + math.sqrt(theta * theta + 1.0))
    c = 1.0 / math.sqrt(t * t + 1.0)
    return c, t * c


def eigendecompose(
    op: DiracOperator,
    max_size: int = DEFAULT_MAX_SIZE,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    tol: float = DEFAULT_TOLERANCE,
) -> Spectrum:
    """
    Full eigendecomposition of the symmetric operator matrix by cyclic Jacobi sweeps.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    tol * max(1, ||A||_F). For operators with ||A||_F <= 1 that is the absolute
    test off(A) < tol; larger operators get a threshold scaled by their norm,
    since rounding in each rotation is relative to the entries it mixes.

    Raises:
        InvalidSizeError: if the matrix is larger than max_size.
        NumericFailureError: if off-diagonal mass remains after max_sweeps.
    """
    a = np.array(op.matrix, dtype=np.float64, copy=True)
    size = a.shape[0]
    if a.shape != (size, size):
        raise DimensionMismatchError(f"Operator matrix must be square, got {a.shape}.")
    if size > max_size:
        raise InvalidSizeError(f"Operator size {size} exceeds the cap of {max_size}.")
    if not np.allclose(a, a.T, atol=1e-12, rtol=0.0):
        raise NumericFailureError("Operator matrix is not symmetric.")

    v = np.eye(size)
    scale = max(1.0, float(np.linalg.norm(a)))
    sweeps = 0
    while _off_norm(a) >= tol * scale:
        if sweeps >= max_sweeps:
            raise NumericFailureError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {_off_norm(a):.3e})."
            )
        for p in range(size - 1):
            for q in range(p + 1, size):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = _rotation(a[p, p], a[q, q], apq)
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
        sweeps += 1
        logger.debug(f"Jacobi sweep {sweeps}: off-diagonal norm {_off_norm(a):.3e}")

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    values, vectors = values[order], v[:, order]

    if size:
        residual = float(np.max(np.linalg.norm(op.matrix @ vectors - vectors * values, axis=0)))
        ortho = float(np.max(np.abs(vectors.T @ vectors - np.eye(size))))
    else:
        residual = ortho = 0.0
    return Spectrum(
        eigenvalues=values,
        eigenvectors=vectors,
        residual=residual,
        orthonormality_error=ortho,
        sweeps=sweeps,
    )


#####################################
# Spectral Claims
#####################################


def verify_spectral_claims(
    spec: Spectrum, beta: float, n_nodes: int, n_edges: int
) -> SpectralReport:
    """
    Count signs and check the mass gap min |lambda| >= |beta|.

    With beta = 0 the gap is not gated and kernel modes are excluded from the
    sign counts. For beta > 0 the positive count equals n_nodes and the negative
    count equals n_edges; the roles swap for beta < 0.
    """
    values = np.asarray(spec.eigenvalues, dtype=np.float64)
    if len(values) != n_nodes + n_edges:
        raise DimensionMismatchError(
            f"Spectrum has {len(values)} eigenvalues, expected {n_nodes + n_edges}."
        )
    magnitudes = np.abs(values)
    kernel = magnitudes < ZERO_TOLERANCE
    pos = int(np.sum(values >= ZERO_TOLERANCE))
    neg = int(np.sum(values <= -ZERO_TOLERANCE))
    nonkernel = magnitudes[~kernel]
    min_abs = float(np.min(nonkernel)) if len(nonkernel) else float("nan")

    gated = beta != 0
    gap_holds = True
    if gated and len(values):
        gap_holds = bool(np.min(magnitudes) >= abs(beta) - ZERO_TOLERANCE)

    if beta > 0:
        counts_match = pos == n_nodes and neg == n_edges
    elif beta < 0:
        counts_match = pos == n_edges and neg == n_nodes
    else:
        counts_match = pos == neg

    return SpectralReport(
        pos_count=pos,
        neg_count=neg,
        zero_count=int(np.sum(kernel)),
        min_abs_nonkernel=min_abs,
        gap_holds=gap_holds,
        gated=gated,
        counts_match_blocks=counts_match,
        residual=spec.residual,
    )
