"""
core_graph.py - graph representation, generators and incidence/Laplacian construction.

Each undirected edge is stored once in canonical orientation (i < j) and twice
as directed edges: directed edge 2k is (i, j) and 2k + 1 is (j, i) for canonical
edge k. Node and edge features of the dynamics are indexed by directed edge id.

Graph text format (one undirected edge per line):

    nodes 3
    edge 0 1
    edge 1 2
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import pathlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Any

# Import external packages
import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

# Import functions from local modules
from core.core_errors import GraphFormatError, InvalidGraphError, InvalidSizeError
from utils.utils_logger import logger

# Sparse node-by-edge matrix, +1 at the smaller endpoint and -1 at the larger one.
IncidenceMatrix = sparse.csr_matrix

Edge = tuple[int, int]

#####################################
# Graph Type
#####################################


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with a directed-edge index."""

    num_nodes: int
    undirected_edges: tuple[Edge, ...]
    directed_edges: tuple[Edge, ...]
    neighbor_index: tuple[tuple[int, ...], ...]
    layout: Optional[tuple[int, int]] = field(default=None)

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Sequence[int]],
        layout: Optional[tuple[int, int]] = None,
    ) -> "Graph":
        """
        Build a graph from undirected node pairs in any orientation.

        Raises:
            InvalidSizeError: if num_nodes < 1.
            InvalidGraphError: on self-loops, duplicates or out-of-range ids.
        """
        if num_nodes < 1:
            raise InvalidSizeError(f"A graph needs at least one node, got {num_nodes}.")

        canonical: set[Edge] = set()
        for pair in edges:
            i, j = int(pair[0]), int(pair[1])
            if i == j:
                raise InvalidGraphError(f"Self-loop at node {i}.")
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise InvalidGraphError(
                    f"Edge ({i}, {j}) out of range for {num_nodes} nodes."
                )
            key = (min(i, j), max(i, j))
            if key in canonical:
                raise InvalidGraphError(f"Duplicate edge {key}.")
            canonical.add(key)

        undirected = tuple(sorted(canonical))
        directed: list[Edge] = []
        outgoing: list[list[int]] = [[] for _ in range(num_nodes)]
        for i, j in undirected:
            outgoing[i].append(len(directed))
            directed.append((i, j))
            outgoing[j].append(len(directed))
            directed.append((j, i))

        return cls(
            num_nodes=num_nodes,
            undirected_edges=undirected,
            directed_edges=tuple(directed),
            neighbor_index=tuple(tuple(ids) for ids in outgoing),
            layout=layout,
        )

    @property
    def num_edges(self) -> int:
        return len(self.undirected_edges)

    @property
    def num_directed_edges(self) -> int:
        return len(self.directed_edges)

    @cached_property
    def sources(self) -> np.ndarray:
        return np.array([i for i, _ in self.directed_edges], dtype=np.int64)

    @cached_property
    def targets(self) -> np.ndarray:
        return np.array([j for _, j in self.directed_edges], dtype=np.int64)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(ids) for ids in self.neighbor_index], dtype=np.int64)

    @cached_property
    def incidence_matrix(self) -> IncidenceMatrix:
        m = self.num_edges
        cols = np.repeat(np.arange(m), 2)
        rows = np.array([n for edge in self.undirected_edges for n in edge], dtype=np.int64)
        data = np.tile([1.0, -1.0], m)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.num_nodes, m))

    @cached_property
    def gather_matrix(self) -> sparse.csr_matrix:
        """Edge-gather-difference operator: (G x)[(i,j)] = x_i - x_j."""
        m = self.num_directed_edges
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([self.sources, self.targets])
        data = np.concatenate([np.ones(m), -np.ones(m)])
        return sparse.csr_matrix((data, (rows, cols)), shape=(m, self.num_nodes))

    @cached_property
    def scatter_matrix(self) -> sparse.csr_matrix:
        """Node-scatter-sum operator: (S e)[i] = sum of e over outgoing edges of i."""
        m = self.num_directed_edges
        return sparse.csr_matrix(
            (np.ones(m), (self.sources, np.arange(m))), shape=(self.num_nodes, m)
        )

    @cached_property
    def laplacian_matrix(self) -> sparse.csr_matrix:
        b = self.incidence_matrix
        return (b @ b.T).tocsr()


#####################################
# Generators
#####################################


def make_grid(rows: int, cols: int) -> Graph:
    """Rectangular 4-neighbour lattice with row-major node ids."""
    if rows < 1 or cols < 1:
        raise InvalidSizeError(f"Grid dimensions must be positive, got {rows}x{cols}.")
    edges = []
    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                edges.append((node, node + 1))
            if r + 1 < rows:
                edges.append((node, node + cols))
    return Graph.from_edges(rows * cols, edges, layout=(rows, cols))


def make_path(n: int) -> Graph:
    """Open path 0 - 1 - ... - (n-1)."""
    if n < 2:
        raise InvalidSizeError(f"A path needs at least 2 nodes, got {n}.")
    return make_grid(1, n)


def make_ladder(rungs: int) -> Graph:
    """Two parallel paths joined by rung edges, i.e. a 2 x rungs grid."""
    if rungs < 2:
        raise InvalidSizeError(f"A ladder needs at least 2 rungs, got {rungs}.")
    return make_grid(2, rungs)


def make_random_connected(
    n: int, rng: np.random.Generator, extra_edge_prob: float = 0.15
) -> Graph:
    """Random recursive spanning tree plus independent extra edges."""
    if n < 2:
        raise InvalidSizeError(f"A random connected graph needs n >= 2, got {n}.")
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        child = order[k]
        edges.add((min(parent, child), max(parent, child)))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < extra_edge_prob:
                edges.add((i, j))
    return Graph.from_edges(n, edges)


def make_random_regular(
    n: int, degree: int, rng: np.random.Generator, max_tries: int = 1000
) -> Graph:
    """Connected simple random regular graph via the configuration model."""
    if degree < 1 or degree >= n or (n * degree) % 2:
        raise InvalidSizeError(f"No simple {degree}-regular graph on {n} nodes.")
    stubs = np.repeat(np.arange(n), degree)
    for attempt in range(max_tries):
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        canonical = {(int(min(a, b)), int(max(a, b))) for a, b in pairs}
        if len(canonical) != len(pairs):
            continue
        g = Graph.from_edges(n, canonical)
        if is_connected(g):
            logger.debug(f"Random {degree}-regular graph found after {attempt + 1} tries.")
            return g
    raise InvalidGraphError(
        f"No connected {degree}-regular graph on {n} nodes after {max_tries} tries."
    )


#####################################
# Matrices
#####################################


def incidence(g: Graph) -> IncidenceMatrix:
    """Node-by-undirected-edge incidence matrix B."""
    return g.incidence_matrix


def laplacian(g: Graph) -> np.ndarray:
    """Dense graph Laplacian L = B B^T = D - A."""
    return g.laplacian_matrix.toarray()


def one_down_laplacian(g: Graph) -> np.ndarray:
    """Dense edge Laplacian B^T B."""
    b = g.incidence_matrix
    return (b.T @ b).toarray()


def adjacency(g: Graph) -> sparse.csr_matrix:
    """
    Symmetric 0/1 node adjacency matrix.

    Args:
        g (Graph): The graph.

    Returns:
        sparse.csr_matrix: num_nodes x num_nodes, one entry per directed edge.
    """
    return sparse.csr_matrix(
        (np.ones(g.num_directed_edges), (g.sources, g.targets)),
        shape=(g.num_nodes, g.num_nodes),
    )


#####################################
# Structure Helpers
#####################################


def is_connected(g: Graph) -> bool:
    count, _ = csgraph.connected_components(adjacency(g), directed=False)
    return count == 1


def distances(g: Graph) -> np.ndarray:
    """All-pairs hop distances; unreachable pairs are inf."""
    return csgraph.shortest_path(adjacency(g), directed=False, unweighted=True)


def relabel(g: Graph, perm: Sequence[int]) -> Graph:
    """Rename node i to perm[i]."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(g.num_nodes)):
        raise InvalidGraphError("Relabeling must be a permutation of the node ids.")
    return Graph.from_edges(
        g.num_nodes, [(perm[i], perm[j]) for i, j in g.undirected_edges]
    )


def disjoint_union(graphs: Sequence[Graph]) -> tuple[Graph, np.ndarray]:
    """
    Concatenate graphs into one graph.

    Returns the union and the node offset of every member. Directed edges of the
    union are the members' directed edges in order.
    """
    if not graphs:
        raise InvalidSizeError("Cannot build the union of zero graphs.")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    edges = [
        (i + off, j + off)
        for g, off in zip(graphs, offsets)
        for i, j in g.undirected_edges
    ]
    union = Graph.from_edges(int(sum(g.num_nodes for g in graphs)), edges)
    return union, offsets


#####################################
# Text Format
#####################################


def parse_graph_text(text: str) -> Graph:
    """Parse the 'nodes N' / 'edge i j' format; '#' starts a comment."""
    num_nodes: Optional[int] = None
    edges: list[Edge] = []
    seen: set[Edge] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "nodes" and len(parts) == 2 and num_nodes is None:
                num_nodes = int(parts[1])
            elif parts[0] == "edge" and len(parts) == 3 and num_nodes is not None:
                i, j = int(parts[1]), int(parts[2])
                key = (min(i, j), max(i, j))
                if i == j:
                    raise GraphFormatError(f"line {lineno}: self-loop at node {i}")
                if key in seen:
                    raise GraphFormatError(f"line {lineno}: duplicate edge {key}")
                seen.add(key)
                edges.append((i, j))
            else:
                raise GraphFormatError(f"line {lineno}: unexpected '{line}'")
        except ValueError as e:
            if isinstance(e, GraphFormatError):
                raise
            raise GraphFormatError(f"line {lineno}: {e}") from e
    if num_nodes is None:
        raise GraphFormatError("missing 'nodes <N>' header")
    try:
        return Graph.from_edges(num_nodes, edges)
    except InvalidGraphError as e:
        raise GraphFormatError(str(e)) from e


def load_graph(path: pathlib.Path) -> Graph:
    """
    Read a graph file in the text format.

    Args:
        path (pathlib.Path): File with a 'nodes N' header and 'edge i j' lines.

    Returns:
        Graph: The parsed graph.

    Raises:
        GraphFormatError: if the file is missing or malformed.
    """
    path = pathlib.Path(path)
    logger.info(f"Loading graph from {path}")
    try:
        return parse_graph_text(path.read_text())
    except FileNotFoundError as e:
        raise GraphFormatError(f"Graph file not found: {path}") from e


def format_graph_text(g: Graph) -> str:
    """
    Inverse of parse_graph_text.

    Args:
        g (Graph): The graph to write.

    Returns:
        str: Header line, then one 'edge i j' line per undirected edge, i < j.
    """
    lines = [f"nodes {g.num_nodes}"]
    lines += [f"edge {i} {j}" for i, j in g.undirected_edges]
    return "\n".join(lines) + "\n"


#####################################
# Config Builder
#####################################


def build_graph(spec: Mapping[str, Any], rng: Optional[np.random.Generator] = None) -> Graph:
    """
    Build a graph from a config mapping.

    Families: path (size), grid (rows, cols), ladder (size = rungs),
    random (size, extra_edge_prob), regular (size, degree), file (path).
    """
    family = spec["family"]
    rng = rng if rng is not None else np.random.default_rng(0)
    if family == "path":
        return make_path(spec["size"])
    if family == "grid":
        return make_grid(spec["rows"], spec["cols"])
    if family == "ladder":
        return make_ladder(spec["size"])
    if family == "random":
        return make_random_connected(
            spec["size"], rng, spec.get("extra_edge_prob", 0.15)
        )
    if family == "regular":
        return make_random_regular(spec["size"], spec.get("degree", 3), rng)
    if family == "file":
        return load_graph(pathlib.Path(spec["path"]))
    raise InvalidGraphError(f"Unknown graph family '{family}'.")
