"""
test_graph.py - graph construction, generators, incidence matrices and the text format.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.core_errors import GraphFormatError, InvalidGraphError, InvalidSizeError
from core.core_graph import (
    Graph,
    adjacency,
    build_graph,
    disjoint_union,
    distances,
    format_graph_text,
    incidence,
    is_connected,
    laplacian,
    load_graph,
    make_grid,
    make_ladder,
    make_path,
    make_random_connected,
    make_random_regular,
    one_down_laplacian,
    parse_graph_text,
    relabel,
)
from utils.utils_config import DATA_FOLDER


def test_directed_edges_pair_up():
    g = Graph.from_edges(3, [(1, 0), (2, 1)])
    assert g.undirected_edges == ((0, 1), (1, 2))
    assert g.directed_edges == ((0, 1), (1, 0), (1, 2), (2, 1))
    assert g.num_edges == 2
    assert g.num_directed_edges == 4
    assert g.neighbor_index == ((0,), (1, 2), (3,))


def test_single_node_graph_is_allowed():
    g = Graph.from_edges(1, [])
    assert g.num_edges == 0
    assert laplacian(g).shape == (1, 1)


@pytest.mark.parametrize(
    "n, edges, error",
    [
        (0, [], InvalidSizeError),
        (3, [(1, 1)], InvalidGraphError),
        (3, [(0, 3)], InvalidGraphError),
        (3, [(0, 1), (1, 0)], InvalidGraphError),
    ],
)
def test_invalid_graphs_rejected(n, edges, error):
    with pytest.raises(error):
        Graph.from_edges(n, edges)


def test_single_edge_incidence():
    g = make_path(2)
    assert np.array_equal(incidence(g).toarray(), np.array([[1.0], [-1.0]]))
    assert np.array_equal(laplacian(g), np.array([[1.0, -1.0], [-1.0, 1.0]]))


def test_path3_laplacian():
    expected = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
    assert np.array_equal(laplacian(make_path(3)), expected)


def test_one_down_laplacian_path3():
    expected = np.array([[2.0, -1.0], [-1.0, 2.0]])
    assert np.array_equal(one_down_laplacian(make_path(3)), expected)


def test_grid_layout_and_counts():
    g = make_grid(5, 20)
    assert g.layout == (5, 20)
    assert g.num_nodes == 100
    assert g.num_edges == 5 * 19 + 4 * 20
    assert g.degrees.max() == 4


def test_ladder_is_two_row_grid():
    g = make_ladder(6)
    assert g.layout == (2, 6)
    assert g.num_edges == 2 * 5 + 6


@pytest.mark.parametrize("factory, arg", [(make_path, 1), (make_ladder, 1)])
def test_generators_reject_tiny_sizes(factory, arg):
    with pytest.raises(InvalidSizeError):
        factory(arg)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 10_000))
def test_random_connected_is_connected(n, seed):
    g = make_random_connected(n, np.random.default_rng(seed))
    assert g.num_nodes == n
    assert is_connected(g)
    assert g.num_edges >= n - 1


def test_random_regular_degrees():
    g = make_random_regular(20, 3, np.random.default_rng(4))
    assert np.all(g.degrees == 3)
    assert is_connected(g)


def test_random_regular_rejects_odd_stub_count():
    with pytest.raises(InvalidSizeError):
        make_random_regular(5, 3, np.random.default_rng(0))


def test_distances_on_path():
    d = distances(make_path(5))
    assert d[0, 4] == 4
    assert d[2, 0] == 2


def test_adjacency_is_symmetric():
    a = adjacency(make_grid(3, 4)).toarray()
    assert np.array_equal(a, a.T)
    assert np.array_equal(a.sum(axis=1), make_grid(3, 4).degrees)


def test_gather_scatter_duality():
    rng = np.random.default_rng(1)
    g = make_random_connected(12, rng)
    x = rng.normal(size=(g.num_nodes, 3))
    y = rng.normal(size=(g.num_directed_edges, 3))
    lhs = np.sum((g.gather_matrix @ x) * y)
    rhs = np.sum(x * (g.gather_matrix.T @ y))
    assert abs(lhs - rhs) < 1e-12


def test_relabel_preserves_laplacian_up_to_permutation():
    g = make_random_connected(8, np.random.default_rng(2))
    perm = np.random.default_rng(3).permutation(8)
    h = relabel(g, perm)
    p = np.zeros((8, 8))
    p[perm, np.arange(8)] = 1.0
    assert np.allclose(laplacian(h), p @ laplacian(g) @ p.T)


def test_relabel_rejects_non_permutation():
    with pytest.raises(InvalidGraphError):
        relabel(make_path(3), [0, 0, 1])


def test_disjoint_union_offsets():
    union, offsets = disjoint_union([make_path(3), make_path(4)])
    assert union.num_nodes == 7
    assert list(offsets) == [0, 3]
    assert not is_connected(union)
    assert (3, 4) in union.undirected_edges


def test_text_round_trip():
    g = make_grid(2, 3)
    h = parse_graph_text(format_graph_text(g))
    assert h.undirected_edges == g.undirected_edges


def test_format_graph_text_lists_each_edge_once():
    assert format_graph_text(relabel(make_path(3), [2, 1, 0])) == "nodes 3\nedge 0 1\nedge 1 2\n"


def test_text_comments_and_blank_lines():
    g = parse_graph_text("# header\nnodes 3\n\nedge 0 1  # first\nedge 1 2\n")
    assert g.num_edges == 2


@pytest.mark.parametrize(
    "text, line",
    [
        ("edge 0 1\n", "line 1"),
        ("nodes 3\nedge 0 0\n", "line 2"),
        ("nodes 3\nedge 0 1\nedge 1 0\n", "line 3"),
        ("nodes 3\nedge 0 x\n", "line 2"),
        ("nodes 3\nvertex 1\n", "line 2"),
    ],
)
def test_text_errors_name_the_line(text, line):
    with pytest.raises(GraphFormatError, match=line):
        parse_graph_text(text)


def test_sample_graph_file_loads():
    g = load_graph(DATA_FOLDER.joinpath("graphs", "triangle_tail.txt"))
    assert g.num_nodes == 5
    assert g.num_edges == 5


def test_missing_graph_file():
    with pytest.raises(GraphFormatError):
        load_graph(DATA_FOLDER.joinpath("graphs", "does_not_exist.txt"))


def test_build_graph_families():
    rng = np.random.default_rng(0)
    assert build_graph({"family": "path", "size": 4}, rng).num_nodes == 4
    assert build_graph({"family": "grid", "rows": 2, "cols": 3}, rng).layout == (2, 3)
    assert build_graph({"family": "ladder", "size": 5}, rng).num_nodes == 10
    assert is_connected(build_graph({"family": "random", "size": 9}, rng))
    assert np.all(build_graph({"family": "regular", "size": 10, "degree": 3}, rng).degrees == 3)
    with pytest.raises(InvalidGraphError):
        build_graph({"family": "torus"}, rng)
