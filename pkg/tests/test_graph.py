import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cft2nn.errors import ConfigError, FormatError, IntegrityError
from cft2nn.graph import Graph, load_tudataset, normalized_adjacency, split_dataset

from conftest import path_graph, random_graph, triangle


def write_tu(tmp_path, name, a_lines, indicator, labels, node_labels=None):
    (tmp_path / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (tmp_path / f"{name}_graph_indicator.txt").write_text("\n".join(map(str, indicator)) + "\n")
    (tmp_path / f"{name}_graph_labels.txt").write_text("\n".join(map(str, labels)) + "\n")
    if node_labels is not None:
        (tmp_path / f"{name}_node_labels.txt").write_text("\n".join(map(str, node_labels)) + "\n")


def test_load_triangle_fixture(tmp_path):
    write_tu(tmp_path, "TRI", ["1, 2", "2, 1", "2, 3", "3, 2", "1, 3", "3, 1"], [1, 1, 1], [0])
    data = load_tudataset(tmp_path, "TRI")
    assert len(data) == 1
    g = data[0].graph
    assert g.node_count == 3 and g.edge_count == 3
    assert data[0].label == 0
    # no attributes and no node labels -> one constant feature
    np.testing.assert_array_equal(g.node_features, np.ones((3, 1)))


def test_load_remaps_labels_and_one_hots(tmp_path):
    write_tu(tmp_path, "X", ["1, 2", "3, 4"], [1, 1, 2, 2], [-1, 1], node_labels=[5, 7, 7, 9])
    data = load_tudataset(tmp_path, "X")
    assert [d.label for d in data] == [0, 1]
    np.testing.assert_array_equal(data[0].graph.node_features, [[1, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(data[1].graph.node_features, [[0, 1, 0], [0, 0, 1]])


def test_load_missing_file(tmp_path):
    write_tu(tmp_path, "X", ["1, 2"], [1, 1], [0])
    (tmp_path / "X_graph_labels.txt").unlink()
    with pytest.raises(FormatError, match="X_graph_labels.txt"):
        load_tudataset(tmp_path, "X")


def test_load_cross_graph_edge_reports_line(tmp_path):
    write_tu(tmp_path, "X", ["1, 2", "2, 3"], [1, 1, 2], [0, 1])
    with pytest.raises(IntegrityError, match=":2:"):
        load_tudataset(tmp_path, "X")


def test_load_mutag_statistics(mutag_dir):
    data = load_tudataset(mutag_dir, "MUTAG")
    assert len(data) == 188
    assert {d.label for d in data} == {0, 1}
    assert np.mean([d.graph.node_count for d in data]) == pytest.approx(17.93, abs=0.05)
    assert np.mean([d.graph.edge_count for d in data]) == pytest.approx(19.79, abs=0.05)
    for d in data:
        a = d.graph.adjacency()
        assert np.array_equal(a, a.T) and not a.diagonal().any()
        assert d.graph.node_features.shape[0] == d.graph.node_count


def test_graph_rejects_bad_input():
    with pytest.raises(IntegrityError):
        Graph.from_edges(2, [(0, 0)])
    with pytest.raises(IntegrityError):
        Graph.from_edges(2, [(0, 1), (1, 0)])
    with pytest.raises(IntegrityError):
        Graph.from_edges(2, [(0, 2)])


def test_graph_is_immutable():
    g = triangle()
    with pytest.raises(ValueError):
        g.edges[0, 0] = 2


def test_split_mutag_sizes():
    s = split_dataset(188, (0.5, 0.2, 0.21, 0.09), seed=7)
    # floor: 94 + 37 + 39 + 16 = 186, remainder 2 goes to train
    assert tuple(map(len, (s.train, s.valid, s.calib, s.test))) == (96, 37, 39, 16)


def test_split_exact_division():
    s = split_dataset(100, (0.25,) * 4, seed=0)
    parts = [set(p) for p in (s.train, s.valid, s.calib, s.test)]
    assert all(len(p) == 25 for p in parts)
    assert set().union(*parts) == set(range(100))


def test_split_deterministic():
    a = split_dataset(188, (0.5, 0.09, 0.21, 0.2), 3)
    b = split_dataset(188, (0.5, 0.09, 0.21, 0.2), 3)
    assert a == b


def test_split_bad_ratios():
    with pytest.raises(ConfigError):
        split_dataset(100, (0.5, 0.2, 0.2, 0.2), 0)
    with pytest.raises(ConfigError):
        split_dataset(3, (0.25,) * 4, 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(10, 2000), seed=st.integers(0, 2**31 - 1))
def test_split_partitions(n, seed):
    s = split_dataset(n, (0.5, 0.09, 0.21, 0.2), seed)
    parts = [s.train, s.valid, s.calib, s.test]
    assert sum(map(len, parts)) == n
    assert sorted(i for p in parts for i in p) == list(range(n))


def test_normalized_adjacency_examples():
    np.testing.assert_allclose(normalized_adjacency(path_graph(2)), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(normalized_adjacency(Graph.from_edges(1)), [[1.0]])
    np.testing.assert_allclose(normalized_adjacency(triangle()), np.full((3, 3), 1 / 3))


def test_normalized_adjacency_literal_switch():
    # path 0-1-2: D~ = diag(2, 3, 2)
    lit = normalized_adjacency(path_graph(3), literal=True)
    d = np.array([2.0, 3.0, 2.0])
    a = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], float)
    np.testing.assert_allclose(lit, np.diag(d ** -0.5) @ a @ np.diag(d ** 0.5))
    assert not np.allclose(lit, lit.T)


def test_normalized_adjacency_spectral_radius(rng):
    for _ in range(50):
        g = random_graph(rng, n_max=20)
        a = normalized_adjacency(g)
        assert np.allclose(a, a.T)
        v = np.ones(g.node_count)
        lam = 0.0
        for _ in range(500):
            w = a @ (a @ v)  # A^2 is PSD so power iteration converges to rho^2
            lam = np.linalg.norm(w)
            v = w / lam
        assert np.sqrt(lam) <= 1 + 1e-9
