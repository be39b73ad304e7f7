import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from graphac import tensor as T
from graphac.errors import ContractError, DimensionError, GraphParseError, GraphValidationError
from graphac.graphs import (Graph, batch_graphs, degree_statistics, generate_synthetic_dataset, is_connected,
                            mean_degree, parse_graph_file, split_dataset, write_graph_file)
from graphac.verify import random_graph


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- parsing


def test_parse_example_line(tmp_path):
    p = write_lines(tmp_path / "g.jsonl", ['{"num_nodes":2, "node_feat":[[1,0],[0,1]], "edges":[[0,1]]}'])
    (g,) = parse_graph_file(p)
    assert g.num_nodes == 2 and g.num_edges == 2
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 0)]


def test_parse_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("", encoding="utf-8")
    assert parse_graph_file(p) == []


def test_out_of_range_edge_reports_line(tmp_path):
    p = write_lines(tmp_path / "g.jsonl", [
        '{"num_nodes":1, "node_feat":[[1]], "edges":[]}',
        '{"num_nodes":2, "node_feat":[[1,0],[0,1]], "edges":[[0,5]]}',
    ])
    with pytest.raises(GraphValidationError, match="line 2"):
        parse_graph_file(p)


def test_malformed_json_reports_line(tmp_path):
    p = write_lines(tmp_path / "g.jsonl", ['{"num_nodes":1, "node_feat":[[1]], "edges":[]}', "{oops"])
    with pytest.raises(GraphParseError) as info:
        parse_graph_file(p)
    assert info.value.line == 2


def test_unknown_keys_rejected(tmp_path):
    p = write_lines(tmp_path / "g.jsonl", ['{"num_nodes":1, "node_feat":[[1]], "edges":[], "label":3}'])
    with pytest.raises(GraphValidationError, match="unknown"):
        parse_graph_file(p)


def test_edge_features_mirror_with_edges(tmp_path):
    rec = {"num_nodes": 3, "node_feat": [[0], [1], [2]], "edges": [[0, 1], [1, 2]],
           "edge_feat": [[10.0], [20.0]]}
    p = write_lines(tmp_path / "g.jsonl", [json.dumps(rec)])
    (g,) = parse_graph_file(p)
    assert g.edge_feat.shape == (4, 1)
    for (s, d), f in zip(g.edges, g.edge_feat[:, 0]):
        assert f == (10.0 if {s, d} == {0, 1} else 20.0)


def test_edge_feature_row_count_checked():
    with pytest.raises(GraphValidationError):
        Graph(3, np.zeros((3, 1)), [[0, 1], [1, 2]], np.zeros((3, 2)))


def test_roundtrip_is_identity(tmp_path):
    graphs = generate_synthetic_dataset(seed=3, count=25)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_graph_file(graphs, p1)
    back = parse_graph_file(p1)
    write_graph_file(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for a, b in zip(graphs, back):
        assert a.num_nodes == b.num_nodes
        np.testing.assert_array_equal(a.node_feat, b.node_feat)
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.edge_feat, b.edge_feat)


# ---------------------------------------------------------------- batching


def path_graph(n, d=1, value=0.0):
    return Graph(n, np.full((n, d), value), [[k, k + 1] for k in range(n - 1)])


def test_batch_offsets_and_segments():
    b = batch_graphs([path_graph(3), path_graph(2)])
    np.testing.assert_array_equal(b.segment_ids, [0, 0, 0, 1, 1])
    assert (3, 4) in set(zip(b.src.tolist(), b.dst.tolist()))
    assert b.num_graphs == 2


def test_single_graph_batch_is_the_graph():
    g = random_graph(np.random.default_rng(1))
    b = batch_graphs([g])
    np.testing.assert_array_equal(b.node_feat, g.node_feat)
    np.testing.assert_array_equal(np.stack([b.src, b.dst], 1), g.edges)
    assert not b.segment_ids.any()


def test_mixed_widths_rejected():
    with pytest.raises(DimensionError):
        batch_graphs([path_graph(2, d=1), path_graph(2, d=2)])
    with pytest.raises(ContractError):
        batch_graphs([])


@given(st.integers(0, 10_000), st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_batching_matches_per_graph_loops(seed, count):
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, max_nodes=6) for _ in range(count)]
    b = batch_graphs(graphs)
    # segment ids non-decreasing, cover every graph, no edge crosses a boundary
    assert np.all(np.diff(b.segment_ids) >= 0)
    assert set(b.segment_ids.tolist()) == set(range(count))
    assert np.all(b.segment_ids[b.src] == b.segment_ids[b.dst])
    pooled = T.segment_reduce(b.node_feat, b.graph_segments, "mean").data
    summed = T.segment_reduce(b.node_feat, b.graph_segments, "sum").data
    for k, g in enumerate(graphs):
        np.testing.assert_allclose(pooled[k], g.node_feat.mean(axis=0), rtol=0, atol=1e-10)
        total = np.zeros(g.node_dim)
        for row in g.node_feat:
            total += row
        np.testing.assert_allclose(summed[k], total, rtol=0, atol=1e-10)


# ---------------------------------------------------------------- degree statistics


def test_degree_statistics_examples():
    assert abs(degree_statistics([path_graph(3)]) - (2 * np.log(2) + np.log(3)) / 3) < 1e-12
    assert abs(degree_statistics([path_graph(3)]) - 0.8283) < 1e-4
    assert degree_statistics([Graph(1, [[1.0]], [])]) == 0.0
    triangle = Graph(3, np.zeros((3, 1)), [[0, 1], [1, 2], [0, 2]])
    assert abs(degree_statistics([triangle]) - np.log(3)) < 1e-12


def test_degree_statistics_needs_graphs():
    with pytest.raises(ContractError):
        degree_statistics([])


# ---------------------------------------------------------------- splits


def test_split_is_disjoint_cover():
    s = split_dataset(2000, 0.1, seed=4)
    assert len(s.validation) == 200
    assert not set(s.train) & set(s.validation)
    assert set(s.train) | set(s.validation) == set(range(2000))
    assert split_dataset(2000, 0.1, seed=4) == s


# ---------------------------------------------------------------- generator


def test_generator_is_deterministic():
    a = generate_synthetic_dataset(seed=11, count=50)
    b = generate_synthetic_dataset(seed=11, count=50)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.node_feat, y.node_feat)
        np.testing.assert_array_equal(x.edges, y.edges)
        np.testing.assert_array_equal(x.edge_feat, y.edge_feat)


def test_generator_contract():
    graphs = generate_synthetic_dataset(seed=0, count=1000, size_range=(10, 30))
    assert len(graphs) == 1000
    assert all(10 <= g.num_nodes <= 30 for g in graphs)
    assert all(is_connected(g) for g in graphs)
    assert 1.5 <= np.mean([mean_degree(g) for g in graphs]) <= 4.0
    assert all(g.node_dim == 9 and g.edge_dim == 4 for g in graphs)


def test_generator_sizes_roughly_uniform():
    graphs = generate_synthetic_dataset(seed=5, count=10_000, size_range=(10, 30))
    counts = np.bincount([g.num_nodes for g in graphs], minlength=31)[10:31]
    assert stats.chisquare(counts).pvalue > 0.01


def test_generator_rejects_bad_parameters():
    with pytest.raises(ContractError):
        generate_synthetic_dataset(count=0)
    with pytest.raises(ContractError):
        generate_synthetic_dataset(size_range=(12, 10))
    with pytest.raises(ContractError):
        generate_synthetic_dataset(size_range=(2, 10))
    with pytest.raises(ContractError):
        generate_synthetic_dataset(motif_complexity=1.5)


def test_motif_complexity_zero_gives_trees():
    graphs = generate_synthetic_dataset(seed=2, count=100, motif_complexity=0.0)
    assert all(len(g.pairs) == g.num_nodes - 1 for g in graphs)
    rich = generate_synthetic_dataset(seed=2, count=100, motif_complexity=1.0)
    assert np.mean([len(g.pairs) - g.num_nodes + 1 for g in rich]) > 0.5
