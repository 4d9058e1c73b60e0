import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairsample.datagen import SbmSpec, generate
from fairsample.graph import (AttributedGraph, DataSplit, GraphFormatError, draw_split, homophily_mode,
                              intra_group_edge_ratio, k_hop_neighbors, load_graph, load_graph_dir,
                              save_graph)

from _util import floyd_warshall, make_graph, random_graph


def write_files(tmp_path, edges_text, features_text, meta='{"sensitive_domain_size": 2, "feature_dim": 2}'):
    (tmp_path / "edges.tsv").write_text(edges_text)
    (tmp_path / "features.csv").write_text(features_text)
    (tmp_path / "meta.json").write_text(meta)
    return tmp_path / "edges.tsv", tmp_path / "features.csv", tmp_path / "meta.json"


PATH_FEATURES = "id,s,y,f0,f1\na,0,1,0.1,0.2\nb,1,,0.3,0.4\nc,0,0,0.5,0.6\n"


def test_load_path_graph(tmp_path):
    g = load_graph(*write_files(tmp_path, "# path\na\tb\nb\tc\n", PATH_FEATURES))
    assert g.n == 3 and g.d == 2
    assert g.degree.tolist() == [1, 2, 1]
    assert g.labels.tolist() == [1, -1, 0]
    assert g.neighbors(1).tolist() == [0, 2]


def test_self_loop_rejected(tmp_path):
    feats = "id,s,y,f0,f1\n" + "".join(f"{i},0,0,0,0\n" for i in range(6))
    with pytest.raises(GraphFormatError, match="self-loop rejected"):
        load_graph(*write_files(tmp_path, "0\t1\n5\t5\n", feats))


@pytest.mark.parametrize("edges,features,msg", [
    ("a\tb\na\tb\n", PATH_FEATURES, "duplicate edge rejected"),
    ("a\tz\n", PATH_FEATURES, ":1: edge references unknown node"),
    ("a b\n", PATH_FEATURES, ":1: expected"),
    ("a\tb\n", "id,s,y,f0,f1\na,0,1,0.1,0.2\nb,,1,0.3,nan\n", ":3: node 'b' missing sensitive"),
    ("a\tb\n", "id,s,y,f0,f1\na,0,1,0.1,0.2\nb,1,1,0.3,inf\n", ":3: non-finite feature"),
    ("a\tb\n", "id,s,y,f0,f1\na,0,1,0.1\n", ":2: expected 5 fields"),
    ("a\tb\n", "id,s,y,f0\n", ":1: header"),
    ("a\tb\n", "id,s,y,f0,f1\na,2,1,0.1,0.2\n", "outside domain"),
])
def test_malformed_files(tmp_path, edges, features, msg):
    with pytest.raises(GraphFormatError, match=msg):
        load_graph(*write_files(tmp_path, edges, features))


def test_reversed_duplicate_is_duplicate(tmp_path):
    with pytest.raises(GraphFormatError, match="duplicate"):
        load_graph(*write_files(tmp_path, "a\tb\nb\ta\n", PATH_FEATURES))


def test_round_trip_is_byte_identical(tmp_path):
    g, _ = generate(SbmSpec(n=6, group_sizes=[3, 3], p_intra=0.8, p_inter=0.3, d=3,
                            n_train=1, labeled_fraction=1.0))
    save_graph(g, tmp_path / "a")
    g2 = load_graph_dir(tmp_path / "a")
    save_graph(g2, tmp_path / "b")
    for name in ("edges.tsv", "features.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    np.testing.assert_array_equal(g.features, g2.features)
    np.testing.assert_array_equal(g.indices, g2.indices)
    np.testing.assert_array_equal(g.sensitive, g2.sensitive)
    np.testing.assert_array_equal(g.labels, g2.labels)


def test_in_memory_validation():
    with pytest.raises(ValueError, match="self-loop"):
        make_graph(3, [[0, 0]])
    with pytest.raises(ValueError, match="duplicate"):
        make_graph(3, [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        make_graph(2, [[0, 1]], x=[[0.0, np.nan], [0.0, 0.0]])
    with pytest.raises(ValueError):
        make_graph(2, [[0, 1]], zeta=1, s=[0, 0])


def test_unknown_node_lookup():
    g = make_graph(3, [[0, 1]])
    with pytest.raises(KeyError):
        g.neighbors(7)
    with pytest.raises(KeyError):
        k_hop_neighbors(g, -1, 1)


def test_group_index_matches_scan():
    rng = np.random.default_rng(1)
    g = random_graph(30, 0.2, rng, zeta=3)
    for v in range(g.n):
        nb = g.neighbors(v)
        for a in range(3):
            assert g.group_counts[v, a] == np.sum(g.sensitive[nb] == a)
        assert g.group_counts[v].sum() == g.degree[v]
    A = g.adjacency().toarray()
    np.testing.assert_array_equal(A, A.T)


def test_graph_is_immutable():
    g = make_graph(3, [[0, 1]])
    with pytest.raises(ValueError):
        g.features[0, 0] = 1.0


def test_intra_ratio_definitions():
    same = make_graph(4, [[0, 1], [1, 2]], s=[0, 0, 0, 1])
    assert intra_group_edge_ratio(same) == 1.0
    bip = make_graph(4, [[0, 1], [0, 3], [2, 1], [2, 3]], s=[0, 1, 0, 1])
    assert intra_group_edge_ratio(bip) == 0.0
    with pytest.raises(ValueError):
        intra_group_edge_ratio(make_graph(3, []))


def test_intra_ratio_balanced_sbm():
    g, _ = generate(SbmSpec(n=2000, group_sizes=[1000, 1000], p_intra=0.004, p_inter=0.004,
                            label_affinity=1.0))
    assert abs(intra_group_edge_ratio(g) - 0.5) <= 0.05


def _graph_with_ratio(intra, inter):
    # intra edges inside group 0 on a path, inter edges fan out to group 1
    n0 = intra + 1
    edges = [[i, i + 1] for i in range(intra)] + [[0, n0 + j] for j in range(inter)]
    return make_graph(n0 + inter, edges, s=[0] * n0 + [1] * inter)


@pytest.mark.parametrize("intra,inter,mode", [
    (73, 27, "homophilic"),     # NBA column of the dataset table: 73% intra-group
    (47, 53, "heterophilic"),   # PNG column: 47%
    (50, 50, "homophilic"),     # tie rule
])
def test_homophily_mode(intra, inter, mode):
    g = _graph_with_ratio(intra, inter)
    assert intra_group_edge_ratio(g) == pytest.approx(intra / 100)
    assert homophily_mode(g) == mode


def test_k_hop_path():
    g = make_graph(3, [[0, 1], [1, 2]])
    assert k_hop_neighbors(g, 0, 1) == {1}
    assert k_hop_neighbors(g, 0, 2) == {1, 2}
    with pytest.raises(ValueError):
        k_hop_neighbors(g, 0, 0)


def test_k_hop_matches_floyd_warshall():
    rng = np.random.default_rng(7)
    g = random_graph(50, 0.05, rng)
    D = floyd_warshall(g)
    for v in range(g.n):
        for h in (1, 2, 3):
            expected = {int(u) for u in np.flatnonzero((D[v] >= 1) & (D[v] <= h))}
            assert k_hop_neighbors(g, v, h) == expected


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.floats(0.0, 1.0), st.integers(0, 10_000), st.integers(1, 3))
def test_k_hop_nested(n, p, seed, h):
    g = random_graph(n, p, np.random.default_rng(seed))
    for v in range(n):
        inner = k_hop_neighbors(g, v, h)
        assert inner <= k_hop_neighbors(g, v, h + 1)
        assert v not in inner


def test_split_disjoint_and_labeled():
    g, split = generate(SbmSpec(n=200, group_sizes=[100, 100], n_train=30))
    split.validate(g)
    assert len(set(split.train) | set(split.val) | set(split.test)) == \
        split.train.size + split.val.size + split.test.size
    assert np.all(g.labels[split.train] >= 0)
    with pytest.raises(ValueError):
        DataSplit([0, 1], [1], [], seed=0)
    with pytest.raises(ValueError):
        draw_split(g, 10_000)


def test_with_edges_adds_and_rebuilds():
    g = make_graph(4, [[0, 1]], s=[0, 1, 0, 1])
    g2 = g.with_edges([[2, 3]])
    assert g2.num_edges == 2 and g.num_edges == 1
    assert g2.group_counts[2].tolist() == [0, 1]
    with pytest.raises(ValueError, match="duplicate"):
        g.with_edges([[1, 0]])


def test_isolated_nodes_allowed():
    g = make_graph(3, [])
    assert g.degree.tolist() == [0, 0, 0]
    assert isinstance(g, AttributedGraph)
