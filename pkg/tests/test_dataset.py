"""TU loader, writer and fold construction."""

import os

import numpy as np
import pytest

from segbert.dataset import (
    DatasetError,
    FoldSplit,
    load_tu_dataset,
    make_folds,
    weight_matrix,
    write_tu_dataset,
)

from conftest import synth_dataset


def write_files(tmp_path, name="TOY", a=None, indicator=None, labels=None,
                node_labels=None, node_attrs=None):
    tmp_path.mkdir(parents=True, exist_ok=True)

    def put(suffix, lines):
        if lines is None:
            return
        (tmp_path / f"{name}_{suffix}.txt").write_text("\n".join(lines) + "\n")

    put("A", a)
    put("graph_indicator", indicator)
    put("graph_labels", labels)
    put("node_labels", node_labels)
    put("node_attributes", node_attrs)
    return str(tmp_path)


# two graphs: a triangle (nodes 1-3) and an edge (nodes 4-5)
TRIANGLE_PLUS_EDGE = dict(
    a=["1, 2", "2, 1", "2, 3", "3, 2", "1, 3", "3, 1", "4, 5", "5, 4"],
    indicator=["1", "1", "1", "2", "2"],
    labels=["1", "-1"],
)


def test_loader_against_handwritten_files(tmp_path):
    d = write_files(tmp_path, **TRIANGLE_PLUS_EDGE,
                    node_labels=["7", "7", "9", "9", "7"],
                    node_attrs=["0.5, 1.0", "0.25, 2.0", "0.125, 3.0",
                                "1.5, 4.0", "2.5, 5.0"])
    ds = load_tu_dataset(d, "TOY")

    assert len(ds) == 2
    assert ds.class_count == 2
    assert ds.label_map == {-1: 0, 1: 1}
    assert [g.label for g in ds.graphs] == [1, 0]
    assert ds.max_nodes == 3
    assert abs(ds.avg_nodes - 2.5) < 1e-12

    tri = ds.graphs[0]
    assert tri.node_count == 3
    assert tri.edges == [(0, 1, 1.0), (0, 2, 1.0), (1, 0, 1.0),
                         (1, 2, 1.0), (2, 0, 1.0), (2, 1, 1.0)]
    assert tri.node_tags == [0, 0, 1]  # 7 -> 0, 9 -> 1
    assert np.allclose(tri.node_attributes,
                       [[0.5, 1.0], [0.25, 2.0], [0.125, 3.0]])

    pair = ds.graphs[1]
    assert pair.node_count == 2
    assert pair.edges == [(0, 1, 1.0), (1, 0, 1.0)]
    assert pair.node_tags == [1, 0]
    assert ds.tag_vocab_size == 2
    assert ds.attr_dim == 2


def test_loader_completes_one_directional_arcs(tmp_path):
    d = write_files(tmp_path, a=["1, 2"], indicator=["1", "1"], labels=["0"])
    ds = load_tu_dataset(d, "TOY")
    assert ds.graphs[0].edges == [(0, 1, 1.0), (1, 0, 1.0)]


def test_duplicate_edge_collapses_with_warning(tmp_path):
    d = write_files(tmp_path, a=["1, 2", "2, 1", "1, 2"],
                    indicator=["1", "1"], labels=["0"])
    with pytest.warns(UserWarning, match="duplicate edge"):
        ds = load_tu_dataset(d, "TOY")
    assert ds.graphs[0].edges == [(0, 1, 1.0), (1, 0, 1.0)]


def test_missing_file_error_names_path(tmp_path):
    with pytest.raises(DatasetError, match="_A.txt"):
        write_files(tmp_path, a=None, indicator=["1"], labels=["0"])
        load_tu_dataset(str(tmp_path), "TOY")


def test_malformed_edge_line_names_line_number(tmp_path):
    d = write_files(tmp_path, a=["1, 2", "oops"], indicator=["1", "1"], labels=["0"])
    with pytest.raises(DatasetError, match=":2"):
        load_tu_dataset(d, "TOY")


def test_edge_endpoint_out_of_range(tmp_path):
    d = write_files(tmp_path, a=["1, 9"], indicator=["1", "1"], labels=["0"])
    with pytest.raises(DatasetError, match="out of range"):
        load_tu_dataset(d, "TOY")


def test_edge_crossing_graphs_rejected(tmp_path):
    d = write_files(tmp_path, a=["1, 2", "2, 3"],
                    indicator=["1", "1", "2"], labels=["0", "1"])
    with pytest.raises(DatasetError, match="joins graphs"):
        load_tu_dataset(d, "TOY")


def test_label_count_mismatch(tmp_path):
    d = write_files(tmp_path, a=["1, 2"], indicator=["1", "1"], labels=["0", "1"])
    with pytest.raises(DatasetError, match="labels for"):
        load_tu_dataset(d, "TOY")


def test_tag_count_mismatch(tmp_path):
    d = write_files(tmp_path, a=["1, 2"], indicator=["1", "1"],
                    labels=["0"], node_labels=["1"])
    with pytest.raises(DatasetError, match="tags for"):
        load_tu_dataset(d, "TOY")


def test_single_graph_dataset_loads_but_folds_error(tmp_path):
    d = write_files(tmp_path, a=["1, 2", "2, 1"],
                    indicator=["1", "1"], labels=["5"])
    ds = load_tu_dataset(d, "TOY")
    assert len(ds) == 1
    assert ds.graphs[0].label == 0
    with pytest.raises(DatasetError, match="at least 10"):
        make_folds(ds, seed=0)


def test_round_trip_write_then_load(tmp_path):
    ds = synth_dataset(count=14, seed=3, with_tags=True, with_attrs=True)
    out = tmp_path / "rt"
    write_tu_dataset(ds, str(out))
    back = load_tu_dataset(str(out), ds.name)

    assert len(back) == len(ds)
    assert back.class_count == ds.class_count
    assert back.attr_dim == ds.attr_dim
    assert back.tag_vocab_size == ds.tag_vocab_size
    assert back.max_nodes == ds.max_nodes
    assert abs(back.avg_nodes - ds.avg_nodes) < 1e-12
    for a, b in zip(ds.graphs, back.graphs):
        assert a.node_count == b.node_count
        assert a.edges == b.edges
        assert a.label == b.label
        assert a.node_tags == b.node_tags
        assert np.array_equal(a.node_attributes, b.node_attributes)


def test_round_trip_handwritten(tmp_path):
    d = write_files(tmp_path / "src", **TRIANGLE_PLUS_EDGE)
    ds = load_tu_dataset(d, "TOY")
    write_tu_dataset(ds, str(tmp_path / "dst"))
    back = load_tu_dataset(str(tmp_path / "dst"), "TOY")
    assert back.label_map == ds.label_map
    for a, b in zip(ds.graphs, back.graphs):
        assert (a.node_count, a.edges, a.label) == (b.node_count, b.edges, b.label)


def test_weight_matrix():
    ds = synth_dataset(count=10, seed=1)
    g = ds.graphs[0]
    w = weight_matrix(g)
    assert w.shape == (g.node_count, g.node_count)
    assert np.array_equal(w, w.T)
    for i, j, wt in g.edges:
        assert w[i, j] == wt
    assert w.sum() == len(g.edges)


# ----------------------------------------------------------------------
# folds


def fold_fixture():
    return synth_dataset(count=47, seed=9)  # odd count, uneven classes


def test_folds_partition_and_rotate():
    ds = fold_fixture()
    folds = make_folds(ds, seed=4)
    assert len(folds) == 10

    all_tests = [i for f in folds for i in f.test]
    assert sorted(all_tests) == list(range(len(ds)))  # exactly one test part each

    for f in range(10):
        split = folds[f]
        assert set(split.train) | set(split.val) | set(split.test) == set(range(len(ds)))
        assert not set(split.train) & set(split.val)
        assert not set(split.train) & set(split.test)
        assert not set(split.val) & set(split.test)
        assert split.val == folds[(f + 1) % 10].test  # rotation

    sizes = [len(f.test) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def test_folds_are_stratified():
    ds = fold_fixture()
    folds = make_folds(ds, seed=4)
    for cls in range(ds.class_count):
        per_fold = [sum(1 for i in f.test if ds.graphs[i].label == cls)
                    for f in folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_folds_deterministic_per_seed():
    ds = fold_fixture()
    a = make_folds(ds, seed=11)
    b = make_folds(ds, seed=11)
    c = make_folds(ds, seed=12)
    assert [(f.train, f.val, f.test) for f in a] == [(f.train, f.val, f.test) for f in b]
    assert [(f.train, f.val, f.test) for f in a] != [(f.train, f.val, f.test) for f in c]


def test_fold_ratio_roughly_8_1_1():
    ds = synth_dataset(count=100, seed=2)
    folds = make_folds(ds, seed=0)
    for f in folds:
        assert len(f.test) == 10
        assert len(f.val) == 10
        assert len(f.train) == 80
