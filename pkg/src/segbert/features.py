"""Node feature extraction for graph instances.

Four ingredients feed the model's initial embeddings: node degrees,
Weisfeiler-Lehman structural codes, truncated adjacency rows under the
graph's fixed artificial node order, and the raw attribute vector when
the dataset has one. Degrees, WL codes and node tags are turned into
vectors through the same sinusoidal value embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import GraphDataset, GraphInstance

__all__ = [
    "NodeFeatureBundle",
    "compute_degrees",
    "compute_wl_codes",
    "dataset_wl_codes",
    "positional_embedding",
    "sinusoid_rows",
    "build_bundles",
    "dataset_bundles",
]

DEFAULT_WL_ITERATIONS = 2


def compute_degrees(g: GraphInstance) -> np.ndarray:
    """Distinct-neighbor count per node; a self-loop counts once."""
    degs = np.zeros(g.node_count, dtype=np.int64)
    for i, nbrs in enumerate(g.neighbor_sets()):
        degs[i] = len(nbrs)
    return degs


# ----------------------------------------------------------------------
# Weisfeiler-Lehman color refinement


def _partition(colors: list) -> list:
    groups: dict = {}
    for i, c in enumerate(colors):
        groups.setdefault(c, []).append(i)
    return sorted(tuple(v) for v in groups.values())


def _refine_graph(g: GraphInstance, iterations: int, table: dict) -> list:
    """Refine one graph against a shared signature table.

    The signature of a node is (own color, sorted multiset of neighbor
    colors); the table assigns each distinct signature a fresh integer,
    which keeps relabeling injective across every graph sharing the
    table. Each computed round is adopted; refinement stops early once
    a round leaves the color partition unchanged, since further rounds
    could only relabel the same groups.
    """

    def code_of(key):
        if key not in table:
            table[key] = len(table)
        return table[key]

    nbrs = g.neighbor_sets()
    if g.node_tags is not None:
        colors = [code_of(("init", int(t))) for t in g.node_tags]
    else:
        colors = [code_of(("init", len(nbrs[i]))) for i in range(g.node_count)]
    for _ in range(max(int(iterations), 0)):
        new = [
            code_of((colors[i], tuple(sorted(colors[j] for j in nbrs[i]))))
            for i in range(g.node_count)
        ]
        stable = _partition(new) == _partition(colors)
        colors = new
        if stable:
            break
    return colors


def dataset_wl_codes(graphs: Sequence[GraphInstance],
                     iterations: int = DEFAULT_WL_ITERATIONS) -> list:
    """WL codes for a whole collection under one shared dictionary.

    Final colors are compressed to a dense 0..C-1 range in order of
    first appearance, so codes are comparable across graphs: two nodes
    share a code exactly when refinement cannot tell them apart.
    """
    table: dict = {}
    raw = [_refine_graph(g, iterations, table) for g in graphs]
    dense: dict = {}
    out = []
    for colors in raw:
        row = []
        for c in colors:
            if c not in dense:
                dense[c] = len(dense)
            row.append(dense[c])
        out.append(row)
    return out


def compute_wl_codes(g: GraphInstance,
                     iterations: int = DEFAULT_WL_ITERATIONS) -> list:
    """WL codes of a single graph (its own dictionary)."""
    return dataset_wl_codes([g], iterations)[0]


# ----------------------------------------------------------------------
# sinusoidal value embedding


def positional_embedding(value: float, d_h: int) -> np.ndarray:
    """Sinusoid vector of an integer-valued feature.

    Entry 2l is sin(value / 10000^(2l/d_h)) and entry 2l+1 is
    cos(value / 10000^((2l+1)/d_h)); d_h must be even. Value 0 maps to
    [0, 1, 0, 1, ...].
    """
    return sinusoid_rows(np.array([float(value)]), d_h)[0]


def sinusoid_rows(values, d_h: int) -> np.ndarray:
    """Vectorized positional embedding: (n,) values to an n x d_h array."""
    if d_h <= 0 or d_h % 2 != 0:
        raise ValueError(f"embedding width must be a positive even number, got {d_h}")
    v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    ls = np.arange(d_h // 2, dtype=np.float64)
    sin_div = np.power(10000.0, 2.0 * ls / d_h)
    cos_div = np.power(10000.0, (2.0 * ls + 1.0) / d_h)
    out = np.empty((v.shape[0], d_h))
    out[:, 0::2] = np.sin(v / sin_div)
    out[:, 1::2] = np.cos(v / cos_div)
    return out


# ----------------------------------------------------------------------
# bundles


@dataclass
class NodeFeatureBundle:
    """Everything the model needs to embed one node.

    The adjacency row follows the graph's fixed artificial node order
    and is truncated or zero-padded to length n_adj. ``tag`` rides
    along for datasets with discrete node labels; dummy slots use
    ``tag None`` so their attribute channel stays exactly zero.
    """

    degree: int
    wl_code: int
    adjacency_row: np.ndarray
    raw_attr: np.ndarray
    tag: int | None = None


def _adjacency_rows(g: GraphInstance, n_adj: int) -> np.ndarray:
    rows = np.zeros((g.node_count, n_adj))
    for i, j, w in g.edges:
        if j < n_adj:
            rows[i, j] = w
    return rows


def build_bundles(g: GraphInstance, n_adj: int,
                  wl_iterations: int = DEFAULT_WL_ITERATIONS,
                  wl_codes: Sequence[int] | None = None) -> list:
    """Per-node bundles for one graph.

    Pass ``wl_codes`` from :func:`dataset_wl_codes` to keep codes
    comparable across a dataset; without it the graph gets a private
    WL dictionary.
    """
    if wl_codes is None:
        wl_codes = compute_wl_codes(g, wl_iterations)
    if len(wl_codes) != g.node_count:
        raise ValueError(
            f"wl_codes length {len(wl_codes)} does not match {g.node_count} nodes")
    degs = compute_degrees(g)
    adj = _adjacency_rows(g, n_adj)
    empty = np.zeros(0)
    bundles = []
    for i in range(g.node_count):
        attr = g.node_attributes[i].astype(np.float64) \
            if g.node_attributes is not None else empty
        tag = int(g.node_tags[i]) if g.node_tags is not None else None
        bundles.append(NodeFeatureBundle(
            degree=int(degs[i]),
            wl_code=int(wl_codes[i]),
            adjacency_row=adj[i],
            raw_attr=attr,
            tag=tag,
        ))
    return bundles


def dataset_bundles(dataset: GraphDataset, n_adj: int,
                    wl_iterations: int = DEFAULT_WL_ITERATIONS) -> list:
    """Bundles for every graph, WL codes shared dataset-wide."""
    codes = dataset_wl_codes(dataset.graphs, wl_iterations)
    return [
        build_bundles(g, n_adj, wl_iterations, wl_codes=c)
        for g, c in zip(dataset.graphs, codes)
    ]
