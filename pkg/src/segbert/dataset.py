"""Graph-classification datasets in the TU flat-file layout.

A dataset directory holds ``<name>_A.txt`` (one directed arc per line,
1-based global node ids), ``<name>_graph_indicator.txt`` (graph id per
node), ``<name>_graph_labels.txt`` (label per graph) and optionally
``<name>_node_labels.txt`` / ``<name>_node_attributes.txt``. The loader
converts global ids to per-graph local indices, collapses duplicate
arcs (last weight wins, with a warning), completes symmetric storage,
and remaps class labels and node tags to dense 0-based ranges.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DatasetError",
    "GraphInstance",
    "GraphDataset",
    "FoldSplit",
    "load_tu_dataset",
    "write_tu_dataset",
    "make_folds",
    "weight_matrix",
]

FOLD_COUNT = 10


class DatasetError(Exception):
    """Malformed or missing dataset files; message names file and line."""


@dataclass
class GraphInstance:
    """One graph: local node ids 0..node_count-1, symmetric edge list."""

    node_count: int
    edges: list  # [(i, j, weight)], both directions present
    node_tags: list | None = None
    node_attributes: np.ndarray | None = None
    label: int = 0

    def neighbor_sets(self) -> list[set]:
        out = [set() for _ in range(self.node_count)]
        for i, j, _w in self.edges:
            out[i].add(j)
        return out

    @property
    def undirected_edge_count(self) -> int:
        # self-loops appear once in the arc list, other edges twice
        loops = sum(1 for i, j, _ in self.edges if i == j)
        return (len(self.edges) - loops) // 2 + loops


@dataclass
class GraphDataset:
    name: str
    graphs: list
    class_count: int
    attr_dim: int
    tag_vocab_size: int
    max_nodes: int
    avg_nodes: float
    label_map: dict = field(default_factory=dict)  # original label -> dense
    tag_map: dict = field(default_factory=dict)  # original tag -> dense

    def __len__(self) -> int:
        return len(self.graphs)


@dataclass
class FoldSplit:
    """Index lists into dataset.graphs for one cross-validation fold."""

    train: list
    val: list
    test: list


def weight_matrix(g: GraphInstance) -> np.ndarray:
    """Dense node_count x node_count connection-weight matrix."""
    w = np.zeros((g.node_count, g.node_count))
    for i, j, wt in g.edges:
        w[i, j] = wt
    return w


# ----------------------------------------------------------------------
# loading


def _read_lines(path: str) -> list[str]:
    if not os.path.isfile(path):
        raise DatasetError(f"missing dataset file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_int(text: str, path: str, lineno: int, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DatasetError(
            f"{path}:{lineno}: expected an integer {what}, got {text.strip()!r}"
        ) from None


def load_tu_dataset(directory: str, name: str) -> GraphDataset:
    """Load ``<name>_*.txt`` from directory into a GraphDataset."""
    prefix = os.path.join(directory, name)
    indicator_path = prefix + "_graph_indicator.txt"
    labels_path = prefix + "_graph_labels.txt"
    edges_path = prefix + "_A.txt"

    indicator_lines = _read_lines(indicator_path)
    node_graph = [
        _parse_int(line, indicator_path, i + 1, "graph id")
        for i, line in enumerate(indicator_lines)
        if line.strip()
    ]
    if not node_graph:
        raise DatasetError(f"{indicator_path}: no nodes listed")
    graph_count = max(node_graph)
    if min(node_graph) < 1:
        raise DatasetError(f"{indicator_path}: graph ids are 1-based")

    # global node id (1-based) -> (graph index, local node index)
    local_of = []
    counts = [0] * graph_count
    for gid in node_graph:
        g = gid - 1
        local_of.append((g, counts[g]))
        counts[g] += 1
    for g, c in enumerate(counts):
        if c == 0:
            raise DatasetError(
                f"{indicator_path}: graph {g + 1} has no nodes (ids must cover 1..{graph_count})")

    label_lines = [ln for ln in _read_lines(labels_path) if ln.strip()]
    if len(label_lines) != graph_count:
        raise DatasetError(
            f"{labels_path}: {len(label_lines)} labels for {graph_count} graphs")
    raw_labels = [
        _parse_int(line, labels_path, i + 1, "graph label")
        for i, line in enumerate(label_lines)
    ]
    label_map = {orig: dense for dense, orig in enumerate(sorted(set(raw_labels)))}

    # per-graph arc dicts, duplicates collapse with last weight
    arcs: list[dict] = [dict() for _ in range(graph_count)]
    n_nodes = len(node_graph)
    for lineno, line in enumerate(_read_lines(edges_path), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetError(
                f"{edges_path}:{lineno}: expected 'i, j', got {line.strip()!r}")
        u = _parse_int(parts[0], edges_path, lineno, "node id")
        v = _parse_int(parts[1], edges_path, lineno, "node id")
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise DatasetError(
                f"{edges_path}:{lineno}: node id out of range 1..{n_nodes}")
        gu, lu = local_of[u - 1]
        gv, lv = local_of[v - 1]
        if gu != gv:
            raise DatasetError(
                f"{edges_path}:{lineno}: edge joins graphs {gu + 1} and {gv + 1}")
        if (lu, lv) in arcs[gu]:
            warnings.warn(
                f"{edges_path}:{lineno}: duplicate edge ({u}, {v}), keeping last weight",
                stacklevel=2)
        arcs[gu][(lu, lv)] = 1.0

    # optional node tags
    tags_path = prefix + "_node_labels.txt"
    tags: list | None = None
    tag_map: dict = {}
    if os.path.isfile(tags_path):
        tag_lines = [ln for ln in _read_lines(tags_path) if ln.strip()]
        if len(tag_lines) != n_nodes:
            raise DatasetError(
                f"{tags_path}: {len(tag_lines)} tags for {n_nodes} nodes")
        raw_tags = [
            _parse_int(line, tags_path, i + 1, "node tag")
            for i, line in enumerate(tag_lines)
        ]
        tag_map = {orig: dense for dense, orig in enumerate(sorted(set(raw_tags)))}
        tags = [tag_map[t] for t in raw_tags]

    # optional node attributes
    attrs_path = prefix + "_node_attributes.txt"
    attrs: np.ndarray | None = None
    if os.path.isfile(attrs_path):
        attr_lines = [ln for ln in _read_lines(attrs_path) if ln.strip()]
        if len(attr_lines) != n_nodes:
            raise DatasetError(
                f"{attrs_path}: {len(attr_lines)} attribute rows for {n_nodes} nodes")
        rows = []
        for i, line in enumerate(attr_lines):
            try:
                rows.append([float(p) for p in line.split(",")])
            except ValueError:
                raise DatasetError(
                    f"{attrs_path}:{i + 1}: malformed attribute row {line.strip()!r}"
                ) from None
        width = len(rows[0])
        for i, row in enumerate(rows):
            if len(row) != width:
                raise DatasetError(
                    f"{attrs_path}:{i + 1}: expected {width} values, got {len(row)}")
        attrs = np.asarray(rows, dtype=np.float64)

    graphs = []
    for g in range(graph_count):
        n = counts[g]
        # complete symmetric storage, then validate it
        sym = dict(arcs[g])
        for (i, j), w in arcs[g].items():
            sym.setdefault((j, i), w)
        for (i, j), w in sym.items():
            if sym[(j, i)] != w:
                raise DatasetError(
                    f"{edges_path}: graph {g + 1} stores edge ({i}, {j}) "
                    f"with asymmetric weights")
        edges = sorted((i, j, w) for (i, j), w in sym.items())
        graphs.append(GraphInstance(node_count=n, edges=edges,
                                    label=label_map[raw_labels[g]]))

    if tags is not None or attrs is not None:
        # nodes of one graph may be interleaved in pathological files;
        # rebuild per-graph orderings from local_of instead of slicing
        per_graph_nodes: list[list[int]] = [[] for _ in range(graph_count)]
        for global_idx, (g, local) in enumerate(local_of):
            per_graph_nodes[g].append(global_idx)
        for g in range(graph_count):
            order = per_graph_nodes[g]
            if tags is not None:
                graphs[g].node_tags = [tags[idx] for idx in order]
            if attrs is not None:
                graphs[g].node_attributes = attrs[order]

    sizes = [g.node_count for g in graphs]
    return GraphDataset(
        name=name,
        graphs=graphs,
        class_count=len(label_map),
        attr_dim=0 if attrs is None else attrs.shape[1],
        tag_vocab_size=len(tag_map),
        max_nodes=max(sizes),
        avg_nodes=float(np.mean(sizes)),
        label_map=label_map,
        tag_map=tag_map,
    )


# ----------------------------------------------------------------------
# writing (round-trip support and synthetic fixtures)


def write_tu_dataset(dataset: GraphDataset, directory: str) -> None:
    """Write the dataset back out in the TU flat-file layout.

    Labels and tags are written through the inverse of the recorded
    maps when available, so a load/write/load cycle reproduces the same
    in-memory structure.
    """
    os.makedirs(directory, exist_ok=True)
    prefix = os.path.join(directory, dataset.name)
    inv_label = {v: k for k, v in dataset.label_map.items()} or None
    inv_tag = {v: k for k, v in dataset.tag_map.items()} or None

    offsets = []
    total = 0
    for g in dataset.graphs:
        offsets.append(total)
        total += g.node_count

    with open(prefix + "_graph_indicator.txt", "w", encoding="utf-8") as fh:
        for gi, g in enumerate(dataset.graphs, start=1):
            for _ in range(g.node_count):
                fh.write(f"{gi}\n")

    with open(prefix + "_graph_labels.txt", "w", encoding="utf-8") as fh:
        for g in dataset.graphs:
            label = inv_label[g.label] if inv_label else g.label
            fh.write(f"{label}\n")

    with open(prefix + "_A.txt", "w", encoding="utf-8") as fh:
        for off, g in zip(offsets, dataset.graphs):
            for i, j, _w in g.edges:
                fh.write(f"{i + off + 1}, {j + off + 1}\n")

    if any(g.node_tags is not None for g in dataset.graphs):
        with open(prefix + "_node_labels.txt", "w", encoding="utf-8") as fh:
            for g in dataset.graphs:
                for t in g.node_tags:
                    fh.write(f"{inv_tag[t] if inv_tag else t}\n")

    if any(g.node_attributes is not None for g in dataset.graphs):
        with open(prefix + "_node_attributes.txt", "w", encoding="utf-8") as fh:
            for g in dataset.graphs:
                for row in g.node_attributes:
                    fh.write(", ".join(repr(float(x)) for x in row) + "\n")


# ----------------------------------------------------------------------
# cross-validation folds


def make_folds(dataset: GraphDataset, seed: int) -> list:
    """Ten stratified folds with rotating validation parts.

    Graphs of each class are shuffled with the seed and dealt into 10
    chunks whose sizes differ by at most one; remainders start at a
    rotating offset so overall fold sizes stay within one graph of each
    other. Fold f tests on chunk f and validates on chunk f+1 mod 10,
    so every graph appears in exactly one test part and one validation
    part across the 10 folds.
    """
    n = len(dataset.graphs)
    if n < FOLD_COUNT:
        raise DatasetError(
            f"10-fold cross-validation needs at least {FOLD_COUNT} graphs, got {n}")
    rng = np.random.default_rng(seed)
    chunks: list[list[int]] = [[] for _ in range(FOLD_COUNT)]
    offset = 0
    for cls in range(dataset.class_count):
        members = [i for i, g in enumerate(dataset.graphs) if g.label == cls]
        members = list(rng.permutation(members))
        base, extra = divmod(len(members), FOLD_COUNT)
        cursor = 0
        for f in range(FOLD_COUNT):
            size = base + (1 if (f - offset) % FOLD_COUNT < extra else 0)
            chunks[f].extend(int(i) for i in members[cursor:cursor + size])
            cursor += size
        offset = (offset + extra) % FOLD_COUNT

    folds = []
    everything = set(range(n))
    for f in range(FOLD_COUNT):
        test = sorted(chunks[f])
        val = sorted(chunks[(f + 1) % FOLD_COUNT])
        train = sorted(everything - set(test) - set(val))
        folds.append(FoldSplit(train=train, val=val, test=test))
    return folds
