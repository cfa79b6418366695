"""Brute-force Weisfeiler-Lehman refinement, independent of the package.

Instead of an integer dictionary, each node's color is its unfolded
neighborhood tree: the round-t color is the nested tuple (round t-1
color, sorted tuple of the neighbors' round t-1 colors). Trees are
canonical values, so they compare across graphs directly. The stop
rule mirrors the library: at most ``iterations`` rounds, adopting each
computed round and stopping early once a round leaves the partition
unchanged.
"""


def _partition(colors):
    groups = {}
    for i, c in enumerate(colors):
        groups.setdefault(c, []).append(i)
    return sorted(tuple(v) for v in groups.values())


def brute_force_wl(graphs, iterations):
    """Per-graph lists of canonical tree colors."""
    results = []
    for g in graphs:
        nbrs = g.neighbor_sets()
        if g.node_tags is not None:
            colors = [("v", int(t)) for t in g.node_tags]
        else:
            colors = [("v", len(nbrs[i])) for i in range(g.node_count)]
        for _ in range(max(int(iterations), 0)):
            new = [
                (colors[i], tuple(sorted(colors[j] for j in nbrs[i])))
                for i in range(g.node_count)
            ]
            stable = _partition(new) == _partition(colors)
            colors = new
            if stable:
                break
        results.append(colors)
    return results


def partition_of(colors):
    return _partition(colors)
