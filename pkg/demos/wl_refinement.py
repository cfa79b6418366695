"""Watch 1-WL color refinement tell graph structures apart.

Node colors start from degrees (or tags when present) and are refined
by hashing each node's color together with its sorted neighbor colors.
A shared dictionary across graphs makes codes comparable between
graphs: two nodes get the same code exactly when their refinement
trees match.
"""

from segbert import GraphInstance, dataset_wl_codes


def sym(pairs):
    arcs = {(i, j) for i, j in pairs} | {(j, i) for i, j in pairs}
    return sorted((i, j, 1.0) for i, j in arcs)


triangle = GraphInstance(node_count=3, edges=sym([(0, 1), (1, 2), (2, 0)]))
path = GraphInstance(node_count=3, edges=sym([(0, 1), (1, 2)]))
star = GraphInstance(node_count=4, edges=sym([(0, 1), (0, 2), (0, 3)]))

print("Every triangle node has degree 2; so does the middle path node.")
print("Degrees alone cannot separate them, refinement can:\n")

for rounds in range(3):
    tri, pat, st = dataset_wl_codes([triangle, path, star], iterations=rounds)
    print(f"after {rounds} round(s):")
    print(f"  triangle codes {tri}")
    print(f"  path     codes {pat}")
    print(f"  star     codes {st}")

tri, pat, _ = dataset_wl_codes([triangle, path, star], iterations=2)
overlap = set(tri) & set(pat)
print(f"\ntriangle/path code overlap after 2 rounds: {overlap or 'none'}")
print("The triangle's neighbors-of-neighbors all look alike; the path's")
print("middle node sees two degree-1 ends and ends up in its own class.")

print("\nTags, when present, replace degrees as the starting colors:")
tagged = GraphInstance(node_count=3, edges=sym([(0, 1), (1, 2)]))
tagged.node_tags = [7, 7, 7]
plain = GraphInstance(node_count=3, edges=sym([(0, 1), (1, 2)]))
t_codes, p_codes = dataset_wl_codes([tagged, plain], iterations=0)
print(f"  uniform tags  -> one initial class:   {t_codes}")
print(f"  degrees       -> ends vs middle:      {p_codes}")
