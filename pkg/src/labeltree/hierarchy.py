"""Label embedding tree: agglomerative clustering of a label dissimilarity
matrix, plus cutting, Newick/JSON export and Robinson-Foulds comparison."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .ordering import DissimMatrix

LINKAGES = ("average", "complete", "single")


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Binary merge tree. Leaves are ``0..L-1``; merge ``m`` creates node
    ``L + m``; the root is ``2L - 2``."""

    merges: tuple[tuple[int, int, float], ...]
    leaf_names: tuple[str, ...]

    def __post_init__(self):
        L = len(self.leaf_names)
        merges = tuple((int(a), int(b), float(h)) for a, b, h in self.merges)
        if len(merges) != L - 1:
            raise ValueError(f"{L} leaves need {L - 1} merges, got {len(merges)}")
        seen = set()
        for m, (a, b, _) in enumerate(merges):
            for c in (a, b):
                if c in seen or not 0 <= c < L + m:
                    raise ValueError(f"merge {m} has invalid or reused child {c}")
                seen.add(c)
        object.__setattr__(self, "merges", merges)
        object.__setattr__(self, "leaf_names", tuple(str(s) for s in self.leaf_names))

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_names)

    @property
    def root(self) -> int:
        return 2 * self.n_leaves - 2

    def is_leaf(self, node: int) -> bool:
        return node < self.n_leaves

    def children(self, node: int) -> tuple[int, int]:
        a, b, _ = self.merges[node - self.n_leaves]
        return a, b

    def height(self, node: int) -> float:
        return 0.0 if self.is_leaf(node) else self.merges[node - self.n_leaves][2]

    @cached_property
    def _leafsets(self) -> list[tuple[int, ...]]:
        L = self.n_leaves
        sets: list[tuple[int, ...]] = [(i,) for i in range(L)]
        for a, b, _ in self.merges:
            sets.append(tuple(sorted(sets[a] + sets[b])))
        return sets

    @cached_property
    def _parents(self) -> dict[int, int]:
        par = {}
        for m, (a, b, _) in enumerate(self.merges):
            par[a] = par[b] = self.n_leaves + m
        return par

    def leaves(self, node: int) -> tuple[int, ...]:
        return self._leafsets[node]

    def parent(self, node: int) -> int | None:
        return self._parents.get(node)

    def sibling(self, node: int) -> int | None:
        p = self.parent(node)
        if p is None:
            return None
        a, b = self.children(p)
        return b if a == node else a

    def internal_nodes(self) -> range:
        return range(self.n_leaves, self.root + 1)

    def smallest_clade(self, leaves: Iterable[int]) -> int:
        """Lowest node whose leaf set contains all of ``leaves``."""
        want = set(leaves)
        for node in range(2 * self.n_leaves - 1):
            if want <= set(self._leafsets[node]):
                return node
        raise ValueError("leaves not in tree")

    def clade_names(self, node: int) -> list[str]:
        return [self.leaf_names[i] for i in self.leaves(node)]

    def to_dict(self) -> dict:
        nodes = [{"id": i, "name": n, "height": 0.0} for i, n in enumerate(self.leaf_names)]
        for m, (a, b, h) in enumerate(self.merges):
            nodes.append({"id": self.n_leaves + m, "children": [a, b], "height": h})
        return {"n_leaves": self.n_leaves, "root": self.root, "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "Dendrogram":
        L = doc["n_leaves"]
        nodes = sorted(doc["nodes"], key=lambda n: n["id"])
        names = [n["name"] for n in nodes[:L]]
        merges = [(n["children"][0], n["children"][1], n["height"]) for n in nodes[L:]]
        return cls(tuple(merges), tuple(names))


def agglomerate(D: DissimMatrix | np.ndarray, linkage: str = "average",
                names: Sequence[str] | None = None) -> Dendrogram:
    """Sequential agglomerative clustering.

    At each step the two active clusters with the smallest linkage value are
    merged; exact ties go to the lexicographically smallest pair of node ids.
    Cluster-to-cluster values are updated with the Lance-Williams rule of the
    chosen linkage.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    if isinstance(D, DissimMatrix):
        names = D.labels if names is None else names
        D = D.d
    D = np.asarray(D, dtype=float)
    L = D.shape[0]
    if names is None:
        names = [str(i) for i in range(L)]
    if L < 1 or D.shape != (L, L):
        raise ValueError("dissimilarity must be a square matrix")
    if L == 1:
        return Dendrogram((), tuple(names))

    M = np.full((2 * L - 1, 2 * L - 1), np.inf)
    M[:L, :L] = (D + D.T) / 2
    size = np.zeros(2 * L - 1, dtype=np.int64)
    size[:L] = 1
    active = np.zeros(2 * L - 1, dtype=bool)
    active[:L] = True
    merges = []
    last = 0.0
    for m in range(L - 1):
        idx = np.flatnonzero(active)
        sub = M[np.ix_(idx, idx)]
        iu = np.triu_indices(len(idx), 1)
        vals = sub[iu]
        best = vals.min()
        # triu_indices is row-major, so the first hit is the smallest (i, j)
        k = int(np.flatnonzero(vals == best)[0])
        i, j = idx[iu[0][k]], idx[iu[1][k]]
        new = L + m
        height = max(float(best), last)  # guard against 1-ulp rounding inversions
        last = height
        merges.append((int(i), int(j), height))
        rest = idx[(idx != i) & (idx != j)]
        di, dj = M[i, rest], M[j, rest]
        if linkage == "average":
            dn = (size[i] * di + size[j] * dj) / (size[i] + size[j])
        elif linkage == "complete":
            dn = np.maximum(di, dj)
        else:
            dn = np.minimum(di, dj)
        M[new, rest] = dn
        M[rest, new] = dn
        size[new] = size[i] + size[j]
        active[i] = active[j] = False
        active[new] = True
    return Dendrogram(tuple(merges), tuple(names))


def cut(t: Dendrogram, k: int) -> list[list[int]]:
    """Undo the ``k - 1`` highest merges; groups are sorted by smallest leaf."""
    L = t.n_leaves
    if not 1 <= k <= L:
        raise ValueError(f"k must lie in 1..{L}, got {k}")
    parent = list(range(2 * L - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m, (a, b, _) in enumerate(t.merges[: L - k]):
        parent[find(a)] = L + m
        parent[find(b)] = L + m
    groups: dict[int, list[int]] = {}
    for leaf in range(L):
        groups.setdefault(find(leaf), []).append(leaf)
    return sorted(groups.values(), key=lambda g: g[0])


def from_topology(topology, names: Sequence[str] | None = None) -> Dendrogram:
    """Dendrogram with the shape of nested 2-tuples of leaf ids; a node's
    height is its number of leaves minus one (ordering only)."""
    order: list[tuple[int, tuple]] = []

    def post(node) -> int:
        if isinstance(node, (int, np.integer)):
            return 1
        n = post(node[0]) + post(node[1])
        order.append((n, node))
        return n

    L = post(topology)
    node_id: dict[int, int] = {}
    merges = []
    # stable sort keeps post-order among equal sizes, so children come first
    for n, node in sorted(order, key=lambda p: p[0]):
        a, b = (int(c) if isinstance(c, (int, np.integer)) else node_id[id(c)] for c in node)
        node_id[id(node)] = L + len(merges)
        merges.append((a, b, float(n - 1)))
    if names is None:
        names = [str(i) for i in range(L)]
    return Dendrogram(tuple(merges), tuple(names))


# --- Newick ------------------------------------------------------------------

_SAFE = re.compile(r"^[^\s():;,\[\]']+$")


def _quote(name: str) -> str:
    return name if _SAFE.match(name) else "'" + name.replace("'", "''") + "'"


def _num(x: float) -> str:
    return f"{x:.12g}"


def export_newick(t: Dendrogram) -> str:
    """Newick text with branch length = parent height - child height."""
    if t.n_leaves == 1:
        return _quote(t.leaf_names[0]) + ";"

    def render(node: int) -> str:
        if t.is_leaf(node):
            return _quote(t.leaf_names[node])
        a, b = t.children(node)
        h = t.height(node)
        return (f"({render(a)}:{_num(h - t.height(a))},"
                f"{render(b)}:{_num(h - t.height(b))})")

    return render(t.root) + ";"


def parse_newick(text: str) -> Dendrogram:
    """Parse binary Newick with branch lengths (as written by
    :func:`export_newick`). Leaf ids follow left-to-right order."""
    s = text.strip()
    if not s.endswith(";"):
        raise ValueError("Newick text must end with ';'")
    pos = 0

    def name():
        nonlocal pos
        if s[pos] == "'":
            j = pos + 1
            out = []
            while True:
                if s[j] == "'" and j + 1 < len(s) and s[j + 1] == "'":
                    out.append("'")
                    j += 2
                elif s[j] == "'":
                    break
                else:
                    out.append(s[j])
                    j += 1
            pos = j + 1
            return "".join(out)
        j = pos
        while s[j] not in ":,();":
            j += 1
        out, pos = s[pos:j], j
        return out.strip()

    def length():
        nonlocal pos
        if s[pos] != ":":
            return 0.0
        j = pos + 1
        while s[j] not in ",();":
            j += 1
        v, pos = float(s[pos + 1:j]), j
        return v

    def node():
        nonlocal pos
        if s[pos] == "(":
            pos += 1
            kids = [node()]
            while s[pos] == ",":
                pos += 1
                kids.append(node())
            if s[pos] != ")" or len(kids) != 2:
                raise ValueError("only binary Newick trees are supported")
            pos += 1
            name()  # internal labels are ignored
            return ("in", kids, length())
        return ("leaf", name(), length())

    tree = node()
    leaf_names: list[str] = []
    internal: list[list] = []  # [height, left ref, right ref]

    def walk(n):
        kind, payload, _ = n
        if kind == "leaf":
            leaf_names.append(payload)
            return len(leaf_names) - 1, 0.0
        (ra, ha), (rb, hb) = walk(payload[0]), walk(payload[1])
        h = max(ha + payload[0][2], hb + payload[1][2])
        internal.append([h, ra, rb])
        return ("internal", len(internal) - 1), h

    walk(tree)
    L = len(leaf_names)
    order = sorted(range(len(internal)), key=lambda k: (internal[k][0], k))
    new_id = {k: L + r for r, k in enumerate(order)}

    def resolve(x):
        return new_id[x[1]] if isinstance(x, tuple) else x

    merges = [(resolve(internal[k][1]), resolve(internal[k][2]), internal[k][0]) for k in order]
    return Dendrogram(tuple(merges), tuple(leaf_names))


# --- comparison --------------------------------------------------------------

def splits(t: Dendrogram, rooted: bool = False) -> set[frozenset[str]]:
    """Nontrivial splits as frozensets of leaf names.

    Unrooted: bipartitions with at least two leaves per side, each stored as
    the side that excludes the alphabetically first leaf. Rooted: clades of
    size 2..L-1.
    """
    L = t.n_leaves
    everyone = frozenset(t.leaf_names)
    ref = min(t.leaf_names)
    out = set()
    for node in range(L, t.root):
        side = frozenset(t.clade_names(node))
        if rooted:
            if 2 <= len(side) <= L - 1:
                out.add(side)
        elif 2 <= len(side) <= L - 2:
            out.add(side if ref not in side else everyone - side)
    return out


def tree_distance(t1: Dendrogram, t2: Dendrogram, rooted: bool = False) -> int:
    """Robinson-Foulds distance: splits present in exactly one tree. Leaves
    are matched by name."""
    if sorted(t1.leaf_names) != sorted(t2.leaf_names):
        raise ValueError("trees have different leaf sets")
    if len(set(t1.leaf_names)) != t1.n_leaves:
        raise ValueError("leaf names must be unique")
    return len(splits(t1, rooted) ^ splits(t2, rooted))
