"""Classification with a label embedding tree.

Two routes:

* :func:`embed_new_label` treats an unlabeled row (or batch) as an extra
  label, extends the dominance matrix with the comparisons that involve it,
  and reads the prediction off the extended column sums.
* :func:`descend` walks the tree from the root with a binary classifier per
  internal node and stops early, returning a label set, when the node
  probability does not exceed ``theta``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dataset import Dataset
from .hierarchy import Dendrogram, agglomerate
from .ordering import (
    _STREAM_NEWLABEL,
    DissimMatrix,
    DominanceMatrix,
    _pidx,
    default_T,
    dissimilarity_from_dominance,
)

log = logging.getLogger(__name__)

DEFAULT_K = 11
# smallest admissible theta: every non-tied node decision descends
FORCED_THETA = float(np.nextafter(0.5, 1.0))
NEW_LABEL_NAME = "new"


@dataclass(frozen=True, eq=False)
class NewLabelResult:
    predicted: int
    h_new: DominanceMatrix
    d_new: DissimMatrix
    tree_new: Dendrogram
    branch: int
    branch_labels: tuple[int, ...]
    scores: np.ndarray  # column sums of the (a, new) pair columns


def embed_new_label(H: DominanceMatrix, d: Dataset, Xnew, T: int | None = None, seed: int = 0,
                    linkage: str = "average", tree: Dendrogram | None = None,
                    full_triplet: bool = True) -> NewLabelResult:
    """Place unlabeled rows into the label embedding as label id ``L``.

    For every original label pair ``(a, b)``, T triplets ``(X_a, X_b, X_new)``
    are drawn (``X_new`` uniformly from the batch) and the comparison of
    ``d(X_a, X_new)`` with ``d(X_b, X_new)`` fills the entries between pairs
    ``(a, new)`` and ``(b, new)``. The leading ``C(L,2)`` block is ``H``.

    With ``full_triplet`` (default) the same draws also fill the comparisons
    of ``(a, b)`` against ``(a, new)`` and ``(b, new)``, so the column of an
    original pair sees the new label too. Without them every original column
    sum is blind to the new label and ``D_new(a, b)`` can tie with
    ``D_new(a, new)`` even when the batch is a copy of label ``a``.
    """
    L = H.L
    if d.n_labels != L:
        raise ValueError(f"dominance matrix has L={L} but dataset has {d.n_labels} labels")
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    if Xnew.shape[1] != d.k:
        raise ValueError(f"Xnew has {Xnew.shape[1]} columns, dataset has {d.k}")
    if len(Xnew) == 0:
        raise ValueError("Xnew is empty")
    if T is None:
        T = default_T(d)
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")

    P, P1 = comb(L, 2), comb(L + 1, 2)
    h = np.zeros((P1, P1))
    compared = np.zeros((P1, P1), dtype=bool)
    h[:P, :P] = H.h
    compared[:P, :P] = H.compared
    clouds = d.clouds()
    for rank, (a, b) in enumerate(combinations(range(L), 2)):
        rng = np.random.default_rng([int(seed), _STREAM_NEWLABEL, rank])
        ia = rng.integers(0, len(clouds[a]), size=T)
        ib = rng.integers(0, len(clouds[b]), size=T)
        ix = rng.integers(0, len(Xnew), size=T)
        xa, xb, xn = clouds[a][ia], clouds[b][ib], Xnew[ix]
        da = np.einsum("ij,ij->i", xa - xn, xa - xn)
        db = np.einsum("ij,ij->i", xb - xn, xb - xn)
        iax, ibx = _pidx(a, L), _pidx(b, L)
        _fill(h, compared, iax, ibx, da, db, T)
        if full_triplet:
            dab = np.einsum("ij,ij->i", xa - xb, xa - xb)
            iab = _pidx(a, b)
            _fill(h, compared, iab, iax, dab, da, T)
            _fill(h, compared, iab, ibx, dab, db, T)

    names = tuple(H.label_names) + (NEW_LABEL_NAME,)
    h_new = DominanceMatrix(h, compared, T, L + 1, int(seed), names)
    scores = np.array([h[:, _pidx(a, L)].sum() for a in range(L)])
    predicted = int(np.argmin(scores))  # first minimum on ties
    d_new = dissimilarity_from_dominance(h_new)
    tree_new = agglomerate(d_new, linkage)

    if tree is None:
        tree = agglomerate(dissimilarity_from_dominance(H), linkage)
    sib = tree_new.sibling(L)
    branch = tree.smallest_clade(tree_new.leaves(sib))
    return NewLabelResult(predicted, h_new, d_new, tree_new, branch, tree.leaves(branch), scores)


def _fill(h, compared, i, j, di, dj, T):
    win, lose = int(np.count_nonzero(di < dj)), int(np.count_nonzero(di > dj))
    tie = T - win - lose
    h[i, j] = (win + 0.5 * tie) / T
    h[j, i] = (lose + 0.5 * tie) / T
    compared[i, j] = compared[j, i] = True


# --- tree descent ------------------------------------------------------------

class BinaryNodeClassifier(Protocol):
    def prob_left(self, X: np.ndarray) -> np.ndarray:
        """Probability that each row belongs under the left child."""
        ...


class KNNNodeClassifier:
    """k-NN vote between the two leaf sets under a node: the left
    probability is the share of the k nearest training points whose label
    lies under the left child."""

    def __init__(self, X: np.ndarray, is_left: np.ndarray, k: int = DEFAULT_K):
        if k < 1:
            raise ValueError("k must be >= 1")
        if len(X) == 0:
            raise ValueError("no training points under node")
        if k > len(X):
            warnings.warn(f"k={k} exceeds the {len(X)} training points under the node; "
                          f"using k={len(X)}", stacklevel=2)
            k = len(X)
        self.k = k
        self._tree = cKDTree(np.asarray(X, dtype=float))
        self._left = np.asarray(is_left, dtype=bool)

    def prob_left(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(X) == 0:
            return np.zeros(0)
        _, idx = self._tree.query(X, k=self.k)
        idx = idx.reshape(len(X), self.k)
        return self._left[idx].sum(axis=1) / self.k


def train_node_classifier(d: Dataset, t: Dendrogram, node: int, k: int = DEFAULT_K,
                          factory: Callable[..., BinaryNodeClassifier] | None = None):
    """Fit the binary classifier for internal ``node`` on the training rows
    whose labels lie under it."""
    if t.is_leaf(node):
        raise ValueError(f"node {node} is a leaf")
    left, right = t.children(node)
    under = np.isin(d.labels, t.leaves(node))
    is_left = np.isin(d.labels[under], t.leaves(left))
    factory = factory or KNNNodeClassifier
    return factory(d.features[under], is_left, k)


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[int, ...]
    path: tuple[tuple[int, str, float], ...]  # (node, "L" | "R" | "stop", max prob)
    stopped_early: bool

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        out = {
            "labels": list(self.labels),
            "path": [{"node": n, "side": s, "prob": p} for n, s, p in self.path],
            "stopped_early": self.stopped_early,
        }
        if names is not None:
            out["label_names"] = [names[i] for i in self.labels]
        return out


class TreeDescender:
    """Tree plus one trained classifier per internal node.

    Training happens once; :meth:`descend_batch` then routes many rows
    through the tree together, one classifier call per visited node.
    """

    def __init__(self, d: Dataset, t: Dendrogram, k: int = DEFAULT_K, factory=None):
        if t.n_leaves != d.n_labels:
            raise ValueError("tree and dataset disagree on the number of labels")
        self.tree = t
        self.k = k
        self.classifiers = {node: train_node_classifier(d, t, node, k, factory)
                            for node in t.internal_nodes()}

    def node_probs(self, X: np.ndarray) -> dict[int, np.ndarray]:
        """Left probabilities of every row at every internal node."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return {node: clf.prob_left(X) for node, clf in self.classifiers.items()}

    def descend_batch(self, X, theta: float) -> list[LabelSet]:
        _check_theta(theta)
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            return []
        X = np.atleast_2d(X)
        t = self.tree
        n = len(X)
        paths: list[list] = [[] for _ in range(n)]
        final = np.full(n, t.root)
        early = np.zeros(n, dtype=bool)
        frontier = {t.root: np.arange(n)}
        while frontier:
            nxt: dict[int, list] = {}
            for node, rows in sorted(frontier.items()):
                if t.is_leaf(node):
                    final[rows] = node
                    continue
                pl = self.classifiers[node].prob_left(X[rows])
                pr = 1.0 - pl
                top = np.maximum(pl, pr)
                go = top > theta
                left = pl > pr
                a, b = t.children(node)
                for r, p, g, lf in zip(rows, top, go, left):
                    if g:
                        paths[r].append((node, "L" if lf else "R", float(p)))
                        nxt.setdefault(a if lf else b, []).append(r)
                    else:
                        paths[r].append((node, "stop", float(p)))
                        final[r] = node
                        early[r] = True
            frontier = {k: np.array(v) for k, v in nxt.items()}
        return [LabelSet(t.leaves(int(final[i])), tuple(paths[i]), bool(early[i]))
                for i in range(n)]

    def descend(self, x, theta: float) -> LabelSet:
        return self.descend_batch(np.atleast_2d(np.asarray(x, dtype=float)), theta)[0]


def _check_theta(theta: float) -> None:
    if not 0.5 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0.5, 1], got {theta}")


def descend(t: Dendrogram, d: Dataset, x, theta: float = 0.8, k: int = DEFAULT_K) -> LabelSet:
    """Top-down descent for a single row; trains the node classifiers on
    ``d``. Use :class:`TreeDescender` to reuse them across calls."""
    _check_theta(theta)
    return TreeDescender(d, t, k).descend(x, theta)


def classify_batch(t: Dendrogram, d: Dataset, X, theta: float = 0.8,
                   k: int = DEFAULT_K) -> list[LabelSet]:
    _check_theta(theta)
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return []
    return TreeDescender(d, t, k).descend_batch(X, theta)
