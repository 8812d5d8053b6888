"""Cross-validated tree-descent evaluation, the directed error-flow matrix
and its predictive-graph rendering."""

from __future__ import annotations

import csv
import io
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classify import DEFAULT_K, TreeDescender
from .dataset import Dataset, split_stratified
from .hierarchy import agglomerate
from .ordering import (
    build_dominance_full,
    build_dominance_sparse,
    default_T,
    densify_transitive,
    dissimilarity_from_dominance,
)


@dataclass(eq=False)
class ConfusionMatrix:
    """Singleton predictions in ``counts[true, predicted]``; set-valued
    predictions (``|set| > 1``) are abstentions, kept per row with their sets."""

    counts: np.ndarray
    abstain: np.ndarray
    label_names: tuple[str, ...]
    theta: float = float("nan")
    sets: Counter = field(default_factory=Counter)  # (true, labels) -> count

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.abstain

    def covered(self) -> np.ndarray:
        """Per-row count of instances whose returned set holds the true label."""
        cov = np.diag(self.counts).astype(np.int64).copy()
        for (true, labels), c in self.sets.items():
            if true in labels:
                cov[true] += c
        return cov

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / max(self.row_totals().sum(), 1))

    def coverage(self) -> float:
        return float(self.covered().sum() / max(self.row_totals().sum(), 1))

    def abstention_rate(self) -> float:
        return float(self.abstain.sum() / max(self.row_totals().sum(), 1))

    def add(self, true: int, labels: Sequence[int]) -> None:
        if len(labels) == 1:
            self.counts[true, labels[0]] += 1
        else:
            self.abstain[true] += 1
            self.sets[(int(true), tuple(int(v) for v in labels))] += 1


def _fold_descenders(d: Dataset, folds: int, k: int, T: int | None, seed: int, linkage: str,
                     threads: int, triplet_fraction: float, densify: bool):
    for train, test in split_stratified(d, folds, seed):
        t_fold = default_T(train) if T is None else T
        if triplet_fraction < 1 or densify:
            H = build_dominance_sparse(train, t_fold, triplet_fraction, seed, threads)
            if densify:
                H = densify_transitive(H)
        else:
            H = build_dominance_full(train, t_fold, seed, threads)
        tree = agglomerate(dissimilarity_from_dominance(H), linkage)
        yield TreeDescender(train, tree, k), test


def cross_validate_sweep(d: Dataset, folds: int = 5, thetas: Sequence[float] = (0.8,),
                         k: int = DEFAULT_K, T: int | None = None, seed: int = 0,
                         linkage: str = "average", threads: int = 1,
                         triplet_fraction: float = 1.0, densify: bool = False,
                         ) -> list[ConfusionMatrix]:
    """One confusion matrix per theta, all computed on the same folds and
    trees. Each fold builds its own dominance matrix, tree and node
    classifiers from the training part only."""
    L = d.n_labels
    out = [ConfusionMatrix(np.zeros((L, L), dtype=np.int64), np.zeros(L, dtype=np.int64),
                           d.label_names, float(th)) for th in thetas]
    for desc, test in _fold_descenders(d, folds, k, T, seed, linkage, threads,
                                       triplet_fraction, densify):
        for cm, th in zip(out, thetas):
            for true, ls in zip(test.labels, desc.descend_batch(test.features, th)):
                cm.add(int(true), ls.labels)
    return out


def cross_validate(d: Dataset, folds: int = 5, theta: float = 0.8, k: int = DEFAULT_K,
                   T: int | None = None, seed: int = 0, **kw) -> ConfusionMatrix:
    return cross_validate_sweep(d, folds, (theta,), k, T, seed, **kw)[0]


@dataclass(eq=False)
class ErrorFlowMatrix:
    e: np.ndarray  # percent of row label's instances predicted as column label
    abstention: np.ndarray  # percent of row label's instances given a label set
    label_names: tuple[str, ...]


def error_flow(c: ConfusionMatrix) -> ErrorFlowMatrix:
    """Row-normalise counts to percentages of each label's test instances.

    Abstention mass stays out of ``e`` and is reported per row, so a row of
    ``e`` sums to ``100 - abstention``. No symmetrisation.
    """
    totals = c.row_totals()
    if np.any(totals == 0):
        empty = [c.label_names[i] for i in np.flatnonzero(totals == 0)]
        raise ValueError(f"no test instances for label(s): {', '.join(empty)}")
    e = 100.0 * c.counts / totals[:, None]
    ab = 100.0 * c.abstain / totals
    return ErrorFlowMatrix(e, ab, c.label_names)


@dataclass(eq=False)
class PredictiveGraph:
    nodes: tuple[str, ...]
    edges: list[tuple[int, int, float]]  # (source, target, weight)


def build_graph(e: ErrorFlowMatrix, min_edge: float = 0.0) -> PredictiveGraph:
    """Directed edge ``i -> j`` for every off-diagonal flow of at least
    ``min_edge`` percent. Zero flows never become edges."""
    if min_edge < 0:
        raise ValueError("min_edge must be >= 0")
    L = len(e.label_names)
    edges = [(i, j, float(e.e[i, j])) for i in range(L) for j in range(L)
             if i != j and e.e[i, j] > 0 and e.e[i, j] >= min_edge]
    return PredictiveGraph(tuple(e.label_names), edges)


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(g: PredictiveGraph, name: str = "predictive_graph") -> str:
    lines = [f"digraph {name} {{"]
    for n in g.nodes:
        lines.append(f"  {_dot_id(n)};")
    for i, j, w in sorted(g.edges):
        lines.append(f'  {_dot_id(g.nodes[i])} -> {_dot_id(g.nodes[j])} '
                     f'[label="{w:.1f}", weight={w:.4f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


_NODE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*;\s*$')
_EDGE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*->\s*"((?:[^"\\]|\\.)*)"\s*'
                   r'\[label="[^"]*",\s*weight=([-0-9.eE+]+)\]\s*;\s*$')


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s)


def parse_dot(text: str) -> PredictiveGraph:
    """Read back the subset of DOT written by :func:`export_dot`."""
    nodes: list[str] = []
    raw_edges = []
    for line in text.splitlines():
        if m := _NODE.match(line):
            nodes.append(_unescape(m.group(1)))
        elif m := _EDGE.match(line):
            raw_edges.append((_unescape(m.group(1)), _unescape(m.group(2)), float(m.group(3))))
    pos = {n: i for i, n in enumerate(nodes)}
    return PredictiveGraph(tuple(nodes), [(pos[a], pos[b], w) for a, b, w in raw_edges])


# --- exports -----------------------------------------------------------------

def confusion_to_csv(c: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *c.label_names, "abstained"])
    for name, row, ab in zip(c.label_names, c.counts, c.abstain):
        w.writerow([name, *(int(v) for v in row), int(ab)])
    return buf.getvalue()


def eflow_to_csv(e: ErrorFlowMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *e.label_names, "abstained"])
    for name, row, ab in zip(e.label_names, e.e, e.abstention):
        w.writerow([name, *(f"{v:.4f}" for v in row), f"{ab:.4f}"])
    return buf.getvalue()


def summary(c: ConfusionMatrix) -> dict:
    totals = c.row_totals()
    cov = c.covered()
    per_label = []
    for i, name in enumerate(c.label_names):
        n = int(totals[i])
        per_label.append({
            "label": name,
            "n": n,
            "accuracy": float(c.counts[i, i] / n) if n else None,
            "coverage": float(cov[i] / n) if n else None,
            "abstention_rate": float(c.abstain[i] / n) if n else None,
        })
    sets = [{"true": c.label_names[t], "set": [c.label_names[v] for v in labels], "count": n}
            for (t, labels), n in sorted(c.sets.items())]
    return {
        "theta": c.theta,
        "accuracy": c.accuracy(),
        "coverage": c.coverage(),
        "abstention_rate": c.abstention_rate(),
        "per_label": per_label,
        "set_frequencies": sets,
    }
