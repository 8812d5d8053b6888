"""Labeled point-cloud data: CSV ingestion, scaling, stratified folds and
synthetic hierarchical Gaussian clouds."""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Base class for malformed or unusable input data."""


class MissingFileError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class MissingColumnError(DataError):
    pass


class NonNumericError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} at row {row}, column {column!r}")


class TooFewLabelsError(DataError):
    def __init__(self, n_labels: int):
        self.n_labels = n_labels
        super().__init__(f"fewer than 2 labels (found {n_labels})")


class FoldError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """N rows of K features with dense integer labels 0..L-1.

    The arrays are made read-only on construction so a Dataset can be shared
    freely between threads.
    """

    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError("features must be a 2-D array")
        if y.shape != (X.shape[0],):
            raise DataError("labels must have one entry per feature row")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or infinite values")
        L = len(self.label_names)
        if L < 2:
            raise TooFewLabelsError(L)
        if X.shape[1] < 1 or len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names must name each of K >= 1 columns")
        if y.size and (y.min() < 0 or y.max() >= L):
            raise DataError("label ids must lie in 0..L-1")
        if np.any(np.bincount(y, minlength=L) == 0):
            raise DataError("every label id in 0..L-1 must occur at least once")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "label_names", tuple(str(s) for s in self.label_names))
        object.__setattr__(self, "feature_names", tuple(str(s) for s in self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def k(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_labels)

    def cloud(self, label: int) -> np.ndarray:
        """Feature rows carrying ``label``."""
        return self.features[self.labels == label]

    def clouds(self) -> list[np.ndarray]:
        return [self.cloud(a) for a in range(self.n_labels)]

    def subset(self, rows) -> "Dataset":
        """Rows ``rows`` with the full label space kept (ids unchanged)."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.label_names,
                       self.feature_names, dict(self.meta))


def from_arrays(X, y, label_names=None, feature_names=None) -> Dataset:
    """Build a Dataset from arbitrary label values, densely re-indexed in
    first-appearance order."""
    y = list(y)
    order: dict = {}
    for v in y:
        order.setdefault(v, len(order))
    ids = np.array([order[v] for v in y], dtype=np.int64)
    if label_names is None:
        label_names = [str(v) for v in order]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(X.shape[1])]
    return Dataset(X, ids, tuple(label_names), tuple(feature_names))


def load_csv(path, label_column: str, feature_columns: Sequence[str] | None = None) -> Dataset:
    """Read a comma-separated, headed, UTF-8 file.

    Labels are re-indexed 0..L-1 in order of first appearance; the original
    strings are kept in ``label_names``. When ``feature_columns`` is None every
    column except the label column is used.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFileError(f"empty file: {path}")
        header = [h.strip() for h in header]
        rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise EmptyFileError(f"no data rows in {path}")
    if label_column not in header:
        raise MissingColumnError(f"label column {label_column!r} not in header")
    if feature_columns is None:
        feature_columns = [h for h in header if h != label_column]
    missing = [c for c in feature_columns if c not in header]
    if missing:
        raise MissingColumnError(f"feature column(s) not in header: {', '.join(missing)}")
    if not feature_columns:
        raise MissingColumnError("no feature columns selected")

    li = header.index(label_column)
    fi = [header.index(c) for c in feature_columns]
    X = np.empty((len(rows), len(fi)))
    raw_labels = []
    for r, row in enumerate(rows):
        # row numbers are 1-based data rows (header excluded)
        if len(row) < len(header):
            raise DataError(f"row {r + 1} has {len(row)} fields, expected {len(header)}")
        raw_labels.append(row[li].strip())
        for j, c in enumerate(fi):
            cell = row[c].strip()
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericError(r + 1, header[c], cell) from None
            if not math.isfinite(v):
                raise NonNumericError(r + 1, header[c], cell)
            X[r, j] = v

    n_labels = len(set(raw_labels))
    if n_labels < 2:
        raise TooFewLabelsError(n_labels)
    d = from_arrays(X, raw_labels, feature_names=list(feature_columns))
    log.info("loaded %s: N=%d K=%d L=%d", path, d.n, d.k, d.n_labels)
    return d


def standardize(d: Dataset) -> Dataset:
    """z-score each non-constant column (sample std, ddof=1); constant columns
    pass through unchanged."""
    if d.n < 2:
        return d
    mu, sd = column_scaling(d)
    meta = dict(d.meta, standardized=True, scaling={"mean": mu.tolist(), "std": sd.tolist()})
    return Dataset(apply_scaling(d.features, mu, sd), d.labels, d.label_names,
                   d.feature_names, meta)


def column_scaling(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Column means and sample standard deviations; zero-variance columns get
    mean 0 and std 1 so they pass through unchanged."""
    X = d.features
    mu = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1) if len(X) > 1 else np.zeros(X.shape[1])
    const = ~(sd > 0)
    mu = np.where(const, 0.0, mu)
    sd = np.where(const, 1.0, sd)
    return mu, sd


def apply_scaling(X, mu, sd) -> np.ndarray:
    return (np.asarray(X, dtype=float) - mu) / sd


def split_stratified(d: Dataset, folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold split.

    Each label's rows are shuffled with a seeded generator and dealt
    round-robin into folds, so per-label fold sizes differ by at most one.
    """
    if folds < 2:
        raise FoldError("folds must be >= 2")
    counts = d.counts()
    short = [d.label_names[a] for a in range(d.n_labels) if counts[a] < folds]
    if short:
        raise FoldError(f"label(s) with fewer members than folds={folds}: {', '.join(short)}")
    assign = fold_assignment(d.labels, folds, seed)
    out = []
    for f in range(folds):
        test = np.flatnonzero(assign == f)
        train = np.flatnonzero(assign != f)
        out.append((d.subset(train), d.subset(test)))
    return out


def fold_assignment(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for a in np.unique(labels):
        idx = np.flatnonzero(labels == a)
        idx = idx[rng.permutation(len(idx))]
        # rotate the starting fold so remainders don't pile onto fold 0
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset = (offset + len(idx)) % folds
    return assign


# --- synthetic hierarchical clouds ------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Nested binary grouping of label ids, e.g. ``((0, 1), (2, 3))``.

    Leaves under different children of the root sit ``base_separation`` apart
    (mean to mean); each level down halves that distance unless
    ``separations`` maps a subtree tuple to an explicit value.
    """

    tree_topology: object
    base_separation: float = 100.0
    cluster_std: float = 1.0
    points_per_label: int = 100
    dimension: int = 3
    seed: int = 0
    separations: Mapping[tuple, float] | None = None

    def __post_init__(self):
        leaves = sorted(_leaves(self.tree_topology))
        if leaves != list(range(len(leaves))) or len(leaves) < 2:
            raise ValueError("topology leaves must be exactly 0..L-1, each once, with L >= 2")
        if not self.base_separation > 0 or not self.cluster_std > 0:
            raise ValueError("base_separation and cluster_std must be > 0")
        if self.points_per_label < 1 or self.dimension < 1:
            raise ValueError("points_per_label and dimension must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_labels(self) -> int:
        return len(_leaves(self.tree_topology))


def _leaves(node) -> list[int]:
    if isinstance(node, (int, np.integer)):
        return [int(node)]
    if not isinstance(node, tuple) or len(node) != 2:
        raise ValueError(f"topology nodes must be ints or 2-tuples, got {node!r}")
    return _leaves(node[0]) + _leaves(node[1])


def balanced_topology(L: int, start: int = 0):
    """Balanced binary grouping of ``start..start+L-1`` (left half gets the
    smaller share when L is odd)."""
    if L == 1:
        return start
    h = L // 2
    return (balanced_topology(h, start), balanced_topology(L - h, start + h))


def parse_topology(text: str):
    """Parse ``"((0,1),(2,3))"``-style text into nested tuples."""
    import ast

    node = ast.literal_eval(text.strip())
    if isinstance(node, list):
        node = _to_tuple(node)
    _leaves(node)
    return node


def _to_tuple(x):
    return tuple(_to_tuple(v) for v in x) if isinstance(x, list) else x


def ultrametric_targets(spec: SyntheticSpec) -> np.ndarray:
    """L x L matrix of configured mean-to-mean distances."""
    L = spec.n_labels
    M = np.zeros((L, L))
    seps = dict(spec.separations or {})

    def walk(node, depth, parent_sep):
        if isinstance(node, (int, np.integer)):
            return
        s = seps.get(node, spec.base_separation / 2**depth)
        if s > parent_sep + 1e-12:
            raise ValueError(f"separation {s} of {node!r} exceeds its parent's {parent_sep}")
        left, right = _leaves(node[0]), _leaves(node[1])
        for i in left:
            for j in right:
                M[i, j] = M[j, i] = s
        walk(node[0], depth + 1, s)
        walk(node[1], depth + 1, s)

    walk(spec.tree_topology, 0, math.inf)
    return M


def synthetic_means(spec: SyntheticSpec) -> np.ndarray:
    """Embed the configured ultrametric exactly via classical scaling.

    Ultrametrics are Euclidean, so the embedding is exact whenever
    ``dimension >= L - 1``; below that the leading coordinates are kept.
    """
    M = ultrametric_targets(spec)
    L = M.shape[0]
    J = np.eye(L) - 1.0 / L
    B = -0.5 * J @ (M**2) @ J
    w, V = np.linalg.eigh(B)
    order = np.argsort(w)[::-1]
    w, V = np.clip(w[order], 0, None), V[:, order]
    coords = V * np.sqrt(w)
    rank = int(np.sum(w > 1e-9 * max(w[0], 1.0)))
    if spec.dimension < rank:
        warnings.warn(f"dimension {spec.dimension} < {rank}: mean distances are approximate",
                      stacklevel=3)
    out = np.zeros((L, spec.dimension))
    m = min(spec.dimension, L)
    out[:, :m] = coords[:, :m]
    return out


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    means = synthetic_means(spec)
    L = means.shape[0]
    n = spec.points_per_label
    rng = np.random.default_rng(int(spec.seed))
    X = np.concatenate([means[a] + spec.cluster_std * rng.standard_normal((n, spec.dimension))
                        for a in range(L)])
    y = np.repeat(np.arange(L), n)
    return Dataset(X, y, tuple(str(a) for a in range(L)),
                   tuple(f"x{j}" for j in range(spec.dimension)),
                   {"synthetic": True, "means": means.tolist()})


def write_csv(d: Dataset, path, label_column: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([label_column, *d.feature_names])
        for name, row in zip((d.label_names[a] for a in d.labels), d.features):
            w.writerow([name, *(repr(float(v)) for v in row)])
