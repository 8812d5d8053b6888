"""Fine-scale analysis: split each label's cloud into sublabel clusters and
rerun the tree / error-flow pipeline over the sublabel space."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.metrics import silhouette_score

from .classify import DEFAULT_K
from .dataset import DataError, Dataset
from .evalgraph import (
    ConfusionMatrix,
    ErrorFlowMatrix,
    PredictiveGraph,
    build_graph,
    cross_validate,
    error_flow,
)
from .hierarchy import Dendrogram, agglomerate
from .ordering import (
    DominanceMatrix,
    build_dominance_full,
    build_dominance_sparse,
    default_T,
    densify_transitive,
    dissimilarity_from_dominance,
    memory_estimate,
)

log = logging.getLogger(__name__)

MAX_LINKAGE_ROWS = 2000


@dataclass(eq=False)
class SublabelMap:
    parent: np.ndarray  # sublabel id -> original label id
    members: list[np.ndarray]  # sublabel id -> row indices into the dataset
    k_per_label: list[int]
    silhouette: list[float | None] = field(default_factory=list)

    @property
    def n_sublabels(self) -> int:
        return len(self.members)

    def of_parent(self, label: int) -> list[int]:
        return [int(s) for s in np.flatnonzero(self.parent == label)]

    def to_dict(self, d: Dataset) -> dict:
        return {
            "n_sublabels": self.n_sublabels,
            "k_per_label": {d.label_names[a]: k for a, k in enumerate(self.k_per_label)},
            "sublabels": [
                {"id": s, "name": sublabel_name(d, self, s), "parent": d.label_names[self.parent[s]],
                 "size": int(len(m)), "rows": [int(r) for r in m]}
                for s, m in enumerate(self.members)
            ],
        }


def sublabel_name(d: Dataset, m: SublabelMap, s: int) -> str:
    p = int(m.parent[s])
    return f"{d.label_names[p]}.{m.of_parent(p).index(s)}"


def _cluster_label(X: np.ndarray, k_max: int, min_size: int, rng) -> tuple[np.ndarray, float | None]:
    n = len(X)
    if n > MAX_LINKAGE_ROWS:
        sub = np.sort(rng.choice(n, size=MAX_LINKAGE_ROWS, replace=False))
    else:
        sub = np.arange(n)
    Xs = X[sub]
    Z = linkage(Xs, method="average", metric="euclidean")
    best_k, best_s, best_assign = 1, None, np.zeros(len(Xs), dtype=np.int64)
    for k in range(2, min(k_max, len(Xs) - 1) + 1):
        assign = fcluster(Z, k, criterion="maxclust") - 1
        if len(np.unique(assign)) < 2:
            continue
        s = float(silhouette_score(Xs, assign))
        if best_s is None or s > best_s:
            best_k, best_s, best_assign = k, s, assign

    # relabel to 0..m-1 and extend to all rows via nearest centroid
    _, best_assign = np.unique(best_assign, return_inverse=True)
    cents = np.array([Xs[best_assign == c].mean(axis=0) for c in range(best_assign.max() + 1)])
    full = _nearest(X, cents)
    full[sub] = best_assign

    while True:
        ids, sizes = np.unique(full, return_counts=True)
        if len(ids) <= 1 or sizes.min() >= min_size:
            break
        small = ids[np.argmin(sizes)]  # first smallest on ties
        cents = {c: X[full == c].mean(axis=0) for c in ids}
        others = [c for c in ids if c != small]
        dist = [np.sum((cents[c] - cents[small]) ** 2) for c in others]
        full[full == small] = others[int(np.argmin(dist))]
    _, full = np.unique(full, return_inverse=True)
    return full, best_s


def _nearest(X, cents):
    d2 = ((X[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def discover_sublabels(d: Dataset, k_max: int = 12, min_cluster_size: int = 25,
                       seed: int = 0) -> SublabelMap:
    """Per label: average-linkage tree on its rows (linkage on at most 2000
    sampled rows, the rest joined to the nearest cluster centroid), cut at
    the k in ``[2, k_max]`` with the best mean silhouette. Clusters under
    ``min_cluster_size`` are folded into the nearest-centroid cluster; a
    label may end up as a single sublabel."""
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    if min_cluster_size < 1:
        raise ValueError("min_cluster_size must be >= 1")
    parent, members, ks, sils = [], [], [], []
    for a in range(d.n_labels):
        rows = np.flatnonzero(d.labels == a)
        if len(rows) < 2 * min_cluster_size:
            raise DataError(f"label {d.label_names[a]!r} has {len(rows)} rows; "
                            f"need at least {2 * min_cluster_size}")
        rng = np.random.default_rng([int(seed), a])
        assign, s = _cluster_label(d.features[rows], k_max, min_cluster_size, rng)
        groups = [rows[assign == c] for c in range(assign.max() + 1)]
        groups.sort(key=lambda g: g[0])
        for g in groups:
            parent.append(a)
            members.append(g)
        ks.append(len(groups))
        sils.append(s)
        log.debug("label %s: %d sublabel(s), silhouette %s", d.label_names[a], len(groups), s)
    return SublabelMap(np.array(parent, dtype=np.int64), members, ks, sils)


def relabel(d: Dataset, m: SublabelMap) -> Dataset:
    y = np.empty(d.n, dtype=np.int64)
    for s, rows in enumerate(m.members):
        y[rows] = s
    names = tuple(sublabel_name(d, m, s) for s in range(m.n_sublabels))
    meta = dict(d.meta, parent_labels=[d.label_names[p] for p in m.parent])
    return Dataset(d.features, y, names, d.feature_names, meta)


def dispersion_flags(t: Dendrogram, m: SublabelMap, d: Dataset) -> dict[str, str]:
    """"uniform" when a parent's sublabels form one clade of the sublabel
    tree, else "heterogeneous"."""
    flags = {}
    for a in range(d.n_labels):
        subs = m.of_parent(a)
        clade = t.leaves(t.smallest_clade(subs))
        flags[d.label_names[a]] = "uniform" if set(clade) == set(subs) else "heterogeneous"
    return flags


@dataclass
class FineConfig:
    k_max: int = 12
    min_cluster_size: int = 25
    seed: int = 0
    T: int | None = None
    theta: float = 0.8
    knn_k: int = DEFAULT_K
    folds: int = 5
    linkage: str = "average"
    min_edge: float = 0.0
    entry_budget: float = 1e8
    sparse_fraction: float = 0.1
    threads: int = 1


@dataclass(eq=False)
class FineResult:
    map: SublabelMap
    dataset: Dataset
    H: DominanceMatrix
    tree: Dendrogram
    confusion: ConfusionMatrix
    eflow: ErrorFlowMatrix
    graph: PredictiveGraph
    flags: dict[str, str]
    sparse: bool
    memory_bytes: int
    config: FineConfig

    def summary(self) -> dict:
        return {
            "n_sublabels": self.map.n_sublabels,
            "k_per_label": {self.dataset.meta["parent_names"][a]: k
                            for a, k in enumerate(self.map.k_per_label)},
            "dispersion": self.flags,
            "sparse_path": self.sparse,
            "dominance_entries": comb(self.dataset.n_labels, 2) ** 2,
            "memory_estimate_bytes": self.memory_bytes,
            "accuracy": self.confusion.accuracy(),
            "coverage": self.confusion.coverage(),
            "abstention_rate": self.confusion.abstention_rate(),
            # thread count is run metadata, not part of the result
            "config": {k: v for k, v in asdict(self.config).items() if k != "threads"},
        }


def fine_pipeline(d: Dataset, config: FineConfig | None = None) -> FineResult:
    """Sublabel discovery, relabelling, then dominance matrix, tree and
    cross-validated error flow over the sublabels.

    When ``C(L', 2)**2`` exceeds ``config.entry_budget`` the tree is built
    from a triplet subset densified through one intermediate pair.
    """
    cfg = config or FineConfig()
    m = discover_sublabels(d, cfg.k_max, cfg.min_cluster_size, cfg.seed)
    fine = relabel(d, m)
    fine = Dataset(fine.features, fine.labels, fine.label_names, fine.feature_names,
                   dict(fine.meta, parent_names=list(d.label_names)))
    Lp = fine.n_labels
    entries = comb(Lp, 2) ** 2
    mem = memory_estimate(Lp)
    sparse = entries > cfg.entry_budget
    log.info("%d sublabels: %d dominance entries, ~%.1f MB%s", Lp, entries, mem / 2**20,
             " (sparse path)" if sparse else "")
    T = default_T(fine) if cfg.T is None else cfg.T
    if sparse:
        H = densify_transitive(build_dominance_sparse(fine, T, cfg.sparse_fraction, cfg.seed,
                                                      cfg.threads))
    else:
        H = build_dominance_full(fine, T, cfg.seed, cfg.threads)
    tree = agglomerate(dissimilarity_from_dominance(H), cfg.linkage)
    cm = cross_validate(fine, cfg.folds, cfg.theta, cfg.knn_k, cfg.T, cfg.seed,
                        linkage=cfg.linkage, threads=cfg.threads,
                        triplet_fraction=cfg.sparse_fraction if sparse else 1.0, densify=sparse)
    ef = error_flow(cm)
    g = build_graph(ef, cfg.min_edge)
    return FineResult(m, fine, H, tree, cm, ef, g, dispersion_flags(tree, m, d), sparse, mem, cfg)
