"""Triplet dominance matrix over label pairs and the derived dissimilarity.

``h[i, j]`` estimates the probability that the (never computed) distance
between the two labels of pair ``i`` is smaller than that of pair ``j``. It
is filled by Monte-Carlo sampling one point from each of three label clouds
and comparing the three point-to-point distances.

Pairs are indexed in colexicographic order, ``idx(a, b) = b(b-1)/2 + a`` for
``a < b``. That order does not depend on L, so the pairs of the first L labels
always occupy the leading ``C(L, 2)`` indices; appending a label only appends
rows and columns.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import NamedTuple

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

# domain tags mixed into per-stream seeds
_STREAM_TRIPLET = 0
_STREAM_NEWLABEL = 1
_STREAM_SUBSET = 2


class PairIndex(NamedTuple):
    a: int
    b: int
    idx: int


def pair_index(a: int, b: int, L: int) -> PairIndex:
    if a == b:
        raise ValueError(f"a pair needs two distinct labels, got ({a}, {b})")
    if not (0 <= a < L and 0 <= b < L):
        raise ValueError(f"label id out of range 0..{L - 1}: ({a}, {b})")
    a, b = min(a, b), max(a, b)
    return PairIndex(a, b, b * (b - 1) // 2 + a)


def pair_from_index(idx: int) -> tuple[int, int]:
    b = int((1 + np.sqrt(1 + 8 * idx)) // 2)
    # guard against float rounding of the square root
    while b * (b - 1) // 2 > idx:
        b -= 1
    while (b + 1) * b // 2 <= idx:
        b += 1
    return idx - b * (b - 1) // 2, b


def _pidx(a: int, b: int) -> int:
    if a > b:
        a, b = b, a
    return b * (b - 1) // 2 + a


def pair_names(label_names) -> list[str]:
    L = len(label_names)
    out = [""] * comb(L, 2)
    for a, b in combinations(range(L), 2):
        out[_pidx(a, b)] = f"{label_names[a]}|{label_names[b]}"
    return out


@dataclass(frozen=True, eq=False)
class DominanceMatrix:
    h: np.ndarray
    compared: np.ndarray
    T: int
    L: int
    seed: int
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        P = comb(self.L, 2)
        if self.h.shape != (P, P) or self.compared.shape != (P, P):
            raise ValueError(f"dominance matrix must be {P}x{P} for L={self.L}")
        if not self.label_names:
            object.__setattr__(self, "label_names", tuple(str(a) for a in range(self.L)))
        self.h.setflags(write=False)
        self.compared.setflags(write=False)

    @property
    def n_pairs(self) -> int:
        return self.h.shape[0]

    def complement_error(self) -> float:
        """Largest |h[i,j] + h[j,i] - 1| over entries compared in both directions."""
        both = self.compared & self.compared.T
        if not both.any():
            return 0.0
        return float(np.max(np.abs((self.h + self.h.T)[both] - 1.0)))


@dataclass(frozen=True, eq=False)
class DissimMatrix:
    d: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.d.setflags(write=False)

    @property
    def n_labels(self) -> int:
        return self.d.shape[0]


def default_T(d: Dataset) -> int:
    """Samples per triplet: N/L (rounded up) for balanced data, else the
    largest label count."""
    counts = d.counts()
    if np.all(counts == counts[0]):
        return int(-(-d.n // d.n_labels))
    return int(counts.max())


def _triplet_counts(A, B, C, ia, ib, ic):
    """Win/tie counts of the three pair-vs-pair comparisons for sampled rows.

    Squared distances only; the square root does not change orderings.
    """
    xa, xb, xc = A[ia], B[ib], C[ic]
    dab = np.einsum("ij,ij->i", xa - xb, xa - xb)
    dac = np.einsum("ij,ij->i", xa - xc, xa - xc)
    dbc = np.einsum("ij,ij->i", xb - xc, xb - xc)
    out = []
    for u, v in ((dab, dac), (dab, dbc), (dac, dbc)):
        out.append((int(np.count_nonzero(u < v)), int(np.count_nonzero(u > v))))
    return out


def _process_triplet(clouds, triplet, rank, T, seed):
    a, b, c = triplet
    A, B, C = clouds[a], clouds[b], clouds[c]
    rng = np.random.default_rng([seed, _STREAM_TRIPLET, rank])
    ia = rng.integers(0, len(A), size=T)
    ib = rng.integers(0, len(B), size=T)
    ic = rng.integers(0, len(C), size=T)
    (w1, l1), (w2, l2), (w3, l3) = _triplet_counts(A, B, C, ia, ib, ic)
    iab, iac, ibc = _pidx(a, b), _pidx(a, c), _pidx(b, c)
    # each entry belongs to exactly one label triplet, so no cross-triplet sums
    return [
        (iab, iac, (w1 + 0.5 * (T - w1 - l1)) / T), (iac, iab, (l1 + 0.5 * (T - w1 - l1)) / T),
        (iab, ibc, (w2 + 0.5 * (T - w2 - l2)) / T), (ibc, iab, (l2 + 0.5 * (T - w2 - l2)) / T),
        (iac, ibc, (w3 + 0.5 * (T - w3 - l3)) / T), (ibc, iac, (l3 + 0.5 * (T - w3 - l3)) / T),
    ]


def _build(d: Dataset, T: int, seed: int, ranks, threads: int) -> DominanceMatrix:
    L = d.n_labels
    if L < 3:
        raise ValueError(f"triplet ordering needs L >= 3 labels, got {L}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    seed = int(seed)
    clouds = d.clouds()
    triplets = list(combinations(range(L), 3))
    ranks = list(ranks)
    P = comb(L, 2)
    h = np.zeros((P, P))
    compared = np.zeros((P, P), dtype=bool)

    def work(chunk):
        return [_process_triplet(clouds, triplets[r], r, T, seed) for r in chunk]

    if threads > 1 and len(ranks) > 1:
        step = -(-len(ranks) // threads)
        chunks = [ranks[i:i + step] for i in range(0, len(ranks), step)]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = [r for part in ex.map(work, chunks) for r in part]
    else:
        results = work(ranks)
    for entries in results:
        for i, j, v in entries:
            h[i, j] = v
            compared[i, j] = True
    return DominanceMatrix(h, compared, T, L, seed, d.label_names)


def build_dominance_full(d: Dataset, T: int | None = None, seed: int = 0,
                         threads: int = 1) -> DominanceMatrix:
    """Estimate the dominance matrix from every label triplet.

    For each triplet ``(a, b, c)`` T point triplets are drawn uniformly with
    replacement, independently from the three clouds. Exact distance ties
    credit half a sample to each side, so ``h[i,j] + h[j,i] = 1`` holds for
    every compared entry. Entries between pairs sharing no label stay 0.

    Every triplet draws from its own generator seeded by ``(seed, rank)``, so
    the result is identical for any ``threads``.
    """
    if T is None:
        T = default_T(d)
    return _build(d, T, seed, range(comb(d.n_labels, 3)), threads)


def select_triplets(L: int, triplet_fraction: float, seed: int) -> np.ndarray:
    """Sorted ranks of a uniform random subset of ``round(fraction * C(L,3))``
    label triplets."""
    if not 0 < triplet_fraction <= 1:
        raise ValueError("triplet_fraction must lie in (0, 1]")
    total = comb(L, 3)
    m = int(round(triplet_fraction * total))
    if m >= total:
        return np.arange(total)
    rng = np.random.default_rng([int(seed), _STREAM_SUBSET])
    return np.sort(rng.choice(total, size=m, replace=False))


def build_dominance_sparse(d: Dataset, T: int | None = None, triplet_fraction: float = 1.0,
                           seed: int = 0, threads: int = 1) -> DominanceMatrix:
    """Like :func:`build_dominance_full` restricted to a random subset of
    label triplets. Sampling streams are keyed by triplet rank, so a fraction
    of 1 reproduces the full build bit for bit."""
    if T is None:
        T = default_T(d)
    if d.n_labels < 3:
        raise ValueError(f"triplet ordering needs L >= 3 labels, got {d.n_labels}")
    ranks = select_triplets(d.n_labels, triplet_fraction, seed)
    return _build(d, T, seed, ranks.tolist(), threads)


def densify_transitive(Hs: DominanceMatrix) -> DominanceMatrix:
    """Fill uncompared entries through one intermediate pair:
    ``min(h + h @ h, 1)``.

    The result is not renormalised, so ``h[i,j] + h[j,i]`` may exceed 1 on
    filled-in entries.
    """
    h = Hs.h
    density = np.count_nonzero(h) / max(h.size, 1)
    if density < 0.05 and h.shape[0] > 500:
        from scipy import sparse

        S = sparse.csr_matrix(h)
        prod = (S @ S).toarray()
    else:
        prod = h @ h
    out = np.minimum(h + prod, 1.0)
    compared = Hs.compared | (prod > 0)
    np.fill_diagonal(out, 0.0)
    np.fill_diagonal(compared, False)
    return DominanceMatrix(out, compared, Hs.T, Hs.L, Hs.seed, Hs.label_names)


def dissimilarity_from_dominance(H: DominanceMatrix) -> DissimMatrix:
    """``D(a, b)`` = column sum of ``h`` at pair ``(a, b)`` over ``C(L, 2)``.

    The column of pair ``(a, b)`` accumulates how often other pairs are
    closer than ``(a, b)``, so large values mean far apart. The result is not
    a metric.
    """
    L = H.L
    colsum = H.h.sum(axis=0) / comb(L, 2)
    D = np.zeros((L, L))
    for a, b in combinations(range(L), 2):
        D[a, b] = D[b, a] = colsum[_pidx(a, b)]
    return DissimMatrix(D, tuple(H.label_names))


def memory_estimate(L: int) -> int:
    """Bytes needed for ``h`` (float64) plus ``compared`` (bool)."""
    P = comb(L, 2)
    return P * P * 9


# --- export ------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def dominance_to_csv(H: DominanceMatrix) -> str:
    names = pair_names(H.label_names)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", *names])
    for name, row in zip(names, H.h):
        w.writerow([name, *(_fmt(v) for v in row)])
    return buf.getvalue()


def dissim_to_csv(D: DissimMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", *D.labels])
    for name, row in zip(D.labels, D.d):
        w.writerow([name, *(_fmt(v) for v in row)])
    return buf.getvalue()


def dominance_to_json(H: DominanceMatrix) -> str:
    doc = {
        "L": H.L,
        "T": H.T,
        "seed": H.seed,
        "labels": list(H.label_names),
        "pairs": pair_names(H.label_names),
        "h": H.h.tolist(),
        "compared": H.compared.tolist(),
    }
    return json.dumps(doc)


def dominance_from_json(text: str) -> DominanceMatrix:
    doc = json.loads(text)
    return DominanceMatrix(np.array(doc["h"], dtype=float),
                           np.array(doc["compared"], dtype=bool),
                           int(doc["T"]), int(doc["L"]), int(doc["seed"]),
                           tuple(doc.get("labels", ())))
