"""Independent reference computations used as test oracles.

Nothing here imports the code under test's sampling or clustering paths.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations, product


def _sq(u, v):
    return sum((float(a) - float(b)) ** 2 for a, b in zip(u, v))


def colex(a, b):
    a, b = min(a, b), max(a, b)
    return b * (b - 1) // 2 + a


def exact_dominance(clouds):
    """Exact dominance probabilities by enumerating every point triplet of
    every label triplet. Returns {(i, j): Fraction} over compared entries."""
    L = len(clouds)
    out = {}
    for a, b, c in combinations(range(L), 3):
        A, B, C = clouds[a], clouds[b], clouds[c]
        total = len(A) * len(B) * len(C)
        wins = {k: Fraction(0) for k in range(6)}
        for xa, xb, xc in product(A, B, C):
            dab, dac, dbc = _sq(xa, xb), _sq(xa, xc), _sq(xb, xc)
            for k, (u, v) in enumerate(((dab, dac), (dab, dbc), (dac, dbc))):
                if u < v:
                    wins[2 * k] += 1
                elif u > v:
                    wins[2 * k + 1] += 1
                else:
                    wins[2 * k] += Fraction(1, 2)
                    wins[2 * k + 1] += Fraction(1, 2)
        iab, iac, ibc = colex(a, b), colex(a, c), colex(b, c)
        for k, (i, j) in enumerate(((iab, iac), (iab, ibc), (iac, ibc))):
            out[(i, j)] = wins[2 * k] / total
            out[(j, i)] = wins[2 * k + 1] / total
    return out


def clade_sets(nested):
    """All clades (frozensets of leaves) of a nested-tuple tree, root included."""
    out = []

    def walk(n):
        if isinstance(n, int):
            return frozenset([n])
        s = walk(n[0]) | walk(n[1])
        out.append(s)
        return s

    walk(nested)
    return out


def rf_bruteforce(t1, t2):
    """Unrooted Robinson-Foulds between nested tuples, by enumerating every
    bipartition of the leaf set and testing whether each tree induces it."""
    leaves = sorted(clade_sets(t1)[-1])
    n = len(leaves)
    c1, c2 = set(clade_sets(t1)), set(clade_sets(t2))
    everyone = frozenset(leaves)

    def induced(clades, side):
        return side in clades or (everyone - side) in clades

    dist = 0
    for r in range(2, n - 1):
        for side in combinations(leaves, r):
            side = frozenset(side)
            if leaves[0] in side:
                continue  # count each bipartition once
            if induced(c1, side) != induced(c2, side):
                dist += 1
    return dist


def knn_left_share(X, is_left, x, k):
    """Brute-force k-NN left-vote share (distance ties broken by row order)."""
    d = sorted(range(len(X)), key=lambda i: (_sq(X[i], x), i))
    return sum(bool(is_left[i]) for i in d[:k]) / k
