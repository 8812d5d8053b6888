from itertools import combinations
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_small
from labeltree.dataset import SyntheticSpec, from_arrays, generate_synthetic
from labeltree.hierarchy import agglomerate, tree_distance
from labeltree.ordering import (
    DominanceMatrix,
    build_dominance_full,
    build_dominance_sparse,
    default_T,
    densify_transitive,
    dissim_to_csv,
    dissimilarity_from_dominance,
    dominance_from_json,
    dominance_to_csv,
    dominance_to_json,
    pair_from_index,
    pair_index,
    select_triplets,
)
from oracles import colex, exact_dominance


def test_pair_index_examples():
    assert pair_index(0, 1, 14).idx == 0
    assert pair_index(12, 13, 14).idx == 90 == comb(14, 2) - 1
    assert pair_index(1, 0, 14) == pair_index(0, 1, 14)
    with pytest.raises(ValueError):
        pair_index(3, 3, 14)
    with pytest.raises(ValueError):
        pair_index(0, 14, 14)


def test_pair_index_bijection():
    for L in (2, 3, 7, 20):
        seen = set()
        for a, b in combinations(range(L), 2):
            p = pair_index(a, b, L)
            assert pair_from_index(p.idx) == (a, b)
            seen.add(p.idx)
        assert seen == set(range(comb(L, 2)))


def test_pair_index_prefix_stable():
    # pairs of the first L labels keep their index when a label is appended
    for a, b in combinations(range(6), 2):
        assert pair_index(a, b, 6).idx == pair_index(a, b, 7).idx


def test_degenerate_singletons():
    d = from_arrays([[0.0], [0.0], [100.0]], [0, 1, 2])
    H = build_dominance_full(d, T=7, seed=0)
    ab, ac, bc = colex(0, 1), colex(0, 2), colex(1, 2)
    assert H.h[ab, ac] == 1 and H.h[ab, bc] == 1
    assert H.h[ac, bc] == 0.5 and H.h[bc, ac] == 0.5


def test_tiny3_matches_exhaustive_oracle(tiny3):
    exact = exact_dominance(tiny3.clouds())
    ab, ac, bc = 0, 1, 2
    assert exact[(ab, ac)] == 1 and exact[(ab, bc)] == 1 and exact[(bc, ac)] == 1
    for T in (1, 5, 100):
        H = build_dominance_full(tiny3, T=T, seed=T)
        for (i, j), p in exact.items():
            assert H.h[i, j] == float(p)


def test_tiny3_dissimilarity(tiny3):
    D = dissimilarity_from_dominance(build_dominance_full(tiny3, T=10))
    assert D.d[0, 1] == 0
    assert np.isclose(D.d[0, 2], 2 / 3) and np.isclose(D.d[1, 2], 1 / 3)
    assert np.array_equal(D.d, D.d.T) and np.all(np.diag(D.d) == 0)


def test_indifference_gives_equal_dissimilarity():
    # every cloud is {0}: all distances tie
    d = from_arrays(np.zeros((4, 1)), [0, 1, 2, 3])
    H = build_dominance_full(d, T=3)
    assert np.all(H.h[H.compared] == 0.5)
    D = dissimilarity_from_dominance(H)
    off = D.d[~np.eye(4, dtype=bool)]
    assert np.all(off == off[0])


def test_default_T():
    def ds(counts):
        y = np.concatenate([[a] * n for a, n in enumerate(counts)])
        return from_arrays(np.zeros((len(y), 1)), y)

    assert default_T(ds([100, 100, 100])) == 100
    assert default_T(ds([50, 200, 80])) == 200
    assert default_T(ds([1, 1, 1])) == 1
    assert default_T(ds([100] * 14)) == 100  # N=1400, L=14


def test_errors():
    d2 = from_arrays([[0.0], [1.0]], [0, 1])
    with pytest.raises(ValueError):
        build_dominance_full(d2, 5)
    d3 = from_arrays([[0.0], [1.0], [2.0]], [0, 1, 2])
    with pytest.raises(ValueError):
        build_dominance_full(d3, 0)
    with pytest.raises(ValueError):
        build_dominance_sparse(d3, 5, 0.0)


def test_compared_mask_full_build(four_groups):
    H = build_dominance_full(four_groups, T=20, seed=1)
    L = 4
    names = list(combinations(range(L), 2))
    for i, p in enumerate(names):
        for j, q in enumerate(names):
            share = len(set(p) & set(q)) == 1
            assert H.compared[colex(*p), colex(*q)] == share
    assert not H.compared.diagonal().any() and np.all(H.h.diagonal() == 0)
    assert np.all(H.h[~H.compared] == 0)


def _mass_invariant(H):
    D = dissimilarity_from_dominance(H)
    iu = np.triu_indices(H.L, 1)
    lhs = D.d[iu].sum() * comb(H.L, 2)
    assert np.isclose(lhs, H.h.sum(), rtol=0, atol=1e-9)
    assert np.isclose(H.h.sum(), H.compared.sum() / 2, rtol=0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 6), st.integers(1, 30))
def test_complement_and_mass_properties(seed, L, T):
    rng = np.random.default_rng(seed)
    d, _ = random_small(rng, L=L, max_pts=4)  # integer coordinates: many exact ties
    H = build_dominance_full(d, T=T, seed=seed)
    assert H.complement_error() <= 1e-9
    assert np.all((H.h >= 0) & (H.h <= 1))
    _mass_invariant(H)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2.0, 0.5, 8.0, 3.0]))
def test_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    d, _ = random_small(rng, L=4, max_pts=5)
    scaled = from_arrays(d.features * c, d.labels)
    H1 = build_dominance_full(d, T=25, seed=seed)
    H2 = build_dominance_full(scaled, T=25, seed=seed)
    assert np.array_equal(H1.h, H2.h)


def test_determinism_across_threads(eight_balanced):
    a = build_dominance_full(eight_balanced, T=50, seed=12, threads=1)
    b = build_dominance_full(eight_balanced, T=50, seed=12, threads=4)
    c = build_dominance_full(eight_balanced, T=50, seed=12, threads=3)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.h, c.h)
    assert np.array_equal(a.compared, b.compared)
    assert not np.array_equal(a.h, build_dominance_full(eight_balanced, T=50, seed=13).h)


def test_monte_carlo_close_to_oracle():
    rng = np.random.default_rng(77)
    d, clouds = random_small(rng, L=3, max_pts=4, K=2)
    exact = exact_dominance(clouds)
    H = build_dominance_full(d, T=20000, seed=5)
    for (i, j), p in exact.items():
        assert abs(H.h[i, j] - float(p)) <= 0.02


def test_sparse_full_fraction_identical(eight_balanced):
    a = build_dominance_full(eight_balanced, T=30, seed=2)
    b = build_dominance_sparse(eight_balanced, T=30, triplet_fraction=1.0, seed=2)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.compared, b.compared)


def test_sparse_triplet_count():
    assert len(select_triplets(10, 0.3, 0)) == 36
    assert len(set(select_triplets(10, 0.3, 4).tolist())) == 36
    assert np.array_equal(select_triplets(10, 0.3, 4), select_triplets(10, 0.3, 4))


def test_sparse_subset_entries_match_full(eight_balanced):
    full = build_dominance_full(eight_balanced, T=30, seed=8)
    sp = build_dominance_sparse(eight_balanced, T=30, triplet_fraction=0.25, seed=8)
    assert sp.compared.sum() == 6 * round(0.25 * comb(8, 3))
    assert np.array_equal(sp.h[sp.compared], full.h[sp.compared])
    assert np.all(full.compared[sp.compared])


def test_sparse_uncovered_pair_has_no_comparisons():
    L = 8
    d = from_arrays(np.random.default_rng(0).normal(size=(L * 3, 2)), np.repeat(range(L), 3))
    H = build_dominance_sparse(d, T=4, triplet_fraction=0.02, seed=3)  # round(1.12) = 1 triplet
    used = {colex(a, b) for a, b in combinations(range(L), 2)
            if H.compared[colex(a, b)].any()}
    assert len(used) == 3
    for p in set(range(comb(L, 2))) - used:
        assert not H.compared[p].any() and not H.compared[:, p].any()


def test_densify_examples():
    z = DominanceMatrix(np.zeros((6, 6)), np.zeros((6, 6), bool), 1, 4, 0)
    assert np.all(densify_transitive(z).h == 0)
    h = np.zeros((6, 6))
    h[1, 2] = h[2, 3] = 1
    c = h > 0
    out = densify_transitive(DominanceMatrix(h, c, 1, 4, 0))
    assert out.h[1, 3] == 1 and out.compared[1, 3]
    assert out.h[1, 2] == 1 and out.h[2, 3] == 1
    assert np.all(np.diag(out.h) == 0) and not out.compared.diagonal().any()
    assert np.all(out.h <= 1)


def test_densify_matches_formula(four_groups):
    H = build_dominance_full(four_groups, T=40, seed=0)
    out = densify_transitive(H)
    expect = np.minimum(H.h + H.h @ H.h, 1.0)
    np.fill_diagonal(expect, 0)
    assert np.allclose(out.h, expect)


def test_densify_preserves_tree_on_separated(eight_balanced):
    H = build_dominance_full(eight_balanced, seed=0)
    t_full = agglomerate(dissimilarity_from_dominance(H))
    t_dense = agglomerate(dissimilarity_from_dominance(densify_transitive(H)))
    assert tree_distance(t_full, t_dense) == 0


def test_exports_roundtrip(tiny3):
    H = build_dominance_full(tiny3, T=3, seed=1)
    csv_text = dominance_to_csv(H)
    assert csv_text.splitlines()[0] == "pair,a|b,a|c,b|c"
    back = dominance_from_json(dominance_to_json(H))
    assert np.array_equal(back.h, H.h) and np.array_equal(back.compared, H.compared)
    assert (back.T, back.L, back.seed) == (3, 3, 1)
    D = dissimilarity_from_dominance(H)
    lines = dissim_to_csv(D).splitlines()
    assert lines[0] == "label,a,b,c" and lines[1].startswith("a,0.0,0.0,")
