import numpy as np
import pytest

from labeltree.classify import FORCED_THETA
from labeltree.dataset import SyntheticSpec, from_arrays, generate_synthetic
from labeltree.evalgraph import (
    ConfusionMatrix,
    PredictiveGraph,
    build_graph,
    confusion_to_csv,
    cross_validate,
    cross_validate_sweep,
    eflow_to_csv,
    error_flow,
    export_dot,
    parse_dot,
    summary,
)


def _cm(counts, abstain=None, names=None):
    counts = np.asarray(counts, dtype=np.int64)
    L = len(counts)
    ab = np.zeros(L, dtype=np.int64) if abstain is None else np.asarray(abstain, dtype=np.int64)
    return ConfusionMatrix(counts, ab, tuple(names or "abc"[:L]))


def test_error_flow_arithmetic():
    ef = error_flow(_cm([[18, 2, 0], [0, 20, 0], [1, 1, 18]]))
    assert np.allclose(ef.e[0], [90, 10, 0])
    assert np.allclose(ef.e[2], [5, 5, 90])
    assert np.all(ef.abstention == 0)


def test_error_flow_with_abstentions():
    ef = error_flow(_cm([[15, 1], [0, 20]], abstain=[4, 0], names="ab"))
    assert np.allclose(ef.e[0], [75, 5]) and ef.abstention[0] == 20
    assert np.allclose(ef.e.sum(1) + ef.abstention, 100)


def test_error_flow_not_symmetrised():
    ef = error_flow(_cm([[18, 2], [0, 20]], names="ab"))
    assert ef.e[0, 1] == 10 and ef.e[1, 0] == 0


def test_error_flow_empty_row():
    with pytest.raises(ValueError, match="c"):
        error_flow(_cm([[1, 0, 0], [0, 1, 0], [0, 0, 0]]))


def test_build_graph_threshold():
    ef = error_flow(_cm([[18, 2, 0], [0, 20, 0], [1, 1, 18]]))
    g = build_graph(ef, 5.0)
    assert sorted(g.edges) == [(0, 1, 10.0), (2, 0, 5.0), (2, 1, 5.0)]
    g = build_graph(ef, 6.0)
    assert g.edges == [(0, 1, 10.0)]
    assert all(w > 0 for *_, w in build_graph(ef, 0.0).edges)
    assert len(build_graph(ef, 0.0).edges) == 3
    assert build_graph(error_flow(_cm(np.eye(3, dtype=int) * 5)), 0.0).edges == []
    with pytest.raises(ValueError):
        build_graph(ef, -1)


def test_dot_roundtrip():
    g = PredictiveGraph(("a", 'q"x', "c d"), [(0, 1, 12.5), (2, 0, 3.25)])
    text = export_dot(g)
    assert text.startswith("digraph ")
    assert '"a" -> "q\\"x" [label="12.5", weight=12.5000];' in text
    back = parse_dot(text)
    assert back.nodes == g.nodes and sorted(back.edges) == sorted(g.edges)


def test_confusion_add_and_rates():
    cm = _cm([[0, 0], [0, 0]], names="ab")
    cm.add(0, (0,))
    cm.add(0, (0, 1))
    cm.add(1, (0,))
    cm.add(1, (1,))
    assert cm.accuracy() == 0.5
    assert cm.coverage() == 0.75
    assert cm.abstention_rate() == 0.25
    s = summary(cm)
    assert s["set_frequencies"] == [{"true": "a", "set": ["a", "b"], "count": 1}]
    assert s["per_label"][0]["coverage"] == 1.0
    assert confusion_to_csv(cm).splitlines()[1] == "a,1,0,1"
    assert eflow_to_csv(error_flow(cm)).splitlines()[1] == "a,50.0000,0.0000,50.0000"


def test_cv_separated_diagonal():
    d = generate_synthetic(SyntheticSpec(((0, 1), (2, 3)), 100.0, 1.0, 40, 3, seed=0))
    cm = cross_validate(d, 5, 0.8, T=20)
    assert cm.row_totals().tolist() == [40] * 4
    assert cm.accuracy() == 1.0
    ef = error_flow(cm)
    assert np.allclose(np.diag(ef.e), 100)


def test_cv_theta_one_abstains_everything():
    d = generate_synthetic(SyntheticSpec(((0, 1), (2, 3)), 1.0, 1.0, 30, 3, seed=1))
    cm = cross_validate(d, 3, 1.0, k=11, T=10)
    # unanimity on every node is rare for overlapping clouds
    assert cm.abstention_rate() > 0.9


def test_identical_distributions_confuse_half():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(500, 2)), rng.normal(size=(500, 2))
    far = rng.normal(size=(500, 2)) + [50, 0]
    d = from_arrays(np.concatenate([a, b, far]), np.repeat([0, 1, 2], 500))
    ef = error_flow(cross_validate(d, 5, FORCED_THETA, k=11, T=50))
    assert abs(ef.e[0, 1] - 50) <= 10 and abs(ef.e[1, 0] - 50) <= 10
    assert ef.e[2, 2] == 100


def test_duplicated_rows_symmetric_flow():
    # row-for-row copies: the held-out row's twin stays in training under the
    # other label, so flow leans across, but equally in both directions
    rng = np.random.default_rng(0)
    base = rng.normal(size=(500, 2))
    far = rng.normal(size=(500, 2)) + [50, 0]
    d = from_arrays(np.concatenate([base, base, far]), np.repeat([0, 1, 2], 500))
    ef = error_flow(cross_validate(d, 5, FORCED_THETA, k=11, T=50))
    assert abs(ef.e[0, 1] - ef.e[1, 0]) <= 10
    assert np.allclose(ef.e[:2, :2].sum(1), 100)


def test_sweep_matches_single():
    d = generate_synthetic(SyntheticSpec(((0, 1), (2, 3)), 4.0, 1.0, 30, 3, seed=3))
    a, b = cross_validate_sweep(d, 3, (0.6, 0.9), T=15, seed=2)
    c = cross_validate(d, 3, 0.9, T=15, seed=2)
    assert np.array_equal(b.counts, c.counts)
    assert a.abstention_rate() <= b.abstention_rate()
