import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcorner.candfilter import (
    NMS_HALFWIDTH,
    Candidate,
    ThresholdScheme,
    box_iou,
    cluster_filter,
    kmeans_pp,
    nms,
    read_points,
    threshold,
    write_candidates,
)

from oracles import box_iou_formula


def test_scheme_parse():
    assert ThresholdScheme.parse("adaptive") == ThresholdScheme("adaptive")
    assert ThresholdScheme.parse("fixed:0.5") == ThresholdScheme("fixed", 0.5)
    assert ThresholdScheme.parse("std:0.8") == ThresholdScheme("std", 0.8)
    assert ThresholdScheme.parse("max:0.41") == ThresholdScheme("max_linear", 0.41)
    for bad in ("adaptive:1", "fixed", "fixed:0", "max:1.5", "std:-1", "median:2"):
        with pytest.raises(ValueError):
            ThresholdScheme.parse(bad)


def test_adaptive_example():
    m = np.array([[1.2, 0.9, 0.6, 0.3, 0.1]])
    r = threshold(m, ThresholdScheme("adaptive"))
    assert r.threshold == pytest.approx(0.9)
    assert [(c.px, c.py, c.score) for c in r.candidates] == [(0, 0, 1.2)]


def test_std_on_constant_map_is_empty():
    r = threshold(np.full((4, 4), 0.4), ThresholdScheme("std", 1.0))
    assert r.threshold == pytest.approx(0.4) and r.candidates == []


def test_max_linear_example():
    m = np.zeros((3, 3))
    m[1, 1] = 2.0
    m[0, 2] = 0.9
    r = threshold(m, ThresholdScheme("max_linear", 0.41))
    assert r.threshold == pytest.approx(0.82)
    assert [(c.px, c.py) for c in r.candidates] == [(2, 0), (1, 1)]


def test_fixed_is_strict():
    r = threshold(np.array([[0.5, 0.50001]]), ThresholdScheme("fixed", 0.5))
    assert [c.px for c in r.candidates] == [1]


def test_adaptive_no_response():
    r = threshold(np.full((5, 5), 0.5), ThresholdScheme("adaptive"))
    assert r.no_response and r.candidates == []
    assert not threshold(np.array([[0.6]]), ThresholdScheme("adaptive")).no_response


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**20), scale=st.floats(0.1, 3.0))
def test_adaptive_threshold_range(seed, scale):
    m = np.random.default_rng(seed).random((8, 8)) * scale
    r = threshold(m, ThresholdScheme("adaptive"))
    if (m > 0.5).any():
        assert 0.5 < r.threshold <= m.max()
        assert all(c.score > r.threshold for c in r.candidates)
    else:
        assert r.no_response


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**20), t1=st.floats(0.01, 1.0), t2=st.floats(0.01, 1.0))
def test_fixed_threshold_monotone(seed, t1, t2):
    m = np.random.default_rng(seed).random((6, 7))
    lo, hi = sorted((t1, t2))
    a = {(c.px, c.py) for c in threshold(m, ThresholdScheme("fixed", lo)).candidates}
    b = {(c.px, c.py) for c in threshold(m, ThresholdScheme("fixed", hi)).candidates}
    assert b <= a


def test_candidate_scores_match_map():
    m = np.random.default_rng(3).random((5, 6))
    for c in threshold(m, ThresholdScheme("fixed", 0.3)).candidates:
        assert c.score == m[c.py, c.px]


@pytest.mark.parametrize(
    "d, hw, expected",
    [((1, 0), 2, 20 / 30), ((1, 1), 2, 16 / 34), ((1, 1), 3, 36 / 62), ((5, 0), 2, 0.0), ((0, 0), 2, 1.0)],
)
def test_box_iou_arithmetic(d, hw, expected):
    assert box_iou(Candidate(0, 0, 1), Candidate(*d, 1), hw) == pytest.approx(expected)


def test_nms_examples():
    a, b = Candidate(10, 10, 0.9), Candidate(11, 10, 0.8)
    assert nms([b, a], 2, 0.5) == [a]
    far = [Candidate(0, 0, 0.5), Candidate(6, 0, 0.6), Candidate(0, 6, 0.7)]
    assert len(nms(far, 2, 0.5)) == 3
    assert nms([a], 2, 0.5) == [a]
    with pytest.raises(ValueError):
        nms([a], 2, 1.0)


def test_nms_default_suppresses_diagonal_neighbour():
    a, b = Candidate(10, 10, 0.9), Candidate(11, 11, 0.8)
    assert nms([a, b], 2, 0.5) == [a, b]  # 16/34 < 0.5
    assert nms([a, b]) == [a]  # default halfwidth
    assert NMS_HALFWIDTH == 3


def test_nms_tie_break_is_row_major():
    c1, c2 = Candidate(5, 3, 1.0), Candidate(4, 4, 1.0)
    assert nms([c2, c1], 2, 0.3) == [c1]


def _random_cands(rng, n, size=30):
    pts = rng.integers(0, size, size=(n, 2))
    scores = rng.choice([0.5, 0.7, 0.9, 1.0], size=n) if rng.random() < 0.5 else rng.random(n)
    return [Candidate(int(x), int(y), float(s)) for (x, y), s in zip(pts, scores)]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**30), hw=st.integers(0, 4), thr=st.floats(0.05, 0.95))
def test_nms_properties(seed, hw, thr):
    rng = np.random.default_rng(seed)
    cands = _random_cands(rng, int(rng.integers(0, 40)))
    kept = nms(cands, hw, thr)
    side = 2 * hw + 1
    ids = {id(c) for c in cands}
    assert all(id(k) in ids for k in kept)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            assert box_iou_formula(a.px, a.py, b.px, b.py, side) <= thr
    key = lambda c: (-c.score, c.py, c.px)
    kept_ids = {id(k) for k in kept}
    for c in cands:
        if id(c) not in kept_ids:
            assert any(
                key(k) <= key(c) and box_iou_formula(k.px, k.py, c.px, c.py, side) > thr for k in kept
            )


def test_cluster_filter_skip_rule():
    cands = [Candidate(i, 0, 1.0) for i in range(29)]
    assert cluster_filter(cands) == cands
    with pytest.raises(ValueError):
        cluster_filter(cands, k=0)


def test_cluster_filter_removes_outliers():
    grid = [Candidate(20 + 2 * i, 20 + 2 * j, 1.0) for i in range(7) for j in range(8)]
    outliers = [Candidate(200, 0, 1.0), Candidate(0, 200, 1.0), Candidate(200, 200, 1.0), Candidate(400, 100, 1.0)]
    cands = grid + outliers
    assert len(cands) == 60
    kept = cluster_filter(cands, seed=0)
    assert kept == grid


def test_cluster_filter_duplicates_kept():
    cands = [Candidate(3, 3, 1.0) for _ in range(40)]
    assert cluster_filter(cands) == cands


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**30), n=st.integers(0, 80))
def test_cluster_filter_subset_and_deterministic(seed, n):
    rng = np.random.default_rng(seed)
    cands = _random_cands(rng, n, 100)
    out = cluster_filter(cands, seed=seed)
    assert all(c in cands for c in out)
    assert out == cluster_filter(cands, seed=seed)
    if n < 30:
        assert out == cands


def test_kmeans_pp_separates_blobs():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal(0, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
    labels, centers = kmeans_pp(pts, 2, np.random.default_rng(1))
    assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1 and labels[0] != labels[20]
    np.testing.assert_allclose(sorted(centers[:, 0]), [0, 10], atol=0.1)


def test_candidate_csv(tmp_path):
    cands = [Candidate(1, 2, 0.5), Candidate(3, 4, 1.25, refined=(3.1234567, 4.5), refine_valid=True)]
    p = tmp_path / "c.csv"
    write_candidates(p, cands)
    assert p.read_text() == "x,y,score\n1.000000,2.000000,0.500000\n3.123457,4.500000,1.250000\n"
    assert read_points(p) == [(1.0, 2.0), (3.123457, 4.5)]
