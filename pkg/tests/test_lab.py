import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcorner.candfilter import ThresholdScheme
from xcorner.lab import (
    AXES,
    BENCH_METHODS,
    EMPTY_REPORT,
    FACTOR_VALUES,
    LOW_LEVELS,
    MISS_PENALTY,
    DetectConfig,
    MatchReport,
    axis_values,
    bench_refiners,
    bench_trial,
    corner_error,
    detect,
    evaluate_detector,
    match_detections,
    saddle_response,
    sweep,
)
from xcorner.synthgen import CornerSceneSpec, mix_seed, render_corner
from xcorner.xnet import build_network

from oracles import optimal_matching


# --- matching -----------------------------------------------------------------


def test_match_examples():
    r = match_detections([(3.9, 0)], [(0, 0)])
    assert (r.true_positives, r.false_positives, r.false_negatives) == (1, 0, 0)
    assert r.mean_localization_error_px == pytest.approx(3.9)
    r = match_detections([(4.1, 0)], [(0, 0)])
    assert (r.true_positives, r.false_positives, r.false_negatives) == (0, 1, 1)
    r = match_detections([(4.0, 0)], [(0, 0)])
    assert r.true_positives == 0  # strict
    r = match_detections([(1, 0), (0, 1.5)], [(0, 0)])
    assert (r.true_positives, r.false_positives, r.false_negatives) == (1, 1, 0)
    assert r.pairs == ((0, 0),)


def test_match_empty_and_errors():
    r = match_detections([], [])
    assert r.precision == 1.0 and r.recall == 1.0
    r = match_detections([], [(1, 1)])
    assert r.precision == 1.0 and r.recall == 0.0
    with pytest.raises(ValueError):
        match_detections([(0, 0)], [(0, 0)], radius=0)


def test_report_sum_pools_counts_and_weights_error():
    a = MatchReport(2, 1, 0, 1.0)
    b = MatchReport(1, 0, 3, 4.0)
    s = EMPTY_REPORT + a + b
    assert (s.true_positives, s.false_positives, s.false_negatives) == (3, 1, 3)
    assert s.mean_localization_error_px == pytest.approx(2.0)


def _separated_instance(rng, n_det, n_gt, radius):
    """Points whose pairwise det-truth distances are all < r/2 or > 2r."""
    centers = [np.array([30.0 * k, 0.0]) for k in range(max(n_det, n_gt))]
    gt = [c + rng.uniform(-0.5, 0.5, 2) for c in centers[:n_gt]]
    det = []
    for c in centers[:n_det]:
        det.append(c + rng.uniform(-0.5, 0.5, 2) if rng.random() < 0.7 else c + [0, 15.0])
    return det, gt


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**30), n_det=st.integers(0, 6), n_gt=st.integers(0, 6))
def test_greedy_matches_oracle_in_separated_regime(seed, n_det, n_gt):
    rng = np.random.default_rng(seed)
    radius = 4.0
    det, gt = _separated_instance(rng, n_det, n_gt, radius)
    for p in det:
        for q in gt:
            d = math.dist(p, q)
            assert d < radius / 2 or d > 2 * radius
    r = match_detections(det, gt, radius)
    assert r.true_positives == optimal_matching(det, gt, radius)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**30), n_det=st.integers(0, 6), n_gt=st.integers(0, 6))
def test_greedy_never_beats_oracle_and_counts_add_up(seed, n_det, n_gt):
    rng = np.random.default_rng(seed)
    det = rng.uniform(0, 12, (n_det, 2))
    gt = rng.uniform(0, 12, (n_gt, 2))
    r = match_detections(det, gt)
    assert r.true_positives <= optimal_matching(det, gt, 4.0)
    assert r.true_positives + r.false_negatives == n_gt
    assert r.true_positives + r.false_positives == n_det
    assert 0 <= r.precision <= 1 and 0 <= r.recall <= 1
    assert len({a for a, _ in r.pairs}) == len({b for _, b in r.pairs}) == r.true_positives
    for a, b in r.pairs:
        assert math.dist(det[a], gt[b]) < 4.0


# --- sweep --------------------------------------------------------------------


def test_axis_ranges_inclusive():
    assert len(axis_values(0, AXES["rotation"], 1)) == 91
    assert len(axis_values(0, AXES["skew"], 1)) == 71
    assert len(axis_values(0, 100, 1)) == 101
    assert axis_values(0, 1, 0.25) == [0, 0.25, 0.5, 0.75, 1.0]


def test_sweep_shape_and_determinism():
    m = build_network("A", seed=0)
    kw = dict(axis="skew", noise_values=[0, 20], trials=2, seed=5, axis_values_=[0, 30])
    a = sweep(m, **kw)
    b = sweep(m, **kw)
    assert a.cells.shape == (2, 2) and len(list(a.rows())) == 4
    np.testing.assert_array_equal(a.cells, b.cells)
    assert (a.cells >= 0).all() and (a.cells <= MISS_PENALTY).all()
    one = sweep(m, "rotation", [10], 1, 9, axis_values_=[5])
    assert one.cells[0, 0] == sweep(m, "rotation", [10], 1, 9, axis_values_=[5]).cells[0, 0]


def test_sweep_errors():
    m = build_network("A")
    with pytest.raises(ValueError):
        sweep(m, "zoom", [0], 1, 0)
    with pytest.raises(ValueError):
        sweep(None, "skew", [0], 1, 0)


def test_corner_error_miss_penalty():
    # an untrained model stays below 0.5 everywhere: no detection
    m = build_network("A", seed=0)
    assert corner_error(m, CornerSceneSpec(image_size=41, apply_blur=True), DetectConfig(refine="none")) == MISS_PENALTY


# --- refinement benchmark -----------------------------------------------------


def test_saddle_response_peaks_at_corner():
    img, gt = render_corner(CornerSceneSpec(image_size=41, rotation_deg=20, transition_band=False, apply_blur=True))
    r = saddle_response(img)
    y, x = np.unravel_index(np.argmax(r), r.shape)
    assert (x, y) == (20, 20)
    assert r.max() == 1.0 and r.min() >= 0.0


def test_bench_low_levels_pinned():
    assert LOW_LEVELS == {"noise": 5.0, "blur": 0.675, "rotation": 10.0, "skew": 10.0}
    assert set(FACTOR_VALUES) == {"noise", "blur", "rotation", "skew"}


def test_surface_accurate_without_noise_or_rotation():
    errs = []
    for t in range(60):
        rng = np.random.default_rng(mix_seed(3, t))
        shift = tuple(float(s) for s in rng.uniform(-0.5, 0.5, 2))
        scene = CornerSceneSpec(image_size=80, skew_deg=10, apply_blur=True, transition_band=False, subpixel_shift=shift)
        errs.append(bench_trial(scene, ["surface"]).error("surface"))
    assert np.mean(errs) < 0.1


def test_bench_mixed_convexity_and_determinism():
    a = bench_refiners("noise", 15, seed=2, values=[0, 40])
    b = bench_refiners("noise", 15, seed=2, values=[0, 40])
    assert a.mean_error == b.mean_error and a.valid_count == b.valid_count
    assert a.methods == list(BENCH_METHODS)
    for cell in a.trials:
        for tr in cell:
            es, eg, em = tr.error("surface"), tr.error("gauss"), tr.error("mixed")
            if es is not None and eg is not None and em is not None:
                assert em <= max(es, eg) + 1e-12


def test_bench_errors():
    with pytest.raises(ValueError):
        bench_refiners("zoom", 1)
    with pytest.raises(ValueError):
        bench_refiners("noise", 1, methods=["none"])
    with pytest.raises(ValueError):
        bench_refiners("noise", 1, methods=["bogus"])


# --- detection ----------------------------------------------------------------


def test_detect_blank_image_is_empty(caplog):
    m = build_network("A", seed=0)
    assert detect(m, np.full((40, 40), 0.5)) == []
    assert "no response" in caplog.text


def _bright_model():
    # linear head bias lifts the response above 0.5 so candidates exist
    m = build_network("A", seed=1, width_scale=0.5)
    m.layers[-1].biases[:] = 0.8
    return m


def test_detect_is_deterministic_and_refines():
    m = _bright_model()
    img = np.random.default_rng(0).random((48, 48))
    cfg = DetectConfig(scheme=ThresholdScheme("fixed", 0.5), refine="gauss")
    a, b = detect(m, img, cfg), detect(m, img, cfg)
    assert a == b and len(a) > 0
    for c in a:
        if c.refine_valid:
            assert abs(c.xy[0] - c.px) <= 0.5 and abs(c.xy[1] - c.py) <= 0.5
        else:
            assert c.xy == (c.px, c.py)


def test_evaluate_pools_samples():
    m = _bright_model()
    img = np.random.default_rng(0).random((48, 48))
    cfg = DetectConfig(scheme=ThresholdScheme("fixed", 0.5), refine="none")
    dets = [c.xy for c in detect(m, img, cfg)]
    one = match_detections(dets, [(10, 10)])
    two = evaluate_detector(m, [(img, [(10, 10)]), (img, [(10, 10)])], cfg)
    assert two.true_positives == 2 * one.true_positives
    assert two.false_positives == 2 * one.false_positives
