"""Detection pipeline, matching metrics, and robustness/refinement sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import subpix
from .candfilter import NMS_HALFWIDTH, Candidate, ThresholdScheme, cluster_filter, nms, threshold
from .synthgen import CornerSceneSpec, mix_seed, render_corner
from .xnet import DetectorModel, forward

log = logging.getLogger(__name__)

MISS_PENALTY = 4.0


# --- matching -----------------------------------------------------------------


@dataclass(frozen=True)
class MatchReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    mean_localization_error_px: float
    pairs: tuple[tuple[int, int], ...] = ()

    @property
    def precision(self) -> float:
        d = self.true_positives + self.false_positives
        return 1.0 if d == 0 else self.true_positives / d

    @property
    def recall(self) -> float:
        d = self.true_positives + self.false_negatives
        return 1.0 if d == 0 else self.true_positives / d

    def __add__(self, other: "MatchReport") -> "MatchReport":
        tp = self.true_positives + other.true_positives
        err = 0.0
        if tp:
            err = (
                self.mean_localization_error_px * self.true_positives
                + other.mean_localization_error_px * other.true_positives
            ) / tp
        return MatchReport(
            tp,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
            err,
        )


EMPTY_REPORT = MatchReport(0, 0, 0, 0.0)


def match_detections(detected, truth, radius: float = 4.0) -> MatchReport:
    """Greedy one-to-one matching in ascending distance; a pair matches iff distance < radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    det = np.asarray(detected, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    pairs = []
    if len(det) and len(gt):
        dist = np.hypot(det[:, None, 0] - gt[None, :, 0], det[:, None, 1] - gt[None, :, 1])
        di, gi = np.nonzero(dist < radius)
        order = np.lexsort((gi, di, dist[di, gi]))
        used_d, used_g = set(), set()
        for k in order:
            a, b = int(di[k]), int(gi[k])
            if a in used_d or b in used_g:
                continue
            used_d.add(a)
            used_g.add(b)
            pairs.append((a, b))
    tp = len(pairs)
    err = float(np.mean([np.hypot(*(det[a] - gt[b])) for a, b in pairs])) if pairs else 0.0
    return MatchReport(tp, len(det) - tp, len(gt) - tp, err, tuple(pairs))


# --- detection ----------------------------------------------------------------


@dataclass
class DetectConfig:
    scheme: ThresholdScheme = field(default_factory=lambda: ThresholdScheme("adaptive"))
    nms_halfwidth: int = NMS_HALFWIDTH
    nms_overlap: float = 0.5
    cluster_k: int = 10
    cluster_min: int = 2
    cluster_skip: int = 30
    refine: str = "mixed"
    seed: int = 0


def candidates_from_response(resp: np.ndarray, cfg: DetectConfig) -> list[Candidate]:
    res = threshold(resp, cfg.scheme)
    if res.no_response:
        log.warning("no response above 0.5: nothing detected")
        return []
    kept = nms(res.candidates, cfg.nms_halfwidth, cfg.nms_overlap)
    return cluster_filter(kept, cfg.cluster_k, cfg.cluster_min, cfg.cluster_skip, cfg.seed)


def refine_candidates(image, resp, cands: Sequence[Candidate], method: str) -> list[Candidate]:
    """Attach refined locations; candidates whose refinement is invalid keep the integer pixel."""
    out = []
    for c in cands:
        off = subpix.refine(method, image, resp, (c.px, c.py))
        if off.valid:
            out.append(Candidate(c.px, c.py, c.score, off.apply((c.px, c.py)), True, off.source))
        else:
            out.append(Candidate(c.px, c.py, c.score, None, False, "none"))
    return out


def detect(model: DetectorModel, image: np.ndarray, cfg: DetectConfig | None = None) -> list[Candidate]:
    """forward -> threshold -> NMS -> cluster filter -> subpixel refinement."""
    cfg = cfg or DetectConfig()
    resp = forward(model, image)
    cands = candidates_from_response(resp, cfg)
    return refine_candidates(image, resp, cands, cfg.refine)


def evaluate_detector(model, samples, cfg: DetectConfig, radius: float = 4.0) -> MatchReport:
    """Pooled match report over ``(image, truth_points)`` samples."""
    total = EMPTY_REPORT
    for image, truth in samples:
        dets = [c.xy for c in detect(model, image, cfg)]
        total = total + match_detections(dets, truth, radius)
    return total


# --- robustness sweep ---------------------------------------------------------

AXES = {"rotation": 90, "skew": 70}


@dataclass
class SweepResult:
    axis1_name: str
    axis1: list[float]
    axis2_name: str
    axis2: list[float]
    cells: np.ndarray  # (len(axis1), len(axis2)) mean error in px
    trials: int

    def rows(self):
        for i, a in enumerate(self.axis1):
            for j, b in enumerate(self.axis2):
                yield a, b, float(self.cells[i, j])


def axis_values(lo: float, hi: float, step: float) -> list[float]:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(n)]


def corner_error(model, scene: CornerSceneSpec, cfg: DetectConfig) -> float:
    """Distance from the detection nearest the truth, unrefined; misses cost MISS_PENALTY."""
    img, gt = render_corner(scene)
    resp = forward(model, img)
    cands = candidates_from_response(resp, cfg)
    if not cands:
        return MISS_PENALTY
    tx, ty = gt.corners[0]
    best = min(math.hypot(c.px - tx, c.py - ty) for c in cands)
    return min(best, MISS_PENALTY)


def sweep(
    model: DetectorModel,
    axis: str,
    noise_values: Sequence[float],
    trials: int,
    seed: int,
    axis_values_: Sequence[float] | None = None,
    image_size: int = 41,
    cfg: DetectConfig | None = None,
) -> SweepResult:
    """Mean unrefined localization error over a (rotation|skew) x noise grid."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    if model is None:
        raise ValueError("sweep needs a trained model")
    a1 = list(axis_values_) if axis_values_ is not None else axis_values(0, AXES[axis], 1)
    a2 = list(noise_values)
    cfg = cfg or DetectConfig(refine="none")
    cells = np.zeros((len(a1), len(a2)))
    for i, a in enumerate(a1):
        for j, nz in enumerate(a2):
            cell_seed = mix_seed(seed, i * len(a2) + j)
            errs = []
            for t in range(trials):
                scene = CornerSceneSpec(
                    image_size=image_size,
                    rotation_deg=a if axis == "rotation" else 0.0,
                    skew_deg=a if axis == "skew" else 0.0,
                    noise_std=nz,
                    apply_blur=True,
                    transition_band=True,
                    seed=mix_seed(cell_seed, t),
                )
                errs.append(corner_error(model, scene, cfg))
            cells[i, j] = float(np.mean(errs))
    return SweepResult(axis, a1, "noise", a2, cells, trials)


# --- refinement benchmark -----------------------------------------------------

LOW_LEVELS = {"noise": 5.0, "blur": 0.675, "rotation": 10.0, "skew": 10.0}
FACTOR_VALUES = {
    "noise": [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
    "blur": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 2.0],
    "rotation": [0, 10, 20, 30, 40, 45, 50, 60, 70, 80, 90],
    "skew": [0, 10, 20, 30, 40, 50, 60, 70],
}
BENCH_METHODS = ("com", "gauss", "parabolic", "edge", "surface", "mixed")
BENCH_SIZE = 80
CROP = 10


def saddle_response(image: np.ndarray, sigma: float = 1.5) -> np.ndarray:
    """Negative Hessian determinant of the smoothed image, clamped at zero, peak-normalized.

    A stand-in corner response for refinement benchmarks run without a trained
    detector: it peaks at saddle points and is rotation invariant.
    """
    ixx = gaussian_filter(image, sigma, order=(0, 2))
    iyy = gaussian_filter(image, sigma, order=(2, 0))
    ixy = gaussian_filter(image, sigma, order=(1, 1))
    r = np.maximum(ixy * ixy - ixx * iyy, 0.0)
    peak = r.max()
    return r / peak if peak > 0 else r


def _hill_climb(resp: np.ndarray, x: int, y: int, steps: int = 3) -> tuple[int, int]:
    h, w = resp.shape
    for _ in range(steps):
        y0, y1, x0, x1 = max(0, y - 1), min(h, y + 2), max(0, x - 1), min(w, x + 2)
        win = resp[y0:y1, x0:x1]
        iy, ix = np.unravel_index(int(np.argmax(win)), win.shape)
        nx, ny = x0 + int(ix), y0 + int(iy)
        if (nx, ny) == (x, y):
            break
        x, y = nx, ny
    return x, y


@dataclass
class BenchTrial:
    truth: tuple[float, float]
    start: tuple[int, int]
    estimates: dict[str, tuple[float, float] | None]

    def error(self, method: str) -> float | None:
        p = self.estimates.get(method)
        return None if p is None else math.hypot(p[0] - self.truth[0], p[1] - self.truth[1])


def bench_trial(scene: CornerSceneSpec, methods: Sequence[str], response_fn: Callable | None = None) -> BenchTrial:
    img, gt = render_corner(scene)
    resp = (response_fn or saddle_response)(img)
    tx, ty = gt.corners[0]
    sx, sy = int(round(tx)), int(round(ty))
    px, py = _hill_climb(resp, sx, sy)
    lo = BENCH_SIZE // 2 - CROP // 2
    hi = lo + CROP
    est: dict[str, tuple[float, float] | None] = {}
    # every method starts from the same integer peak so mixed stays a midpoint of its parts
    for m in methods:
        off = subpix.refine(m, img, resp, (px, py))
        if not off.valid:
            est[m] = None
            continue
        x, y = off.apply((px, py))
        # estimates leaving the central crop are omitted
        est[m] = (x, y) if lo - 0.5 <= x < hi - 0.5 and lo - 0.5 <= y < hi - 0.5 else None
    return BenchTrial((tx, ty), (px, py), est)


def bench_scene(factor: str, value: float, rng: np.random.Generator, seed: int) -> CornerSceneSpec:
    levels = dict(LOW_LEVELS)
    levels[factor] = value
    shift = tuple(float(s) for s in rng.uniform(-0.5, 0.5, size=2))
    blur = levels["blur"]
    return CornerSceneSpec(
        image_size=BENCH_SIZE,
        rotation_deg=levels["rotation"],
        skew_deg=levels["skew"],
        noise_std=levels["noise"],
        apply_blur=blur > 0,
        blur_variance=blur if blur > 0 else 0.675,
        transition_band=False,
        subpixel_shift=shift,
        seed=seed,
    )


@dataclass
class BenchResult:
    factor: str
    values: list[float]
    methods: list[str]
    mean_error: dict[str, list[float]]  # NaN where no trial was valid
    valid_count: dict[str, list[int]]
    trials: list[list[BenchTrial]]  # per factor value


def bench_refiners(
    factor: str,
    trials: int,
    methods: Sequence[str] = BENCH_METHODS,
    seed: int = 0,
    values: Sequence[float] | None = None,
    response_fn: Callable | None = None,
) -> BenchResult:
    """Per-method mean localization error while one degradation factor is swept."""
    if factor not in FACTOR_VALUES:
        raise ValueError(f"factor must be one of {sorted(FACTOR_VALUES)}")
    for m in methods:
        if m not in subpix.REFINERS or m == "none":
            raise ValueError(f"unknown refinement method {m!r}")
    vals = list(values) if values is not None else FACTOR_VALUES[factor]
    mean = {m: [] for m in methods}
    count = {m: [] for m in methods}
    all_trials = []
    for vi, v in enumerate(vals):
        cell_trials = []
        for t in range(trials):
            s = mix_seed(mix_seed(seed, vi), t)
            rng = np.random.default_rng(s)
            cell_trials.append(bench_trial(bench_scene(factor, v, rng, s), methods, response_fn))
        all_trials.append(cell_trials)
        for m in methods:
            errs = [e for e in (tr.error(m) for tr in cell_trials) if e is not None]
            mean[m].append(float(np.mean(errs)) if errs else float("nan"))
            count[m].append(len(errs))
    return BenchResult(factor, vals, list(methods), mean, count, all_trials)
