"""Response-map post-processing: thresholding, NMS, k-means++ cluster filter."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class Candidate:
    px: int
    py: int
    score: float
    refined: tuple[float, float] | None = None
    refine_valid: bool = False
    refine_method: str = "none"

    @property
    def xy(self) -> tuple[float, float]:
        return self.refined if self.refined is not None else (float(self.px), float(self.py))


@dataclass(frozen=True)
class ThresholdScheme:
    kind: str  # fixed | std | max_linear | adaptive
    param: float = 0.0

    def __post_init__(self) -> None:
        if self.kind in ("fixed", "max_linear"):
            if not 0 < self.param <= 1:
                raise ValueError(f"{self.kind} parameter must lie in (0, 1]")
        elif self.kind == "std":
            if self.param <= 0:
                raise ValueError("std multiplier must be positive")
        elif self.kind != "adaptive":
            raise ValueError(f"unknown threshold scheme {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "ThresholdScheme":
        """Parse ``adaptive``, ``fixed:C``, ``std:K`` or ``max:A``."""
        name, _, arg = text.partition(":")
        kind = {"fixed": "fixed", "std": "std", "max": "max_linear", "adaptive": "adaptive"}.get(name)
        if kind is None or (kind == "adaptive") != (arg == ""):
            raise ValueError(f"bad threshold spec {text!r}")
        return cls(kind, float(arg) if arg else 0.0)


@dataclass
class ThresholdResult:
    threshold: float
    candidates: list[Candidate] = field(default_factory=list)
    no_response: bool = False


def threshold(resp: np.ndarray, scheme: ThresholdScheme) -> ThresholdResult:
    """Threshold a response map; candidates are pixels strictly above T, in row-major order."""
    m = np.asarray(resp, dtype=np.float64)
    if m.ndim == 3:
        if m.shape[0] != 1:
            raise ValueError("threshold expects a single-channel map")
        m = m[0]
    if scheme.kind == "fixed":
        t = scheme.param
    elif scheme.kind == "std":
        t = float(m.mean() + scheme.param * m.std())
    elif scheme.kind == "max_linear":
        t = scheme.param * float(m.max())
    else:
        high = m[m > 0.5]
        if high.size == 0:
            return ThresholdResult(float("nan"), [], no_response=True)
        t = float(high.mean())
    ys, xs = np.nonzero(m > t)
    return ThresholdResult(t, [Candidate(int(x), int(y), float(m[y, x])) for y, x in zip(ys, xs)])


def box_iou(a: Candidate, b: Candidate, halfwidth: int) -> float:
    side = 2 * halfwidth + 1
    ix = max(0, side - abs(a.px - b.px))
    iy = max(0, side - abs(a.py - b.py))
    inter = ix * iy
    return inter / (2 * side * side - inter)


# 7x7 boxes: the smallest size at which a diagonal neighbour (offset 1,1) overlaps
# by more than 0.5 IoU (36/62); 5x5 boxes give 16/34 and keep it.
NMS_HALFWIDTH = 3


def nms(cands: Sequence[Candidate], box_halfwidth: int = NMS_HALFWIDTH, overlap_threshold: float = 0.5) -> list[Candidate]:
    """Greedy box NMS by descending score; ties broken by (py, px)."""
    if not 0 < overlap_threshold < 1:
        raise ValueError("overlap_threshold must lie in (0, 1)")
    order = sorted(cands, key=lambda c: (-c.score, c.py, c.px))
    kept: list[Candidate] = []
    reach = 2 * box_halfwidth + 1
    for c in order:
        if all(
            abs(c.px - k.px) >= reach or abs(c.py - k.py) >= reach or box_iou(c, k, box_halfwidth) <= overlap_threshold
            for k in kept
        ):
            kept.append(c)
    return kept


def kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 50):
    """k-means++ seeding then Lloyd iterations. Returns (labels, centers)."""
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    labels = None
    for _ in range(max_iter):
        dist = np.sum((points[:, None, :] - centers[None]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return labels, centers


def cluster_filter(
    cands: Sequence[Candidate],
    k: int = 10,
    min_cluster: int = 2,
    skip_below: int = 30,
    seed: int = 0,
) -> list[Candidate]:
    """Drop candidates in spatial k-means++ clusters with at most ``min_cluster`` members."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = list(cands)
    if len(cands) < skip_below:
        return cands
    pts = np.array([[c.px, c.py] for c in cands], dtype=np.float64)
    labels, _ = kmeans_pp(pts, min(k, len(cands)), np.random.default_rng(seed))
    sizes = np.bincount(labels, minlength=min(k, len(cands)))
    return [c for c, lab in zip(cands, labels) if sizes[lab] > min_cluster]


def write_candidates(path: str | Path, cands: Sequence[Candidate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "score"])
        for c in cands:
            x, y = c.xy
            w.writerow([f"{x:.6f}", f"{y:.6f}", f"{c.score:.6f}"])


def read_points(path: str | Path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        return [(float(r["x"]), float(r["y"])) for r in csv.DictReader(fh)]
