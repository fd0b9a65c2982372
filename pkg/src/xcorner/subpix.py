"""Subpixel corner refinement.

Response-based peak estimators (Gaussian, parabolic, centroid) work on the
detector's response map; intensity-based refiners (saddle surface fit, edge
approximation) work on the image. ``mixed_refine`` averages the saddle fit and
the Gaussian peak.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class SubpixelOffset:
    dx: float = 0.0
    dy: float = 0.0
    valid: bool = False
    source: str = "none"

    def apply(self, point) -> tuple[float, float]:
        return point[0] + self.dx, point[1] + self.dy


INVALID = SubpixelOffset()


def _inside(m: np.ndarray, x: int, y: int, r: int) -> bool:
    h, w = m.shape
    return r <= x < w - r and r <= y < h - r


def _triples(m: np.ndarray, peak) -> tuple[np.ndarray, np.ndarray] | None:
    x, y = int(peak[0]), int(peak[1])
    if not _inside(m, x, y, 1):
        return None
    c = m[y, x]
    tx = np.array([m[y, x - 1], c, m[y, x + 1]])
    ty = np.array([m[y - 1, x], c, m[y + 1, x]])
    if c <= max(tx[0], tx[2], ty[0], ty[2]):
        return None
    return tx, ty


def _three_point(t: np.ndarray) -> float | None:
    den = t[0] - 2.0 * t[1] + t[2]
    if den == 0 or not np.isfinite(den):
        return None
    return 0.5 * (t[0] - t[2]) / den


def gaussian_peak(resp: np.ndarray, peak) -> SubpixelOffset:
    """Three-point Gaussian fit (log-domain parabola) in x and y."""
    t = _triples(np.asarray(resp), peak)
    if t is None:
        return INVALID
    tx, ty = t
    if min(tx.min(), ty.min()) <= 0:
        return INVALID
    dx, dy = _three_point(np.log(tx)), _three_point(np.log(ty))
    if dx is None or dy is None:
        return INVALID
    return SubpixelOffset(dx, dy, True, "gauss")


def parabolic_peak(resp: np.ndarray, peak) -> SubpixelOffset:
    t = _triples(np.asarray(resp), peak)
    if t is None:
        return INVALID
    dx, dy = _three_point(t[0]), _three_point(t[1])
    if dx is None or dy is None:
        return INVALID
    return SubpixelOffset(dx, dy, True, "parabolic")


def com_peak(resp: np.ndarray, peak, halfwidth: int = 4) -> SubpixelOffset:
    """Centroid of the clamped-nonnegative response over a square window."""
    m = np.asarray(resp)
    x, y = int(peak[0]), int(peak[1])
    if not _inside(m, x, y, halfwidth):
        return INVALID
    win = np.maximum(m[y - halfwidth : y + halfwidth + 1, x - halfwidth : x + halfwidth + 1], 0.0)
    mass = win.sum()
    if mass <= 0:
        return INVALID
    d = np.arange(-halfwidth, halfwidth + 1, dtype=np.float64)
    return SubpixelOffset(float(win.sum(axis=0) @ d / mass), float(win.sum(axis=1) @ d / mass), True, "com")


@lru_cache(maxsize=8)
def _quad_pinv(halfwidth: int) -> np.ndarray:
    d = np.arange(-halfwidth, halfwidth + 1, dtype=np.float64)
    yy, xx = np.meshgrid(d, d, indexing="ij")
    x, y = xx.ravel(), yy.ravel()
    design = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=1)
    return np.linalg.pinv(design)


def surface_fit_saddle(image: np.ndarray, point, halfwidth: int = 2) -> SubpixelOffset:
    """Least-squares quadratic fit; offset of its saddle point from ``point``."""
    img = np.asarray(image)
    x, y = int(round(point[0])), int(round(point[1]))
    if not _inside(img, x, y, halfwidth):
        return INVALID
    win = img[y - halfwidth : y + halfwidth + 1, x - halfwidth : x + halfwidth + 1]
    _, b, c, d, e, f = _quad_pinv(halfwidth) @ win.ravel()
    det = 4.0 * d * f - e * e
    if not det < 0:
        return INVALID
    sx = (-2.0 * f * b + e * c) / det
    sy = (-2.0 * d * c + e * b) / det
    if abs(sx) > halfwidth or abs(sy) > halfwidth:
        return INVALID
    return SubpixelOffset(sx + (x - point[0]), sy + (y - point[1]), True, "surface")


def edge_approx(image: np.ndarray, point, halfwidth: int = 4, max_iter: int = 40, eps: float = 1e-3) -> SubpixelOffset:
    """Gradient-orthogonality refinement over a window of integer pixels.

    Solves ``(sum G_p) q = sum G_p p`` with ``G_p`` the gradient outer product
    at pixel ``p``. The window moves to the pixel nearest the current estimate
    until the update drops below ``eps``.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    x0, y0 = int(round(point[0])), int(round(point[1]))
    d = np.arange(-halfwidth, halfwidth + 1, dtype=np.float64)
    oy, ox = np.meshgrid(d, d, indexing="ij")
    cx, cy = x0, y0
    q = np.zeros(2)  # estimate relative to (x0, y0)
    for _ in range(max_iter):
        if not (halfwidth + 1 <= cx < w - halfwidth - 1 and halfwidth + 1 <= cy < h - halfwidth - 1):
            return INVALID
        win = img[cy - halfwidth - 1 : cy + halfwidth + 2, cx - halfwidth - 1 : cx + halfwidth + 2]
        gx = 0.5 * (win[1:-1, 2:] - win[1:-1, :-2])
        gy = 0.5 * (win[2:, 1:-1] - win[:-2, 1:-1])
        rx, ry = ox + (cx - x0), oy + (cy - y0)
        a11, a12, a22 = np.sum(gx * gx), np.sum(gx * gy), np.sum(gy * gy)
        det = a11 * a22 - a12 * a12
        if det <= 1e-12 * max(1e-12, (a11 + a22) ** 2) or a11 + a22 <= 1e-12:
            return INVALID
        b1 = np.sum(gx * gx * rx + gx * gy * ry)
        b2 = np.sum(gx * gy * rx + gy * gy * ry)
        new = np.array([(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det])
        step = float(np.hypot(*(new - q)))
        q = new
        if np.abs(q).max() > halfwidth:
            return INVALID
        nx, ny = x0 + int(round(q[0])), y0 + int(round(q[1]))
        if step < eps or (nx, ny) == (cx, cy):
            break
        cx, cy = nx, ny
    return SubpixelOffset(float(q[0]) + (x0 - point[0]), float(q[1]) + (y0 - point[1]), True, "edge")


def mixed_refine(image: np.ndarray, resp: np.ndarray, point) -> SubpixelOffset:
    """Average of the saddle fit on intensity and the Gaussian peak on the response.

    Falls back to whichever component is valid; if neither is, returns an
    invalid zero offset (the integer location).
    """
    s = surface_fit_saddle(image, point)
    g = gaussian_peak(resp, point)
    if s.valid and g.valid:
        return SubpixelOffset(0.5 * (s.dx + g.dx), 0.5 * (s.dy + g.dy), True, "mixed")
    if s.valid:
        return s
    if g.valid:
        return g
    return INVALID


REFINERS = ("mixed", "gauss", "parabolic", "com", "surface", "edge", "none")


def refine(method: str, image: np.ndarray, resp: np.ndarray, point) -> SubpixelOffset:
    if method == "mixed":
        return mixed_refine(image, resp, point)
    if method == "gauss":
        return gaussian_peak(resp, point)
    if method == "parabolic":
        return parabolic_peak(resp, point)
    if method == "com":
        return com_peak(resp, point)
    if method == "surface":
        return surface_fit_saddle(image, point)
    if method == "edge":
        return edge_approx(image, point)
    if method == "none":
        return INVALID
    raise ValueError(f"unknown refinement method {method!r}")
