"""Checkerboard structure recovery from refined corner candidates.

Seeds a small indexing matrix around the strongest corner whose local edge
histogram shows 2-4 orientations, then grows it border by border by linear
extrapolation. Two-wide seeds are first extended by merging matrices seeded
from their boundary corners, provided the spacing agrees within 0.8-1.2x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

ABSENT = -1


@dataclass(frozen=True)
class OrientationSet:
    angles: tuple[float, ...]  # edge directions in [0, 180), ascending
    strengths: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.angles)


def edge_orientations(
    image: np.ndarray,
    corner,
    window: int = 20,
    bins: int = 32,
    prominence: float = 0.3,
) -> OrientationSet:
    """Edge directions around a corner from a magnitude-weighted gradient-angle histogram."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    x0 = int(round(corner[0])) - window // 2
    y0 = int(round(corner[1])) - window // 2
    if x0 < 1 or y0 < 1 or x0 + window + 1 > w or y0 + window + 1 > h:
        return OrientationSet((), ())
    patch = img[y0 - 1 : y0 + window + 1, x0 - 1 : x0 + window + 1]
    gx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    gy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    if mag.sum() < 1e-6:
        return OrientationSet((), ())
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    width = 180.0 / bins
    idx = np.minimum((ang / width).astype(int), bins - 1)
    hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=bins)
    hist = 0.25 * np.roll(hist, 1) + 0.5 * hist + 0.25 * np.roll(hist, -1)
    top = hist.max()
    out = []
    for i in range(bins):
        left, right = hist[i - 1], hist[(i + 1) % bins]
        if hist[i] > left and hist[i] >= right and hist[i] >= prominence * top:
            den = left - 2 * hist[i] + right
            frac = 0.5 * (left - right) / den if den < 0 else 0.0
            grad_angle = (i + 0.5 + frac) * width
            out.append(((grad_angle + 90.0) % 180.0, float(hist[i])))
    out.sort()
    return OrientationSet(tuple(a for a, _ in out), tuple(s for _, s in out))


def _angdiff(a: float, b: float, period: float = 360.0) -> float:
    d = (a - b) % period
    return min(d, period - d)


# --- grids --------------------------------------------------------------------


@dataclass
class CornerGrid:
    cells: np.ndarray  # (rows, cols) candidate indices, ABSENT where missing
    points: np.ndarray  # (n, 2) candidate positions the indices refer to

    @property
    def rows(self) -> int:
        return int(self.cells.shape[0])

    @property
    def cols(self) -> int:
        return int(self.cells.shape[1])

    @property
    def present(self) -> np.ndarray:
        return self.cells[self.cells != ABSENT]

    @property
    def n_present(self) -> int:
        return int(np.count_nonzero(self.cells != ABSENT))

    def edges(self) -> list[float]:
        out = []
        c = self.cells
        for a, b in ((c[:, :-1], c[:, 1:]), (c[:-1, :], c[1:, :])):
            ok = (a != ABSENT) & (b != ABSENT)
            if ok.any():
                d = self.points[a[ok]] - self.points[b[ok]]
                out += list(np.hypot(d[:, 0], d[:, 1]))
        return out

    @property
    def mean_edge_px(self) -> float:
        e = self.edges()
        return float(np.mean(e)) if e else 0.0

    def pos(self, i: int, j: int) -> np.ndarray:
        return self.points[self.cells[i, j]]


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def blocks_convex(grid: CornerGrid) -> bool:
    """Every fully present 2x2 block is a convex quad with the grid's common winding."""
    sign = 0
    c = grid.cells
    for i in range(grid.rows - 1):
        for j in range(grid.cols - 1):
            q = [c[i, j], c[i, j + 1], c[i + 1, j + 1], c[i + 1, j]]
            if ABSENT in q:
                continue
            p = grid.points[q]
            crosses = [_cross(p[k], p[(k + 1) % 4], p[(k + 2) % 4]) for k in range(4)]
            s = np.sign(crosses)
            if not (np.all(s > 0) or np.all(s < 0)):
                return False
            if sign == 0:
                sign = int(s[0])
            elif s[0] != sign:
                return False
    return True


def spacing_coherent(grid: CornerGrid, lo: float = 0.5, hi: float = 2.0) -> bool:
    e = grid.edges()
    if not e:
        return True
    m = float(np.mean(e))
    return all(lo * m <= d <= hi * m for d in e)


# --- candidate pool -----------------------------------------------------------


class _Pool:
    """Candidate positions, responses, claimed flags, and spatial index."""

    def __init__(self, points: np.ndarray, responses: np.ndarray, image: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        self.responses = np.asarray(responses, dtype=np.float64)
        self.image = image
        self.claimed = np.zeros(len(self.points), bool)
        self.tree = cKDTree(self.points) if len(self.points) else None
        self._ori: dict[int, OrientationSet] = {}
        if len(self.points) >= 2:
            d, _ = self.tree.query(self.points, k=2)
            self.nn_median = float(np.median(d[:, 1]))
        else:
            self.nn_median = 0.0

    def orientations(self, i: int) -> OrientationSet:
        if i not in self._ori:
            self._ori[i] = edge_orientations(self.image, self.points[i])
        return self._ori[i]

    def search(self, origin: int, direction: float, exclude=(), tol: float = 15.0, lo=0.3, hi=3.0):
        """Nearest free candidate within an angular cone around ``direction`` (degrees)."""
        o = self.points[origin]
        dmin, dmax = lo * self.nn_median, hi * self.nn_median
        best, best_d = None, math.inf
        for k in self.tree.query_ball_point(o, dmax):
            if k == origin or self.claimed[k] or k in exclude:
                continue
            v = self.points[k] - o
            d = math.hypot(v[0], v[1])
            if d < dmin or d >= best_d:
                continue
            if _angdiff(math.degrees(math.atan2(v[1], v[0])), direction) <= tol:
                best, best_d = k, d
        return best

    def nearest_free(self, p: np.ndarray, radius: float, taken: set) -> int | None:
        best, best_d = None, math.inf
        for k in self.tree.query_ball_point(p, radius):
            if self.claimed[k] or k in taken:
                continue
            d = math.hypot(*(self.points[k] - p))
            if d < best_d:
                best, best_d = k, d
        return best


def _local_direction(pool: _Pool, idx: int, want: float) -> float:
    """Direction at ``idx`` closest to ``want``: a local edge orientation if one is near, else ``want``."""
    best, best_d = want, 25.0
    for a in pool.orientations(idx).angles:
        for cand in (a, a + 180.0):
            d = _angdiff(cand, want)
            if d < best_d:
                best, best_d = cand, d
    return best


def _vec_angle(v: np.ndarray) -> float:
    return math.degrees(math.atan2(v[1], v[0]))


def _local_matrix(pool: _Pool, seed: int, a1: float, a2: float, allowed_claimed=()) -> dict:
    """Assemble the 3x3 neighbourhood of ``seed`` along edge directions a1 (cols) and a2 (rows)."""
    saved = pool.claimed[list(allowed_claimed)].copy() if allowed_claimed else None
    if allowed_claimed:
        pool.claimed[list(allowed_claimed)] = False
    try:
        cells = {(0, 0): seed}
        used = {seed}
        for (di, dj), ang in (((0, 1), a1), ((0, -1), a1 + 180), ((1, 0), a2), ((-1, 0), a2 + 180)):
            k = pool.search(seed, ang, exclude=used)
            if k is not None:
                cells[(di, dj)] = k
                used.add(k)
        p0 = pool.points[seed]
        for di in (-1, 1):
            for dj in (-1, 1):
                found = []
                for via, other in (((0, dj), (di, 0)), ((di, 0), (0, dj))):
                    if via not in cells:
                        continue
                    if other in cells:
                        want = _vec_angle(pool.points[cells[other]] - p0)
                    else:
                        want = (a2 if di > 0 else a2 + 180) if via[0] == 0 else (a1 if dj > 0 else a1 + 180)
                    k = pool.search(cells[via], _local_direction(pool, cells[via], want), exclude=used)
                    if k is not None:
                        found.append(k)
                if found and all(f == found[0] for f in found):
                    cells[(di, dj)] = found[0]
                    used.add(found[0])
        return cells
    finally:
        if saved is not None:
            pool.claimed[list(allowed_claimed)] = saved


def _parallel_ok(grid: CornerGrid, ratio: float = 1.4) -> bool:
    """Opposite edges of each 2x2 block agree in length within ``ratio``."""
    c, p = grid.cells, grid.points
    for i in range(grid.rows - 1):
        for j in range(grid.cols - 1):
            a, b, d, e = p[c[i, j]], p[c[i, j + 1]], p[c[i + 1, j]], p[c[i + 1, j + 1]]
            for u, v in ((b - a, e - d), (d - a, e - b)):
                lu, lv = math.hypot(*u), math.hypot(*v)
                if max(lu, lv) > ratio * min(lu, lv):
                    return False
    return True


def _edge_contrast(image: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Mean intensity difference across the segment a-b, sampled a quarter edge to each side.

    A true grid edge separates a dark and a light square; a diagonal runs
    through one square and shows almost none.
    """
    v = b - a
    n = np.array([-v[1], v[0]]) * 0.25
    t = np.array([0.35, 0.5, 0.65])[:, None]
    mid = a + t * v
    left, right = mid + n, mid - n
    coords = lambda q: np.stack([q[:, 1], q[:, 0]])
    lv = map_coordinates(image, coords(left), order=1, mode="nearest")
    rv = map_coordinates(image, coords(right), order=1, mode="nearest")
    return float(np.mean(np.abs(lv - rv)))


def _edges_supported(grid: CornerGrid, image: np.ndarray, floor: float = 0.04, rel: float = 0.35) -> bool:
    c, p = grid.cells, grid.points
    vals = []
    for i in range(grid.rows):
        for j in range(grid.cols):
            if j + 1 < grid.cols:
                vals.append(_edge_contrast(image, p[c[i, j]], p[c[i, j + 1]]))
            if i + 1 < grid.rows:
                vals.append(_edge_contrast(image, p[c[i, j]], p[c[i + 1, j]]))
    return min(vals) >= max(floor, rel * max(vals))


def _matrix_from_cells(pool: _Pool, cells: dict) -> CornerGrid | None:
    """Full 3x3 if all nine are present, else the first complete 2x2 quadrant holding the seed."""
    if len(cells) == 9:
        m = np.array([[cells[(i, j)] for j in (-1, 0, 1)] for i in (-1, 0, 1)])
        g = CornerGrid(m, pool.points)
        if blocks_convex(g) and spacing_coherent(g) and _parallel_ok(g) and _edges_supported(g, pool.image):
            return g
    for di, dj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        keys = [(0, 0), (0, dj), (di, 0), (di, dj)]
        if all(k in cells for k in keys):
            rs, cs = sorted({0, di}), sorted({0, dj})
            m = np.array([[cells[(i, j)] for j in cs] for i in rs])
            g = CornerGrid(m, pool.points)
            if blocks_convex(g) and spacing_coherent(g) and _parallel_ok(g) and _edges_supported(g, pool.image):
                return g
    return None


def _seed_at(pool: _Pool, seed: int, allowed_claimed=()) -> CornerGrid | None:
    ori = pool.orientations(seed)
    if not 2 <= len(ori) <= 4:
        return None
    pairs = []
    for i in range(len(ori)):
        for j in range(i + 1, len(ori)):
            if _angdiff(ori.angles[i], ori.angles[j], 180.0) >= 20.0:
                pairs.append((-(ori.strengths[i] + ori.strengths[j]), i, j))
    for _, i, j in sorted(pairs):
        cells = _local_matrix(pool, seed, ori.angles[i], ori.angles[j], allowed_claimed)
        g = _matrix_from_cells(pool, cells)
        if g is not None:
            return g
    return None


def seed_matrix(pool: _Pool, tried: set | None = None) -> CornerGrid | None:
    """Initial 3x3 (or 2x2) indexing matrix from the strongest usable free corner."""
    if int(np.count_nonzero(~pool.claimed)) < 4:
        return None
    order = sorted(np.nonzero(~pool.claimed)[0], key=lambda k: (-pool.responses[k], k))
    for s in order:
        if tried is not None:
            if s in tried:
                continue
            tried.add(s)
        g = _seed_at(pool, int(s))
        if g is not None:
            return g
    return None


# --- growth -------------------------------------------------------------------


def _extrapolate(pos: list[tuple[int, np.ndarray]], target: int) -> np.ndarray | None:
    """Predict the cell at index ``target`` along a line of cells.

    With three or more cells a 1-D projective map ``p(t) = (a t + b) / (c t + 1)``
    is fitted to the entries nearest ``target`` (perspective keeps lines
    projective); otherwise, or if that fit is degenerate, linear extrapolation.
    """
    if len(pos) < 2:
        return None
    near = sorted(pos, key=lambda t: abs(t[0] - target))
    (i1, p1), (i2, p2) = near[:2]
    linear = p1 + (target - i1) / (i1 - i2) * (p1 - p2)
    if len(near) < 3:
        return linear
    ts = np.array([t for t, _ in near[:4]], dtype=np.float64)
    ps = np.array([p for _, p in near[:4]])
    t0 = ts[0]
    ts = ts - t0
    rows = []
    rhs = []
    for t, p in zip(ts, ps):
        rows.append([t, 0.0, 1.0, 0.0, -p[0] * t])
        rows.append([0.0, t, 0.0, 1.0, -p[1] * t])
        rhs += [p[0], p[1]]
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    ax, ay, bx, by, c = sol
    tt = target - t0
    den = c * tt + 1.0
    if abs(den) < 0.2:
        return linear
    pred = np.array([ax * tt + bx, ay * tt + by]) / den
    step = np.hypot(*(p1 - p2)) / abs(i1 - i2)
    # a wild projective fit falls back to the linear guess
    if np.hypot(*(pred - linear)) > 0.5 * step * abs(target - i1):
        return linear
    return pred


def _neighbors_ok(grid_cells: np.ndarray, points: np.ndarray, i: int, j: int, p: np.ndarray, mean_edge: float) -> bool:
    rows, cols = grid_cells.shape
    for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        a, b = i + di, j + dj
        if 0 <= a < rows and 0 <= b < cols and grid_cells[a, b] != ABSENT:
            d = math.hypot(*(points[grid_cells[a, b]] - p))
            if not 0.5 * mean_edge <= d <= 2.0 * mean_edge:
                return False
    return True


def _predict_row(
    cells: np.ndarray, pool: _Pool, target: int, taken: set, mean_edge: float, radius: float, reach: int
):
    """Match predictions for row ``target`` beyond the bottom; returns (row, n_predictions).

    Columns whose last present cell is more than ``reach`` rows from ``target``
    make no prediction.
    """
    rows, cols = cells.shape
    new = np.full(cols, ABSENT)
    preds = 0
    claims: dict[int, tuple[float, int]] = {}
    for j in range(cols):
        col = [(i, pool.points[cells[i, j]]) for i in range(rows) if cells[i, j] != ABSENT]
        if not col or target - col[-1][0] > reach:
            continue
        p = _extrapolate(col, target)
        if p is None:
            continue
        preds += 1
        k = pool.nearest_free(p, radius * mean_edge, taken)
        if k is None:
            continue
        d = math.hypot(*(pool.points[k] - p))
        if k in claims and claims[k][0] <= d:
            continue
        if k in claims:
            new[claims[k][1]] = ABSENT
        claims[k] = (d, j)
        new[j] = k
    return new, preds


def _grow_bottom(
    cells: np.ndarray,
    pool: _Pool,
    taken: set,
    mean_edge: float,
    radius: float,
    max_jump: int = 3,
    relaxed: bool = False,
) -> np.ndarray | None:
    """Add the next row below if at least half its predictions match.

    When the next row fails, rows up to ``max_jump`` further are tried so that
    growth can step over an occluded band; skipped rows keep what they matched.
    ``relaxed`` accepts an adjacent row with two or more matches instead, for
    strips left beside an occluder.
    """
    rows, cols = cells.shape

    def passes(matched: int, preds: int) -> bool:
        return matched >= 2 if relaxed else matched > 0 and 2 * matched >= preds

    block = []
    for jump in range(1 if relaxed else max_jump):
        used = taken | {int(k) for r in block for k in r if k != ABSENT}
        new, preds = _predict_row(cells, pool, rows + jump, used, mean_edge, radius, 1 if relaxed else max_jump)
        block.append(new)
        if passes(int(np.count_nonzero(new != ABSENT)), preds):
            break
    else:
        return None
    out = np.vstack([cells] + [b[None] for b in block])
    # drop matches that break local spacing
    for i in range(rows, out.shape[0]):
        for j in range(cols):
            k = out[i, j]
            if k != ABSENT:
                out[i, j] = ABSENT
                if _neighbors_ok(out, pool.points, i, j, pool.points[k], mean_edge):
                    out[i, j] = k
    kept = int(np.count_nonzero(out[-1] != ABSENT))
    if relaxed:
        return out if kept >= 2 else None
    if kept == 0 or 2 * kept < int(np.count_nonzero(block[-1] != ABSENT)):
        return None
    return out


_SIDES = {
    "bottom": (lambda m: m, lambda m: m),
    "top": (lambda m: m[::-1], lambda m: m[::-1]),
    "right": (lambda m: m.T, lambda m: m.T),
    "left": (lambda m: m.T[::-1], lambda m: m[::-1].T),
}


def _fill(cells: np.ndarray, pool: _Pool, taken: set, mean_edge: float, radius: float) -> bool:
    """Match absent interior cells from row/column inter- or extrapolation."""
    changed = False
    rows, cols = cells.shape
    for i in range(rows):
        for j in range(cols):
            if cells[i, j] != ABSENT:
                continue
            inter, extra = [], []
            row = [(b, pool.points[cells[i, b]]) for b in range(cols) if cells[i, b] != ABSENT]
            col = [(a, pool.points[cells[a, j]]) for a in range(rows) if cells[a, j] != ABSENT]
            for line, t in ((row, j), (col, i)):
                lo = [e for e in line if e[0] < t]
                hi = [e for e in line if e[0] > t]
                if lo and hi:
                    (i1, p1), (i2, p2) = lo[-1], hi[0]
                    inter.append(p1 + (t - i1) / (i2 - i1) * (p2 - p1))
                elif len(line) >= 2 and min(abs(e[0] - t) for e in line) <= 2:
                    extra.append(_extrapolate(line, t))
            preds = inter or extra
            if not preds:
                continue
            p = np.mean(preds, axis=0)
            k = pool.nearest_free(p, radius * mean_edge, taken)
            if k is not None and _neighbors_ok(cells, pool.points, i, j, pool.points[k], mean_edge):
                cells[i, j] = k
                taken.add(k)
                changed = True
    return changed


def _grow_cells(grid: CornerGrid, pool: _Pool, radius: float = 0.3) -> CornerGrid:
    cells = grid.cells.copy()
    taken = set(int(k) for k in cells[cells != ABSENT])
    for relaxed in (False, True):
        changed = True
        while changed:
            changed = False
            for fwd, back in _SIDES.values():
                mean_edge = CornerGrid(cells, pool.points).mean_edge_px
                grown = _grow_bottom(
                    np.ascontiguousarray(fwd(cells)), pool, taken, mean_edge, radius, relaxed=relaxed
                )
                if grown is not None:
                    cells = np.ascontiguousarray(back(grown))
                    taken.update(int(k) for k in cells[cells != ABSENT])
                    changed = True
            if _fill(cells, pool, taken, CornerGrid(cells, pool.points).mean_edge_px, radius):
                changed = True
    return CornerGrid(cells, pool.points)


def grow(grid: CornerGrid, candidates, claimed: Sequence[bool] | None = None, image=None) -> CornerGrid:
    """Extend a grid by border extrapolation until no border gains a cell.

    ``candidates`` are the (n, 2) positions the grid indexes into; ``claimed``
    marks candidates owned by other grids.
    """
    pool = _pool_for(candidates, image, claimed)
    return _grow_cells(grid, pool)


def _pool_for(candidates, image, claimed=None, responses=None) -> _Pool:
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    resp = np.zeros(len(pts)) if responses is None else responses
    img = np.zeros((1, 1)) if image is None else image
    pool = _Pool(pts, resp, img)
    if claimed is not None:
        pool.claimed[:] = np.asarray(claimed, bool)
    return pool


def _affine_index_fit(grid: CornerGrid) -> tuple[np.ndarray, np.ndarray] | None:
    """Least-squares map (i, j) -> (x, y); returns (A, t) with p = A @ [j, i] + t."""
    ii, jj = np.nonzero(grid.cells != ABSENT)
    if len(ii) < 3:
        return None
    design = np.stack([jj, ii, np.ones_like(ii)], axis=1).astype(np.float64)
    pts = grid.points[grid.cells[ii, jj]]
    sol, *_ = np.linalg.lstsq(design, pts, rcond=None)
    a = sol[:2].T
    if abs(np.linalg.det(a)) < 1e-9:
        return None
    return a, sol[2]


def _merge_into(grid: CornerGrid, local: CornerGrid, tol: float = 0.25) -> CornerGrid | None:
    """Map a local matrix into grid index space via an affine fit; None if inconsistent."""
    fit = _affine_index_fit(grid)
    if fit is None:
        return None
    a, t = fit
    ainv = np.linalg.inv(a)
    where = {int(k): (i, j) for (i, j), k in np.ndenumerate(grid.cells) if k != ABSENT}
    placed: dict[tuple[int, int], int] = {}
    shared = 0
    for k in local.present:
        ji = ainv @ (grid.points[k] - t)
        j, i = int(round(ji[0])), int(round(ji[1]))
        if abs(ji[0] - j) > tol or abs(ji[1] - i) > tol:
            return None
        if int(k) in where:
            if where[int(k)] != (i, j):
                return None
            shared += 1
        elif (i, j) in placed or (0 <= i < grid.rows and 0 <= j < grid.cols and grid.cells[i, j] != ABSENT):
            return None
        else:
            placed[(i, j)] = int(k)
    if shared == 0 or not placed:
        return None
    i0 = min([0] + [i for i, _ in placed])
    j0 = min([0] + [j for _, j in placed])
    i1 = max([grid.rows - 1] + [i for i, _ in placed])
    j1 = max([grid.cols - 1] + [j for _, j in placed])
    cells = np.full((i1 - i0 + 1, j1 - j0 + 1), ABSENT)
    cells[-i0 : -i0 + grid.rows, -j0 : -j0 + grid.cols] = grid.cells
    for (i, j), k in placed.items():
        cells[i - i0, j - j0] = k
    merged = CornerGrid(cells, grid.points)
    if not (blocks_convex(merged) and spacing_coherent(merged)):
        return None
    return merged


def _merge_two_wide(grid: CornerGrid, pool: _Pool, lo: float = 0.8, hi: float = 1.2) -> CornerGrid:
    changed = True
    while changed and min(grid.rows, grid.cols) == 2:
        changed = False
        members = set(int(k) for k in grid.present)
        boundary = [
            int(grid.cells[i, j])
            for i in range(grid.rows)
            for j in range(grid.cols)
            if grid.cells[i, j] != ABSENT and (i in (0, grid.rows - 1) or j in (0, grid.cols - 1))
        ]
        for b in boundary:
            outward = []
            for a in pool.orientations(b).angles:
                for ang in (a, a + 180.0):
                    k = pool.search(b, ang, exclude=members)
                    if k is not None and k not in outward:
                        outward.append(k)
            for n in outward:
                local = _seed_at(pool, n, allowed_claimed=members)
                if local is None:
                    continue
                base = grid.mean_edge_px
                if not lo * base <= local.mean_edge_px <= hi * base:
                    continue
                merged = _merge_into(grid, local)
                if merged is not None and merged.n_present > grid.n_present:
                    grid = merged
                    changed = True
                    break
            if changed:
                break
    return grid


def merge_two_wide(grid: CornerGrid, candidates, image, claimed=None) -> CornerGrid:
    """Extend a two-wide grid by merging boundary-seeded matrices of matching scale, then grow."""
    pool = _pool_for(candidates, image, claimed)
    return _grow_cells(_merge_two_wide(grid, pool), pool)


# --- canonical form and top level ---------------------------------------------


def _dihedral(m: np.ndarray) -> list[np.ndarray]:
    out = []
    for t in (m, m.T):
        for r in (t, t[::-1], t[:, ::-1], t[::-1, ::-1]):
            out.append(np.ascontiguousarray(r))
    return out


def _trim(cells: np.ndarray) -> np.ndarray:
    rows = np.nonzero((cells != ABSENT).any(axis=1))[0]
    cols = np.nonzero((cells != ABSENT).any(axis=0))[0]
    return cells[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def canonicalize(grid: CornerGrid) -> CornerGrid:
    """rows >= cols; among the remaining symmetries the first two present cells are (y, x)-smallest."""
    best, best_key = None, None
    for m in _dihedral(_trim(grid.cells)):
        if m.shape[0] < m.shape[1]:
            continue
        flat = m[m != ABSENT]
        p = grid.points[flat[:2]]
        key = tuple(np.round(p[:, ::-1].ravel(), 6))
        if best_key is None or key < best_key:
            best, best_key = m, key
    return CornerGrid(best, grid.points)


def recover_boards(candidates, image, responses=None, min_cells: int = 4) -> list[CornerGrid]:
    """Recover every checkerboard grid; each candidate ends up in at most one grid."""
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 4:
        return []
    resp = np.zeros(len(pts)) if responses is None else np.asarray(responses, dtype=np.float64)
    pool = _Pool(pts, resp, np.asarray(image, dtype=np.float64))
    grids = []
    tried: set = set()
    while True:
        g = seed_matrix(pool, tried)
        if g is None:
            break
        if min(g.rows, g.cols) == 2:
            g = _merge_two_wide(g, pool)
        g = _grow_cells(g, pool)
        pool.claimed[g.present] = True
        if g.n_present >= min_cells:
            grids.append(canonicalize(g))
    return grids


def grid_agrees(grid: CornerGrid, truth: np.ndarray) -> bool:
    """True if the grid's cells equal ``truth`` (rows x cols indices, ABSENT allowed) up to symmetry.

    Every present grid cell must hold the candidate at the corresponding truth
    position, and every candidate present in ``truth`` must appear in the grid.
    """
    where = {int(k): (i, j) for (i, j), k in np.ndenumerate(truth) if k != ABSENT}
    if set(int(k) for k in grid.present) != set(where):
        return False
    cells = _trim(grid.cells)
    for m in _dihedral(cells):
        ii, jj = np.nonzero(m != ABSENT)
        k0 = int(m[ii[0], jj[0]])
        oi, oj = where[k0][0] - ii[0], where[k0][1] - jj[0]
        if all(where.get(int(m[i, j])) == (i + oi, j + oj) for i, j in zip(ii, jj)):
            return True
    return False
