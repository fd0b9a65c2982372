"""Synthetic ground-truthed X-corner patches and checkerboard renderings."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gridcore import gaussian_blur_3x3, load_gray, save_gray
from .xnet import LabelMask

DARK = 64 / 255
LIGHT = 191 / 255
BAND = 128 / 255
MARGIN = 13
_MASK64 = (1 << 64) - 1
# subsample offsets for 4x4 supersampling, relative to the pixel center
_SS = (np.arange(4) - 1.5) / 4


class SceneError(ValueError):
    pass


def mix_seed(seed: int, index: int) -> int:
    """Per-item seed: (seed XOR index) through the splitmix64 finalizer."""
    z = (int(seed) ^ int(index)) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class GroundTruth:
    corners: np.ndarray  # (n, 2) subpixel (x, y)
    occluded: np.ndarray  # (n,) bool
    mask: LabelMask
    rows: int = 0
    cols: int = 0

    @property
    def visible(self) -> np.ndarray:
        return self.corners[~self.occluded]


def add_noise(image: np.ndarray, std: float, rng: np.random.Generator, clamp: bool = True) -> np.ndarray:
    """Additive zero-mean Gaussian noise; ``std`` is in 8-bit intensity units."""
    out = image + rng.normal(0.0, std / 255.0, size=image.shape) if std > 0 else image.copy()
    return np.clip(out, 0.0, 1.0) if clamp else out


# --- geometry -----------------------------------------------------------------


def _snap(a: np.ndarray) -> np.ndarray:
    # kills cos(90 deg)-style residue so lattice-aligned warps stay exact
    r = np.round(a)
    return np.where(np.abs(a - r) < 1e-9, r, a)


def pattern_homography(rotation_deg: float, skew_deg: float, focal: float) -> np.ndarray:
    """Plane-to-image homography about the origin: in-plane rotation, then tilt.

    The tilt is an out-of-plane rotation about the horizontal axis through the
    origin, seen by a pinhole camera of focal length ``focal`` (pixels) placed at
    distance ``focal`` from the plane.
    """
    t = math.radians(rotation_deg)
    p = math.radians(skew_deg)
    rot = np.array([[math.cos(t), -math.sin(t), 0.0], [math.sin(t), math.cos(t), 0.0], [0.0, 0.0, 1.0]])
    tilt = np.array([[focal, 0.0, 0.0], [0.0, focal * math.cos(p), 0.0], [0.0, math.sin(p), focal]])
    return _snap(tilt @ rot / focal)


def apply_homography(h: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    return (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w, (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w


def apply_distortion(point, center, focal, k1=0.0, k2=0.0, p1=0.0, p2=0.0):
    """Brown radial/tangential distortion of pixel coordinates.

    Works on scalars or arrays; ``point`` is ``(x, y)``.
    """
    x = (np.asarray(point[0], dtype=np.float64) - center[0]) / focal
    y = (np.asarray(point[1], dtype=np.float64) - center[1]) / focal
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd * focal + center[0], yd * focal + center[1]


def undistort(point, center, focal, k1=0.0, k2=0.0, p1=0.0, p2=0.0, iters: int = 30):
    """Fixed-point inverse of :func:`apply_distortion`."""
    xd = (np.asarray(point[0], dtype=np.float64) - center[0]) / focal
    yd = (np.asarray(point[1], dtype=np.float64) - center[1]) / focal
    x, y = xd.copy(), yd.copy()
    for _ in range(iters):
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        x = (xd - 2.0 * p1 * x * y - p2 * (r2 + 2.0 * x * x)) / radial
        y = (yd - p1 * (r2 + 2.0 * y * y) - 2.0 * p2 * x * y) / radial
    return x * focal + center[0], y * focal + center[1]


# --- single corner ------------------------------------------------------------


@dataclass(frozen=True)
class CornerSceneSpec:
    image_size: int = 21
    rotation_deg: float = 0.0
    skew_deg: float = 0.0
    noise_std: float = 0.0
    apply_blur: bool = False
    transition_band: bool = True
    subpixel_shift: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    blur_variance: float = 0.675

    def __post_init__(self) -> None:
        if self.image_size < 20:
            raise SceneError("image_size must be >= 20")
        if not 0 <= self.rotation_deg <= 90:
            raise SceneError("rotation_deg must lie in [0, 90]")
        if not 0 <= self.skew_deg <= 70:
            raise SceneError("skew_deg must lie in [0, 70]")
        if not 0 <= self.noise_std <= 100:
            raise SceneError("noise_std must lie in [0, 100]")
        if any(not -0.5 <= s < 0.5 for s in self.subpixel_shift):
            raise SceneError("subpixel_shift components must lie in [-0.5, 0.5)")
        if self.transition_band and self.subpixel_shift != (0.0, 0.0):
            raise SceneError("the transition band pins the corner to a pixel; shift must be zero")


def _lattice_corner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the banded integer-lattice quadrant pattern."""
    u0, v0 = np.floor(u), np.floor(v)
    fu, fv = u - u0, v - v0

    def at(a, b):
        return np.where((a == 0) | (b == 0), BAND, np.where(a * b > 0, DARK, LIGHT))

    return (
        (1 - fu) * (1 - fv) * at(u0, v0)
        + fu * (1 - fv) * at(u0 + 1, v0)
        + (1 - fu) * fv * at(u0, v0 + 1)
        + fu * fv * at(u0 + 1, v0 + 1)
    )


def _edge_coverage(hinv, x, y, footprint):
    """Fractions of a subsample footprint on the positive side of the u=0 and v=0 lines.

    Uses the signed distance to each (straight) image line, so the rendered
    edge position varies continuously with subpixel shifts.
    """
    eps = 1e-4
    u, v = apply_homography(hinv, x, y)
    ux, vx = apply_homography(hinv, x + eps, y)
    uy, vy = apply_homography(hinv, x, y + eps)
    gu = np.hypot(ux - u, uy - u) / eps
    gv = np.hypot(vx - v, vy - v) / eps
    cu = np.clip(0.5 + u / (gu * footprint), 0.0, 1.0)
    cv = np.clip(0.5 + v / (gv * footprint), 0.0, 1.0)
    return cu, cv


def render_corner(spec: CornerSceneSpec) -> tuple[np.ndarray, GroundTruth]:
    """Render one X-corner: dark top-left/bottom-right quadrants, light elsewhere."""
    n = spec.image_size
    cx = n // 2 + spec.subpixel_shift[0]
    cy = n // 2 + spec.subpixel_shift[1]
    hinv = np.linalg.inv(pattern_homography(spec.rotation_deg, spec.skew_deg, 2.0 * n))
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    if spec.transition_band:
        u, v = apply_homography(hinv, xs - cx, ys - cy)
        img = _lattice_corner(_snap(u), _snap(v))
    else:
        img = np.zeros((n, n))
        for oy in _SS:
            for ox in _SS:
                cu, cv = _edge_coverage(hinv, xs + ox - cx, ys + oy - cy, 1.0 / len(_SS))
                same = cu * cv + (1 - cu) * (1 - cv)
                img += LIGHT + (DARK - LIGHT) * same
        img /= len(_SS) ** 2
    if spec.apply_blur:
        img = gaussian_blur_3x3(img, spec.blur_variance)
    img = add_noise(img, spec.noise_std, np.random.default_rng(spec.seed))
    if not (0 <= cx <= n - 1 and 0 <= cy <= n - 1):
        raise SceneError("corner left the image")
    corners = np.array([[cx, cy]])
    gt = GroundTruth(corners, np.zeros(1, bool), LabelMask.from_points(n, n, corners))
    return img, gt


# --- boards -------------------------------------------------------------------


@dataclass(frozen=True)
class BoardSceneSpec:
    rows: int = 7
    cols: int = 9
    square_px: float = 12.0
    width: int = 160
    height: int = 128
    rotation_deg: float = 0.0
    skew_deg: float = 0.0
    noise_std: float = 0.0
    invert: bool = False
    distortion: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    occlusion_rect: tuple[int, int, int, int] | None = None
    seed: int = 0
    center: tuple[float, float] | None = None
    blur_variance: float = 0.0
    dark: float = 0.1
    light: float = 0.9
    background: float = 0.5
    margin: int = MARGIN

    def __post_init__(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise SceneError("boards need at least 2x2 inner corners")
        if self.square_px < 6:
            raise SceneError("square_px must be >= 6")

    @property
    def focal(self) -> float:
        return 2.0 * max(self.width, self.height)

    @property
    def board_center(self) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        return ((self.width - 1) / 2, (self.height - 1) / 2)


def board_corners(spec: BoardSceneSpec) -> np.ndarray:
    """Image positions of all inner corners, row-major (rows x cols), shape (n, 2)."""
    s = spec.square_px
    jj, ii = np.meshgrid(np.arange(spec.cols), np.arange(spec.rows))
    u = (jj.ravel() - (spec.cols - 1) / 2) * s
    v = (ii.ravel() - (spec.rows - 1) / 2) * s
    h = pattern_homography(spec.rotation_deg, spec.skew_deg, spec.focal)
    x, y = apply_homography(h, u, v)
    x, y = x + spec.board_center[0], y + spec.board_center[1]
    c = ((spec.width - 1) / 2, (spec.height - 1) / 2)
    x, y = apply_distortion((x, y), c, max(spec.width, spec.height), *spec.distortion)
    return np.stack([x, y], axis=1)


def _board_value(spec: BoardSceneSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    s = spec.square_px
    qx = np.floor(u / s + (spec.cols + 1) / 2)
    qy = np.floor(v / s + (spec.rows + 1) / 2)
    inside = (qx >= 0) & (qx <= spec.cols) & (qy >= 0) & (qy <= spec.rows)
    half_w = (spec.cols + 2) / 2 * s
    half_h = (spec.rows + 2) / 2 * s
    quiet = (np.abs(u) < half_w) & (np.abs(v) < half_h)
    val = np.where(quiet, spec.light, spec.background)
    return np.where(inside, np.where((qx + qy) % 2 == 0, spec.dark, spec.light), val)


def render_board(spec: BoardSceneSpec) -> tuple[np.ndarray, GroundTruth]:
    """Anti-aliased checkerboard under rotation, tilt, lens distortion, occlusion and noise."""
    corners = board_corners(spec)
    m = spec.margin
    if (
        corners[:, 0].min() < m
        or corners[:, 1].min() < m
        or corners[:, 0].max() > spec.width - 1 - m
        or corners[:, 1].max() > spec.height - 1 - m
    ):
        raise SceneError("a corner falls outside the valid margin")
    hinv = np.linalg.inv(pattern_homography(spec.rotation_deg, spec.skew_deg, spec.focal))
    c = ((spec.width - 1) / 2, (spec.height - 1) / 2)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    img = np.zeros((spec.height, spec.width))
    distorted = any(spec.distortion)
    for oy in _SS:
        for ox in _SS:
            px, py = xs + ox, ys + oy
            if distorted:
                px, py = undistort((px, py), c, max(spec.width, spec.height), *spec.distortion)
            u, v = apply_homography(hinv, px - spec.board_center[0], py - spec.board_center[1])
            img += _board_value(spec, u, v)
    img /= len(_SS) ** 2
    if spec.blur_variance > 0:
        img = gaussian_blur_3x3(img, spec.blur_variance)
    if spec.invert:
        img = 1.0 - img
    occluded = np.zeros(len(corners), bool)
    if spec.occlusion_rect is not None:
        x0, y0, w, h = (int(round(v)) for v in spec.occlusion_rect)
        img[max(0, y0) : max(0, y0 + h), max(0, x0) : max(0, x0 + w)] = 0.5
        # a corner within a pixel of the occluder has lost its X appearance
        occluded = (
            (corners[:, 0] >= x0 - 1.5)
            & (corners[:, 0] <= x0 + w + 0.5)
            & (corners[:, 1] >= y0 - 1.5)
            & (corners[:, 1] <= y0 + h + 0.5)
        )
    img = add_noise(img, spec.noise_std, np.random.default_rng(spec.seed))
    mask = LabelMask.from_points(spec.height, spec.width, corners[~occluded])
    return img, GroundTruth(corners, occluded, mask, spec.rows, spec.cols)


def occlusion_for(spec: BoardSceneSpec, row0: int, col0: int, nrows: int = 2, ncols: int = 3, pad: float = 0.35):
    """Axis-aligned rectangle covering the given block of inner corners."""
    pts = board_corners(spec).reshape(spec.rows, spec.cols, 2)[row0 : row0 + nrows, col0 : col0 + ncols]
    pts = pts.reshape(-1, 2)
    p = pad * spec.square_px
    x0, y0 = np.floor(pts.min(axis=0) - p)
    x1, y1 = np.ceil(pts.max(axis=0) + p)
    return int(x0), int(y0), int(x1 - x0), int(y1 - y0)


# --- datasets -----------------------------------------------------------------


@dataclass
class BoardDistribution:
    """Sampling ranges for random training/evaluation boards."""

    width: int = 64
    height: int = 64
    rows: tuple[int, int] = (2, 4)
    cols: tuple[int, int] = (2, 4)
    square_px: tuple[float, float] = (7.0, 11.0)
    rotation_deg: tuple[float, float] = (0.0, 90.0)
    skew_deg: tuple[float, float] = (0.0, 40.0)
    noise_std: tuple[float, float] = (0.0, 15.0)
    blur_prob: float = 0.5
    invert_prob: float = 0.5
    distortion_prob: float = 0.5
    k1: tuple[float, float] = (-0.3, 0.3)
    k2: tuple[float, float] = (-0.05, 0.05)
    p: tuple[float, float] = (-0.01, 0.01)
    occlusion_prob: float = 0.0
    center_jitter: float = 4.0
    max_tries: int = 200
    fixed_distortion: tuple[float, float, float, float] | None = None  # overrides the random lens
    fixed_occlusion: tuple[float, float, float, float] | None = None  # (x, y, w, h) on every board

    def sample(self, rng: np.random.Generator) -> BoardSceneSpec:
        for _ in range(self.max_tries):
            dist = (0.0, 0.0, 0.0, 0.0)
            if rng.random() < self.distortion_prob:
                dist = (rng.uniform(*self.k1), rng.uniform(*self.k2), rng.uniform(*self.p), rng.uniform(*self.p))
            if self.fixed_distortion is not None:
                dist = self.fixed_distortion
            dark = rng.uniform(0.0, 0.35)
            spec = BoardSceneSpec(
                rows=int(rng.integers(self.rows[0], self.rows[1] + 1)),
                cols=int(rng.integers(self.cols[0], self.cols[1] + 1)),
                square_px=float(rng.uniform(*self.square_px)),
                width=self.width,
                height=self.height,
                rotation_deg=float(rng.uniform(*self.rotation_deg)),
                skew_deg=float(rng.uniform(*self.skew_deg)),
                noise_std=float(rng.uniform(*self.noise_std)),
                invert=bool(rng.random() < self.invert_prob),
                distortion=tuple(float(d) for d in dist),
                seed=int(rng.integers(0, 2**63)),
                center=(
                    (self.width - 1) / 2 + rng.uniform(-self.center_jitter, self.center_jitter),
                    (self.height - 1) / 2 + rng.uniform(-self.center_jitter, self.center_jitter),
                ),
                blur_variance=0.675 if rng.random() < self.blur_prob else 0.0,
                dark=dark,
                light=rng.uniform(max(0.6, dark + 0.35), 1.0),
                background=rng.uniform(0.0, 1.0),
            )
            if rng.random() < self.occlusion_prob and spec.rows >= 3 and spec.cols >= 3:
                r0 = int(rng.integers(0, spec.rows - 1))
                c0 = int(rng.integers(0, spec.cols - 1))
                spec = _replace(spec, occlusion_rect=occlusion_for(spec, r0, c0, 1, 1))
            if self.fixed_occlusion is not None:
                spec = _replace(spec, occlusion_rect=tuple(self.fixed_occlusion))
            try:
                corners = board_corners(spec)
            except FloatingPointError:
                continue
            m = spec.margin
            if (
                corners.min() >= m
                and corners[:, 0].max() <= spec.width - 1 - m
                and corners[:, 1].max() <= spec.height - 1 - m
            ):
                return spec
        raise SceneError("could not sample a board that fits the image")


def _replace(spec: BoardSceneSpec, **kw) -> BoardSceneSpec:
    d = asdict(spec)
    d.update(kw)
    return BoardSceneSpec(**d)


def sample_boards(count: int, dist: BoardDistribution, seed: int):
    """Yield ``(spec, image, truth)`` for ``count`` boards; item ``i`` uses ``mix_seed(seed, i)``."""
    for i in range(count):
        spec = dist.sample(np.random.default_rng(mix_seed(seed, i)))
        img, gt = render_board(spec)
        yield spec, img, gt


MANIFEST_COLUMNS = [
    "filename", "rows", "cols", "square_px", "rotation_deg", "skew_deg",
    "noise_std", "invert", "k1", "k2", "p1", "p2", "occluded",
]  # fmt: skip


def write_points_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def build_dataset(count: int, dist: BoardDistribution, seed: int, out_dir: str | Path) -> list[dict]:
    """Write ``count`` rendered boards as PGM + label CSV + manifest. Returns manifest rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, (spec, img, gt) in enumerate(sample_boards(count, dist, seed)):
        stem = f"board_{i:05d}"
        save_gray(out / f"{stem}.pgm", img)
        write_points_csv(out / f"{stem}.labels.csv", ["x", "y"], sorted(gt.mask.positives, key=lambda p: (p[1], p[0])))
        write_points_csv(
            out / f"{stem}.corners.csv",
            ["x", "y", "occluded"],
            [(f"{x:.6f}", f"{y:.6f}", int(o)) for (x, y), o in zip(gt.corners, gt.occluded)],
        )
        k1, k2, p1, p2 = spec.distortion
        manifest.append(
            {
                "filename": f"{stem}.pgm",
                "rows": spec.rows,
                "cols": spec.cols,
                "square_px": f"{spec.square_px:.6f}",
                "rotation_deg": f"{spec.rotation_deg:.6f}",
                "skew_deg": f"{spec.skew_deg:.6f}",
                "noise_std": f"{spec.noise_std:.6f}",
                "invert": int(spec.invert),
                "k1": f"{k1:.6f}",
                "k2": f"{k2:.6f}",
                "p1": f"{p1:.6f}",
                "p2": f"{p2:.6f}",
                "occluded": int(gt.occluded.sum()),
            }
        )
    if count > 0:
        with open(out / "manifest.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, MANIFEST_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(manifest)
    return manifest


def build_corner_dataset(count: int, seed: int, out_dir: str | Path, size: int = 41, **spec_kw) -> list[dict]:
    """Write single-corner renders with random rotation; labels as for boards."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        rng = np.random.default_rng(mix_seed(seed, i))
        kw = {"rotation_deg": float(rng.uniform(0, 90)), "seed": int(rng.integers(0, 2**63))}
        kw.update(spec_kw)
        spec = CornerSceneSpec(image_size=size, **kw)
        img, gt = render_corner(spec)
        stem = f"corner_{i:05d}"
        save_gray(out / f"{stem}.pgm", img)
        write_points_csv(out / f"{stem}.labels.csv", ["x", "y"], sorted(gt.mask.positives))
        rows.append(
            {
                "filename": f"{stem}.pgm", "rows": 1, "cols": 1, "square_px": "",
                "rotation_deg": f"{spec.rotation_deg:.6f}", "skew_deg": f"{spec.skew_deg:.6f}",
                "noise_std": f"{spec.noise_std:.6f}", "invert": 0,
                "k1": "0.000000", "k2": "0.000000", "p1": "0.000000", "p2": "0.000000", "occluded": 0,
            }
        )  # fmt: skip
    if count > 0:
        with open(out / "manifest.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, MANIFEST_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def read_labels(path: str | Path) -> list[tuple[int, int]]:
    with open(path, newline="") as fh:
        return [(int(r["x"]), int(r["y"])) for r in csv.DictReader(fh)]


def load_dataset(data_dir: str | Path) -> list[tuple[np.ndarray, LabelMask]]:
    """Read (image, mask) pairs listed in a dataset's manifest, in manifest order."""
    d = Path(data_dir)
    with open(d / "manifest.csv", newline="") as fh:
        names = [r["filename"] for r in csv.DictReader(fh)]
    out = []
    for name in names:
        img = load_gray(d / name)
        labels = read_labels(d / (Path(name).stem + ".labels.csv"))
        out.append((img, LabelMask(img.shape[0], img.shape[1], frozenset(labels))))
    return out
