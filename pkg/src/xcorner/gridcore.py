"""Dense grids, convolution primitives, blur, and grayscale file I/O.

Grids are plain ``numpy`` float64 arrays. Multi-channel grids are laid out as
``(channels, height, width)``; single-channel images are 2-D ``(height, width)``.
Pixel coordinates follow ``x = column``, ``y = row`` with the origin at the
center of the top-left pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")

# rows of im2col matrix processed per chunk; bounds peak memory on big images
_CHUNK_ELEMS = 24_000_000


class GridError(ValueError):
    """Raised on shape, parameter, or file-format problems."""


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out, in, k, k)
    biases: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self) -> None:
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.kernels.ndim != 4 or self.kernels.shape[2] != self.kernels.shape[3]:
            raise GridError(f"kernels must be (out, in, k, k), got {self.kernels.shape}")
        if self.kernel_size % 2 != 1:
            raise GridError(f"kernel size must be odd, got {self.kernel_size}")
        if self.biases.shape != (self.out_channels,):
            raise GridError(f"biases must have length {self.out_channels}, got {self.biases.shape}")
        if self.activation not in ACTIVATIONS:
            raise GridError(f"unknown activation {self.activation!r}")

    @property
    def kernel_size(self) -> int:
        return int(self.kernels.shape[2])

    @property
    def in_channels(self) -> int:
        return int(self.kernels.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.kernels.shape[0])

    @property
    def n_params(self) -> int:
        return self.kernels.size + self.biases.size


def as_chw(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        return grid[None]
    if grid.ndim != 3:
        raise GridError(f"expected a 2-D or 3-D grid, got shape {grid.shape}")
    return grid


def correlate_batch(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' cross-correlation of a batch, no bias.

    ``x`` is ``(N, C, H, W)`` and ``kernels`` ``(O, C, k, k)``; returns
    ``(N, O, H, W)``. Implemented as im2col + matrix product, chunked over
    output rows.
    """
    n, c, h, w = x.shape
    o, c2, k, _ = kernels.shape
    if c != c2:
        raise GridError(f"channel mismatch: input has {c}, kernels expect {c2}")
    r = k // 2
    if k == 1:
        return np.einsum("nchw,oc->nohw", x, kernels[:, :, 0, 0], optimize=True)
    padded = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    wmat = kernels.reshape(o, c * k * k).T
    out = np.empty((n, o, h, w))
    rows_per_chunk = max(1, _CHUNK_ELEMS // max(1, n * w * c * k * k))
    for y0 in range(0, h, rows_per_chunk):
        y1 = min(h, y0 + rows_per_chunk)
        win = sliding_window_view(padded[:, :, y0 : y1 + 2 * r], (k, k), axis=(2, 3))
        # win: (n, c, y1-y0, w, k, k) -> (n, rows, w, c, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * k * k)
        res = cols @ wmat
        out[:, :, y0:y1] = res.reshape(n, y1 - y0, w, o).transpose(0, 3, 1, 2)
    return out


def conv2d(grid: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Apply one stride-1, zero-padded convolution layer to a ``(C, H, W)`` grid."""
    x = as_chw(grid)
    if x.shape[0] != layer.in_channels:
        raise GridError(f"channel mismatch: grid has {x.shape[0]}, layer expects {layer.in_channels}")
    out = correlate_batch(x[None], layer.kernels)[0]
    out += layer.biases[:, None, None]
    if layer.activation == "relu":
        np.maximum(out, 0.0, out=out)
    return out


def relu(grid: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(grid, dtype=np.float64), 0.0)


def gaussian_kernel_3x3(variance: float) -> np.ndarray:
    if not variance > 0:
        raise GridError(f"variance must be positive, got {variance}")
    d = np.arange(-1, 2)
    dx, dy = np.meshgrid(d, d)
    kern = np.exp(-(dx**2 + dy**2) / (2.0 * variance))
    return kern / kern.sum()


def gaussian_blur_3x3(image: np.ndarray, variance: float = 0.675) -> np.ndarray:
    """Blur a single-channel image with a normalized 3x3 Gaussian, edges replicated."""
    kern = gaussian_kernel_3x3(variance)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise GridError("gaussian_blur_3x3 expects a single-channel image")
        return gaussian_blur_3x3(img[0], variance)[None]
    padded = np.pad(img, 1, mode="edge")
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(3):
        for j in range(3):
            out += kern[i, j] * padded[i : i + h, j : j + w]
    return out


# --- file I/O ---------------------------------------------------------------


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise GridError("malformed PGM header")
    return buf[start:pos], pos


def load_gray(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) as a float image in [0, 1]."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise GridError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        width, pos = _read_token(buf, pos)
        height, pos = _read_token(buf, pos)
        maxval, pos = _read_token(buf, pos)
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise GridError(f"{path}: malformed PGM header") from exc
    if mv != 255 or w <= 0 or h <= 0:
        raise GridError(f"{path}: only 8-bit PGM with positive size is supported")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos : pos + w * h]
    if len(payload) != w * h:
        raise GridError(f"{path}: truncated payload ({len(payload)} of {w * h} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def to_bytes(image: np.ndarray) -> np.ndarray:
    # clamp, scale, round half-up
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_gray(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise GridError(f"save_gray needs one channel, got {img.shape[0]}")
        img = img[0]
    if img.ndim != 2:
        raise GridError(f"save_gray needs a 2-D image, got shape {img.shape}")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + to_bytes(img).tobytes())


def save_grid(path: str | Path, grid: np.ndarray) -> None:
    """Dump a grid as ``GRID c h w`` followed by little-endian float32 values."""
    g = as_chw(grid)
    c, h, w = g.shape
    Path(path).write_bytes(f"GRID {c} {h} {w}\n".encode() + g.astype("<f4").tobytes())


def load_grid(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    nl = buf.find(b"\n")
    parts = buf[:nl].split() if nl >= 0 else []
    if len(parts) != 4 or parts[0] != b"GRID":
        raise GridError(f"{path}: bad grid header")
    c, h, w = (int(p) for p in parts[1:])
    payload = buf[nl + 1 :]
    if len(payload) != 4 * c * h * w:
        raise GridError(f"{path}: truncated grid payload")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float64)
