"""Fully convolutional X-corner detector: configurations, loss, backprop, SGD."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .gridcore import ConvLayer, GridError, as_chw, correlate_batch

log = logging.getLogger(__name__)

# images live in [0, 1]; the network sees them centred on mid-gray
INPUT_OFFSET = 0.5
POS_FLOOR = 1e-6
NEG_CEIL = 1.0 - 1e-6

# (kernel_size, out_channels); every layer but the last is ReLU, the last is linear
_LAYOUTS: dict[str, list[tuple[int, int]]] = {
    "A": [(13, 16), (1, 8), (3, 1)],
    "B": [(13, 16), (1, 8), (3, 16), (1, 1)],
    "C": [(7, 16), (7, 16), (1, 8), (3, 16), (1, 1)],
    "D1": [(13, 16), (3, 32), (3, 32), (1, 1)],
    "D3": [(13, 16), (3, 32), (3, 32), (3, 1)],
    "E16": [(13, 16), (3, 32), (3, 32), (3, 32), (1, 1)],
    "E32": [(13, 32), (3, 32), (3, 32), (3, 32), (1, 1)],
    "F": [(13, 32), (3, 32), (3, 32), (3, 32), (1, 32), (1, 1)],
    "G": [(13, 32), (5, 32), (3, 32), (3, 32), (1, 32), (1, 1)],
    "H": [(13, 32), (3, 32), (3, 32), (3, 32), (3, 32), (1, 32), (1, 1)],
}
_ALIASES = {"D": "D1", "E": "E32", "D-1": "D1", "D-3": "D3", "E-16": "E16", "E-32": "E32"}
CONFIG_IDS = tuple(_LAYOUTS)


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    config_id: str
    layers: tuple[tuple[int, int, str], ...]

    @property
    def receptive_radius(self) -> int:
        return sum(k // 2 for k, _, _ in self.layers)


def network_config(config_id: str, width_scale: float = 1.0) -> NetworkConfig:
    """Layer table for a configuration. ``width_scale`` shrinks hidden widths (for gradient checks)."""
    cid = _ALIASES.get(config_id, config_id)
    if cid not in _LAYOUTS:
        raise KeyError(f"unknown network configuration {config_id!r}; known: {', '.join(CONFIG_IDS)}")
    layout = _LAYOUTS[cid]
    layers = []
    for i, (k, out) in enumerate(layout):
        last = i == len(layout) - 1
        if not last and width_scale != 1.0:
            out = max(1, int(round(out * width_scale)))
        layers.append((k, out, "linear" if last else "relu"))
    return NetworkConfig(cid, tuple(layers))


@dataclass
class DetectorModel:
    config: NetworkConfig
    layers: list[ConvLayer]

    def __post_init__(self) -> None:
        prev = 1
        for layer in self.layers:
            if layer.in_channels != prev:
                raise GridError(f"layer chain broken: expected {prev} input channels, got {layer.in_channels}")
            prev = layer.out_channels
        if prev != 1:
            raise GridError("last layer must have one output channel")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.kernels, layer.biases]
        return out

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def sq_norm(self) -> float:
        return float(sum(np.sum(p * p) for p in self.params))

    def copy(self) -> "DetectorModel":
        return DetectorModel(
            self.config,
            [ConvLayer(l.kernels.copy(), l.biases.copy(), l.activation) for l in self.layers],
        )


def build_network(config_id: str, seed: int = 0, width_scale: float = 1.0) -> DetectorModel:
    """Xavier-uniform kernels, all biases 0.1, deterministic per seed."""
    cfg = network_config(config_id, width_scale)
    rng = np.random.default_rng(seed)
    layers = []
    cin = 1
    for k, cout, act in cfg.layers:
        bound = math.sqrt(6.0 / (k * k * cin + k * k * cout))
        kernels = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        layers.append(ConvLayer(kernels, np.full(cout, 0.1), act))
        cin = cout
    return DetectorModel(cfg, layers)


def param_count(config_id: str) -> int:
    total, cin = 0, 1
    for k, cout, _ in network_config(config_id).layers:
        total += k * k * cin * cout + cout
        cin = cout
    return total


# --- labels -------------------------------------------------------------------


@dataclass(frozen=True)
class LabelMask:
    height: int
    width: int
    positives: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        for x, y in self.positives:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"positive ({x}, {y}) outside {self.width}x{self.height} image")

    @classmethod
    def from_points(cls, height: int, width: int, points: Iterable[tuple[float, float]]) -> "LabelMask":
        pos = set()
        for x, y in points:
            px, py = int(math.floor(x + 0.5)), int(math.floor(y + 0.5))
            if 0 <= px < width and 0 <= py < height:
                pos.add((px, py))
        return cls(height, width, frozenset(pos))

    @property
    def n_pos(self) -> int:
        return len(self.positives)

    @property
    def n_neg(self) -> int:
        return self.height * self.width - self.n_pos

    def to_array(self) -> np.ndarray:
        g = np.zeros((self.height, self.width), dtype=bool)
        for x, y in self.positives:
            g[y, x] = True
        return g


def clip_activation(raw, label):
    """Clip raw outputs: positives into [1e-6, 1], negatives into [0, 1 - 1e-6]."""
    raw = np.asarray(raw, dtype=np.float64)
    label = np.asarray(label, dtype=bool)
    out = np.where(label, np.clip(raw, POS_FLOOR, 1.0), np.clip(raw, 0.0, NEG_CEIL))
    return float(out) if out.ndim == 0 else out


def data_loss(raw: np.ndarray, mask: LabelMask) -> float:
    """Class-balanced focal-style data term of one image (no regularizer)."""
    raw = np.asarray(raw, dtype=np.float64).reshape(mask.height, mask.width)
    g = mask.to_array()
    a = clip_activation(raw, g)
    total = 0.0
    if mask.n_pos:
        ap = a[g]
        total += float(np.sum(-(1.0 - ap) * np.log(ap))) / mask.n_pos
    if mask.n_neg:
        an = a[~g]
        total += float(np.sum(-an * np.log1p(-an))) / mask.n_neg
    return total


def _data_loss_grad(raw: np.ndarray, g: np.ndarray, n_pos: int, n_neg: int) -> np.ndarray:
    """d(data_loss)/d(raw); zero wherever the clip is active."""
    grad = np.zeros_like(raw)
    if n_pos:
        r = raw[g]
        live = (r > POS_FLOOR) & (r < 1.0)
        a = np.where(live, r, 0.5)
        d = -(-np.log(a) + (1.0 - a) / a) / n_pos
        grad[g] = np.where(live, d, 0.0)
    if n_neg:
        r = raw[~g]
        live = (r > 0.0) & (r < NEG_CEIL)
        a = np.where(live, r, 0.5)
        d = -(np.log1p(-a) - a / (1.0 - a)) / n_neg
        grad[~g] = np.where(live, d, 0.0)
    return grad


# --- forward / backward -------------------------------------------------------


def _forward_batch(model: DetectorModel, x: np.ndarray) -> list[np.ndarray]:
    """Return activations [input, layer1, ..., output] for a (N, 1, H, W) batch."""
    acts = [x - INPUT_OFFSET]
    for layer in model.layers:
        z = correlate_batch(acts[-1], layer.kernels)
        z += layer.biases[None, :, None, None]
        if layer.activation == "relu":
            np.maximum(z, 0.0, out=z)
        acts.append(z)
    return acts


def forward(model: DetectorModel, image: np.ndarray) -> np.ndarray:
    """Raw response map (same height/width as the image, no clipping)."""
    x = as_chw(image)
    if x.shape[0] != 1:
        raise GridError("detector input must be single-channel")
    return _forward_batch(model, x[None])[-1][0, 0]


def loss(model: DetectorModel, image: np.ndarray, mask: LabelMask, lam: float = 0.01) -> float:
    raw = forward(model, image)
    if raw.shape != (mask.height, mask.width):
        raise GridError(f"mask {mask.height}x{mask.width} does not match image {raw.shape}")
    return 0.5 * lam * model.sq_norm() + data_loss(raw, mask)


def _weight_grad(x: np.ndarray, dz: np.ndarray, k: int) -> np.ndarray:
    """Kernel gradient sum_n sum_hw dz[n,o,h,w] * x_window[n,c,h,w,:,:] -> (O, C, k, k)."""
    n, c, h, w = x.shape
    o = dz.shape[1]
    if k == 1:
        return np.einsum("nohw,nchw->oc", dz, x, optimize=True)[:, :, None, None]
    r = k // 2
    padded = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    grad = np.zeros((o, c * k * k))
    rows = max(1, 24_000_000 // max(1, n * w * c * k * k))
    for y0 in range(0, h, rows):
        y1 = min(h, y0 + rows)
        win = sliding_window_view(padded[:, :, y0 : y1 + 2 * r], (k, k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * k * k)
        dzm = dz[:, :, y0:y1].transpose(0, 2, 3, 1).reshape(-1, o)
        grad += dzm.T @ cols
    return grad.reshape(o, c, k, k)


def batch_loss_and_grads(
    model: DetectorModel,
    batch: Sequence[tuple[np.ndarray, LabelMask]],
    lam: float = 0.01,
) -> tuple[float, list[np.ndarray]]:
    """Mean per-image loss over the batch and its exact gradient.

    Gradients are returned in ``model.params`` order (kernels, biases per layer).
    Images in the batch must share a size.
    """
    if not batch:
        raise ValueError("empty batch")
    x = np.stack([as_chw(img) for img, _ in batch])
    acts = _forward_batch(model, x)
    raw = acts[-1][:, 0]
    nb = len(batch)
    total = 0.0
    dout = np.empty_like(raw)
    for i, (_, mask) in enumerate(batch):
        if raw[i].shape != (mask.height, mask.width):
            raise GridError("mask size does not match image size")
        g = mask.to_array()
        total += data_loss(raw[i], mask)
        dout[i] = _data_loss_grad(raw[i], g, mask.n_pos, mask.n_neg) / nb
    value = total / nb + 0.5 * lam * model.sq_norm()

    grads: list[np.ndarray] = []
    delta = dout[:, None]
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        if layer.activation == "relu":
            delta = delta * (acts[li + 1] > 0)
        gw = _weight_grad(acts[li], delta, layer.kernel_size) + lam * layer.kernels
        gb = delta.sum(axis=(0, 2, 3)) + lam * layer.biases
        grads = [gw, gb] + grads
        if li > 0:
            flipped = layer.kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            delta = correlate_batch(delta, np.ascontiguousarray(flipped))
    return value, grads


def loss_gradients(model, batch, lam: float = 0.01) -> list[np.ndarray]:
    return batch_loss_and_grads(model, batch, lam)[1]


# --- optimisation -------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 20
    momentum: float = 0.9
    lr0: float = 0.01
    decay_rate: float = 0.01
    lambda_reg: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("momentum", "lr0", "lambda_reg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.decay_rate < 0:
            raise ValueError("decay_rate must be nonnegative")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * math.exp(-cfg.decay_rate * epoch)


def sgd_step(
    model: DetectorModel,
    grads: Sequence[np.ndarray],
    velocity: list[np.ndarray] | None,
    lr: float,
    momentum: float = 0.9,
) -> list[np.ndarray]:
    """Classical momentum update, in place on the model. Returns the new velocity."""
    params = model.params
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or len(velocity) != len(params):
        raise ValueError("gradient/velocity count does not match model")
    new_v = []
    for p, g, v in zip(params, grads, velocity):
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v = momentum * v - lr * g
        p += v
        new_v.append(v)
    return new_v


def train(
    dataset: Sequence[tuple[np.ndarray, LabelMask]],
    config_id: str,
    cfg: TrainConfig,
    model: DetectorModel | None = None,
) -> tuple[DetectorModel, list[float]]:
    """Minibatch SGD with momentum and per-epoch exponential lr decay.

    Returns the trained model and the mean batch loss of each epoch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if model is None:
        model = build_network(config_id, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    velocity = None
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            value, grads = batch_loss_and_grads(model, batch, cfg.lambda_reg)
            velocity = sgd_step(model, grads, velocity, lr, cfg.momentum)
            losses.append(value)
        history.append(float(np.mean(losses)))
        log.info("epoch %d lr %.5f loss %.5f", epoch, lr, history[-1])
    return model, history


# --- serialization ------------------------------------------------------------

MAGIC = "RCDN1"


def model_bytes(model: DetectorModel) -> bytes:
    parts = [f"{MAGIC} {model.config.config_id} {len(model.layers)}\n".encode()]
    for layer in model.layers:
        parts.append(
            f"conv {layer.kernel_size} {layer.in_channels} {layer.out_channels} {layer.activation}\n".encode()
        )
        parts.append(layer.kernels.astype("<f4").tobytes())
        parts.append(layer.biases.astype("<f4").tobytes())
    return b"".join(parts)


def save_model(path: str | Path, model: DetectorModel) -> None:
    Path(path).write_bytes(model_bytes(model))


def _line(buf: bytes, pos: int) -> tuple[list[str], int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ModelFormatError("truncated header line")
    try:
        return buf[pos:end].decode("ascii").split(), end + 1
    except UnicodeDecodeError as exc:
        raise ModelFormatError("non-ASCII header") from exc


def load_model(path: str | Path) -> DetectorModel:
    buf = Path(path).read_bytes()
    head, pos = _line(buf, 0)
    if len(head) != 3 or head[0] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic")
    try:
        config_id, n_layers = head[1], int(head[2])
        cfg = network_config(config_id)
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path}: bad header {head}") from exc
    layers = []
    for _ in range(n_layers):
        fields, pos = _line(buf, pos)
        if len(fields) != 5 or fields[0] != "conv":
            raise ModelFormatError(f"{path}: bad layer header {fields}")
        k, cin, cout, act = int(fields[1]), int(fields[2]), int(fields[3]), fields[4]
        nk, nb = cout * cin * k * k, cout
        end = pos + 4 * (nk + nb)
        if end > len(buf):
            raise ModelFormatError(f"{path}: truncated payload")
        vals = np.frombuffer(buf[pos:end], dtype="<f4").astype(np.float64)
        layers.append(ConvLayer(vals[:nk].reshape(cout, cin, k, k), vals[nk:].copy(), act))
        pos = end
    if pos != len(buf):
        raise ModelFormatError(f"{path}: trailing bytes")
    try:
        model = DetectorModel(cfg, layers)
    except GridError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    if len(layers) != len(cfg.layers) or any(
        (l.kernel_size, l.activation) != (k, a) for l, (k, _, a) in zip(layers, cfg.layers)
    ):
        # reduced-width models keep the config id; only kernel sizes must agree
        raise ModelFormatError(f"{path}: layers do not match configuration {config_id}")
    return model
