"""Reference 1-D convolutional classifier in numpy, with explicit backpropagation."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .base import N_CLASSES, Classifier, softmax

log = logging.getLogger(__name__)

WIDE_CHANNELS = (64, 64, 128, 128, 256, 256)
CHECKPOINT_MAGIC = b"CSHAP-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvNetConfig:
    window_size: int = 100
    channel_sizes: tuple = (8, 8, 16)
    kernel_size: int = 5
    fc_size: int = 64
    in_channels: int = 2
    n_classes: int = N_CLASSES
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-2
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channel_sizes", tuple(int(c) for c in self.channel_sizes))
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd")
        if not self.channel_sizes or min(self.channel_sizes) < 1:
            raise ValueError("need at least one conv layer with positive channel size")
        if self.fc_size < 1 or self.window_size < 1:
            raise ValueError("fc_size and window_size must be positive")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("invalid training settings")

    @classmethod
    def wide(cls, window_size: int = 100, **kw) -> "ConvNetConfig":
        """Six conv layers (64 to 256 channels) and a 4096-unit dense layer."""
        return cls(window_size=window_size, channel_sizes=WIDE_CHANNELS, fc_size=4096, **kw)

    def param_shapes(self) -> dict:
        shapes = {}
        cin = self.in_channels
        for i, cout in enumerate(self.channel_sizes):
            shapes[f"conv{i}.w"] = (self.kernel_size * cin, cout)
            shapes[f"conv{i}.b"] = (cout,)
            cin = cout
        shapes["fc1.w"] = (self.window_size * cin, self.fc_size)
        shapes["fc1.b"] = (self.fc_size,)
        shapes["fc2.w"] = (self.fc_size, self.n_classes)
        shapes["fc2.b"] = (self.n_classes,)
        return shapes

    def n_parameters(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_sizes"] = list(self.channel_sizes)
        return d


def init_params(cfg: ConvNetConfig, rng: np.random.Generator) -> dict:
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
    return params


def _im2col(h: np.ndarray, k: int) -> np.ndarray:
    n, w, c = h.shape
    pad = k // 2
    hp = np.pad(h, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(hp, k, axis=1)  # (n, w, c, k)
    return cols.transpose(0, 1, 3, 2).reshape(n, w, k * c)


def _col2im(dcols: np.ndarray, k: int, c: int) -> np.ndarray:
    n, w, _ = dcols.shape
    pad = k // 2
    d = dcols.reshape(n, w, k, c)
    dhp = np.zeros((n, w + 2 * pad, c))
    for j in range(k):
        dhp[:, j:j + w, :] += d[:, :, j, :]
    return dhp[:, pad:pad + w, :]


def forward(params: dict, cfg: ConvNetConfig, x: np.ndarray, keep_cache: bool = False):
    """Logits for standardized inputs ``x`` of shape (n, C, W)."""
    h = np.ascontiguousarray(x.transpose(0, 2, 1))  # (n, W, C)
    cache = []
    for i in range(len(cfg.channel_sizes)):
        cols = _im2col(h, cfg.kernel_size)
        z = cols @ params[f"conv{i}.w"] + params[f"conv{i}.b"]
        h_next = np.maximum(z, 0.0)
        if keep_cache:
            cache.append((cols, z, h.shape[-1]))
        h = h_next
    flat = h.reshape(len(h), -1)
    z1 = flat @ params["fc1.w"] + params["fc1.b"]
    a1 = np.maximum(z1, 0.0)
    logits = a1 @ params["fc2.w"] + params["fc2.b"]
    if keep_cache:
        return logits, (cache, h.shape, flat, z1, a1)
    return logits


def loss_and_grads(params: dict, cfg: ConvNetConfig, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient with respect to every parameter."""
    n = len(x)
    logits, (cache, hshape, flat, z1, a1) = forward(params, cfg, x, keep_cache=True)
    p = softmax(logits)
    loss = float(-np.mean(np.log(np.clip(p[np.arange(n), y], 1e-300, None))))
    g = {}
    dlogits = p.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    g["fc2.w"] = a1.T @ dlogits
    g["fc2.b"] = dlogits.sum(0)
    dz1 = (dlogits @ params["fc2.w"].T) * (z1 > 0)
    g["fc1.w"] = flat.T @ dz1
    g["fc1.b"] = dz1.sum(0)
    dh = (dz1 @ params["fc1.w"].T).reshape(hshape)
    for i in reversed(range(len(cfg.channel_sizes))):
        cols, z, cin = cache[i]
        dz = dh * (z > 0)
        g[f"conv{i}.w"] = cols.reshape(-1, cols.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        g[f"conv{i}.b"] = dz.sum((0, 1))
        if i > 0:
            dh = _col2im(dz @ params[f"conv{i}.w"].T, cfg.kernel_size, cin)
    return loss, g


class TrainingDiverged(RuntimeError):
    pass


class ConvNet(Classifier):
    """Trained network with per-channel input standardization baked in."""

    def __init__(self, cfg: ConvNetConfig, params: dict, mean=None, std=None):
        super().__init__()
        shapes = cfg.param_shapes()
        for name, shape in shapes.items():
            if name not in params or tuple(params[name].shape) != tuple(shape):
                raise ValueError(f"parameter {name} missing or with wrong shape")
        self.cfg = cfg
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in shapes}
        self.mean = np.zeros(cfg.in_channels) if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = np.ones(cfg.in_channels) if std is None else np.asarray(std, dtype=np.float64)
        self.window_size = cfg.window_size
        self.loss_curve: list[float] = []

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[None, :, None]) / self.std[None, :, None]

    def logits(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        xs = self.standardize(np.asarray(x, dtype=np.float64))
        return np.concatenate(
            [forward(self.params, self.cfg, xs[i:i + chunk]) for i in range(0, len(xs), chunk)]
        ) if len(xs) else np.zeros((0, self.cfg.n_classes))

    def _predict_batch(self, batch):
        return softmax(self.logits(batch))


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    return mean, np.where(std > 0, std, 1.0)


def train_convnet(x: np.ndarray, y: np.ndarray, cfg: ConvNetConfig, fixed_batch: bool = False) -> ConvNet:
    """Mini-batch SGD with momentum on mean cross-entropy.

    ``x`` has shape (n, 2, W). The returned model carries ``loss_curve`` (mean
    training loss per epoch). With ``fixed_batch`` every step uses the first
    ``batch_size`` examples, which makes descent monotone for small rates.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.window_size:
        raise ValueError(f"training data must have shape (n, {cfg.in_channels}, {cfg.window_size}), got {x.shape}")
    present = np.bincount(y, minlength=cfg.n_classes)
    if np.any(present[: cfg.n_classes] == 0):
        raise ValueError(f"every class needs at least one training instance, counts={present.tolist()}")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, rng)
    model = ConvNet(cfg, params)
    model.mean, model.std = channel_stats(x)
    xs = model.standardize(x)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(xs)
    for epoch in range(cfg.epochs):
        order = np.arange(min(n, cfg.batch_size)) if fixed_batch else rng.permutation(n)
        step = len(order) if fixed_batch else cfg.batch_size
        losses = []
        for b0 in range(0, len(order), step):
            idx = order[b0:b0 + step]
            loss, grads = loss_and_grads(params, cfg, xs[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b0 // step} "
                    f"(lr={cfg.learning_rate}, momentum={cfg.momentum}); last losses {losses[-3:]}"
                )
            for k in params:
                velocity[k] *= cfg.momentum
                velocity[k] -= cfg.learning_rate * grads[k]
                params[k] += velocity[k]
            losses.append(loss * len(idx))
        model.loss_curve.append(float(sum(losses) / len(order)))
        log.debug("epoch %d loss %.5f", epoch, model.loss_curve[-1])
    return model


def save_checkpoint(model: ConvNet, path) -> Path:
    """Magic, version, JSON header length, JSON header, then little-endian float64 data."""
    header = {
        "config": model.cfg.to_dict(),
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
        "loss_curve": model.loss_curve,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> ConvNet:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(raw[off:off + hlen])
    off += hlen
    cfg_d = header["config"]
    cfg_d["channel_sizes"] = tuple(cfg_d["channel_sizes"])
    cfg = ConvNetConfig(**cfg_d)
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    model = ConvNet(cfg, params, header["mean"], header["std"])
    model.loss_curve = list(header["loss_curve"])
    return model
