"""Small convolutional classifier trained with hand-written backprop.

Architecture: three blocks of (3x3 conv, stride 1, pad 1) -> ReLU -> 2x2 max
pool with 8, 16, 32 output channels, global average pooling, and a linear
layer to two logits. Public batches are ``(N, 3, S, S)`` float arrays; the
layers run channels-last internally.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHANNELS = (8, 16, 32)
N_CLASSES = 2
PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "fc.w", "fc.b")


@dataclass
class SmallCNN:
    params: dict[str, np.ndarray]

    def copy(self) -> "SmallCNN":
        return SmallCNN({k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class SGDConfig:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class CosineSchedule:
    eta0: float
    total_epochs: int = 50
    eta_min: float = 0.0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 <= self.eta_min <= self.eta0:
            raise ValueError("need 0 <= eta_min <= eta0")


def cosine_lr(sched: CosineSchedule, epoch: float) -> float:
    if not 0 <= epoch <= sched.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    return sched.eta_min + 0.5 * (sched.eta0 - sched.eta_min) * (1 + math.cos(math.pi * epoch / sched.total_epochs))


def param_shapes(in_channels: int = 3) -> dict[str, tuple[int, ...]]:
    shapes, c_in = {}, in_channels
    for i, c_out in enumerate(CHANNELS, start=1):
        shapes[f"conv{i}.w"] = (c_out, c_in, 3, 3)
        shapes[f"conv{i}.b"] = (c_out,)
        c_in = c_out
    shapes["fc.w"] = (N_CLASSES, c_in)
    shapes["fc.b"] = (N_CLASSES,)
    return shapes


def init_params(seed: int) -> SmallCNN:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    rng = np.random.default_rng(int(seed) % 2**64)
    params = {}
    for name, shape in param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6 / int(np.prod(shape[1:])))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return SmallCNN(params)


def images_to_batch(images, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Stack (S, S, 3) uint8 images into an (N, 3, S, S) float64 batch.

    Pixels map to [0, 1] and are then standardized as ``(x - mean) / std``.
    """
    arr = np.stack(images).astype(np.float64) / 255.0
    if mean or std != 1.0:
        arr = (arr - mean) / std
    return arr.transpose(0, 3, 1, 2)


# -- layers (channels-last) ---------------------------------------------------

def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    f = w.shape[0]
    xp = np.zeros((n, h + 2, wd + 2, c))
    xp[:, 1:-1, 1:-1] = x
    # rows ordered (n, y, x); columns ordered (c, ky, kx) to match w.reshape(f, -1)
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(f, -1).T
    out += b
    return out.reshape(n, h, wd, f), cols


def _conv_backward(dout, cols, w, in_shape, need_dx):
    n, h, wd, c = in_shape
    f = w.shape[0]
    d2 = dout.reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.transpose(0, 2, 3, 1).reshape(f, -1)).reshape(n, h, wd, 3, 3, c)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd] += dcols[:, :, :, i, j]
    return dxp[:, 1:-1, 1:-1], dw, db


def _pool_forward(z):
    n, h, w, c = z.shape
    h2, w2 = h // 2, w // 2
    q = (z[:, 0:2 * h2:2, 0:2 * w2:2], z[:, 0:2 * h2:2, 1:2 * w2:2],
         z[:, 1:2 * h2:2, 0:2 * w2:2], z[:, 1:2 * h2:2, 1:2 * w2:2])
    m = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    # route the gradient to the first maximum of each window only
    route = [q[0] == m]
    taken = route[0].copy()
    for part in q[1:3]:
        hit = (part == m) & ~taken
        taken |= hit
        route.append(hit)
    route.append(~taken)
    return m, route


def _pool_backward(dout, route, in_shape):
    n, h, w, c = in_shape
    h2, w2 = h // 2, w // 2
    g = np.zeros(in_shape)
    g[:, 0:2 * h2:2, 0:2 * w2:2] = dout * route[0]
    g[:, 0:2 * h2:2, 1:2 * w2:2] = dout * route[1]
    g[:, 1:2 * h2:2, 0:2 * w2:2] = dout * route[2]
    g[:, 1:2 * h2:2, 1:2 * w2:2] = dout * route[3]
    return g


def _check_batch(batch):
    if not isinstance(batch, np.ndarray) or batch.ndim != 4 or batch.shape[1] != 3:
        raise ValueError(f"expected (N, 3, S, S) batch, got {getattr(batch, 'shape', None)}")
    if batch.shape[2] != batch.shape[3] or batch.shape[2] < 8:
        raise ValueError(f"expected square inputs with side >= 8, got {batch.shape[2:]}")


def _forward(net: SmallCNN, batch):
    _check_batch(batch)
    p = net.params
    h = np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=np.float64)
    caches = []
    for i in (1, 2, 3):
        z, cols = _conv_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
        # max-pool before ReLU: the two commute and pooling first is cheaper
        m, arg = _pool_forward(z)
        caches.append((h.shape, cols, z.shape, arg, m))
        h = np.maximum(m, 0)
    pooled = h.mean(axis=(1, 2))
    logits = pooled @ p["fc.w"].T + p["fc.b"]
    return logits, (caches, h.shape, pooled)


def forward(net: SmallCNN, batch: np.ndarray) -> np.ndarray:
    """Logits of shape (N, 2)."""
    return _forward(net, batch)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def backward(net: SmallCNN, batch: np.ndarray, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its exact gradient for every parameter."""
    labels = np.asarray(labels)
    logits, (caches, top_shape, pooled) = _forward(net, batch)
    if labels.shape != (len(logits),):
        raise ValueError(f"{len(logits)} samples but labels have shape {labels.shape}")
    loss = cross_entropy(logits, labels)
    n = len(labels)
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    p = net.params
    grads = {"fc.w": dlogits.T @ pooled, "fc.b": dlogits.sum(axis=0)}
    _, hh, ww, _ = top_shape
    d = np.broadcast_to((dlogits @ p["fc.w"])[:, None, None, :] / (hh * ww), top_shape)
    for i in (3, 2, 1):
        in_shape, cols, z_shape, arg, m = caches[i - 1]
        d = d * (m > 0)
        d = _pool_backward(d, arg, z_shape)
        d, dw, db = _conv_backward(d, cols, p[f"conv{i}.w"], in_shape, need_dx=i > 1)
        grads[f"conv{i}.w"] = dw
        grads[f"conv{i}.b"] = db
    return loss, grads


def sgd_step(params: dict, grads: dict, velocity: dict | None, cfg: SGDConfig, lr: float):
    """One momentum-SGD step with weight decay folded into the gradient.

    ``v <- m v + g + wd theta`` and ``theta <- theta - lr v``. Returns new
    ``(params, velocity)`` dicts; ``velocity=None`` starts from zero.
    """
    new_params, new_vel = {}, {}
    for name, theta in params.items():
        g = grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        v = g if velocity is None else cfg.momentum * velocity[name] + g
        new_vel[name] = v
        new_params[name] = theta - lr * v
    return new_params, new_vel


def predict(net: SmallCNN, batch: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = [forward(net, batch[i:i + chunk]).argmax(axis=1) for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.intp)


# -- checkpoints ---------------------------------------------------------------

_MAGIC = b"FIMCBCK1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: SmallCNN, cfg: SGDConfig, epoch: int) -> None:
    """Binary layout: magic, u32 header length, JSON header, float64 LE payload, sha256."""
    names = list(PARAM_NAMES)
    header = json.dumps({"version": 1, "sgd": asdict(cfg), "epoch": epoch,
                         "params": [[k, list(net.params[k].shape)] for k in names]},
                        sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes() for k in names)
    body = _MAGIC + struct.pack("<I", len(header)) + header + payload
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_checkpoint(path):
    """Return ``(net, sgd_config, epoch)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    body, digest = blob[:-32], blob[-32:]
    if len(blob) < 44 or not body.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<I", body[8:12])
    header = json.loads(body[12:12 + hlen])
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    offset, params = 12 + hlen, {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    return SmallCNN(params), SGDConfig(**header["sgd"]), header["epoch"]
