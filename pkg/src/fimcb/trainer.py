"""Single-run training with early stopping, and the SGD hyperparameter grid."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import model as M
from .dataset import Manifest, ParticleRecord, Split, Stress
from .imageops import (ColorMode, convert_color_mode, make_rng, pad_to_square, random_flips,
                       random_resized_crop, read_png, resize_largest_edge)

log = logging.getLogger(__name__)

DEFAULT_LRS = (1.0, 0.1, 0.01, 0.001)
DEFAULT_WEIGHT_DECAYS = (0.0, 1e-5)
DEFAULT_MOMENTA = (0.0, 0.1, 0.05)

LABELS = (Stress.HEAT, Stress.MECHANICAL)  # class index order


@dataclass(frozen=True)
class TrainConfig:
    color_mode: ColorMode = ColorMode("rgb")
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    sgd: M.SGDConfig = M.SGDConfig(lr=0.01)
    schedule_epochs: int | None = None  # cosine period, defaults to max_epochs
    eta_min: float = 0.0
    input_side: int = 224
    augment_crop: bool = True
    augment_flips: bool = True
    crop_scale: tuple[float, float] = (0.5, 1.0)
    crop_aspect: tuple[float, float] = (3 / 4, 4 / 3)
    standardize: bool = True  # scale inputs by the training set's pixel mean / std
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.input_side < 8:
            raise ValueError("input_side must be >= 8")

    @property
    def schedule(self) -> M.CosineSchedule:
        return M.CosineSchedule(self.sgd.lr, self.schedule_epochs or self.max_epochs, self.eta_min)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["color_mode"] = str(self.color_mode)
        d["crop_scale"], d["crop_aspect"] = list(self.crop_scale), list(self.crop_aspect)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["color_mode"] = ColorMode.parse(d["color_mode"])
        d["sgd"] = M.SGDConfig(**d["sgd"])
        d["crop_scale"], d["crop_aspect"] = tuple(d["crop_scale"]), tuple(d["crop_aspect"])
        return cls(**d)


@dataclass
class RunResult:
    config: TrainConfig
    history: list[dict] = field(default_factory=list)  # epoch, train_loss, val_accuracy, lr
    best_val_accuracy: float = float("nan")
    best_epoch: int = 0
    stopped_early: bool = False
    checkpoint: str | None = None
    predictions: list[list[str]] = field(default_factory=list)  # [record id, predicted stress]
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        if math.isnan(self.best_val_accuracy):
            d["best_val_accuracy"] = None  # keep results.json strict JSON
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        d = dict(d)
        d["config"] = TrainConfig.from_dict(d["config"])
        if d.get("best_val_accuracy") is None:
            d["best_val_accuracy"] = float("nan")
        return cls(**d)


@dataclass
class GridSpec:
    lrs: tuple[float, ...] = DEFAULT_LRS
    weight_decays: tuple[float, ...] = DEFAULT_WEIGHT_DECAYS
    momenta: tuple[float, ...] = DEFAULT_MOMENTA
    base: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not (self.lrs and self.weight_decays and self.momenta):
            raise ValueError("grid sets must be nonempty")

    def configs(self) -> list[TrainConfig]:
        out = []
        for lr, wd, mom in itertools.product(self.lrs, self.weight_decays, self.momenta):
            sgd = M.SGDConfig(lr=lr, momentum=mom, weight_decay=wd)
            out.append(replace(self.base, sgd=sgd, seed=run_seed(self.base.seed, sgd)))
        return out


@dataclass
class GridResult:
    runs: list[RunResult]
    best_index: int

    @property
    def best(self) -> RunResult:
        return self.runs[self.best_index]

    def to_dict(self) -> dict:
        return {"best_index": self.best_index, "runs": [r.to_dict() for r in self.runs]}

    @classmethod
    def from_dict(cls, d: dict) -> "GridResult":
        return cls([RunResult.from_dict(r) for r in d["runs"]], d["best_index"])


def run_seed(base_seed: int, sgd: M.SGDConfig) -> int:
    """base seed XOR a stable 64-bit hash of the optimizer settings."""
    key = json.dumps([sgd.lr, sgd.weight_decay, sgd.momentum]).encode()
    return (int(base_seed) ^ int.from_bytes(hashlib.sha256(key).digest()[:8], "little")) % 2**64


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs bring no strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, score: float) -> bool:
        """Record one epoch's score; return True when training should stop."""
        self.epoch += 1
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, self.epoch, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# -- data -----------------------------------------------------------------------

def load_images(records: list[ParticleRecord], data_root) -> list[np.ndarray]:
    root = Path(data_root)
    return [read_png(root / r.image_path) for r in records]


def eval_view(img: np.ndarray, side: int) -> np.ndarray:
    """Deterministic validation input: resize the largest edge to ``side`` and center."""
    if img.shape[:2] == (side, side):
        return img
    return pad_to_square(resize_largest_edge(img, side), side)


def train_view(img: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    img = convert_color_mode(img, cfg.color_mode, rng)
    if cfg.augment_crop:
        img = random_resized_crop(img, rng, cfg.input_side, cfg.crop_scale, cfg.crop_aspect)
    else:
        img = eval_view(img, cfg.input_side)
    if cfg.augment_flips:
        img = random_flips(img, rng)
    return img


def pixel_stats(images) -> tuple[float, float]:
    """Mean and std of all training pixels in [0, 1], pooled over channels."""
    total = count = sq = 0.0
    for img in images:
        x = img.astype(np.float64) / 255.0
        total += x.sum()
        sq += np.square(x).sum()
        count += x.size
    mean = total / count
    return mean, max(float(np.sqrt(max(sq / count - mean * mean, 0.0))), 1e-3)


def val_batch(images, cfg: TrainConfig, norm=(0.0, 1.0)) -> np.ndarray:
    # mixed-mode models are validated on plain RGB input
    mode = ColorMode("rgb") if cfg.color_mode.name == "mixed" else cfg.color_mode
    views = [eval_view(convert_color_mode(img, mode), cfg.input_side) for img in images]
    return M.images_to_batch(views, *norm)


def label_of(record: ParticleRecord) -> int:
    return LABELS.index(record.stress)


# -- training -------------------------------------------------------------------

def train_one(cfg: TrainConfig, manifest: Manifest, data_root, *, checkpoint_path=None,
              val_scorer: Callable[[M.SmallCNN, int], float] | None = None) -> RunResult:
    """Train one configuration and keep the parameters of its best epoch.

    ``val_scorer(net, epoch)`` replaces the validation accuracy when given; it
    exists so tests can inject accuracy sequences.
    """
    train_recs = manifest.split(Split.TRAIN)
    val_recs = manifest.split(Split.VAL)
    if not train_recs or not val_recs:
        raise ValueError(f"need train and val records, got {len(train_recs)} / {len(val_recs)}")
    train_imgs = load_images(train_recs, data_root)
    train_y = np.array([label_of(r) for r in train_recs])
    norm = pixel_stats(train_imgs) if cfg.standardize else (0.0, 1.0)
    val_x = val_batch(load_images(val_recs, data_root), cfg, norm)
    val_y = np.array([label_of(r) for r in val_recs])

    rng = make_rng(cfg.seed)
    net = M.init_params(int(rng.integers(2**63)))
    velocity = None
    sched = cfg.schedule
    stopper = EarlyStopping(cfg.patience)
    result = RunResult(config=cfg)
    best_net, best_pred = net.copy(), None

    for epoch in range(1, cfg.max_epochs + 1):
        lr = M.cosine_lr(sched, min(epoch - 1, sched.total_epochs))
        order = rng.permutation(len(train_imgs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = M.images_to_batch([train_view(train_imgs[i], cfg, rng) for i in idx], *norm)
            loss, grads = M.backward(net, batch, train_y[idx])
            net.params, velocity = M.sgd_step(net.params, grads, velocity, cfg.sgd, lr)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(order))
        if val_scorer is None:
            pred = M.predict(net, val_x)
            acc = float(np.mean(pred == val_y))
        else:
            pred, acc = None, float(val_scorer(net, epoch))
        finite = math.isfinite(train_loss)
        result.history.append({"epoch": epoch, "train_loss": train_loss if finite else None,
                               "val_accuracy": acc, "lr": lr})
        log.info("epoch=%d lr=%.6g loss=%.6f val_acc=%.4f", epoch, lr, train_loss, acc)
        stop = stopper.update(acc)
        if stopper.best_epoch == epoch:
            best_net, best_pred = net.copy(), pred
        if stop and epoch < cfg.max_epochs:
            result.stopped_early = True
            break
        if not finite:
            # diverged: the parameters are NaN from here on
            result.stopped_early = epoch < cfg.max_epochs
            break

    result.best_val_accuracy = stopper.best
    result.best_epoch = stopper.best_epoch
    if best_pred is not None:
        result.predictions = [[r.id, LABELS[int(p)].value] for r, p in zip(val_recs, best_pred)]
    if checkpoint_path is not None:
        Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
        M.save_checkpoint(checkpoint_path, best_net, cfg.sgd, stopper.best_epoch)
        result.checkpoint = str(checkpoint_path)
    return result


def _ckpt_name(cfg: TrainConfig) -> str:
    s = cfg.sgd
    return f"{cfg.color_mode}_lr{s.lr:g}_wd{s.weight_decay:g}_m{s.momentum:g}.ckpt".replace(":", "-")


def _run_safe(runner, cfg, manifest, data_root, ckpt_dir):
    ckpt = None if ckpt_dir is None else Path(ckpt_dir) / _ckpt_name(cfg)
    try:
        res = runner(cfg, manifest, data_root, checkpoint_path=ckpt)
        if res.checkpoint is not None and ckpt_dir is not None:
            res.checkpoint = Path(res.checkpoint).name
        return res
    except Exception as exc:  # one bad run must not sink the grid
        log.error("run lr=%g wd=%g m=%g failed: %s", cfg.sgd.lr, cfg.sgd.weight_decay, cfg.sgd.momentum, exc)
        return RunResult(config=cfg, error=f"{type(exc).__name__}: {exc}")


def select_best(runs: list[RunResult]) -> int:
    """Highest best_val_accuracy; ties go to lowest lr, then weight decay, then momentum."""
    ok = [i for i, r in enumerate(runs) if r.error is None and not math.isnan(r.best_val_accuracy)]
    if not ok:
        raise RuntimeError("every run in the grid failed")
    return min(ok, key=lambda i: (-runs[i].best_val_accuracy, runs[i].config.sgd.lr,
                                  runs[i].config.sgd.weight_decay, runs[i].config.sgd.momentum))


def grid_search(spec: GridSpec, manifest: Manifest, data_root, parallelism: int = 1,
                checkpoint_dir=None, runner=train_one) -> GridResult:
    configs = spec.configs()
    if parallelism > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_run_safe, runner, c, manifest, data_root, checkpoint_dir) for c in configs]
            runs = [f.result() for f in futures]
    else:
        runs = [_run_safe(runner, c, manifest, data_root, checkpoint_dir) for c in configs]
    return GridResult(runs, select_best(runs))


def run_color_ablation(modes: list[ColorMode], spec: GridSpec, manifest: Manifest, data_root,
                       parallelism: int = 1, checkpoint_dir=None, runner=train_one) -> dict[str, GridResult]:
    """One grid per color mode over the same data and run seeds."""
    out = {}
    for mode in modes:
        mode_spec = replace(spec, base=replace(spec.base, color_mode=mode))
        out[str(mode)] = grid_search(mode_spec, manifest, data_root, parallelism, checkpoint_dir, runner)
    return out


def results_to_json(results: dict[str, GridResult], extra: dict | None = None) -> str:
    doc = dict(extra or {})
    doc["modes"] = {mode: g.to_dict() for mode, g in results.items()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def results_from_json(text: str) -> dict[str, GridResult]:
    doc = json.loads(text)
    return {mode: GridResult.from_dict(g) for mode, g in doc["modes"].items()}
