"""Color conversion, resizing, padding and augmentation on 8-bit RGB arrays.

Images are plain numpy arrays: RGB is ``(H, W, 3) uint8``, gray is
``(H, W) uint8``. Every operator returns a new array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

LUMA_WEIGHTS = (299, 587, 114)  # per mille, ITU-R BT.601

SINGLE_MODES = ("rgb", "red", "green", "blue")
MODE_NAMES = ("rgb", "red", "green", "blue", "grayscale", "mixed")
_CHANNEL_INDEX = {"red": 0, "green": 1, "blue": 2}


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic stream for a 64-bit seed."""
    return np.random.default_rng(int(seed) % 2**64)


def check_rgb(img: np.ndarray) -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {getattr(img, 'shape', type(img))}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image has no pixels")
    return img


@dataclass(frozen=True)
class ColorMode:
    """Input representation fed to the classifier.

    ``probs`` is only used by ``mixed`` and gives the sampling weights over
    (rgb, red, green, blue).
    """

    name: str
    probs: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.name not in MODE_NAMES:
            raise ValueError(f"unknown color mode {self.name!r}")
        if self.name == "mixed":
            probs = (0.25, 0.25, 0.25, 0.25) if self.probs is None else tuple(float(p) for p in self.probs)
            if len(probs) != 4 or any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
                raise ValueError(f"mixed probabilities must be 4 nonnegative values summing to 1, got {probs}")
            object.__setattr__(self, "probs", probs)
        elif self.probs is not None:
            raise ValueError("probs only apply to the mixed mode")

    @classmethod
    def parse(cls, text: str) -> "ColorMode":
        """Parse ``rgb``, ``grayscale``, ``mixed`` or ``mixed:0.4,0.2,0.2,0.2``."""
        text = text.strip().lower()
        if text in ("gray", "grey"):
            text = "grayscale"
        if text.startswith("mixed:"):
            return cls("mixed", tuple(float(p) for p in text[6:].split(",")))
        return cls(text)

    def __str__(self) -> str:
        if self.name == "mixed" and self.probs != (0.25, 0.25, 0.25, 0.25):
            return "mixed:" + ",".join(f"{p:g}" for p in self.probs)
        return self.name


def luma_grayscale(img: np.ndarray) -> np.ndarray:
    """Luminance ``(299 R + 587 G + 114 B) / 1000`` rounded half up, in integers."""
    img = check_rgb(img).astype(np.int32)
    acc = img[..., 0] * 299 + img[..., 1] * 587 + img[..., 2] * 114
    return ((acc + 500) // 1000).astype(np.uint8)


def extract_channel(img: np.ndarray, channel: str) -> np.ndarray:
    img = check_rgb(img)
    try:
        idx = _CHANNEL_INDEX[channel]
    except KeyError:
        raise ValueError(f"channel must be red, green or blue, got {channel!r}") from None
    return img[..., idx].copy()


def gray_to_rgb(plane: np.ndarray) -> np.ndarray:
    return np.repeat(plane[..., None], 3, axis=2)


def convert_color_mode(img: np.ndarray, mode: ColorMode, rng: np.random.Generator | None = None) -> np.ndarray:
    """Convert to ``mode``; single-plane results are replicated into three channels.

    ``mixed`` draws one of rgb/red/green/blue from ``rng`` on every call.
    """
    check_rgb(img)
    name = mode.name
    if name == "mixed":
        if rng is None:
            raise ValueError("mixed color mode needs an rng")
        name = SINGLE_MODES[int(rng.choice(4, p=mode.probs))]
    if name == "rgb":
        return img.copy()
    if name == "grayscale":
        return gray_to_rgb(luma_grayscale(img))
    return gray_to_rgb(extract_channel(img, name))


def median_color(img: np.ndarray) -> tuple[int, int, int]:
    """Per-channel median; the lower middle value for even pixel counts."""
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[0] * img.shape[1] == 0:
        raise ValueError("median_color needs a nonempty (H, W, 3) image")
    flat = img.reshape(-1, 3)
    k = (flat.shape[0] - 1) // 2
    med = np.partition(flat, k, axis=0)[k]
    return tuple(int(v) for v in med)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped; n_in == n_out maps every pixel onto itself
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (H, W, C) uint8 array, each channel independently."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _axis_weights(in_h, out_h)
    x0, x1, fx = _axis_weights(in_w, out_w)
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def resize_largest_edge(img: np.ndarray, target: int = 256) -> np.ndarray:
    check_rgb(img)
    if target < 1:
        raise ValueError("target must be >= 1")
    h, w = img.shape[:2]
    largest = max(h, w)
    if w >= h:
        new_w, new_h = target, max(1, round(h * target / largest))
    else:
        new_h, new_w = target, max(1, round(w * target / largest))
    return bilinear_resize(img, new_h, new_w)


def pad_to_square(img: np.ndarray, side: int = 256) -> np.ndarray:
    """Center ``img`` on a side x side canvas filled with its median color.

    Odd leftover padding goes to the right / bottom.
    """
    check_rgb(img)
    h, w = img.shape[:2]
    if max(h, w) > side:
        raise ValueError(f"image {w}x{h} does not fit in {side}x{side}")
    top = (side - h) // 2
    left = (side - w) // 2
    canvas = np.empty((side, side, 3), dtype=np.uint8)
    canvas[...] = median_color(img)
    canvas[top:top + h, left:left + w] = img
    return canvas


def crop_box(h: int, w: int, rng: np.random.Generator, scale=(0.5, 1.0), aspect=(3 / 4, 4 / 3)):
    """Sample a ``(top, left, height, width)`` rectangle for random_resized_crop."""
    if not (0 < scale[0] <= scale[1]) or not (0 < aspect[0] <= aspect[1]):
        raise ValueError(f"invalid crop ranges scale={scale} aspect={aspect}")
    area = h * w
    log_lo, log_hi = math.log(aspect[0]), math.log(aspect[1])
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(target_area * ratio)))
        ch = int(round(math.sqrt(target_area / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # largest centred crop with the mean aspect ratio
    ratio = (aspect[0] + aspect[1]) / 2
    if w / h > ratio:
        ch, cw = h, max(1, min(w, int(round(h * ratio))))
    else:
        cw, ch = w, max(1, min(h, int(round(w / ratio))))
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def random_resized_crop(img: np.ndarray, rng: np.random.Generator, out: int = 224,
                        scale=(0.5, 1.0), aspect=(3 / 4, 4 / 3)) -> np.ndarray:
    check_rgb(img)
    top, left, ch, cw = crop_box(img.shape[0], img.shape[1], rng, scale, aspect)
    return bilinear_resize(img[top:top + ch, left:left + cw], out, out)


def flip(img: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    if horizontal:
        img = img[:, ::-1]
    if vertical:
        img = img[::-1]
    return np.ascontiguousarray(img)


def random_flips(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent horizontal and vertical flips, each with probability 0.5."""
    check_rgb(img)
    h, v = rng.random(2) < 0.5
    return flip(img, bool(h), bool(v))


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(check_rgb(img)).save(path, format="PNG")
