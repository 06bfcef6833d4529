"""Particle identification on flow-cell frames.

A pixel belongs to a particle when its luminance departs from the
particle-free background by more than the light / dark thresholds.
Flagged pixels form 8-connected components, and components closer than the
merge distance count as one particle.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .imageops import check_rgb, luma_grayscale, write_png

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class RawFrame:
    image: np.ndarray
    calibration: float  # micrometres per pixel

    def __post_init__(self):
        check_rgb(self.image)
        if not self.calibration > 0:
            raise ValueError(f"calibration must be > 0 um/px, got {self.calibration}")


@dataclass(frozen=True)
class BackgroundModel:
    luma: np.ndarray  # (H, W) uint8 reference luminance


@dataclass(frozen=True)
class SegmentationConfig:
    light_threshold: float = 13
    dark_threshold: float = 10
    merge_distance: float = 3.0  # micrometres
    margin: int = 2

    def __post_init__(self):
        if self.light_threshold < 0 or self.dark_threshold < 0:
            raise ValueError("thresholds must be >= 0")
        if self.merge_distance < 0:
            raise ValueError("merge_distance must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


@dataclass
class ParticleBlob:
    """A detected particle. ``bbox`` is half-open: (x0, y0, x1, y1)."""

    pixels: np.ndarray  # (n, 2) rows of (y, x)
    bbox: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        if len(self.pixels) == 0:
            raise ValueError("blob has no pixels")
        ys, xs = self.pixels[:, 0], self.pixels[:, 1]
        self.bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)

    @property
    def area(self) -> int:
        return len(self.pixels)

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1]


def calibrate_background(frames: list[RawFrame]) -> BackgroundModel:
    """Per-pixel lower median of frame luminance over particle-free frames."""
    if not frames:
        raise ValueError("need at least one background frame")
    shape = frames[0].image.shape
    for f in frames:
        if f.image.shape != shape:
            raise ValueError(f"background frame dims {f.image.shape} != {shape}")
    stack = np.stack([luma_grayscale(f.image) for f in frames])
    k = (len(frames) - 1) // 2
    return BackgroundModel(np.partition(stack, k, axis=0)[k])


def flag_pixels(frame: RawFrame, bg: BackgroundModel, cfg: SegmentationConfig) -> np.ndarray:
    if frame.image.shape[:2] != bg.luma.shape:
        raise ValueError(f"frame dims {frame.image.shape[:2]} do not match background {bg.luma.shape}")
    diff = luma_grayscale(frame.image).astype(np.int32) - bg.luma.astype(np.int32)
    return (diff > cfg.light_threshold) | (-diff > cfg.dark_threshold)


def _merge_components(labels: np.ndarray, n: int, flagged: np.ndarray, radius_px: float) -> np.ndarray:
    """Map component label (1..n) to merged group id (0..k-1)."""
    # the closest pair between two components always lies on their boundaries
    interior = ndimage.binary_erosion(flagged, structure=_EIGHT, border_value=1)
    ys, xs = np.nonzero(flagged & ~interior)
    coords = np.column_stack([ys, xs])
    owner = labels[ys, xs] - 1
    pairs = cKDTree(coords).query_pairs(radius_px, output_type="ndarray")
    if len(pairs):
        a, b = owner[pairs[:, 0]], owner[pairs[:, 1]]
        keep = a != b
        a, b = a[keep], b[keep]
    else:
        a = b = np.empty(0, dtype=np.intp)
    graph = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    _, group = connected_components(graph, directed=False)
    return group


def detect_particles(frame: RawFrame, bg: BackgroundModel, cfg: SegmentationConfig) -> list[ParticleBlob]:
    """Flag, label and merge particles; blobs come back sorted by (y0, x0)."""
    flagged = flag_pixels(frame, bg, cfg)
    labels, n = ndimage.label(flagged, structure=_EIGHT)
    if n == 0:
        return []
    # tiny slack so a gap of exactly merge_distance still merges
    radius_px = cfg.merge_distance / frame.calibration * (1 + 1e-9)
    group = _merge_components(labels, n, flagged, radius_px)
    ys, xs = np.nonzero(flagged)
    gid = group[labels[ys, xs] - 1]
    order = np.argsort(gid, kind="stable")
    bounds = np.flatnonzero(np.diff(gid[order])) + 1
    blobs = [ParticleBlob(np.column_stack([ys[idx], xs[idx]])) for idx in np.split(order, bounds)]
    blobs.sort(key=lambda b: (b.bbox[1], b.bbox[0]))
    return blobs


def crop_particle(frame: RawFrame, blob: ParticleBlob, margin: int) -> np.ndarray:
    """Bounding box grown by ``margin`` on each side, clamped to the frame."""
    h, w = frame.image.shape[:2]
    x0, y0, x1, y1 = blob.bbox
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise ValueError(f"blob bbox {blob.bbox} outside {w}x{h} frame")
    x0, y0 = max(0, x0 - margin), max(0, y0 - margin)
    x1, y1 = min(w, x1 + margin), min(h, y1 + margin)
    return frame.image[y0:y1, x0:x1].copy()


SIDECAR_COLUMNS = ("frame_id", "blob_index", "x0", "y0", "x1", "y1", "area_px", "area_um2", "blob_count")


def segment_frames(frames: dict[str, RawFrame], bg: BackgroundModel, cfg: SegmentationConfig,
                   out_dir) -> list[dict]:
    """Write ``<frame-id>_<blob-index>.png`` crops plus ``particles.csv``; return sidecar rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for frame_id in sorted(frames):
        frame = frames[frame_id]
        blobs = detect_particles(frame, bg, cfg)
        for i, blob in enumerate(blobs):
            write_png(out_dir / f"{frame_id}_{i}.png", crop_particle(frame, blob, cfg.margin))
            x0, y0, x1, y1 = blob.bbox
            rows.append({
                "frame_id": frame_id, "blob_index": i, "x0": x0, "y0": y0, "x1": x1, "y1": y1,
                "area_px": blob.area, "area_um2": round(blob.area * frame.calibration ** 2, 6),
                "blob_count": len(blobs),
            })
    with open(out_dir / "particles.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SIDECAR_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
