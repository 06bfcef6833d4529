"""Synthetic subvisible-particle images with a controllable color signal.

Heat-stress particles are compact clusters of overlapping ellipses tinted by
``(+delta, +delta/2, 0)``; mechanical-stress particles are thin random-walk
strands in neutral gray. Both share the same brightness distribution, so
luminance alone says little about the class and color carries the tint.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import MANIFEST_NAME, Manifest, ParticleRecord, Stress, record_path, save_manifest
from .imageops import write_png


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 100
    image_side: int = 64
    # heat: (min, max) minor/major axis ratio of each ellipse, (min, max) ellipse count
    heat_circularity: tuple[float, float] = (0.3, 1.0)
    heat_density: tuple[int, int] = (1, 4)
    heat_radius: tuple[float, float] = (0.10, 0.18)  # fraction of image side
    # mechanical: (min, max) stroke length as a fraction of side, (min, max) stroke count
    mech_elongation: tuple[float, float] = (0.2, 0.45)
    mech_strands: tuple[int, int] = (1, 3)
    mech_thickness: tuple[float, float] = (1.2, 2.6)  # stroke radius in px at side 32
    chroma_delta: float = 30.0
    noise_sigma: float = 12.0
    particle_gray: tuple[float, float] = (70.0, 170.0)
    background_gray: float = 210.0
    n_antibodies: int = 8
    holdout_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.chroma_delta <= 64:
            raise ValueError(f"chroma_delta must lie in [0, 64], got {self.chroma_delta}")
        if self.n_per_class < 2:
            raise ValueError("n_per_class must be >= 2")
        if self.image_side < 8:
            raise ValueError("image_side must be >= 8")
        if self.n_antibodies < 1 or not 0 <= self.holdout_count < self.n_antibodies:
            raise ValueError("need 0 <= holdout_count < n_antibodies")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name in ("heat_circularity", "heat_density", "heat_radius", "mech_elongation",
                     "mech_strands", "mech_thickness", "particle_gray"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an increasing nonnegative range, got {(lo, hi)}")

    @property
    def antibodies(self) -> list[str]:
        return [f"mAb{i + 1}" for i in range(self.n_antibodies)]

    @property
    def holdout_antibodies(self) -> list[str]:
        return self.antibodies[self.n_antibodies - self.holdout_count:]


def particle_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, index]))


def _heat_mask(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_side
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    c = s / 2
    radius = s * rng.uniform(*spec.heat_radius)
    mask = np.zeros((s, s), dtype=bool)
    for _ in range(int(rng.integers(spec.heat_density[0], spec.heat_density[1] + 1))):
        cy, cx = c + rng.normal(0, 0.35 * radius, size=2)
        a = radius * rng.uniform(0.6, 1.0)
        b = a * rng.uniform(*spec.heat_circularity)
        th = rng.uniform(0, math.pi)
        u = (xx - cx) * math.cos(th) + (yy - cy) * math.sin(th)
        v = -(xx - cx) * math.sin(th) + (yy - cy) * math.cos(th)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1
    return mask


def _mech_mask(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_side
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    mask = np.zeros((s, s), dtype=bool)
    scale = s / 32
    for _ in range(int(rng.integers(spec.mech_strands[0], spec.mech_strands[1] + 1))):
        n_steps = max(2, int(round(s * rng.uniform(*spec.mech_elongation))))
        width = rng.uniform(*spec.mech_thickness) * scale
        heading = rng.uniform(0, 2 * math.pi)
        # start so the stroke passes near the centre
        y = s / 2 - 0.5 * n_steps * math.sin(heading) + rng.normal(0, s * 0.05)
        x = s / 2 - 0.5 * n_steps * math.cos(heading) + rng.normal(0, s * 0.05)
        pts = []
        for _ in range(n_steps):
            pts.append((y, x))
            heading += rng.normal(0, 0.25)
            y += math.sin(heading)
            x += math.cos(heading)
        for py, px in pts:
            mask |= (yy - py) ** 2 + (xx - px) ** 2 <= width ** 2
    if not mask.any():
        mask[s // 2, s // 2] = True
    return mask


def render_particle(stress: Stress, spec: SynthSpec, rng: np.random.Generator):
    """Return ``(image, mask)`` for one particle of the given class."""
    stress = Stress(stress)
    s = spec.image_side
    mask = _heat_mask(spec, rng) if stress == Stress.HEAT else _mech_mask(spec, rng)
    gray = rng.uniform(*spec.particle_gray)
    img = np.full((s, s, 3), spec.background_gray)
    img[mask] = gray
    if stress == Stress.HEAT:
        img[mask, 0] += spec.chroma_delta
        img[mask, 1] += spec.chroma_delta / 2
    img += rng.normal(0, spec.noise_sigma, size=img.shape)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8), mask


def generate_particle(stress: Stress, spec: SynthSpec, rng: np.random.Generator, index: int = 0):
    """Return ``(image, record)``; the antibody label is uniform over ``spec.antibodies``."""
    img, _ = render_particle(stress, spec, rng)
    antibody = spec.antibodies[int(rng.integers(spec.n_antibodies))]
    rec_id = f"p{index:06d}"
    record = ParticleRecord(id=rec_id, antibody=antibody, stress=Stress(stress), replicate=1 + index % 3,
                            image_path=record_path(antibody, stress, rec_id),
                            width=spec.image_side, height=spec.image_side)
    return img, record


def elongation(mask: np.ndarray) -> float:
    """sqrt of the principal-axis variance ratio of the mask pixels."""
    ys, xs = np.nonzero(mask)
    if len(ys) < 2:
        return 1.0
    ev = np.linalg.eigvalsh(np.cov(np.vstack([ys, xs])))
    return float(math.sqrt(ev[1] / max(ev[0], 1e-12)))


def spec_metadata(spec: SynthSpec) -> dict:
    meta = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}
    return {"synth": meta, "holdout_antibodies": spec.holdout_antibodies}


def generate_dataset(spec: SynthSpec, out_dir) -> Manifest:
    """Write ``2 * n_per_class`` PNGs plus an unassigned manifest under ``out_dir``.

    Heat particles take indices ``0..n-1`` and mechanical ones ``n..2n-1``;
    every particle draws from its own stream seeded by ``(seed, index)``.
    """
    out_dir = Path(out_dir)
    records = []
    for index in range(2 * spec.n_per_class):
        stress = Stress.HEAT if index < spec.n_per_class else Stress.MECHANICAL
        img, record = generate_particle(stress, spec, particle_rng(spec.seed, index), index)
        write_png(out_dir / record.image_path, img)
        records.append(record)
    manifest = Manifest(records, spec_metadata(spec))
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest
