"""Dataset records, manifest I/O, size filtering, preprocessing and splits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from PIL import Image

from .imageops import make_rng, pad_to_square, read_png, resize_largest_edge, write_png

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "antibody", "stress", "replicate", "image_path", "width", "height", "split")
MANIFEST_NAME = "manifest.csv"


class Stress(str, Enum):
    HEAT = "heat"
    MECHANICAL = "mechanical"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    UNASSIGNED = "unassigned"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ParticleRecord:
    id: str
    antibody: str
    stress: Stress
    replicate: int
    image_path: str  # relative to the dataset root
    width: int
    height: int
    split: Split = Split.UNASSIGNED

    def __post_init__(self):
        if not self.antibody:
            raise ValueError("antibody label is empty")
        object.__setattr__(self, "stress", Stress(self.stress))
        object.__setattr__(self, "split", Split(self.split))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"record {self.id}: bad dims {self.width}x{self.height}")


@dataclass
class Manifest:
    records: list[ParticleRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate record ids in manifest")

    @property
    def checksum(self) -> str:
        return hashlib.sha256(_records_csv(self.records).encode()).hexdigest()

    def by_id(self) -> dict[str, ParticleRecord]:
        return {r.id: r for r in self.records}

    def split(self, which: Split) -> list[ParticleRecord]:
        return [r for r in self.records if r.split == which]


def record_path(antibody: str, stress: Stress | str, rec_id: str) -> str:
    return f"{antibody}/{Stress(stress).value}/{rec_id}.png"


def _records_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in records:
        writer.writerow([r.id, r.antibody, r.stress.value, r.replicate, r.image_path,
                         r.width, r.height, r.split.value])
    return buf.getvalue()


def save_manifest(manifest: Manifest, path) -> None:
    """CSV preceded by one ``# {json}`` metadata line carrying the checksum."""
    meta = dict(manifest.metadata, checksum=manifest.checksum)
    text = "# " + json.dumps(meta, sort_keys=True) + "\n" + _records_csv(manifest.records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    text = path.read_text()
    head, _, body = text.partition("\n")
    if not head.startswith("# "):
        raise ManifestError(f"{path}: missing metadata header line")
    try:
        meta = json.loads(head[2:])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: bad metadata header: {exc}") from None
    expected = meta.pop("checksum", None)
    rows = list(csv.DictReader(io.StringIO(body)))
    try:
        records = [ParticleRecord(id=row["id"], antibody=row["antibody"], stress=row["stress"],
                                  replicate=int(row["replicate"]), image_path=row["image_path"],
                                  width=int(row["width"]), height=int(row["height"]), split=row["split"])
                   for row in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed record: {exc}") from None
    manifest = Manifest(records, meta)
    if manifest.checksum != expected:
        raise ManifestError(f"{path}: checksum mismatch")
    return manifest


def filter_min_size(records, min_side: int = 25) -> list[ParticleRecord]:
    """Keep records strictly larger than ``min_side`` in both dimensions."""
    return [r for r in records if r.width > min_side and r.height > min_side]


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.15
    holdout_antibodies: frozenset[str] = frozenset()
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        object.__setattr__(self, "holdout_antibodies", frozenset(self.holdout_antibodies))


def stratified_split(records, spec: SplitSpec, metadata: dict | None = None) -> Manifest:
    """Split every (antibody, stress) group; held-out antibodies go wholly to Val.

    Each group sends ``round(n * val_fraction)`` shuffled records to Val (halves
    round up). Record order of the input is preserved in the manifest.
    """
    groups: dict[tuple[str, str], list[ParticleRecord]] = {}
    for r in records:
        if r.split != Split.UNASSIGNED:
            raise ValueError(f"record {r.id} is already assigned to {r.split.value}")
        groups.setdefault((r.antibody, r.stress.value), []).append(r)

    rng = make_rng(spec.seed)
    assigned: dict[str, Split] = {}
    for key in sorted(groups):
        members = groups[key]
        if key[0] in spec.holdout_antibodies:
            assigned.update((r.id, Split.VAL) for r in members)
            continue
        if len(members) < 2:
            raise ValueError(f"group {key} has {len(members)} record(s); need at least 2 to split")
        n_val = math.floor(len(members) * spec.val_fraction + 0.5)
        order = rng.permutation(len(members))
        for rank, idx in enumerate(order):
            assigned[members[idx].id] = Split.VAL if rank < n_val else Split.TRAIN

    meta = dict(metadata or {})
    meta.update(split_seed=spec.seed, val_fraction=spec.val_fraction,
                holdout_antibodies=sorted(spec.holdout_antibodies))
    return Manifest([replace(r, split=assigned[r.id]) for r in records], meta)


def unassign(records) -> list[ParticleRecord]:
    return [replace(r, split=Split.UNASSIGNED) for r in records]


def preprocess_all(manifest: Manifest, src_root, out_dir, side: int = 256):
    """Resize every image so its largest edge is ``side`` and pad to a square.

    Returns ``(manifest, errors)``. Unreadable images are left out of the new
    manifest and reported as ``(record_id, message)`` pairs.
    """
    src_root, out_dir = Path(src_root), Path(out_dir)
    kept, errors = [], []
    for r in manifest.records:
        try:
            img = read_png(src_root / r.image_path)
        except Exception as exc:  # PIL raises a zoo of types on corrupt input
            log.warning("skipping %s: %s", r.id, exc)
            errors.append((r.id, f"{type(exc).__name__}: {exc}"))
            continue
        out = pad_to_square(resize_largest_edge(img, side), side)
        rel = record_path(r.antibody, r.stress, r.id)
        write_png(out_dir / rel, out)
        kept.append(replace(r, image_path=rel, width=side, height=side))
    meta = dict(manifest.metadata, preprocess_side=side, preprocess_errors=len(errors))
    return Manifest(kept, meta), errors


def scan_tree(root, errors: list | None = None) -> list[ParticleRecord]:
    """Build records from a ``<root>/<antibody>/<stress>/<id>.png`` tree.

    Unreadable files are skipped; ``(id, message)`` pairs go to ``errors``
    when a list is given.
    """
    root = Path(root)
    records = []
    for path in sorted(root.glob("*/*/*.png")):
        stress = path.parent.name
        antibody = path.parent.parent.name
        if stress not in (s.value for s in Stress):
            continue
        try:
            with Image.open(path) as im:
                width, height = im.size
        except Exception as exc:
            log.warning("unreadable %s: %s", path, exc)
            if errors is not None:
                errors.append((path.stem, f"{type(exc).__name__}: {exc}"))
            continue
        records.append(ParticleRecord(id=path.stem, antibody=antibody, stress=stress, replicate=1,
                                      image_path=path.relative_to(root).as_posix(),
                                      width=width, height=height))
    return records
