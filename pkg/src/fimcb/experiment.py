"""Desk-scale color ablation on synthetic particles.

One call to :func:`run_ablation` generates a dataset, splits it, runs the
reduced grid for each requested color mode and writes ``results.json`` and
``report.csv``/``report.txt`` into the work directory.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset import MANIFEST_NAME, Manifest, SplitSpec, load_manifest, save_manifest, stratified_split
from .evaluation import render_report
from .imageops import ColorMode
from .model import SGDConfig
from .synth import SynthSpec, generate_dataset
from .trainer import GridResult, GridSpec, TrainConfig, results_to_json, run_color_ablation


@dataclass(frozen=True)
class AblationProtocol:
    chroma_delta: float = 30.0
    noise_sigma: float = 12.0
    n_per_class: int = 2500  # split 80/20 -> about 2000 train / 500 val per class
    val_fraction: float = 0.2
    image_side: int = 32
    lrs: tuple[float, ...] = (0.1, 0.01)
    weight_decays: tuple[float, ...] = (0.0,)
    momenta: tuple[float, ...] = (0.05,)
    max_epochs: int = 15
    modes: tuple[str, ...] = ("rgb", "grayscale")
    synth: SynthSpec = field(default_factory=lambda: SynthSpec(holdout_count=0))

    def synth_spec(self, seed: int) -> SynthSpec:
        return replace(self.synth, chroma_delta=self.chroma_delta, noise_sigma=self.noise_sigma,
                       n_per_class=self.n_per_class, image_side=self.image_side, seed=seed)

    def grid_spec(self, seed: int) -> GridSpec:
        base = TrainConfig(max_epochs=self.max_epochs, input_side=self.image_side,
                           sgd=SGDConfig(self.lrs[0]), seed=seed)
        return GridSpec(self.lrs, self.weight_decays, self.momenta, base)


@dataclass
class AblationRun:
    seed: int
    manifest: Manifest
    results: dict[str, GridResult]
    out_dir: Path

    def best(self, mode: str) -> float:
        return self.results[mode].best.best_val_accuracy


def prepare_data(protocol: AblationProtocol, seed: int, data_dir) -> Manifest:
    """Generate and split the synthetic dataset for one seed."""
    data_dir = Path(data_dir)
    generated = generate_dataset(protocol.synth_spec(seed), data_dir)
    manifest = stratified_split(generated.records, SplitSpec(protocol.val_fraction, frozenset(), seed),
                                generated.metadata)
    save_manifest(manifest, data_dir / MANIFEST_NAME)
    return manifest


def run_ablation(protocol: AblationProtocol, seed: int, out_dir, parallelism: int = 1,
                 data_dir=None) -> AblationRun:
    """Train every mode in ``protocol.modes``; ``data_dir`` reuses a prepared dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data_dir is None:
        data_dir = out / "data"
        manifest = prepare_data(protocol, seed, data_dir)
    else:
        data_dir = Path(data_dir)
        manifest = load_manifest(data_dir)
    modes = [ColorMode.parse(m) for m in protocol.modes]
    results = run_color_ablation(modes, protocol.grid_spec(seed), manifest, data_dir, parallelism)
    (out / "results.json").write_text(results_to_json(results, {"manifest_checksum": manifest.checksum}))
    (out / "report.csv").write_text(render_report(results, None, manifest, "csv"))
    (out / "report.txt").write_text(render_report(results, None, manifest, "text"))
    return AblationRun(seed, manifest, results, out)


def median_best(runs: list[AblationRun], mode: str) -> float:
    return statistics.median(r.best(mode) for r in runs)
