"""Command-line driver: synth | segment | curate | grid | report.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
from pathlib import Path

from . import dataset as D
from .config import AppConfig, ConfigError, load_config, write_snapshot
from .evaluation import render_report
from .imageops import ColorMode, read_png
from .segmentation import RawFrame, calibrate_background, segment_frames
from .synth import generate_dataset
from .trainer import results_from_json, results_to_json, run_color_ablation

log = logging.getLogger("fimcb")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("FIMCB_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _resolve_config(args) -> AppConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("--out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_path(arg) -> Path:
    path = Path(arg)
    return path / D.MANIFEST_NAME if path.is_dir() else path


def _load_manifest(arg) -> D.Manifest:
    path = _manifest_path(arg)
    if not path.exists():
        raise UsageError(f"manifest not found: {path}")
    try:
        return D.load_manifest(path)
    except D.ManifestError as exc:
        raise UsageError(str(exc)) from None


# -- subcommands ---------------------------------------------------------------

def cmd_synth(cfg: AppConfig, out_dir) -> int:
    out = Path(out_dir)
    manifest = generate_dataset(cfg.synth, out)
    split = D.stratified_split(manifest.records, cfg.split_spec(cfg.synth.holdout_antibodies), manifest.metadata)
    D.save_manifest(split, out / D.MANIFEST_NAME)
    write_snapshot(cfg, out)
    log.info("wrote %d synthetic particles to %s", len(split.records), out)
    return EXIT_OK


def _read_frames(directory, calibration) -> dict[str, RawFrame]:
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise UsageError(f"no PNG frames in {directory}")
    return {p.stem: RawFrame(read_png(p), calibration) for p in paths}


def cmd_segment(frames_dir, background_dir, cfg: AppConfig, out_dir) -> int:
    cal = cfg.segment.calibration
    if cal is None:
        raise UsageError("[segment] calibration (um per pixel) must be set in the config")
    frames = _read_frames(frames_dir, cal)
    backgrounds = _read_frames(background_dir, cal)
    try:
        bg = calibrate_background(list(backgrounds.values()))
        rows = segment_frames(frames, bg, cfg.segmentation_config(), out_dir)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_snapshot(cfg, out_dir)
    log.info("segmented %d frames into %d particle crops", len(frames), len(rows))
    return EXIT_OK


def cmd_curate(raw_dir, cfg: AppConfig, out_dir) -> int:
    raw = Path(raw_dir)
    if not raw.is_dir():
        raise UsageError(f"not a directory: {raw}")
    scan_errors: list = []
    if (raw / D.MANIFEST_NAME).exists():
        source = _load_manifest(raw)
    else:
        source = D.Manifest(D.scan_tree(raw, scan_errors), {})
    records = D.filter_min_size(D.unassign(source.records), cfg.curate.min_side)
    if not records:
        raise UsageError(f"dataset is empty after filter (min_side={cfg.curate.min_side})")
    kept, errors = D.preprocess_all(D.Manifest(records, source.metadata), raw, out_dir, cfg.curate.target_side)
    errors = scan_errors + errors
    holdout = source.metadata.get("holdout_antibodies", [])
    try:
        manifest = D.stratified_split(kept.records, cfg.split_spec(holdout), kept.metadata)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(out_dir)
    D.save_manifest(manifest, out / D.MANIFEST_NAME)
    if errors:
        with open(out / "errors.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "error"])
            writer.writerows(errors)
    write_snapshot(cfg, out)
    log.info("curated %d records (%d dropped by size, %d unreadable)",
             len(manifest.records), len(source.records) - len(records), len(errors))
    return EXIT_OK


def cmd_grid(manifest_arg, cfg: AppConfig, modes: list[ColorMode], out_dir, parallel: int = 1) -> int:
    manifest = _load_manifest(manifest_arg)
    data_root = _manifest_path(manifest_arg).parent
    out = Path(out_dir)
    results = run_color_ablation(modes, cfg.grid_spec(), manifest, data_root, parallel,
                                 checkpoint_dir=out / "checkpoints")
    (out / "results.json").write_text(results_to_json(results, {"manifest_checksum": manifest.checksum}))
    write_snapshot(cfg, out)
    for mode, g in results.items():
        log.info("mode=%s best_val_acc=%.4f (run %d)", mode, g.best.best_val_accuracy, g.best_index)
    return EXIT_OK


def cmd_report(results_path, manifest_arg, out_dir=None) -> int:
    results_path = Path(results_path)
    if not results_path.exists():
        raise UsageError(f"results not found: {results_path}")
    try:
        results = results_from_json(results_path.read_text())
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{results_path}: unreadable results: {exc}") from None
    manifest = _load_manifest(manifest_arg)
    out = Path(out_dir) if out_dir is not None else results_path.parent
    out.mkdir(parents=True, exist_ok=True)
    try:
        text = render_report(results, None, manifest, "text")
        table = render_report(results, None, manifest, "csv")
    except (KeyError, ValueError) as exc:
        raise UsageError(f"results do not match manifest: {exc}") from None
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(table)
    sys.stdout.write(text)
    return EXIT_OK


def _parse_modes(text: str) -> list[ColorMode]:
    # split on commas that start a new mode name, so "mixed:0.4,0.2,0.2,0.2" stays whole
    return [ColorMode.parse(m) for m in re.split(r",(?=[A-Za-z])", text)]


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--seed", type=int, metavar="U64", help="override every seed in the config")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--parallel", type=int, default=1, metavar="N", help="concurrent grid runs")

    parser = argparse.ArgumentParser(prog="fimcb", parents=[common],
                                     description="Color vs monochrome stress-source classification of particle images.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic particle dataset")
    p = sub.add_parser("segment", parents=[common], help="cut particle crops out of flow-cell frames")
    p.add_argument("frames_dir")
    p.add_argument("background_dir")
    p = sub.add_parser("curate", parents=[common], help="filter, resize/pad and split a particle tree")
    p.add_argument("raw_dir")
    p = sub.add_parser("grid", parents=[common], help="run the SGD grid for each color mode")
    p.add_argument("manifest")
    p.add_argument("--modes", help="comma-separated color modes (default: config [grid] modes)")
    p = sub.add_parser("report", parents=[common], help="render accuracy / TPR tables from results.json")
    p.add_argument("results")
    p.add_argument("manifest")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = _resolve_config(args)
        if args.parallel < 1:
            raise UsageError("--parallel must be >= 1")
        if args.command == "synth":
            return cmd_synth(cfg, _out_dir(args))
        if args.command == "segment":
            return cmd_segment(args.frames_dir, args.background_dir, cfg, _out_dir(args))
        if args.command == "curate":
            return cmd_curate(args.raw_dir, cfg, _out_dir(args))
        if args.command == "grid":
            try:
                modes = _parse_modes(args.modes) if args.modes else cfg.color_modes()
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            return cmd_grid(args.manifest, cfg, modes, _out_dir(args), args.parallel)
        if args.command == "report":
            return cmd_report(args.results, args.manifest, args.out)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
