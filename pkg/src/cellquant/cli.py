"""Subcommand front end for the full workflow.

Subcommands: pipeline, denoise, segment, postprocess, quantify, evaluate,
synth. Flag overrides beat config-file keys, which beat built-in
defaults. Every run writes a manifest (config, config hash, input hashes,
seed, library versions) sufficient to reproduce it.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .bm3d import bm3d
from .config import PipelineConfig, apply_overrides, config_to_dict, load_config
from .errors import CellquantError
from .evaluation import evaluate, format_report, load_annotations, write_report_csv
from .imgio import Image, read_stack, write_image, write_overlay
from .masks import MaskSet, load_masks, save_masks
from .morphometry import extract_features, write_features_csv
from .postprocess import postprocess_pipeline, write_audit_csv
from .proposals import propose_masks_baseline, run_external_segmenter
from .stacking import stack_average
from .synthgen import generate_field, write_field


class _Failure(Exception):
    def __init__(self, stage: str, message: str, code: int = 1):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: PipelineConfig, inputs, outputs) -> None:
    import scipy
    import skimage
    import tifffile

    cfg_dict = config_to_dict(cfg)
    cfg_json = json.dumps(cfg_dict, sort_keys=True)
    manifest = {
        "command": command,
        "package": {"name": "cellquant", "version": __version__},
        "libraries": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-image": skimage.__version__,
            "tifffile": tifffile.__version__,
        },
        "config": cfg_dict,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "seed": cfg.synth.rng_seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": sorted(str(o) for o in outputs),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _require_input(path, stage: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise _Failure(stage, f"input file not found: {path}", code=2)
    return path


def _load_and_denoise(input_path: Path, cfg: PipelineConfig):
    try:
        stack = read_stack(input_path, cfg.pixel_pitch_um)
    except CellquantError as exc:
        raise _Failure("read", str(exc))
    stacked = stack_average(stack)
    try:
        from .imgio import normalize

        normalized = normalize(stacked, cfg.normalize_lo_pct, cfg.normalize_hi_pct)
    except ValueError as exc:
        raise _Failure("normalize", str(exc))
    try:
        denoised = bm3d(normalized, cfg.denoise)
    except ValueError as exc:
        raise _Failure("denoise", str(exc))
    return stacked, denoised


def _propose(denoised: Image, cfg: PipelineConfig, masks_path, out_dir: Path) -> MaskSet:
    dims = (denoised.width, denoised.height)
    try:
        if masks_path is not None:
            return load_masks(masks_path, dims)
        if cfg.proposer == "external":
            if not cfg.segmenter_cmd:
                raise _Failure("segment", "external proposer selected but no segmenter command set")
            with tempfile.TemporaryDirectory(prefix="cellquant-") as tmp:
                img_path = Path(tmp) / "denoised.tiff"
                write_image(denoised, img_path)
                return run_external_segmenter(cfg.segmenter_cmd, img_path, dims)
        return propose_masks_baseline(denoised, cfg.grid_n)
    except CellquantError as exc:
        raise _Failure("segment", str(exc))


def _pipeline_one(input_path: Path, out_dir: Path, cfg: PipelineConfig, masks_path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stacked, denoised = _load_and_denoise(input_path, cfg)
    proposals = _propose(denoised, cfg, masks_path, out_dir)
    try:
        survivors, audit = postprocess_pipeline(proposals, stacked, cfg.postprocess)
    except CellquantError as exc:
        raise _Failure("postprocess", str(exc))
    features, failures = extract_features(survivors, stacked, cfg.pixel_pitch_um)
    for failure in failures:
        print(f"[quantify] mask {failure.mask_id}: {failure.message}", file=sys.stderr)
    try:
        write_features_csv(features, out_dir / "features.csv")
        write_audit_csv(audit, out_dir / "audit.csv")
        write_overlay(denoised, survivors, out_dir / "overlay.png")
        write_image(denoised, out_dir / "denoised.tiff")
        save_masks(survivors, out_dir / "masks.json")
    except OSError as exc:
        raise _Failure("write", str(exc))
    inputs = [input_path] + ([Path(masks_path)] if masks_path else [])
    _write_manifest(
        out_dir,
        "pipeline",
        cfg,
        inputs,
        ["features.csv", "audit.csv", "overlay.png", "denoised.tiff", "masks.json"],
    )


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    out_root = Path(args.out)
    inputs = [_require_input(p, "read") for p in args.input]
    jobs = []
    for path in inputs:
        out_dir = out_root if len(inputs) == 1 else out_root / path.stem
        jobs.append((path, out_dir))
    if args.jobs > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {
                pool.submit(_pipeline_one, path, out_dir, cfg, args.masks): path
                for path, out_dir in jobs
            }
            code = 0
            for fut in concurrent.futures.as_completed(futures):
                try:
                    fut.result()
                except _Failure as exc:
                    print(f"[{exc.stage}] {futures[fut]}: {exc}", file=sys.stderr)
                    code = max(code, exc.code)
            return code
    for path, out_dir in jobs:
        _pipeline_one(path, out_dir, cfg, args.masks)
        print(f"{path} -> {out_dir}")
    return 0


def cmd_denoise(args, cfg: PipelineConfig) -> int:
    input_path = _require_input(args.input, "read")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, denoised = _load_and_denoise(input_path, cfg)
    write_image(denoised, out_dir / "denoised.tiff")
    _write_manifest(out_dir, "denoise", cfg, [input_path], ["denoised.tiff"])
    print(f"{input_path} -> {out_dir / 'denoised.tiff'}")
    return 0


def cmd_segment(args, cfg: PipelineConfig) -> int:
    input_path = _require_input(args.input, "read")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, denoised = _load_and_denoise(input_path, cfg)
    proposals = _propose(denoised, cfg, args.masks, out_dir)
    save_masks(proposals, out_dir / "masks.json")
    write_overlay(denoised, proposals, out_dir / "overlay.png")
    _write_manifest(out_dir, "segment", cfg, [input_path], ["masks.json", "overlay.png"])
    print(f"{len(proposals)} masks -> {out_dir / 'masks.json'}")
    return 0


def cmd_postprocess(args, cfg: PipelineConfig) -> int:
    if args.masks is None:
        raise _Failure("postprocess", "--masks is required for this subcommand")
    input_path = _require_input(args.input, "read")
    masks_path = _require_input(args.masks, "postprocess")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        stack = read_stack(input_path, cfg.pixel_pitch_um)
    except CellquantError as exc:
        raise _Failure("read", str(exc))
    stacked = stack_average(stack)
    try:
        ms = load_masks(masks_path, (stacked.width, stacked.height))
        survivors, audit = postprocess_pipeline(ms, stacked, cfg.postprocess)
    except CellquantError as exc:
        raise _Failure("postprocess", str(exc))
    save_masks(survivors, out_dir / "masks.json")
    write_audit_csv(audit, out_dir / "audit.csv")
    _write_manifest(
        out_dir, "postprocess", cfg, [input_path, masks_path], ["masks.json", "audit.csv"]
    )
    print(f"{len(ms)} masks in, {len(survivors)} survived -> {out_dir}")
    return 0


def cmd_quantify(args, cfg: PipelineConfig) -> int:
    if args.masks is None:
        raise _Failure("quantify", "--masks is required for this subcommand")
    input_path = _require_input(args.input, "read")
    masks_path = _require_input(args.masks, "quantify")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        stack = read_stack(input_path, cfg.pixel_pitch_um)
    except CellquantError as exc:
        raise _Failure("read", str(exc))
    stacked = stack_average(stack)
    try:
        ms = load_masks(masks_path, (stacked.width, stacked.height))
    except CellquantError as exc:
        raise _Failure("quantify", str(exc))
    features, failures = extract_features(ms, stacked, cfg.pixel_pitch_um)
    for failure in failures:
        print(f"[quantify] mask {failure.mask_id}: {failure.message}", file=sys.stderr)
    write_features_csv(features, out_dir / "features.csv")
    _write_manifest(out_dir, "quantify", cfg, [input_path, masks_path], ["features.csv"])
    print(f"{len(features)} cells -> {out_dir / 'features.csv'}")
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    if args.masks is None:
        raise _Failure("evaluate", "--masks is required for this subcommand")
    masks_path = _require_input(args.masks, "evaluate")
    ann_path = _require_input(args.annotations, "evaluate")
    try:
        ms = load_masks(masks_path)
        ann = load_annotations(ann_path)
        report = evaluate(ms, ann)
    except CellquantError as exc:
        raise _Failure("evaluate", str(exc))
    print(format_report(report))
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report_csv(report, out_dir / "report.csv")
        _write_manifest(out_dir, "evaluate", cfg, [masks_path, ann_path], ["report.csv"])
    return 0


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        field = generate_field(cfg.synth)
    except (CellquantError, ValueError) as exc:
        raise _Failure("synth", str(exc))
    paths = write_field(field, out_dir)
    _write_manifest(out_dir, "synth", cfg, [], [p.name for p in paths.values()])
    print(f"{len(field.truth_masks)} cells -> {out_dir}")
    return 0


_COMMANDS = {
    "pipeline": cmd_pipeline,
    "denoise": cmd_denoise,
    "segment": cmd_segment,
    "postprocess": cmd_postprocess,
    "quantify": cmd_quantify,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="INI config file")
    sub.add_argument("--sigma", type=float, default=None, help="denoiser noise sigma")
    sub.add_argument("--iou", type=float, default=None, help="suppression IoU threshold")
    sub.add_argument("--min-area", type=int, default=None, help="minimum mask area (px)")
    sub.add_argument("--max-area", type=int, default=None, help="maximum mask area (px)")
    sub.add_argument("--border", type=int, default=None, help="edge-removal band (px)")
    sub.add_argument("--grid", type=int, default=None, help="proposer grid points per side")
    sub.add_argument("--seed", type=int, default=None, help="synthetic generator seed")
    sub.add_argument("--segmenter-cmd", default=None, help="external segmenter command template")
    sub.add_argument("--masks", default=None, help="mask source (RLE JSON or PNG directory)")
    sub.add_argument("--jobs", type=int, default=1, help="parallel input files")
    sub.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellquant",
        description="Cell morphometry from multi-frame fluorescence raster scans.",
    )
    parser.add_argument("--version", action="version", version=f"cellquant {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    sub = subparsers.add_parser("pipeline", help="stack, denoise, segment, refine, quantify")
    sub.add_argument("input", nargs="+", help="multi-page TIFF stack(s)")
    _add_common_flags(sub)

    sub = subparsers.add_parser("denoise", help="stack, normalize, and denoise one TIFF")
    sub.add_argument("input", help="multi-page TIFF stack")
    _add_common_flags(sub)

    sub = subparsers.add_parser("segment", help="propose masks for one TIFF")
    sub.add_argument("input", help="multi-page TIFF stack")
    _add_common_flags(sub)

    sub = subparsers.add_parser("postprocess", help="run the mask refinement chain")
    sub.add_argument("input", help="TIFF stack providing the intensity image")
    _add_common_flags(sub)

    sub = subparsers.add_parser("quantify", help="extract per-cell features")
    sub.add_argument("input", help="TIFF stack providing the intensity image")
    _add_common_flags(sub)

    sub = subparsers.add_parser("evaluate", help="error rate against point annotations")
    sub.add_argument("annotations", help="annotations CSV (x_px,y_px)")
    _add_common_flags(sub)

    sub = subparsers.add_parser("synth", help="generate a synthetic ground-truth field")
    _add_common_flags(sub)

    return parser


def _build_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    overrides: dict[tuple[str, str], object] = {}
    if args.sigma is not None:
        overrides[("denoise", "sigma")] = args.sigma
    if args.iou is not None:
        overrides[("postprocess", "iou_thresh")] = args.iou
    if args.min_area is not None:
        overrides[("postprocess", "min_area_px")] = args.min_area
    if args.max_area is not None:
        overrides[("postprocess", "max_area_px")] = args.max_area
    if args.border is not None:
        overrides[("postprocess", "border_px")] = args.border
    if args.grid is not None:
        overrides[("proposals", "grid_n")] = args.grid
    if args.seed is not None:
        overrides[("synth", "rng_seed")] = args.seed
    if args.segmenter_cmd is not None:
        overrides[("proposals", "segmenter_cmd")] = args.segmenter_cmd
        overrides[("proposals", "proposer")] = "external"
    return apply_overrides(cfg, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _build_config(args)
        return _COMMANDS[args.command](args, cfg)
    except _Failure as exc:
        print(f"[{exc.stage}] {exc}", file=sys.stderr)
        return exc.code
    except CellquantError as exc:
        print(f"[{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
