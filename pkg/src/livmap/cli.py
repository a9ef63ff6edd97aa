"""Command-line driver: synth | split | filter | train | eval | map.

Every command is a pure function of its manifest, input files, and seed;
reruns write byte-identical outputs. Exit codes: 0 success, 1 validation
error, 2 runtime or divergence error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import evaluation, features, imagery, model, splits, synth
from .errors import LivmapError, ValidationError
from .grid import GridBounds, load_score_grid
from .manifest import RunManifest, load_manifest, write_provenance


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="livmap",
        description="Housing-quality mapping from fused aerial and ground-level features.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed override for any command")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset", parents=[common])
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=40)
    p.add_argument("--height", type=int, default=40)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--images-per-cell", type=float, default=3.0,
                   help="Poisson rate of ground images per cell")
    p.add_argument("--noise", type=float, default=0.05,
                   help="score noise sigma as a fraction of the signal std")
    p.add_argument("--aerial-weight", type=float, default=0.5)
    p.add_argument("--ground-weight", type=float, default=1.0)
    p.add_argument("--feature-noise", type=float, default=0.25)
    p.add_argument("--assignment", choices=imagery.ASSIGNMENT_MODES, default=imagery.MODE_PATCH)
    p.add_argument("--field", choices=synth.FIELD_MODES, default=synth.FIELD_SMOOTH,
                   help="spatial structure of the feature fields")

    for name, helptext in (("split", "assign cells to train/val/test"),
                           ("filter", "run a scene filter over the image corpus"),
                           ("train", "train the fusion head"),
                           ("eval", "evaluate a checkpoint"),
                           ("map", "render ground-truth and prediction rasters")):
        p = sub.add_parser(name, help=helptext, parents=[common])
        p.add_argument("--manifest", help="run manifest JSON; flags override it")
        p.add_argument("--out", help="output directory")
        if name == "split":
            p.add_argument("--scores")
            p.add_argument("--squares")
            p.add_argument("--buffer", type=int, default=None)
        if name == "filter":
            p.add_argument("--mode", choices=(imagery.FILTER_OUTDOORS, imagery.FILTER_BUILDINGS))
            p.add_argument("--threshold", type=float, default=None)
        if name in ("train", "eval", "map"):
            p.add_argument("--ablate", choices=("none", "ground", "aerial"), default=None,
                           help="zero out one modality")
            p.add_argument("--splits", default=None, help="splits.csv path override")
        if name in ("eval", "map"):
            p.add_argument("--ckpt", required=True)
            p.add_argument("--tau", choices=evaluation.TAU_VARIANTS, default=None)
        if name == "map":
            p.add_argument("--tile", type=int, required=True,
                           help="index of the test square to render")
            p.add_argument("--vmin", type=float, default=None,
                           help="fixed color-ramp minimum (default: per-map)")
            p.add_argument("--vmax", type=float, default=None,
                           help="fixed color-ramp maximum (default: per-map)")
    return parser


ABLATE_FLAG = {"none": features.ABLATE_NONE,
               "ground": features.ABLATE_ZERO_GROUND,
               "aerial": features.ABLATE_ZERO_AERIAL}


def _manifest_from_args(args) -> RunManifest:
    manifest = load_manifest(args.manifest) if args.manifest else RunManifest()
    if args.seed is not None:
        manifest.seed = args.seed
        manifest.train = dataclasses.replace(manifest.train, seed=args.seed)
    if getattr(args, "out", None):
        manifest.out_dir = args.out
    for flag, field_name in (("scores", "scores"), ("squares", "squares"),
                             ("splits", "splits"), ("buffer", "buffer_cells"),
                             ("mode", "filter_mode"), ("threshold", "threshold"),
                             ("tau", "tau_variant")):
        value = getattr(args, flag, None)
        if value is not None:
            if field_name in ("scores", "squares", "splits"):
                # Flag paths are relative to the caller, not the manifest.
                value = str(Path(value).resolve())
            setattr(manifest, field_name, value)
    ablate = getattr(args, "ablate", None)
    if ablate is not None:
        manifest.ablation = ABLATE_FLAG[ablate]
    return manifest


def _out_dir(manifest: RunManifest) -> Path:
    if not manifest.out_dir:
        raise ValidationError("no output directory (--out or manifest out_dir)")
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_dump(doc, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _filter_spec(manifest: RunManifest) -> imagery.FilterSpec:
    outdoor_mask = None
    if manifest.filter_mode == imagery.FILTER_OUTDOORS:
        outdoor_mask = imagery.load_outdoor_mask(manifest.resolve("outdoor_mask"))
    building_classes = frozenset()
    if manifest.filter_mode == imagery.FILTER_BUILDINGS:
        building_classes = imagery.load_building_classes(manifest.resolve("building_classes"))
    return imagery.FilterSpec(
        mode=manifest.filter_mode, outdoor_mask=outdoor_mask,
        building_classes=building_classes, threshold=manifest.threshold)


def _load_corpus(manifest: RunManifest) -> list[imagery.GeoImage]:
    """Images after the manifest's retained-id list or scene filter, if any."""
    images = imagery.load_images(manifest.resolve("images"))
    if manifest.has("retained_ids"):
        keep = set(imagery.load_retained_ids(manifest.resolve("retained_ids")))
        return [img for img in images if img.image_id in keep]
    if manifest.filter_mode != "none":
        activations = imagery.load_activations(manifest.resolve("activations"))
        spec = _filter_spec(manifest)
        result = imagery.apply_filter(images, activations, spec)
        keep = set(result.retained_ids)
        return [img for img in images if img.image_id in keep]
    return images


def _build_datasets(manifest: RunManifest):
    grid = load_score_grid(manifest.resolve("scores"))
    assignment_map = splits.load_split_assignment(
        manifest.resolve("splits"), buffer_cells=manifest.buffer_cells)
    report = splits.validate_splits(assignment_map, grid)
    if not report.ok:
        raise ValidationError(f"splits file is invalid: {report.describe()}")
    ablation = manifest.ablation
    need_ground = ablation != features.ABLATE_ZERO_GROUND
    need_aerial = ablation != features.ABLATE_ZERO_AERIAL
    image_assignment = {}
    if need_ground:
        corpus = _load_corpus(manifest)
        image_assignment, _ = imagery.assign_images_to_cells(
            corpus, grid, mode=manifest.assignment_mode)
    aerial_store = (features.load_aerial_store(manifest.resolve("aerial_features"))
                    if need_aerial else None)
    ground_store = (features.load_ground_store(manifest.resolve("ground_features"))
                    if need_ground else None)
    datasets = features.build_dataset(
        grid, assignment_map, image_assignment, aerial_store, ground_store, ablation=ablation)
    return grid, assignment_map, datasets


def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        seed=args.seed if args.seed is not None else 42,
        width=args.width, height=args.height, dim=args.dim,
        images_per_cell=args.images_per_cell, noise=args.noise,
        aerial_weight=args.aerial_weight, ground_weight=args.ground_weight,
        feature_noise=args.feature_noise, assignment_mode=args.assignment,
        field_mode=args.field)
    summary = synth.generate(config, args.out)
    print(f"synth: {summary.n_cells} cells, {summary.n_images} images, "
          f"score std {summary.score_std:.4f}, noise sigma {summary.noise_sigma:.4f} "
          f"-> {summary.out_dir}")
    return 0


def cmd_split(args) -> int:
    manifest = _manifest_from_args(args)
    out = _out_dir(manifest)
    grid = load_score_grid(manifest.resolve("scores"))
    squares = splits.load_squares(manifest.resolve("squares"))
    assignment = splits.generate_splits(grid, squares, buffer_cells=manifest.buffer_cells)
    splits.save_split_assignment(assignment, out / "splits.csv")

    counts = assignment.counts()
    stats_doc = {"cells": counts, "buffer_cells": manifest.buffer_cells, "subsets": {}}
    always = splits.split_stats(assignment, lambda cell: True)
    stats_doc["subsets"]["aerial"] = _stats_entry(always)
    if manifest.has("images"):
        images = imagery.load_images(manifest.resolve("images"))
        subsets = {"all_images": images}
        if manifest.filter_mode != "none":
            activations = imagery.load_activations(manifest.resolve("activations"))
            spec = _filter_spec(manifest)
            keep = set(imagery.apply_filter(images, activations, spec).retained_ids)
            subsets[manifest.filter_mode] = [im for im in images if im.image_id in keep]
        for name, subset in subsets.items():
            cell_map, _ = imagery.assign_images_to_cells(
                subset, grid, mode=manifest.assignment_mode)
            stats = splits.split_stats(assignment, lambda cell: bool(cell_map.get(cell)))
            stats_doc["subsets"][name] = _stats_entry(stats)
    _json_dump(stats_doc, out / "split_stats.json")
    write_provenance(manifest, out)
    print(f"split: train={counts['train']} val={counts['val']} test={counts['test']} -> {out}")
    return 0


def _stats_entry(stats: splits.SplitStats) -> dict:
    return {"available": stats.available, "coverage_pct": stats.coverage_pct}


def cmd_filter(args) -> int:
    manifest = _manifest_from_args(args)
    if manifest.filter_mode == "none":
        raise ValidationError("filter command needs --mode outdoors|buildings")
    out = _out_dir(manifest)
    images = imagery.load_images(manifest.resolve("images"))
    activations = imagery.load_activations(manifest.resolve("activations"))
    spec = _filter_spec(manifest)
    result = imagery.apply_filter(images, activations, spec)
    imagery.save_retained_ids(result.retained_ids, out / "retained_ids.csv")
    _json_dump({
        "mode": manifest.filter_mode,
        "threshold": manifest.threshold,
        "input_count": result.input_count,
        "retained_count": result.retained_count,
        "retention_rate": result.retention_rate,
    }, out / "filter_report.json")
    write_provenance(manifest, out)
    print(f"filter[{manifest.filter_mode}]: retained {result.retained_count} "
          f"of {result.input_count} -> {out}")
    return 0


def cmd_train(args) -> int:
    manifest = _manifest_from_args(args)
    out = _out_dir(manifest)
    _, _, datasets = _build_datasets(manifest)
    params, history = model.train_model(datasets, manifest.train)
    model.save_checkpoint(params, out / "model.ckpt")
    model.save_history(history, out / "history.csv")
    write_provenance(manifest, out)
    best = history.best_epoch
    final = history.epochs[-1] if history.epochs else None
    if final is not None:
        print(f"train[{manifest.ablation}]: {len(history.epochs)} epochs, "
              f"best epoch {best}, final val rmse {final.val_rmse:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    manifest = _manifest_from_args(args)
    out = _out_dir(manifest)
    params = model.load_checkpoint(args.ckpt)
    _, _, datasets = _build_datasets(manifest)
    if datasets.dim != params.dim:
        raise ValidationError(
            f"checkpoint dim {params.dim} does not match feature dim {datasets.dim}")
    reports = {}
    alongside = {}
    rows = []
    for split in splits.SPLIT_LABELS:
        bundles = datasets.bundles(split)
        if not bundles:
            continue
        reports[split] = evaluation.evaluate_split(
            params, datasets, split, variant=manifest.tau_variant)
        preds = model.predict(params, bundles)
        targets = [b.target for b in bundles]
        # both rank-correlation variants are reported side by side
        both = {}
        for variant in evaluation.TAU_VARIANTS:
            try:
                both[variant] = evaluation.kendall_tau(preds, targets, variant=variant)
            except LivmapError:
                both[variant] = float("nan")
        alongside[split] = both
        rows.extend((b.cell, split, b.target, float(p)) for b, p in zip(bundles, preds))
    if not reports:
        raise ValidationError("no non-empty split to evaluate")
    evaluation.save_metrics(reports, out / "metrics.json",
                            extra={"ablation": manifest.ablation, "seed": manifest.seed},
                            alongside=alongside)
    evaluation.save_predictions(rows, out / "predictions.csv")
    write_provenance(manifest, out)
    summary = ", ".join(f"{name}: rmse={r.rmse:.4f} tau={r.tau:.4f}" for name, r in reports.items())
    print(f"eval[{manifest.ablation}]: {summary} -> {out}")
    return 0


def cmd_map(args) -> int:
    manifest = _manifest_from_args(args)
    out = _out_dir(manifest)
    params = model.load_checkpoint(args.ckpt)
    grid, _, datasets = _build_datasets(manifest)
    squares = splits.load_squares(manifest.resolve("squares"))
    if not 0 <= args.tile < len(squares):
        raise ValidationError(f"unknown tile id {args.tile}; {len(squares)} squares defined")
    sq = squares[args.tile]
    bounds = GridBounds(sq.origin.cx, sq.origin.cy,
                        sq.origin.cx + sq.side - 1, sq.origin.cy + sq.side - 1)

    truth = {cell: score for cell, score in grid.cells.items() if bounds.contains_cell(cell)}
    if not truth:
        raise ValidationError(f"tile {args.tile} contains no scored cells")
    predicted = {}
    for split in splits.SPLIT_LABELS:
        bundles = [b for b in datasets.bundles(split) if bounds.contains_cell(b.cell)]
        if not bundles:
            continue
        preds = model.predict(params, bundles)
        predicted.update({b.cell: float(p) for b, p in zip(bundles, preds)})

    block = manifest.block_px
    ramp = {"vmin": args.vmin, "vmax": args.vmax}
    evaluation.save_score_map(truth, bounds, out / f"{args.tile}_truth.png",
                              out / f"{args.tile}_truth.csv", block_px=block, **ramp)
    evaluation.save_score_map(predicted, bounds, out / f"{args.tile}_pred.png",
                              out / f"{args.tile}_pred.csv", block_px=block, **ramp)
    write_provenance(manifest, out)
    print(f"map: tile {args.tile} ({len(truth)} truth cells, {len(predicted)} predicted) -> {out}")
    return 0


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "filter": cmd_filter,
            "train": cmd_train, "eval": cmd_eval, "map": cmd_map}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LivmapError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
