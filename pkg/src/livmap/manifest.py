"""Run manifests: one JSON file naming every input, mode, and knob of a run.

Relative paths resolve against the manifest's own directory, so a synth
output directory is runnable as-is. Command-line flags override manifest
values; the resolved result is copied into every output directory for
provenance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ValidationError
from .model import TrainConfig

FILTER_MODES = ("none", "outdoors", "buildings")

PATH_FIELDS = ("scores", "squares", "splits", "images", "activations",
               "outdoor_mask", "building_classes", "aerial_features",
               "ground_features", "retained_ids")


@dataclass
class RunManifest:
    scores: str | None = None
    squares: str | None = None
    splits: str | None = None
    images: str | None = None
    activations: str | None = None
    outdoor_mask: str | None = None
    building_classes: str | None = None
    aerial_features: str | None = None
    ground_features: str | None = None
    retained_ids: str | None = None
    filter_mode: str = "none"
    threshold: float = 0.05
    ablation: str = "none"
    assignment_mode: str = "patch"
    buffer_cells: int = 2
    tau_variant: str = "tau_b"
    block_px: int = 8
    seed: int = 0
    out_dir: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    base_dir: Path = field(default_factory=Path)

    def resolve(self, name: str) -> Path:
        """Absolute path of a named input; errors when the field is unset."""
        raw = getattr(self, name)
        if raw is None:
            raise ValidationError(f"manifest is missing the {name!r} path")
        path = Path(raw)
        if not path.is_absolute():
            path = self.base_dir / path
        return path

    def has(self, name: str) -> bool:
        return getattr(self, name) is not None

    def resolved_dict(self) -> dict:
        doc = {}
        for name in PATH_FIELDS:
            doc[name] = str(self.resolve(name)) if self.has(name) else None
        doc.update({
            "filter_mode": self.filter_mode,
            "threshold": self.threshold,
            "ablation": self.ablation,
            "assignment_mode": self.assignment_mode,
            "buffer_cells": self.buffer_cells,
            "tau_variant": self.tau_variant,
            "block_px": self.block_px,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "train": asdict(self.train),
        })
        return doc


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read manifest: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: manifest must be a JSON object")
    manifest = RunManifest(base_dir=path.parent.resolve())
    known = {f.name for f in fields(RunManifest)} - {"base_dir", "train"}
    for key, value in doc.items():
        if key == "train":
            if not isinstance(value, dict):
                raise ValidationError(f"{path}: train section must be an object")
            train_fields = {f.name for f in fields(TrainConfig)}
            unknown = set(value) - train_fields
            if unknown:
                raise ValidationError(f"{path}: unknown train keys {sorted(unknown)}")
            manifest.train = TrainConfig(**value)
        elif key in known:
            setattr(manifest, key, value)
        else:
            raise ValidationError(f"{path}: unknown manifest key {key!r}")
    _check_enums(manifest)
    return manifest


def _check_enums(manifest: RunManifest) -> None:
    from .features import ABLATION_MODES
    from .imagery import ASSIGNMENT_MODES
    from .evaluation import TAU_VARIANTS
    if manifest.filter_mode not in FILTER_MODES:
        raise ValidationError(f"unknown filter_mode {manifest.filter_mode!r}")
    if manifest.ablation not in ABLATION_MODES:
        raise ValidationError(f"unknown ablation {manifest.ablation!r}")
    if manifest.assignment_mode not in ASSIGNMENT_MODES:
        raise ValidationError(f"unknown assignment_mode {manifest.assignment_mode!r}")
    if manifest.tau_variant not in TAU_VARIANTS:
        raise ValidationError(f"unknown tau_variant {manifest.tau_variant!r}")
    if manifest.buffer_cells < 0:
        raise ValidationError("buffer_cells must be >= 0")


def write_provenance(manifest: RunManifest, out_dir) -> None:
    """Copy the resolved manifest into an output directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_manifest.json", "w", newline="\n") as fh:
        json.dump(manifest.resolved_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
