"""Seeded synthetic dataset generator for desk-scale runs.

Every file the pipeline consumes is written from one PCG64 stream, so a
seed pins the dataset byte for byte.

Feature fields are spatially smooth (anchor-interpolated Gaussian
fields with exactly standard-normal per-cell marginals), mirroring the
way real imagery of nearby cells looks alike; cross-validation splits
would be trivial otherwise. Ground latents additionally carry a gentle
diagonal trend so test squares placed at different trend levels occupy
distinct score bands. Cell scores are the merged-feature projection
u . (a + g_pooled) plus optional noise, where the stored ground
features are pre-scaled so the pooled ground signal carries
ground_weight/aerial_weight times the aerial signal's standard
deviation. The score is therefore an exact linear function of the
fused vector the pipeline assembles, which makes it recoverable by the
fusion head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imagery
from .errors import ValidationError
from .features import (FeatureStore, pool_ground_features,
                       save_aerial_features_csv, save_ground_features_csv)
from .grid import CELL_SIZE_M, CellId, ScoreGrid, save_score_grid
from .imagery import SCENE_CLASS_COUNT, GeoImage
from .splits import SquareSpec, save_squares

OUTDOOR_CLASSES = range(0, 180)
BUILDING_CLASSES = tuple(range(180, 204))
PLAIN_INDOOR_CLASSES = tuple(range(250, 260))
BASE_ACTIVATION = 1e-4

CATEGORY_BOTH = 0
CATEGORY_OUTDOORS = 1
CATEGORY_BUILDINGS = 2
CATEGORY_NEITHER = 3

SIGNAL_STD = 5.0        # standard deviation of the noiseless scores
TREND_WEIGHT = 0.6      # share of the ground latent driven by the trend
TREND_TILT = 0.37       # y-slope of the trend, breaks within-tile ties
FIELD_SPACING = 8       # anchor pitch and kernel width of the smooth fields, cells


FIELD_SMOOTH = "smooth"
FIELD_IID = "iid"
FIELD_MODES = (FIELD_SMOOTH, FIELD_IID)


@dataclass
class SynthConfig:
    seed: int = 42
    width: int = 40
    height: int = 40
    dim: int = 64
    images_per_cell: float = 3.0
    noise: float = 0.05           # score noise sigma as a fraction of the signal std
    aerial_weight: float = 0.5    # signal weight of the aerial contribution
    ground_weight: float = 1.0    # signal weight of the pooled ground contribution
    feature_noise: float = 0.25   # per-image jitter around the cell latent
    assignment_mode: str = imagery.MODE_PATCH
    field_mode: str = FIELD_SMOOTH

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.dim < 1:
            raise ValidationError("grid size and dim must be >= 1")
        if self.images_per_cell < 0 or self.noise < 0 or self.feature_noise < 0:
            raise ValidationError("rates and noise levels must be >= 0")
        if self.aerial_weight <= 0 or self.ground_weight < 0:
            raise ValidationError("aerial_weight must be > 0 and ground_weight >= 0")
        if self.assignment_mode not in imagery.ASSIGNMENT_MODES:
            raise ValidationError(f"unknown assignment mode {self.assignment_mode!r}")
        if self.field_mode not in FIELD_MODES:
            raise ValidationError(f"unknown field mode {self.field_mode!r}")


@dataclass
class SynthSummary:
    out_dir: Path
    n_cells: int
    n_images: int
    score_std: float
    noise_sigma: float
    expected_outdoors: list[int]
    expected_buildings: list[int]
    squares: list[SquareSpec]


def default_squares(width: int, height: int) -> list[SquareSpec]:
    """Test squares staggered along x so each sits in its own trend band.

    Squares keep a margin from the grid edge; border cells see truncated
    patch windows and extrapolated fields, which makes them
    systematically harder to predict.
    """
    side = max(2, min(width, height) // 10)
    step = side + 6
    count = min(4, (width - 7) // step) if width > 7 else 0
    if count < 1:
        side = max(1, min(width, height) // 3)
        return [SquareSpec(CellId((width - side) // 2, (height - side) // 2), side)]
    y_fractions = (0.15, 0.7, 0.3, 0.55)
    squares = []
    for i in range(count):
        oy = min(height - side - 2, max(2, int(height * y_fractions[i % 4])))
        squares.append(SquareSpec(CellId(5 + i * step, max(0, oy)), side))
    return squares


def _smooth_field(positions: np.ndarray, width: int, height: int, n_columns: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Spatially correlated field with standard-normal per-cell marginals.

    The anchor pitch shrinks with the grid so small grids still get at
    least two anchors per axis; a single anchor would collapse the field
    to a constant.
    """
    spacing = min(FIELD_SPACING, max(2, min(width, height) // 3))
    bandwidth = float(spacing)
    ax = np.arange(spacing // 2, max(width, spacing), spacing)
    ay = np.arange(spacing // 2, max(height, spacing), spacing)
    anchors = np.array([(x, y) for x in ax for y in ay], dtype=np.float64)
    values = rng.normal(size=(len(anchors), n_columns))
    d2 = ((positions[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=-1)
    weights = np.exp(-d2 / (2.0 * bandwidth ** 2))
    # Unit-norm blend weights keep every cell's marginal exactly N(0, 1).
    weights /= np.sqrt((weights ** 2).sum(axis=1, keepdims=True))
    return weights @ values


def _activation_row(category: int) -> np.ndarray:
    """Deterministic 365-class vector whose filter outcome is set by category."""
    act = np.full(SCENE_CLASS_COUNT, BASE_ACTIVATION)
    if category == CATEGORY_BOTH:
        # Nine outdoor classes plus one strongly activated building class.
        for i in range(9):
            act[OUTDOOR_CLASSES[i]] = 0.10 - 0.005 * i
        act[BUILDING_CLASSES[0]] = 0.50
    elif category == CATEGORY_OUTDOORS:
        for i in range(10):
            act[OUTDOOR_CLASSES[i]] = 0.10 - 0.005 * i
    elif category == CATEGORY_BUILDINGS:
        # Mostly indoor top classes; only two outdoor ones sneak in.
        for i in range(8):
            act[BUILDING_CLASSES[i]] = 0.30 - 0.01 * i
        act[OUTDOOR_CLASSES[0]] = 0.05
        act[OUTDOOR_CLASSES[1]] = 0.045
    else:
        for i in range(10):
            act[PLAIN_INDOOR_CLASSES[i]] = 0.10 - 0.005 * i
    return act / act.sum()


def generate(config: SynthConfig, out_dir) -> SynthSummary:
    """Write the full synthetic dataset plus manifest into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(config.seed))

    cells = sorted(CellId(cx, cy) for cx in range(config.width) for cy in range(config.height))
    n_cells = len(cells)
    dim = config.dim
    positions = np.array([(c.cx, c.cy) for c in cells], dtype=np.float64)
    raw_trend = positions[:, 0] + TREND_TILT * positions[:, 1]
    spread = raw_trend.std()
    trend = (raw_trend - raw_trend.mean()) / spread if spread > 0 else raw_trend * 0.0

    # Fixed draw order keeps the dataset a pure function of the seed.
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    if config.field_mode == FIELD_IID:
        # Independent cells: neither modality can stand in for the other,
        # which is what ablation comparisons need.
        aerial = rng.normal(size=(n_cells, dim))
        latents = rng.normal(size=(n_cells, dim))
    else:
        aerial = _smooth_field(positions, config.width, config.height, dim, rng)
        ground_base = _smooth_field(positions, config.width, config.height, dim, rng)
        latents = (np.sqrt(1.0 - TREND_WEIGHT ** 2) * ground_base
                   + TREND_WEIGHT * trend[:, None] * u[None, :])
    counts = rng.poisson(config.images_per_cell, size=n_cells)

    images: list[GeoImage] = []
    ground_entries: dict[int, np.ndarray] = {}
    activations: dict[int, np.ndarray] = {}
    expected_outdoors: list[int] = []
    expected_buildings: list[int] = []
    next_id = 1
    for idx, cell in enumerate(cells):
        for _ in range(int(counts[idx])):
            image_id = next_id
            next_id += 1
            offset = rng.uniform(0.0, CELL_SIZE_M, size=2)
            x = cell.cx * CELL_SIZE_M + offset[0]
            y = cell.cy * CELL_SIZE_M + offset[1]
            feature = latents[idx] + config.feature_noise * rng.normal(size=dim)
            category = image_id % 4
            if category in (CATEGORY_BOTH, CATEGORY_OUTDOORS):
                expected_outdoors.append(image_id)
            if category in (CATEGORY_BOTH, CATEGORY_BUILDINGS):
                expected_buildings.append(image_id)
            images.append(GeoImage(image_id, x, y, "flickr"))
            ground_entries[image_id] = feature
            activations[image_id] = _activation_row(category)

    grid_stub = ScoreGrid.from_cells({c: 0.0 for c in cells})
    assignment, _ = imagery.assign_images_to_cells(images, grid_stub, mode=config.assignment_mode)

    # Pooled ground vector per cell under the declared assignment mode.
    pooled = np.zeros((n_cells, dim))
    has_images = np.zeros(n_cells, dtype=bool)
    for idx, cell in enumerate(cells):
        ids = assignment.get(cell, [])
        if ids:
            pooled[idx] = pool_ground_features([ground_entries[i] for i in ids], ids)
            has_images[idx] = True

    # Scale the stored ground features so the pooled ground signal carries
    # ground_weight/aerial_weight times the aerial signal's std. Pooling is
    # linear, so scaling per-image features scales the pooled vectors too.
    aerial_part = aerial @ u
    ground_part = pooled @ u
    sigma_ground = ground_part[has_images].std() if has_images.any() else 0.0
    if sigma_ground > 0:
        factor = (config.ground_weight / config.aerial_weight) \
            * aerial_part.std() / sigma_ground
    else:
        factor = 0.0
    for image_id in ground_entries:
        ground_entries[image_id] = ground_entries[image_id] * factor
    pooled *= factor

    base = aerial_part + pooled @ u
    base_std = base.std()
    if base_std > 0:
        base = base / base_std * SIGNAL_STD
    score_std = float(base.std())
    noise_sigma = config.noise * score_std
    scores = base + noise_sigma * rng.normal(size=n_cells)

    grid = ScoreGrid.from_cells({cell: float(scores[idx]) for idx, cell in enumerate(cells)})
    squares = default_squares(config.width, config.height)

    save_score_grid(grid, out / "scores.csv")
    save_squares(squares, out / "squares.csv")
    imagery.save_images(images, out / "images.csv")
    imagery.save_activations(activations, out / "activations.csv")
    mask = np.zeros(SCENE_CLASS_COUNT, dtype=bool)
    mask[list(OUTDOOR_CLASSES)] = True
    imagery.save_outdoor_mask(mask, out / "outdoor_mask.csv")
    imagery.save_building_classes(BUILDING_CLASSES, out / "building_classes.csv")
    save_aerial_features_csv(
        FeatureStore(dim=dim, entries={cell: aerial[idx] for idx, cell in enumerate(cells)}),
        out / "aerial_features.csv")
    save_ground_features_csv(
        FeatureStore(dim=dim, entries=ground_entries), out / "ground_features.csv")

    manifest = {
        "scores": "scores.csv",
        "squares": "squares.csv",
        "splits": "splits.csv",
        "images": "images.csv",
        "activations": "activations.csv",
        "outdoor_mask": "outdoor_mask.csv",
        "building_classes": "building_classes.csv",
        "aerial_features": "aerial_features.csv",
        "ground_features": "ground_features.csv",
        "filter_mode": "none",
        "threshold": 0.05,
        "ablation": "none",
        "assignment_mode": config.assignment_mode,
        "buffer_cells": 2,
        "tau_variant": "tau_b",
        "seed": config.seed,
        "train": {
            "epochs": 25, "lr": 0.001, "weight_decay": 0.001, "batch_size": 64,
            "freeze_adapter_epochs": 3, "seed": config.seed,
        },
    }
    with open(out / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    meta = {
        "n_cells": n_cells,
        "n_images": len(images),
        "score_std": score_std,
        "noise_sigma": noise_sigma,
        "aerial_weight": config.aerial_weight,
        "ground_weight": config.ground_weight,
        "expected_outdoors": expected_outdoors,
        "expected_buildings": expected_buildings,
    }
    with open(out / "synth_meta.json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return SynthSummary(
        out_dir=out, n_cells=n_cells, n_images=len(images),
        score_std=score_std, noise_sigma=noise_sigma,
        expected_outdoors=expected_outdoors, expected_buildings=expected_buildings,
        squares=squares)
