"""Geotagged ground-level images: cell/patch assignment and scene filters.

Two corpus filters are implemented on 365-class scene activations:
an outdoors rule (at least 9 of the top 10 activated classes flagged
outdoor) and a buildings rule (any of 24 building classes activated at
or above a threshold, default 0.05).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ValidationError
from .grid import (CELL_SIZE_M, PATCH_HALF_WIDTH_M, CellId, ScoreGrid,
                   cell_center, format_float)

SCENE_CLASS_COUNT = 365
SOURCES = ("gsv", "flickr")

MODE_PATCH = "patch"
MODE_CELL = "cell"
ASSIGNMENT_MODES = (MODE_PATCH, MODE_CELL)

FILTER_OUTDOORS = "outdoors"
FILTER_BUILDINGS = "buildings"


@dataclass(frozen=True)
class GeoImage:
    image_id: int
    x: float
    y: float
    source: str = "flickr"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"image {self.image_id}: unknown source {self.source!r}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"image {self.image_id}: non-finite coordinates")


@dataclass
class FilterSpec:
    """Parameters of one scene filter.

    ``inclusive`` keeps the threshold comparison at >= (the stated 0.05
    then retains an image activated at exactly 0.05).
    """

    mode: str
    outdoor_mask: np.ndarray | None = None
    building_classes: frozenset[int] = frozenset()
    threshold: float = 0.05
    top_k: int = 10
    min_outdoor: int = 9
    inclusive: bool = True

    def __post_init__(self):
        if self.mode not in (FILTER_OUTDOORS, FILTER_BUILDINGS):
            raise ValidationError(f"unknown filter mode {self.mode!r}")
        if self.threshold <= 0:
            raise ValidationError(f"threshold must be > 0, got {self.threshold}")
        if self.min_outdoor > self.top_k:
            raise ValidationError(
                f"min_outdoor {self.min_outdoor} exceeds top_k {self.top_k}")
        if self.mode == FILTER_OUTDOORS:
            if self.outdoor_mask is None or len(self.outdoor_mask) != SCENE_CLASS_COUNT:
                raise ValidationError("outdoors filter needs a 365-entry outdoor mask")
        if any(c < 0 or c >= SCENE_CLASS_COUNT for c in self.building_classes):
            raise ValidationError("building class indices must lie in [0, 365)")


@dataclass
class FilterResult:
    retained_ids: list[int]
    input_count: int

    @property
    def retained_count(self) -> int:
        return len(self.retained_ids)

    @property
    def retention_rate(self) -> float:
        if self.input_count == 0:
            return 0.0
        return self.retained_count / self.input_count


def check_activations(image_id: int, act: np.ndarray) -> np.ndarray:
    act = np.asarray(act, dtype=np.float64)
    if act.shape != (SCENE_CLASS_COUNT,):
        raise ValidationError(
            f"image {image_id}: activation vector has length {act.shape}, expected {SCENE_CLASS_COUNT}")
    if not np.all(np.isfinite(act)) or np.any(act < 0):
        raise ValidationError(f"image {image_id}: activations must be finite and >= 0")
    return act


def assign_images_to_cells(images: Iterable[GeoImage], grid: ScoreGrid,
                           mode: str = MODE_PATCH) -> tuple[dict[CellId, list[int]], int]:
    """Map images to grid cells; returns (assignment, dropped count).

    Patch mode assigns an image to every cell whose 500 m patch window
    contains it (up to 25 cells); cell mode only to its containing cell.
    Out-of-bounds images are dropped and counted, not an error.
    Per-cell id lists come back sorted ascending.
    """
    if mode not in ASSIGNMENT_MODES:
        raise ValidationError(f"unknown assignment mode {mode!r}")
    reach = 0 if mode == MODE_CELL else int(math.ceil(PATCH_HALF_WIDTH_M / CELL_SIZE_M))
    assignment: dict[CellId, list[int]] = {}
    dropped = 0
    for img in images:
        if img.x < 0 or img.y < 0 or not grid.bounds.contains_point(img.x, img.y):
            dropped += 1
            continue
        c0x = int(math.floor(img.x / CELL_SIZE_M))
        c0y = int(math.floor(img.y / CELL_SIZE_M))
        for cx in range(c0x - reach, c0x + reach + 1):
            for cy in range(c0y - reach, c0y + reach + 1):
                cell = CellId(cx, cy)
                if cell not in grid.cells:
                    continue
                if mode == MODE_PATCH:
                    ccx, ccy = cell_center(cell)
                    hw = PATCH_HALF_WIDTH_M
                    if not (ccx - hw <= img.x < ccx + hw and ccy - hw <= img.y < ccy + hw):
                        continue
                assignment.setdefault(cell, []).append(img.image_id)
    for ids in assignment.values():
        ids.sort()
    return assignment, dropped


def top_k_classes(act: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest activations; ties resolved to lower index."""
    # Sorting by (-activation, index) makes tie handling deterministic.
    order = np.lexsort((np.arange(len(act)), -act))
    return order[:k]


def filter_outdoors(act: np.ndarray, spec: FilterSpec) -> bool:
    """True iff at least min_outdoor of the top_k classes are outdoor."""
    if spec.mode != FILTER_OUTDOORS:
        raise ValidationError("filter_outdoors called with a non-outdoors spec")
    act = check_activations(-1, act)
    top = top_k_classes(act, spec.top_k)
    mask = np.asarray(spec.outdoor_mask, dtype=bool)
    return int(mask[top].sum()) >= spec.min_outdoor


def filter_buildings(act: np.ndarray, spec: FilterSpec) -> bool:
    """True iff any building class reaches the activation threshold."""
    if spec.mode != FILTER_BUILDINGS:
        raise ValidationError("filter_buildings called with a non-buildings spec")
    act = check_activations(-1, act)
    if not spec.building_classes:
        return False
    idx = sorted(spec.building_classes)
    if spec.inclusive:
        return bool(np.any(act[idx] >= spec.threshold))
    return bool(np.any(act[idx] > spec.threshold))


def apply_filter(images: list[GeoImage], activations: Mapping[int, np.ndarray],
                 spec: FilterSpec) -> FilterResult:
    """Run the configured filter over a corpus; retained ids come back sorted.

    Every image must have an activation row; a missing row aborts naming
    the image id.
    """
    predicate = filter_outdoors if spec.mode == FILTER_OUTDOORS else filter_buildings
    retained = []
    for img in images:
        if img.image_id not in activations:
            raise ValidationError(f"image {img.image_id} has no activation row")
        act = check_activations(img.image_id, activations[img.image_id])
        if predicate(act, spec):
            retained.append(img.image_id)
    retained.sort()
    return FilterResult(retained_ids=retained, input_count=len(images))


# ---------------------------------------------------------------- file io


def load_images(path) -> list[GeoImage]:
    """Load images.csv (header image_id,x,y,source)."""
    images = []
    seen: set[int] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "x", "y", "source"]:
            raise ValidationError(f"{path}: expected header image_id,x,y,source, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                image_id = int(row[0])
                img = GeoImage(image_id, float(row[1]), float(row[2]), row[3])
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if image_id in seen:
                raise ValidationError(f"{path}: row {lineno}: duplicate image_id {image_id}")
            seen.add(image_id)
            images.append(img)
    return images


def save_images(images: Iterable[GeoImage], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("image_id,x,y,source\n")
        for img in sorted(images, key=lambda im: im.image_id):
            fh.write(f"{img.image_id},{format_float(img.x)},{format_float(img.y)},{img.source}\n")


def load_activations(path) -> dict[int, np.ndarray]:
    """Load activations.csv (header image_id,a0,...,a364)."""
    expected_header = ["image_id"] + [f"a{i}" for i in range(SCENE_CLASS_COUNT)]
    out: dict[int, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise ValidationError(f"{path}: bad activations header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != SCENE_CLASS_COUNT + 1:
                raise ValidationError(
                    f"{path}: row {lineno}: expected {SCENE_CLASS_COUNT + 1} fields, got {len(row)}")
            try:
                image_id = int(row[0])
                act = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if image_id in out:
                raise ValidationError(f"{path}: row {lineno}: duplicate image_id {image_id}")
            out[image_id] = check_activations(image_id, act)
    return out


def save_activations(acts: Mapping[int, np.ndarray], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("image_id," + ",".join(f"a{i}" for i in range(SCENE_CLASS_COUNT)) + "\n")
        for image_id in sorted(acts):
            vals = ",".join(format_float(v) for v in acts[image_id])
            fh.write(f"{image_id},{vals}\n")


def load_outdoor_mask(path) -> np.ndarray:
    """Load outdoor_mask.csv (header class_index,is_outdoor with 0/1)."""
    mask = np.zeros(SCENE_CLASS_COUNT, dtype=bool)
    seen = np.zeros(SCENE_CLASS_COUNT, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["class_index", "is_outdoor"]:
            raise ValidationError(f"{path}: expected header class_index,is_outdoor, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                idx = int(row[0])
                flag = int(row[1])
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if not 0 <= idx < SCENE_CLASS_COUNT or flag not in (0, 1):
                raise ValidationError(f"{path}: row {lineno}: bad mask row {row}")
            mask[idx] = bool(flag)
            seen[idx] = True
    if not seen.all():
        raise ValidationError(f"{path}: mask rows missing for {int((~seen).sum())} classes")
    return mask


def save_outdoor_mask(mask: np.ndarray, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("class_index,is_outdoor\n")
        for idx in range(SCENE_CLASS_COUNT):
            fh.write(f"{idx},{1 if mask[idx] else 0}\n")


def load_building_classes(path) -> frozenset[int]:
    """Load building_classes.csv (header class_index, one index per row)."""
    classes: set[int] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["class_index"]:
            raise ValidationError(f"{path}: expected header class_index, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                idx = int(row[0])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if not 0 <= idx < SCENE_CLASS_COUNT:
                raise ValidationError(f"{path}: row {lineno}: class index {idx} out of range")
            classes.add(idx)
    return frozenset(classes)


def save_building_classes(classes: Iterable[int], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("class_index\n")
        for idx in sorted(classes):
            fh.write(f"{idx}\n")


def load_retained_ids(path) -> list[int]:
    ids = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id"]:
            raise ValidationError(f"{path}: expected header image_id, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ids.append(int(row[0]))
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
    return sorted(ids)


def save_retained_ids(ids: Iterable[int], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("image_id\n")
        for image_id in sorted(ids):
            fh.write(f"{image_id}\n")
