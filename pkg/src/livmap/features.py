"""Feature stores, ground-feature pooling, modality fusion, dataset assembly.

Aerial features are keyed by cell, ground features by image id. Pooling
is the elementwise mean over a patch's images summed in ascending id
order so results are bit-reproducible. Fusion is elementwise addition
of the aerial vector and the pooled ground vector.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .grid import CellId, ScoreGrid, format_float
from .splits import SPLIT_LABELS, SplitAssignment

DEFAULT_FEATURE_DIM = 2048

ABLATE_NONE = "none"
ABLATE_ZERO_GROUND = "zero_ground"
ABLATE_ZERO_AERIAL = "zero_aerial"
ABLATION_MODES = (ABLATE_NONE, ABLATE_ZERO_GROUND, ABLATE_ZERO_AERIAL)

STORE_MAGIC = b"LVF1"


@dataclass
class FeatureStore:
    """Uniform-dimension vectors keyed by cell id or image id."""

    dim: int
    entries: dict

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, key) -> np.ndarray:
        return self.entries[key]

    def __contains__(self, key) -> bool:
        return key in self.entries


@dataclass
class PatchBundle:
    """One training record: cell, aerial vector, pooled ground vector, target."""

    cell: CellId
    aerial: np.ndarray
    pooled_ground: np.ndarray
    n_images: int
    target: float


@dataclass
class SplitDatasets:
    """PatchBundles grouped by split, plus per-split exclusion counts."""

    by_split: dict[str, list[PatchBundle]]
    excluded: dict[str, int]
    dim: int
    ablation: str = ABLATE_NONE

    def bundles(self, split: str) -> list[PatchBundle]:
        return self.by_split.get(split, [])


def pool_ground_features(vectors: Sequence[np.ndarray],
                         image_ids: Sequence[int] | None = None) -> np.ndarray:
    """Elementwise mean of ground vectors.

    When image ids are supplied the vectors are first put in ascending id
    order, which makes the result identical for any input permutation.
    """
    if len(vectors) == 0:
        raise ValidationError("cannot pool an empty list of ground features")
    arrs = [np.asarray(v, dtype=np.float64) for v in vectors]
    dim = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != dim:
            raise ValidationError(f"ground feature dim mismatch: {a.shape} vs {dim}")
    if image_ids is not None:
        if len(image_ids) != len(arrs):
            raise ValidationError("image_ids and vectors must have equal length")
        order = sorted(range(len(arrs)), key=lambda i: image_ids[i])
        arrs = [arrs[i] for i in order]
    total = arrs[0].copy()
    for a in arrs[1:]:
        total += a
    return total / len(arrs)


def merge_features(aerial: np.ndarray, pooled_ground: np.ndarray) -> np.ndarray:
    """Fuse modalities by elementwise addition."""
    a = np.asarray(aerial, dtype=np.float64)
    g = np.asarray(pooled_ground, dtype=np.float64)
    if a.shape != g.shape:
        raise ValidationError(f"fusion dim mismatch: {a.shape} vs {g.shape}")
    return a + g


def build_dataset(grid: ScoreGrid, splits: SplitAssignment,
                  assignment: Mapping[CellId, Sequence[int]],
                  aerial_store: FeatureStore | None,
                  ground_store: FeatureStore | None,
                  ablation: str = ABLATE_NONE) -> SplitDatasets:
    """Assemble one PatchBundle per cell, grouped by split.

    With ablation ``none`` cells without any assigned image are excluded
    (and counted); ``zero_ground`` zeroes the pooled ground vector and
    keeps every cell; ``zero_aerial`` zeroes the aerial vector. Missing
    features for a needed modality abort.
    """
    if ablation not in ABLATION_MODES:
        raise ValidationError(f"unknown ablation mode {ablation!r}")
    need_ground = ablation != ABLATE_ZERO_GROUND
    need_aerial = ablation != ABLATE_ZERO_AERIAL
    if need_aerial and aerial_store is None:
        raise ValidationError("aerial feature store required unless ablating aerial")
    if need_ground and ground_store is None:
        raise ValidationError("ground feature store required unless ablating ground")
    if need_aerial and need_ground and aerial_store.dim != ground_store.dim:
        raise ValidationError(
            f"store dims disagree: aerial {aerial_store.dim} vs ground {ground_store.dim}")
    dim = aerial_store.dim if need_aerial else ground_store.dim

    by_split: dict[str, list[PatchBundle]] = {label: [] for label in SPLIT_LABELS}
    excluded = {label: 0 for label in SPLIT_LABELS}
    zeros = np.zeros(dim, dtype=np.float64)

    for cell in sorted(grid.cells):
        label = splits.assignment.get(cell)
        if label is None:
            continue
        image_ids = sorted(assignment.get(cell, ()))
        if need_ground:
            if not image_ids:
                excluded[label] += 1
                continue
            vectors = []
            for image_id in image_ids:
                if image_id not in ground_store:
                    raise ValidationError(
                        f"image {image_id} (cell {tuple(cell)}) missing from the ground store")
                vectors.append(ground_store.get(image_id))
            pooled = pool_ground_features(vectors, image_ids)
            n_images = len(image_ids)
        else:
            pooled = zeros
            n_images = 0
        if need_aerial:
            if cell not in aerial_store:
                raise ValidationError(f"cell {tuple(cell)} missing from the aerial store")
            aerial = np.asarray(aerial_store.get(cell), dtype=np.float64)
        else:
            aerial = zeros
        by_split[label].append(PatchBundle(
            cell=cell, aerial=aerial, pooled_ground=pooled,
            n_images=n_images, target=grid.cells[cell]))
    return SplitDatasets(by_split=by_split, excluded=excluded, dim=dim, ablation=ablation)


# ---------------------------------------------------------------- file io


def _check_vector(path, lineno, values, dim) -> np.ndarray:
    if len(values) != dim:
        raise ValidationError(f"{path}: row {lineno}: expected {dim} features, got {len(values)}")
    try:
        vec = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{path}: row {lineno}: non-finite feature value")
    return vec


def load_aerial_features_csv(path) -> FeatureStore:
    """Load aerial_features.csv (header cell_x,cell_y,f0,...)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) < 3 or header[:2] != ["cell_x", "cell_y"]
                or header[2:] != [f"f{i}" for i in range(len(header) - 2)]):
            raise ValidationError(f"{path}: bad aerial feature header")
        dim = len(header) - 2
        entries: dict[CellId, np.ndarray] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                cell = CellId(int(row[0]), int(row[1]))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if cell in entries:
                raise ValidationError(f"{path}: row {lineno}: duplicate cell ({cell.cx},{cell.cy})")
            entries[cell] = _check_vector(path, lineno, row[2:], dim)
    return FeatureStore(dim=dim, entries=entries)


def save_aerial_features_csv(store: FeatureStore, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("cell_x,cell_y," + ",".join(f"f{i}" for i in range(store.dim)) + "\n")
        for cell in sorted(store.entries):
            vals = ",".join(format_float(v) for v in store.entries[cell])
            fh.write(f"{cell.cx},{cell.cy},{vals}\n")


def load_ground_features_csv(path) -> FeatureStore:
    """Load ground_features.csv (header image_id,f0,...)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) < 2 or header[0] != "image_id"
                or header[1:] != [f"f{i}" for i in range(len(header) - 1)]):
            raise ValidationError(f"{path}: bad ground feature header")
        dim = len(header) - 1
        entries: dict[int, np.ndarray] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                image_id = int(row[0])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if image_id in entries:
                raise ValidationError(f"{path}: row {lineno}: duplicate image_id {image_id}")
            entries[image_id] = _check_vector(path, lineno, row[1:], dim)
    return FeatureStore(dim=dim, entries=entries)


def save_ground_features_csv(store: FeatureStore, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("image_id," + ",".join(f"f{i}" for i in range(store.dim)) + "\n")
        for image_id in sorted(store.entries):
            vals = ",".join(format_float(v) for v in store.entries[image_id])
            fh.write(f"{image_id},{vals}\n")


def pack_cell_key(cell: CellId) -> int:
    """Pack a cell id into the binary store's u64 key: (cx << 32) | cy."""
    if not (0 <= cell.cx < 2**32 and 0 <= cell.cy < 2**32):
        raise ValidationError(f"cell {tuple(cell)} does not fit the u64 key packing")
    return (cell.cx << 32) | cell.cy


def unpack_cell_key(key: int) -> CellId:
    return CellId(key >> 32, key & 0xFFFFFFFF)


def save_store_binary(store: FeatureStore, path, keys_are_cells: bool) -> None:
    """Write the LVF1 binary store (little-endian u32 dim, u64 count, records).

    Each record is a u64 key followed by dim float32 values. Cell keys
    use the (cx << 32) | cy packing.
    """
    keys = sorted(store.entries)
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<IQ", store.dim, len(keys)))
        for key in keys:
            packed = pack_cell_key(key) if keys_are_cells else int(key)
            fh.write(struct.pack("<Q", packed))
            fh.write(np.asarray(store.entries[key], dtype="<f4").tobytes())


def load_store_binary(path, keys_are_cells: bool) -> FeatureStore:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != STORE_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {STORE_MAGIC!r}")
        dim, count = struct.unpack("<IQ", fh.read(12))
        entries = {}
        rec_bytes = 8 + 4 * dim
        for i in range(count):
            raw = fh.read(rec_bytes)
            if len(raw) != rec_bytes:
                raise ValidationError(f"{path}: truncated record {i}")
            (packed,) = struct.unpack_from("<Q", raw)
            vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=8).astype(np.float64)
            key = unpack_cell_key(packed) if keys_are_cells else packed
            if key in entries:
                raise ValidationError(f"{path}: duplicate key {key}")
            entries[key] = vec
        if fh.read(1):
            raise ValidationError(f"{path}: trailing bytes after {count} records")
    return FeatureStore(dim=dim, entries=entries)


def is_binary_store(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == STORE_MAGIC


def load_aerial_store(path) -> FeatureStore:
    if is_binary_store(path):
        return load_store_binary(path, keys_are_cells=True)
    return load_aerial_features_csv(path)


def load_ground_store(path) -> FeatureStore:
    if is_binary_store(path):
        return load_store_binary(path, keys_are_cells=False)
    return load_ground_features_csv(path)
