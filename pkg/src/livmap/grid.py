"""100 m cell grid: score storage, point-to-cell lookup, patch extents.

Coordinates are metric and axis-aligned (projected beforehand); cell
boundaries are lower-inclusive / upper-exclusive so every point maps to
exactly one cell.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .errors import ValidationError

CELL_SIZE_M = 100.0
PATCH_HALF_WIDTH_M = 250.0


class CellId(NamedTuple):
    """Integer column/row index of one 100 m x 100 m cell."""

    cx: int
    cy: int


@dataclass(frozen=True)
class GridBounds:
    """Inclusive index bounding box of the cells stored in a grid."""

    min_cx: int
    min_cy: int
    max_cx: int
    max_cy: int

    def contains_cell(self, cell: CellId) -> bool:
        return (self.min_cx <= cell.cx <= self.max_cx
                and self.min_cy <= cell.cy <= self.max_cy)

    def contains_point(self, x: float, y: float) -> bool:
        # Metric box covered by the bounding cells, upper edge exclusive.
        return (self.min_cx * CELL_SIZE_M <= x < (self.max_cx + 1) * CELL_SIZE_M
                and self.min_cy * CELL_SIZE_M <= y < (self.max_cy + 1) * CELL_SIZE_M)


@dataclass(frozen=True)
class PatchGeometry:
    """Square metric window centered on a cell (default 500 m x 500 m)."""

    center_x: float
    center_y: float
    half_width: float = PATCH_HALF_WIDTH_M

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValidationError(f"patch half_width must be > 0, got {self.half_width}")

    @property
    def min_x(self) -> float:
        return self.center_x - self.half_width

    @property
    def max_x(self) -> float:
        return self.center_x + self.half_width

    @property
    def min_y(self) -> float:
        return self.center_y - self.half_width

    @property
    def max_y(self) -> float:
        return self.center_y + self.half_width

    def contains(self, x: float, y: float) -> bool:
        # Half-open on the upper edge, mirroring the cell boundary rule.
        return self.min_x <= x < self.max_x and self.min_y <= y < self.max_y


@dataclass
class ScoreGrid:
    """Sparse grid of housing-quality scores, one per cell.

    Immutable after construction; safe for concurrent reads.
    """

    cells: dict[CellId, float]
    bounds: GridBounds
    cell_size_m: float = CELL_SIZE_M

    @classmethod
    def from_cells(cls, cells: dict[CellId, float]) -> "ScoreGrid":
        if not cells:
            raise ValidationError("a score grid needs at least one cell")
        xs = [c.cx for c in cells]
        ys = [c.cy for c in cells]
        bounds = GridBounds(min(xs), min(ys), max(xs), max(ys))
        return cls(cells=cells, bounds=bounds)

    def __len__(self) -> int:
        return len(self.cells)

    def sorted_cells(self) -> list[CellId]:
        return sorted(self.cells)


def cell_center(cell: CellId) -> tuple[float, float]:
    return (CELL_SIZE_M * cell.cx + CELL_SIZE_M / 2,
            CELL_SIZE_M * cell.cy + CELL_SIZE_M / 2)


def cell_of_point(grid: ScoreGrid, x: float, y: float) -> CellId:
    """Map a metric point to its containing cell (lower edge inclusive)."""
    if x < 0 or y < 0 or not grid.bounds.contains_point(x, y):
        raise ValidationError(f"point ({x}, {y}) is outside the grid bounds {grid.bounds}")
    return CellId(int(math.floor(x / CELL_SIZE_M)), int(math.floor(y / CELL_SIZE_M)))


def patch_extent_of_cell(cell: CellId, half_width: float = PATCH_HALF_WIDTH_M) -> PatchGeometry:
    """500 m window centered on the cell; neighboring patches overlap."""
    cx, cy = cell_center(cell)
    return PatchGeometry(center_x=cx, center_y=cy, half_width=half_width)


def load_score_grid(path) -> ScoreGrid:
    """Load scores.csv (header cell_x,cell_y,score), one row per cell.

    Aborts with the offending row number on malformed rows, duplicate
    cells, or non-finite scores.
    """
    cells: dict[CellId, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_x", "cell_y", "score"]:
            raise ValidationError(f"{path}: expected header cell_x,cell_y,score, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: row {lineno}: expected 3 fields, got {len(row)}")
            try:
                cell = CellId(int(row[0]), int(row[1]))
                score = float(row[2])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if cell.cx < 0 or cell.cy < 0:
                raise ValidationError(f"{path}: row {lineno}: negative cell index {cell}")
            if not math.isfinite(score):
                raise ValidationError(f"{path}: row {lineno}: non-finite score {row[2]}")
            if cell in cells:
                raise ValidationError(f"{path}: row {lineno}: duplicate cell ({cell.cx},{cell.cy})")
            cells[cell] = score
    if not cells:
        raise ValidationError(f"{path}: no cells")
    return ScoreGrid.from_cells(cells)


def save_score_grid(grid: ScoreGrid, path) -> None:
    """Write scores.csv sorted by cell id; floats keep full precision."""
    with open(path, "w", newline="\n") as fh:
        fh.write("cell_x,cell_y,score\n")
        for cell in grid.sorted_cells():
            fh.write(f"{cell.cx},{cell.cy},{format_float(grid.cells[cell])}\n")


def format_float(v: float) -> str:
    """Shortest decimal string that round-trips through float()."""
    return repr(float(v))


def parse_cells(rows: Iterable[tuple[int, int]]) -> list[CellId]:
    return [CellId(int(cx), int(cy)) for cx, cy in rows]
