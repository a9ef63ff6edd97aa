"""Train/validation/test assignment from square test regions.

Cells inside a square are TEST; cells within a Chebyshev ring of
``buffer_cells`` around a square are VAL; everything else is TRAIN.
The ring keeps 500 m test patches pixel-disjoint from training cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import ValidationError
from .grid import CellId, ScoreGrid

TRAIN = "train"
VAL = "val"
TEST = "test"
SPLIT_LABELS = (TRAIN, VAL, TEST)

DEFAULT_BUFFER_CELLS = 2


@dataclass(frozen=True)
class SquareSpec:
    """Axis-aligned square of cells; origin is the lowest-index corner."""

    origin: CellId
    side: int

    def __post_init__(self):
        if self.side < 1:
            raise ValidationError(f"square side must be >= 1, got {self.side}")

    def covers(self, cell: CellId) -> bool:
        return (self.origin.cx <= cell.cx < self.origin.cx + self.side
                and self.origin.cy <= cell.cy < self.origin.cy + self.side)

    def chebyshev_distance(self, cell: CellId) -> int:
        """Chebyshev distance from a cell to the nearest cell of the square."""
        dx = max(self.origin.cx - cell.cx, cell.cx - (self.origin.cx + self.side - 1), 0)
        dy = max(self.origin.cy - cell.cy, cell.cy - (self.origin.cy + self.side - 1), 0)
        return max(dx, dy)


@dataclass
class SplitAssignment:
    assignment: dict[CellId, str]
    buffer_cells: int = DEFAULT_BUFFER_CELLS

    def cells_of(self, label: str) -> list[CellId]:
        return sorted(c for c, lab in self.assignment.items() if lab == label)

    def counts(self) -> dict[str, int]:
        out = {label: 0 for label in SPLIT_LABELS}
        for lab in self.assignment.values():
            out[lab] += 1
        return out


@dataclass
class SplitViolations:
    """validate_splits output; empty lists mean the assignment is valid."""

    buffer_pairs: list[tuple[CellId, CellId]] = field(default_factory=list)
    unknown_labels: list[tuple[CellId, str]] = field(default_factory=list)
    missing_cells: list[CellId] = field(default_factory=list)
    extra_cells: list[CellId] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.buffer_pairs or self.unknown_labels
                    or self.missing_cells or self.extra_cells)

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.unknown_labels:
            parts.append(f"{len(self.unknown_labels)} cells with unknown labels")
        if self.missing_cells:
            parts.append(f"{len(self.missing_cells)} grid cells unassigned")
        if self.extra_cells:
            parts.append(f"{len(self.extra_cells)} assigned cells not in the grid")
        for test_cell, train_cell in self.buffer_pairs[:10]:
            parts.append(f"test {tuple(test_cell)} within buffer of train {tuple(train_cell)}")
        if len(self.buffer_pairs) > 10:
            parts.append(f"... {len(self.buffer_pairs) - 10} more buffer violations")
        return "; ".join(parts)


@dataclass
class SplitStats:
    """Per-split counts of available cells plus overall coverage."""

    available: dict[str, int]
    total_cells: int
    coverage_pct: float


def generate_splits(grid: ScoreGrid, squares: list[SquareSpec],
                    buffer_cells: int = DEFAULT_BUFFER_CELLS) -> SplitAssignment:
    """Assign every grid cell to train/val/test around the given squares.

    Squares must lie inside the grid bounds and stay pairwise disjoint
    after expanding each by the buffer width.
    """
    if buffer_cells < 0:
        raise ValidationError(f"buffer_cells must be >= 0, got {buffer_cells}")
    bounds = grid.bounds
    for sq in squares:
        top = CellId(sq.origin.cx + sq.side - 1, sq.origin.cy + sq.side - 1)
        if not (bounds.contains_cell(sq.origin) and bounds.contains_cell(top)):
            raise ValidationError(
                f"square origin={tuple(sq.origin)} side={sq.side} exceeds grid bounds {bounds}")
    for i in range(len(squares)):
        for j in range(i + 1, len(squares)):
            if _buffered_overlap(squares[i], squares[j], buffer_cells):
                raise ValidationError(
                    f"squares {i} and {j} overlap after buffer expansion "
                    f"({tuple(squares[i].origin)} side {squares[i].side} vs "
                    f"{tuple(squares[j].origin)} side {squares[j].side}, buffer {buffer_cells})")

    assignment: dict[CellId, str] = {}
    for cell in grid.cells:
        label = TRAIN
        for sq in squares:
            d = sq.chebyshev_distance(cell)
            if d == 0:
                label = TEST
                break
            if d <= buffer_cells:
                label = VAL
        assignment[cell] = label
    return SplitAssignment(assignment=assignment, buffer_cells=buffer_cells)


def _buffered_overlap(a: SquareSpec, b: SquareSpec, buffer_cells: int) -> bool:
    # Expanding both squares by the buffer and testing intersection is the
    # same as requiring distance > 2*buffer; expanding one by 2*buffer keeps
    # the arithmetic integral.
    ax0 = a.origin.cx - 2 * buffer_cells
    ay0 = a.origin.cy - 2 * buffer_cells
    ax1 = a.origin.cx + a.side - 1 + 2 * buffer_cells
    ay1 = a.origin.cy + a.side - 1 + 2 * buffer_cells
    bx0, by0 = b.origin.cx, b.origin.cy
    bx1, by1 = b.origin.cx + b.side - 1, b.origin.cy + b.side - 1
    return not (ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0)


def validate_splits(a: SplitAssignment, grid: ScoreGrid | None = None) -> SplitViolations:
    """Check the buffer invariant (and, with a grid, the exact partition).

    Violations are returned, never raised; every offending test/train
    pair within the buffer distance is listed.
    """
    report = SplitViolations()
    for cell, label in a.assignment.items():
        if label not in SPLIT_LABELS:
            report.unknown_labels.append((cell, label))
    if grid is not None:
        report.missing_cells = sorted(c for c in grid.cells if c not in a.assignment)
        report.extra_cells = sorted(c for c in a.assignment if c not in grid.cells)

    b = a.buffer_cells
    test_cells = [c for c, lab in a.assignment.items() if lab == TEST]
    for cell in sorted(test_cells):
        for dx in range(-b, b + 1):
            for dy in range(-b, b + 1):
                near = CellId(cell.cx + dx, cell.cy + dy)
                if a.assignment.get(near) == TRAIN:
                    report.buffer_pairs.append((cell, near))
    return report


def split_stats(a: SplitAssignment, available: Callable[[CellId], bool]) -> SplitStats:
    """Count available cells per split; coverage is over all assigned cells."""
    counts = {label: 0 for label in SPLIT_LABELS}
    n_available = 0
    for cell, label in a.assignment.items():
        if available(cell):
            counts[label] += 1
            n_available += 1
    total = len(a.assignment)
    coverage = 100.0 * n_available / total if total else 0.0
    return SplitStats(available=counts, total_cells=total, coverage_pct=coverage)


def load_squares(path) -> list[SquareSpec]:
    """Load squares.csv (header origin_x,origin_y,side)."""
    squares = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["origin_x", "origin_y", "side"]:
            raise ValidationError(f"{path}: expected header origin_x,origin_y,side, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                squares.append(SquareSpec(CellId(int(row[0]), int(row[1])), int(row[2])))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
    return squares


def save_squares(squares: Iterable[SquareSpec], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("origin_x,origin_y,side\n")
        for sq in squares:
            fh.write(f"{sq.origin.cx},{sq.origin.cy},{sq.side}\n")


def load_split_assignment(path, buffer_cells: int = DEFAULT_BUFFER_CELLS) -> SplitAssignment:
    """Load splits.csv (header cell_x,cell_y,split)."""
    assignment: dict[CellId, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_x", "cell_y", "split"]:
            raise ValidationError(f"{path}: expected header cell_x,cell_y,split, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or row[2] not in SPLIT_LABELS:
                raise ValidationError(f"{path}: row {lineno}: malformed split row {row}")
            try:
                cell = CellId(int(row[0]), int(row[1]))
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from exc
            if cell in assignment:
                raise ValidationError(f"{path}: row {lineno}: duplicate cell ({cell.cx},{cell.cy})")
            assignment[cell] = row[2]
    return SplitAssignment(assignment=assignment, buffer_cells=buffer_cells)


def save_split_assignment(a: SplitAssignment, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("cell_x,cell_y,split\n")
        for cell in sorted(a.assignment):
            fh.write(f"{cell.cx},{cell.cy},{a.assignment[cell]}\n")
