"""Coarse-to-fine control-point cascade.

Each head refines the previous lattice: the previous points are upsampled to
the head's lattice size and the head's predicted offsets are added on top.
Heads are plain callables so that scripted, recorded or externally trained
predictors can be plugged in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .flow import warp_features
from .geometry import ControlGrid, FeatureMap, GeometryError, make_regular_grid, regular_lattice

Predictor = Callable[[FeatureMap], ControlGrid]

# head lattice sizes used by the reference configuration
DEFAULT_HEAD_SIZES = (10, 12, 14, 16)
DEFAULT_INITIAL_SIZE = 8


@dataclass(frozen=True)
class HeadSchedule:
    sizes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        norm = []
        for s in self.sizes:
            rc = (int(s), int(s)) if np.isscalar(s) else (int(s[0]), int(s[1]))
            if rc[0] < 2 or rc[1] < 2:
                raise GeometryError(f"head size {rc} is smaller than 2x2")
            norm.append(rc)
        for a, b in zip(norm, norm[1:]):
            if b[0] < a[0] or b[1] < a[1]:
                raise GeometryError(f"head sizes must be non-decreasing, got {a} then {b}")
        object.__setattr__(self, "sizes", tuple(norm))

    @classmethod
    def default(cls) -> "HeadSchedule":
        return cls(DEFAULT_HEAD_SIZES)

    def __len__(self) -> int:
        return len(self.sizes)


def _bilinear_lattice_resample(field: np.ndarray, new_rows: int, new_cols: int) -> np.ndarray:
    """Resample a ``(rows, cols, k)`` lattice field onto a finer corner-aligned lattice."""
    rows, cols = field.shape[:2]
    ty = np.arange(new_rows) * (rows - 1) / (new_rows - 1)
    tx = np.arange(new_cols) * (cols - 1) / (new_cols - 1)
    y0 = np.minimum(np.floor(ty).astype(int), rows - 2)
    x0 = np.minimum(np.floor(tx).astype(int), cols - 2)
    fy = (ty - y0)[:, None, None]
    fx = (tx - x0)[None, :, None]
    f00 = field[y0][:, x0]
    f01 = field[y0][:, x0 + 1]
    f10 = field[y0 + 1][:, x0]
    f11 = field[y0 + 1][:, x0 + 1]
    top = (1.0 - fx) * f00 + fx * f01
    bottom = (1.0 - fx) * f10 + fx * f11
    return (1.0 - fy) * top + fy * bottom


def upsample_control_points(grid: ControlGrid, new_rows: int, new_cols: int) -> ControlGrid:
    """Refine ``grid`` onto a ``new_rows x new_cols`` lattice.

    Displacements from the regular lattice are interpolated, not positions,
    so an undisplaced grid stays undisplaced at every size.
    """
    if new_rows < grid.rows or new_cols < grid.cols:
        raise GeometryError(
            f"cannot downsample a {grid.rows}x{grid.cols} grid to {new_rows}x{new_cols}"
        )
    if (new_rows, new_cols) == grid.shape:
        return grid
    disp = grid.displacement().reshape(grid.rows, grid.cols, 2)
    up = _bilinear_lattice_resample(disp, new_rows, new_cols)
    return ControlGrid(new_rows, new_cols, regular_lattice(new_rows, new_cols) + up.reshape(-1, 2))


def compose_head(prev: ControlGrid, delta: ControlGrid) -> ControlGrid:
    """``UP[prev] + delta`` at the size of ``delta``.

    ``delta`` carries per-point offsets; its own coordinates are not positions.
    """
    if delta.rows < prev.rows or delta.cols < prev.cols:
        raise GeometryError(
            f"head output {delta.rows}x{delta.cols} is smaller than previous grid {prev.rows}x{prev.cols}"
        )
    up = upsample_control_points(prev, delta.rows, delta.cols)
    return ControlGrid(delta.rows, delta.cols, up.points + delta.points)


def zero_delta(rows: int, cols: int | None = None) -> ControlGrid:
    cols = rows if cols is None else cols
    return ControlGrid(rows, cols, np.zeros((rows * cols, 2)))


class ZeroPredictor:
    """Head that never moves anything."""

    def __init__(self, rows: int, cols: int | None = None):
        self.delta = zero_delta(rows, cols)

    def __call__(self, features: FeatureMap) -> ControlGrid:
        return self.delta


class RecordedPredictor:
    """Head that replays a fixed delta grid regardless of its input."""

    def __init__(self, delta: ControlGrid):
        self.delta = delta

    def __call__(self, features: FeatureMap) -> ControlGrid:
        return self.delta


def run_cascade(
    features: FeatureMap,
    schedule: HeadSchedule,
    predictors: Sequence[Predictor],
    initial: ControlGrid | None = None,
) -> list[ControlGrid]:
    """Run every head in order and return each head's control points.

    Stage ``t`` warps ``features`` by the current points, asks predictor ``t``
    for offsets at ``schedule.sizes[t]`` and composes them with the upsampled
    previous points. All stage outputs are returned for per-head supervision.
    """
    if len(predictors) != len(schedule):
        raise GeometryError(f"{len(predictors)} predictors for {len(schedule)} heads")
    current = make_regular_grid(DEFAULT_INITIAL_SIZE, DEFAULT_INITIAL_SIZE) if initial is None else initial
    if schedule.sizes and (
        current.rows > schedule.sizes[0][0] or current.cols > schedule.sizes[0][1]
    ):
        raise GeometryError("initial grid is larger than the first head")
    stages = []
    for t, (size, predictor) in enumerate(zip(schedule.sizes, predictors)):
        warped = warp_features(features, current)
        delta = predictor(warped)
        if delta.shape != size:
            raise GeometryError(
                f"head {t} returned a {delta.rows}x{delta.cols} grid, expected {size[0]}x{size[1]}"
            )
        current = compose_head(current, delta)
        stages.append(current)
    return stages
