"""Shared value types and coordinate conventions.

Coordinates are normalized to ``[-1, 1]`` on both axes using the pixel-center
convention ``u = (px + 0.5) / size * 2 - 1``. Every container is row-major and
holds read-only numpy arrays, so instances can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class GeometryError(ValueError):
    """Raised when a container is built from inconsistent data."""


class Point2(NamedTuple):
    x: float
    y: float


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """A ``rows x cols`` lattice of 2D points stored row-major as ``(rows*cols, 2)``."""

    rows: int
    cols: int
    points: np.ndarray

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise GeometryError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 3:
            pts = pts.reshape(-1, 2)
        if pts.shape != (self.rows * self.cols, 2):
            raise GeometryError(
                f"expected {self.rows * self.cols} points for a {self.rows}x{self.cols} grid, "
                f"got array of shape {pts.shape}"
            )
        _check_finite(pts, "control grid")
        object.__setattr__(self, "points", _frozen(pts, np.float64))

    @classmethod
    def from_array(cls, arr) -> "ControlGrid":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise GeometryError(f"expected (rows, cols, 2) array, got {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr.reshape(-1, 2))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __len__(self) -> int:
        return self.rows * self.cols

    def as_array(self) -> np.ndarray:
        """View as ``(rows, cols, 2)``."""
        return self.points.reshape(self.rows, self.cols, 2)

    def displacement(self) -> np.ndarray:
        """Offsets from the regular lattice of the same size, ``(rows*cols, 2)``."""
        return self.points - regular_lattice(self.rows, self.cols)

    def equals(self, other: "ControlGrid", atol: float = 0.0) -> bool:
        if self.shape != other.shape:
            return False
        if atol == 0.0:
            return bool(np.array_equal(self.points, other.points))
        return bool(np.allclose(self.points, other.points, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class Mesh:
    """A control grid viewed as a 4-connected mesh.

    Edges are implicit: every horizontal and vertical pair of lattice neighbors.
    """

    grid: ControlGrid

    def horizontal_edges(self) -> np.ndarray:
        a = self.grid.as_array()
        return a[:, 1:] - a[:, :-1]

    def vertical_edges(self) -> np.ndarray:
        a = self.grid.as_array()
        return a[1:, :] - a[:-1, :]

    def edge_count(self) -> int:
        r, c = self.grid.shape
        return r * (c - 1) + c * (r - 1)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Raster image, ``data`` is ``(height, width, channels)`` float32 in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise GeometryError(f"image data must be (H, W, C), got shape {d.shape}")
        if d.shape[2] not in (1, 3, 4):
            raise GeometryError(f"image must have 1, 3 or 4 channels, got {d.shape[2]}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise GeometryError("image must be at least 1x1")
        d = d.astype(np.float32, copy=False)
        _check_finite(d, "image")
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise GeometryError("image samples must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(d, np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class Mask:
    """Per-pixel validity, ``(height, width)`` float32 in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 3 and d.shape[2] == 1:
            d = d[:, :, 0]
        if d.ndim != 2:
            raise GeometryError(f"mask must be (H, W), got shape {d.shape}")
        d = d.astype(np.float32)
        _check_finite(d, "mask")
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise GeometryError("mask values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(d, np.float32))

    @classmethod
    def full(cls, width: int, height: int) -> "Mask":
        return cls(np.ones((height, width), dtype=np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Backward displacement per pixel in normalized units, ``(height, width, 2)``.

    Channel 0 is dx, channel 1 is dy.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 2:
            raise GeometryError(f"flow data must be (H, W, 2), got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise GeometryError("flow must be at least 1x1")
        _check_finite(d, "flow")
        object.__setattr__(self, "data", _frozen(d, np.float64))

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2)))

    @classmethod
    def from_components(cls, dx, dy) -> "FlowField":
        dx = np.asarray(dx, dtype=np.float64)
        dy = np.asarray(dy, dtype=np.float64)
        if dx.shape != dy.shape:
            raise GeometryError(f"dx shape {dx.shape} != dy shape {dy.shape}")
        return cls(np.stack([dx, dy], axis=-1))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dx(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def dy(self) -> np.ndarray:
        return self.data[:, :, 1]

    def to_pixels(self) -> np.ndarray:
        """Displacements in pixel units, ``(H, W, 2)``."""
        return self.data * np.array([self.width / 2.0, self.height / 2.0])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Real-valued tensor, ``(height, width, channels)`` float64."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise GeometryError(f"feature map must be (H, W, C), got shape {d.shape}")
        _check_finite(d, "feature map")
        object.__setattr__(self, "data", _frozen(d, np.float64))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def regular_lattice(rows: int, cols: int) -> np.ndarray:
    """Evenly spaced ``(rows*cols, 2)`` points covering [-1, 1]^2, corners included."""
    xs = np.linspace(-1.0, 1.0, cols)
    ys = np.linspace(-1.0, 1.0, rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def make_regular_grid(rows: int, cols: int) -> ControlGrid:
    if rows < 2 or cols < 2:
        raise GeometryError(f"grid must be at least 2x2, got {rows}x{cols}")
    return ControlGrid(rows, cols, regular_lattice(rows, cols))


def pixel_to_normalized(px, size: int):
    """Map pixel index ``px`` (center at ``px + 0.5``) into [-1, 1]."""
    if size < 1:
        raise GeometryError("size must be >= 1")
    return (np.asarray(px, dtype=np.float64) + 0.5) / size * 2.0 - 1.0


def normalized_to_pixel(u, size: int):
    """Inverse of :func:`pixel_to_normalized`."""
    if size < 1:
        raise GeometryError("size must be >= 1")
    return (np.asarray(u, dtype=np.float64) + 1.0) / 2.0 * size - 0.5


def pixel_centers(width: int, height: int) -> np.ndarray:
    """Normalized coordinates of every pixel center, ``(height*width, 2)`` row-major."""
    xs = pixel_to_normalized(np.arange(width), width)
    ys = pixel_to_normalized(np.arange(height), height)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)
