"""Dense flows: densification, composition, backward warping and rescaling.

Flows are backward: output pixel ``p`` pulls from the source at ``p + flow(p)``.
Displacements are stored in normalized units, so a flow keeps its meaning when
resampled to another resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import map_chunks
from .geometry import (
    ControlGrid,
    FeatureMap,
    FlowField,
    GeometryError,
    ImageBuffer,
    Mask,
    pixel_centers,
    regular_lattice,
)
from .tps import evaluate, fit_values


@dataclass(frozen=True, eq=False)
class WarpResult:
    image: ImageBuffer
    validity: Mask


def densify(points: ControlGrid, width: int, height: int, reg: float = 0.0) -> FlowField:
    """Dense flow of the TPS taking the regular lattice onto ``points``.

    The spline is fitted to lattice displacements rather than raw positions;
    the two are equivalent (the affine part reproduces the identity) but this
    way an undisplaced grid yields an exactly zero flow.
    """
    if width < 1 or height < 1:
        raise GeometryError("output size must be >= 1")
    lattice = regular_lattice(points.rows, points.cols)
    disp = points.points - lattice
    affine, weights = fit_values(lattice, disp, reg)
    q = pixel_centers(width, height)
    d = evaluate(affine, weights, lattice, q)
    return FlowField(d.reshape(height, width, 2))


def compose_flow(base: FlowField, residual: FlowField) -> FlowField:
    if base.data.shape != residual.data.shape:
        raise GeometryError(
            f"flow size mismatch: {base.width}x{base.height} vs {residual.width}x{residual.height}"
        )
    return FlowField(base.data + residual.data)


def sample_bilinear(src: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample ``src`` (H, W, C) at pixel coordinates ``sx``, ``sy`` (flat).

    Coordinates outside ``[0, W-1] x [0, H-1]`` are clamped to the edge and
    reported invalid. Returns ``(values (M, C) float64, valid (M,) bool)``.
    """
    h, w = src.shape[:2]
    valid = (sx >= 0.0) & (sx <= w - 1) & (sy >= 0.0) & (sy <= h - 1)
    cx = np.clip(sx, 0.0, w - 1)
    cy = np.clip(sy, 0.0, h - 1)
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0)[:, None]
    fy = (cy - y0)[:, None]
    s = src.astype(np.float64, copy=False)
    top = (1.0 - fx) * s[y0, x0] + fx * s[y0, x1]
    bottom = (1.0 - fx) * s[y1, x0] + fx * s[y1, x1]
    return (1.0 - fy) * top + fy * bottom, valid


def _backward_sample(src: np.ndarray, flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    sh, sw = src.shape[:2]
    fh, fw = flow.height, flow.width
    # pixel-unit displacement relative to the source raster
    px = flow.data[:, :, 0].ravel() * (sw / 2.0)
    py = flow.data[:, :, 1].ravel() * (sh / 2.0)
    if (sw, sh) == (fw, fh):
        base_x = np.tile(np.arange(fw, dtype=np.float64), fh)
        base_y = np.repeat(np.arange(fh, dtype=np.float64), fw)
    else:
        # output pixel centers expressed in source pixel coordinates
        ux = (np.arange(fw) + 0.5) / fw * sw - 0.5
        uy = (np.arange(fh) + 0.5) / fh * sh - 0.5
        base_x = np.tile(ux, fh)
        base_y = np.repeat(uy, fw)
    sx = base_x + px
    sy = base_y + py
    c = src.shape[2]

    def run(start, stop):
        vals, ok = sample_bilinear(src, sx[start:stop], sy[start:stop])
        return np.concatenate([vals, ok[:, None].astype(np.float64)], axis=1)

    out = map_chunks(run, fh * fw)
    values = out[:, :c].reshape(fh, fw, c)
    valid = out[:, c].reshape(fh, fw)
    return values, valid


def warp_image(src: ImageBuffer, flow: FlowField, mask: Mask | None = None) -> WarpResult:
    """Backward-warp ``src`` by ``flow`` in a single bilinear pass.

    The output takes the flow's size. When ``mask`` is given it is warped with
    the image and a pixel stays valid only if every bilinear tap was valid.
    """
    values, valid = _backward_sample(src.data, flow)
    if mask is not None:
        if (mask.width, mask.height) != (src.width, src.height):
            raise GeometryError("mask size does not match the source image")
        warped_mask, _ = _backward_sample(mask.data[:, :, None], flow)
        # bilinear weights of an all-ones patch can sum to 1 - ulp
        valid = valid * (warped_mask[:, :, 0] >= 1.0 - 1e-6)
    image = ImageBuffer(np.clip(values, 0.0, 1.0).astype(np.float32))
    return WarpResult(image, Mask(valid.astype(np.float32)))


def warp_features(features: FeatureMap, points: ControlGrid, reg: float = 0.0) -> FeatureMap:
    """Resample every channel of ``features`` along the densified control-point flow."""
    flow = densify(points, features.width, features.height, reg)
    values, _ = _backward_sample(features.data, flow)
    return FeatureMap(values)


def scale_flow(flow: FlowField, new_width: int, new_height: int) -> FlowField:
    """Resample a normalized flow onto a new pixel grid.

    Pixel centers are aligned through the normalized domain; samples beyond
    the outermost source centers take the edge value.
    """
    if new_width < 1 or new_height < 1:
        raise GeometryError("target size must be >= 1")
    h, w = flow.height, flow.width
    if (new_width, new_height) == (w, h):
        return flow
    sx = (np.arange(new_width) + 0.5) / new_width * w - 0.5
    sy = (np.arange(new_height) + 0.5) / new_height * h - 0.5
    gx = np.tile(sx, new_height)
    gy = np.repeat(sy, new_width)

    def run(start, stop):
        vals, _ = sample_bilinear(flow.data, gx[start:stop], gy[start:stop])
        return vals

    out = map_chunks(run, new_width * new_height)
    return FlowField(out.reshape(new_height, new_width, 2))
