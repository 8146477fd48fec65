"""Thin-plate-spline fitting and evaluation.

A transform maps a query point ``q`` to ``A @ [q; 1] + sum_i U(|c_i - q|) w_i``
with ``U(r) = r^2 log r``. Fitting solves the symmetric block system

    [[K + reg*I, P], [P^T, 0]] @ [w; a] = [targets; 0]

where ``K_ij = U(|c_i - c_j|)`` and ``P = [1, x, y]``. The centers are the
points of the lattice the transform is evaluated *from* (the backward-warping
reading). The other reading, with kernels centered on the deformed points,
is the same fit with the roles swapped: ``solve_tps(target, source)`` gives
the map from deformed back to regular positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._parallel import map_chunks
from .geometry import ControlGrid, GeometryError


class SingularSystemError(ValueError):
    """The TPS block system has no unique solution."""


@dataclass(frozen=True, eq=False)
class TpsTransform:
    affine: np.ndarray  # (2, 3): columns act on x, y, 1
    weights: np.ndarray  # (N, 2)
    centers: np.ndarray  # (N, 2)
    regularization: float = 0.0

    def __post_init__(self):
        affine = np.array(self.affine, dtype=np.float64)
        weights = np.array(self.weights, dtype=np.float64)
        centers = np.array(self.centers, dtype=np.float64)
        if affine.shape != (2, 3):
            raise GeometryError(f"affine must be 2x3, got {affine.shape}")
        if centers.ndim != 2 or centers.shape[1] != 2:
            raise GeometryError(f"centers must be (N, 2), got {centers.shape}")
        if weights.shape != centers.shape:
            raise GeometryError(f"weights shape {weights.shape} != centers shape {centers.shape}")
        if self.regularization < 0:
            raise GeometryError("regularization must be >= 0")
        for arr in (affine, weights, centers):
            if not np.all(np.isfinite(arr)):
                raise GeometryError("transform contains non-finite values")
            arr.setflags(write=False)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "regularization", float(self.regularization))

    def side_condition_residual(self) -> float:
        """Max of |sum w|, |sum w x|, |sum w y| over both output components."""
        p = _poly_matrix(self.centers)
        return float(np.abs(p.T @ self.weights).max())


def radial_basis(r):
    """``r^2 log r`` with the removable singularity at 0 set to 0."""
    r = np.asarray(r, dtype=np.float64)
    return _kernel_from_sq(r * r)


def _kernel_from_sq(r2: np.ndarray) -> np.ndarray:
    # r^2 log r == 0.5 * r^2 * log(r^2); avoids the sqrt
    safe = np.where(r2 > 0.0, r2, 1.0)
    return 0.5 * r2 * np.log(safe)


def _poly_matrix(pts: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(pts)), pts[:, 0], pts[:, 1]])


def kernel_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``U(|a_i - b_j|)`` for every pair, ``(len(a), len(b))``."""
    d = a[:, None, :] - b[None, :, :]
    return _kernel_from_sq(np.einsum("ijk,ijk->ij", d, d))


def _as_points(pts) -> np.ndarray:
    if isinstance(pts, ControlGrid):
        return pts.points
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1 and arr.shape == (2,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"expected (N, 2) points, got shape {arr.shape}")
    return arr


def check_centers(centers: np.ndarray, reg: float) -> None:
    n = len(centers)
    if n < 3:
        raise SingularSystemError("singular system: need at least 3 control points")
    d = centers[:, None, :] - centers[None, :, :]
    sq = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(sq, np.inf)
    if sq.min() == 0.0:
        raise SingularSystemError("singular system: coincident control points")
    if reg == 0.0:
        # affine part is undetermined when all centers are collinear
        spread = centers - centers.mean(axis=0)
        sv = np.linalg.svd(spread, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1.0):
            raise SingularSystemError("singular system: control points are collinear")


def fit_values(centers: np.ndarray, values: np.ndarray, reg: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Fit TPS coefficients interpolating ``values`` (N, 2) at ``centers``.

    Returns ``(affine (2, 3), weights (N, 2))``.
    """
    if reg < 0:
        raise ValueError("reg must be >= 0")
    check_centers(centers, reg)
    n = len(centers)
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = kernel_matrix(centers, centers) + reg * np.eye(n)
    p = _poly_matrix(centers)
    system[:n, n:] = p
    system[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = values
    try:
        sol = scipy.linalg.solve(system, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("singular system: solution is not finite")
    weights = sol[:n]
    a = sol[n:]  # rows: constant, x, y
    affine = np.column_stack([a[1], a[2], a[0]])
    return affine, weights


def solve_tps(source: ControlGrid, target: ControlGrid, reg: float = 0.0) -> TpsTransform:
    """Fit the transform taking each ``source`` point to its paired ``target`` point."""
    src = _as_points(source)
    dst = _as_points(target)
    if src.shape != dst.shape:
        raise GeometryError(f"source has {len(src)} points but target has {len(dst)}")
    # fitting the displacement keeps the identity pair exact: zero weights, identity affine
    affine, weights = fit_values(src, dst - src, reg)
    affine = affine + np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return TpsTransform(affine, weights, src, reg)


def evaluate(affine: np.ndarray, weights: np.ndarray, centers: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate TPS coefficients at ``pts`` (M, 2).

    Accumulates one center at a time so every output row depends only on its
    own input row; results are independent of batch size and chunking.
    """

    def run(start, stop):
        q = pts[start:stop]
        qx = q[:, 0]
        qy = q[:, 1]
        out = np.empty((len(q), 2))
        # elementwise, not matmul: BLAS kernels may round differently per block
        out[:, 0] = affine[0, 0] * qx + affine[0, 1] * qy + affine[0, 2]
        out[:, 1] = affine[1, 0] * qx + affine[1, 1] * qy + affine[1, 2]
        for (cx, cy), (wx, wy) in zip(centers, weights):
            dx = cx - qx
            dy = cy - qy
            u = _kernel_from_sq(dx * dx + dy * dy)
            out[:, 0] += u * wx
            out[:, 1] += u * wy
        return out

    return map_chunks(run, len(pts))


def eval_tps(t: TpsTransform, pts) -> np.ndarray:
    """Apply ``t`` to every point; returns ``(M, 2)``."""
    q = _as_points(pts)
    return evaluate(t.affine, t.weights, t.centers, q)
