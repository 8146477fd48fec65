"""Parametric generators for the six distortion families.

Each family maps the regular lattice to a characteristic control grid. The
grid describes the backward warp from the clean image into the distorted
input: ``clean(p) == distorted(T(p))`` where ``T`` is the densified grid.
Distorted inputs are rendered by inverting that warp per pixel and evaluating
a procedural test pattern at the preimage, so they contain no resampling blur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .flow import densify, sample_bilinear
from .geometry import ControlGrid, FlowField, ImageBuffer, Mask, pixel_centers, regular_lattice

FAMILIES = (
    "stitched",
    "wide-angle-rectified",
    "rolling-shutter",
    "rotated",
    "fisheye",
    "portrait",
)

# Points are clipped to this box so every grid stays within a bounded budget.
COORD_LIMIT = 1.5
MAX_FACES = 3

# Accepted parameter ranges per family (zero strength always included).
PARAM_LIMITS: dict[str, dict[str, tuple[float, float]]] = {
    "stitched": {"strength": (0.0, 0.5), "side": (0, 3)},
    "wide-angle-rectified": {"k": (0.0, 0.4)},
    "rolling-shutter": {"shear": (-0.4, 0.4)},
    "rotated": {"angle": (-30.0, 30.0)},
    "fisheye": {"k1": (-0.35, 0.25), "k2": (-0.05, 0.05)},
    "portrait": {
        "faces": (0, MAX_FACES),
        **{f"{name}{i}": lim for i in range(MAX_FACES) for name, lim in (
            ("cx", (-0.8, 0.8)), ("cy", (-0.8, 0.8)), ("radius", (0.1, 0.8)), ("amp", (-0.4, 0.4)))},
    },
}

# Ranges drawn by the dataset sampler: nonzero strength so families separate.
SAMPLE_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "stitched": {"strength": (0.15, 0.4)},
    "wide-angle-rectified": {"k": (0.1, 0.3)},
    "rolling-shutter": {"shear": (0.1, 0.3)},  # random sign
    "rotated": {"angle": (5.0, 15.0)},  # degrees, random sign
    "fisheye": {"k1": (-0.3, -0.12), "k2": (-0.03, 0.03)},
    "portrait": {"cx": (-0.6, 0.6), "cy": (-0.6, 0.6), "radius": (0.25, 0.5), "amp": (0.15, 0.3)},
}


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class DistortionSpec:
    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SynthError(f"unknown family {self.family!r}; expected one of {', '.join(FAMILIES)}")
        limits = PARAM_LIMITS[self.family]
        for key, value in self.params.items():
            if key not in limits:
                raise SynthError(f"{self.family}: unknown parameter {key!r}")
            lo, hi = limits[key]
            if not (lo <= value <= hi):
                raise SynthError(f"{self.family}: {key}={value} outside [{lo}, {hi}]")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def label(self) -> int:
        return FAMILIES.index(self.family)

    def get(self, key: str, default: float = 0.0) -> float:
        return float(self.params.get(key, default))


def _stitched(x, y, spec):
    a = spec.get("strength")
    side = int(spec.get("side"))
    u = x if side in (0, 1) else y
    s = -1.0 if side in (0, 2) else 1.0
    w = 1.0 - a * s * u / 2.0
    return x / w, y / w


def _wide_angle(x, y, spec):
    k = spec.get("k")
    return x * (1.0 + k * y * y), y * (1.0 + k * x * x)


def _rolling_shutter(x, y, spec):
    return x + spec.get("shear") * y, y


def _rotated(x, y, spec):
    t = math.radians(spec.get("angle"))
    c, s = math.cos(t), math.sin(t)
    return np.clip(c * x - s * y, -1.0, 1.0), np.clip(s * x + c * y, -1.0, 1.0)


def _fisheye(x, y, spec):
    r2 = x * x + y * y
    f = 1.0 + spec.get("k1") * r2 + spec.get("k2") * r2 * r2
    return x * f, y * f


def _portrait(x, y, spec):
    ox, oy = x.copy(), y.copy()
    for i in range(int(spec.get("faces"))):
        cx, cy = spec.get(f"cx{i}"), spec.get(f"cy{i}")
        rho, amp = spec.get(f"radius{i}", 0.3), spec.get(f"amp{i}")
        dx, dy = x - cx, y - cy
        g = amp * np.exp(-(dx * dx + dy * dy) / (rho * rho))
        ox = ox + g * dx
        oy = oy + g * dy
    return ox, oy


_MAPS = {
    "stitched": _stitched,
    "wide-angle-rectified": _wide_angle,
    "rolling-shutter": _rolling_shutter,
    "rotated": _rotated,
    "fisheye": _fisheye,
    "portrait": _portrait,
}


def family_map(spec: DistortionSpec, pts: np.ndarray) -> np.ndarray:
    """The analytic family warp applied to ``(N, 2)`` normalized points."""
    x, y = _MAPS[spec.family](pts[:, 0], pts[:, 1], spec)
    out = np.stack([np.asarray(x, float), np.asarray(y, float)], axis=1)
    return np.clip(out, -COORD_LIMIT, COORD_LIMIT)


def generate_grid(spec: DistortionSpec, size=(16, 16)) -> ControlGrid:
    rows, cols = (size, size) if np.isscalar(size) else size
    return ControlGrid(rows, cols, family_map(spec, regular_lattice(rows, cols)))


def identity_spec(family: str = "fisheye", seed: int = 0) -> DistortionSpec:
    return DistortionSpec(family, {}, seed)


def sample_spec(family: str, rng: np.random.Generator) -> DistortionSpec:
    """Draw a spec with randomized nonzero-strength parameters."""
    r = SAMPLE_RANGES[family]
    u = lambda key: float(rng.uniform(*r[key]))  # noqa: E731
    sign = lambda: float(rng.choice([-1.0, 1.0]))  # noqa: E731
    if family == "stitched":
        params = {"strength": u("strength"), "side": int(rng.integers(0, 4))}
    elif family == "wide-angle-rectified":
        params = {"k": u("k")}
    elif family == "rolling-shutter":
        params = {"shear": sign() * u("shear")}
    elif family == "rotated":
        params = {"angle": sign() * u("angle")}
    elif family == "fisheye":
        params = {"k1": u("k1"), "k2": u("k2")}
    else:
        n = int(rng.integers(1, MAX_FACES + 1))
        params = {"faces": n}
        for i in range(n):
            for key in ("cx", "cy", "radius", "amp"):
                params[f"{key}{i}"] = u(key)
    seed = int(rng.integers(0, 2**31 - 1))
    return DistortionSpec(family, params, seed)


def render_pattern(pts: np.ndarray, seed: int = 0) -> np.ndarray:
    """Smooth procedural RGB test image evaluated at normalized points, ``(N, 3)``.

    A soft checkerboard, a color gradient and a few soft disks. Feature scale
    is tens of pixels at 256^2 so bilinear resampling error stays small.
    """
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    disks = rng.uniform(-0.7, 0.7, size=(3, 2))
    radii = rng.uniform(0.15, 0.35, size=3)
    x, y = pts[:, 0], pts[:, 1]
    checker = 0.5 + 0.5 * np.tanh(3.0 * np.sin(3.0 * np.pi * x / 2 + phase[0]) * np.sin(3.0 * np.pi * y / 2 + phase[1]))
    grad = 0.5 + 0.25 * (x + y) / 2.0
    shapes = np.zeros_like(x)
    for (cx, cy), rad in zip(disks, radii):
        d = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
        shapes += 0.5 + 0.5 * np.tanh((rad - d) * 20.0)
    shapes = np.clip(shapes, 0.0, 1.0)
    r = 0.15 + 0.7 * (0.6 * checker + 0.4 * shapes)
    g = 0.15 + 0.7 * (0.5 * grad + 0.5 * checker)
    b = 0.15 + 0.7 * (0.7 * shapes + 0.3 * (1.0 - grad))
    return np.clip(np.stack([r, g, b], axis=1), 0.0, 1.0)


def invert_flow(flow: FlowField, targets: np.ndarray, iterations: int = 30, tol: float = 1e-9):
    """Solve ``x + D(x) = y`` for each target ``y`` by Newton's method.

    ``D`` is the flow sampled bilinearly. Returns ``(x (N, 2), converged (N,))``.
    """
    h, w = flow.height, flow.width
    d = flow.data
    ddx = np.gradient(d, 2.0 / h, 2.0 / w, axis=(0, 1)) if h > 1 and w > 1 else None

    def sample(field, pts):
        px = (pts[:, 0] + 1.0) / 2.0 * w - 0.5
        py = (pts[:, 1] + 1.0) / 2.0 * h - 0.5
        vals, _ = sample_bilinear(field, px, py)
        return vals

    y = targets
    x = y - sample(d, y)
    for _ in range(iterations):
        r = x + sample(d, x) - y
        if ddx is None:
            x = x - r
            continue
        gy = sample(ddx[0], x)  # d/dy of (dx, dy)
        gx = sample(ddx[1], x)  # d/dx of (dx, dy)
        a, b = 1.0 + gx[:, 0], gy[:, 0]
        c, e = gx[:, 1], 1.0 + gy[:, 1]
        det = a * e - b * c
        ok = np.abs(det) > 1e-6
        safe = np.where(ok, det, 1.0)
        stepx = np.where(ok, (e * r[:, 0] - b * r[:, 1]) / safe, r[:, 0])
        stepy = np.where(ok, (-c * r[:, 0] + a * r[:, 1]) / safe, r[:, 1])
        step = np.stack([stepx, stepy], axis=1)
        # keep Newton from leaping far outside the domain
        n = np.sqrt((step ** 2).sum(1, keepdims=True))
        step = step * np.minimum(1.0, 0.5 / np.maximum(n, 1e-300))
        x = x - step
    r = x + sample(d, x) - y
    return x, np.sqrt((r ** 2).sum(1)) <= tol


class Sample(NamedTuple):
    image: ImageBuffer
    mask: Mask
    grid: ControlGrid
    flow: FlowField
    clean: ImageBuffer


def generate_sample(spec: DistortionSpec, width: int = 256, height: int = 256, grid_size=(16, 16)) -> Sample:
    """Distorted input, its validity mask, ground-truth grid/flow and the clean image.

    Backward-warping the input by ``flow`` reproduces ``clean`` on pixels
    that are valid in the warped mask.
    """
    grid = generate_grid(spec, grid_size)
    flow = densify(grid, width, height)
    centers = pixel_centers(width, height)
    clean = render_pattern(centers, spec.seed).reshape(height, width, 3)
    pre, converged = invert_flow(flow, centers)
    inside = converged & np.all(np.abs(pre) <= 1.0, axis=1)
    distorted = render_pattern(pre, spec.seed) * inside[:, None]
    return Sample(
        ImageBuffer(distorted.reshape(height, width, 3).astype(np.float32)),
        Mask(inside.reshape(height, width).astype(np.float32)),
        grid,
        flow,
        ImageBuffer(clean.astype(np.float32)),
    )


class LabeledGrid(NamedTuple):
    grid: ControlGrid
    label: int
    spec: DistortionSpec


def generate_classifier_dataset(count_per_class: int, size=(10, 10), seed: int = 0) -> list[LabeledGrid]:
    """Balanced set of ``6 * count_per_class`` grids, ordered family by family per round."""
    if count_per_class < 1:
        raise SynthError("count_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count_per_class):
        for family in FAMILIES:
            spec = sample_spec(family, rng)
            out.append(LabeledGrid(generate_grid(spec, size), spec.label, spec))
    return out
