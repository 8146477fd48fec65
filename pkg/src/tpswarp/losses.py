"""Training objectives for the warping pipeline (perceptual term excluded)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import ControlGrid, FlowField, GeometryError, ImageBuffer, Mask, Mesh

NUM_CLASSES = 6


def middle_supervision_weights(num_heads: int, base: float = 2.0) -> list[float]:
    """Exponentially growing per-head weights ``base**t``, normalized to sum to 1."""
    if num_heads < 1:
        raise ValueError("num_heads must be >= 1")
    if base <= 1.0:
        raise ValueError(f"base must be > 1, got {base}")
    raw = [float(base) ** t for t in range(num_heads)]
    total = math.fsum(raw)
    return [r / total for r in raw]


@dataclass(frozen=True)
class LossWeights:
    lambda_flow: float = 0.1
    lambda_cls: float = 0.1
    middle_weights: tuple[float, ...] = field(default_factory=lambda: tuple(middle_supervision_weights(4)))

    def __post_init__(self):
        if self.lambda_flow < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be nonnegative")
        mw = tuple(float(w) for w in self.middle_weights)
        if any(w < 0 for w in mw):
            raise ValueError("middle weights must be nonnegative")
        if any(b <= a for a, b in zip(mw, mw[1:])):
            raise ValueError("middle weights must be strictly increasing")
        object.__setattr__(self, "middle_weights", mw)


def reconstruction_loss(pred: ImageBuffer, gt: ImageBuffer, mask: Mask | None = None) -> float:
    """Mean absolute difference over all channels of the (masked) pixels."""
    if pred.data.shape != gt.data.shape:
        raise GeometryError(f"image shape mismatch: {pred.data.shape} vs {gt.data.shape}")
    diff = np.abs(pred.data.astype(np.float64) - gt.data.astype(np.float64))
    if mask is None:
        return float(diff.mean())
    if (mask.width, mask.height) != (pred.width, pred.height):
        raise GeometryError("mask size does not match the images")
    w = mask.data.astype(np.float64)[:, :, None]
    denom = w.sum() * pred.channels
    if denom == 0:
        return 0.0
    return float((diff * w).sum() / denom)


def _pair_terms(edges: np.ndarray) -> np.ndarray:
    """``1 - cos`` between consecutive edges along axis 1 of ``(n, k, 2)``."""
    a = edges[:, :-1]
    b = edges[:, 1:]
    dot = (a * b).sum(-1)
    norms = np.sqrt((a * a).sum(-1)) * np.sqrt((b * b).sum(-1))
    degenerate = norms == 0.0
    cos = np.where(degenerate, 1.0, dot / np.where(degenerate, 1.0, norms))
    return 1.0 - cos


def path_collinearity_terms(path) -> np.ndarray:
    """Per-pair ``1 - cos`` along a single polyline ``(n, 2)``."""
    p = np.asarray(path, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise GeometryError("a path needs at least 3 points")
    return _pair_terms(np.diff(p, axis=0)[None])[0]


def inter_grid_loss(mesh: Mesh | ControlGrid) -> float:
    """Mean of ``1 - cos`` over every pair of successive edges.

    Pairs run along each row (horizontal edges) and along each column
    (vertical edges). A pair with a zero-length edge counts as collinear.
    """
    if isinstance(mesh, ControlGrid):
        mesh = Mesh(mesh)
    rows, cols = mesh.grid.shape
    if rows < 3 and cols < 3:
        raise GeometryError("inter-grid loss needs at least 3 points along one direction")
    terms = []
    if cols >= 3:
        terms.append(_pair_terms(mesh.horizontal_edges()).ravel())
    if rows >= 3:
        # columns become the leading axis
        terms.append(_pair_terms(mesh.vertical_edges().transpose(1, 0, 2)).ravel())
    allt = np.concatenate(terms)
    return float(allt.sum() / len(allt))


def flow_loss(pred: FlowField, gt: FlowField) -> float:
    """Mean absolute componentwise difference."""
    if pred.data.shape != gt.data.shape:
        raise GeometryError(f"flow shape mismatch: {pred.data.shape} vs {gt.data.shape}")
    return float(np.abs(pred.data - gt.data).mean())


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (NUM_CLASSES,):
        raise GeometryError(f"expected {NUM_CLASSES} logits, got shape {z.shape}")
    if not 0 <= int(label) < NUM_CLASSES:
        raise ValueError(f"label {label} out of range [0, {NUM_CLASSES})")
    return float(-log_softmax(z)[int(label)])


def total_loss(parts: Mapping[str, float], weights: LossWeights | None = None) -> float:
    """``rec + grid + lambda_flow*flow + lambda_cls*cls (+ extra)``.

    Missing parts count as zero. ``extra`` is an unweighted slot for terms
    computed elsewhere, e.g. a perceptual loss.
    """
    weights = LossWeights() if weights is None else weights
    known = {"rec", "grid", "flow", "cls", "extra"}
    unknown = set(parts) - known
    if unknown:
        raise ValueError(f"unknown loss parts: {sorted(unknown)}")
    for k, v in parts.items():
        if not math.isfinite(v):
            raise ValueError(f"loss part {k!r} is not finite")
    get = lambda k: float(parts.get(k, 0.0))  # noqa: E731
    return (
        get("rec")
        + get("grid")
        + weights.lambda_flow * get("flow")
        + weights.lambda_cls * get("cls")
        + get("extra")
    )


def middle_supervision_loss(stage_losses, weights: LossWeights | None = None) -> float:
    """Weighted sum of per-head losses using ``weights.middle_weights``."""
    weights = LossWeights() if weights is None else weights
    if len(stage_losses) != len(weights.middle_weights):
        raise ValueError(
            f"{len(stage_losses)} stage losses for {len(weights.middle_weights)} weights"
        )
    return float(sum(w * l for w, l in zip(weights.middle_weights, stage_losses)))
