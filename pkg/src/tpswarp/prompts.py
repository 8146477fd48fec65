"""Task-prompt blending and feature modulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import TaskLabel
from .geometry import FeatureMap, GeometryError


@dataclass(frozen=True, eq=False)
class PromptBank:
    """One prompt tensor per task, stacked as ``(N, H, W, C)``."""

    prompts: np.ndarray

    def __post_init__(self):
        p = np.array(self.prompts, dtype=np.float64)
        if p.ndim != 4:
            raise GeometryError(f"prompt bank must be (N, H, W, C), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise GeometryError("prompts must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "prompts", p)

    @classmethod
    def random(cls, n: int, height: int, width: int, channels: int, seed: int = 0, scale: float = 0.02):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(n, height, width, channels)))

    def __len__(self) -> int:
        return self.prompts.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.prompts.shape[1:]


@dataclass(frozen=True, eq=False)
class ChannelProjection:
    """Per-location linear map over channels (a 1x1 convolution)."""

    weight: np.ndarray  # (C_out, C_in)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise GeometryError(f"bad projection shapes {w.shape}, {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def _probs(label) -> np.ndarray:
    return label.probs if isinstance(label, TaskLabel) else np.asarray(label, dtype=np.float64)


def blend_prompts(bank: PromptBank, label: TaskLabel) -> FeatureMap:
    """``sum_i phi_i * P_i``."""
    phi = _probs(label)
    if phi.shape != (len(bank),):
        raise GeometryError(f"label has {phi.size} entries, bank has {len(bank)} prompts")
    # explicit accumulation keeps a one-hot label an exact selection
    out = np.zeros(bank.shape)
    for w, p in zip(phi, bank.prompts):
        out += w * p
    return FeatureMap(out)


def modulate(features: FeatureMap, bank: PromptBank, label: TaskLabel, proj: ChannelProjection) -> FeatureMap:
    """Concatenate the blended prompt to ``features`` along channels, then project."""
    prompt = blend_prompts(bank, label)
    if (prompt.height, prompt.width) != (features.height, features.width):
        raise GeometryError(
            f"prompt size {prompt.height}x{prompt.width} != feature size {features.height}x{features.width}"
        )
    cat = np.concatenate([features.data, prompt.data], axis=2)
    if proj.in_channels != cat.shape[2]:
        raise GeometryError(f"projection expects {proj.in_channels} channels, got {cat.shape[2]}")
    return FeatureMap(cat @ proj.weight.T + proj.bias)
