"""Composite scale-centered input transformation.

Three stacked pieces, all dimension preserving:

* base: with probability ``p_r`` draw a relative scale factor
  r' ~ U(1/r, r); shrink-and-pad for r' < 1, crop-and-upscale for r' > 1.
* aug: with probability ``p_aug`` apply one whole-image transformation
  drawn from a low-redundancy pool (flip, brightness, contrast,
  saturation, hue).
* block: split the canvas into m randomly sized blocks and apply the base
  operation to each block independently.

Parameters travel as the four-tuple ``[p_r, r, p_aug, m]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import torch

from . import imageops as ops
from .rng import RngState

AUG_POOL = ("flip", "brightness", "contrast", "saturation", "hue")


@dataclass(frozen=True)
class ScaleTransformParams:
    """The [p_r, r, p_aug, m] four-tuple."""

    p_r: float = 0.9
    r: float = 1.7
    p_aug: float = 1.0
    m: int = 6

    def __post_init__(self):
        if not 0.0 <= self.p_r <= 1.0:
            raise ValueError(f"p_r must be in [0, 1], got {self.p_r}")
        if self.r <= 1.0:
            raise ValueError(f"r must be > 1, got {self.r}")
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValueError(f"p_aug must be in [0, 1], got {self.p_aug}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")

    def to_dict(self) -> dict:
        return {"p_r": self.p_r, "r": self.r, "p_aug": self.p_aug, "m": self.m}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleTransformParams":
        defaults = cls()
        return cls(p_r=float(d.get("p_r", defaults.p_r)),
                   r=float(d.get("r", defaults.r)),
                   p_aug=float(d.get("p_aug", defaults.p_aug)),
                   m=int(d.get("m", defaults.m)))

    @classmethod
    def from_json(cls, text: str) -> "ScaleTransformParams":
        return cls.from_dict(json.loads(text))


@dataclass
class BlockTrace:
    """Record of the stochastic draws one composite application made."""

    aug_choice: Optional[str] = None
    aug_value: Optional[float] = None
    grid: tuple[int, int] = (1, 1)
    row_cuts: list[int] = field(default_factory=list)
    col_cuts: list[int] = field(default_factory=list)
    # one entry per block, row-major: (applied, r_prime, inner_h, inner_w)
    blocks: list[tuple[bool, float, int, int]] = field(default_factory=list)


def apply_relative_scale(images: torch.Tensor, r_prime: float, rng: RngState) -> torch.Tensor:
    """Rescale by r' and restore the original canvas.

    r' < 1: downscale then zero-pad back at a uniformly random offset.
    r' > 1: crop an (H/r', W/r') patch at a random offset, upscale to (H, W).
    r' == 1: unchanged.
    """
    if r_prime <= 0:
        raise ValueError(f"relative scale must be positive, got {r_prime}")
    if r_prime == 1.0:
        return images
    h, w = images.shape[-2:]
    g = rng.generator()
    if r_prime < 1.0:
        nh = max(1, ops.round_half_even(r_prime * h))
        nw = max(1, ops.round_half_even(r_prime * w))
        small = ops.resize(images, (nh, nw)).clamp(0.0, 1.0)
        top = int(g.integers(0, h - nh + 1))
        left = int(g.integers(0, w - nw + 1))
        out = torch.zeros_like(images)
        out[..., top:top + nh, left:left + nw] = small
        return out
    nh = max(1, ops.round_half_even(h / r_prime))
    nw = max(1, ops.round_half_even(w / r_prime))
    top = int(g.integers(0, h - nh + 1))
    left = int(g.integers(0, w - nw + 1))
    patch = images[..., top:top + nh, left:left + nw]
    return ops.resize(patch, (h, w)).clamp(0.0, 1.0)


def scale_and_restore(images: torch.Tensor, r: float, p_r: float, rng: RngState) -> torch.Tensor:
    """The base operation: gated bidirectional rescale, dimensions preserved."""
    if r <= 1.0:
        raise ValueError(f"r must be > 1, got {r}")
    g = rng.generator()
    if g.random() >= p_r:
        return images
    r_prime = float(g.uniform(1.0 / r, r))
    return apply_relative_scale(images, r_prime, rng.child(1))


def sample_augmentation(images: torch.Tensor, p_aug: float, rng: RngState,
                        trace: Optional[BlockTrace] = None) -> torch.Tensor:
    """With probability ``p_aug`` apply one pool member to the whole image."""
    g = rng.generator()
    if g.random() >= p_aug:
        return images
    choice = AUG_POOL[int(g.integers(0, len(AUG_POOL)))]
    if choice == "flip":
        axis = "vertical" if g.random() < 0.5 else "horizontal"
        if trace is not None:
            trace.aug_choice, trace.aug_value = "flip:" + axis, None
        return ops.flip(images, axis)
    if choice == "hue":
        factor = float(g.uniform(-0.5, 0.5))
        out = ops.adjust_hue(images, factor)
    else:
        factor = float(g.uniform(0.0, 2.0))
        fn = {"brightness": ops.adjust_brightness,
              "contrast": ops.adjust_contrast,
              "saturation": ops.adjust_saturation}[choice]
        out = fn(images, factor)
    if trace is not None:
        trace.aug_choice, trace.aug_value = choice, factor
    return out


def ordered_factor_pairs(m: int) -> list[tuple[int, int]]:
    """All ordered (m_h, m_w) with m_h * m_w == m."""
    return [(a, m // a) for a in range(1, m + 1) if m % a == 0]


def sample_block_grid(m: int, rng: RngState) -> tuple[int, int]:
    """Uniform draw over the ordered factor pairs of ``m``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    pairs = ordered_factor_pairs(m)
    g = rng.generator()
    return pairs[int(g.integers(0, len(pairs)))]


def sample_cuts(extent: int, parts: int, rng: RngState) -> list[int]:
    """Random interior cut positions giving ``parts`` blocks along one axis.

    Blocks keep a minimum side of 16 pixels, or extent/(2*parts) when the
    canvas is too small for that, and never drop below 2 pixels.
    """
    if extent < 2 * parts:
        raise ValueError(f"cannot split extent {extent} into {parts} blocks of >= 2 pixels")
    if parts == 1:
        return [0, extent]
    min_side = max(2, min(16, extent // (2 * parts)))
    free = extent - parts * min_side
    g = rng.generator()
    offsets = sorted(float(u) for u in g.uniform(0.0, free, size=parts - 1))
    bounds = [0]
    for i, u in enumerate(offsets):
        bounds.append(int(round(u)) + min_side * (i + 1))
    bounds.append(extent)
    return bounds


def composite_transform(images: torch.Tensor, params: ScaleTransformParams, rng: RngState,
                        gate_per_block: bool = True,
                        trace: Optional[BlockTrace] = None) -> torch.Tensor:
    """Full composite: aug on the whole image, then per-block base ops.

    One shared draw set is applied across the leading batch dimension, so a
    ``(N,3,H,W)`` input gets one transform realization for all N images; use
    :class:`CompositeScaleTransform` with ``per_image=True`` for independent
    per-image draws.
    """
    h, w = images.shape[-2:]
    out = sample_augmentation(images, params.p_aug, rng.child(0), trace)

    grid_h, grid_w = sample_block_grid(params.m, rng.child(1))
    if h < 2 * grid_h or w < 2 * grid_w:
        raise ValueError(
            f"block grid {grid_h}x{grid_w} needs blocks >= 2 pixels on a {h}x{w} canvas")
    row_cuts = sample_cuts(h, grid_h, rng.child(2))
    col_cuts = sample_cuts(w, grid_w, rng.child(3))
    if trace is not None:
        trace.grid = (grid_h, grid_w)
        trace.row_cuts = row_cuts
        trace.col_cuts = col_cuts

    if params.m == 1 and params.p_r == 0.0:
        return out  # nothing left to draw

    blocks_out = out.clone()
    block_rng = rng.child(4)
    global_gate = None
    if not gate_per_block:
        global_gate = rng.child(5).generator().random() < params.p_r
    block_index = 0
    for i in range(grid_h):
        for j in range(grid_w):
            block = out[..., row_cuts[i]:row_cuts[i + 1], col_cuts[j]:col_cuts[j + 1]]
            brng = block_rng.child(block_index)
            g = brng.generator()
            gate = g.random() < params.p_r if gate_per_block else global_gate
            if gate:
                r_prime = float(g.uniform(1.0 / params.r, params.r))
                new_block = apply_relative_scale(block, r_prime, brng.child(1))
            else:
                r_prime = 1.0
                new_block = block
            if trace is not None:
                bh, bw = block.shape[-2:]
                if r_prime < 1.0:
                    ih = max(1, ops.round_half_even(r_prime * bh))
                    iw = max(1, ops.round_half_even(r_prime * bw))
                else:
                    ih, iw = bh, bw
                trace.blocks.append((bool(gate), r_prime, ih, iw))
            blocks_out[..., row_cuts[i]:row_cuts[i + 1], col_cuts[j]:col_cuts[j + 1]] = new_block
            block_index += 1
    return blocks_out


class CompositeScaleTransform:
    """Batch-callable composite transform for the attack loop.

    With ``per_image=False`` (default) one draw set is shared across the
    batch per call, the idiom reference attacks use for per-iteration input
    diversity; ``per_image=True`` derives an independent stream per image.
    """

    def __init__(self, params: ScaleTransformParams, per_image: bool = False,
                 gate_per_block: bool = True):
        self.params = params
        self.per_image = per_image
        self.gate_per_block = gate_per_block

    def __call__(self, batch: torch.Tensor, rng: RngState) -> torch.Tensor:
        if not self.per_image or batch.ndim == 3:
            return composite_transform(batch, self.params, rng,
                                       gate_per_block=self.gate_per_block)
        outs = [composite_transform(batch[i], self.params, rng.child(i),
                                    gate_per_block=self.gate_per_block)
                for i in range(batch.shape[0])]
        return torch.stack(outs)

    def get_params(self) -> dict:
        return {**self.params.to_dict(), "per_image": self.per_image,
                "gate_per_block": self.gate_per_block}
