"""Basic image transformations under a unified intensity protocol.

Twelve routinely used transformations are parameterized by a single
intensity ``s`` in [0, 1]. A (kind, s) pair expands into one or more
directional variants (e.g. rotation clockwise / counterclockwise); every
variant is a deterministic image -> image map, so measurement code can
average over the full variant list at each intensity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import imageops as ops
from .rng import RngState

KINDS = (
    "rotation", "scaling", "shear", "perspective", "flip", "crop",
    "translate", "solarize", "hue", "brightness", "contrast", "saturation",
)

# directional variants per kind at a fixed intensity
VARIANT_COUNTS = {
    "rotation": 2, "scaling": 2, "shear": 4, "perspective": 1, "flip": 2,
    "crop": 1, "translate": 4, "solarize": 1, "hue": 2, "brightness": 2,
    "contrast": 2, "saturation": 2,
}

TWO_AXIS_KINDS = ("shear", "translate")
GEOMETRIC_KINDS = ("rotation", "scaling", "shear", "perspective", "flip", "crop", "translate")
COLOR_KINDS = ("solarize", "hue", "brightness", "contrast", "saturation")

_SIGN_COMBOS = ((1, 1), (-1, 1), (1, -1), (-1, -1))


@dataclass(frozen=True)
class IntensityGrid:
    """Equally spaced intensities spanning [0, 1]."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("intensity grid must hold at least one value")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def intensity_grid(count: int) -> IntensityGrid:
    """``count`` equally spaced intensities; [0] when count == 1."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if count == 1:
        return IntensityGrid((0.0,))
    return IntensityGrid(tuple(np.linspace(0.0, 1.0, count).tolist()))


def two_axis_grid(count: int, rng: RngState) -> list[tuple[float, float]]:
    """Seeded low-discrepancy (s1, s2) lattice over [0, 1]^2.

    R2 sequence with a random Cranley-Patterson shift, so the point set is
    well spread yet reproducible from the seed.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    g = rng.generator()
    shift = g.random(2)
    plastic = 1.32471795724474602596  # root of x^3 = x + 1
    alpha = np.array([1.0 / plastic, 1.0 / plastic ** 2])
    idx = np.arange(count)[:, None]
    pts = (shift[None, :] + idx * alpha[None, :]) % 1.0
    return [(float(a), float(b)) for a, b in pts]


@dataclass(frozen=True)
class TransformVariant:
    """One deterministic directional variant of a basic transformation."""

    kind: str
    s: float
    direction: int
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "s": self.s,
                           "direction": self.direction, "params": self.params})

    @classmethod
    def from_json(cls, text: str) -> "TransformVariant":
        d = json.loads(text)
        return cls(kind=d["kind"], s=float(d["s"]),
                   direction=int(d["direction"]), params=dict(d["params"]))


def _check_intensity(s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"intensity must be in [0, 1], got {s}")
    return float(s)


def enumerate_variants(kind: str, s: float,
                       grid_pair: Optional[tuple[float, float]] = None) -> list[TransformVariant]:
    """All directional variants of ``kind`` at intensity ``s``.

    Shear and translate are two-axis: their intensity is a pair
    ``grid_pair=(s1, s2)``, expanded into the four sign combinations.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown transform kind {kind!r}")
    s = _check_intensity(s)

    if kind in TWO_AXIS_KINDS:
        if grid_pair is None:
            raise ValueError(f"{kind} requires grid_pair=(s1, s2)")
        s1, s2 = (_check_intensity(v) for v in grid_pair)

    if kind == "rotation":
        return [TransformVariant(kind, s, d, {"angle": sign * s * 180.0})
                for d, sign in enumerate((1.0, -1.0))]
    if kind == "scaling":
        factor = 1.0 + 1.5 * s
        return [TransformVariant(kind, s, 0, {"factor": factor}),
                TransformVariant(kind, s, 1, {"factor": 1.0 / factor})]
    if kind == "shear":
        return [TransformVariant(kind, s, d,
                                 {"angle_x": sx * s1 * 90.0, "angle_y": sy * s2 * 90.0})
                for d, (sx, sy) in enumerate(_SIGN_COMBOS)]
    if kind == "perspective":
        return [TransformVariant(kind, s, 0, {"distortion_scale": s})]
    if kind == "flip":
        return [TransformVariant(kind, s, 0, {"axis": "vertical"}),
                TransformVariant(kind, s, 1, {"axis": "horizontal"})]
    if kind == "crop":
        return [TransformVariant(kind, s, 0, {"area_fraction": 1.0 - 0.95 * s})]
    if kind == "translate":
        return [TransformVariant(kind, s, d,
                                 {"frac_x": sx * s1, "frac_y": sy * s2})
                for d, (sx, sy) in enumerate(_SIGN_COMBOS)]
    if kind == "solarize":
        return [TransformVariant(kind, s, 0, {"threshold": 1.0 - s})]
    if kind == "hue":
        return [TransformVariant(kind, s, 0, {"factor": -0.5 * s}),
                TransformVariant(kind, s, 1, {"factor": 0.5 * s})]
    # brightness / contrast / saturation
    factor = 1.0 + 4.0 * s
    return [TransformVariant(kind, s, 0, {"factor": factor}),
            TransformVariant(kind, s, 1, {"factor": 1.0 / factor})]


def _perspective_homography(s: float, h: int, w: int) -> np.ndarray:
    """Deterministic keystone warp: top corners pulled inward by s*W/4."""
    dx = s * w / 4.0
    src = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)]
    dst = [(dx, 0.0), (w - 1.0 - dx, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)]
    return ops.solve_homography(np.array(src), np.array(dst))


def crop_side(area_fraction: float, h: int, w: int) -> int:
    """Side of the square crop with the requested area, clamped to fit."""
    side = ops.round_half_even(math.sqrt(area_fraction * h * w))
    return max(1, min(side, min(h, w)))


def apply_variant(variant: TransformVariant, images: torch.Tensor) -> torch.Tensor:
    """Execute a variant on a ``(3,H,W)`` image or ``(N,3,H,W)`` batch.

    Scaling returns the resized canvas (callers needing fixed dimensions
    compose with pad/crop); crop returns the center square patch; all color
    variants preserve H x W. Differentiable w.r.t. the input.
    """
    kind = variant.kind
    p = variant.params
    h, w = images.shape[-2:]

    if kind == "rotation":
        if p["angle"] == 0.0:
            return images
        return ops.warp_affine(images, ops.rotation_inverse_matrix(p["angle"])).clamp(0.0, 1.0)
    if kind == "scaling":
        f = p["factor"]
        if f >= 1.0:
            size = (ops.round_half_even(f * h), ops.round_half_even(f * w))
        else:
            size = (ops.round_half_even(h * f), ops.round_half_even(w * f))
        if size[0] < 1 or size[1] < 1:
            raise ValueError(f"scaling factor {f} collapses {h}x{w} below 1 pixel")
        return ops.resize(images, size).clamp(0.0, 1.0)
    if kind == "shear":
        if p["angle_x"] == 0.0 and p["angle_y"] == 0.0:
            return images
        return ops.warp_affine(
            images, ops.shear_inverse_matrix(p["angle_x"], p["angle_y"])).clamp(0.0, 1.0)
    if kind == "perspective":
        if p["distortion_scale"] == 0.0:
            return images
        return ops.warp_perspective(
            images, _perspective_homography(p["distortion_scale"], h, w)).clamp(0.0, 1.0)
    if kind == "flip":
        return ops.flip(images, p["axis"])
    if kind == "crop":
        side = crop_side(p["area_fraction"], h, w)
        top = (h - side) // 2
        left = (w - side) // 2
        return images[..., top:top + side, left:left + side]
    if kind == "translate":
        ox = p["frac_x"] * h  # offsets are (s1*H, s2*W) along x and y
        oy = p["frac_y"] * w
        if ox == 0.0 and oy == 0.0:
            return images
        return ops.warp_affine(images, ops.translate_inverse_matrix(ox, oy)).clamp(0.0, 1.0)
    if kind == "solarize":
        return ops.solarize(images, p["threshold"])
    if kind == "hue":
        return ops.adjust_hue(images, p["factor"])
    if kind == "brightness":
        return ops.adjust_brightness(images, p["factor"])
    if kind == "contrast":
        return ops.adjust_contrast(images, p["factor"])
    if kind == "saturation":
        return ops.adjust_saturation(images, p["factor"])
    raise ValueError(f"unknown transform kind {kind!r}")


def warp_back(variant: TransformVariant, heatmap: torch.Tensor,
              original_hw: tuple[int, int]) -> torch.Tensor:
    """Map a heatmap computed on a transformed image back to source coordinates.

    Invertible geometric variants are inverted exactly; crop and scaling are
    resized back to the original frame; color variants leave coordinates
    untouched.
    """
    kind = variant.kind
    p = variant.params
    if kind in COLOR_KINDS:
        return heatmap
    if kind in ("scaling", "crop"):
        return ops.resize(heatmap, original_hw)
    if kind == "flip":
        return ops.flip(heatmap, p["axis"])
    if kind == "rotation":
        return ops.warp_affine(heatmap, ops.rotation_inverse_matrix(-p["angle"]))
    if kind == "shear":
        inv_map = ops.shear_inverse_matrix(p["angle_x"], p["angle_y"])
        m = np.vstack([inv_map, [0.0, 0.0, 1.0]])
        sampling = np.linalg.inv(m)[:2, :]  # sample with the forward map to undo
        return ops.warp_affine(heatmap, sampling)
    if kind == "translate":
        ox = p["frac_x"] * original_hw[0]
        oy = p["frac_y"] * original_hw[1]
        return ops.warp_affine(heatmap, ops.translate_inverse_matrix(-ox, -oy))
    if kind == "perspective":
        h, w = original_hw
        hom = _perspective_homography(p["distortion_scale"], h, w)
        return ops.warp_perspective(heatmap, np.linalg.inv(hom))
    raise ValueError(f"unknown transform kind {kind!r}")
