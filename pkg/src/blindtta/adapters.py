"""Attack-side adapters around the basic transformation kit.

The attack engine requires shape-preserving transforms, while several basic
kinds change the canvas (scaling) or return a patch (crop). The adapter
draws a random intensity and directional variant per call and restores the
original dimensions: reduced canvases are zero-padded back at a random
offset, enlarged canvases are randomly cropped back, and crop patches are
zero-padded back around the center.
"""

from __future__ import annotations

import torch

from . import basics
from .rng import RngState


class BasicTransformAttack:
    """Gated random-intensity single-kind transform for the attack loop.

    With probability ``prob`` draw s' ~ U(0, s_max) and a uniformly random
    directional variant of ``kind``, apply it, and restore dimensions.
    """

    def __init__(self, kind: str, s_max: float = 0.8, prob: float = 0.9):
        if kind not in basics.KINDS:
            raise ValueError(f"unknown transform kind {kind!r}")
        if not 0.0 <= s_max <= 1.0:
            raise ValueError(f"s_max must be in [0, 1], got {s_max}")
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"prob must be in [0, 1], got {prob}")
        self.kind = kind
        self.s_max = s_max
        self.prob = prob

    def get_params(self) -> dict:
        return {"kind": self.kind, "s_max": self.s_max, "prob": self.prob}

    def __call__(self, batch: torch.Tensor, rng: RngState) -> torch.Tensor:
        g = rng.generator()
        if g.random() >= self.prob:
            return batch
        s = float(g.uniform(0.0, self.s_max))
        pair = None
        if self.kind in basics.TWO_AXIS_KINDS:
            pair = (float(g.uniform(0.0, self.s_max)), float(g.uniform(0.0, self.s_max)))
        variants = basics.enumerate_variants(self.kind, s, grid_pair=pair)
        variant = variants[int(g.integers(0, len(variants)))]
        h, w = batch.shape[-2:]
        out = basics.apply_variant(variant, batch)
        return _restore_dims(out, (h, w), g)


def _restore_dims(images: torch.Tensor, target_hw: tuple[int, int],
                  g) -> torch.Tensor:
    """Pad or crop back to ``target_hw`` (random offsets for diversity)."""
    h, w = target_hw
    oh, ow = images.shape[-2:]
    if (oh, ow) == (h, w):
        return images
    if oh >= h and ow >= w:
        top = int(g.integers(0, oh - h + 1))
        left = int(g.integers(0, ow - w + 1))
        return images[..., top:top + h, left:left + w]
    if oh <= h and ow <= w:
        top = int(g.integers(0, h - oh + 1))
        left = int(g.integers(0, w - ow + 1))
        shape = list(images.shape)
        shape[-2], shape[-1] = h, w
        out = images.new_zeros(shape)
        out[..., top:top + oh, left:left + ow] = images
        return out
    # mixed case (one side grew, one shrank): crop then pad
    ch, cw = min(oh, h), min(ow, w)
    top = int(g.integers(0, oh - ch + 1))
    left = int(g.integers(0, ow - cw + 1))
    cropped = images[..., top:top + ch, left:left + cw]
    return _restore_dims(cropped, target_hw, g)
