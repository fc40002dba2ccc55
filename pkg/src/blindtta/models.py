"""Model handles and the small architectures used by the desk rig.

A :class:`ModelHandle` wraps a torch module together with its input
preprocessing (resize + normalization) and the hook points needed by the
measurement code: the penultimate feature vector (input of the final linear
head) and the last convolutional feature map. Attacks craft perturbations
in raw [0, 1] pixel space; each model applies its own preprocessing inside
the handle, differentiably.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F


class UnsupportedModelError(RuntimeError):
    """The wrapped module does not expose the hooks a measurement needs."""


@dataclass
class PreprocessSpec:
    """Per-model input pipeline: optional resize then normalization."""

    resize: Optional[tuple[int, int]] = None
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def to_dict(self) -> dict:
        return {"resize": list(self.resize) if self.resize else None,
                "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessSpec":
        resize = tuple(d["resize"]) if d.get("resize") else None
        return cls(resize=resize, mean=tuple(d.get("mean", (0, 0, 0))),
                   std=tuple(d.get("std", (1, 1, 1))))


class ModelHandle:
    """Classifier + preprocessing + feature hooks, callable on raw pixels."""

    def __init__(self, module: nn.Module, model_id: str = "model",
                 architecture: str = "", role: str = "victim",
                 preprocess: Optional[PreprocessSpec] = None,
                 head: Optional[nn.Module] = None,
                 conv_block: Optional[nn.Module] = None):
        self.module = module.eval()
        self.model_id = model_id
        self.architecture = architecture
        self.role = role
        self.preprocess = preprocess or PreprocessSpec()
        self._head = head if head is not None else getattr(module, "head", None)
        self._conv_block = conv_block if conv_block is not None else getattr(module, "body", None)

    def _apply_preprocess(self, x: torch.Tensor) -> torch.Tensor:
        if self.preprocess.resize is not None:
            x = F.interpolate(x, size=self.preprocess.resize,
                              mode="bilinear", align_corners=False)
        mean = x.new_tensor(self.preprocess.mean).view(1, 3, 1, 1)
        std = x.new_tensor(self.preprocess.std).view(1, 3, 1, 1)
        return (x - mean) / std

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.logits(x)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        out = self.module(self._apply_preprocess(x))
        return out.squeeze(0) if single else out

    def predict(self, x: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.logits(x).argmax(dim=-1)

    def target_probability(self, x: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            probs = F.softmax(self.logits(x), dim=-1)
        return probs.gather(1, torch.as_tensor(y_t, dtype=torch.long).unsqueeze(1)).squeeze(1)

    def penultimate(self, x: torch.Tensor) -> torch.Tensor:
        """Features feeding the final linear head, shape (N, d)."""
        if self._head is None:
            raise UnsupportedModelError(
                f"{self.model_id}: no head module to hook penultimate features")
        captured: list[torch.Tensor] = []

        def hook(_mod, inputs, _out):
            captured.append(inputs[0])

        handle = self._head.register_forward_hook(hook)
        try:
            with torch.no_grad():
                self.logits(x)
        finally:
            handle.remove()
        return captured[0].flatten(1)

    def conv_features(self, x: torch.Tensor, requires_grad: bool = False):
        """(logits, last conv feature map); map keeps grad when requested."""
        if self._conv_block is None:
            raise UnsupportedModelError(
                f"{self.model_id}: no convolutional block to hook")
        captured: list[torch.Tensor] = []

        def hook(_mod, _inputs, output):
            if requires_grad:
                output.retain_grad()
            captured.append(output)

        handle = self._conv_block.register_forward_hook(hook)
        try:
            logits = self.logits(x)
        finally:
            handle.remove()
        fmap = captured[0]
        if fmap.ndim != 4:
            raise UnsupportedModelError(
                f"{self.model_id}: hooked feature map is not convolutional "
                f"(got shape {tuple(fmap.shape)})")
        return logits, fmap


# --------------------------------------------------------------------------
# desk architectures: small, adaptive-pooled, variable input size
# --------------------------------------------------------------------------

class ConvPlain(nn.Module):
    """3x3 conv stack with strided downsampling."""

    def __init__(self, classes: int = 10, width: int = 16):
        super().__init__()
        w = width
        self.body = nn.Sequential(
            nn.Conv2d(3, w, 3, padding=1), nn.BatchNorm2d(w), nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, padding=1, stride=2), nn.BatchNorm2d(2 * w), nn.ReLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1, stride=2), nn.BatchNorm2d(2 * w), nn.ReLU(),
        )
        self.head = nn.Linear(2 * w, classes)

    def forward(self, x):
        z = F.adaptive_avg_pool2d(self.body(x), 1).flatten(1)
        return self.head(z)


class ConvMaxPool(nn.Module):
    """5x5 kernels with max pooling between stages."""

    def __init__(self, classes: int = 10, width: int = 20):
        super().__init__()
        w = width
        self.body = nn.Sequential(
            nn.Conv2d(3, w, 5, padding=2), nn.BatchNorm2d(w), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 5, padding=2), nn.BatchNorm2d(2 * w), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(2 * w, 3 * w, 3, padding=1), nn.BatchNorm2d(3 * w), nn.ReLU(),
        )
        self.head = nn.Linear(3 * w, classes)

    def forward(self, x):
        z = F.adaptive_avg_pool2d(self.body(x), 1).flatten(1)
        return self.head(z)


class ConvDepthwise(nn.Module):
    """Depthwise-separable stack."""

    def __init__(self, classes: int = 10, width: int = 24):
        super().__init__()
        w = width

        def dw(cin, cout, stride=1):
            return nn.Sequential(
                nn.Conv2d(cin, cin, 3, padding=1, stride=stride, groups=cin),
                nn.Conv2d(cin, cout, 1), nn.BatchNorm2d(cout), nn.ReLU())

        self.body = nn.Sequential(
            nn.Conv2d(3, w, 3, padding=1), nn.BatchNorm2d(w), nn.ReLU(),
            dw(w, 2 * w, 2), dw(2 * w, 2 * w), dw(2 * w, 2 * w, 2),
        )
        self.head = nn.Linear(2 * w, classes)

    def forward(self, x):
        z = F.adaptive_avg_pool2d(self.body(x), 1).flatten(1)
        return self.head(z)


class PatchAttention(nn.Module):
    """Tiny transformer: conv patch embedding, one attention block, mean pool.

    No positional embedding, so any input size works; fine for the rig's
    translation-invariant classes.
    """

    def __init__(self, classes: int = 10, width: int = 48, patch: int = 8, heads: int = 4):
        super().__init__()
        self.body = nn.Conv2d(3, width, patch, stride=patch)
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 2 * width), nn.GELU(),
                                 nn.Linear(2 * width, width))
        self.head = nn.Linear(width, classes)

    def forward(self, x):
        z = self.body(x)                      # (N, C, H', W')
        tokens = z.flatten(2).transpose(1, 2)  # (N, H'*W', C)
        y = self.norm1(tokens)
        tokens = tokens + self.attn(y, y, y, need_weights=False)[0]
        tokens = tokens + self.mlp(self.norm2(tokens))
        return self.head(tokens.mean(dim=1))


ARCHITECTURES = {
    "conv-plain": ConvPlain,
    "conv-maxpool": ConvMaxPool,
    "conv-depthwise": ConvDepthwise,
    "patch-attention": PatchAttention,
}


def build_architecture(tag: str, classes: int) -> nn.Module:
    if tag not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {tag!r}, choose from {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[tag](classes=classes)
