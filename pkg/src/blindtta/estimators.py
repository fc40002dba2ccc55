"""Blind measurement battery for transfer attacks.

Everything here is computable from the surrogate side alone (plus victim
handles where the metric explicitly evaluates them):

* kNN-overlap alignment between two representation sets,
* self-transferability of adversarial examples under basic transformations,
* black-box transferability (expected target-probability gap),
* the three design-consensus metrics: diversity (loss under transform),
  Grad-CAM attention deviation, and gradient magnitude.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import basics
from .attack import AttackResult
from .models import ModelHandle, UnsupportedModelError
from .rng import RngState

INPUT_TAGS = ("clean", "adversarial", "transformed-adversarial")


@dataclass
class RepresentationSet:
    """b x d matrix of penultimate-layer features."""

    vectors: np.ndarray
    source_model: str = ""
    input_tag: str = "clean"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"expected a b x d matrix, got shape {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise ValueError("representation matrix contains non-finite values")
        if self.input_tag not in INPUT_TAGS:
            raise ValueError(f"input_tag must be one of {INPUT_TAGS}")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class MetricReport:
    """One measurement with its per-item breakdown and provenance."""

    metric_name: str
    value: float
    breakdown: list[float] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"{self.metric_name}: value is not finite")

    def to_json(self) -> str:
        return json.dumps({"metric_name": self.metric_name, "value": self.value,
                           "breakdown": list(self.breakdown),
                           "provenance": self.provenance}, indent=2)


def extract_representations(model: ModelHandle, images: torch.Tensor,
                            input_tag: str = "clean",
                            batch_size: int = 128) -> RepresentationSet:
    """Penultimate features for a batch, in input order."""
    chunks = []
    for i in range(0, images.shape[0], batch_size):
        chunks.append(model.penultimate(images[i:i + batch_size]).cpu().numpy())
    return RepresentationSet(np.concatenate(chunks, axis=0),
                             source_model=model.model_id, input_tag=input_tag)


def _as_matrix(reps) -> np.ndarray:
    if isinstance(reps, RepresentationSet):
        return reps.vectors
    return np.asarray(reps, dtype=np.float64)


def _knn_index_sets(vectors: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbor indices per row under cosine distance.

    Ties break toward the lower index (stable sort on negated similarity).
    """
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.clip(norms, 1e-12, None)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    order = np.argsort(-sim, axis=1, kind="stable")
    return order[:, :k]


def knn_overlap_alignment(a, b, k: int) -> float:
    """Mean per-index overlap of the two sets' k-nearest-neighbor index sets."""
    va, vb = _as_matrix(a), _as_matrix(b)
    if va.shape[0] != vb.shape[0]:
        raise ValueError(f"set sizes differ: {va.shape[0]} vs {vb.shape[0]}")
    n = va.shape[0]
    if n < 2:
        raise ValueError("alignment needs at least 2 rows")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < b; got k={k}, b={n}")
    ka = _knn_index_sets(va, k)
    kb = _knn_index_sets(vb, k)
    overlaps = [len(set(ka[i]) & set(kb[i])) / k for i in range(n)]
    return float(np.mean(overlaps))


def _target_probs(model: ModelHandle, images: torch.Tensor, y_t: torch.Tensor,
                  batch_size: int = 256) -> torch.Tensor:
    y_t = torch.as_tensor(y_t, dtype=torch.long)
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            probs = F.softmax(model.logits(images[i:i + batch_size]), dim=-1)
            outs.append(probs.gather(1, y_t[i:i + batch_size].unsqueeze(1)).squeeze(1))
    return torch.cat(outs)


def self_transferability(model: ModelHandle, kind: str, x_adv: torch.Tensor,
                         x: torch.Tensor, y_t: torch.Tensor,
                         grid: basics.IntensityGrid,
                         pair_seed: int = 0) -> float:
    """Mean target-probability gain under every variant of ``kind`` over ``grid``.

    Two-axis kinds draw their (s1, s2) pairs from the seeded low-discrepancy
    lattice, one pair per grid point.
    """
    if x_adv.shape != x.shape:
        raise ValueError("x_adv and x shapes differ")
    pairs: Optional[list] = None
    if kind in basics.TWO_AXIS_KINDS:
        pairs = basics.two_axis_grid(len(grid), RngState(pair_seed))
    gaps = []
    for idx, s in enumerate(grid):
        pair = pairs[idx] if pairs is not None else None
        for variant in basics.enumerate_variants(kind, s, grid_pair=pair):
            t_adv = basics.apply_variant(variant, x_adv)
            t_clean = basics.apply_variant(variant, x)
            gap = _target_probs(model, t_adv, y_t) - _target_probs(model, t_clean, y_t)
            gaps.append(float(gap.mean()))
    return float(np.mean(gaps))


def blackbox_transferability(models: Sequence[ModelHandle], x_adv: torch.Tensor,
                             x: torch.Tensor, y_t: torch.Tensor) -> float:
    """Expected target-probability gap, over models and samples."""
    if len(models) < 1:
        raise ValueError("need at least one model")
    gaps = []
    for model in models:
        gap = _target_probs(model, x_adv, y_t) - _target_probs(model, x, y_t)
        gaps.append(float(gap.mean()))
    return float(np.mean(gaps))


def diversity_metric(model: ModelHandle, transform, images: torch.Tensor,
                     labels: torch.Tensor, rng: Optional[RngState] = None) -> float:
    """Mean cross-entropy of the model on transformed images vs true labels."""
    rng = rng or RngState(0)
    labels = torch.as_tensor(labels, dtype=torch.long)
    with torch.no_grad():
        transformed = transform(images, rng)
        logits = model.logits(transformed)
        return float(F.cross_entropy(logits, labels, reduction="mean"))


def grad_cam(model: ModelHandle, image: torch.Tensor, label: int) -> torch.Tensor:
    """Grad-CAM heatmap in [0, 1] at the conv-map resolution.

    Channel weights are the spatially averaged gradients of the label logit;
    the heatmap is the rectified weighted channel sum, min-max normalized.
    A zero-gradient map yields an all-zero heatmap.
    """
    single = image.ndim == 3
    batch = image.unsqueeze(0) if single else image
    logits, fmap = model.conv_features(batch, requires_grad=True)
    target = logits[:, int(label)].sum()
    grads = torch.autograd.grad(target, fmap, allow_unused=False)[0]
    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * fmap).sum(dim=1, keepdim=True)).detach()
    lo = cam.flatten(1).min(dim=1).values.view(-1, 1, 1, 1)
    hi = cam.flatten(1).max(dim=1).values.view(-1, 1, 1, 1)
    span = (hi - lo)
    cam = torch.where(span > 0, (cam - lo) / span.clamp_min(1e-12), torch.zeros_like(cam))
    return cam[0] if single else cam


def mask_iou(mask_a: torch.Tensor, mask_b: torch.Tensor) -> float:
    """IoU of two boolean masks; both empty counts as perfect agreement."""
    inter = (mask_a & mask_b).sum().item()
    union = (mask_a | mask_b).sum().item()
    if union == 0:
        return 1.0
    return inter / union


def attention_deviation(model: ModelHandle, image: torch.Tensor,
                        variant: basics.TransformVariant, label: int,
                        threshold: float = 0.5) -> float:
    """IoU of thresholded Grad-CAM maps before/after a transformation.

    The transformed map is warped back to source coordinates when the
    variant is invertible geometry; otherwise the comparison happens in a
    frame resized to the original.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    h, w = image.shape[-2:]
    cam_orig = grad_cam(model, image, label)
    cam_orig = F.interpolate(cam_orig.unsqueeze(0), size=(h, w), mode="bilinear",
                             align_corners=False)[0]
    transformed = basics.apply_variant(variant, image)
    cam_trans = grad_cam(model, transformed, label)
    th, tw = transformed.shape[-2:]
    cam_trans = F.interpolate(cam_trans.unsqueeze(0), size=(th, tw), mode="bilinear",
                              align_corners=False)[0]
    cam_back = basics.warp_back(variant, cam_trans, (h, w))
    if cam_back.shape[-2:] != (h, w):
        cam_back = F.interpolate(cam_back.unsqueeze(0), size=(h, w), mode="bilinear",
                                 align_corners=False)[0]
    return mask_iou(cam_orig[0] >= threshold, cam_back[0] >= threshold)


def gradient_magnitude_metric(result: AttackResult) -> float:
    """Mean of the per-iteration mean gradient l2 norms."""
    if not result.grad_norm_trace:
        raise ValueError("grad_norm_trace is empty")
    return float(np.mean(result.grad_norm_trace))
