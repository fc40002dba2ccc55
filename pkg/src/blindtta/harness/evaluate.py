"""Victim evaluation: targeted and untargeted success rates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch

from ..models import ModelHandle
from .dataset import DatasetManifest, decode_image


@dataclass
class VictimScore:
    model_id: str
    tsuc: float          # % of samples predicted as the target label
    usuc: float          # % of clean-correct samples broken by the AE
    targeted_hits: int
    clean_correct: int
    broken: int


@dataclass
class EvalReport:
    per_victim: list[VictimScore]
    sample_count: int
    seconds_per_image: float = 0.0
    config_echo: dict = field(default_factory=dict)

    @property
    def mean_tsuc(self) -> float:
        return sum(v.tsuc for v in self.per_victim) / len(self.per_victim)

    @property
    def mean_usuc(self) -> float:
        return sum(v.usuc for v in self.per_victim) / len(self.per_victim)

    def to_dict(self) -> dict:
        return {"sample_count": self.sample_count,
                "seconds_per_image": self.seconds_per_image,
                "mean_tsuc": self.mean_tsuc, "mean_usuc": self.mean_usuc,
                "per_victim": [vars(v) for v in self.per_victim],
                "config_echo": self.config_echo}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(victims: Sequence[ModelHandle], x_adv: torch.Tensor,
             manifest: DatasetManifest, x_clean: Optional[torch.Tensor] = None,
             config_echo: Optional[dict] = None) -> EvalReport:
    """Score adversarial images against each victim.

    tSuc counts samples the victim classifies as the target label. uSuc is
    computed among the samples the victim classifies correctly when clean:
    the share whose prediction the adversarial image breaks (any wrong
    label).
    """
    if x_adv.shape[0] != len(manifest):
        raise ValueError(f"batch size {x_adv.shape[0]} != manifest size {len(manifest)}")
    if x_clean is None:
        x_clean = torch.stack([decode_image(e.image_path, manifest.image_size)
                               for e in manifest.entries])
    if x_clean.shape != x_adv.shape:
        raise ValueError("clean and adversarial batch shapes differ")

    true = manifest.true_labels
    target = manifest.target_labels
    n = len(manifest)
    scores = []
    for victim in victims:
        pred_adv = victim.predict(x_adv)
        pred_clean = victim.predict(x_clean)
        targeted = pred_adv == target
        clean_correct = pred_clean == true
        broken = clean_correct & (pred_adv != true)
        cc = int(clean_correct.sum())
        scores.append(VictimScore(
            model_id=victim.model_id,
            tsuc=100.0 * float(targeted.float().mean()),
            usuc=100.0 * float(broken.sum()) / cc if cc else 0.0,
            targeted_hits=int(targeted.sum()),
            clean_correct=cc,
            broken=int(broken.sum())))
    return EvalReport(per_victim=scores, sample_count=n,
                      config_echo=config_echo or {})
