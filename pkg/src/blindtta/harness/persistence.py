"""Persisting and reloading attack artifacts.

Adversarial images persist as lossless 8-bit PNGs (round-to-nearest
quantization, documented allowance of 1/255 on the budget) next to a JSON
manifest holding the attack config, per-image distances, and traces. An
optional float32 residual sidecar enables exact replay.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..attack import AttackConfig, AttackResult
from .dataset import decode_image, save_image_png


def save_attack_artifacts(out_dir, result: AttackResult, x_clean: torch.Tensor,
                          config: AttackConfig, exact_replay: bool = False) -> Path:
    """Write PNGs + manifest (+ optional residual sidecar); returns manifest path."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "adv"
    img_dir.mkdir(parents=True, exist_ok=True)
    x_adv = result.x_adv.detach().clamp(0, 1)
    names = []
    for i in range(x_adv.shape[0]):
        name = f"adv_{i:05d}.png"
        save_image_png(x_adv[i], img_dir / name)
        names.append(name)
    linf = (x_adv - x_clean).abs().flatten(1).max(dim=1).values.tolist()
    manifest = {
        "config": config.to_dict(),
        "images": names,
        "quantization": "round-to-nearest 8-bit",
        "per_image_linf": linf,
        "grad_norm_trace": result.grad_norm_trace,
        "loss_trace": result.loss_trace,
        "budget_trace": result.budget_trace,
        "elapsed_seconds": result.elapsed_seconds,
    }
    if exact_replay:
        residual = (x_adv - x_adv.mul(255).round().div(255)).numpy().astype(np.float32)
        np.savez_compressed(out_dir / "residual.npz", residual=residual)
        manifest["residual"] = "residual.npz"
    path = out_dir / "adv_manifest.json"
    with path.open("w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def load_attack_artifacts(out_dir) -> tuple[torch.Tensor, dict]:
    """Reload persisted adversarial images (quantized, or exact with sidecar)."""
    out_dir = Path(out_dir)
    with (out_dir / "adv_manifest.json").open() as fh:
        manifest = json.load(fh)
    images = torch.stack([decode_image(out_dir / "adv" / name)
                          for name in manifest["images"]])
    if manifest.get("residual"):
        residual = np.load(out_dir / manifest["residual"])["residual"]
        images = (images + torch.from_numpy(residual)).clamp(0, 1)
    return images, manifest
