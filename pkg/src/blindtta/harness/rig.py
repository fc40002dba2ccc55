"""Desk-scale model zoo: small models trained on the synthetic corpus.

The rig substitutes for a pretrained ImageNet zoo at desk scale: one
surrogate plus two or more victims of different architectures, trained on
the same task with standard augmentation recipes (random resized crops,
flips, color jitter for victims) and heterogeneous input preprocessing, the
way real zoos differ. Everything is seeded; the rig manifest hash is
reproducible bit-for-bit for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..models import ModelHandle, PreprocessSpec, build_architecture
from ..rng import RngState
from . import dataset as ds


class RigBuildError(RuntimeError):
    """A model missed the accuracy floor; carries the training curves."""

    def __init__(self, message: str, curves: Optional[dict] = None):
        super().__init__(message)
        self.curves = curves or {}


# per-architecture training recipe: (lr, epochs, color_jitter)
TRAIN_RECIPES = {
    "conv-plain": {"lr": 2e-3, "epochs": 18, "color_jitter": False},
    "conv-maxpool": {"lr": 1e-3, "epochs": 24, "color_jitter": True},
    "conv-depthwise": {"lr": 1e-3, "epochs": 20, "color_jitter": False},
    "patch-attention": {"lr": 1e-3, "epochs": 30, "color_jitter": False},
}

# per-role input preprocessing: victims view the canvas at their own scale
ROLE_RESIZE_FACTORS = (None, 1.375, 0.75, 1.25, 0.875)


@dataclass
class ZooEntry:
    model_id: str
    architecture: str
    role: str  # surrogate | victim
    weights_path: str
    preprocess: PreprocessSpec
    test_accuracy: float
    train_seed: int
    weights_sha256: str

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "architecture": self.architecture,
                "role": self.role, "weights_path": self.weights_path,
                "preprocess": self.preprocess.to_dict(),
                "test_accuracy": self.test_accuracy,
                "train_seed": self.train_seed,
                "weights_sha256": self.weights_sha256}

    @classmethod
    def from_dict(cls, d: dict) -> "ZooEntry":
        return cls(model_id=d["model_id"], architecture=d["architecture"],
                   role=d["role"], weights_path=d["weights_path"],
                   preprocess=PreprocessSpec.from_dict(d["preprocess"]),
                   test_accuracy=d["test_accuracy"], train_seed=d["train_seed"],
                   weights_sha256=d["weights_sha256"])


@dataclass
class RigManifest:
    seed: int
    image_size: int
    class_count: int
    train_size: int
    entries: list[ZooEntry]
    eval_manifest: str
    tune_manifest: str
    manifest_hash: str = ""

    def to_dict(self) -> dict:
        return {"seed": self.seed, "image_size": self.image_size,
                "class_count": self.class_count, "train_size": self.train_size,
                "entries": [e.to_dict() for e in self.entries],
                "eval_manifest": self.eval_manifest,
                "tune_manifest": self.tune_manifest,
                "manifest_hash": self.manifest_hash}


def _augment_batch(xb: torch.Tensor, gen: torch.Generator, color_jitter: bool) -> torch.Tensor:
    """Training-time random resized crop + flip (+ optional color jitter)."""
    _, _, h, w = xb.shape
    scale = float(torch.rand(1, generator=gen)) * 0.25 + 0.75
    nh, nw = int(round(h * scale)), int(round(w * scale))
    top = int(torch.randint(0, h - nh + 1, (1,), generator=gen))
    left = int(torch.randint(0, w - nw + 1, (1,), generator=gen))
    xb = F.interpolate(xb[:, :, top:top + nh, left:left + nw], size=(h, w),
                       mode="bilinear", align_corners=False)
    if torch.rand(1, generator=gen) < 0.5:
        xb = torch.flip(xb, dims=(3,))
    if color_jitter:
        fb = float(torch.rand(1, generator=gen)) * 0.9 + 0.6
        xb = xb * fb
        gray = (0.299 * xb[:, 0] + 0.587 * xb[:, 1] + 0.114 * xb[:, 2]).unsqueeze(1)
        fc = float(torch.rand(1, generator=gen)) * 0.9 + 0.6
        xb = fc * xb + (1 - fc) * gray.mean(dim=(2, 3), keepdim=True)
        fs = float(torch.rand(1, generator=gen)) * 0.9 + 0.6
        xb = fs * xb + (1 - fs) * gray
    return xb.clamp(0.0, 1.0)


def _train_model(module: torch.nn.Module, handle: ModelHandle,
                 xs: torch.Tensor, ys: torch.Tensor,
                 xs_te: torch.Tensor, ys_te: torch.Tensor,
                 seed: int, lr: float, epochs: int, color_jitter: bool,
                 batch_size: int = 64) -> tuple[float, list[float]]:
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 500)
    opt = torch.optim.Adam(module.parameters(), lr=lr)
    n = xs.shape[0]
    curve = []
    for epoch in range(epochs):
        module.train()
        perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed * 1000 + epoch))
        for i in range(0, n, batch_size):
            idx = perm[i:i + batch_size]
            xb = _augment_batch(xs[idx], gen, color_jitter)
            opt.zero_grad()
            loss = F.cross_entropy(handle.logits(xb), ys[idx])
            loss.backward()
            opt.step()
        module.eval()
        with torch.no_grad():
            acc = float((handle.predict(xs_te) == ys_te).float().mean())
        curve.append(acc)
    module.eval()
    return curve[-1], curve


def _weights_sha256(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def build_desk_rig(seed: int, out_dir, class_count: int = 10, train_size: int = 2400,
                   architectures: Sequence[str] = ("conv-plain", "conv-maxpool", "conv-depthwise"),
                   image_size: int = 48, eval_size: int = 400, tune_size: int = 50,
                   accuracy_floor: float = 0.8, max_attempts: int = 3) -> RigManifest:
    """Train the zoo, persist weights and datasets, write the rig manifest.

    The surrogate (first architecture) trains on the first half of the
    corpus; victims train on the second half with color jitter per their
    recipe, so the zoo has the model diversity real zoos exhibit. Every
    model must reach ``accuracy_floor`` on the held-out test set; training
    retries with derived seeds up to ``max_attempts`` before failing.
    """
    if len(architectures) < 2:
        raise ValueError("transfer requires >= 2 distinct models, got "
                         f"{len(architectures)} architecture(s)")
    out_dir = Path(out_dir)
    (out_dir / "weights").mkdir(parents=True, exist_ok=True)

    root = RngState(seed)
    xs_tr, ys_tr = ds.generate_corpus(root.child(0), train_size, image_size, class_count)
    xs_te, ys_te = ds.generate_corpus(root.child(1), max(eval_size, 200), image_size, class_count)
    half = train_size // 2

    entries: list[ZooEntry] = []
    for idx, arch in enumerate(architectures):
        recipe = TRAIN_RECIPES.get(arch, {"lr": 1e-3, "epochs": 20, "color_jitter": False})
        role = "surrogate" if idx == 0 else "victim"
        factor = ROLE_RESIZE_FACTORS[idx % len(ROLE_RESIZE_FACTORS)]
        resize = None if factor is None else (round(image_size * factor),) * 2
        preprocess = PreprocessSpec(resize=resize)
        data = (xs_tr[:half], ys_tr[:half]) if role == "surrogate" else (xs_tr[half:], ys_tr[half:])

        final_acc, curves, module = 0.0, {}, None
        for attempt in range(max_attempts):
            train_seed = seed * 1000 + idx * 10 + attempt
            module = build_architecture(arch, class_count)
            handle = ModelHandle(module, preprocess=preprocess)
            acc, curve = _train_model(module, handle, *data, xs_te, ys_te,
                                      seed=train_seed, **recipe)
            curves[f"attempt_{attempt}"] = curve
            if acc >= accuracy_floor:
                final_acc = acc
                break
        else:
            raise RigBuildError(
                f"{arch} reached only {max(c[-1] for c in curves.values()):.1%} "
                f"after {max_attempts} attempts (floor {accuracy_floor:.0%})", curves)

        model_id = f"{arch}-{idx}"
        weights_path = out_dir / "weights" / f"{model_id}.pt"
        torch.save(module.state_dict(), weights_path)
        entries.append(ZooEntry(
            model_id=model_id, architecture=arch, role=role,
            weights_path=str(weights_path.relative_to(out_dir)),
            preprocess=preprocess, test_accuracy=final_acc,
            train_seed=train_seed, weights_sha256=_weights_sha256(module)))

    eval_dir = out_dir / "data" / "eval"
    eval_manifest = ds.write_corpus(eval_dir, xs_te[:eval_size], ys_te[:eval_size],
                                    class_count, root.child(2))
    tune_images, tune_labels = ds.generate_corpus(root.child(3), tune_size, image_size, class_count)
    tune_dir = out_dir / "data" / "tune"
    tune_manifest = ds.write_corpus(tune_dir, tune_images, tune_labels,
                                    class_count, root.child(4))

    manifest = RigManifest(
        seed=seed, image_size=image_size, class_count=class_count,
        train_size=train_size, entries=entries,
        eval_manifest=str(eval_manifest.relative_to(out_dir)),
        tune_manifest=str(tune_manifest.relative_to(out_dir)))
    payload = json.dumps(manifest.to_dict(), sort_keys=True).encode()
    manifest.manifest_hash = hashlib.sha256(payload).hexdigest()
    with (out_dir / "rig.json").open("w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
    return manifest


def load_rig(rig_dir) -> RigManifest:
    rig_dir = Path(rig_dir)
    with (rig_dir / "rig.json").open() as fh:
        d = json.load(fh)
    manifest = RigManifest(
        seed=d["seed"], image_size=d["image_size"], class_count=d["class_count"],
        train_size=d["train_size"],
        entries=[ZooEntry.from_dict(e) for e in d["entries"]],
        eval_manifest=d["eval_manifest"], tune_manifest=d["tune_manifest"],
        manifest_hash=d["manifest_hash"])
    return manifest


def load_models(rig_dir, manifest: Optional[RigManifest] = None) -> dict[str, ModelHandle]:
    """Instantiate every zoo entry with its weights and preprocessing."""
    rig_dir = Path(rig_dir)
    manifest = manifest or load_rig(rig_dir)
    handles = {}
    for entry in manifest.entries:
        module = build_architecture(entry.architecture, manifest.class_count)
        state = torch.load(rig_dir / entry.weights_path, map_location="cpu", weights_only=True)
        module.load_state_dict(state)
        module.eval()
        handles[entry.model_id] = ModelHandle(
            module, model_id=entry.model_id, architecture=entry.architecture,
            role=entry.role, preprocess=entry.preprocess)
    return handles


def surrogate_and_victims(handles: dict[str, ModelHandle]) -> tuple[ModelHandle, list[ModelHandle]]:
    surrogate = next(h for h in handles.values() if h.role == "surrogate")
    victims = [h for h in handles.values() if h.role == "victim"]
    return surrogate, victims
