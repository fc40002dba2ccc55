"""Dataset manifests, image loading, and the synthetic desk corpus.

A dataset is a CSV manifest (``image_path,true_label,target_label``) plus
image files. The desk corpus is generated procedurally: ten classes of
local motifs stamped at random positions and scales over a noisy
low-frequency background, so that small CNNs both learn it well and remain
attackable at the standard perturbation budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ..rng import RngState


@dataclass
class ManifestEntry:
    image_path: str
    true_label: int
    target_label: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    image_size: tuple[int, int]
    class_count: int

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def true_labels(self) -> torch.Tensor:
        return torch.tensor([e.true_label for e in self.entries], dtype=torch.long)

    @property
    def target_labels(self) -> torch.Tensor:
        return torch.tensor([e.target_label for e in self.entries], dtype=torch.long)


def load_manifest(path, image_size: tuple[int, int], class_count: int) -> DatasetManifest:
    """Parse and validate a manifest CSV."""
    path = Path(path)
    entries = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"image_path", "true_label", "target_label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: manifest header must contain {sorted(required)}")
        for idx, row in enumerate(reader):
            true = int(row["true_label"])
            target = int(row["target_label"])
            if target == true:
                raise ValueError(f"{path}: entry {idx} has target_label == true_label ({true})")
            if not 0 <= true < class_count or not 0 <= target < class_count:
                raise ValueError(f"{path}: entry {idx} label out of range for {class_count} classes")
            image_path = (path.parent / row["image_path"]).resolve()
            if not image_path.exists():
                raise FileNotFoundError(f"{path}: entry {idx} image missing: {image_path}")
            entries.append(ManifestEntry(str(image_path), true, target))
    if not entries:
        raise ValueError(f"{path}: manifest is empty")
    return DatasetManifest(entries, image_size, class_count)


def decode_image(path, image_size: Optional[tuple[int, int]] = None) -> torch.Tensor:
    """Decode to a (3, H, W) float tensor in [0, 1], optionally resized.

    Resizing is bilinear with antialiasing, matching common evaluation
    loaders to within a quantization step.
    """
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    tensor = torch.from_numpy(arr).permute(2, 0, 1)
    if image_size is not None and tuple(tensor.shape[-2:]) != tuple(image_size):
        tensor = F.interpolate(tensor.unsqueeze(0), size=image_size, mode="bilinear",
                               align_corners=False, antialias=True).squeeze(0).clamp(0, 1)
    return tensor


def load_dataset(manifest_path, image_size: tuple[int, int],
                 class_count: int) -> tuple[DatasetManifest, torch.Tensor]:
    """Manifest plus the decoded (N, 3, H, W) batch."""
    manifest = load_manifest(manifest_path, image_size, class_count)
    images = torch.stack([decode_image(e.image_path, image_size) for e in manifest.entries])
    return manifest, images


# --------------------------------------------------------------------------
# synthetic desk corpus
# --------------------------------------------------------------------------

CLASS_COUNT = 10


def motif_mask(kind: int, side: int) -> np.ndarray:
    """Rasterized stamp for one of the ten motif classes."""
    m = np.zeros((side, side), dtype=np.float32)
    c = (side - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    w = max(1, side // 5)
    if kind == 0:    # plus
        m[(np.abs(yy - c) < w) | (np.abs(xx - c) < w)] = 1
    elif kind == 1:  # diagonal cross
        m[(np.abs(yy - xx) < w) | (np.abs(yy + xx - (side - 1)) < w)] = 1
    elif kind == 2:  # disk
        m[(yy - c) ** 2 + (xx - c) ** 2 <= (0.45 * side) ** 2] = 1
    elif kind == 3:  # ring
        r2 = (yy - c) ** 2 + (xx - c) ** 2
        m[(r2 <= (0.48 * side) ** 2) & (r2 >= (0.28 * side) ** 2)] = 1
    elif kind == 4:  # square outline
        m[(yy < w) | (yy >= side - w) | (xx < w) | (xx >= side - w)] = 1
    elif kind == 5:  # filled triangle
        m[(yy >= np.abs(2 * (xx - c))) & (yy <= side - 1)] = 1
    elif kind == 6:  # horizontal bar
        m[np.abs(yy - c) < w] = 1
    elif kind == 7:  # vertical bar
        m[np.abs(xx - c) < w] = 1
    elif kind == 8:  # checkerboard
        m[((yy // max(1, side // 4) + xx // max(1, side // 4)) % 2 == 0)] = 1
    else:            # chevron
        m[(np.abs(yy - np.abs(2 * (xx - c))) < 1.5 * w)] = 1
    return m


def generate_corpus(rng: RngState, count: int, image_size: int,
                    class_count: int = CLASS_COUNT) -> tuple[torch.Tensor, torch.Tensor]:
    """Procedural motif-scatter images, labels balanced at random."""
    if class_count > CLASS_COUNT:
        raise ValueError(f"at most {CLASS_COUNT} motif classes are defined")
    g = rng.generator()
    side_lo, side_hi = image_size // 4, max(image_size // 4 + 2, int(image_size * 0.45))
    xs = np.zeros((count, 3, image_size, image_size), dtype=np.float32)
    ys = g.integers(0, class_count, size=count)
    grid = max(4, image_size // 8)
    for i in range(count):
        cls = int(ys[i])
        low = g.normal(0.0, 1.0, size=(3, grid, grid)).astype(np.float32)
        low_t = torch.from_numpy(low).unsqueeze(0)
        bg = 0.5 + 0.08 * F.interpolate(low_t, size=(image_size, image_size),
                                        mode="bilinear", align_corners=False)[0].numpy()
        img = bg + g.normal(0.0, 0.06, size=(3, image_size, image_size))
        for _ in range(int(g.integers(5, 9))):
            side = int(g.integers(side_lo, side_hi))
            stamp = motif_mask(cls, side)
            amp = g.uniform(0.20, 0.38) * (1.0 if g.random() < 0.5 else -1.0)
            tint = g.uniform(0.6, 1.4, size=3)
            top = int(g.integers(0, image_size - side + 1))
            left = int(g.integers(0, image_size - side + 1))
            img[:, top:top + side, left:left + side] += amp * tint[:, None, None] * stamp[None]
        xs[i] = np.clip(img, 0.0, 1.0)
    return torch.from_numpy(xs), torch.from_numpy(ys.astype(np.int64))


def save_image_png(tensor: torch.Tensor, path) -> None:
    """Persist a (3, H, W) [0, 1] tensor as lossless 8-bit PNG.

    Quantization is round-to-nearest: stored byte = round(255 * value).
    """
    arr = (tensor.detach().clamp(0, 1) * 255.0).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).cpu().numpy(), mode="RGB").save(path, format="PNG")


def assign_targets(labels: torch.Tensor, class_count: int, rng: RngState) -> torch.Tensor:
    """Random target labels, each guaranteed different from the true label."""
    g = rng.generator()
    shift = g.integers(1, class_count, size=len(labels))
    return (labels + torch.from_numpy(shift)) % class_count


def write_corpus(out_dir, images: torch.Tensor, labels: torch.Tensor,
                 class_count: int, rng: RngState,
                 with_targets: bool = True) -> Path:
    """Write PNGs plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = assign_targets(labels, class_count, rng) if with_targets \
        else (labels + 1) % class_count
    manifest_path = out_dir / "manifest.csv"
    with manifest_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "true_label", "target_label"])
        for i in range(images.shape[0]):
            name = f"img_{i:05d}.png"
            save_image_png(images[i], out_dir / name)
            writer.writerow([name, int(labels[i]), int(targets[i])])
    return manifest_path
