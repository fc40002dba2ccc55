"""Differentiable image primitives shared by the transformation stack.

All functions accept float tensors shaped ``(3, H, W)`` or ``(N, 3, H, W)``
with values in [0, 1] and are differentiable w.r.t. the image, so they can
sit inside an attack's gradient path. Geometric warps use bilinear sampling
with zeros outside the frame; color arithmetic happens in float and is
clamped back to [0, 1].
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601-2 luma


def validate_images(images: torch.Tensor, min_side: int = 8) -> torch.Tensor:
    """Check the package-wide image contract and return the tensor.

    Images are channels-first float tensors in [0, 1] with 3 channels and
    both sides >= ``min_side``.
    """
    if not isinstance(images, torch.Tensor):
        raise TypeError(f"expected a torch.Tensor, got {type(images).__name__}")
    if images.ndim not in (3, 4) or images.shape[-3] != 3:
        raise ValueError(f"expected (3,H,W) or (N,3,H,W), got {tuple(images.shape)}")
    h, w = images.shape[-2:]
    if h < min_side or w < min_side:
        raise ValueError(f"image sides must be >= {min_side}, got {h}x{w}")
    if not images.is_floating_point():
        raise TypeError("images must be floating point in [0, 1]")
    lo, hi = float(images.min()), float(images.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise ValueError(f"pixel values outside [0, 1]: [{lo:.4f}, {hi:.4f}]")
    return images


def _as_batch(images: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if images.ndim == 3:
        return images.unsqueeze(0), True
    return images, False


def _from_batch(batch: torch.Tensor, squeeze: bool) -> torch.Tensor:
    return batch.squeeze(0) if squeeze else batch


def round_half_even(value: float) -> int:
    """Round to nearest integer, ties to even (bankers' rounding)."""
    return int(round(value))


def resize(images: torch.Tensor, size: tuple[int, int], antialias: bool = False) -> torch.Tensor:
    """Bilinear resize to ``(H, W)``."""
    if size[0] < 1 or size[1] < 1:
        raise ValueError(f"target size must be >= 1 pixel, got {size}")
    batch, squeeze = _as_batch(images)
    out = F.interpolate(batch, size=size, mode="bilinear",
                        align_corners=False, antialias=antialias)
    return _from_batch(out, squeeze)


def rgb_to_grayscale(images: torch.Tensor) -> torch.Tensor:
    """Single-channel luma, keeps the channel dim."""
    r, g, b = images.unbind(dim=-3)
    wr, wg, wb = GRAY_WEIGHTS
    return (wr * r + wg * g + wb * b).unsqueeze(-3)


def adjust_brightness(images: torch.Tensor, factor: float) -> torch.Tensor:
    if factor < 0:
        raise ValueError("brightness factor must be >= 0")
    return (images * factor).clamp(0.0, 1.0)


def adjust_contrast(images: torch.Tensor, factor: float) -> torch.Tensor:
    """Blend toward the per-image mean of the grayscale image."""
    if factor < 0:
        raise ValueError("contrast factor must be >= 0")
    mean = rgb_to_grayscale(images).mean(dim=(-2, -1), keepdim=True)
    return (factor * images + (1.0 - factor) * mean).clamp(0.0, 1.0)


def adjust_saturation(images: torch.Tensor, factor: float) -> torch.Tensor:
    """Blend toward the per-pixel grayscale image."""
    if factor < 0:
        raise ValueError("saturation factor must be >= 0")
    gray = rgb_to_grayscale(images)
    return (factor * images + (1.0 - factor) * gray).clamp(0.0, 1.0)


def adjust_hue(images: torch.Tensor, factor: float) -> torch.Tensor:
    """Shift hue by ``factor`` full turns of the hue wheel, factor in [-0.5, 0.5].

    Differentiable almost everywhere via an RGB->HSV->RGB round trip in
    float. ``factor == 0`` is a pixel-exact identity.
    """
    if not -0.5 <= factor <= 0.5:
        raise ValueError("hue factor must be in [-0.5, 0.5]")
    if factor == 0.0:
        return images
    r, g, b = images.unbind(dim=-3)
    maxc = images.max(dim=-3).values
    minc = images.min(dim=-3).values
    v = maxc
    delta = maxc - minc
    s = delta / maxc.clamp_min(1e-12)
    safe_delta = delta.clamp_min(1e-12)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    h = torch.where(maxc == r, bc - gc,
                    torch.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = torch.where(delta > 0, (h / 6.0) % 1.0, torch.zeros_like(h))
    h = (h + factor) % 1.0

    i = torch.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.long() % 6
    out_r = torch.where(i == 0, v, torch.where(i == 1, q, torch.where(
        i == 2, p, torch.where(i == 3, p, torch.where(i == 4, t, v)))))
    out_g = torch.where(i == 0, t, torch.where(i == 1, v, torch.where(
        i == 2, v, torch.where(i == 3, q, torch.where(i == 4, p, p)))))
    out_b = torch.where(i == 0, p, torch.where(i == 1, p, torch.where(
        i == 2, t, torch.where(i == 3, v, torch.where(i == 4, v, q)))))
    return torch.stack([out_r, out_g, out_b], dim=-3).clamp(0.0, 1.0)


def solarize(images: torch.Tensor, threshold: float) -> torch.Tensor:
    """Invert pixels whose value is >= ``threshold``."""
    return torch.where(images >= threshold, 1.0 - images, images)


def flip(images: torch.Tensor, axis: str) -> torch.Tensor:
    if axis == "vertical":
        return torch.flip(images, dims=(-2,))
    if axis == "horizontal":
        return torch.flip(images, dims=(-1,))
    raise ValueError(f"unknown flip axis {axis!r}")


def _affine_grid_from_pixel_matrix(matrix: np.ndarray, n: int, h: int, w: int,
                                   dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    """Sampling grid for an inverse pixel-space map about the image center.

    ``matrix`` is 2x3: for each output pixel p (center-origin pixel
    coordinates), the source location is ``matrix[:, :2] @ p + matrix[:, 2]``.
    """
    ys = torch.arange(h, dtype=dtype, device=device) - (h - 1) / 2.0
    xs = torch.arange(w, dtype=dtype, device=device) - (w - 1) / 2.0
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    m = torch.as_tensor(matrix, dtype=dtype, device=device)
    sx = m[0, 0] * gx + m[0, 1] * gy + m[0, 2]
    sy = m[1, 0] * gx + m[1, 1] * gy + m[1, 2]
    # center-origin pixel coords -> normalized [-1, 1] (align_corners=False)
    nx = (sx + (w - 1) / 2.0 + 0.5) * 2.0 / w - 1.0
    ny = (sy + (h - 1) / 2.0 + 0.5) * 2.0 / h - 1.0
    grid = torch.stack([nx, ny], dim=-1)
    return grid.unsqueeze(0).expand(n, h, w, 2)


def warp_affine(images: torch.Tensor, inverse_matrix: np.ndarray) -> torch.Tensor:
    """Warp with a 2x3 inverse pixel map (output -> source), zeros fill."""
    batch, squeeze = _as_batch(images)
    n, _, h, w = batch.shape
    grid = _affine_grid_from_pixel_matrix(inverse_matrix, n, h, w, batch.dtype, batch.device)
    out = F.grid_sample(batch, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return _from_batch(out, squeeze)


def rotation_inverse_matrix(angle_deg: float) -> np.ndarray:
    """Inverse map for a rotation of the image content by ``angle_deg``."""
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a), 0.0],
                     [math.sin(a), math.cos(a), 0.0]])


def shear_inverse_matrix(angle_x_deg: float, angle_y_deg: float) -> np.ndarray:
    """Inverse map for a shear by the given angles along x and y."""
    tx = math.tan(math.radians(angle_x_deg))
    ty = math.tan(math.radians(angle_y_deg))
    forward = np.array([[1.0, tx, 0.0], [ty, 1.0, 0.0], [0.0, 0.0, 1.0]])
    inv = np.linalg.inv(forward)
    return inv[:2, :]


def translate_inverse_matrix(offset_x: float, offset_y: float) -> np.ndarray:
    return np.array([[1.0, 0.0, -offset_x], [0.0, 1.0, -offset_y]])


def solve_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 homography mapping the 4 ``src`` points onto ``dst``."""
    a = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    coeffs = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(coeffs, 1.0).reshape(3, 3)


def warp_perspective(images: torch.Tensor, homography: np.ndarray) -> torch.Tensor:
    """Warp so that point p of the source appears at ``homography @ p``."""
    batch, squeeze = _as_batch(images)
    n, _, h, w = batch.shape
    inv = np.linalg.inv(homography)
    ys = torch.arange(h, dtype=batch.dtype, device=batch.device)
    xs = torch.arange(w, dtype=batch.dtype, device=batch.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    m = torch.as_tensor(inv, dtype=batch.dtype, device=batch.device)
    denom = m[2, 0] * gx + m[2, 1] * gy + m[2, 2]
    sx = (m[0, 0] * gx + m[0, 1] * gy + m[0, 2]) / denom
    sy = (m[1, 0] * gx + m[1, 1] * gy + m[1, 2]) / denom
    nx = (sx + 0.5) * 2.0 / w - 1.0
    ny = (sy + 0.5) * 2.0 / h - 1.0
    grid = torch.stack([nx, ny], dim=-1).unsqueeze(0).expand(n, h, w, 2)
    out = F.grid_sample(batch, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return _from_batch(out, squeeze)
