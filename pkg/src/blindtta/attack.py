"""Targeted momentum-iterative attack with translation-invariant smoothing.

The engine runs the classic three-line update: accumulate the l1-normalized,
Gaussian-smoothed input gradient into a momentum buffer, take a sign step
down the targeted loss, and project back into the epsilon-ball intersected
with [0, 1]. Input transformations plug in as ``transform(batch, rng)``
callables; losses plug in by name.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import torch
import torch.nn.functional as F

from .composite import CompositeScaleTransform, ScaleTransformParams
from .rng import RngState

TransformFn = Callable[[torch.Tensor, RngState], torch.Tensor]


# --------------------------------------------------------------------------
# losses (lower = stronger targeted attack; the engine minimizes)
# --------------------------------------------------------------------------

def _ce(logits: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, y_t, reduction="none")


def _logit(logits: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
    return -logits.gather(1, y_t.unsqueeze(1)).squeeze(1)


def _margin_ce(logits: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
    shifted = logits - logits.max(dim=1, keepdim=True).values
    return F.cross_entropy(shifted, y_t, reduction="none")


LOSSES: dict[str, Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = {
    "cross_entropy": _ce,
    "logit": _logit,
    "margin_ce": _margin_ce,
}


def loss_value(logits: torch.Tensor, y_t, kind: str) -> torch.Tensor:
    """Per-sample targeted loss. Accepts a K-vector or an (N, K) batch."""
    if kind not in LOSSES:
        raise ValueError(f"unknown loss {kind!r}, choose from {sorted(LOSSES)}")
    logits = torch.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = logits.unsqueeze(0)
    y = torch.as_tensor(y_t, dtype=torch.long).reshape(-1)
    if y.numel() == 1 and logits.shape[0] > 1:
        y = y.expand(logits.shape[0])
    if int(y.max()) >= logits.shape[1] or int(y.min()) < 0:
        raise ValueError(f"target index out of range for {logits.shape[1]} classes")
    out = LOSSES[kind](logits, y)
    return out.squeeze(0) if single else out


# --------------------------------------------------------------------------
# gradient smoothing and projection
# --------------------------------------------------------------------------

def gaussian_kernel(size: int, sigma: float, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Normalized 2-D Gaussian, sums to one."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd >= 1, got {size}")
    ax = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    k1 = torch.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k2 = torch.outer(k1, k1)
    return k2 / k2.sum()


def ti_smooth(grad: torch.Tensor, kernel_size: int, sigma: float = 1.5) -> torch.Tensor:
    """Depthwise convolution with a unit-sum Gaussian, same padding."""
    if kernel_size == 1:
        return grad
    channels = grad.shape[1]
    kernel = gaussian_kernel(kernel_size, sigma, dtype=grad.dtype)
    weight = kernel.expand(channels, 1, kernel_size, kernel_size).to(grad.device)
    return F.conv2d(grad, weight, padding=kernel_size // 2, groups=channels)


def project_linf(x_adv: torch.Tensor, x: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Clamp into the epsilon-ball around x, intersected with [0, 1]."""
    if x_adv.shape != x.shape:
        raise ValueError(f"shape mismatch: {tuple(x_adv.shape)} vs {tuple(x.shape)}")
    return torch.min(torch.max(x_adv, x - epsilon), x + epsilon).clamp(0.0, 1.0)


# --------------------------------------------------------------------------
# configuration and result
# --------------------------------------------------------------------------

@dataclass
class AttackConfig:
    """Full recipe for one attack run."""

    epsilon: float = 16 / 255
    alpha: float = 2 / 255
    mu: float = 1.0
    T: int = 900
    kernel_size: int = 5
    ti_sigma: float = 1.5
    loss: str = "margin_ce"
    transform_id: str = "identity"
    transform_params: dict = field(default_factory=dict)
    copies: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.epsilon > 0 and self.alpha > self.epsilon:
            raise ValueError(f"alpha {self.alpha} exceeds epsilon {self.epsilon}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd >= 1, got {self.kernel_size}")
        if self.copies < 1:
            raise ValueError(f"copies must be >= 1, got {self.copies}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "alpha": self.alpha, "mu": self.mu,
            "T": self.T, "kernel_size": self.kernel_size, "ti_sigma": self.ti_sigma,
            "loss": self.loss, "transform_id": self.transform_id,
            "transform_params": dict(self.transform_params),
            "copies": self.copies, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        return cls(**d)


@dataclass
class AttackResult:
    """Adversarial batch plus per-iteration traces."""

    x_adv: torch.Tensor
    grad_norm_trace: list[float]
    loss_trace: list[float]
    elapsed_seconds: float
    budget_trace: list[float] = field(default_factory=list)
    snapshots: dict[int, torch.Tensor] = field(default_factory=dict)


# --------------------------------------------------------------------------
# transformation registry
# --------------------------------------------------------------------------

def _identity_factory(params: dict) -> TransformFn:
    return lambda batch, rng: batch


def _composite_factory(params: dict) -> TransformFn:
    p = dict(params)
    per_image = bool(p.pop("per_image", False))
    gate_per_block = bool(p.pop("gate_per_block", True))
    return CompositeScaleTransform(ScaleTransformParams.from_dict(p),
                                   per_image=per_image, gate_per_block=gate_per_block)


def _basic_factory(params: dict) -> TransformFn:
    from .adapters import BasicTransformAttack
    return BasicTransformAttack(**params)


TRANSFORM_FACTORIES: dict[str, Callable[[dict], TransformFn]] = {
    "identity": _identity_factory,
    "scale-composite": _composite_factory,
    "basic": _basic_factory,
}


def register_transform(transform_id: str, factory: Callable[[dict], TransformFn]) -> None:
    TRANSFORM_FACTORIES[transform_id] = factory


def resolve_transform(transform_id: str, params: Optional[dict] = None) -> TransformFn:
    if transform_id not in TRANSFORM_FACTORIES:
        raise ValueError(f"unknown transform id {transform_id!r}, "
                         f"registered: {sorted(TRANSFORM_FACTORIES)}")
    return TRANSFORM_FACTORIES[transform_id](params or {})


# --------------------------------------------------------------------------
# the attack loop
# --------------------------------------------------------------------------

def _mean_logits(models: Sequence, x: torch.Tensor) -> torch.Tensor:
    logits = [m(x) for m in models]
    if len(logits) == 1:
        return logits[0]
    return torch.stack(logits).mean(dim=0)


def tmi_attack(model, x: torch.Tensor, y_t: torch.Tensor, config: AttackConfig,
               transform: Optional[TransformFn] = None,
               snapshot_iters: Sequence[int] = ()) -> AttackResult:
    """Run the iterative targeted attack.

    ``model`` is a differentiable classifier handle (or a list for the
    cross-model ensemble, whose loss is computed on averaged logits).
    ``config.copies`` transformed batches are drawn per step and their
    input-gradients averaged (the self-ensemble; copies=1 is the plain
    attack). Budget and range hold after every iteration.
    """
    models = list(model) if isinstance(model, (list, tuple)) else [model]
    transform = transform if transform is not None else resolve_transform(
        config.transform_id, config.transform_params)
    y_t = torch.as_tensor(y_t, dtype=torch.long)
    if y_t.shape[0] != x.shape[0]:
        raise ValueError("x and y_t batch sizes differ")
    loss_fn = LOSSES[config.loss]
    rng = RngState(config.seed)
    snapshot_at = set(int(i) for i in snapshot_iters)

    x = x.detach()
    x_adv = x.clone()
    momentum = torch.zeros_like(x)
    grad_norm_trace: list[float] = []
    loss_trace: list[float] = []
    budget_trace: list[float] = []
    snapshots: dict[int, torch.Tensor] = {}
    start = time.perf_counter()

    for step in range(config.T):
        leaf = x_adv.detach().requires_grad_(True)
        grad_sum = torch.zeros_like(x)
        loss_sum = 0.0
        for copy in range(config.copies):
            transformed = transform(leaf, rng.child(step, copy))
            if transformed.shape[0] != x.shape[0]:
                raise ValueError("transform changed the batch size")
            losses = loss_fn(_mean_logits(models, transformed), y_t)
            grad = torch.autograd.grad(losses.sum(), leaf)[0]
            grad_sum = grad_sum + grad
            loss_sum += float(losses.detach().mean())
        grad = grad_sum / config.copies
        if not torch.isfinite(grad).all():
            raise ArithmeticError(f"non-finite gradient at iteration {step}")

        grad_norm_trace.append(float(grad.flatten(1).norm(dim=1).mean()))
        loss_trace.append(loss_sum / config.copies)

        smoothed = ti_smooth(grad, config.kernel_size, config.ti_sigma)
        l1 = smoothed.abs().flatten(1).sum(dim=1).clamp_min(1e-12)
        momentum = config.mu * momentum + smoothed / l1.view(-1, 1, 1, 1)
        x_adv = project_linf(x_adv - config.alpha * torch.sign(momentum), x, config.epsilon)

        budget_trace.append(float((x_adv - x).abs().max()))
        if step + 1 in snapshot_at:
            snapshots[step + 1] = x_adv.detach().clone()

    return AttackResult(
        x_adv=x_adv.detach(),
        grad_norm_trace=grad_norm_trace,
        loss_trace=loss_trace,
        elapsed_seconds=time.perf_counter() - start,
        budget_trace=budget_trace,
        snapshots=snapshots,
    )
