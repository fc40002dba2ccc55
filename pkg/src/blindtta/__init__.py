"""Data-free transferable targeted attacks, blind estimation, and tuning."""

from .attack import AttackConfig, AttackResult, loss_value, project_linf, ti_smooth, tmi_attack
from .basics import IntensityGrid, TransformVariant, apply_variant, enumerate_variants, intensity_grid
from .composite import CompositeScaleTransform, ScaleTransformParams, composite_transform
from .rng import RngState

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "CompositeScaleTransform", "IntensityGrid",
    "RngState", "ScaleTransformParams", "TransformVariant", "apply_variant",
    "composite_transform", "enumerate_variants", "intensity_grid", "loss_value",
    "project_linf", "ti_smooth", "tmi_attack",
]
