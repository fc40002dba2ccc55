"""Correlation analysis and black-box hyperparameter tuning.

Pearson correlation machinery for redundancy analysis between basic
transformations, the complementary-pool selection rule, and a sequential
model-based optimizer that tunes the composite transform's four parameters
against a blind objective (no victim models involved).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .composite import ScaleTransformParams

DEFAULT_EXCLUDED = frozenset({"translate", "crop"})


class UndefinedCorrelationError(ValueError):
    """PCC is undefined because one input has zero variance."""


def pcc(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D vectors")
    if xs.size < 3:
        raise ValueError(f"need at least 3 points, got {xs.size}")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    sx = np.sqrt((xc ** 2).sum())
    sy = np.sqrt((yc ** 2).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    return float((xc * yc).sum() / (sx * sy))


@dataclass
class STTable:
    """Rows: attack/hyperparameter configurations; columns: metrics.

    Cell [i, j] holds the scalar value of column j's metric for row i's
    configuration (typically self-transferability against one basic kind).
    """

    row_labels: list[str]
    column_labels: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.row_labels), len(self.column_labels)):
            raise ValueError("table shape does not match labels")
        if len(self.row_labels) < 3:
            raise ValueError("need at least 3 rows for correlation analysis")

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.column_labels.index(label)]

    def to_json(self) -> str:
        return json.dumps({"row_labels": self.row_labels,
                           "column_labels": self.column_labels,
                           "values": self.values.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "STTable":
        d = json.loads(text)
        return cls(d["row_labels"], d["column_labels"], np.asarray(d["values"]))


def pcc_matrix(table: STTable) -> np.ndarray:
    """Pairwise column PCCs; unit diagonal; undefined cells become NaN."""
    n = len(table.column_labels)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            try:
                value = pcc(table.values[:, i], table.values[:, j])
            except UndefinedCorrelationError:
                value = np.nan
            out[i, j] = out[j, i] = value
    return out


def select_complementary(pcc_row: dict[str, float], n: int,
                         excluded: Optional[set] = None) -> list[str]:
    """The n kinds least correlated with the reference row, after exclusions.

    Ties break by kind name so the result is independent of input order.
    """
    excluded = DEFAULT_EXCLUDED if excluded is None else set(excluded)
    candidates = [(v, k) for k, v in pcc_row.items() if k not in excluded]
    if n > len(candidates):
        raise ValueError(f"asked for {n} kinds but only {len(candidates)} remain")
    candidates.sort()
    return [k for _, k in candidates[:n]]


# --------------------------------------------------------------------------
# sequential model-based tuning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    """Bounds for the composite transform's [p_r, r, p_aug, m]."""

    p_r: tuple[float, float] = (0.0, 1.0)
    r: tuple[float, float] = (1.0, 3.0)  # lower bound exclusive
    p_aug: tuple[float, float] = (0.0, 1.0)
    m: tuple[int, int] = (1, 9)

    def from_unit(self, u: np.ndarray) -> tuple[ScaleTransformParams, float]:
        """Map a point of the unit cube to params; returns (params, raw m)."""
        p_r = self.p_r[0] + u[0] * (self.p_r[1] - self.p_r[0])
        r_lo = np.nextafter(self.r[0], self.r[1])
        r = r_lo + u[1] * (self.r[1] - r_lo)
        p_aug = self.p_aug[0] + u[2] * (self.p_aug[1] - self.p_aug[0])
        m_raw = self.m[0] + u[3] * (self.m[1] - self.m[0])
        m = int(np.clip(round(m_raw), self.m[0], self.m[1]))
        return ScaleTransformParams(p_r=float(p_r), r=float(r),
                                    p_aug=float(p_aug), m=m), float(m_raw)


def _expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float,
                          xi: float = 0.01) -> np.ndarray:
    from math import erf, pi, sqrt
    sigma = np.clip(sigma, 1e-9, None)
    z = (mu - best - xi) / sigma
    cdf = 0.5 * (1.0 + np.vectorize(erf)(z / sqrt(2.0)))
    pdf = np.exp(-0.5 * z ** 2) / sqrt(2.0 * pi)
    return (mu - best - xi) * cdf + sigma * pdf


def bayes_tune(objective: Callable[[ScaleTransformParams], float],
               space: SearchSpace, trials: int, init_random: int,
               seed: int, n_candidates: int = 256):
    """Maximize ``objective`` over the search space.

    ``init_random`` uniform draws, then Gaussian-process expected-improvement
    proposals over seeded candidate sets. A trial whose objective raises is
    logged as failed and skipped by the surrogate model. Returns the
    best-observed params and the full trial log.
    """
    if not trials >= init_random >= 1:
        raise ValueError(f"need trials >= init_random >= 1, got {trials}, {init_random}")
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import Matern

    rng = np.random.default_rng(seed)
    xs: list[np.ndarray] = []
    ys: list[float] = []
    log: list[dict] = []

    for trial in range(trials):
        if trial < init_random or len(ys) < 2:
            u = rng.random(4)
            proposal_kind = "random"
        else:
            gp = GaussianProcessRegressor(
                kernel=Matern(nu=2.5, length_scale=0.25 * np.ones(4)),
                alpha=1e-6, normalize_y=True, random_state=seed)
            gp.fit(np.stack(xs), np.asarray(ys))
            candidates = rng.random((n_candidates, 4))
            mu, sigma = gp.predict(candidates, return_std=True)
            ei = _expected_improvement(mu, sigma, max(ys))
            u = candidates[int(np.argmax(ei))]
            proposal_kind = "gp-ei"
        params, m_raw = space.from_unit(u)
        entry = {
            "trial": trial,
            "proposal": proposal_kind,
            "params": params.to_dict(),
            "m_raw": m_raw,
            "acquisition": "expected-improvement/gp-matern",
            "timestamp": time.time(),
        }
        try:
            value = float(objective(params))
        except Exception as exc:  # noqa: BLE001 - a failed trial must not kill the run
            entry["status"] = "failed"
            entry["error"] = repr(exc)
            entry["value"] = None
            log.append(entry)
            continue
        entry["status"] = "ok"
        entry["value"] = value
        log.append(entry)
        xs.append(u)
        ys.append(value)

    if not ys:
        raise RuntimeError("all tuning trials failed")
    best_idx = int(np.argmax(ys))
    ok_entries = [e for e in log if e["status"] == "ok"]
    best_params = ScaleTransformParams.from_dict(ok_entries[best_idx]["params"])
    return best_params, log


def write_trial_log(log: Sequence[dict], path) -> None:
    """Persist a tuning log as JSON lines, one trial per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")


def tuning_objective(surrogate, images: "torch.Tensor", targets, candidate: ScaleTransformParams,
                     attack_budget, coarse_grid, kinds: Optional[Sequence[str]] = None) -> float:
    """Blind objective: mean self-transferability over the basic kinds.

    Runs the attack with the candidate transform, then averages
    self-transferability across the studied kinds on the coarse grid.
    """
    import dataclasses

    from . import basics, estimators
    from .attack import tmi_attack
    from .composite import CompositeScaleTransform

    kinds = list(kinds) if kinds is not None else list(basics.KINDS)
    config = dataclasses.replace(attack_budget,
                                 transform_id="scale-composite",
                                 transform_params=candidate.to_dict())
    transform = CompositeScaleTransform(candidate)
    result = tmi_attack(surrogate, images, targets, config, transform=transform)
    scores = [estimators.self_transferability(surrogate, kind, result.x_adv,
                                              images, targets, coarse_grid)
              for kind in kinds]
    return float(np.mean(scores))
