"""Wall-clock probes for attack runnables."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable


@dataclass
class TimingStats:
    seconds_per_image: float   # median over repeats
    iqr: float
    per_repeat: list[float]

    def to_dict(self) -> dict:
        return {"seconds_per_image": self.seconds_per_image,
                "iqr": self.iqr, "per_repeat": self.per_repeat}


def timing_probe(attack_runnable: Callable[[], object], n_images: int,
                 n_repeats: int, warmup: int = 1) -> TimingStats:
    """Median and IQR of per-image wall-clock over ``n_repeats`` runs."""
    if n_images < 1 or n_repeats < 1:
        raise ValueError("n_images and n_repeats must be >= 1")
    for _ in range(warmup):
        attack_runnable()
    samples = []
    for _ in range(n_repeats):
        start = time.perf_counter()
        attack_runnable()
        samples.append((time.perf_counter() - start) / n_images)
    ordered = sorted(samples)
    n = len(ordered)
    median = ordered[n // 2] if n % 2 else 0.5 * (ordered[n // 2 - 1] + ordered[n // 2])
    if n == 1:
        iqr = 0.0
    else:
        q1 = ordered[max(0, int(0.25 * (n - 1)))]
        q3 = ordered[min(n - 1, int(0.75 * (n - 1)))]
        iqr = q3 - q1
    return TimingStats(seconds_per_image=median, iqr=iqr, per_repeat=samples)
