"""Geometric (variance-exploding) noise schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["NoiseSchedule"]


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 2.0
    T_steps: int = 50
    kind: str = "geometric"

    def __post_init__(self):
        if self.kind != "geometric":
            raise ValueError(f"unsupported schedule kind {self.kind!r}")
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.T_steps <= 0:
            raise ValueError("T_steps must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.T_steps

    @property
    def log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def sigma(self, t: float) -> float:
        """sigma(t) = sigma_min * (sigma_max / sigma_min)**t, t in [0, 1]."""
        return self.sigma_min * math.exp(self.log_ratio * t)

    def sigma_dot(self, t: float) -> float:
        return self.sigma(t) * self.log_ratio
