from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..utils.exceptions import ConfigurationError

MPU_COST_RANGE = (9.0, 15.0)


@dataclass(frozen=True, slots=True)
class TimeModel:
    """Per-step costs of execution-level and memory-view switching, in microseconds.

    Defaults are the measured step costs for a Cortex-M7 flight controller:
    MPU region configure 9-15, stack initialize and switch 10, SVC call 1,
    execution-level switch 1.
    """

    t_mpu: float = 9.0
    t_stack: float = 10.0
    t_svc: float = 1.0
    t_switch: float = 1.0
    t_alloc: float = 0.0
    mpu_jitter: bool = False
    allow_out_of_range: bool = False

    def __post_init__(self):
        for name in ("t_mpu", "t_stack", "t_svc", "t_switch"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(name, "step costs must be positive")
        if self.t_alloc < 0:
            raise ConfigurationError("t_alloc", "must not be negative")
        low, high = MPU_COST_RANGE
        if not self.allow_out_of_range and not low <= self.t_mpu <= high:
            raise ConfigurationError(
                "t_mpu", f"must lie in [{low:g}, {high:g}] us unless explicitly overridden"
            )

    def mpu_cost(self, rng: Optional[np.random.Generator] = None) -> float:
        """Cost of configuring one region; drawn from the measured range when jitter is on"""
        if self.mpu_jitter and rng is not None:
            return float(rng.uniform(*MPU_COST_RANGE))
        return self.t_mpu

    @property
    def mpu_bound(self) -> float:
        """Worst-case cost of one region configure, used when reserving budget"""
        return MPU_COST_RANGE[1] if self.mpu_jitter else self.t_mpu

    @property
    def context_switch_cost(self) -> float:
        """Per-entry cost outside the MPU program: two level switches, stack setup, SVC"""
        return 2 * self.t_switch + self.t_stack + self.t_svc

    @classmethod
    def from_settings(cls, settings) -> "TimeModel":
        return cls(
            t_mpu=settings.t_mpu,
            t_stack=settings.t_stack,
            t_svc=settings.t_svc,
            t_switch=settings.t_switch,
            t_alloc=settings.t_alloc,
            mpu_jitter=settings.mpu_jitter,
            allow_out_of_range=settings.allow_out_of_range_timing,
        )
