from typing import Literal

from pydantic import model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .utils.exceptions import ConfigurationError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env", env_prefix="CTOMP_", case_sensitive=False, extra="ignore"
    )

    # Application
    app_name: str = "CToMP Simulator"
    version: str = "0.1.0"
    debug: bool = False

    # Simulation defaults
    default_seed: int = 20221
    default_trials: int = 10_000
    attack_trials: int = 100_000

    # Machine
    mpu_capacity: int = 16

    # Allocator (memory pool for the secure process stack)
    pool_size: int = 5632
    max_allocate_num: int = 6
    alignment: int = 8
    retry_budget: int = 3
    strict_allocation: bool = False
    cycle_setup_attempts: int = 3
    # "os" draws placements from the operating system, so runs are not reproducible
    entropy_source: Literal["seeded", "os"] = "seeded"

    # Time model, microseconds per step
    t_mpu: float = 9.0
    t_stack: float = 10.0
    t_svc: float = 1.0
    t_switch: float = 1.0
    t_alloc: float = 0.0
    mpu_jitter: bool = False
    allow_out_of_range_timing: bool = False

    # Attacker model
    attacker_guesses: int = 1
    # Monte Carlo hit rate from which a guessed-address attack counts as succeeded
    attack_success_threshold: float = 0.5

    # Storage Configuration
    storage_backend: Literal["local"] = "local"
    report_dir: str = "reports"

    # Logging Configuration
    log_level: str = "INFO"
    log_to_file: bool = False
    log_file_path: str = "logs/ctomp.log"
    log_rotation: str = "10 MB"
    log_retention: str = "1 month"
    log_format: str = (
        "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message}"
    )

    @model_validator(mode="after")
    def _check_ranges(self) -> "Settings":
        if self.retry_budget < 1:
            raise ConfigurationError("retry_budget", "must be at least 1")
        if self.alignment < 1 or self.alignment & (self.alignment - 1):
            raise ConfigurationError("alignment", "must be a positive power of two")
        if self.max_allocate_num < 1:
            raise ConfigurationError("max_allocate_num", "must be at least 1")
        if not self.allow_out_of_range_timing and not 9.0 <= self.t_mpu <= 15.0:
            raise ConfigurationError("t_mpu", "must lie in [9, 15] microseconds")
        if min(self.t_stack, self.t_svc, self.t_switch, self.t_mpu) <= 0:
            raise ConfigurationError("time_model", "step costs must be positive")
        if not 0.0 < self.attack_success_threshold <= 1.0:
            raise ConfigurationError("attack_success_threshold", "must lie in (0, 1]")
        return self


settings = Settings()
