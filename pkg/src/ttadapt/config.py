"""Run configuration. Defaults are the published hyperparameter settings;
negative-cache constants are engine defaults exposed for tuning."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ParameterError


@dataclass(frozen=True)
class TtaConfig:
    lambda_frac: float = 0.25
    gamma: float = 0.6
    lr: float = 0.001
    epochs: int = 3
    batch: int = 3
    logit_scale: float = 100.0
    support_cap_per_class: int = 3
    cache_capacity: int = 3
    cache_entropy_lo: float = 0.2
    cache_entropy_hi: float = 0.5
    cache_mask_threshold: float = 0.03
    cache_affinity_alpha: float = 0.35
    cache_affinity_beta: float = 5.5
    use_neg_cache: bool = True
    per_sample_adaptation: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lambda_frac <= 1.0:
            raise ParameterError(f"lambda_frac must lie in (0, 1], got {self.lambda_frac}")
        if self.gamma < 0.0:
            raise ParameterError(f"gamma must be nonnegative, got {self.gamma}")
        if self.lr < 0.0:
            raise ParameterError(f"lr must be nonnegative, got {self.lr}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch < 1:
            raise ParameterError(f"batch must be >= 1, got {self.batch}")
        if not self.logit_scale > 0.0:
            raise ParameterError(f"logit_scale must be positive, got {self.logit_scale}")
        if self.support_cap_per_class < 1:
            raise ParameterError(
                f"support_cap_per_class must be >= 1, got {self.support_cap_per_class}"
            )
        if self.cache_capacity < 1:
            raise ParameterError(f"cache_capacity must be >= 1, got {self.cache_capacity}")
        if not 0.0 <= self.cache_entropy_lo <= self.cache_entropy_hi <= 1.0:
            raise ParameterError(
                "cache entropy window must satisfy 0 <= lo <= hi <= 1, got "
                f"[{self.cache_entropy_lo}, {self.cache_entropy_hi}]"
            )
        if not 0.0 < self.cache_mask_threshold < 1.0:
            raise ParameterError(
                f"cache_mask_threshold must lie in (0, 1), got {self.cache_mask_threshold}"
            )
        if self.cache_affinity_alpha < 0.0 or self.cache_affinity_beta < 0.0:
            raise ParameterError("cache affinity alpha/beta must be nonnegative")
        if not 0 <= self.seed <= 0xFFFFFFFFFFFFFFFF:
            raise ParameterError(f"seed must fit in 64 bits, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TtaConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown config fields {unknown}")
        return cls(**data)
