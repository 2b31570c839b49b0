"""Competence schedule and the DropEdge ratio derived from it."""

from dataclasses import asdict, dataclass, replace
from typing import Optional

from .errors import ConfigurationError


@dataclass(frozen=True)
class CompetenceConfig:
    """Parameters of ``c(t) = min(1, (t (1 - c0^p) / T + c0^p) ** (1/p))``.

    ``T=None`` means "the length of the curriculum stage"; the trainer
    resolves it before use.
    """

    c0: float = 0.01
    p: float = 2.0
    T: Optional[int] = None
    beta_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.c0 <= 1.0:
            raise ConfigurationError(f"c0 must lie in (0, 1], got {self.c0}")
        if self.p < 1:
            raise ConfigurationError(f"p must be >= 1, got {self.p}")
        if self.T is not None and self.T < 1:
            raise ConfigurationError(f"T must be >= 1, got {self.T}")
        if not 0.0 <= self.beta_max <= 1.0:
            raise ConfigurationError(f"beta_max must lie in [0, 1], got {self.beta_max}")

    def resolved(self, stage_length: int) -> "CompetenceConfig":
        if self.T is not None:
            return self
        return replace(self, T=max(1, int(stage_length)))

    def to_dict(self):
        return asdict(self)


def competence(t, cfg: CompetenceConfig) -> float:
    if cfg.T is None:
        raise ConfigurationError("competence needs a resolved T")
    if t < 0:
        raise ConfigurationError(f"iteration must be >= 0, got {t}")
    c0p = cfg.c0 ** cfg.p
    return min(1.0, (t * (1.0 - c0p) / cfg.T + c0p) ** (1.0 / cfg.p))


def beta_for_epoch(t, cfg: CompetenceConfig) -> float:
    return min(competence(t, cfg), cfg.beta_max)
