from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["RateResult", "NATS_PER_BIT"]

NATS_PER_BIT = math.log(2.0)


@dataclass
class RateResult:
    """A rate in nats with its provenance.

    ``terms`` holds the per-term breakdown of an analytic rate. Monte-Carlo
    results carry ``stderr_nats`` and ``trials`` instead.
    """

    nats: float
    provenance: str  # "analytic" or "monte_carlo"
    terms: dict = field(default_factory=dict)
    stderr_nats: float | None = None
    trials: int | None = None
    solution: object | None = None

    @property
    def bits(self) -> float:
        return self.nats / NATS_PER_BIT

    @property
    def stderr_bits(self) -> float | None:
        return None if self.stderr_nats is None else self.stderr_nats / NATS_PER_BIT

    @property
    def value(self) -> float:
        """Rate in bits per channel use."""
        return self.bits
