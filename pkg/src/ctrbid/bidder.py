"""Maximum-bid computation for a target cost per click."""

from __future__ import annotations

import math
from dataclasses import dataclass


class NoClickSignal(ValueError):
    """Expected CPC is unbounded when the click rate is zero."""


@dataclass(frozen=True)
class BidPolicy:
    target_cpc_usd: float
    optimization_fraction: float = 0.9
    min_bid_cpm_usd: float = 0.01
    max_bid_cpm_usd: float = 20.0

    def __post_init__(self) -> None:
        for name in ("target_cpc_usd", "optimization_fraction", "min_bid_cpm_usd", "max_bid_cpm_usd"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.target_cpc_usd <= 0:
            raise ValueError("target_cpc_usd must be > 0")
        if not 0 < self.optimization_fraction <= 1:
            raise ValueError("optimization_fraction must lie in (0, 1]")
        if self.min_bid_cpm_usd < 0 or self.max_bid_cpm_usd <= 0:
            raise ValueError("bid clamps must be non-negative and max must be positive")
        if self.min_bid_cpm_usd >= self.max_bid_cpm_usd:
            raise ValueError("min_bid_cpm_usd must be below max_bid_cpm_usd")


def unclamped_bid_cpm(policy: BidPolicy, adjusted_ctr: float) -> float:
    return policy.target_cpc_usd * adjusted_ctr * 1000.0 * policy.optimization_fraction


def max_bid_cpm(policy: BidPolicy, adjusted_ctr: float) -> float:
    """Highest CPM that keeps expected CPC at ``fraction * target``, clamped."""
    if not 0.0 <= adjusted_ctr <= 1.0:
        raise ValueError(f"adjusted_ctr must be a probability, got {adjusted_ctr!r}")
    bid = unclamped_bid_cpm(policy, adjusted_ctr)
    return min(max(bid, policy.min_bid_cpm_usd), policy.max_bid_cpm_usd)


def expected_cpc(bid_cpm: float, adjusted_ctr: float) -> float:
    if adjusted_ctr <= 0:
        raise NoClickSignal("expected CPC is unbounded at zero CTR")
    return bid_cpm / (adjusted_ctr * 1000.0)
