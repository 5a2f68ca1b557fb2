"""Value types shared across the pipeline.

Everything here is an immutable dataclass; no I/O happens in this module.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, fields

WILDCARD = "*"

_SIZE_RE = re.compile(r"^([0-9]+)x([0-9]+)$")


class DeviceType(str, enum.Enum):
    DESKTOP = "Desktop"
    MOBILE = "Mobile"
    TABLET = "Tablet"
    OTHER = "Other"
    ANY = WILDCARD

    @classmethod
    def parse(cls, value: str) -> DeviceType:
        """Map a raw feed value to a device type; unknown values become OTHER."""
        try:
            return cls(value)
        except ValueError:
            return cls.OTHER

    def __str__(self) -> str:
        return self.value


class FoldPosition(str, enum.Enum):
    ABOVE = "1"
    BELOW = "0"
    UNKNOWN = "Unknown"
    ANY = WILDCARD

    @classmethod
    def parse(cls, value: str) -> FoldPosition:
        v = value.strip()
        if v in ("1", "Above", "above"):
            return cls.ABOVE
        if v in ("0", "Below", "below"):
            return cls.BELOW
        if v == WILDCARD:
            return cls.ANY
        return cls.UNKNOWN

    def __str__(self) -> str:
        return self.value


class Source(str, enum.Enum):
    NETWORK = "Network"
    CAMPAIGN = "Campaign"

    def __str__(self) -> str:
        return self.value


def _check_finite(name: str, value: float, *, lo: float = 0.0, hi: float = math.inf) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if value < lo or value > hi:
        raise ValueError(f"{name}={value!r} outside [{lo}, {hi}]")


@dataclass(frozen=True, order=True)
class FeatureCombination:
    """Targeting context used as the grouping key.

    There is deliberately no user-level identifier among the fields. Fields
    dropped by a grouping projection hold ``"*"``.
    """

    site_domain: str
    device_type: DeviceType
    size: str
    fold_position: FoldPosition
    geo: str
    operating_system: str = ""
    browser: str = ""
    seller_member_id: str = ""
    tag_id: str = ""
    publisher_id: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.device_type, DeviceType):
            object.__setattr__(self, "device_type", DeviceType.parse(str(self.device_type)))
        if not isinstance(self.fold_position, FoldPosition):
            object.__setattr__(self, "fold_position", FoldPosition.parse(str(self.fold_position)))
        if self.size != WILDCARD:
            m = _SIZE_RE.match(self.size)
            if m is None or int(m.group(1)) == 0 or int(m.group(2)) == 0:
                raise ValueError(f"size must look like '<w>x<h>' with positive dims, got {self.size!r}")

    def as_tuple(self) -> tuple[str, ...]:
        return tuple(str(getattr(self, f)) for f in FIELD_NAMES)

    def project(self, keep: tuple[str, ...]) -> FeatureCombination:
        """Return a copy where every field not in ``keep`` is the wildcard."""
        if len(keep) == len(FIELD_NAMES):
            return self
        values = {f: (getattr(self, f) if f in keep else WILDCARD) for f in FIELD_NAMES}
        return FeatureCombination(**values)


FIELD_NAMES: tuple[str, ...] = tuple(f.name for f in fields(FeatureCombination))


@dataclass(frozen=True)
class FeatureStats:
    key: FeatureCombination
    impressions: int
    clicks: int
    cost_usd: float

    def __post_init__(self) -> None:
        if self.impressions < 0 or self.clicks < 0:
            raise ValueError("counts must be non-negative")
        if self.clicks > self.impressions:
            raise ValueError(f"clicks ({self.clicks}) exceed impressions ({self.impressions})")
        _check_finite("cost_usd", self.cost_usd)
        if self.impressions == 0 and self.cost_usd != 0:
            raise ValueError("cost_usd must be 0 when impressions is 0")

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions if self.impressions else 0.0

    @property
    def cpm_usd(self) -> float:
        return self.cost_usd / self.impressions * 1000.0 if self.impressions else 0.0

    def __add__(self, other: FeatureStats) -> FeatureStats:
        if other.key != self.key:
            raise ValueError("cannot add stats of different feature combinations")
        return FeatureStats(
            self.key,
            self.impressions + other.impressions,
            self.clicks + other.clicks,
            self.cost_usd + other.cost_usd,
        )


@dataclass(frozen=True)
class Prior:
    """Pseudo-counts added to every feature before computing its rates."""

    prior_clicks: float
    prior_impressions: float
    prior_cpm_usd: float = 0.0

    def __post_init__(self) -> None:
        _check_finite("prior_clicks", self.prior_clicks)
        _check_finite("prior_impressions", self.prior_impressions)
        _check_finite("prior_cpm_usd", self.prior_cpm_usd)
        if self.prior_clicks > self.prior_impressions:
            raise ValueError("prior_clicks cannot exceed prior_impressions")

    @property
    def prior_non_clicks(self) -> float:
        return self.prior_impressions - self.prior_clicks

    @property
    def prior_ctr(self) -> float | None:
        if self.prior_impressions == 0:
            return None
        return self.prior_clicks / self.prior_impressions


@dataclass(frozen=True)
class AdjustedMetrics:
    adjusted_ctr: float
    adjusted_cost_usd: float
    adjusted_impressions: float
    adjusted_cpm_usd: float

    def __post_init__(self) -> None:
        _check_finite("adjusted_ctr", self.adjusted_ctr, hi=1.0)
        _check_finite("adjusted_cost_usd", self.adjusted_cost_usd)
        _check_finite("adjusted_impressions", self.adjusted_impressions)
        _check_finite("adjusted_cpm_usd", self.adjusted_cpm_usd)
        if self.adjusted_impressions <= 0:
            raise ValueError("adjusted_impressions must be positive")


@dataclass(frozen=True)
class BidRecommendation:
    key: FeatureCombination
    # None for bids that do not come from the model, e.g. a flat baseline
    metrics: AdjustedMetrics | None
    bid_cpm_usd: float
    source: Source
    campaign_id: str = ""
    # historical impressions behind the estimate; drives the impression budgets
    impressions: int = 0

    def __post_init__(self) -> None:
        _check_finite("bid_cpm_usd", self.bid_cpm_usd)

    @property
    def adjusted_ctr(self) -> float:
        return self.metrics.adjusted_ctr if self.metrics is not None else math.nan
