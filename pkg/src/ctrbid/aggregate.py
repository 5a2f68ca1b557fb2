"""Per-feature statistics, outlier removal, priors and adjusted rates."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import IO, Iterable, Sequence

from .domain import FIELD_NAMES, AdjustedMetrics, FeatureCombination, FeatureStats, Prior

log = logging.getLogger(__name__)

OUTLIER_METRICS = ("impressions", "ctr")


class PriorUnavailable(ValueError):
    """No feature statistics to derive a prior from."""


class DegenerateFeature(ValueError):
    """Prior and feature both carry zero impressions."""


@dataclass(frozen=True)
class AggregationConfig:
    outlier_sigma: float = 2.0
    grouping_fields: tuple[str, ...] = FIELD_NAMES
    outlier_metric: str = "impressions"

    def __post_init__(self) -> None:
        if not self.outlier_sigma > 0:
            raise ValueError("outlier_sigma must be > 0")
        if not self.grouping_fields:
            raise ValueError("grouping_fields must be non-empty")
        unknown = set(self.grouping_fields) - set(FIELD_NAMES)
        if unknown:
            raise ValueError(f"unknown grouping fields: {sorted(unknown)}")
        if self.outlier_metric not in OUTLIER_METRICS:
            raise ValueError(f"outlier_metric must be one of {OUTLIER_METRICS}")
        # keep the canonical field order so projections are stable
        object.__setattr__(
            self, "grouping_fields", tuple(f for f in FIELD_NAMES if f in self.grouping_fields)
        )


@dataclass
class StatsAccumulator:
    """Mergeable per-key counts and exact cost sums.

    Cost is summed as Decimal so merging partitions in any order gives the
    same bits.
    """

    grouping_fields: tuple[str, ...] = FIELD_NAMES
    table: dict[FeatureCombination, list] = field(default_factory=dict)

    def add(self, key: FeatureCombination, is_click: int, cost: Decimal | float) -> None:
        key = key.project(self.grouping_fields)
        slot = self.table.get(key)
        if slot is None:
            slot = self.table[key] = [0, 0, Decimal(0)]
        slot[0] += 1
        slot[1] += is_click
        slot[2] += cost if isinstance(cost, Decimal) else Decimal(cost)

    def add_stats(self, stats: FeatureStats) -> None:
        key = stats.key.project(self.grouping_fields)
        slot = self.table.get(key)
        if slot is None:
            slot = self.table[key] = [0, 0, Decimal(0)]
        slot[0] += stats.impressions
        slot[1] += stats.clicks
        slot[2] += Decimal(stats.cost_usd)

    def merge(self, other: StatsAccumulator) -> StatsAccumulator:
        for key, (imps, clicks, cost) in other.table.items():
            slot = self.table.get(key)
            if slot is None:
                self.table[key] = [imps, clicks, cost]
            else:
                slot[0] += imps
                slot[1] += clicks
                slot[2] += cost
        return self

    def __len__(self) -> int:
        return len(self.table)

    def to_stats(self) -> list[FeatureStats]:
        return [
            FeatureStats(key, imps, clicks, float(cost))
            for key, (imps, clicks, cost) in sorted(self.table.items())
        ]


def _fold(rows: Iterable[tuple[FeatureCombination, int, Decimal]], fields: tuple[str, ...]) -> StatsAccumulator:
    acc = StatsAccumulator(fields)
    for key, is_click, cost in rows:
        acc.add(key, is_click, cost)
    return acc


def group_stats(
    rows: Iterable[tuple[FeatureCombination, int, Decimal]],
    config: AggregationConfig | None = None,
    *,
    partitions: int = 1,
    threads: int = 1,
) -> list[FeatureStats]:
    """Aggregate (key, is_click, cost) rows into one FeatureStats per key.

    With ``partitions > 1`` rows are dealt round-robin into partitions that are
    folded independently and merged; the result is identical either way.
    """
    config = config or AggregationConfig()
    if partitions <= 1:
        return _fold(rows, config.grouping_fields).to_stats()
    rows = list(rows)
    chunks = [rows[i::partitions] for i in range(partitions)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(lambda c: _fold(c, config.grouping_fields), chunks))
    total = StatsAccumulator(config.grouping_fields)
    for part in parts:
        total.merge(part)
    return total.to_stats()


def _metric(stats: FeatureStats, metric: str) -> Fraction:
    if metric == "impressions":
        return Fraction(stats.impressions)
    return Fraction(stats.clicks, stats.impressions) if stats.impressions else Fraction(0)


def remove_outliers(
    stats: Sequence[FeatureStats], sigma: float = 2.0, metric: str = "impressions"
) -> list[FeatureStats]:
    """Keep features whose metric lies within ``sigma`` population std devs of the mean.

    The boundary is inclusive and the test is done in exact rational
    arithmetic, so a point sitting exactly on ``mean + sigma*std`` is kept.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if not stats:
        return []
    values = [_metric(s, metric) for s in stats]
    n = len(values)
    mean = sum(values, Fraction(0)) / n
    var = sum(((v - mean) ** 2 for v in values), Fraction(0)) / n
    if var == 0:
        return list(stats)
    bound = Fraction(sigma) ** 2 * var
    kept = [s for s, v in zip(stats, values) if (v - mean) ** 2 <= bound]
    if len(kept) < n:
        log.debug("removed %d outlier features of %d", n - len(kept), n)
    return kept


def compute_prior(stats: Sequence[FeatureStats]) -> Prior:
    """Unweighted mean clicks/impressions per feature plus pooled CPM."""
    if not stats:
        raise PriorUnavailable("cannot compute a prior from zero features")
    n = len(stats)
    total_imps = sum(s.impressions for s in stats)
    total_clicks = sum(s.clicks for s in stats)
    total_cost = sum((Decimal(s.cost_usd) for s in stats), Decimal(0))
    cpm = float(total_cost / total_imps * 1000) if total_imps else 0.0
    return Prior(
        prior_clicks=total_clicks / n,
        prior_impressions=total_imps / n,
        prior_cpm_usd=cpm,
    )


def adjusted_ctr(prior: Prior, stats: FeatureStats) -> float:
    denominator = prior.prior_impressions + stats.impressions
    if denominator <= 0:
        raise DegenerateFeature(f"no impressions for {stats.key} and an empty prior")
    return (prior.prior_clicks + stats.clicks) / denominator


def adjusted_cpm(prior: Prior, stats: FeatureStats) -> tuple[float, float, float]:
    """Return (adjusted_cost_usd, adjusted_impressions, adjusted_cpm_usd).

    Both cost terms are CPM x impressions / 1000 so the sum is in USD.
    """
    adjusted_imps = prior.prior_impressions + stats.impressions
    if adjusted_imps <= 0:
        raise DegenerateFeature(f"no impressions for {stats.key} and an empty prior")
    # feature_cpm * feature_imps / 1000 is just the feature's cost
    cost = prior.prior_cpm_usd * prior.prior_impressions / 1000.0 + stats.cost_usd
    return cost, adjusted_imps, cost / adjusted_imps * 1000.0


def adjust(prior: Prior, stats: FeatureStats) -> AdjustedMetrics:
    cost, imps, cpm = adjusted_cpm(prior, stats)
    return AdjustedMetrics(
        adjusted_ctr=adjusted_ctr(prior, stats),
        adjusted_cost_usd=cost,
        adjusted_impressions=imps,
        adjusted_cpm_usd=cpm,
    )


AGGREGATE_HEADER = (*FIELD_NAMES, "impressions", "clicks", "cost_usd", "adjusted_ctr", "adjusted_cpm_usd")


def write_aggregates(stats: Sequence[FeatureStats], prior: Prior, stream: IO[str]) -> None:
    """Debug dump: one line per feature, in key order."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    for s in sorted(stats, key=lambda s: s.key):
        m = adjust(prior, s)
        writer.writerow(
            (
                *s.key.as_tuple(),
                s.impressions,
                s.clicks,
                repr(s.cost_usd),
                f"{m.adjusted_ctr:.12g}",
                f"{m.adjusted_cpm_usd:.12g}",
            )
        )
