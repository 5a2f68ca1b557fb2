"""Selecting, merging and exporting bid recommendations."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterable, Sequence

from .aggregate import adjust
from .bidder import BidPolicy, max_bid_cpm
from .domain import FIELD_NAMES, BidRecommendation, FeatureStats, Prior, Source


class EmptyRecommendationSet(ValueError):
    pass


@dataclass(frozen=True)
class MergeConfig:
    requested_scale: int
    network_scale_fraction: float = 0.30
    top_impression_budget: int = 100_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.network_scale_fraction <= 1.0:
            raise ValueError("network_scale_fraction must lie in [0, 1]")
        if self.top_impression_budget < 0 or self.requested_scale < 0:
            raise ValueError("impression budgets must be non-negative")

    @property
    def campaign_scale_fraction(self) -> float:
        return 1.0 - self.network_scale_fraction

    @property
    def network_quota(self) -> float:
        return self.network_scale_fraction * self.requested_scale


def build_recommendations(
    stats: Iterable[FeatureStats],
    prior: Prior,
    policy: BidPolicy,
    source: Source,
    campaign_id: str = "",
) -> list[BidRecommendation]:
    recs = []
    for s in stats:
        metrics = adjust(prior, s)
        recs.append(
            BidRecommendation(
                key=s.key,
                metrics=metrics,
                bid_cpm_usd=max_bid_cpm(policy, metrics.adjusted_ctr),
                source=source,
                campaign_id=campaign_id,
                impressions=s.impressions,
            )
        )
    return recs


def rank(recs: Iterable[BidRecommendation]) -> list[BidRecommendation]:
    """Adjusted CTR descending, then historical impressions descending, then key."""
    return sorted(recs, key=lambda r: (-r.adjusted_ctr, -r.impressions, r.key))


def _take_prefix(ranked: Sequence[BidRecommendation], budget: float) -> list[BidRecommendation]:
    taken: list[BidRecommendation] = []
    covered = 0
    for rec in ranked:
        if covered >= budget:
            break
        taken.append(rec)
        covered += rec.impressions
    return taken


def select_network_features(recs: Iterable[BidRecommendation], budget: int) -> list[BidRecommendation]:
    """Greedy CTR-ranked prefix whose historical impressions first reach ``budget``.

    The feature that crosses the budget is included. If the whole set falls
    short, everything is returned; callers check ``impressions_covered``.
    """
    return _take_prefix(rank(recs), budget)


def impressions_covered(recs: Iterable[BidRecommendation]) -> int:
    return sum(r.impressions for r in recs)


def merge_recommendations(
    network: Iterable[BidRecommendation],
    campaign: Iterable[BidRecommendation],
    cfg: MergeConfig,
) -> list[BidRecommendation]:
    """All campaign features plus a CTR-ranked slice of network features.

    Network features that collide with a campaign key are dropped before the
    slice is taken, so the campaign entry always wins.
    """
    campaign = list(campaign)
    own = {r.key for r in campaign}
    if len(own) != len(campaign):
        raise ValueError("campaign recommendations contain duplicate keys")
    candidates = [r for r in rank(network) if r.key not in own]
    picked = _take_prefix(candidates, cfg.network_quota)
    return [*campaign, *picked]


EXPORT_HEADER = (*FIELD_NAMES, "source", "adjusted_ctr", "bid_cpm_usd")

_MILLI = Decimal("0.001")
_MICRO = Decimal("0.000001")


def round_half_even(value: float, quantum: Decimal) -> Decimal:
    # repr gives the shortest decimal that round-trips, so 1.8815 stays 1.8815
    return Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_EVEN)


def export_rows(recs: Sequence[BidRecommendation]) -> list[tuple[str, ...]]:
    rows = []
    for r in recs:
        bid = round_half_even(r.bid_cpm_usd, _MILLI)
        rows.append((bid, r.key, r))
    rows.sort(key=lambda t: (-t[0], t[1]))
    return [
        (*r.key.as_tuple(), str(r.source), str(round_half_even(r.adjusted_ctr, _MICRO)), str(bid))
        for bid, _, r in rows
    ]


def export_recommendations(recs: Sequence[BidRecommendation], path: str | os.PathLike) -> Path:
    """Write the upload file atomically; nothing is left behind on failure."""
    if not recs:
        raise EmptyRecommendationSet("refusing to export an empty recommendation set")
    keys = [r.key for r in recs]
    if len(set(keys)) != len(keys):
        raise ValueError("recommendations contain duplicate feature keys")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(EXPORT_HEADER)
            writer.writerows(export_rows(recs))
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
