"""A toy ad market for replaying the weekly bid/feedback cycle.

Win rule: a feature's whole weekly inventory is won when the bid is at or
above its clearing CPM, otherwise nothing is won. Winners pay the clearing
price. Clicks are Binomial(impressions, true_ctr) draws from a PCG64
generator seeded per (run seed, week, feature key), so each feature's draw
is independent of every other feature and of evaluation order.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .aggregate import StatsAccumulator, compute_prior, remove_outliers
from .bidder import BidPolicy
from .domain import FIELD_NAMES, BidRecommendation, FeatureCombination, FeatureStats, Prior, Source
from .recommend import build_recommendations

RNG_NAME = "numpy PCG64, SeedSequence([seed, week, sha256(key)[:8]])"

REALISTIC_MAX_CTR = 0.05

# stream index for network snapshots, apart from every campaign week
NETWORK_WEEK = 2**32 - 1


@dataclass(frozen=True)
class MarketFeature:
    key: FeatureCombination
    true_ctr: float
    clearing_cpm_usd: float
    weekly_opportunities: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.true_ctr) and 0.0 <= self.true_ctr <= 1.0):
            raise ValueError(f"true_ctr must be a probability, got {self.true_ctr!r}")
        if not (math.isfinite(self.clearing_cpm_usd) and self.clearing_cpm_usd > 0):
            raise ValueError("clearing_cpm_usd must be > 0")
        if self.weekly_opportunities < 0:
            raise ValueError("weekly_opportunities must be >= 0")


@dataclass(frozen=True)
class MarketModel:
    features: tuple[MarketFeature, ...]
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(sorted(self.features, key=lambda f: f.key)))
        keys = [f.key for f in self.features]
        if len(set(keys)) != len(keys):
            raise ValueError("market contains duplicate feature keys")

    @property
    def keys(self) -> list[FeatureCombination]:
        return [f.key for f in self.features]

    @property
    def realistic(self) -> bool:
        return all(f.true_ctr <= REALISTIC_MAX_CTR for f in self.features)


@dataclass(frozen=True)
class FeatureOutcome:
    key: FeatureCombination
    bid_cpm_usd: float
    impressions_won: int
    clicks: int
    cost_usd: float

    def as_stats(self) -> FeatureStats:
        return FeatureStats(self.key, self.impressions_won, self.clicks, self.cost_usd)


@dataclass(frozen=True)
class WeeklyOutcome:
    features: tuple[FeatureOutcome, ...]

    @property
    def impressions(self) -> int:
        return sum(f.impressions_won for f in self.features)

    @property
    def clicks(self) -> int:
        return sum(f.clicks for f in self.features)

    @property
    def cost_usd(self) -> float:
        return math.fsum(f.cost_usd for f in self.features)

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions if self.impressions else 0.0

    @property
    def cpc_usd(self) -> float:
        return self.cost_usd / self.clicks if self.clicks else math.inf

    @property
    def cpm_usd(self) -> float:
        return self.cost_usd / self.impressions * 1000.0 if self.impressions else 0.0

    def by_key(self) -> dict[FeatureCombination, FeatureOutcome]:
        return {f.key: f for f in self.features}


def feature_seed(seed: int, week: int, key: FeatureCombination) -> np.random.SeedSequence:
    digest = hashlib.sha256("\x1f".join(key.as_tuple()).encode("utf-8")).digest()
    return np.random.SeedSequence([seed, week, int.from_bytes(digest[:8], "big")])


def _bid_map(bids: Iterable[BidRecommendation] | Mapping[FeatureCombination, float]) -> dict:
    if isinstance(bids, Mapping):
        return dict(bids)
    return {b.key: b.bid_cpm_usd for b in bids}


def simulate_week(
    market: MarketModel,
    bids: Iterable[BidRecommendation] | Mapping[FeatureCombination, float],
    seed: int,
    week: int = 0,
) -> WeeklyOutcome:
    """Play one week of auctions; bids on keys the market lacks are ignored."""
    bid_for = _bid_map(bids)
    out = []
    for f in market.features:
        bid = bid_for.get(f.key, 0.0)
        won = f.weekly_opportunities if bid >= f.clearing_cpm_usd else 0
        clicks = 0
        if won and f.true_ctr > 0:
            rng = np.random.Generator(np.random.PCG64(feature_seed(seed, week, f.key)))
            clicks = int(rng.binomial(won, f.true_ctr))
        out.append(FeatureOutcome(f.key, bid, won, clicks, won * f.clearing_cpm_usd / 1000.0))
    return WeeklyOutcome(tuple(out))


def baseline_uniform_bidder(market: MarketModel, flat_cpm: float) -> list[BidRecommendation]:
    if not (math.isfinite(flat_cpm) and flat_cpm >= 0):
        raise ValueError("flat_cpm must be a non-negative number")
    return [BidRecommendation(k, None, flat_cpm, Source.NETWORK) for k in market.keys]


def _current_stats(market: MarketModel, history: StatsAccumulator) -> list[FeatureStats]:
    stats = []
    for key in market.keys:
        slot = history.table.get(key)
        if slot is None:
            stats.append(FeatureStats(key, 0, 0, 0.0))
        else:
            stats.append(FeatureStats(key, slot[0], slot[1], float(slot[2])))
    return stats


def run_feedback_loop(
    market: MarketModel,
    initial_history: Sequence[FeatureStats],
    policy: BidPolicy,
    weeks: int,
    seed: int = 0,
    *,
    prior: Prior | None = None,
    outlier_sigma: float = 2.0,
) -> list[tuple[list[BidRecommendation], WeeklyOutcome]]:
    """Alternate recommend -> simulate for ``weeks`` iterations.

    The prior is fixed for the whole run: either passed in, or computed once
    from ``initial_history``. Holding it fixed is what makes a feature that
    stops winning keep exactly the same bid.
    """
    if weeks < 1:
        raise ValueError("weeks must be >= 1")
    if prior is None:
        prior = compute_prior(remove_outliers(list(initial_history), outlier_sigma))
    history = StatsAccumulator()
    for s in initial_history:
        history.add_stats(s)

    trajectory = []
    for week in range(weeks):
        recs = build_recommendations(_current_stats(market, history), prior, policy, Source.CAMPAIGN)
        outcome = simulate_week(market, recs, seed, week)
        for f in outcome.features:
            if f.impressions_won:
                history.add_stats(f.as_stats())
        trajectory.append((recs, outcome))
    return trajectory


def run_baseline(market: MarketModel, flat_cpm: float, weeks: int, seed: int = 0) -> list[WeeklyOutcome]:
    bids = baseline_uniform_bidder(market, flat_cpm)
    return [simulate_week(market, bids, seed, week) for week in range(weeks)]


def weekly_spend_at(market: MarketModel, flat_cpm: float) -> float:
    return math.fsum(
        f.weekly_opportunities * f.clearing_cpm_usd / 1000.0
        for f in market.features
        if flat_cpm >= f.clearing_cpm_usd
    )


def tune_flat_bid(market: MarketModel, weekly_spend: float) -> float:
    """Flat CPM whose deterministic weekly spend is closest to ``weekly_spend``.

    Spend only changes at clearing prices, so those (plus zero) are the only
    candidates worth checking. Ties go to the lower bid.
    """
    candidates = [0.0, *sorted({f.clearing_cpm_usd for f in market.features})]
    return min(candidates, key=lambda c: (abs(weekly_spend_at(market, c) - weekly_spend), c))


def network_snapshot(market: MarketModel, seed: int) -> list[FeatureStats]:
    """One week of the whole network's view: every opportunity is served."""
    bids = {k: math.inf for k in market.keys}
    outcome = simulate_week(market, bids, seed, week=NETWORK_WEEK)
    return [f.as_stats() for f in outcome.features if f.impressions_won]


@dataclass(frozen=True)
class ArmComparison:
    recommended: list[tuple[list[BidRecommendation], WeeklyOutcome]]
    baseline: list[WeeklyOutcome]
    flat_cpm: float
    prior: Prior

    def final_cpc_improvement(self) -> float:
        """Relative CPC reduction of the recommended arm in the last week."""
        rec = self.recommended[-1][1].cpc_usd
        base = self.baseline[-1].cpc_usd
        return 1.0 - rec / base


def compare_arms(
    market: MarketModel,
    policy: BidPolicy,
    weeks: int,
    seed: int = 0,
    *,
    initial_history: Sequence[FeatureStats] = (),
    prior: Prior | None = None,
) -> ArmComparison:
    """Recommended policy vs. a flat bid spending the same total budget."""
    if prior is None:
        source = list(initial_history) or network_snapshot(market, seed)
        prior = compute_prior(remove_outliers(source))
    recommended = run_feedback_loop(market, initial_history, policy, weeks, seed, prior=prior)
    total = math.fsum(o.cost_usd for _, o in recommended)
    flat = tune_flat_bid(market, total / weeks)
    return ArmComparison(recommended, run_baseline(market, flat, weeks, seed), flat, prior)


def synthetic_market(
    n_features: int,
    seed: int = 0,
    *,
    ctr_range: tuple[float, float] = (0.0002, 0.005),
    clearing_range: tuple[float, float] = (0.3, 3.0),
    opportunities_range: tuple[int, int] = (5_000, 50_000),
) -> MarketModel:
    """Random market with log-uniform CTRs and clearing prices."""
    rng = np.random.default_rng(seed)
    log_ctr = rng.uniform(math.log(ctr_range[0]), math.log(ctr_range[1]), n_features)
    log_clear = rng.uniform(math.log(clearing_range[0]), math.log(clearing_range[1]), n_features)
    opps = rng.integers(opportunities_range[0], opportunities_range[1], n_features, endpoint=True)
    devices = ("Desktop", "Mobile", "Tablet")
    sizes = ("300x250", "728x90", "300x50", "160x600")
    features = []
    for i in range(n_features):
        key = FeatureCombination(
            site_domain=f"site{i:04d}.example",
            device_type=devices[i % 3],
            size=sizes[i % 4],
            fold_position="1" if i % 2 else "0",
            geo="US-501",
        )
        features.append(
            MarketFeature(
                key,
                round(math.exp(log_ctr[i]), 6),
                round(math.exp(log_clear[i]), 4),
                int(opps[i]),
            )
        )
    return MarketModel(tuple(features), seed)


MARKET_HEADER = (*FIELD_NAMES, "true_ctr", "clearing_cpm_usd", "weekly_opportunities")


def read_market(stream: IO[str], seed: int = 0) -> MarketModel:
    reader = csv.DictReader(stream)
    missing = [c for c in MARKET_HEADER if c not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"market file missing columns: {', '.join(missing)}")
    features = []
    for line, row in enumerate(reader, start=2):
        try:
            key = FeatureCombination(**{f: row[f] for f in FIELD_NAMES})
            features.append(
                MarketFeature(
                    key,
                    float(row["true_ctr"]),
                    float(row["clearing_cpm_usd"]),
                    int(row["weekly_opportunities"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"market file line {line}: {exc}") from None
    return MarketModel(tuple(features), seed)


def write_market(market: MarketModel, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MARKET_HEADER)
    for f in market.features:
        writer.writerow((*f.key.as_tuple(), repr(f.true_ctr), repr(f.clearing_cpm_usd), f.weekly_opportunities))


TRAJECTORY_HEADER = ("week", *FIELD_NAMES, "bid", "imps", "clicks", "cost", "adjusted_ctr")


def write_trajectory(trajectory: Sequence[tuple[list[BidRecommendation], WeeklyOutcome]], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for week, (recs, outcome) in enumerate(trajectory, start=1):
        results = outcome.by_key()
        for rec in sorted(recs, key=lambda r: r.key):
            res = results.get(rec.key)
            writer.writerow(
                (
                    week,
                    *rec.key.as_tuple(),
                    f"{rec.bid_cpm_usd:.6f}",
                    res.impressions_won if res else 0,
                    res.clicks if res else 0,
                    f"{res.cost_usd:.6f}" if res else "0.000000",
                    f"{rec.adjusted_ctr:.8f}",
                )
            )
