import csv
import random

import pytest

from ctrbid.domain import AdjustedMetrics, BidRecommendation, Prior, Source
from ctrbid.bidder import BidPolicy
from ctrbid.recommend import (
    EXPORT_HEADER,
    EmptyRecommendationSet,
    MergeConfig,
    build_recommendations,
    export_recommendations,
    merge_recommendations,
    rank,
    select_network_features,
)

from conftest import make_key, make_stats


def rec(name, ctr, imps, bid=1.0, source=Source.NETWORK):
    m = AdjustedMetrics(ctr, 1.0, 1000.0, 1.0)
    return BidRecommendation(make_key(domain=name), m, bid, source, "IO-1", imps)


def prefix_oracle(recs, budget):
    ordered = sorted(recs, key=lambda r: (-r.adjusted_ctr, -r.impressions, r.key))
    for n in range(len(ordered) + 1):
        if sum(r.impressions for r in ordered[:n]) >= budget:
            return ordered[:n]
    return ordered


def test_select_takes_all_when_top_two_fall_short():
    recs = [rec("a", 0.003, 60_000), rec("b", 0.002, 30_000), rec("c", 0.001, 30_000)]
    got = select_network_features(recs, 100_000)
    assert got == prefix_oracle(recs, 100_000)
    assert len(got) == 3


def test_select_stops_at_crossing_feature():
    recs = [rec("a", 0.003, 70_000), rec("b", 0.002, 30_000), rec("c", 0.001, 30_000)]
    got = select_network_features(recs, 100_000)
    assert [r.key.site_domain for r in got] == ["a", "b"]


def test_select_budget_zero():
    assert select_network_features([rec("a", 0.1, 10)], 0) == []


def test_select_single_large_feature():
    assert len(select_network_features([rec("a", 0.1, 200_000)], 100_000)) == 1


def test_select_random_against_oracle():
    rng = random.Random(9)
    for _ in range(200):
        recs = [rec(f"s{i}", rng.choice((0.001, 0.002, rng.random() / 100)), rng.randint(0, 50_000)) for i in range(rng.randint(0, 30))]
        budget = rng.randint(0, 400_000)
        assert select_network_features(recs, budget) == prefix_oracle(recs, budget)


def test_rank_tie_breaks():
    recs = [rec("b", 0.01, 5), rec("a", 0.01, 5), rec("c", 0.01, 9)]
    assert [r.key.site_domain for r in rank(recs)] == ["c", "a", "b"]


def test_merge_network_share_of_scale():
    rng = random.Random(2)
    network = [rec(f"n{i}", rng.random() / 100, rng.randint(10_000, 80_000)) for i in range(40)]
    campaign = [rec(f"c{i}", rng.random() / 100, 500, source=Source.CAMPAIGN) for i in range(10)]
    out = merge_recommendations(network, campaign, MergeConfig(1_000_000, 0.3))
    net_out = [r for r in out if r.source is Source.NETWORK]
    assert net_out == prefix_oracle(network, 300_000)
    assert sum(r.impressions for r in net_out) >= 300_000
    assert all(c in out for c in campaign)


def test_merge_fraction_zero_is_campaign_only():
    campaign = [rec("c", 0.01, 5, source=Source.CAMPAIGN)]
    assert merge_recommendations([rec("n", 0.5, 10)], campaign, MergeConfig(1000, 0.0)) == campaign


def test_merge_collision_campaign_wins():
    n = rec("same", 0.5, 100, bid=3.0)
    c = rec("same", 0.01, 5, bid=1.0, source=Source.CAMPAIGN)
    out = merge_recommendations([n], [c], MergeConfig(1000, 0.3))
    assert out == [c]


def test_merge_invariants_random():
    rng = random.Random(4)
    for _ in range(100):
        names = [f"k{i}" for i in range(25)]
        network = [rec(n, rng.random() / 50, rng.randint(0, 1000)) for n in rng.sample(names, 15)]
        campaign = [rec(n, rng.random() / 50, rng.randint(0, 100), source=Source.CAMPAIGN) for n in rng.sample(names, 8)]
        out = merge_recommendations(network, campaign, MergeConfig(rng.randint(0, 20_000), rng.random()))
        keys = [r.key for r in out]
        assert len(keys) == len(set(keys))
        assert all(c in out for c in campaign)
        own = {c.key for c in campaign}
        eligible = rank(r for r in network if r.key not in own)
        net_out = [r for r in out if r.source is Source.NETWORK]
        assert net_out == eligible[: len(net_out)]


def test_merge_config_validation():
    with pytest.raises(ValueError):
        MergeConfig(100, 1.5)
    assert MergeConfig(100).campaign_scale_fraction == pytest.approx(0.7)


def test_build_recommendations_uses_prior_and_policy():
    recs = build_recommendations([make_stats(100, 1)], Prior(1, 1000, 2.0), BidPolicy(1.0, 1.0, 0.0, 100.0), Source.CAMPAIGN, "IO-1")
    (r,) = recs
    assert r.adjusted_ctr == 2 / 1100
    assert r.bid_cpm_usd == pytest.approx(1.0 * 2 / 1100 * 1000, rel=1e-12)
    assert r.impressions == 100 and r.source is Source.CAMPAIGN


def test_export_rounding_and_order(tmp_path):
    recs = [rec("low", 0.0004, 10, bid=0.4), rec("high", 0.0019, 10, bid=1.8815)]
    path = export_recommendations(recs, tmp_path / "r.csv")
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == EXPORT_HEADER
    assert [r[-1] for r in rows[1:]] == ["1.882", "0.400"]
    assert [r[-2] for r in rows[1:]] == ["0.001900", "0.000400"]


def test_export_half_even():
    from decimal import Decimal

    from ctrbid.recommend import round_half_even

    assert round_half_even(0.0025, Decimal("0.001")) == Decimal("0.002")
    assert round_half_even(0.0035, Decimal("0.001")) == Decimal("0.004")


def test_export_empty(tmp_path):
    with pytest.raises(EmptyRecommendationSet):
        export_recommendations([], tmp_path / "r.csv")


def test_export_is_byte_deterministic(tmp_path):
    rng = random.Random(1)
    recs = [rec(f"s{i}", rng.random() / 100, 5, bid=round(rng.random() * 3, 2)) for i in range(50)]
    a = export_recommendations(recs, tmp_path / "a.csv").read_bytes()
    rng.shuffle(recs)
    b = export_recommendations(recs, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_export_failure_leaves_nothing(tmp_path, monkeypatch):
    import ctrbid.recommend as mod

    def boom(_recs):
        raise OSError("disk full")

    monkeypatch.setattr(mod, "export_rows", boom)
    with pytest.raises(OSError):
        export_recommendations([rec("a", 0.01, 1)], tmp_path / "r.csv")
    assert list(tmp_path.iterdir()) == []


def test_export_rejects_duplicates(tmp_path):
    with pytest.raises(ValueError):
        export_recommendations([rec("a", 0.01, 1), rec("a", 0.02, 1)], tmp_path / "r.csv")
