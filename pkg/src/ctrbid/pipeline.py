"""End-to-end runs used by the CLI: recommend, aggregate dump and simulate."""

from __future__ import annotations

import csv
import datetime as dt
import io
import itertools
import logging
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from . import __version__
from .aggregate import (
    StatsAccumulator,
    compute_prior,
    remove_outliers,
    write_aggregates,
)
from .config import ConfigError, RunConfig
from .domain import FIELD_NAMES, FeatureCombination, FeatureStats, Prior, Source
from .ingest import RejectRecord, derive_features, iter_feed
from .recommend import (
    build_recommendations,
    export_recommendations,
    impressions_covered,
    merge_recommendations,
    select_network_features,
)
from .simulate import (
    RNG_NAME,
    compare_arms,
    read_market,
    write_trajectory,
)

log = logging.getLogger(__name__)

BATCH_ROWS = 50_000


class DataError(ValueError):
    """Inputs parse but cannot produce a result (exit code 3)."""


@dataclass
class FeedSummary:
    accepted: int = 0
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)
    campaign_rows: int = 0
    last_event: dt.datetime | None = None


def _fold_batch(batch: list, fields: tuple[str, ...], campaign_id: str) -> tuple[StatsAccumulator, StatsAccumulator]:
    network = StatsAccumulator(fields)
    campaign = StatsAccumulator(fields)
    for row in batch:
        key, is_click, cost = derive_features(row)
        network.add(key, is_click, cost)
        if campaign_id and row.insertion_order_id == campaign_id:
            campaign.add(key, is_click, cost)
    return network, campaign


def _batched(items: Iterable, size: int) -> Iterator[list]:
    it = iter(items)
    while batch := list(itertools.islice(it, size)):
        yield batch


def ingest_and_aggregate(
    cfg: RunConfig, rejects_out: IO[str] | None = None
) -> tuple[StatsAccumulator, StatsAccumulator, FeedSummary]:
    """Stream both feeds into network and campaign accumulators.

    Memory is bounded by the number of distinct feature keys plus one batch
    of rows per worker. Batches are folded in parallel and merged; the merge
    is exact, so results do not depend on ``cfg.threads``.
    """
    fields = cfg.aggregation.grouping_fields
    network = StatsAccumulator(fields)
    campaign = StatsAccumulator(fields)
    summary = FeedSummary()
    writer = csv.writer(rejects_out, lineterminator="\n") if rejects_out is not None else None
    if writer:
        writer.writerow(("feed", "row_number", "reason"))
    # folding is GIL-bound, so "auto" means a single folding worker
    workers = cfg.threads or 1

    def accepted_rows(name: str, path: Path) -> Iterator:
        with open(path, encoding="utf-8", newline="") as fh:
            for item in iter_feed(fh, cfg.schema, cfg.ingest_filter):
                if isinstance(item, RejectRecord):
                    summary.rejected += 1
                    summary.reasons[item.reason] += 1
                    if writer:
                        writer.writerow((name, item.row_number, item.reason))
                    continue
                summary.accepted += 1
                if summary.last_event is None or item.timestamp > summary.last_event:
                    summary.last_event = item.timestamp
                if cfg.campaign_id and item.insertion_order_id == cfg.campaign_id:
                    summary.campaign_rows += 1
                yield item

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for name, path in (("impressions", cfg.impressions), ("clicks", cfg.clicks)):
            if path is None:
                continue
            pending = []
            for batch in _batched(accepted_rows(name, path), BATCH_ROWS):
                pending.append(pool.submit(_fold_batch, batch, fields, cfg.campaign_id))
                if len(pending) >= workers:
                    for fut in pending:
                        n, c = fut.result()
                        network.merge(n)
                        campaign.merge(c)
                    pending.clear()
            for fut in pending:
                n, c = fut.result()
                network.merge(n)
                campaign.merge(c)
    return network, campaign, summary


@dataclass
class RecommendResult:
    files: list[Path]
    report_path: Path
    exit_code: int = 0
    warnings: list[str] = field(default_factory=list)


def _report_lines(cfg: RunConfig, pairs: list[tuple[str, object]], warnings: list[str]) -> str:
    lines = [f"ctrbid {__version__} run report"]
    if not cfg.seed_given:
        lines.append(f"generated_at (timestamp, not reproducible): {dt.datetime.now(dt.timezone.utc).isoformat()}")
    lines.append(f"config_hash: {cfg.digest()}")
    lines.extend(f"{k}: {v}" for k, v in pairs)
    lines.append(f"warnings: {len(warnings)}")
    lines.extend(f"warning: {w}" for w in warnings)
    return "\n".join(lines) + "\n"


def _fmt_prior(prior: Prior) -> str:
    return (
        f"clicks={prior.prior_clicks!r} impressions={prior.prior_impressions!r} "
        f"cpm_usd={prior.prior_cpm_usd!r}"
    )


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def run_recommend(cfg: RunConfig) -> RecommendResult:
    cfg.require_inputs("impressions", "clicks")
    if not cfg.campaign_id:
        raise ConfigError("campaign id is required (--campaign-id or [campaign] campaign_id)")
    policies = cfg.policies()
    merge_cfg = cfg.merge_config()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    network_acc, campaign_acc, summary = ingest_and_aggregate(cfg, buf)
    _write_text(out / "rejects.csv", buf.getvalue())
    if summary.accepted == 0:
        raise DataError(f"no rows accepted ({summary.rejected} rejected: {dict(summary.reasons)})")

    warnings: list[str] = []
    network_stats = network_acc.to_stats()
    network_kept = remove_outliers(network_stats, cfg.aggregation.outlier_sigma, cfg.aggregation.outlier_metric)
    network_prior = compute_prior(network_kept)

    campaign_stats = campaign_acc.to_stats()
    if campaign_stats:
        campaign_prior = compute_prior(
            remove_outliers(campaign_stats, cfg.aggregation.outlier_sigma, cfg.aggregation.outlier_metric)
        )
    else:
        campaign_prior = network_prior
        warnings.append(f"campaign {cfg.campaign_id} has no history; using the network prior (cold start)")

    date = summary.last_event.strftime("%Y%m%d") if summary.last_event else "00000000"
    files: list[Path] = []
    per_policy: list[tuple[str, object]] = []
    for policy in policies:
        network_recs = build_recommendations(network_kept, network_prior, policy, Source.NETWORK, cfg.campaign_id)
        top = select_network_features(network_recs, merge_cfg.top_impression_budget)
        if impressions_covered(top) < merge_cfg.top_impression_budget:
            warnings.append(
                f"network features cover {impressions_covered(top)} impressions, "
                f"below the top-impression budget {merge_cfg.top_impression_budget}"
            )
        campaign_recs = build_recommendations(
            campaign_stats, campaign_prior, policy, Source.CAMPAIGN, cfg.campaign_id
        )
        merged = merge_recommendations(top, campaign_recs, merge_cfg)
        if not merged:
            raise DataError("no recommendations could be produced")
        suffix = f"_of{policy.optimization_fraction:g}" if len(policies) > 1 else ""
        path = export_recommendations(merged, out / f"recommendations_{cfg.campaign_id}_{date}{suffix}.csv")
        files.append(path)
        n_net = sum(1 for r in merged if r.source is Source.NETWORK)
        net_imps = sum(r.impressions for r in merged if r.source is Source.NETWORK)
        camp_imps = sum(r.impressions for r in merged if r.source is Source.CAMPAIGN)
        tag = f"[fraction {policy.optimization_fraction:g}]"
        per_policy += [
            (f"{tag} file", path.name),
            (f"{tag} network_features", n_net),
            (f"{tag} campaign_features", len(merged) - n_net),
            (f"{tag} network_historical_impressions", net_imps),
            (f"{tag} campaign_historical_impressions", camp_imps),
            (
                f"{tag} network_scale_coverage",
                f"{net_imps / merge_cfg.network_quota:.4f}" if merge_cfg.network_quota else "n/a",
            ),
        ]
        if merge_cfg.network_quota and net_imps < merge_cfg.network_quota:
            warnings.append(
                f"{tag} network features cover {net_imps} of the {merge_cfg.network_quota:g} requested network impressions"
            )

    pairs: list[tuple[str, object]] = [
        ("campaign_id", cfg.campaign_id),
        ("rows_accepted", summary.accepted),
        ("rows_rejected", summary.rejected),
        ("reject_reasons", ", ".join(f"{k}={v}" for k, v in sorted(summary.reasons.items())) or "none"),
        ("campaign_rows", summary.campaign_rows),
        ("network_features", len(network_stats)),
        ("network_features_after_outliers", len(network_kept)),
        ("campaign_features", len(campaign_stats)),
        ("network_prior", _fmt_prior(network_prior)),
        ("campaign_prior", _fmt_prior(campaign_prior)),
        ("target_cpc_usd", policies[0].target_cpc_usd),
        ("optimization_fractions", ", ".join(f"{p.optimization_fraction:g}" for p in policies)),
        ("requested_scale", merge_cfg.requested_scale),
        ("network_scale_fraction", merge_cfg.network_scale_fraction),
        ("top_impression_budget", merge_cfg.top_impression_budget),
        ("seed", cfg.seed),
        *per_policy,
    ]
    report = out / "run_report.txt"
    _write_text(report, _report_lines(cfg, pairs, warnings))
    return RecommendResult(files, report, 0, warnings)


def run_aggregate(cfg: RunConfig) -> Path:
    """Dump network-level aggregates with adjusted rates to aggregates.csv."""
    cfg.require_inputs("impressions", "clicks")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    network_acc, _, summary = ingest_and_aggregate(cfg)
    if summary.accepted == 0:
        raise DataError("no rows accepted")
    stats = network_acc.to_stats()
    prior = compute_prior(remove_outliers(stats, cfg.aggregation.outlier_sigma, cfg.aggregation.outlier_metric))
    buf = io.StringIO()
    write_aggregates(stats, prior, buf)
    path = out / "aggregates.csv"
    _write_text(path, buf.getvalue())
    return path


STATS_COLUMNS = ("impressions", "clicks", "cost_usd")


def read_stats(stream: IO[str]) -> list[FeatureStats]:
    """Read feature statistics in the aggregates.csv layout (extra columns ignored)."""
    reader = csv.DictReader(stream)
    missing = [c for c in (*FIELD_NAMES, *STATS_COLUMNS) if c not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"history file missing columns: {', '.join(missing)}")
    acc = StatsAccumulator()
    for row in reader:
        key = FeatureCombination(**{f: row[f] for f in FIELD_NAMES})
        acc.add_stats(FeatureStats(key, int(row["impressions"]), int(row["clicks"]), float(row["cost_usd"])))
    return acc.to_stats()


def _cpc(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def run_simulate(cfg: RunConfig) -> tuple[list[Path], Path]:
    cfg.require_inputs("market")
    policies = cfg.policies()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with open(cfg.market, encoding="utf-8", newline="") as fh:
            market = read_market(fh, cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if not market.features:
        raise DataError("market file has no features")
    history: list[FeatureStats] = []
    if cfg.history is not None:
        cfg.require_inputs("history")
        with open(cfg.history, encoding="utf-8", newline="") as fh:
            try:
                history = read_stats(fh)
            except ValueError as exc:
                raise DataError(str(exc)) from None

    warnings: list[str] = []
    if not market.realistic:
        warnings.append("market has true CTRs above 5%; results are not representative")
    pairs: list[tuple[str, object]] = [
        ("market_features", len(market.features)),
        ("weeks", cfg.weeks),
        ("seed", cfg.seed),
        ("rng", RNG_NAME),
        ("history_features", len(history)),
    ]
    files = []
    for policy in policies:
        cmp = compare_arms(market, policy, cfg.weeks, cfg.seed, initial_history=history)
        suffix = f"_of{policy.optimization_fraction:g}" if len(policies) > 1 else ""
        buf = io.StringIO()
        write_trajectory(cmp.recommended, buf)
        path = out / f"trajectory{suffix}.csv"
        _write_text(path, buf.getvalue())
        files.append(path)
        tag = f"[fraction {policy.optimization_fraction:g}]"
        pairs += [
            (f"{tag} target_cpc_usd", policy.target_cpc_usd),
            (f"{tag} prior", _fmt_prior(cmp.prior)),
            (f"{tag} baseline_flat_cpm_usd", cmp.flat_cpm),
        ]
        for week, ((_, rec), base) in enumerate(zip(cmp.recommended, cmp.baseline), start=1):
            pairs.append(
                (
                    f"{tag} week {week}",
                    f"recommended cpc={_cpc(rec.cpc_usd)} ctr={rec.ctr:.6f} cpm={rec.cpm_usd:.4f} "
                    f"cost={rec.cost_usd:.2f} | baseline cpc={_cpc(base.cpc_usd)} ctr={base.ctr:.6f} "
                    f"cpm={base.cpm_usd:.4f} cost={base.cost_usd:.2f}",
                )
            )
        pairs.append((f"{tag} final_week_cpc_reduction", f"{cmp.final_cpc_improvement():.4f}"))
    report = out / "simulation_report.txt"
    _write_text(report, _report_lines(cfg, pairs, warnings))
    return files, report
