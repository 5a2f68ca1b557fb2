"""Command-line entry point.

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .aggregate import PriorUnavailable
from .config import ConfigError, RunConfig, build_config, read_config_file
from .ingest import SchemaError, write_feed
from .pipeline import DataError, run_aggregate, run_recommend, run_simulate

log = logging.getLogger("ctrbid")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

# argparse dest -> RunConfig setting name
_FLAG_SETTINGS = {
    "impressions": "impressions",
    "clicks": "clicks",
    "out": "out_dir",
    "campaign_id": "campaign_id",
    "target_cpc": "target_cpc_usd",
    "optimization_fraction": "optimization_fractions",
    "requested_scale": "requested_scale",
    "network_fraction": "network_scale_fraction",
    "top_impressions": "top_impression_budget",
    "outlier_sigma": "outlier_sigma",
    "seed": "seed",
    "threads": "threads",
    "market": "market",
    "history": "history",
    "weeks": "weeks",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI-style config file; flags override it")
    parser.add_argument("--campaign-id", help="insertion order id of the campaign")
    parser.add_argument("--target-cpc", type=float, help="target cost per click in USD")
    parser.add_argument(
        "--optimization-fraction",
        type=float,
        action="append",
        help="bid multiplier in (0, 1]; repeat to write one file per value",
    )
    parser.add_argument("--requested-scale", type=int, help="requested weekly impressions")
    parser.add_argument("--network-fraction", type=float, help="share of scale served by network features")
    parser.add_argument("--top-impressions", type=int, help="impression budget for top network features")
    parser.add_argument("--outlier-sigma", type=float, help="outlier cut in standard deviations")
    parser.add_argument("--seed", type=int, help="seed for all randomness (default 0)")
    parser.add_argument("--threads", type=int, help="worker threads, 0 = auto")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctrbid", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in (
        ("recommend", "compute and export bid recommendations for one campaign"),
        ("aggregate", "dump per-feature aggregates (aggregates.csv) for debugging"),
        ("validate-config", "check a configuration and print it resolved"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--impressions", type=Path, help="impression feed CSV")
        p.add_argument("--clicks", type=Path, help="click feed CSV")

    p = sub.add_parser("simulate", help="replay the weekly loop against a synthetic market")
    _common(p)
    p.add_argument("--market", type=Path, help="market definition CSV")
    p.add_argument("--history", type=Path, help="initial campaign history in aggregates.csv layout")
    p.add_argument("--weeks", type=int, help="number of pipeline iterations (default 4)")

    p = sub.add_parser("synth", help="write demo feeds, a market file and a config")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rows", type=int, default=20_000)
    p.add_argument("--keys", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(args: argparse.Namespace) -> RunConfig:
    settings: dict = {}
    schema: dict = {}
    if getattr(args, "config", None) is not None:
        settings, schema = read_config_file(args.config)
    seed_given = "seed" in settings
    for dest, name in _FLAG_SETTINGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            settings[name] = value
            if dest == "seed":
                seed_given = True
    return build_config(settings, schema, seed_given=seed_given)


def _cmd_synth(args: argparse.Namespace) -> int:
    from .simulate import synthetic_market, write_market
    from .synth import synthetic_rows

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    rows = list(synthetic_rows(args.rows, args.keys, ("IO-1", "IO-2", "IO-3"), args.seed))
    with open(out / "impressions.csv", "w", encoding="utf-8", newline="") as fh:
        write_feed((r for r in rows if not r.is_click), fh)
    with open(out / "clicks.csv", "w", encoding="utf-8", newline="") as fh:
        write_feed((r for r in rows if r.is_click), fh)
    with open(out / "market.csv", "w", encoding="utf-8", newline="") as fh:
        write_market(synthetic_market(100, args.seed), fh)
    (out / "config.ini").write_text(
        "[paths]\nimpressions = impressions.csv\nclicks = clicks.csv\nmarket = market.csv\nout = results\n\n"
        "[campaign]\ncampaign_id = IO-1\nrequested_scale = 10000\n\n"
        "[bidder]\ntarget_cpc = 0.5\noptimization_fraction = 0.9\n\n"
        "[merge]\ntop_impressions = 5000\n",
        encoding="utf-8",
    )
    print(f"wrote demo inputs to {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        cfg = load_config(args)
        if args.command == "validate-config":
            if cfg.impressions is not None or cfg.clicks is not None:
                cfg.require_inputs(*(n for n in ("impressions", "clicks") if getattr(cfg, n) is not None))
            if cfg.market is not None:
                cfg.require_inputs("market")
            if cfg.target_cpc_usd is not None:
                cfg.policies()
            for key, value in cfg.as_dict().items():
                print(f"{key} = {value}")
            print(f"config_hash = {cfg.digest()}")
            return EXIT_OK
        if args.command == "recommend":
            result = run_recommend(cfg)
            for w in result.warnings:
                log.warning(w)
            for path in result.files:
                print(path)
            print(result.report_path)
        elif args.command == "aggregate":
            print(run_aggregate(cfg))
        elif args.command == "simulate":
            files, report = run_simulate(cfg)
            for path in files:
                print(path)
            print(report)
        return EXIT_OK
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PriorUnavailable) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
