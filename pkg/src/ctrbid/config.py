"""Run configuration: an INI-style ``key = value`` file plus CLI overrides.

Example::

    [paths]
    impressions = data/impressions.csv
    clicks = data/clicks.csv
    out = out/

    [campaign]
    campaign_id = IO-1001
    requested_scale = 1000000

    [bidder]
    target_cpc = 1.10
    optimization_fraction = 0.9, 0.8
"""

from __future__ import annotations

import configparser
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .aggregate import AggregationConfig
from .bidder import BidPolicy
from .ingest import DEFAULT_SCHEMA, IngestFilter, parse_timestamp
from .recommend import MergeConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    impressions: Path | None = None
    clicks: Path | None = None
    out_dir: Path = Path(".")
    market: Path | None = None
    history: Path | None = None
    campaign_id: str = ""
    geo_allowlist: tuple[str, ...] = ()
    window_start: dt.datetime | None = None
    window_end: dt.datetime | None = None
    schema: Mapping[str, str] = field(default_factory=dict)
    aggregation: AggregationConfig = AggregationConfig()
    target_cpc_usd: float | None = None
    optimization_fractions: tuple[float, ...] = (0.9,)
    min_bid_cpm_usd: float = 0.01
    max_bid_cpm_usd: float = 20.0
    requested_scale: int | None = None
    network_scale_fraction: float = 0.30
    top_impression_budget: int = 100_000
    seed: int = 0
    seed_given: bool = False
    threads: int = 0
    weeks: int = 4

    @property
    def ingest_filter(self) -> IngestFilter:
        return IngestFilter(frozenset(self.geo_allowlist), self.window_start, self.window_end)

    def policies(self) -> list[BidPolicy]:
        if self.target_cpc_usd is None:
            raise ConfigError("target CPC is required (--target-cpc or [bidder] target_cpc)")
        try:
            return [
                BidPolicy(self.target_cpc_usd, f, self.min_bid_cpm_usd, self.max_bid_cpm_usd)
                for f in self.optimization_fractions
            ]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def merge_config(self) -> MergeConfig:
        if self.requested_scale is None:
            raise ConfigError("requested scale is required (--requested-scale or [campaign] requested_scale)")
        try:
            return MergeConfig(self.requested_scale, self.network_scale_fraction, self.top_impression_budget)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def as_dict(self) -> dict[str, Any]:
        def plain(v: Any) -> Any:
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dt.datetime):
                return v.isoformat()
            if isinstance(v, AggregationConfig):
                return {
                    "outlier_sigma": v.outlier_sigma,
                    "grouping_fields": list(v.grouping_fields),
                    "outlier_metric": v.outlier_metric,
                }
            if isinstance(v, (tuple, list)):
                return [plain(x) for x in v]
            if isinstance(v, Mapping):
                return {k: plain(x) for k, x in sorted(v.items())}
            return v

        return {k: plain(getattr(self, k)) for k in self.__dataclass_fields__ if k != "seed_given"}

    def digest(self) -> str:
        """Short hash of every setting that can change results (not the output dir)."""
        settings = {k: v for k, v in self.as_dict().items() if k != "out_dir"}
        blob = json.dumps(settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def require_inputs(self, *names: str) -> None:
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise ConfigError(f"missing input path: {name}")
            if not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _timestamp(text: str) -> dt.datetime:
    try:
        return parse_timestamp(text)
    except ValueError:
        raise ConfigError(f"bad timestamp: {text!r}") from None


_NUMBER_KEYS = {
    "target_cpc_usd": float,
    "min_bid_cpm_usd": float,
    "max_bid_cpm_usd": float,
    "network_scale_fraction": float,
    "requested_scale": int,
    "top_impression_budget": int,
    "seed": int,
    "threads": int,
    "weeks": int,
}

# (section, key) in the file -> RunConfig field
_FILE_KEYS = {
    ("paths", "impressions"): "impressions",
    ("paths", "clicks"): "clicks",
    ("paths", "out"): "out_dir",
    ("paths", "market"): "market",
    ("paths", "history"): "history",
    ("campaign", "campaign_id"): "campaign_id",
    ("campaign", "requested_scale"): "requested_scale",
    ("ingest", "geo_allowlist"): "geo_allowlist",
    ("ingest", "window_start"): "window_start",
    ("ingest", "window_end"): "window_end",
    ("aggregate", "outlier_sigma"): "outlier_sigma",
    ("aggregate", "outlier_metric"): "outlier_metric",
    ("aggregate", "grouping_fields"): "grouping_fields",
    ("bidder", "target_cpc"): "target_cpc_usd",
    ("bidder", "optimization_fraction"): "optimization_fractions",
    ("bidder", "min_bid_cpm"): "min_bid_cpm_usd",
    ("bidder", "max_bid_cpm"): "max_bid_cpm_usd",
    ("merge", "network_fraction"): "network_scale_fraction",
    ("merge", "top_impressions"): "top_impression_budget",
    ("run", "seed"): "seed",
    ("run", "threads"): "threads",
    ("simulate", "weeks"): "weeks",
    ("simulate", "market"): "market",
    ("simulate", "history"): "history",
}


_PATH_FIELDS = ("impressions", "clicks", "out_dir", "market", "history")


def read_config_file(path: str | Path) -> tuple[dict[str, str], dict[str, str]]:
    """Return (settings keyed by RunConfig field, schema overrides)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    settings: dict[str, str] = {}
    schema: dict[str, str] = {}
    base = Path(path).parent
    for section in parser.sections():
        for key, value in parser.items(section):
            if section == "schema":
                if key not in DEFAULT_SCHEMA:
                    raise ConfigError(f"[schema] {key}: unknown field")
                schema[key] = value
                continue
            target = _FILE_KEYS.get((section, key))
            if target is None:
                raise ConfigError(f"unknown config key [{section}] {key}")
            if target in _PATH_FIELDS:
                p = Path(value)
                value = str(p if p.is_absolute() else base / p)
            settings[target] = value
    return settings, schema


def build_config(settings: Mapping[str, Any], schema: Mapping[str, str] | None = None, seed_given: bool = False) -> RunConfig:
    """Turn loosely typed settings (strings from the file, values from flags) into a RunConfig."""
    kw: dict[str, Any] = {"schema": dict(schema or {}), "seed_given": seed_given}
    agg: dict[str, Any] = {}
    try:
        for name, value in settings.items():
            if value is None:
                continue
            if name in _PATH_FIELDS:
                kw[name] = Path(value)
            elif name == "campaign_id":
                kw[name] = str(value).strip()
            elif name == "geo_allowlist":
                kw[name] = tuple(_split_list(value) if isinstance(value, str) else value)
            elif name in ("window_start", "window_end"):
                kw[name] = value if isinstance(value, dt.datetime) else _timestamp(value)
            elif name == "optimization_fractions":
                items = _split_list(value) if isinstance(value, str) else value
                kw[name] = tuple(float(v) for v in items)
            elif name == "outlier_sigma":
                agg[name] = float(value)
            elif name == "outlier_metric":
                agg[name] = str(value).strip()
            elif name == "grouping_fields":
                agg[name] = tuple(_split_list(value) if isinstance(value, str) else value)
            elif name in _NUMBER_KEYS:
                kw[name] = _NUMBER_KEYS[name](value)
            else:
                raise ConfigError(f"unknown setting {name}")
        kw["aggregation"] = AggregationConfig(**agg)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    if not kw.get("optimization_fractions", (0.9,)):
        raise ConfigError("at least one optimization fraction is required")
    if kw.get("threads", 0) < 0:
        raise ConfigError("threads must be >= 0")
    if kw.get("weeks", 4) < 1:
        raise ConfigError("weeks must be >= 1")
    ws, we = kw.get("window_start"), kw.get("window_end")
    if ws is not None and we is not None and ws >= we:
        raise ConfigError("window_start must precede window_end")
    return RunConfig(**kw)

