"""Reading impression/click feeds into typed rows.

Feeds are comma-delimited UTF-8 with a header. The impression feed and the
click feed together form the impression log: each row is one impression and
``is_click`` says whether it was clicked. Click rows carry the full context of
the impression they belong to, so no join is needed.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import io
import logging
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import IO, Iterable, Iterator, Mapping, Sequence

from .domain import DeviceType, FeatureCombination, FoldPosition

log = logging.getLogger(__name__)

# logical field -> header name
DEFAULT_SCHEMA: dict[str, str] = {
    "timestamp": "timestamp",
    "height": "height",
    "width": "width",
    "device_type": "device_type",
    "operating_system": "operating_system",
    "browser": "browser",
    "fold_position": "fold_position",
    "geo_country": "geo_country",
    "geo_region": "geo_region",
    "seller_member_id": "seller_member_id",
    "tag_id": "tag_id",
    "publisher_id": "publisher_id",
    "site_domain": "site_domain",
    "insertion_order_id": "insertion_order_id",
    "advertiser_id": "advertiser_id",
    "is_click": "is_click",
    "media_cost_usd": "media_cost_usd",
    "data_cost_usd": "data_cost_usd",
}

MANDATORY_FIELDS = (
    "timestamp",
    "height",
    "width",
    "device_type",
    "fold_position",
    "geo_country",
    "geo_region",
    "site_domain",
    "insertion_order_id",
    "is_click",
    "media_cost_usd",
    "data_cost_usd",
)


class SchemaError(ValueError):
    """The feed header cannot satisfy the schema (fatal configuration error)."""


@dataclass(frozen=True, slots=True)
class RawEventRow:
    timestamp: dt.datetime
    height: int
    width: int
    device_type: DeviceType
    operating_system: str
    browser: str
    fold_position: FoldPosition
    geo_country: str
    geo_region: str
    seller_member_id: str
    tag_id: str
    publisher_id: str
    site_domain: str
    insertion_order_id: str
    advertiser_id: str
    is_click: int
    media_cost_usd: Decimal
    data_cost_usd: Decimal


@dataclass(frozen=True, slots=True)
class RejectRecord:
    row_number: int
    reason: str


@dataclass(frozen=True)
class IngestFilter:
    """Row-level filters applied while parsing.

    ``geo_allowlist`` empty means no geo filtering. The window is half-open,
    ``[window_start, window_end)``; either end may be None.
    """

    geo_allowlist: frozenset[str] = frozenset()
    window_start: dt.datetime | None = None
    window_end: dt.datetime | None = None


class _RowError(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def parse_timestamp(text: str) -> dt.datetime:
    ts = dt.datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        return ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def _money(text: str) -> Decimal:
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        raise _RowError("invalid_cost") from None
    if not value.is_finite() or value < 0:
        raise _RowError("invalid_cost")
    return value


def _pixels(text: str) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise _RowError("invalid_size") from None
    if value <= 0:
        raise _RowError("invalid_size")
    return value


def resolve_columns(header: Sequence[str], schema: Mapping[str, str]) -> dict[str, int]:
    """Map each logical field to its column index in ``header``."""
    position = {name: i for i, name in enumerate(header)}
    merged = {**DEFAULT_SCHEMA, **schema}
    missing = [f for f in MANDATORY_FIELDS if merged[f] not in position]
    if missing:
        raise SchemaError(
            "feed header is missing mandatory columns: "
            + ", ".join(f"{merged[f]} ({f})" for f in missing)
        )
    return {f: position[h] for f, h in merged.items() if h in position}


def _build_row(cells: list[str], columns: dict[str, int], width: int) -> RawEventRow:
    if len(cells) != width:
        raise _RowError("wrong_field_count")

    def get(name: str) -> str:
        i = columns.get(name)
        return cells[i] if i is not None else ""

    try:
        timestamp = parse_timestamp(get("timestamp"))
    except ValueError:
        raise _RowError("invalid_timestamp") from None
    click = get("is_click").strip()
    if click not in ("0", "1"):
        raise _RowError("invalid_is_click")
    return RawEventRow(
        timestamp=timestamp,
        height=_pixels(get("height")),
        width=_pixels(get("width")),
        device_type=DeviceType.parse(get("device_type")),
        operating_system=get("operating_system"),
        browser=get("browser"),
        fold_position=FoldPosition.parse(get("fold_position")),
        geo_country=get("geo_country"),
        geo_region=get("geo_region"),
        seller_member_id=get("seller_member_id"),
        tag_id=get("tag_id"),
        publisher_id=get("publisher_id"),
        site_domain=get("site_domain"),
        insertion_order_id=get("insertion_order_id"),
        advertiser_id=get("advertiser_id"),
        is_click=int(click),
        media_cost_usd=_money(get("media_cost_usd")),
        data_cost_usd=_money(get("data_cost_usd")),
    )


def iter_feed(
    stream: IO[str],
    schema: Mapping[str, str] | None = None,
    filters: IngestFilter | None = None,
) -> Iterator[RawEventRow | RejectRecord]:
    """Yield one RawEventRow or RejectRecord per data row, in file order.

    Row numbers are 1-based and count data rows only (the header is row 0).
    Raises SchemaError before yielding anything if the header is unusable.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("feed is empty; a header row is required") from None
    columns = resolve_columns(header, schema or {})
    width = len(header)
    filters = filters or IngestFilter()
    allow = filters.geo_allowlist
    start, end = filters.window_start, filters.window_end

    for number, cells in enumerate(reader, start=1):
        try:
            row = _build_row(cells, columns, width)
        except _RowError as exc:
            yield RejectRecord(number, exc.reason)
            continue
        if (start is not None and row.timestamp < start) or (end is not None and row.timestamp >= end):
            yield RejectRecord(number, "out_of_window")
        elif allow and row.geo_country not in allow:
            yield RejectRecord(number, "geo_filtered")
        else:
            yield row


def parse_feed(
    stream: IO[str],
    schema: Mapping[str, str] | None = None,
    filters: IngestFilter | None = None,
) -> tuple[list[RawEventRow], list[RejectRecord]]:
    rows: list[RawEventRow] = []
    rejects: list[RejectRecord] = []
    for item in iter_feed(stream, schema, filters):
        if isinstance(item, RejectRecord):
            rejects.append(item)
        else:
            rows.append(item)
    return rows, rejects


def write_feed(rows: Iterable[RawEventRow], stream: IO[str], schema: Mapping[str, str] | None = None) -> None:
    """Serialize rows in the same delimited format ``parse_feed`` reads."""
    merged = {**DEFAULT_SCHEMA, **(schema or {})}
    names = list(DEFAULT_SCHEMA)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([merged[n] for n in names])
    for row in rows:
        out = []
        for n in names:
            v = getattr(row, n)
            if isinstance(v, dt.datetime):
                v = v.isoformat()
            out.append(str(v))
        writer.writerow(out)


def feed_to_text(rows: Iterable[RawEventRow]) -> str:
    buf = io.StringIO()
    write_feed(rows, buf)
    return buf.getvalue()


def derive_features(row: RawEventRow) -> tuple[FeatureCombination, int, Decimal]:
    """Combine raw columns into the feature key and the realized cost."""
    key = FeatureCombination(
        site_domain=row.site_domain,
        device_type=row.device_type,
        size=f"{row.width}x{row.height}",
        fold_position=row.fold_position,
        geo=f"{row.geo_country}-{row.geo_region}",
        operating_system=row.operating_system,
        browser=row.browser,
        seller_member_id=row.seller_member_id,
        tag_id=row.tag_id,
        publisher_id=row.publisher_id,
    )
    return key, row.is_click, row.media_cost_usd + row.data_cost_usd


def split_network_campaign(
    rows: Iterable[RawEventRow], campaign_id: str
) -> tuple[list[RawEventRow], list[RawEventRow]]:
    """Return (network_rows, campaign_rows).

    Network rows are every row with the campaign identifiers blanked out;
    campaign rows are those whose insertion order matches ``campaign_id``.
    """
    if not campaign_id:
        raise ValueError("campaign_id must be non-empty")
    network: list[RawEventRow] = []
    campaign: list[RawEventRow] = []
    for row in rows:
        if row.insertion_order_id == campaign_id:
            campaign.append(row)
        network.append(dataclasses.replace(row, insertion_order_id="", advertiser_id=""))
    return network, campaign
