"""Synthetic impression/click feeds for demos, fixtures and benchmarks."""

from __future__ import annotations

import datetime as dt
import itertools
import random
from decimal import Decimal
from typing import Iterator

from .domain import DeviceType, FoldPosition
from .ingest import RawEventRow

DOMAINS = ("analyticsindiamag.com", "yahoo.com", "news.example", "weather.example", "recipes.example",
           "sports.example", "games.example", "finance.example")
SIZES = ((300, 250), (300, 50), (728, 90), (160, 600), (320, 50))
REGIONS = (("US", "501"), ("US", "803"), ("US", "602"), ("CA", "ON"), ("GB", "LND"))
OSES = ("Android", "iOS", "Windows", "macOS")
BROWSERS = ("Chrome", "Safari", "Firefox")
DEVICES = (DeviceType.DESKTOP, DeviceType.MOBILE, DeviceType.TABLET)
FOLDS = (FoldPosition.ABOVE, FoldPosition.BELOW, FoldPosition.UNKNOWN)

WEEK_START = dt.datetime(2021, 3, 1, tzinfo=dt.timezone.utc)


def synthetic_rows(
    n_rows: int,
    n_keys: int = 50,
    campaigns: tuple[str, ...] = ("IO-1", "IO-2"),
    seed: int = 0,
) -> Iterator[RawEventRow]:
    """Rows drawn over ``n_keys`` contexts, each with its own click rate and price."""
    rng = random.Random(seed)
    contexts = []
    for _ in range(n_keys):
        w, h = rng.choice(SIZES)
        country, region = rng.choice(REGIONS)
        contexts.append(
            dict(
                width=w,
                height=h,
                device_type=rng.choice(DEVICES),
                operating_system=rng.choice(OSES),
                browser=rng.choice(BROWSERS),
                fold_position=rng.choice(FOLDS),
                geo_country=country,
                geo_region=region,
                seller_member_id=str(rng.randint(100, 999)),
                tag_id=str(rng.randint(10_000, 99_999)),
                publisher_id=str(rng.randint(1_000, 9_999)),
                site_domain=rng.choice(DOMAINS),
                ctr=rng.uniform(0.0005, 0.02),
                cpm_milli=rng.randint(500, 4000),
            )
        )
    # skewed popularity, like real inventory
    cum = list(itertools.accumulate(1.0 / (i + 1) for i in range(n_keys)))
    for _ in range(n_rows):
        c = rng.choices(contexts, cum_weights=cum)[0]
        io = rng.choice(campaigns) if campaigns else "IO-0"
        yield RawEventRow(
            timestamp=WEEK_START + dt.timedelta(seconds=rng.randrange(7 * 86400)),
            height=c["height"],
            width=c["width"],
            device_type=c["device_type"],
            operating_system=c["operating_system"],
            browser=c["browser"],
            fold_position=c["fold_position"],
            geo_country=c["geo_country"],
            geo_region=c["geo_region"],
            seller_member_id=c["seller_member_id"],
            tag_id=c["tag_id"],
            publisher_id=c["publisher_id"],
            site_domain=c["site_domain"],
            insertion_order_id=io,
            advertiser_id=f"ADV-{io}",
            is_click=1 if rng.random() < c["ctr"] else 0,
            media_cost_usd=Decimal(rng.randint(0, 2 * c["cpm_milli"])) / Decimal(1_000_000),
            data_cost_usd=Decimal(rng.randint(0, 200)) / Decimal(1_000_000),
        )
