"""Straight-line reference for the recommend pipeline.

Deliberately naive: plain dicts and exact Fractions, and it imports nothing
from the package. Used to check the real pipeline byte-for-byte on small inputs.
"""

import csv
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

KEY_COLUMNS = [
    "site_domain",
    "device_type",
    "size",
    "fold_position",
    "geo",
    "operating_system",
    "browser",
    "seller_member_id",
    "tag_id",
    "publisher_id",
]

DEVICES = {"Desktop", "Mobile", "Tablet"}


def _key(row):
    device = row["device_type"] if row["device_type"] in DEVICES else "Other"
    fold = row["fold_position"]
    if fold not in ("0", "1"):
        fold = "Unknown"
    return (
        row["site_domain"],
        device,
        row["width"] + "x" + row["height"],
        fold,
        row["geo_country"] + "-" + row["geo_region"],
        row["operating_system"],
        row["browser"],
        row["seller_member_id"],
        row["tag_id"],
        row["publisher_id"],
    )


def _outliers_removed(table, sigma):
    keys = list(table)
    if not keys:
        return {}
    imps = [Fraction(table[k][0]) for k in keys]
    n = len(imps)
    mean = sum(imps) / n
    var = sum((x - mean) ** 2 for x in imps) / n
    if var == 0:
        return dict(table)
    limit = Fraction(sigma) ** 2 * var
    return {k: table[k] for k, x in zip(keys, imps) if (x - mean) ** 2 <= limit}


def _prior(table):
    n = len(table)
    imps = sum(v[0] for v in table.values())
    clicks = sum(v[1] for v in table.values())
    return Fraction(clicks, n), Fraction(imps, n)


def _bid(prior, stats, target, fraction, lo, hi):
    pc, pi = prior
    ctr = (pc + stats[1]) / (pi + stats[0])
    bid = Fraction(target) * ctr * 1000 * Fraction(fraction)
    bid = min(max(bid, Fraction(lo)), Fraction(hi))
    return ctr, bid


def _round(value, places):
    q = Decimal(1).scaleb(-places)
    exact = Decimal(value.numerator) / Decimal(value.denominator)
    return exact.quantize(q, rounding=ROUND_HALF_EVEN)


def reference_recommend(
    impressions_path,
    clicks_path,
    campaign_id,
    target_cpc,
    fraction,
    requested_scale,
    network_share=0.3,
    top_budget=100000,
    sigma=2.0,
    lo=0.01,
    hi=20.0,
):
    network = {}
    campaign = {}
    for path in (impressions_path, clicks_path):
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                k = _key(row)
                click = int(row["is_click"])
                cost = Fraction(Decimal(row["media_cost_usd"])) + Fraction(Decimal(row["data_cost_usd"]))
                for table, use in ((network, True), (campaign, row["insertion_order_id"] == campaign_id)):
                    if not use:
                        continue
                    v = table.setdefault(k, [0, 0, Fraction(0)])
                    v[0] += 1
                    v[1] += click
                    v[2] += cost

    kept = _outliers_removed(network, sigma)
    network_prior = _prior(kept)
    if campaign:
        campaign_prior = _prior(_outliers_removed(campaign, sigma))
    else:
        campaign_prior = network_prior

    net = []
    for k, v in kept.items():
        ctr, bid = _bid(network_prior, v, target_cpc, fraction, lo, hi)
        net.append((ctr, v[0], k, bid))
    net.sort(key=lambda t: (-t[0], -t[1], t[2]))
    top = []
    covered = 0
    for item in net:
        if covered >= top_budget:
            break
        top.append(item)
        covered += item[1]

    out = []
    for k, v in campaign.items():
        ctr, bid = _bid(campaign_prior, v, target_cpc, fraction, lo, hi)
        out.append((k, "Campaign", ctr, bid))
    quota = Fraction(network_share) * requested_scale
    covered = 0
    for ctr, imps, k, bid in top:
        if k in campaign:
            continue
        if covered >= quota:
            break
        out.append((k, "Network", ctr, bid))
        covered += imps

    lines = [",".join(KEY_COLUMNS + ["source", "adjusted_ctr", "bid_cpm_usd"])]
    rows = [(_round(bid, 3), k, src, _round(ctr, 6)) for k, src, ctr, bid in out]
    rows.sort(key=lambda r: (-r[0], r[1]))
    for bid, k, src, ctr in rows:
        lines.append(",".join(list(k) + [src, str(ctr), str(bid)]))
    return ("\n".join(lines) + "\n").encode("utf-8")
