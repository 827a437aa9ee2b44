"""SEO- and bid-level CSV files, the two-level merge and a synthetic generator.

Files carry the source units (prices in yuan, money in 100M yuan, SEO share
counts in 10,000-share units, bid quantities in shares) and declare them in
a leading ``# scale:`` comment. Records built by :func:`merge_levels` are in
common units (yuan and shares).
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import io
import json
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._validation import ValidationError
from .benchmark import BIDDER_TYPES, AuctionRecord, BidEntry, Realized, submitted_schedules
from .core import AuctionConfig, classify_regime, clear_with_target

SHARE_UNIT = 10_000.0
MONEY_UNIT = 100_000_000.0
SEO_SCALE = "# scale: price=yuan; money=1e8 yuan; shares=1e4 shares"
BIDS_SCALE = "# scale: price=yuan; quantity=shares"


class SchemaError(ValidationError):
    pass


class AmbiguousSeoError(ValidationError):
    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__(f"duplicate SEO rows for (stkcd, announce_date): {self.keys}")


@dataclass(frozen=True)
class SeoRow:
    stkcd: str
    announce_date: dt.date
    industry: str | None
    reserve_price: float
    issue_price: float
    close_price: float | None
    money_to_raise: float | None
    money_raised: float | None
    shares_to_sell: float
    shares_sold: float | None
    offersize: float | None = None
    market_value: float | None = None
    underwriter: float | None = None
    turnover20: float | None = None
    precar5: float | None = None
    presd30: float | None = None
    analyst: float | None = None
    institution: float | None = None
    migration: float | None = None
    intratio: float | None = None
    investornum: float | None = None
    leverage: float | None = None
    roa: float | None = None
    gdp_growth: float | None = None
    market_size: float | None = None
    flags: tuple = field(default=(), compare=False)

    @property
    def key(self):
        return (self.stkcd, self.announce_date)


@dataclass(frozen=True)
class BidRow:
    stkcd: str
    announce_date: dt.date
    bidder_id: str
    bidder_type: str
    bid_price: float
    bid_quantity: float
    bid_order: int

    @property
    def key(self):
        return (self.stkcd, self.announce_date)


SEO_FIELDS = tuple(f.name for f in dataclasses.fields(SeoRow) if f.name != "flags")
BID_FIELDS = tuple(f.name for f in dataclasses.fields(BidRow))
_SEO_TEXT = {"stkcd", "industry"}
SEO_CRITICAL = ("reserve_price", "issue_price", "shares_to_sell")


@dataclass
class DropLedger:
    """Screening counts: every input row is either kept or dropped for one reason."""

    input_rows: int = 0
    kept: int = 0
    dropped: Counter = field(default_factory=Counter)

    def drop(self, reason):
        self.dropped[reason] += 1

    @property
    def reconciles(self) -> bool:
        return self.input_rows == self.kept + sum(self.dropped.values())

    def to_dict(self):
        return {"input": self.input_rows, "kept": self.kept, "dropped": dict(sorted(self.dropped.items()))}


@dataclass
class LoadResult:
    rows: list
    ledger: DropLedger


# -- parsing helpers ------------------------------------------------------------------

class _Drop(Exception):
    def __init__(self, reason):
        self.reason = reason


def _num(raw, name, required=False):
    raw = raw.strip()
    if raw == "":
        if required:
            raise _Drop(f"missing_{name}")
        return None
    try:
        x = float(raw)
    except ValueError:
        raise _Drop("malformed") from None
    if not math.isfinite(x):
        raise _Drop("malformed")
    return x


def _date(raw):
    try:
        return dt.date.fromisoformat(raw.strip())
    except ValueError:
        raise _Drop("malformed") from None


def _reader(fh, expected):
    lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("file is empty; header row required") from None
    header = [h.strip() for h in header]
    if tuple(header) != expected:
        raise SchemaError(f"unexpected header {header}; expected {list(expected)}")
    return reader


def _open(path_or_fh):
    if hasattr(path_or_fh, "read"):
        return path_or_fh, False
    return open(path_or_fh, newline="", encoding="utf-8"), True


def load_seo_csv(path) -> LoadResult:
    """Parse and screen ``seo.csv``.

    Rows missing a critical field, with non-positive share counts, or with
    unparseable cells are dropped and counted by reason.
    """
    fh, close = _open(path)
    try:
        reader = _reader(fh, SEO_FIELDS)
        ledger, rows = DropLedger(), []
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            ledger.input_rows += 1
            try:
                if len(raw) != len(SEO_FIELDS):
                    raise _Drop("malformed")
                cells = dict(zip(SEO_FIELDS, raw))
                vals = {}
                for name in SEO_FIELDS:
                    if name in _SEO_TEXT:
                        vals[name] = cells[name].strip() or None
                    elif name == "announce_date":
                        vals[name] = _date(cells[name])
                    else:
                        vals[name] = _num(cells[name], name, name in SEO_CRITICAL)
                if not vals["stkcd"]:
                    raise _Drop("missing_stkcd")
                if vals["shares_to_sell"] <= 0 or (vals["shares_sold"] is not None and vals["shares_sold"] <= 0):
                    raise _Drop("nonpositive_shares")
                if vals["reserve_price"] <= 0 or vals["issue_price"] <= 0:
                    raise _Drop("nonpositive_price")
            except _Drop as d:
                ledger.drop(d.reason)
                continue
            rows.append(SeoRow(**vals, flags=_seo_flags(vals)))
            ledger.kept += 1
        return LoadResult(rows, ledger)
    finally:
        if close:
            fh.close()


def _seo_flags(v):
    flags = []
    if v["issue_price"] < v["reserve_price"]:
        flags.append("issue_below_reserve")
    if v["shares_sold"] is not None and v["shares_sold"] > v["shares_to_sell"]:
        flags.append("sold_above_offered")
    if v["money_raised"] is not None and v["money_to_raise"] is not None and v["money_raised"] > v["money_to_raise"]:
        flags.append("raised_above_target")
    return tuple(flags)


def load_bids_csv(path) -> LoadResult:
    fh, close = _open(path)
    try:
        reader = _reader(fh, BID_FIELDS)
        ledger, rows, seen = DropLedger(), [], set()
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            ledger.input_rows += 1
            try:
                if len(raw) != len(BID_FIELDS):
                    raise _Drop("malformed")
                c = dict(zip(BID_FIELDS, (x.strip() for x in raw)))
                if not c["stkcd"] or not c["bidder_id"]:
                    raise _Drop("missing_id")
                if c["bidder_type"] not in BIDDER_TYPES:
                    raise _Drop("bad_bidder_type")
                price = _num(c["bid_price"], "bid_price", True)
                qty = _num(c["bid_quantity"], "bid_quantity", True)
                order = _num(c["bid_order"], "bid_order", True)
                if price <= 0 or qty <= 0:
                    raise _Drop("nonpositive_bid")
                if order != int(order) or order < 1:
                    raise _Drop("bad_bid_order")
                row = BidRow(c["stkcd"], _date(c["announce_date"]), c["bidder_id"], c["bidder_type"],
                             price, qty, int(order))
                k = (row.stkcd, row.announce_date, row.bidder_id, row.bid_order)
                if k in seen:
                    raise _Drop("duplicate_bid_order")
                seen.add(k)
            except _Drop as d:
                ledger.drop(d.reason)
                continue
            rows.append(row)
            ledger.kept += 1
        return LoadResult(rows, ledger)
    finally:
        if close:
            fh.close()


# -- writing --------------------------------------------------------------------------

def _cell(x):
    if x is None:
        return ""
    if isinstance(x, dt.date):
        return x.isoformat()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _render(rows, fields, scale_line):
    buf = io.StringIO()
    buf.write(scale_line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(getattr(r, f)) for f in fields])
    return buf.getvalue()


def seo_csv_text(rows: Iterable[SeoRow]) -> str:
    return _render(rows, SEO_FIELDS, SEO_SCALE)


def bids_csv_text(rows: Iterable[BidRow]) -> str:
    return _render(rows, BID_FIELDS, BIDS_SCALE)


def atomic_write_text(path, text: str):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_seo_csv(rows, path):
    atomic_write_text(path, seo_csv_text(rows))


def write_bids_csv(rows, path):
    atomic_write_text(path, bids_csv_text(rows))


# -- merge ------------------------------------------------------------------------------

def seo_config(row: SeoRow, divisibility="fractional") -> AuctionConfig:
    """Auction terms of an SEO row in common units."""
    target = None if row.money_to_raise is None else row.money_to_raise * MONEY_UNIT
    return AuctionConfig(row.reserve_price, row.shares_to_sell * SHARE_UNIT, target, divisibility)


def seo_id(row) -> str:
    return f"{row.stkcd}_{row.announce_date.isoformat()}"


@dataclass
class MergeResult:
    records: list
    unmatched_seo: int
    unmatched_bids: int
    seo_index: dict

    def to_dict(self):
        return {"records": len(self.records), "unmatched_seo": self.unmatched_seo,
                "unmatched_bids": self.unmatched_bids}


def merge_levels(seo_rows: Sequence[SeoRow], bid_rows: Sequence[BidRow]) -> MergeResult:
    """Match bids to SEOs on exact ``(stkcd, announce_date)``."""
    index = {}
    dupes = []
    for r in seo_rows:
        if r.key in index:
            dupes.append(r.key)
        index[r.key] = r
    if dupes:
        raise AmbiguousSeoError(sorted(set(dupes)))
    grouped = {}
    unmatched_bids = 0
    for b in bid_rows:
        if b.key in index:
            grouped.setdefault(b.key, []).append(b)
        else:
            unmatched_bids += 1
    records, by_id = [], {}
    unmatched_seo = 0
    for key, row in index.items():
        bids = grouped.get(key)
        if not bids:
            unmatched_seo += 1
            continue
        entries = tuple(
            BidEntry(b.bidder_id, b.bidder_type, b.bid_price, b.bid_quantity, b.bid_order) for b in bids
        )
        sold = 0.0 if row.shares_sold is None else row.shares_sold * SHARE_UNIT
        raised = 0.0 if row.money_raised is None else row.money_raised * MONEY_UNIT
        rec = AuctionRecord(seo_id(row), seo_config(row), entries, Realized(row.issue_price, sold, raised),
                            flags=row.flags)
        records.append(rec)
        by_id[rec.seo_id] = row
    return MergeResult(records, unmatched_seo, unmatched_bids, by_id)


def seo_frame(seo_rows: Sequence[SeoRow], records: Sequence[AuctionRecord] | None = None) -> pd.DataFrame:
    """SEO rows as a DataFrame; with merged records, adds ``institutional_only``."""
    df = pd.DataFrame([{f: getattr(r, f) for f in SEO_FIELDS} for r in seo_rows], columns=list(SEO_FIELDS))
    df["announce_date"] = pd.to_datetime(df["announce_date"])
    df["seo_id"] = [seo_id(r) for r in seo_rows]
    if records is not None:
        inst = {r.seo_id: r.institutional_only for r in records}
        df["institutional_only"] = df["seo_id"].map(inst)
        df = df[df["institutional_only"].notna()].copy()
        df["institutional_only"] = df["institutional_only"].astype(bool)
    return df


# -- synthetic data -------------------------------------------------------------------------

REGIME_WEIGHTS = {"Up": 482, "Down": 197, "Middle": 475}
INDUSTRIES = ("C", "D", "E", "F", "G", "I", "K", "N")
STRATEGIES = ("truthful", "shaded", "mixed")


@dataclass(frozen=True)
class SyntheticParams:
    """Knobs of the generator; defaults reproduce the sample medians and mean discount."""

    strategy: str = "truthful"
    later_fraction: float = 0.7
    shaded_share: float = 0.5
    value_low: float = 0.72
    value_high: float = 1.02
    signal_noise: float = 0.05
    reserve_ratio: float = 0.76
    reserve_ratio_sd: float = 0.05
    bidders_min: int = 3
    bidders_max: int = 15
    institutional_prob: float = 0.8
    tick: float = 0.01
    start_date: str = "2007-02-01"
    end_date: str = "2021-12-31"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}")
        if not 0 <= self.later_fraction <= 1 or not 0 <= self.shaded_share <= 1:
            raise ValidationError("fractions must lie in [0, 1]")
        if not 0 < self.value_low < self.value_high:
            raise ValidationError("need 0 < value_low < value_high")
        if not 2 <= self.bidders_min <= self.bidders_max:
            raise ValidationError("need 2 <= bidders_min <= bidders_max")


@dataclass
class SyntheticDataset:
    seo_rows: list
    bid_rows: list
    ledger: list

    def ledger_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.ledger)

    def write(self, directory):
        d = Path(directory)
        write_seo_csv(self.seo_rows, d / "seo.csv")
        write_bids_csv(self.bid_rows, d / "bids.csv")
        atomic_write_text(d / "ledger.jsonl", self.ledger_jsonl())


def _tick_down(x, tick):
    return round(math.floor(x / tick + 1e-9) * tick, 10)


def _tick_up(x, tick):
    return round(math.ceil(x / tick - 1e-9) * tick, 10)


def _controls(rng, close, shares_to_sell):
    return dict(
        offersize=float(np.clip(rng.lognormal(math.log(0.13), 0.6), 0.0, 5.31)),
        market_value=float(np.clip(rng.normal(22.89, 1.01), 20.48, 26.64)),
        underwriter=float(rng.random() < 0.45),
        turnover20=float(np.clip(rng.exponential(0.25), 0.0, 3.41)),
        precar5=float(np.clip(rng.normal(0.02, 0.06), -0.23, 0.41)),
        presd30=float(np.clip(rng.normal(0.03, 0.01), 0.01, 0.07)),
        analyst=float(np.clip(rng.normal(1.8, 1.15), 0.0, 4.14)),
        institution=float(np.clip(rng.exponential(13.75), 0.0, 92.44)),
        migration=float(np.clip(rng.exponential(0.05), 0.0, 1.0)),
        intratio=float(np.clip(rng.exponential(0.09), 0.0, 1.0)),
        investornum=float(np.clip(rng.normal(2.28, 1.1), 0.0, 4.6)),
        leverage=float(np.clip(rng.normal(0.48, 0.2), 0.06, 1.7)),
        roa=float(np.clip(rng.normal(0.05, 0.06), -0.76, 0.48)),
        gdp_growth=float(np.clip(rng.normal(0.10, 0.04), 0.02, 0.22)),
        market_size=float(np.clip(rng.normal(0.66, 0.14), 0.38, 1.21)),
    )


def _money_for_regime(rng, regime, r, q):
    """``money_to_raise`` (1e8 yuan) putting ``r*q - 1e4*R`` in the wanted band."""
    rq = r * q
    if regime == "Up" and rq > 1100:
        slack = max(1000.0 + 0.01 * rq, rq * rng.uniform(0.05, 0.4))
    elif regime == "Down":
        slack = -max(1000.0 + 0.01 * rq, rq * rng.uniform(0.05, 0.4))
    else:
        bound = min(999.0, 0.9 * rq)
        slack = rng.uniform(-bound, bound)
    return (rq - slack) / SHARE_UNIT


def _one_auction(i, seed, params: SyntheticParams):
    rng = np.random.default_rng([int(seed), int(i)])
    stkcd = f"{600000 + i:06d}"
    start = dt.date.fromisoformat(params.start_date)
    span = (dt.date.fromisoformat(params.end_date) - start).days
    regimes = list(REGIME_WEIGHTS)
    probs = np.array(list(REGIME_WEIGHTS.values()), dtype=float)
    probs /= probs.sum()
    for attempt in range(1, 101):
        date = start + dt.timedelta(days=int(rng.integers(0, span + 1)))
        close = round(float(np.clip(rng.lognormal(math.log(15.48), 0.6), 2.67, 711.21)), 2)
        ratio = float(np.clip(rng.normal(params.reserve_ratio, params.reserve_ratio_sd), 0.5, 0.95))
        reserve = max(_tick_up(close * ratio, params.tick), params.tick)
        shares_to_sell = round(float(np.clip(rng.lognormal(math.log(9000), 0.9), 264.82, 250000)), 2)
        regime_draw = regimes[rng.choice(3, p=probs)]
        money = _money_for_regime(rng, regime_draw, reserve, shares_to_sell)
        cap = shares_to_sell * SHARE_UNIT

        lo, hi = close * params.value_low, close * params.value_high
        common = float(rng.uniform(lo, hi))
        noise = params.signal_noise * close
        n = int(rng.integers(params.bidders_min, params.bidders_max + 1))
        signals = common + rng.uniform(-noise, noise, size=n)
        values = (np.maximum(lo, signals - noise) + np.minimum(hi, signals + noise)) / 2.0
        demand = np.round(cap * rng.uniform(0.05, 0.35, size=n) / 100.0) * 100.0
        demand = np.maximum(demand, 100.0)
        types = np.where(rng.random(n) < params.institutional_prob, "institutional", "individual")
        shaded = {
            "truthful": np.zeros(n, dtype=bool),
            "shaded": np.ones(n, dtype=bool),
            "mixed": rng.random(n) < params.shaded_share,
        }[params.strategy]
        splits = rng.uniform(0.3, 0.7, size=n)

        bids, plan = [], []
        for j in range(n):
            bidder = f"B{j + 1:03d}"
            first = _tick_down(values[j], params.tick)
            if first < reserve:
                plan.append({"bidder_id": bidder, "value": float(values[j]), "strategy": "abstain"})
                continue
            if shaded[j]:
                q1 = float(np.round(demand[j] * splits[j] / 100.0) * 100.0)
                q1 = min(max(q1, 100.0), demand[j] - 100.0) if demand[j] > 100.0 else demand[j]
                later = max(_tick_down(params.later_fraction * values[j], params.tick), reserve)
                pts = [(first, q1)] + ([(later, float(demand[j] - q1))] if demand[j] - q1 > 0 else [])
                kind = "shaded"
            else:
                pts = [(first, float(demand[j]))]
                kind = "truthful"
            for k, (p, q) in enumerate(pts, start=1):
                bids.append(BidRow(stkcd, date, bidder, str(types[j]), float(p), float(q), k))
            plan.append({"bidder_id": bidder, "value": float(values[j]), "strategy": kind})
        if not bids:
            continue
        base = SeoRow(stkcd, date, None, reserve, reserve, close, money, None, shares_to_sell, None)
        entries = tuple(BidEntry(b.bidder_id, b.bidder_type, b.bid_price, b.bid_quantity, b.bid_order) for b in bids)
        rec = AuctionRecord(seo_id(base), seo_config(base), entries, Realized(reserve, 0.0, 0.0))
        out = clear_with_target(submitted_schedules(rec), rec.config)
        if not out.cleared:
            continue
        row = SeoRow(
            stkcd, date, str(rng.choice(INDUSTRIES)), reserve, float(out.stop_out_price), close, money,
            out.revenue / MONEY_UNIT, shares_to_sell, out.quantity_sold / SHARE_UNIT,
            **_controls(rng, close, shares_to_sell),
        )
        regime = classify_regime(reserve, shares_to_sell, money)
        ledger = {
            "seo_id": seo_id(row),
            "attempts": attempt,
            "common_value": common,
            "bidders": plan,
            "regime": regime.label,
            "slack": regime.slack,
            "outcome": out.to_dict(),
        }
        return row, bids, ledger
    raise RuntimeError(f"auction {i}: no clearing draw in 100 attempts")  # pragma: no cover


def generate_synthetic_dataset(n_auctions: int, params: SyntheticParams | None = None, seed: int = 0,
                               jobs: int = 1) -> SyntheticDataset:
    """Simulate ``n_auctions`` auctions end to end (values, bids, clearing).

    Auction ``i`` uses its own stream ``(seed, i)``, so output does not depend
    on ``jobs``. Draws that fail to clear are redrawn within the same stream.
    """
    if int(n_auctions) != n_auctions or n_auctions < 1:
        raise ValidationError("n_auctions must be a positive integer")
    params = params or SyntheticParams()
    if jobs == 1:
        parts = [_one_auction(i, seed, params) for i in range(n_auctions)]
    else:
        parts = Parallel(n_jobs=jobs, batch_size=64)(delayed(_one_auction)(i, seed, params) for i in range(n_auctions))
    seo, bids, ledger = [], [], []
    for row, b, led in parts:
        seo.append(row)
        bids.extend(b)
        ledger.append(led)
    return SyntheticDataset(seo, bids, ledger)


def load_dataset(directory):
    """Load ``seo.csv`` and ``bids.csv`` from a directory and merge them."""
    d = Path(directory)
    seo = load_seo_csv(d / "seo.csv")
    bids = load_bids_csv(d / "bids.csv")
    return seo, bids, merge_levels(seo.rows, bids.rows)
