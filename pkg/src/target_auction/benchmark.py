"""Truthful-demand benchmark for realised auctions and the revenue comparisons
built on it (price gap, exact and curve-based revenue, MAPE / MPE / MFB)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from ._validation import ValidationError, check_positive, geq
from .core import (
    AggregateDemand,
    AuctionConfig,
    DemandSchedule,
    build_aggregate_demand,
    clear_standard,
    clear_with_target,
)

SAME_TARGET = "same-target"
FIXED_SUPPLY = "fixed-supply"
BIDDER_TYPES = ("institutional", "individual")
DEFAULT_PANELS = 512


class MissingFirstBidError(ValidationError):
    def __init__(self, bidder_id, seo_id=None):
        where = f" in auction {seo_id!r}" if seo_id is not None else ""
        super().__init__(f"bidder {bidder_id!r}{where} has no bid with bid_order 1")
        self.bidder_id = bidder_id


@dataclass(frozen=True)
class BidEntry:
    bidder_id: object
    bidder_type: str
    price: float
    quantity: float
    bid_order: int

    def __post_init__(self):
        if self.bidder_type not in BIDDER_TYPES:
            raise ValidationError(f"bidder_type must be one of {BIDDER_TYPES}, got {self.bidder_type!r}")
        if int(self.bid_order) != self.bid_order or self.bid_order < 1:
            raise ValidationError(f"bid_order must be a positive integer, got {self.bid_order!r}")


@dataclass(frozen=True)
class Realized:
    issue_price: float
    shares_sold: float
    money_raised: float


@dataclass(frozen=True)
class AuctionRecord:
    """One realised auction in common units (yuan, shares).

    Breaches of ``issue >= reserve`` or ``sold <= cap`` are kept and listed in
    ``flags`` rather than rejected; source data can miss by rounding.
    """

    seo_id: object
    config: AuctionConfig
    bids: tuple
    realized: Realized
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        bids = tuple(b if isinstance(b, BidEntry) else BidEntry(*b) for b in self.bids)
        seen = set()
        for b in bids:
            key = (b.bidder_id, b.bid_order)
            if key in seen:
                raise ValidationError(f"duplicate bid_order {b.bid_order} for bidder {b.bidder_id!r}")
            seen.add(key)
        bids = tuple(sorted(bids, key=lambda b: (str(b.bidder_id), b.bid_order)))
        object.__setattr__(self, "bids", bids)
        flags = list(self.flags)
        tol = self.config.tol
        if not geq(self.realized.issue_price, self.config.reserve_price, tol):
            flags.append("issue_below_reserve")
        if not geq(self.config.share_cap, self.realized.shares_sold, tol):
            flags.append("sold_above_cap")
        object.__setattr__(self, "flags", tuple(dict.fromkeys(flags)))

    @property
    def bidder_ids(self):
        return list(dict.fromkeys(b.bidder_id for b in self.bids))

    @property
    def institutional_only(self) -> bool:
        return all(b.bidder_type == "institutional" for b in self.bids)


def _by_bidder(record):
    out = {}
    for b in record.bids:
        out.setdefault(b.bidder_id, []).append(b)
    return out


def submitted_schedules(record: AuctionRecord) -> list[DemandSchedule]:
    return [
        DemandSchedule.from_pairs(bid, [(b.price, b.quantity) for b in rows])
        for bid, rows in _by_bidder(record).items()
    ]


def truthful_schedules(record: AuctionRecord) -> list[DemandSchedule]:
    """Each bidder's total quantity re-bid flat at that bidder's first-bid price."""
    out = []
    for bid, rows in _by_bidder(record).items():
        first = [b for b in rows if b.bid_order == 1]
        if not first:
            raise MissingFirstBidError(bid, record.seo_id)
        total = math.fsum(b.quantity for b in rows)
        out.append(DemandSchedule.from_pairs(bid, [(first[0].price, total)]))
    return out


def truthful_demand_from_bids(record: AuctionRecord) -> AggregateDemand:
    return build_aggregate_demand(truthful_schedules(record))


class HypotheticalPrice(NamedTuple):
    price: float | None
    quantity: float


def hypothetical_clearing(schedules: Sequence[DemandSchedule], config: AuctionConfig, mode: str = SAME_TARGET):
    """Clear truthful demand under the realised rule (``same-target``) or as a
    plain uniform-price sale of the full cap (``fixed-supply``)."""
    if not schedules:
        raise ValidationError("benchmark demand is empty")
    if mode == SAME_TARGET:
        out = clear_with_target(schedules, config)
    elif mode == FIXED_SUPPLY:
        out = clear_standard(schedules, config)
    else:
        raise ValidationError(f"mode must be {SAME_TARGET!r} or {FIXED_SUPPLY!r}, got {mode!r}")
    return HypotheticalPrice(out.stop_out_price, out.quantity_sold)


def price_gap_ratio(truthful_price: float, actual_issue_price: float) -> float:
    if actual_issue_price == 0:
        raise ValidationError("actual issue price is zero")
    return (truthful_price - actual_issue_price) / actual_issue_price


def reserve_markup_ratio(issue_price: float, reserve_price: float) -> float:
    """``(issue - reserve) / reserve``: the regression control of the same name."""
    check_positive(reserve_price, "reserve_price")
    return (issue_price - reserve_price) / reserve_price


@dataclass(frozen=True)
class TruthfulBenchmark:
    truthful_demand: AggregateDemand
    truthful_price: float | None
    truthful_quantity: float
    price_gap_ratio: float | None
    fixed_supply_price: float | None
    fixed_supply_quantity: float


def benchmark_record(record: AuctionRecord) -> TruthfulBenchmark:
    scheds = truthful_schedules(record)
    same = hypothetical_clearing(scheds, record.config, SAME_TARGET)
    fixed = hypothetical_clearing(scheds, record.config, FIXED_SUPPLY)
    gap = None
    if same.price is not None:
        gap = price_gap_ratio(same.price, record.realized.issue_price)
    return TruthfulBenchmark(
        build_aggregate_demand(scheds), same.price, same.quantity, gap, fixed.price, fixed.quantity
    )


def revenue_comparison_exact(record: AuctionRecord, benchmark: TruthfulBenchmark):
    """``(issue * sold, truthful fixed-supply price * sold)``.

    Unsold units earn the same on both sides, so they cancel and are left out.
    """
    sold = record.realized.shares_sold
    if sold == 0:
        return 0.0, 0.0
    price = benchmark.fixed_supply_price
    hyp = 0.0 if price is None else price * sold
    return record.realized.issue_price * sold, hyp


# -- curve areas ---------------------------------------------------------------

def curve_knots(demand: AggregateDemand):
    """Corner points ``(cumulative quantity, price)`` of a step demand curve:
    the top price at zero, then each level's price at its cumulative quantity."""
    if not demand.steps:
        return np.empty(0), np.empty(0)
    xs = [0.0] + [q for _, q in demand.steps]
    ys = [demand.steps[0][0]] + [p for p, _ in demand.steps]
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


class Curve:
    """Natural cubic spline through knots; zero beyond the last knot (no demand)."""

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.size < 2 or np.unique(xs).size < 2:
            raise ValidationError("a curve needs at least two distinct knots")
        if np.any(np.diff(xs) <= 0):
            raise ValidationError("knot abscissae must be strictly increasing")
        self.xs, self.ys = xs, ys
        self.spline = CubicSpline(xs, ys, bc_type="natural")

    @property
    def end(self):
        return float(self.xs[-1])

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return np.where(q <= self.end, self.spline(np.clip(q, self.xs[0], self.end)), 0.0)

    def partition(self, a, b, panels=DEFAULT_PANELS):
        """Knots inside ``[a, b]`` plus the ends, each gap split into ``panels`` pieces."""
        cuts = np.unique(np.concatenate([[a, b], self.xs[(self.xs > a) & (self.xs < b)]]))
        if b > self.end > a and self.end not in cuts:
            cuts = np.unique(np.append(cuts, self.end))
        pieces = [np.linspace(lo, hi, panels + 1)[:-1] for lo, hi in zip(cuts[:-1], cuts[1:])]
        return np.append(np.concatenate(pieces), b) if pieces else np.array([a, b])

    def area(self, a, b, panels=DEFAULT_PANELS) -> float:
        if b <= a:
            return 0.0
        hi = min(b, self.end)
        if hi <= a:
            return 0.0
        grid = self.partition(a, hi, panels)
        return float(trapezoid(self.spline(grid), grid))


class CurveAreas(NamedTuple):
    actual_area: float
    hypothetical_area: float
    fallback: bool


def revenue_comparison_curve(record: AuctionRecord, benchmark: TruthfulBenchmark, panels=DEFAULT_PANELS):
    """Areas under the spline-smoothed cumulative bid curves.

    Hypothetical: the truthful curve from 0 to the cap. Actual: the submitted
    curve up to shares sold, plus the truthful strip from shares sold to the
    cap. Both sides use the same split at shares sold, so identical curves give
    identical areas. Falls back to the exact figures when either curve has
    fewer than two knots.
    """
    if int(panels) != panels or panels < 1:
        raise ValidationError("panels must be a positive integer")
    actual_demand = build_aggregate_demand(submitted_schedules(record))
    try:
        a_curve = Curve(*curve_knots(actual_demand))
        t_curve = Curve(*curve_knots(benchmark.truthful_demand))
    except ValidationError:
        act, hyp = revenue_comparison_exact(record, benchmark)
        return CurveAreas(act, hyp, True)
    sold = record.realized.shares_sold
    cap = record.config.share_cap
    strip = t_curve.area(sold, cap, panels)
    actual = a_curve.area(0.0, sold, panels) + strip
    hyp = t_curve.area(0.0, sold, panels) + strip
    return CurveAreas(actual, hyp, False)


# -- forecast metrics --------------------------------------------------------------

class ForecastMetrics(NamedTuple):
    mape: float | None
    mpe: float | None
    mfb: float | None
    n: int
    exclusions: int


def forecast_metrics(actual: Sequence[float], hypothetical: Sequence[float]) -> ForecastMetrics:
    """MAPE, MPE (percent) and MFB (raw units) of ``hypothetical`` against ``actual``.

    Pairs with a zero actual value are dropped from all three and counted.
    """
    y = np.asarray(actual, dtype=float)
    yhat = np.asarray(hypothetical, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValidationError("actual and hypothetical must be equal-length 1-d sequences")
    if y.size == 0:
        raise ValidationError("metric inputs are empty")
    keep = y != 0
    y, yhat = y[keep], yhat[keep]
    excluded = int((~keep).sum())
    if y.size == 0:
        return ForecastMetrics(None, None, None, 0, excluded)
    err = y - yhat
    mape = float(np.mean(np.abs(err) / np.abs(y)) * 100)
    mpe = float(np.mean(err / y) * 100)
    return ForecastMetrics(mape, mpe, float(np.mean(err)), int(y.size), excluded)


# -- dataset evaluation ---------------------------------------------------------------

AUCTION_FIELDS = (
    "seo_id", "actual_price", "truthful_price", "gap_ratio",
    "actual_revenue", "hypothetical_exact", "hypothetical_curve",
    "actual_area", "fixed_supply_price", "curve_fallback",
)


def _evaluate_one(record, panels):
    bench = benchmark_record(record)
    act_rev, hyp_exact = revenue_comparison_exact(record, bench)
    areas = revenue_comparison_curve(record, bench, panels)
    return {
        "seo_id": record.seo_id,
        "actual_price": record.realized.issue_price,
        "truthful_price": bench.truthful_price,
        "gap_ratio": bench.price_gap_ratio,
        "actual_revenue": act_rev,
        "hypothetical_exact": hyp_exact,
        "hypothetical_curve": areas.hypothetical_area,
        "actual_area": areas.actual_area,
        "fixed_supply_price": bench.fixed_supply_price,
        "curve_fallback": areas.fallback,
    }


@dataclass
class PerformanceReport:
    rows: list
    metrics: ForecastMetrics
    series: str
    units: str = "yuan"

    def to_dict(self):
        m = self.metrics
        return {
            "mape": m.mape,
            "mpe": m.mpe,
            "mfb": m.mfb,
            "n": m.n,
            "exclusions": m.exclusions,
            "series": self.series,
            "units": self.units,
        }

    def write_csv(self, fh):
        w = csv.DictWriter(fh, fieldnames=AUCTION_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in AUCTION_FIELDS})


SERIES = ("curve", "exact")


def evaluate_records(records, series="curve", panels=DEFAULT_PANELS, jobs=1) -> PerformanceReport:
    """Benchmark every record and fold the chosen series into dataset metrics.

    ``curve`` compares spline areas; ``exact`` compares price x shares sold.
    """
    if series not in SERIES:
        raise ValidationError(f"series must be one of {SERIES}")
    records = list(records)
    if jobs == 1 or len(records) < 2:
        rows = [_evaluate_one(r, panels) for r in records]
    else:
        rows = Parallel(n_jobs=jobs)(delayed(_evaluate_one)(r, panels) for r in records)
    if not rows:
        return PerformanceReport(rows, ForecastMetrics(None, None, None, 0, 0), series)
    if series == "curve":
        act = [r["actual_area"] for r in rows]
        hyp = [r["hypothetical_curve"] for r in rows]
    else:
        act = [r["actual_revenue"] for r in rows]
        hyp = [r["hypothetical_exact"] for r in rows]
    return PerformanceReport(rows, forecast_metrics(act, hyp), series)
