"""Uniform-price clearing with a pre-announced revenue target.

The seller walks the aggregate demand curve from the highest bid down,
accepting whole price levels. Everyone pays the highest losing bid. The
walk stops as soon as that price times the accepted quantity reaches the
revenue target ``R`` (the accepted quantity is then trimmed so revenue is
exactly ``R``) or as soon as the share cap ``Q̄`` is exhausted. Bids below
the reserve price ``r`` are dropped and the price never falls below ``r``.

:func:`clear_standard` is the same walk with the revenue stop disabled,
i.e. a plain uniform-price auction of ``Q̄`` shares.
"""

from __future__ import annotations

import math
import numbers
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, NamedTuple, Sequence

from ._validation import DEFAULT_TOL, ValidationError, check_positive, geq, gt

FRACTIONAL = "fractional"
INTEGER_FLOOR = "integer-floor"
DIVISIBILITY_MODES = (FRACTIONAL, INTEGER_FLOOR)

CLEARED = "cleared"
NO_SALE = "no-sale"

# Default regime thresholds: the raw-scale value and its yuan equivalent.
RAW_THRESHOLD = 1000.0
COMMON_THRESHOLD = 10_000_000.0


class InvalidBidError(ValidationError):
    """A bid schedule contains a non-positive or non-finite price/quantity."""

    def __init__(self, bidder_id, message: str):
        super().__init__(f"bidder {bidder_id!r}: {message}")
        self.bidder_id = bidder_id


@dataclass(frozen=True)
class BidPoint:
    price: float
    quantity: float

    def __post_init__(self):
        for name in ("price", "quantity"):
            value = getattr(self, name)
            if (
                not isinstance(value, numbers.Real)
                or isinstance(value, bool)
                or not math.isfinite(value)
                or value <= 0
            ):
                raise ValidationError(f"bid {name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class DemandSchedule:
    """One bidder's demand: bid points sorted by strictly decreasing price.

    Points sharing a price are merged by summing quantity. The quantity at
    each point is the *additional* quantity demanded at that price, so the
    cumulative demand ``q_i(p)`` is non-increasing in ``p`` by construction.
    """

    bidder_id: Hashable
    points: tuple[BidPoint, ...]

    def __post_init__(self):
        merged: dict[float, float] = defaultdict(float)
        for point in self.points:
            if isinstance(point, BidPoint):
                price, qty = point.price, point.quantity
            else:
                price, qty = point
            try:
                BidPoint(price, qty)
            except ValidationError as exc:
                raise InvalidBidError(self.bidder_id, str(exc)) from None
            merged[float(price)] += float(qty)
        points = tuple(BidPoint(p, merged[p]) for p in sorted(merged, reverse=True))
        object.__setattr__(self, "points", points)

    @classmethod
    def from_pairs(cls, bidder_id, pairs: Iterable[tuple[float, float]]) -> "DemandSchedule":
        return cls(bidder_id, tuple((p, q) for p, q in pairs))

    @classmethod
    def flat(cls, bidder_id, price: float, quantity: float) -> "DemandSchedule":
        return cls(bidder_id, ((price, quantity),))

    @property
    def total_quantity(self) -> float:
        return sum(pt.quantity for pt in self.points)

    def quantity_at(self, price: float) -> float:
        """Cumulative quantity demanded at prices >= ``price``."""
        return sum(pt.quantity for pt in self.points if pt.price >= price)


@dataclass(frozen=True)
class AggregateDemand:
    """Step function ``Q(p)``: (price, cumulative quantity at or above price)."""

    steps: tuple[tuple[float, float], ...] = ()

    def quantity_at(self, price: float) -> float:
        total = 0.0
        for p, cum in self.steps:
            if p >= price:
                total = cum
            else:
                break
        return total

    @property
    def prices(self) -> list[float]:
        return [p for p, _ in self.steps]

    @property
    def total(self) -> float:
        return self.steps[-1][1] if self.steps else 0.0

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class AuctionConfig:
    """Reserve price ``r``, share cap ``Q̄`` and revenue target ``R``.

    ``revenue_target`` may be ``None`` for a plain fixed-supply auction.
    All values are in common units (yuan, shares).
    """

    reserve_price: float
    share_cap: float
    revenue_target: float | None = None
    divisibility: str = FRACTIONAL
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        object.__setattr__(self, "reserve_price", check_positive(self.reserve_price, "reserve_price"))
        object.__setattr__(self, "share_cap", check_positive(self.share_cap, "share_cap"))
        if self.revenue_target is not None:
            object.__setattr__(
                self, "revenue_target", check_positive(self.revenue_target, "revenue_target")
            )
        if self.divisibility not in DIVISIBILITY_MODES:
            raise ValidationError(
                f"divisibility must be one of {DIVISIBILITY_MODES}, got {self.divisibility!r}"
            )
        if self.tol < 0:
            raise ValidationError("tol must be non-negative")

    def without_target(self) -> "AuctionConfig":
        return AuctionConfig(self.reserve_price, self.share_cap, None, self.divisibility, self.tol)


@dataclass(frozen=True)
class ClearingOutcome:
    status: str
    stop_out_price: float | None
    quantity_sold: float
    revenue: float
    allocations: dict = field(default_factory=dict)
    target_met: bool | None = None

    @property
    def cleared(self) -> bool:
        return self.status == CLEARED

    def to_dict(self) -> dict:
        """Flat, key-ordered representation used for JSON output."""
        return {
            "status": self.status,
            "stop_out_price": self.stop_out_price,
            "quantity_sold": self.quantity_sold,
            "revenue": self.revenue,
            "target_met": self.target_met,
            "allocations": {str(k): v for k, v in self.allocations.items()},
        }


class RegimeClass(NamedTuple):
    label: str
    slack: float


class OptimalQuantity(NamedTuple):
    exact: float
    floor: int
    ceil: int


def build_aggregate_demand(schedules: Sequence[DemandSchedule]) -> AggregateDemand:
    """Sum bidder schedules into the aggregate step function ``Q(p)``."""
    by_price: dict[float, float] = defaultdict(float)
    for sched in schedules:
        for pt in sched.points:
            by_price[pt.price] += pt.quantity
    steps = []
    cum = 0.0
    for price in sorted(by_price, reverse=True):
        cum += by_price[price]
        steps.append((price, cum))
    return AggregateDemand(tuple(steps))


def _levels(schedules: Sequence[DemandSchedule], reserve: float, tol: float):
    """Group bids at or above the reserve into price levels, highest first."""
    levels: dict[float, list[tuple[Hashable, float]]] = defaultdict(list)
    for sched in schedules:
        for pt in sched.points:
            if geq(pt.price, reserve, tol):
                levels[pt.price].append((sched.bidder_id, pt.quantity))
    return [(p, levels[p]) for p in sorted(levels, reverse=True)]


def _sorted_ids(ids):
    try:
        return sorted(ids)
    except TypeError:
        return sorted(ids, key=str)


def _ration(entries, amount: float, integer: bool) -> dict:
    """Split ``amount`` across equal-priced ``entries`` in proportion to quantity."""
    total = sum(q for _, q in entries)
    if not integer:
        return {bid: amount * q / total for bid, q in entries}
    # Aggregate per bidder first so one bidder's merged quantity gets one share.
    per_bidder: dict = defaultdict(float)
    for bid, q in entries:
        per_bidder[bid] += q
    alloc = {bid: math.floor(amount * q / total) for bid, q in per_bidder.items()}
    left = int(round(amount - sum(alloc.values())))
    while left > 0:
        progressed = False
        for bid in _sorted_ids(per_bidder):
            if left == 0:
                break
            if alloc[bid] + 1 <= per_bidder[bid] + 1e-12:
                alloc[bid] += 1
                left -= 1
                progressed = True
        if not progressed:
            break
    return alloc


def _allocate(levels, quantity: float, integer: bool, ids) -> dict:
    """Fill levels top-down; the level where ``quantity`` runs out is rationed."""
    alloc = {bid: 0.0 for bid in ids}
    remaining = quantity
    for _, entries in levels:
        level_total = sum(q for _, q in entries)
        if remaining >= level_total - 1e-12 * max(1.0, level_total):
            for bid, q in entries:
                alloc[bid] += q
            remaining -= level_total
            if remaining <= 0:
                break
        else:
            if remaining > 0:
                for bid, q in _ration(entries, remaining, integer).items():
                    alloc[bid] += q
            break
    if integer:
        alloc = {bid: float(round(q)) for bid, q in alloc.items()}
    return alloc


def _clear(schedules: Sequence[DemandSchedule], config: AuctionConfig, use_target: bool) -> ClearingOutcome:
    ids = [s.bidder_id for s in schedules]
    r, cap, tol = config.reserve_price, config.share_cap, config.tol
    target = config.revenue_target if use_target else None
    integer = config.divisibility == INTEGER_FLOOR
    levels = _levels(schedules, r, tol)
    if not levels:
        return ClearingOutcome(
            NO_SALE, None, 0.0, 0.0, {bid: 0.0 for bid in ids}, False if target is not None else None
        )

    def reached(price, qty):
        return target is not None and geq(price * qty, target, tol)

    price = quantity = None
    accepted = 0.0  # quantity demanded strictly above the current candidate price
    for level_price, entries in levels:
        # Candidate: this level is the highest losing bid.
        if reached(level_price, accepted) or geq(accepted, cap, tol):
            price, quantity = level_price, min(accepted, cap)
            break
        level_total = sum(q for _, q in entries)
        if gt(accepted + level_total, cap, tol):
            # Supply runs out inside this level: it is rationed and sets the price.
            price, quantity = level_price, cap
            break
        accepted += level_total
    else:
        # Every bid at or above the reserve is accepted; no losing bid remains.
        price, quantity = r, accepted

    if reached(price, quantity):
        quantity = target / price
    if integer:
        quantity = float(math.floor(quantity + tol * max(1.0, quantity)))
        if target is not None and gt(price * quantity, target, tol):
            quantity -= 1.0
    alloc = _allocate(levels, quantity, integer, ids)
    revenue = price * quantity
    met = geq(revenue, target, tol) if target is not None else None
    return ClearingOutcome(CLEARED, price, quantity, revenue, alloc, met)


def clear_with_target(schedules: Sequence[DemandSchedule], config: AuctionConfig) -> ClearingOutcome:
    """Clear a revenue-target uniform-price auction.

    Walks candidate stop-out prices down the distinct bid prices. At each
    candidate the price is that bid (the highest losing bid) and the
    quantity is everything demanded strictly above it, capped at ``Q̄``.
    The first candidate whose revenue reaches ``R`` ends the auction, with
    the marginal accepted bids rationed pro rata so that revenue equals
    ``R``. If the cap binds inside a price level, that level is rationed
    and its price is the stop-out price. If neither happens the price
    falls to the reserve. Returns a ``no-sale`` outcome when no bid is at
    or above the reserve.
    """
    if config.revenue_target is None:
        raise ValidationError("clear_with_target requires a revenue_target")
    return _clear(schedules, config, use_target=True)


def clear_standard(schedules: Sequence[DemandSchedule], config: AuctionConfig) -> ClearingOutcome:
    """Plain uniform-price auction of ``Q̄`` shares; any revenue target is ignored."""
    return _clear(schedules, config, use_target=False)


def classify_regime(
    reserve_price: float,
    share_cap: float,
    revenue_target: float,
    threshold: float | None = None,
    scale: str = "raw",
) -> RegimeClass:
    """Label the seller's (r, Q̄, R) choice as ``Up``, ``Down`` or ``Middle``.

    With ``scale="raw"`` the inputs are in raw file units (yuan,
    10,000-share units, 100-million-yuan units) and the slack is
    ``r*Q̄ - 10000*R``; with ``scale="common"`` they are yuan and shares and
    the slack is ``r*Q̄ - R``. ``threshold`` defaults to 1000 and 1e7 resp.
    """
    r = check_positive(reserve_price, "reserve_price")
    q = check_positive(share_cap, "share_cap")
    big_r = check_positive(revenue_target, "revenue_target")
    if scale == "raw":
        slack = r * q - big_r * 10_000.0
        tau = RAW_THRESHOLD if threshold is None else threshold
    elif scale == "common":
        slack = r * q - big_r
        tau = COMMON_THRESHOLD if threshold is None else threshold
    else:
        raise ValidationError(f"scale must be 'raw' or 'common', got {scale!r}")
    if tau < 0:
        raise ValidationError("threshold must be non-negative")
    if slack > tau:
        return RegimeClass("Up", slack)
    if slack < -tau:
        return RegimeClass("Down", slack)
    return RegimeClass("Middle", slack)


def optimal_quantity(revenue_target: float, reserve_price: float) -> OptimalQuantity:
    """Share cap that makes selling everything at the reserve raise exactly ``R``."""
    big_r = check_positive(revenue_target, "revenue_target")
    r = check_positive(reserve_price, "reserve_price")
    exact = big_r / r
    return OptimalQuantity(exact, math.floor(exact), math.ceil(exact))


def schedules_from_pairs(bids: Mapping[Hashable, Iterable[tuple[float, float]]]) -> list[DemandSchedule]:
    """Convenience: ``{bidder: [(price, qty), ...]}`` -> list of schedules."""
    return [DemandSchedule.from_pairs(bid, pairs) for bid, pairs in bids.items()]
