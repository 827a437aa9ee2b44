"""Common-value bidding environments, strategies and mechanism experiments.

Each Monte Carlo trial draws its own generator from ``(seed, trial)``, so
results do not depend on how trials are scheduled across workers.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from ._validation import ValidationError, check_fraction, geq
from .core import (
    AuctionConfig,
    DemandSchedule,
    clear_standard,
    clear_with_target,
    optimal_quantity,
)

logger = logging.getLogger(__name__)

TARGET = "target-revenue"
STANDARD = "fixed-supply"
MECHANISMS = (TARGET, STANDARD)


# -- signal distributions ----------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ValidationError("uniform needs high > low")

    @property
    def support(self):
        return self.low, self.high

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n), None


@dataclass(frozen=True)
class PointMass:
    value: float = 0.5

    @property
    def support(self):
        return self.value, self.value

    def sample(self, rng, n):
        return np.full(n, float(self.value)), None


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    @property
    def support(self):
        return self.mean - 6 * self.sd, self.mean + 6 * self.sd

    def sample(self, rng, n):
        return rng.normal(self.mean, self.sd, size=n), None


@dataclass(frozen=True)
class CommonValueUniform:
    """Common value ``v ~ U(low, high)``; signals ``s_i = v + U(-noise, noise)``."""

    low: float = 8.0
    high: float = 12.0
    noise: float = 1.0

    def __post_init__(self):
        if not self.high > self.low or self.noise <= 0:
            raise ValidationError("common-value model needs high > low and noise > 0")

    @property
    def support(self):
        return self.low - self.noise, self.high + self.noise

    def sample(self, rng, n):
        v = rng.uniform(self.low, self.high)
        return v + rng.uniform(-self.noise, self.noise, size=n), float(v)


DISTRIBUTIONS = {
    "uniform": Uniform,
    "point": PointMass,
    "normal": Normal,
    "common-uniform": CommonValueUniform,
}


def make_distribution(family: str, **params):
    try:
        cls = DISTRIBUTIONS[family]
    except KeyError:
        raise ValidationError(
            f"unsupported signal distribution {family!r}; choose from {sorted(DISTRIBUTIONS)}"
        ) from None
    return cls(**params)


# -- valuation maps ------------------------------------------------------------
# Plain classes rather than lambdas so environments pickle across workers.

@dataclass(frozen=True)
class Affine:
    slope: float = 1.0
    intercept: float = 0.0

    def __call__(self, s):
        return self.slope * np.asarray(s, dtype=float) + self.intercept


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, s):
        return np.full(np.shape(s), float(self.value))


@dataclass(frozen=True)
class PosteriorMeanUniform:
    """``E[v | s]`` under :class:`CommonValueUniform`: midpoint of the feasible interval."""

    low: float
    high: float
    noise: float

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        lo = np.maximum(self.low, s - self.noise)
        hi = np.minimum(self.high, s + self.noise)
        return (lo + hi) / 2.0


@dataclass(frozen=True)
class ValueEnvironment:
    n: int
    signal_distribution: object = field(default_factory=Uniform)
    valuation_map: Callable = field(default_factory=Affine)
    quantity_per_bidder: float | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"need at least 2 bidders, got n={self.n}")
        lo, hi = self.signal_distribution.support
        grid = np.linspace(lo, hi, 201)
        vals = np.asarray(self.valuation_map(grid), dtype=float)
        if np.any(np.diff(vals) < -1e-12):
            raise ValidationError("valuation map must be non-decreasing on the signal support")

    @classmethod
    def common_value(cls, n: int, low=8.0, high=12.0, noise=1.0, quantity_per_bidder=None):
        """The default model: uniform common value, uniform noise, posterior-mean values."""
        return cls(
            n,
            CommonValueUniform(low, high, noise),
            PosteriorMeanUniform(low, high, noise),
            quantity_per_bidder,
        )


@dataclass(frozen=True)
class SignalDraw:
    seed: object
    signals: tuple
    common_value: float | None = None


def draw_signals(env: ValueEnvironment, seed) -> SignalDraw:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    signals, v = env.signal_distribution.sample(rng, env.n)
    return SignalDraw(seed, tuple(float(s) for s in signals), v)


# -- strategies ------------------------------------------------------------------

@dataclass(frozen=True)
class Truthful:
    """One flat bid at the bidder's expected value for the whole quantity."""

    def bid(self, bidder_id, value, quantity):
        return [(value, quantity)]


@dataclass(frozen=True)
class Shaded:
    """``split`` of the quantity bid at ``first_fraction*v``, the rest at ``later_fraction*v``."""

    first_fraction: float = 1.0
    later_fraction: float = 0.7
    split: float = 0.5

    def __post_init__(self):
        check_fraction(self.first_fraction, "first_fraction")
        check_fraction(self.later_fraction, "later_fraction")
        check_fraction(self.split, "split")

    def bid(self, bidder_id, value, quantity):
        pairs = [
            (self.first_fraction * value, self.split * quantity),
            (self.later_fraction * value, (1.0 - self.split) * quantity),
        ]
        return [(p, q) for p, q in pairs if p > 0 and q > 0]


@dataclass(frozen=True)
class Explicit:
    pairs: tuple

    def bid(self, bidder_id, value, quantity):
        return list(self.pairs)


@dataclass(frozen=True)
class StrategyProfile:
    strategies: tuple
    schedules: tuple = ()

    def __iter__(self):
        return iter(self.schedules)

    def __len__(self):
        return len(self.schedules)


def _as_strategy(strategy):
    if strategy in (None, "truthful"):
        return Truthful()
    if isinstance(strategy, str):
        raise ValidationError(f"unknown strategy {strategy!r}")
    return strategy


def build_profile(env, draw, quantities, strategies) -> StrategyProfile:
    values = np.asarray(env.valuation_map(np.asarray(draw.signals)), dtype=float)
    quantities = np.broadcast_to(np.asarray(quantities, dtype=float), values.shape)
    if np.any(quantities <= 0):
        raise ValidationError("per-bidder quantities must be positive")
    if not isinstance(strategies, (list, tuple)):
        strategies = [strategies] * env.n
    strategies = tuple(_as_strategy(s) for s in strategies)
    schedules = []
    for i, (strat, v, q) in enumerate(zip(strategies, values, quantities)):
        pairs = [(p, qq) for p, qq in strat.bid(i, float(v), float(q)) if p > 0]
        if pairs:
            schedules.append(DemandSchedule.from_pairs(i, pairs))
    return StrategyProfile(strategies, tuple(schedules))


def truthful_profile(env: ValueEnvironment, draw: SignalDraw, quantities) -> StrategyProfile:
    """Every bidder bids a single flat point ``(v(s_i), quantity_i)``.

    Bidders whose expected value is not positive submit nothing.
    """
    return build_profile(env, draw, quantities, Truthful())


# -- Monte Carlo ------------------------------------------------------------------

def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


def _default_quantity(env, config):
    if env.quantity_per_bidder is not None:
        return env.quantity_per_bidder
    return config.share_cap / 2.0


def _run_trials(fn, trials, jobs, chunk=64):
    starts = range(0, trials, chunk)
    batches = [range(s, min(s + chunk, trials)) for s in starts]
    if jobs == 1 or len(batches) == 1:
        out = [fn(b) for b in batches]
    else:
        out = Parallel(n_jobs=jobs)(delayed(fn)(b) for b in batches)
    return [row for batch in out for row in batch]


@dataclass(frozen=True)
class _TrialRunner:
    env: ValueEnvironment
    config: AuctionConfig
    strategy: object
    seed: int
    mechanisms: tuple
    quantity: float

    def __call__(self, trial_ids):
        rows = []
        for t in trial_ids:
            draw = draw_signals(self.env, trial_rng(self.seed, t))
            profile = build_profile(self.env, draw, self.quantity, self.strategy)
            for mech in self.mechanisms:
                clear = clear_with_target if mech == TARGET else clear_standard
                out = clear(list(profile.schedules), self.config)
                rows.append({
                    "trial": t,
                    "mechanism": mech,
                    "stop_out_price": out.stop_out_price,
                    "quantity_sold": out.quantity_sold,
                    "revenue": out.revenue,
                    "target_met": out.target_met,
                })
        return rows


def _moments(xs):
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return {"mean": None, "sd": None}
    sd = float(xs.std(ddof=1)) if xs.size > 1 else 0.0
    return {"mean": float(xs.mean()), "sd": sd}


@dataclass
class MonteCarloSummary:
    trials: int
    seed: int
    by_mechanism: dict
    records: list | None = None

    def to_dict(self):
        return {"trials": self.trials, "seed": self.seed, "mechanisms": self.by_mechanism}


def monte_carlo_revenue(
    env: ValueEnvironment,
    config: AuctionConfig,
    strategy="truthful",
    trials: int = 1000,
    seed: int = 0,
    mechanisms: Sequence[str] = MECHANISMS,
    keep_records: bool = False,
    jobs: int = 1,
) -> MonteCarloSummary:
    """Repeat draw -> bid -> clear and summarise price, quantity and revenue.

    No-sale trials are counted under ``no_sale`` and excluded from the price
    moments; they contribute zero revenue and quantity.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    for m in mechanisms:
        if m not in MECHANISMS:
            raise ValidationError(f"unknown mechanism {m!r}")
    if TARGET in mechanisms and config.revenue_target is None:
        raise ValidationError("target-revenue mechanism needs a revenue_target")
    runner = _TrialRunner(
        env, config, _as_strategy(strategy), seed, tuple(mechanisms), _default_quantity(env, config)
    )
    rows = _run_trials(runner, trials, jobs)
    summary = {}
    for mech in mechanisms:
        mine = [r for r in rows if r["mechanism"] == mech]
        cleared = [r for r in mine if r["stop_out_price"] is not None]
        met = [r["target_met"] for r in mine if r["target_met"] is not None]
        summary[mech] = {
            "stop_out_price": _moments([r["stop_out_price"] for r in cleared]),
            "revenue": _moments([r["revenue"] for r in mine]),
            "quantity_sold": _moments([r["quantity_sold"] for r in mine]),
            "no_sale": len(mine) - len(cleared),
            "target_met_rate": (sum(met) / len(met)) if met else None,
        }
    return MonteCarloSummary(trials, seed, summary, rows if keep_records else None)


RECORD_FIELDS = ("trial", "mechanism", "stop_out_price", "quantity_sold", "revenue", "target_met")


def write_records_csv(records, fh):
    writer = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in records:
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in RECORD_FIELDS})


# -- seller optimality check -------------------------------------------------------

@dataclass
class Prop1Report:
    revenue_target: float
    reserve_price: float
    optimal_cap: float
    candidates: list
    trials: int
    mean_revenue: list
    violations: list

    def to_dict(self):
        return {
            "revenue_target": self.revenue_target,
            "reserve_price": self.reserve_price,
            "optimal_cap": self.optimal_cap,
            "candidates": self.candidates,
            "trials": self.trials,
            "mean_revenue": self.mean_revenue,
            "violations": len(self.violations),
            "violation_instances": self.violations,
        }


@dataclass(frozen=True)
class _CapRunner:
    env: ValueEnvironment
    revenue_target: float
    reserve: float
    candidates: tuple
    optimal_index: int
    seed: int
    quantity: float
    tol: float

    def __call__(self, trial_ids):
        rows = []
        for t in trial_ids:
            draw = draw_signals(self.env, trial_rng(self.seed, t))
            profile = truthful_profile(self.env, draw, self.quantity)
            bids = list(profile.schedules)
            revs = [
                clear_with_target(bids, AuctionConfig(self.reserve, cap, self.revenue_target)).revenue
                for cap in self.candidates
            ]
            best = revs[self.optimal_index]
            bad = [c for c, rv in zip(self.candidates, revs) if best < rv - self.tol]
            rows.append((t, revs, bad, draw.signals))
        return rows


def verify_prop1(
    env: ValueEnvironment,
    revenue_target: float,
    reserve_price: float,
    candidates: Sequence[float] | None = None,
    trials: int = 1000,
    seed: int = 0,
    tol: float = 1e-9,
    jobs: int = 1,
) -> Prop1Report:
    """Check that ``Q̄ = R/r`` maximises seller revenue under truthful bidding.

    For every trial, the same truthful bids are cleared under each candidate
    share cap; any candidate beating ``R/r`` by more than ``tol`` is recorded
    with the full instance. Violations are data, not errors.
    """
    q_star = optimal_quantity(revenue_target, reserve_price).exact
    if candidates is None:
        candidates = [f * q_star for f in (0.25, 0.5, 1.0, 1.5, 2.0)]
    candidates = [float(c) for c in candidates]
    matches = [i for i, c in enumerate(candidates) if math.isclose(c, q_star, rel_tol=1e-12)]
    if not matches:
        raise ValidationError(f"candidate caps must include R/r = {q_star!r}")
    quantity = env.quantity_per_bidder if env.quantity_per_bidder is not None else q_star / 2.0
    runner = _CapRunner(
        env, float(revenue_target), float(reserve_price), tuple(candidates), matches[0], seed, quantity, tol
    )
    rows = _run_trials(runner, trials, jobs)
    violations = [
        {"trial": t, "signals": list(sig), "revenues": revs, "beaten_by": bad}
        for t, revs, bad, sig in rows
        if bad
    ]
    mean_rev = np.mean([revs for _, revs, _, _ in rows], axis=0).tolist()
    return Prop1Report(
        float(revenue_target), float(reserve_price), q_star, candidates, trials, mean_rev, violations
    )


# -- bidder best responses -------------------------------------------------------------

MAX_EVALUATIONS = 1_000_000


class GridTooLargeError(ValidationError):
    def __init__(self, evaluations: int):
        super().__init__(
            f"exhaustive search needs {evaluations:,} evaluations per bidder "
            f"(limit {MAX_EVALUATIONS:,})"
        )
        self.evaluations = evaluations


@dataclass
class DeviationReport:
    mechanism: str
    bidder: int
    value: float
    rival_bids: tuple
    best_response: tuple
    payoff: float
    argmax_size: int
    evaluated: int

    def to_dict(self):
        return {
            "mechanism": self.mechanism,
            "bidder": self.bidder,
            "value": self.value,
            "rival_bids": [list(b) for b in self.rival_bids],
            "best_response": list(self.best_response),
            "payoff": self.payoff,
            "argmax_size": self.argmax_size,
            "evaluated": self.evaluated,
        }


@dataclass
class DeviationPair:
    fixed_supply: DeviationReport
    target_revenue: DeviationReport

    @property
    def violation(self) -> bool:
        """True unless the target-revenue best response is component-wise >= fixed-supply."""
        return any(
            t < f for t, f in zip(self.target_revenue.best_response, self.fixed_supply.best_response)
        )

    def to_dict(self):
        return {
            "fixed_supply": self.fixed_supply.to_dict(),
            "target_revenue": self.target_revenue.to_dict(),
            "violation": self.violation,
        }


def bid_vectors(price_grid: Sequence[float], units: int) -> list[tuple]:
    """All non-increasing per-unit bid vectors over ``price_grid``."""
    grid = sorted({float(p) for p in price_grid}, reverse=True)
    return list(itertools.combinations_with_replacement(grid, units))


def _schedule(bidder, vector, reserve):
    pairs = [(p, 1.0) for p in vector if p >= reserve]
    return DemandSchedule.from_pairs(bidder, pairs) if pairs else None


def _payoff(outcome, bidder, value):
    if not outcome.cleared:
        return 0.0
    return (value - outcome.stop_out_price) * outcome.allocations.get(bidder, 0.0)


def _pick_highest(vectors):
    """Component-wise maximum of the tied set if it belongs to it, else the
    largest by (sum, lexicographic)."""
    top = tuple(max(col) for col in zip(*vectors))
    if top in vectors:
        return top
    return max(vectors, key=lambda v: (sum(v), v))


def best_response(
    value: float,
    rival_bids: Sequence[Sequence[float]],
    price_grid: Sequence[float],
    units: int,
    config: AuctionConfig,
    mechanism: str,
    bidder: int = 0,
    tol: float = 1e-9,
) -> DeviationReport:
    """Exhaustive best response of one bidder against fixed rival bid vectors.

    Every unit is one share; a bid below the reserve means the unit is not
    demanded. Payoff is ``(value - p*) * allocation``; ties within ``tol``
    are broken toward higher bids.
    """
    vectors = bid_vectors(price_grid, units)
    clear = clear_with_target if mechanism == TARGET else clear_standard
    rivals = []
    for j, vec in enumerate(rival_bids):
        s = _schedule(f"rival{j}", tuple(vec), config.reserve_price)
        if s is not None:
            rivals.append(s)
    payoffs = []
    for vec in vectors:
        mine = _schedule(bidder, vec, config.reserve_price)
        bids = rivals + ([mine] if mine is not None else [])
        payoffs.append(_payoff(clear(bids, config), bidder, value))
    best = max(payoffs)
    tied = [v for v, u in zip(vectors, payoffs) if geq(u, best, tol)]
    pick = _pick_highest(tied)
    return DeviationReport(
        mechanism, bidder, float(value), tuple(tuple(v) for v in rival_bids), pick, best, len(tied), len(vectors)
    )


def verify_prop2(
    value: float,
    rival_bids: Sequence[Sequence[float]],
    price_grid: Sequence[float],
    units: int,
    reserve_price: float,
    share_cap: float,
    bidder: int = 0,
    tol: float = 1e-9,
) -> DeviationPair:
    """Best responses under fixed supply and under the target ``R = r*Q̄``."""
    n_vec = math.comb(len(set(price_grid)) + units - 1, units)
    if n_vec > MAX_EVALUATIONS:
        raise GridTooLargeError(n_vec)
    target = reserve_price * share_cap
    cfg = AuctionConfig(reserve_price, share_cap, target)
    fixed = best_response(value, rival_bids, price_grid, units, cfg, STANDARD, bidder, tol)
    tgt = best_response(value, rival_bids, price_grid, units, cfg, TARGET, bidder, tol)
    return DeviationPair(fixed, tgt)


@dataclass
class Prop2Sweep:
    values: tuple
    price_grid: tuple
    units: int
    reserve_price: float
    share_cap: float
    pairs: list

    @property
    def violations(self):
        return [p for p in self.pairs if p.violation]

    def to_dict(self):
        return {
            "values": list(self.values),
            "price_grid": list(self.price_grid),
            "units": self.units,
            "reserve_price": self.reserve_price,
            "share_cap": self.share_cap,
            "instances": len(self.pairs),
            "violations": len(self.violations),
            "violation_instances": [p.to_dict() for p in self.violations],
        }


def prop2_sweep(
    values: Sequence[float] = (10.0, 8.0),
    price_grid: Sequence[float] = (3, 4, 5, 6, 7, 8, 9, 10),
    units: int = 3,
    reserve_price: float = 4.0,
    share_cap: float = 3.0,
    rival_profiles: int = 20,
    seed: int = 0,
) -> Prop2Sweep:
    """Best-response comparison for every bidder against sampled rival play.

    ``rival_profiles`` distinct rival bid vectors are drawn (seeded) from
    the rival's full strategy grid; each bidder in turn is the focal one.
    """
    if len(values) < 2:
        raise ValidationError("need at least two bidders")
    n_vec = math.comb(len(set(price_grid)) + units - 1, units)
    if n_vec * rival_profiles > MAX_EVALUATIONS:
        raise GridTooLargeError(n_vec * rival_profiles)
    vectors = bid_vectors(price_grid, units)
    rng = np.random.default_rng(seed)
    pairs = []
    for i, v in enumerate(values):
        rivals_idx = [j for j in range(len(values)) if j != i]
        if len(rivals_idx) == 1:
            picks = rng.choice(len(vectors), size=min(rival_profiles, len(vectors)), replace=False)
            profiles = [(vectors[k],) for k in sorted(picks)]
        else:
            profiles = [
                tuple(vectors[k] for k in rng.choice(len(vectors), size=len(rivals_idx)))
                for _ in range(rival_profiles)
            ]
        for prof in profiles:
            pairs.append(
                verify_prop2(v, prof, price_grid, units, reserve_price, share_cap, bidder=i)
            )
    return Prop2Sweep(tuple(values), tuple(price_grid), units, reserve_price, share_cap, pairs)
