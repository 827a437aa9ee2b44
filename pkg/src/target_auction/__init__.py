"""Uniform-price share auctions with a revenue target.

Submodules: ``core`` (clearing), ``strategy`` (bidding simulations and
proposition checks), ``benchmark`` (truthful-demand benchmark and forecast
metrics), ``econometrics`` (OLS, VIF, winsorizing), ``data_io`` (CSV schema,
merging, synthetic data) and ``cli``.
"""

from ._validation import ValidationError
from .core import (
    AggregateDemand,
    AuctionConfig,
    BidPoint,
    ClearingOutcome,
    DemandSchedule,
    InvalidBidError,
    build_aggregate_demand,
    classify_regime,
    clear_standard,
    clear_with_target,
    optimal_quantity,
    schedules_from_pairs,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateDemand",
    "AuctionConfig",
    "BidPoint",
    "ClearingOutcome",
    "DemandSchedule",
    "InvalidBidError",
    "ValidationError",
    "build_aggregate_demand",
    "classify_regime",
    "clear_standard",
    "clear_with_target",
    "optimal_quantity",
    "schedules_from_pairs",
    "__version__",
]
