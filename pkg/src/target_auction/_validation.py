"""Small input-checking helpers shared across modules."""

from __future__ import annotations

import math

DEFAULT_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_positive(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be strictly positive and finite, got {value!r}")
    return value


def check_fraction(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def geq(a: float, b: float, tol: float = DEFAULT_TOL) -> bool:
    """``a >= b`` up to ``tol`` scaled by the magnitude of ``b``.

    A pure absolute tolerance is useless at yuan scale (1e9 and up), where
    adjacent doubles are already ~1e-7 apart.
    """
    return a >= b - tol * max(1.0, abs(b))


def gt(a: float, b: float, tol: float = DEFAULT_TOL) -> bool:
    return a > b + tol * max(1.0, abs(b))
