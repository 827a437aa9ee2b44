"""Independent reference implementations used only by the test-suite.

Nothing here imports the clearing engine. Each oracle works on raw bid
triples and recomputes demand by direct summation.
"""

import numpy as np


def brute_force_clear(bids, reserve, cap, target=None, tol=1e-9):
    """Enumerate every candidate (price, quantity) pair and pick per the rule.

    ``bids`` is a list of ``(bidder, price, quantity)``. Candidates are:

    * each whole-level cut, priced at the highest losing bid: quantity is
      everything bid strictly above that price;
    * the all-accepted cut, priced at the reserve;
    * each cut where the cap falls strictly inside a price level, priced at
      that level.

    Candidates above the cap are infeasible. Walking in order of quantity,
    the first one whose revenue reaches the target wins (trimmed to the
    target); otherwise the largest feasible one.

    Returns ``(price, quantity, revenue)`` or ``None`` for a no-sale.
    """
    valid = [(b, p, q) for b, p, q in bids if p >= reserve - tol * max(1.0, reserve)]
    if not valid:
        return None
    prices = sorted({p for _, p, _ in valid}, reverse=True)

    def above(x):
        return sum(q for _, p, q in valid if p > x)

    def at_or_above(x):
        return sum(q for _, p, q in valid if p >= x)

    candidates = [(above(p), p) for p in prices]
    candidates.append((sum(q for _, _, q in valid), reserve))
    for p in prices:
        if above(p) < cap < at_or_above(p):
            candidates.append((cap, p))
    feasible = sorted((q, p) for q, p in candidates if q <= cap + tol * max(1.0, cap))
    if target is not None:
        for q, p in feasible:
            if p * q >= target - tol * max(1.0, target):
                q = target / p
                return p, q, p * q
    q, p = feasible[-1]
    return p, q, p * q


def percentile_linear(values, pct):
    """Type-7 percentile by explicit order statistics."""
    xs = sorted(values)
    h = (len(xs) - 1) * pct / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def normal_equation_ols(X, y):
    """Solve (X'X) b = X'y directly; X already includes the intercept column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.linalg.solve(X.T @ X, X.T @ y)


def auxiliary_vif(X, j):
    """1/(1-R^2) from regressing column j on the others plus an intercept."""
    X = np.asarray(X, dtype=float)
    y = X[:, j]
    others = np.delete(X, j, axis=1)
    A = np.column_stack([np.ones(len(y)), others])
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    resid = y - A @ coef
    r2 = 1.0 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
    return 1.0 / (1.0 - r2)


def dense_trapezoid(f, a, b, panels=1_000_000):
    x = np.linspace(a, b, panels + 1)
    y = f(x)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)
