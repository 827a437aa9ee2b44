"""Discount regressions: winsorisation, regime dummies, OLS and VIF.

Estimators follow the scikit-learn fit / transform / predict protocol so
they compose with pipelines; :func:`fit_ols` is the DataFrame-level entry
point that handles column names, industry dummies and interactions.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ValidationError
from .core import COMMON_THRESHOLD, RAW_THRESHOLD, classify_regime

logger = logging.getLogger(__name__)


# -- winsorisation ------------------------------------------------------------------

class Winsorizer(TransformerMixin, BaseEstimator):
    """Clamp each column at its own linear-interpolation percentiles.

    Percentiles are learned on ``fit`` ignoring NaN; NaN passes through.
    """

    def __init__(self, lower: float = 1.0, upper: float = 99.0):
        self.lower = lower
        self.upper = upper

    def fit(self, X, y=None):
        if not 0 <= self.lower < self.upper <= 100:
            raise ValidationError(f"need 0 <= lower < upper <= 100, got ({self.lower}, {self.upper})")
        X = _as_2d(X)
        finite = np.isfinite(X).sum(axis=0)
        if np.any(finite < 2):
            raise ValidationError("each column needs at least two finite values")
        lo, hi = np.nanpercentile(X, [self.lower, self.upper], axis=0, method="linear")
        self.lower_bounds_, self.upper_bounds_ = lo, hi
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "lower_bounds_")
        X = _as_2d(X)
        return np.clip(X, self.lower_bounds_, self.upper_bounds_)


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def winsorize(values, lower: float = 1.0, upper: float = 99.0) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size and np.all(np.isnan(arr)):
        raise ValidationError("column is entirely missing")
    return Winsorizer(lower, upper).fit_transform(arr).reshape(arr.shape)


def winsorize_frame(df: pd.DataFrame, columns: Sequence[str], lower=1.0, upper=99.0) -> pd.DataFrame:
    out = df.copy()
    for col in columns:
        out[col] = winsorize(out[col].to_numpy(dtype=float), lower, upper)
    return out


# -- regime dummies ------------------------------------------------------------------

def make_regime_dummies(reserve_price, share_cap, revenue_target, threshold=None, scale="raw"):
    """``(exceed_reserve, below_reserve)`` as 0/1; vectorised over arrays."""
    r, q, R = np.broadcast_arrays(
        np.asarray(reserve_price, dtype=float),
        np.asarray(share_cap, dtype=float),
        np.asarray(revenue_target, dtype=float),
    )
    labels = [classify_regime(a, b, c, threshold, scale).label for a, b, c in zip(r.ravel(), q.ravel(), R.ravel())]
    exceed = np.array([lab == "Up" for lab in labels], dtype=int).reshape(r.shape)
    below = np.array([lab == "Down" for lab in labels], dtype=int).reshape(r.shape)
    if r.ndim == 0:
        return int(exceed), int(below)
    return exceed, below


# -- OLS ---------------------------------------------------------------------------------

class RankDeficientError(ValidationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")


def _collinear_columns(X, names, rtol=1e-10):
    """Columns that are linear combinations of earlier ones, with their partners."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Z = X / scale
    basis: list[int] = []
    bad: list[str] = []
    for j in range(Z.shape[1]):
        if not basis:
            if np.linalg.norm(Z[:, j]) > rtol:
                basis.append(j)
            else:
                bad.append(names[j])
            continue
        B = Z[:, basis]
        coef, *_ = np.linalg.lstsq(B, Z[:, j], rcond=None)
        resid = Z[:, j] - B @ coef
        if np.linalg.norm(resid) <= 1e-8:
            partners = [names[basis[i]] for i, c in enumerate(coef) if abs(c) > 1e-8]
            for name in partners + [names[j]]:
                if name not in bad:
                    bad.append(name)
        else:
            basis.append(j)
    return bad


class OLSRegression(RegressorMixin, BaseEstimator):
    """Ordinary least squares with classical or HC1 standard errors.

    Parameters
    ----------
    fit_intercept : bool
    cov_type : {"classical", "HC1"}
    """

    def __init__(self, fit_intercept: bool = True, cov_type: str = "classical"):
        self.fit_intercept = fit_intercept
        self.cov_type = cov_type

    def _design(self, X):
        X = _as_2d(X)
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return X

    def fit(self, X, y, feature_names=None):
        if self.cov_type not in ("classical", "HC1"):
            raise ValidationError(f"cov_type must be 'classical' or 'HC1', got {self.cov_type!r}")
        if feature_names is None and hasattr(X, "columns"):
            feature_names = [str(c) for c in X.columns]
        Xd = self._design(X)
        y = np.asarray(y, dtype=float).ravel()
        n, k = Xd.shape
        if y.shape[0] != n:
            raise ValidationError("X and y have different numbers of rows")
        if not (np.all(np.isfinite(Xd)) and np.all(np.isfinite(y))):
            raise ValidationError("X and y must be finite")
        if n <= k:
            raise ValidationError(f"need more observations than parameters (n={n}, k={k})")
        p = _as_2d(X).shape[1]
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]
        if len(names) != p:
            raise ValidationError("feature_names length does not match X")
        all_names = (["const"] if self.fit_intercept else []) + names

        Q, R = np.linalg.qr(Xd)
        diag = np.abs(np.diag(R))
        if diag.min() <= 1e-10 * max(diag.max(), 1.0) or np.linalg.matrix_rank(Xd) < k:
            raise RankDeficientError(_collinear_columns(Xd, all_names))
        beta = linalg.solve_triangular(R, Q.T @ y)
        resid = y - Xd @ beta
        df_resid = n - k
        Rinv = linalg.solve_triangular(R, np.eye(k))
        xtx_inv = Rinv @ Rinv.T
        ssr = float(resid @ resid)
        if self.cov_type == "classical":
            cov = xtx_inv * (ssr / df_resid)
        else:
            meat = (Xd * resid[:, None] ** 2).T @ Xd
            cov = xtx_inv @ meat @ xtx_inv * (n / df_resid)
        bse = np.sqrt(np.diag(cov))
        with np.errstate(divide="ignore", invalid="ignore"):
            tvals = beta / bse
        pvals = 2 * stats.t.sf(np.abs(tvals), df_resid)

        centered = y - y.mean() if self.fit_intercept else y
        tss = float(centered @ centered)
        r2 = 1.0 - ssr / tss if tss > 0 else 1.0
        df_model = k - (1 if self.fit_intercept else 0)
        r2_adj = 1.0 - (1.0 - r2) * (n - (1 if self.fit_intercept else 0)) / df_resid
        if df_model > 0 and tss > 0 and ssr > 0:
            fstat = ((tss - ssr) / df_model) / (ssr / df_resid)
            f_p = float(stats.f.sf(fstat, df_model, df_resid))
        else:
            fstat, f_p = (math.inf, 0.0) if ssr == 0 and tss > 0 else (math.nan, math.nan)

        self.params_ = beta
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:] if self.fit_intercept else beta
        self.bse_, self.tvalues_, self.pvalues_, self.cov_params_ = bse, tvals, pvals, cov
        self.resid_ = resid
        self.rsquared_, self.rsquared_adj_ = r2, r2_adj
        self.fvalue_, self.f_pvalue_ = float(fstat), f_p
        self.nobs_, self.df_resid_ = n, df_resid
        self.param_names_ = all_names
        self.feature_names_in_ = np.asarray(names, dtype=object)
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self._design(X) @ self.params_


# -- VIF ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class VIFResult:
    values: dict
    mean: float
    flagged: tuple

    def to_dict(self):
        return {
            "vif": {k: (None if math.isinf(v) else v) for k, v in self.values.items()},
            "mean": None if math.isinf(self.mean) else self.mean,
            "infinite": list(self.flagged),
        }


def vif(X, feature_names=None) -> VIFResult:
    """``1 / (1 - R²_j)`` from regressing each column on the others plus a constant.

    Perfectly explained columns get ``inf`` and are listed in ``flagged``.
    """
    X = _as_2d(X)
    n, p = X.shape
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]
    if p < 2:
        return VIFResult({names[0]: 1.0} if p else {}, 1.0 if p else math.nan, ())
    out = {}
    for j in range(p):
        y = X[:, j]
        A = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        yc = y - y.mean()
        tss = float(yc @ yc)
        ssr = float(resid @ resid)
        if tss == 0 or ssr <= 1e-12 * tss:
            out[names[j]] = math.inf
        else:
            out[names[j]] = tss / ssr
    flagged = tuple(k for k, v in out.items() if math.isinf(v))
    return VIFResult(out, float(np.mean(list(out.values()))), flagged)


# -- dataset-level regression ------------------------------------------------------------------

DEFAULT_INTERACTIONS = {
    "termt": ("money_to_raise", "shares_to_sell"),
    "terms": ("roa", "analyst"),
    "termc": ("market_value", "leverage"),
}

MODEL_0 = ("exceed_reserve", "below_reserve")
MODEL_1 = MODEL_0 + (
    "money_to_raise", "price_difference_ratio", "shares_to_sell", "offersize", "precar5",
    "analyst", "institution", "investornum", "roa", "termt", "terms", "termc",
)
MODELS = {"model0": MODEL_0, "model1": MODEL_1}


def prepare_regression_frame(
    seo: pd.DataFrame,
    threshold=None,
    scale="raw",
    interactions: Mapping[str, tuple] = DEFAULT_INTERACTIONS,
    percent: bool = False,
) -> pd.DataFrame:
    """Add discount, regime dummies, the reserve markup and interaction terms.

    ``seo`` carries raw file units (yuan, 10,000 shares, 100M yuan), which is
    what the default ``raw``-scale threshold expects.
    """
    need = {"reserve_price", "issue_price", "close_price", "shares_to_sell", "money_to_raise"}
    missing = need - set(seo.columns)
    if missing:
        raise ValidationError(f"missing columns: {sorted(missing)}")
    df = seo.copy()
    disc = (df["close_price"] - df["issue_price"]) / df["close_price"]
    df["discount"] = disc * 100 if percent else disc
    exceed, below = make_regime_dummies(
        df["reserve_price"].to_numpy(), df["shares_to_sell"].to_numpy(), df["money_to_raise"].to_numpy(),
        threshold, scale,
    )
    df["exceed_reserve"], df["below_reserve"] = exceed, below
    df["price_difference_ratio"] = (df["issue_price"] - df["reserve_price"]) / df["reserve_price"]
    for name, (a, b) in interactions.items():
        if a in df.columns and b in df.columns:
            df[name] = df[a] * df[b]
    return df


@dataclass(frozen=True)
class RegressionSpec:
    dependent: str = "discount"
    regressors: tuple = MODEL_1
    industry_dummies: bool = True
    cov_type: str = "classical"

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if self.dependent in self.regressors:
            raise ValidationError(f"dependent {self.dependent!r} is also a regressor")
        if len(set(self.regressors)) != len(self.regressors):
            raise ValidationError("duplicate regressor names")


@dataclass
class RegressionResult:
    names: list
    coefficients: np.ndarray
    std_errors: np.ndarray
    p_values: np.ndarray
    rsquared: float
    rsquared_adj: float
    f_pvalue: float
    n: int
    mean_vif: float | None
    cov_type: str = "classical"
    estimator: OLSRegression | None = field(default=None, repr=False)

    def to_dict(self):
        def num(x):
            x = float(x)
            return None if not math.isfinite(x) else x

        return {
            "n": self.n,
            "cov_type": self.cov_type,
            "adj_r_squared": num(self.rsquared_adj),
            "r_squared": num(self.rsquared),
            "f_pvalue": num(self.f_pvalue),
            "mean_vif": None if self.mean_vif is None else num(self.mean_vif),
            "coefficients": {
                n: {"estimate": num(c), "std_error": num(s), "p_value": num(p)}
                for n, c, s, p in zip(self.names, self.coefficients, self.std_errors, self.p_values)
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self, decimals=3, show=None):
        """Coefficient with stars over its standard error in parentheses."""
        rows = [n for n in self.names if show is None or n in show]
        width = max([len(n) for n in rows] + [18])
        lines = [f"{'Variable':<{width}}  Estimate", "-" * (width + 16)]
        idx = {n: i for i, n in enumerate(self.names)}
        for n in rows:
            i = idx[n]
            lines.append(f"{n:<{width}}  {self.coefficients[i]:.{decimals}f}{stars(self.p_values[i])}")
            lines.append(f"{'':<{width}}  ({self.std_errors[i]:.{decimals}f})")
        lines.append("-" * (width + 16))
        lines.append(f"{'p-value (F)':<{width}}  {_fmt_p(self.f_pvalue)}")
        lines.append(f"{'Adjusted R-squared':<{width}}  {self.rsquared_adj:.{decimals}f}")
        lines.append(f"{'N':<{width}}  {self.n}")
        if self.mean_vif is not None:
            lines.append(f"{'Mean VIF':<{width}}  {self.mean_vif:.2f}")
        lines.append("Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1")
        return "\n".join(lines)


def stars(p) -> str:
    if not np.isfinite(p):
        return ""
    for cut, mark in ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, ".")):
        if p < cut:
            return mark
    return ""


def _fmt_p(p):
    if not np.isfinite(p):
        return "n/a"
    return "< 2.2e-16" if p < 2.2e-16 else f"{p:.3g}"


def design_matrix(spec: RegressionSpec, data: pd.DataFrame):
    cols = list(spec.regressors) + [spec.dependent]
    missing = [c for c in cols if c not in data.columns]
    if spec.industry_dummies and "industry" not in data.columns:
        missing.append("industry")
    if missing:
        raise ValidationError(f"columns not in dataset: {missing}")
    X = data[list(spec.regressors)].astype(float)
    if spec.industry_dummies:
        dummies = pd.get_dummies(data["industry"].astype(str), prefix="ind", drop_first=True, dtype=float)
        X = pd.concat([X, dummies], axis=1)
    y = data[spec.dependent].astype(float)
    keep = X.notna().all(axis=1) & y.notna()
    dropped = int((~keep).sum())
    if dropped:
        logger.info("dropping %d rows with missing regression inputs", dropped)
    return X[keep], y[keep]


def fit_ols(spec: RegressionSpec, data: pd.DataFrame, with_vif: bool = True) -> RegressionResult:
    X, y = design_matrix(spec, data)
    est = OLSRegression(cov_type=spec.cov_type).fit(X.to_numpy(), y.to_numpy(), feature_names=list(X.columns))
    mean_vif = None
    if with_vif and len(spec.regressors) >= 2:
        mean_vif = vif(X[list(spec.regressors)].to_numpy(), list(spec.regressors)).mean
    return RegressionResult(
        est.param_names_, est.params_, est.bse_, est.pvalues_, est.rsquared_, est.rsquared_adj_,
        est.f_pvalue_, est.nobs_, mean_vif, spec.cov_type, est,
    )


# -- subsamples -----------------------------------------------------------------------------------

BIDDER_MIX = ("institutional", "mixed")


@dataclass
class Subsample:
    frame: pd.DataFrame
    count: int
    description: str


def subsample_filter(
    data: pd.DataFrame,
    bidder_mix: str | None = None,
    date_from=None,
    date_to=None,
    date_column: str = "announce_date",
) -> Subsample:
    """Rows matching the bidder mix and ``date_from <= date < date_to``.

    ``bidder_mix`` reads the boolean ``institutional_only`` column. An empty
    result warns instead of raising.
    """
    mask = pd.Series(True, index=data.index)
    parts = []
    if bidder_mix is not None:
        if bidder_mix not in BIDDER_MIX:
            raise ValidationError(f"bidder_mix must be one of {BIDDER_MIX}")
        if "institutional_only" not in data.columns:
            raise ValidationError("dataset has no institutional_only column")
        inst = data["institutional_only"].astype(bool)
        mask &= inst if bidder_mix == "institutional" else ~inst
        parts.append(f"bidders={bidder_mix}")
    if date_from is not None or date_to is not None:
        if date_column not in data.columns:
            raise ValidationError(f"dataset has no {date_column} column")
        dates = pd.to_datetime(data[date_column])
        if date_from is not None:
            mask &= dates >= pd.Timestamp(date_from)
            parts.append(f"from={date_from}")
        if date_to is not None:
            mask &= dates < pd.Timestamp(date_to)
            parts.append(f"before={date_to}")
    out = data[mask]
    if out.empty:
        warnings.warn("subsample filter matched no rows", RuntimeWarning, stacklevel=2)
    return Subsample(out, len(out), ", ".join(parts) or "all rows")


__all__ = [
    "COMMON_THRESHOLD", "RAW_THRESHOLD", "Winsorizer", "winsorize", "winsorize_frame",
    "make_regime_dummies", "OLSRegression", "RankDeficientError", "VIFResult", "vif",
    "RegressionSpec", "RegressionResult", "fit_ols", "prepare_regression_frame",
    "design_matrix", "subsample_filter", "stars", "MODEL_0", "MODEL_1", "MODELS",
    "DEFAULT_INTERACTIONS",
]
