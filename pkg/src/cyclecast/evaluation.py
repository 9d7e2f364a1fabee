"""Metrics, expanding-window cross-validation, period breakdowns, and
residual-distribution statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gbtree
from .errors import ConfigError, DataError
from .features import build_matrix

MAPE_FLOOR = 1e-8

PERIOD_BLOCKS = [
    ("Morning (6-12)", 6, 12),
    ("Afternoon (12-18)", 12, 18),
    ("Evening (18-24)", 18, 24),
    ("Night (0-6)", 0, 6),
]


def _check_pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.size == 0 or y.shape != yhat.shape:
        raise DataError("metric inputs must be equal-length, non-empty")
    return y, yhat


def rmse(y, yhat):
    y, yhat = _check_pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y, yhat):
    y, yhat = _check_pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def r2(y, yhat):
    """Coefficient of determination; None when SST is zero."""
    y, yhat = _check_pair(y, yhat)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return None
    sse = float(np.sum((y - yhat) ** 2))
    return 1.0 - sse / sst


def mape_pct(y, yhat, eps=MAPE_FLOOR):
    """Mean absolute percentage error with an epsilon denominator floor.

    Returns (value, floored) where floored marks that at least one |y|
    fell below eps.
    """
    y, yhat = _check_pair(y, yhat)
    denom = np.maximum(np.abs(y), eps)
    floored = bool(np.any(np.abs(y) < eps))
    return float(100.0 * np.mean(np.abs(y - yhat) / denom)), floored


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: float | None
    mape_pct: float
    r2_undefined_reason: str | None = None
    mape_floored: bool = False

    def to_dict(self) -> dict:
        d = {
            "rmse": self.rmse,
            "mae": self.mae,
            "r2": self.r2,
            "mape_pct": self.mape_pct,
        }
        if self.r2_undefined_reason:
            d["r2_undefined_reason"] = self.r2_undefined_reason
        if self.mape_floored:
            d["mape_floored"] = True
        return d


def compute_metrics(y, yhat) -> Metrics:
    r2_val = r2(y, yhat)
    mape_val, floored = mape_pct(y, yhat)
    return Metrics(
        rmse=rmse(y, yhat),
        mae=mae(y, yhat),
        r2=r2_val,
        mape_pct=mape_val,
        r2_undefined_reason=None if r2_val is not None else "zero target variance",
        mape_floored=floored,
    )


@dataclass(frozen=True)
class CVPlan:
    """Expanding-window fold layout over half-open row ranges."""

    k: int
    delta: int
    splits: tuple  # ((train_start, train_end), (val_start, val_end)) per fold

    def __post_init__(self):
        prev_end = 0
        last_val_end = None
        for (tr_s, tr_e), (va_s, va_e) in self.splits:
            if not (tr_s == 0 and tr_s < tr_e <= va_s < va_e):
                raise ConfigError("malformed CV fold ranges")
            if tr_e < prev_end:
                raise ConfigError("training ranges must expand")
            if last_val_end is not None and va_s != last_val_end:
                raise ConfigError("validation blocks must be contiguous")
            prev_end = tr_e
            last_val_end = va_e


def expanding_splits(n, k, delta, min_train=None) -> CVPlan:
    """Trailing equal-width validation blocks with expanding train ranges."""
    if k < 1 or delta < 1:
        raise ConfigError("k and delta must be >= 1")
    if min_train is None:
        min_train = delta
    first_val = n - k * delta
    if first_val < min_train:
        raise ConfigError(
            f"n={n} too small for k={k} folds of width {delta} "
            f"with at least {min_train} initial training rows"
        )
    splits = []
    for i in range(k):
        va_s = first_val + i * delta
        splits.append(((0, va_s), (va_s, va_s + delta)))
    return CVPlan(k=k, delta=delta, splits=tuple(splits))


@dataclass(frozen=True)
class CVResult:
    cv_score: float
    fold_rmses: tuple
    fold_metrics: tuple
    dispersion: float  # std of fold RMSE
    stability: float | None  # std / mean of fold RMSE (this artifact's label)
    plan: CVPlan

    def to_dict(self) -> dict:
        return {
            "cv_score": self.cv_score,
            "fold_rmses": list(self.fold_rmses),
            "fold_metrics": [m.to_dict() for m in self.fold_metrics],
            "rmse_std": self.dispersion,
            "cv_stability": self.stability,
            "k": self.plan.k,
            "delta": self.plan.delta,
        }


def cross_validate(frame, spec, params, k, delta) -> CVResult:
    """Mean fold RMSE over expanding-window folds.

    The feature matrix is built once over the full frame (all features
    are backward-looking, so no validation row leaks into training
    features) and row-filtered per fold.
    """
    plan = expanding_splits(len(frame), k, delta)
    matrix = build_matrix(frame, spec)
    offset = matrix.dropped_warmup

    fold_rmses = []
    fold_metrics = []
    for (tr_s, tr_e), (va_s, va_e) in plan.splits:
        tr_lo, tr_hi = max(tr_s - offset, 0), tr_e - offset
        va_lo, va_hi = va_s - offset, va_e - offset
        if tr_hi - tr_lo < 2 or va_lo < 0 or va_hi - va_lo < 1:
            raise DataError(
                "fold too small after dropping feature warm-up rows"
            )
        X_tr = matrix.values[tr_lo:tr_hi]
        y_tr = matrix.target[tr_lo:tr_hi]
        X_va = matrix.values[va_lo:va_hi]
        y_va = matrix.target[va_lo:va_hi]
        model, _ = gbtree.fit(X_tr, y_tr, params, val=(X_va, y_va))
        pred = gbtree.predict(model, X_va)
        fold_rmses.append(rmse(y_va, pred))
        fold_metrics.append(compute_metrics(y_va, pred))

    arr = np.asarray(fold_rmses)
    cv_score = float(arr.mean())
    dispersion = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    stability = dispersion / cv_score if cv_score > 0 else None
    return CVResult(
        cv_score=cv_score,
        fold_rmses=tuple(fold_rmses),
        fold_metrics=tuple(fold_metrics),
        dispersion=dispersion,
        stability=stability,
        plan=plan,
    )


def period_breakdown(y, yhat, hours):
    """Metrics per day-period block (Morning/Afternoon/Evening/Night).

    Blocks partition the hour labels; an empty block is flagged, not an
    error. Returns an ordered dict label -> Metrics dict or empty marker.
    """
    y, yhat = _check_pair(y, yhat)
    hours = np.asarray(hours)
    if hours.shape != y.shape:
        raise DataError("hour labels must align with predictions")
    if np.any((hours < 0) | (hours >= 24)):
        raise DataError("hour labels must lie in [0, 24)")
    out = {}
    covered = 0
    for label, lo, hi in PERIOD_BLOCKS:
        mask = (hours >= lo) & (hours < hi)
        covered += int(mask.sum())
        if not mask.any():
            out[label] = {"empty": True}
        else:
            out[label] = compute_metrics(y[mask], yhat[mask]).to_dict()
    if covered != y.size:
        raise DataError("period blocks failed to partition the input")
    return out


@dataclass(frozen=True)
class ResidualStats:
    mean: float
    std: float
    skewness: float | None
    kurtosis: float | None  # raw (normal ~ 3), not excess
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "degenerate": self.degenerate,
        }


def residual_stats(residuals) -> ResidualStats:
    """First four moments of the residual distribution."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.size < 4:
        raise DataError("need at least 4 residuals for moment statistics")
    mean = float(r.mean())
    std = float(r.std(ddof=1))
    centered = r - mean
    m2 = float(np.mean(centered ** 2))
    if m2 == 0.0:
        return ResidualStats(mean, std, None, None, degenerate=True)
    m3 = float(np.mean(centered ** 3))
    m4 = float(np.mean(centered ** 4))
    return ResidualStats(
        mean=mean,
        std=std,
        skewness=m3 / m2 ** 1.5,
        kurtosis=m4 / m2 ** 2,
    )
