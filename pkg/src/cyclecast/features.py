"""Design-matrix construction: rolling stats, lags, EWM, temporal encodings.

Backward-looking transforms leave an undefined (NaN) warm-up prefix; the
assembled matrix drops those leading rows so every retained row is fully
defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import encoding
from .errors import ConfigError, DataError, InvariantError

GROUP_SINUSOIDAL = "Sinusoidal"
GROUP_ROLLING = "RollingStats"
GROUP_LAG = "LagFeatures"
GROUP_OTHERS = "Others"
GROUPS = (GROUP_SINUSOIDAL, GROUP_ROLLING, GROUP_LAG, GROUP_OTHERS)


def rolling_mean(series, w):
    """Trailing mean over the most recent w values; NaN before index w-1."""
    series = np.asarray(series, dtype=np.float64)
    if w < 1:
        raise ConfigError(f"window must be >= 1, got {w}")
    if w > series.size:
        raise DataError(f"window {w} exceeds series length {series.size}")
    out = np.full(series.size, np.nan)
    out[w - 1:] = sliding_window_view(series, w).mean(axis=1)
    return out


def rolling_std(series, w):
    """Trailing sample std (w-1 denominator); NaN before index w-1."""
    series = np.asarray(series, dtype=np.float64)
    if w < 2:
        raise ConfigError(f"rolling_std window must be >= 2, got {w}")
    if w > series.size:
        raise DataError(f"window {w} exceeds series length {series.size}")
    out = np.full(series.size, np.nan)
    out[w - 1:] = sliding_window_view(series, w).std(axis=1, ddof=1)
    return out


def lag(series, k):
    """Value k rows earlier; NaN for the first k rows."""
    series = np.asarray(series, dtype=np.float64)
    if k < 1:
        raise ConfigError(f"lag must be >= 1, got {k}")
    if k >= series.size:
        raise DataError(f"lag {k} >= series length {series.size}")
    out = np.full(series.size, np.nan)
    out[k:] = series[:-k]
    return out


def ewm_mean(series, halflife):
    """Exponentially weighted mean, e_0 = y_0, alpha = 1 - 2**(-1/halflife)."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise DataError("ewm_mean of empty series")
    if halflife <= 0:
        raise ConfigError(f"halflife must be > 0, got {halflife}")
    alpha = 1.0 - 2.0 ** (-1.0 / halflife)
    out = np.empty(series.size)
    out[0] = series[0]
    for i in range(1, series.size):
        out[i] = alpha * series[i] + (1.0 - alpha) * out[i - 1]
    return out


@dataclass(frozen=True)
class FeatureSpec:
    """Declarative recipe for the design matrix.

    ``temporal`` is a list of (feature_name, strategy) pairs resolved
    against the encoding registry. ``disabled_groups`` supports ablation.
    """

    rolling_windows: tuple = (6, 12, 24)
    rolling_stats: tuple = ("mean", "std")
    lags: tuple = (1, 2, 24, 168)
    ewm_halflives: tuple = (12.0,)
    temporal: tuple = (
        ("hour", encoding.SINUSOIDAL),
        ("hour", encoding.ORDINAL),
        ("dayofweek", encoding.ORDINAL),
    )
    disabled_groups: tuple = ()

    def __post_init__(self):
        for w in self.rolling_windows:
            if w < 2:
                raise ConfigError(f"rolling window must be >= 2, got {w}")
        for k in self.lags:
            if k < 1:
                raise ConfigError(f"lag must be >= 1, got {k}")
        for h in self.ewm_halflives:
            if h <= 0:
                raise ConfigError(f"halflife must be > 0, got {h}")
        for stat in self.rolling_stats:
            if stat not in ("mean", "std"):
                raise ConfigError(f"unknown rolling stat {stat!r}")
        for name, strategy in self.temporal:
            if name not in encoding.FEATURES:
                raise ConfigError(f"unknown cyclic feature {name!r}")
            if strategy not in encoding.STRATEGIES:
                raise ConfigError(f"unknown encoding strategy {strategy!r}")
        for g in self.disabled_groups:
            if g not in GROUPS:
                raise ConfigError(f"unknown feature group {g!r}")

    def warmup(self) -> int:
        lookbacks = [0]
        lookbacks += [k for k in self.lags]
        lookbacks += [w - 1 for w in self.rolling_windows]
        return max(lookbacks)

    def with_encoding(self, strategy: str) -> "FeatureSpec":
        """Re-encode every cyclic feature with one strategy (deduplicated)."""
        if strategy not in encoding.STRATEGIES:
            raise ConfigError(f"unknown encoding strategy {strategy!r}")
        seen = []
        for name, _ in self.temporal:
            if name not in seen:
                seen.append(name)
        return replace(self, temporal=tuple((n, strategy) for n in seen))

    def column_names(self):
        """Emitted column names in deterministic order, minus ablated groups."""
        names = []
        for fname, strategy in self.temporal:
            feat = encoding.FEATURES[fname]
            names.extend(encoding.encoded_column_names(feat, strategy))
        for w in self.rolling_windows:
            for stat in self.rolling_stats:
                names.append(f"rolling_{stat}_{w}h")
        for k in self.lags:
            names.append(f"lag_{k}h")
        for h in self.ewm_halflives:
            label = int(h) if float(h).is_integer() else h
            names.append(f"ewm_{label}h")
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature column names in spec")
        return [n for n in names if group_of(n) not in self.disabled_groups]

    def to_dict(self) -> dict:
        return {
            "rolling_windows": list(self.rolling_windows),
            "rolling_stats": list(self.rolling_stats),
            "lags": list(self.lags),
            "ewm_halflives": list(self.ewm_halflives),
            "temporal": [list(t) for t in self.temporal],
            "disabled_groups": list(self.disabled_groups),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown feature-spec keys: {sorted(extra)}")
        kwargs = {k: v for k, v in d.items()}
        for key in ("rolling_windows", "rolling_stats", "lags",
                    "ewm_halflives", "disabled_groups"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "temporal" in kwargs:
            kwargs["temporal"] = tuple(tuple(t) for t in kwargs["temporal"])
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSpec":
        return cls.from_dict(json.loads(text))


def group_of(column_name: str) -> str:
    """Ablation group a column belongs to (partition over all columns)."""
    if column_name.endswith("_sin") or column_name.endswith("_cos"):
        return GROUP_SINUSOIDAL
    if column_name.startswith("rolling_"):
        return GROUP_ROLLING
    if column_name.startswith("lag_"):
        return GROUP_LAG
    return GROUP_OTHERS


def ablate(spec: FeatureSpec, group: str) -> FeatureSpec:
    """Spec with one named group removed from the emitted columns."""
    if group not in GROUPS:
        raise ConfigError(f"unknown feature group {group!r}")
    if not any(group_of(n) == group for n in spec.column_names()):
        if group in spec.disabled_groups:
            return spec  # idempotent
        raise ConfigError(f"group {group!r} emits no columns in this spec")
    out = replace(spec, disabled_groups=tuple(
        sorted(set(spec.disabled_groups) | {group})
    ))
    if not out.column_names():
        raise ConfigError("ablating this group would leave an empty matrix")
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense design matrix with row-aligned target."""

    column_names: tuple
    values: np.ndarray
    target: np.ndarray
    dropped_warmup: int

    def __post_init__(self):
        if self.values.shape != (self.target.size, len(self.column_names)):
            raise InvariantError("feature matrix shape mismatch")
        if not np.all(np.isfinite(self.values)):
            raise InvariantError("non-finite values in feature matrix")
        self.values.setflags(write=False)
        self.target.setflags(write=False)

    @property
    def n_rows(self):
        return self.values.shape[0]

    def groups(self) -> dict:
        out = {g: [] for g in GROUPS}
        for name in self.column_names:
            out[group_of(name)].append(name)
        return out


def build_matrix(frame, spec: FeatureSpec) -> FeatureMatrix:
    """Materialize the design matrix for a frame under a feature spec.

    Column order is temporal, rolling, lag, ewm; leading rows where any
    backward-looking column is undefined are dropped.
    """
    names = spec.column_names()
    if not names:
        raise ConfigError("feature spec emits no columns")
    warmup = spec.warmup()
    if len(frame) <= warmup:
        raise DataError(
            f"frame has {len(frame)} rows, needs more than the "
            f"{warmup}-row warm-up"
        )
    y = frame.target

    columns: dict[str, np.ndarray] = {}
    terms = [(encoding.FEATURES[n], s) for n, s in spec.temporal]
    columns.update(encoding.expand_temporal(frame, terms))
    for w in spec.rolling_windows:
        for stat in spec.rolling_stats:
            fn = rolling_mean if stat == "mean" else rolling_std
            columns[f"rolling_{stat}_{w}h"] = fn(y, w)
    for k in spec.lags:
        columns[f"lag_{k}h"] = lag(y, k)
    for h in spec.ewm_halflives:
        label = int(h) if float(h).is_integer() else h
        columns[f"ewm_{label}h"] = ewm_mean(y, h)

    values = np.column_stack([columns[n][warmup:] for n in names])
    return FeatureMatrix(
        column_names=tuple(names),
        values=np.ascontiguousarray(values),
        target=y[warmup:].copy(),
        dropped_warmup=warmup,
    )
