"""
Dated daily series (rainfall, temperature, water flow) and measurement gauges.
"""
import datetime
from dataclasses import dataclass, field, replace
from enum import Enum
from logging import getLogger
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from flowmap.exceptions import HistoryUnavailable, InterpolationError, SeriesError, SeriesParseError

log = getLogger(__name__)


class SeriesKind(str, Enum):
    RAIN = "rain_mm"
    TEMPERATURE = "temp_celsius"
    FLOW = "flow_m3s"


class NormalizationMethod(str, Enum):
    """
    How inputs and flows are scaled: into [0, 1] by the maximum, or to zero mean and unit variance.
    """

    MINMAX = "minmax"
    ZSCORE = "zscore"


@dataclass(frozen=True)
class TimeSeries:
    """
    Daily scalar series starting at ``start_date`` with an explicit missing-value mask.

    ``norm_max`` and ``norm_shift`` are recorded once the series has been normalized, so that
    ``raw = value * norm_max + norm_shift``.
    """

    start_date: datetime.date
    values: np.ndarray
    missing: np.ndarray
    kind: SeriesKind
    norm_max: Optional[float] = None
    norm_shift: float = 0.0

    def __post_init__(self):
        if len(self.values) != len(self.missing):
            raise SeriesError(
                "values and missing flags must have equal length",
                values=len(self.values), missing=len(self.missing),
            )
        self.values.setflags(write=False)
        self.missing.setflags(write=False)

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_values(cls, values, kind: SeriesKind, start_date: datetime.date = datetime.date(2000, 1, 1),
                    missing=None) -> "TimeSeries":
        """
        Build a series from raw values; NaN entries are flagged as missing.
        """
        values = np.asarray(values, dtype=np.float64).copy()
        if missing is None:
            missing = np.isnan(values)
        missing = np.asarray(missing, dtype=bool).copy()
        values[missing] = np.nan
        return cls(start_date=start_date, values=values, missing=missing, kind=SeriesKind(kind))

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_date, periods=len(self), freq="D")

    @property
    def is_normalized(self) -> bool:
        return self.norm_max is not None

    def measured(self, t: int) -> bool:
        return 0 <= t < len(self) and not self.missing[t]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"date": self.dates.strftime("%Y-%m-%d"), "value": self.values})


@dataclass(frozen=True)
class Gauge:
    """
    A water flow measurement site located at ``pixel`` on its location's shared grid.
    """

    site_id: str
    pixel: tuple[int, int]
    flow: TimeSeries = field(repr=False)


@dataclass(frozen=True)
class SeriesScaling:
    """
    Shift/scale pair of a series kind: ``normalized = (raw - shift) / scale``.
    """

    kind: SeriesKind
    shift: float
    scale: float

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "shift": self.shift, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> "SeriesScaling":
        return cls(kind=SeriesKind(data["kind"]), shift=float(data["shift"]), scale=float(data["scale"]))


def parse_series(path, kind) -> TimeSeries:
    """
    Parse a ``date,value`` CSV into a calendar-complete daily series.

    Empty value fields and days absent from the file become missing entries.

    Raises:
        SeriesParseError: malformed header, dates or values, or dates that are not strictly increasing.
    """
    kind = SeriesKind(kind)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SeriesParseError("cannot read series {}: {}".format(path, exc), path=str(path)) from exc

    if list(frame.columns) != ["date", "value"]:
        raise SeriesParseError("series {} must have the header 'date,value'".format(path), path=str(path))
    if frame.empty:
        raise SeriesParseError("series {} holds no rows".format(path), path=str(path))

    try:
        dates = pd.to_datetime(frame["date"].str.strip(), format="%Y-%m-%d")
    except ValueError as exc:
        raise SeriesParseError("invalid date in {}: {}".format(path, exc), path=str(path)) from exc
    if not dates.is_unique:
        raise SeriesParseError("duplicate dates in {}".format(path), path=str(path))
    if not dates.is_monotonic_increasing:
        raise SeriesParseError("dates are not increasing in {}".format(path), path=str(path))

    raw = frame["value"].str.strip()
    values = pd.to_numeric(raw.replace("", np.nan), errors="coerce")
    bad = values.isna() & (raw != "") & (raw.str.lower() != "nan")
    if bad.any():
        raise SeriesParseError(
            "non-numeric value '{}' in {}".format(raw[bad].iloc[0], path), path=str(path),
        )

    calendar = pd.date_range(dates.iloc[0], dates.iloc[-1], freq="D")
    daily = pd.Series(values.to_numpy(dtype=np.float64), index=pd.DatetimeIndex(dates)).reindex(calendar)
    return TimeSeries.from_values(daily.to_numpy(), kind, start_date=calendar[0].date())


def save_series(series: TimeSeries, path, float_format: str = "%.6f") -> None:
    """
    Write a series as a ``date,value`` CSV; missing days are written with an empty value.
    """
    series.to_frame().to_csv(Path(path), index=False, float_format=float_format, na_rep="")


def interpolate_gaps(series: TimeSeries) -> TimeSeries:
    """
    Fill missing entries of a model-input series.

    Interior gaps are linearly interpolated between the nearest measured end points; leading and
    trailing gaps take the nearest measured value. Flow series are never interpolated since every
    target must be a real measurement.
    """
    if series.kind == SeriesKind.FLOW:
        raise InterpolationError("flow series are targets and must not be interpolated", kind=series.kind.value)

    measured = ~series.missing
    if not measured.any():
        raise InterpolationError("cannot interpolate a series where every value is missing")
    if measured.all():
        return series

    days = np.arange(len(series))
    filled = np.interp(days, days[measured], series.values[measured])
    filled[measured] = series.values[measured]
    log.debug("Interpolated %d missing %s values", int((~measured).sum()), series.kind.value)
    return replace(series, values=filled, missing=np.zeros(len(series), dtype=bool))


def compute_series_scaling(series_list: Sequence[TimeSeries], kind,
                           method=NormalizationMethod.MINMAX) -> SeriesScaling:
    """
    Compute the scaling of every given series of ``kind``.

    With ``minmax`` the series land in [0, 1]: temperatures can be negative, so they are shifted by their
    global minimum first; the other kinds are only divided by their global maximum. With ``zscore`` every
    kind is shifted by its pooled mean and divided by its pooled standard deviation. A zero range falls
    back to a divisor of 1.0.
    """
    kind = SeriesKind(kind)
    method = NormalizationMethod(method)
    measured = [series.values[~series.missing] for series in series_list if series.kind == kind]
    measured = [values for values in measured if values.size]
    if not measured:
        raise SeriesError("no measured {} values to compute a scaling from".format(kind.value))

    pooled = np.concatenate(measured)
    if method == NormalizationMethod.ZSCORE:
        shift = float(pooled.mean())
        scale = float(pooled.std())
    else:
        shift = float(pooled.min()) if kind == SeriesKind.TEMPERATURE else 0.0
        scale = float((pooled - shift).max())
    if scale <= 0.0:
        log.warning("Series kind '%s' has a zero range; using 1.0 as its divisor.", kind.value)
        scale = 1.0
    return SeriesScaling(kind=kind, shift=shift, scale=scale)


def shift_series(series: TimeSeries, shift: float) -> TimeSeries:
    return replace(series, values=series.values - shift, norm_shift=series.norm_shift + shift)


def normalize_series(series: TimeSeries, max_value: float) -> TimeSeries:
    if not max_value > 0:
        raise SeriesError("normalization maximum must be positive, got {}".format(max_value), max_value=max_value)
    return replace(series, values=series.values / max_value, norm_max=float(max_value))


def apply_scaling(series: TimeSeries, scaling: SeriesScaling) -> TimeSeries:
    shifted = shift_series(series, scaling.shift) if scaling.shift else series
    return normalize_series(shifted, scaling.scale)


def denormalize_values(values, norm_max: float, norm_shift: float = 0.0) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * norm_max + norm_shift


def slice_history(series: TimeSeries, t: int, T: int) -> np.ndarray:
    """
    Return the ``T`` values preceding day ``t`` (indices ``t-T`` .. ``t-1``), oldest first.

    Raises:
        HistoryUnavailable: the slice starts before the series or contains a missing value.
    """
    if T <= 0 or t - T < 0 or t > len(series):
        raise HistoryUnavailable(
            "insufficient history: day {} with history length {} on a series of {} days".format(t, T, len(series)),
            day=t,
        )
    if series.missing[t - T:t].any():
        raise HistoryUnavailable("missing value in history window ending at day {}".format(t), day=t)
    return np.array(series.values[t - T:t], dtype=np.float64)


def reindex_series(series: TimeSeries, start_date: datetime.date, n_days: int) -> TimeSeries:
    """
    Place ``series`` on the daily calendar ``start_date .. start_date + n_days - 1``.

    Days the series does not cover become missing entries.
    """
    calendar = pd.date_range(start_date, periods=n_days, freq="D")
    values = pd.Series(np.where(series.missing, np.nan, series.values), index=series.dates).reindex(calendar)
    missing = pd.Series(series.missing, index=series.dates).reindex(calendar, fill_value=True)
    return replace(
        series,
        start_date=calendar[0].date(),
        values=values.to_numpy(dtype=np.float64),
        missing=missing.to_numpy(dtype=bool),
    )
