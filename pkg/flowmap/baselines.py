"""
Non-learned reference predictors: the per-site mean flow and yesterday's flow.
"""
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from typing import Optional, Sequence

import numpy as np

from flowmap.exceptions import BaselineInputMissing, ConfigError
from flowmap.timeseries import Gauge, TimeSeries

log = getLogger(__name__)


class BaselineKind(str, Enum):
    MEAN_PER_SITE = "mean-per-site"
    PREVIOUS_FLOW = "previous-flow"


class MeanFit(str, Enum):
    ALL = "all"
    TRAIN_PERIOD = "train-period"


@dataclass(frozen=True)
class BaselinePrediction:
    site_id: str
    day: int
    flow: float


def mean_per_site(flow: TimeSeries, train_day_range: Optional[range] = None) -> float:
    """
    Mean of the measured flows, optionally restricted to the day indices in ``train_day_range``.
    """
    measured = ~flow.missing
    if train_day_range is not None:
        in_range = np.zeros(len(flow), dtype=bool)
        in_range[train_day_range.start:train_day_range.stop] = True
        measured &= in_range
    if not measured.any():
        raise BaselineInputMissing("no measured flow to fit the mean-per-site baseline on")
    return float(np.mean(flow.values[measured]))


def previous_flow(flow: TimeSeries, t: int) -> float:
    if t <= 0 or t > len(flow) or flow.missing[t - 1]:
        raise BaselineInputMissing("flow of day {} is not measured".format(t - 1), day=t)
    return float(flow.values[t - 1])


def train_period(flow: TimeSeries, fraction: float) -> range:
    return range(0, max(1, int(len(flow) * fraction)))


def predict_baseline(kind, gauge: Gauge, days: Sequence[int], train_day_range: Optional[range] = None
                     ) -> list[BaselinePrediction]:
    """
    Baseline predictions for ``days``; days whose baseline input is missing are left out.
    """
    kind = BaselineKind(kind)
    if kind == BaselineKind.MEAN_PER_SITE:
        mean = mean_per_site(gauge.flow, train_day_range)
        return [BaselinePrediction(gauge.site_id, int(t), mean) for t in days]

    predictions = []
    for t in days:
        try:
            predictions.append(BaselinePrediction(gauge.site_id, int(t), previous_flow(gauge.flow, int(t))))
        except BaselineInputMissing:
            continue
    return predictions


def baseline_rmse(predictions: Sequence[BaselinePrediction], flow: TimeSeries) -> float:
    if not predictions:
        raise BaselineInputMissing("no baseline prediction to score")
    preds = np.array([prediction.flow for prediction in predictions], dtype=np.float64)
    gts = flow.values[[prediction.day for prediction in predictions]]
    return float(np.sqrt(np.mean(np.square(preds - gts))))


class MeanPerSitePredictor:
    """
    Predicts the site's mean flow for every day.

    With ``fit="train-period"`` the mean is fitted on the first ``fit_fraction`` of the calendar only.
    """

    name = BaselineKind.MEAN_PER_SITE.value

    def __init__(self, fit=MeanFit.ALL, fit_fraction: float = 0.5):
        self.fit = MeanFit(fit)
        self.fit_fraction = fit_fraction

    @property
    def fit_range(self) -> str:
        if self.fit == MeanFit.ALL:
            return "all measured days"
        return "first {:.0%} of the calendar".format(self.fit_fraction)

    def predict(self, location, gauge_index: int, days: np.ndarray) -> np.ndarray:
        flow = location.gauges[gauge_index].flow
        day_range = train_period(flow, self.fit_fraction) if self.fit == MeanFit.TRAIN_PERIOD else None
        return np.full(len(days), mean_per_site(flow, day_range))


class PreviousFlowPredictor:
    """
    Predicts yesterday's measured flow; NaN when it was not measured.
    """

    name = BaselineKind.PREVIOUS_FLOW.value
    fit_range = None

    def predict(self, location, gauge_index: int, days: np.ndarray) -> np.ndarray:
        flow = location.gauges[gauge_index].flow.values
        missing = location.gauges[gauge_index].flow.missing
        days = np.asarray(days, dtype=int)
        preds = np.full(days.shape, np.nan)
        available = (days > 0) & (days <= len(flow))
        previous = days[available] - 1
        preds[available] = np.where(missing[previous], np.nan, flow[previous])
        return preds


def make_baseline(name: str, **kwargs):
    try:
        kind = BaselineKind(name)
    except ValueError as exc:
        raise ConfigError("unknown baseline '{}'".format(name), baseline=name) from exc
    if kind == BaselineKind.MEAN_PER_SITE:
        return MeanPerSitePredictor(**kwargs)
    return PreviousFlowPredictor()
