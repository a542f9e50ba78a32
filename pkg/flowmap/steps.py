"""
Pipeline steps run by flowmap's pipeline runner, and the steps flowmap ships by default.
"""
from abc import abstractmethod
from logging import getLogger

from flowmap.dataset import Location, PreparedLocation, compute_normalization
from flowmap.exceptions import DatasetError
from flowmap.raster_store import normalize_stack
from flowmap.sampler import apply_flips
from flowmap.timeseries import Gauge, apply_scaling, interpolate_gaps, reindex_series

log = getLogger(__name__)


class PipelineStep:
    """
    Defines each step of a pipeline executed by the pipeline runner.

    Example usage:

        A step that drops every gauge with fewer than 100 measured days before normalization:

        class DropShortGauges(PipelineStep):

            def run_filter(self, locations, **kwargs):
                return {
                    "locations": [
                        dataclasses.replace(
                            location,
                            gauges=tuple(g for g in location.gauges if (~g.flow.missing).sum() >= 100),
                        )
                        for location in locations
                    ]
                }

        It is enabled by listing its dotted path in FLOWMAP_PIPELINES_CONFIG for the
        ``flowmap.dataset.preparation.requested.v1`` pipeline, before ``NormalizeLocations``.
    """

    def __init__(self, pipeline_type, running_pipeline, **extra_config):
        """
        Init method for PipelineStep base class.

        Arguments:
            pipeline_type (str): name of the pipeline.
            running_pipeline (list): list of steps currently running.
            extra_config (dict): extra configuration defined in FLOWMAP_PIPELINES_CONFIG.
        """
        self.pipeline_type = pipeline_type
        self.running_pipeline = running_pipeline
        self.extra_config = extra_config

    @abstractmethod
    def run_filter(self, **kwargs):
        """
        Abstract pipeline step runner.

        It must be implemented by child classes.
        """
        log.warning(
            "PipelineStep run method not implemented.\n"
            "Child classes must implement this method with their custom code.\n"
            "The pipeline expects either a dictionary, which updates the accumulated output, or any other "
            "object, which stops the pipeline and returns the output accumulated so far.\n"
        )


class AlignLocationSeries(PipelineStep):
    """
    Put the weather and flow series of each location on one daily calendar.

    The calendar is the overlap of the rain and temperature series; flow days outside it are dropped
    and flow days the gauge never reported become missing entries.
    """

    def run_filter(self, locations, **kwargs):  # pylint: disable=arguments-differ
        aligned = []
        for location in locations:
            start = max(location.rain.dates[0], location.temp.dates[0])
            end = min(location.rain.dates[-1], location.temp.dates[-1])
            if end < start:
                raise DatasetError(
                    "rain and temperature series of '{}' do not overlap".format(location.name),
                    location=location.name,
                )
            n_days = (end - start).days + 1
            start = start.date()
            aligned.append(
                Location(
                    name=location.name,
                    rasters=location.rasters,
                    rain=reindex_series(location.rain, start, n_days),
                    temp=reindex_series(location.temp, start, n_days),
                    gauges=tuple(
                        Gauge(gauge.site_id, gauge.pixel, reindex_series(gauge.flow, start, n_days))
                        for gauge in location.gauges
                    ),
                )
            )
        return {"locations": aligned}


class InterpolateWeatherGaps(PipelineStep):

    def run_filter(self, locations, **kwargs):  # pylint: disable=arguments-differ
        return {
            "locations": [
                Location(
                    name=location.name,
                    rasters=location.rasters,
                    rain=interpolate_gaps(location.rain),
                    temp=interpolate_gaps(location.temp),
                    gauges=location.gauges,
                )
                for location in locations
            ]
        }


class ComputeNormalization(PipelineStep):
    """
    Compute normalization statistics unless the caller already supplied them.
    """

    def run_filter(self, locations, normalization=None, stats_names=None, scope="all", method="minmax",
                   **kwargs):  # pylint: disable=arguments-differ
        if normalization is not None:
            return {}

        sources = [location for location in locations if location.name in stats_names] if stats_names else locations
        stats = compute_normalization(sources, scope, method)
        log.info(
            "Computed %s normalization over %d location(s): flow scale %.6g, temperature shift %.6g",
            stats.method.value, len(sources), stats.flow.scale, stats.temp.shift,
        )
        return {"normalization": stats}


class NormalizeLocations(PipelineStep):

    def run_filter(self, locations, normalization=None, **kwargs):  # pylint: disable=arguments-differ
        if normalization is None:
            raise DatasetError("no normalization statistics available to normalize locations with")

        prepared = []
        for location in locations:
            flow_scaling = normalization.flow
            prepared.append(
                PreparedLocation(
                    name=location.name,
                    spatial=normalize_stack(
                        location.rasters, normalization.layer_maxima, normalization.layer_means,
                    ).array,
                    rain=apply_scaling(location.rain, normalization.rain).values,
                    temp=apply_scaling(location.temp, normalization.temp).values,
                    gauges=location.gauges,
                    flows_norm=tuple(
                        apply_scaling(gauge.flow, flow_scaling).values for gauge in location.gauges
                    ),
                    flow_scaling=flow_scaling,
                )
            )
        return {"prepared": prepared}


class ApplyRandomFlips(PipelineStep):
    """
    Flip a training sample horizontally and vertically, each with an independent probability.
    """

    def run_filter(self, sample, rng, flip_prob=0.5, **kwargs):  # pylint: disable=arguments-differ
        flip_h = bool(rng.random() < flip_prob)
        flip_v = bool(rng.random() < flip_prob)
        if not (flip_h or flip_v):
            return {}
        return {"sample": apply_flips(sample, flip_h, flip_v)}
