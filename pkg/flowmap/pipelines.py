"""
Extension pipelines flowmap runs at fixed points of dataset preparation and sampling.
"""
from typing import Optional

from flowmap.exceptions import DatasetError
from flowmap.tooling import FlowMapPipeline


class DatasetPreparationRequested(FlowMapPipeline):
    """
    Pipeline used to turn loaded locations into normalized, model-ready locations.

    Pipeline Type:
        flowmap.dataset.preparation.requested.v1

    Trigger:
        - Function: flowmap.dataset.prepare_dataset

    Default steps align the series calendars, interpolate weather gaps, compute the normalization
    statistics (unless supplied) and normalize every location. The pipeline must leave ``prepared`` and
    ``normalization`` in its output.
    """

    pipeline_type = "flowmap.dataset.preparation.requested.v1"
    default_pipeline_config = {
        "pipeline": [
            "flowmap.steps.AlignLocationSeries",
            "flowmap.steps.InterpolateWeatherGaps",
            "flowmap.steps.ComputeNormalization",
            "flowmap.steps.NormalizeLocations",
        ],
        "fail_silently": False,
    }

    @classmethod
    def run_filter(cls, locations: list, normalization=None, stats_names: Optional[list] = None,
                   scope: str = "all", method: str = "minmax"):
        """
        Process the given locations with the configured pipeline steps.

        Arguments:
            - locations (list[Location]): locations to prepare.
            - normalization (NormalizationStats or None): statistics to apply instead of computing them.
            - stats_names (list[str] or None): names of the locations the statistics are computed from.
            - scope (str): label recorded in the computed statistics ("all" or "train").
            - method (str): normalization method of computed statistics ("minmax" or "zscore").

        Returns:
            tuple[list, NormalizationStats]:
                - list[PreparedLocation]: the prepared locations, in input order.
                - NormalizationStats: the statistics used.
        """
        data = super().run_pipeline(
            locations=locations, normalization=normalization, stats_names=stats_names, scope=scope, method=method,
        )
        if "prepared" not in data or data.get("normalization") is None:
            raise DatasetError(
                "the dataset preparation pipeline did not produce prepared locations",
                pipeline_type=cls.pipeline_type,
            )
        return data["prepared"], data["normalization"]


class TrainingSampleDrawn(FlowMapPipeline):
    """
    Pipeline used to augment a training sample right after it was drawn.

    Pipeline Type:
        flowmap.sampler.sample.drawn.v1

    Trigger:
        - Function: flowmap.sampler.draw_training_sample

    Steps receive the sample, the sampler's random generator and the flip probability; they must
    draw from that generator only, so that seeded sampling stays reproducible.
    """

    pipeline_type = "flowmap.sampler.sample.drawn.v1"
    default_pipeline_config = {
        "pipeline": ["flowmap.steps.ApplyRandomFlips"],
        "fail_silently": False,
    }

    @classmethod
    def run_filter(cls, sample, rng, flip_prob: float):
        """
        Process the sample with the configured augmentation steps.

        Returns:
            Sample: the possibly augmented sample.
        """
        data = super().run_pipeline(sample=sample, rng=rng, flip_prob=flip_prob)
        return data.get("sample")
