"""
Tests for location storage, splits, supervised days and dataset preparation.
"""
import dataclasses
import datetime
import json
import tempfile
from pathlib import Path

import ddt
import numpy as np
from django.test import TestCase, override_settings

from flowmap.dataset import (
    Location,
    NormalizationStats,
    Split,
    compute_normalization,
    load_location,
    load_locations,
    load_split,
    prepare_dataset,
    prepare_split,
    save_location,
    save_split,
    supervised_days,
)
from flowmap.exceptions import DatasetError
from flowmap.steps import PipelineStep
from flowmap.timeseries import Gauge, SeriesKind
from test_utils.factories import constant_location, series, synth_location, synth_locations


class DropAllButFirstGauge(PipelineStep):
    """
    Keeps the first gauge of every location.
    """

    def run_filter(self, locations, **kwargs):  # pylint: disable=arguments-differ
        return {"locations": [dataclasses.replace(location, gauges=location.gauges[:1]) for location in locations]}


class TestLocationStorage(TestCase):
    """
    Test class to verify location trees on disk.
    """

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.directory = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()
        super().tearDown()

    def test_saved_location_loads_back(self):
        """
        This method saves a synthetic location and loads it from its directory.

        Expected behavior:
            Rasters, weather, gauge pixels and flows survive.
        """
        location = synth_location(n_gauges=2)
        save_location(location, self.directory / location.name)

        loaded = load_location(self.directory / location.name)

        self.assertEqual(loaded.name, location.name)
        np.testing.assert_array_equal(loaded.rasters.array, location.rasters.array)
        self.assertEqual([gauge.pixel for gauge in loaded.gauges], [gauge.pixel for gauge in location.gauges])
        np.testing.assert_allclose(loaded.gauges[1].flow.values, location.gauges[1].flow.values, rtol=1e-8)
        np.testing.assert_allclose(loaded.rain.values, location.rain.values, atol=1e-6)

    def test_missing_manifest(self):
        """
        This method loads a directory without a manifest.

        Expected behavior:
            Raises DatasetError.
        """
        with self.assertRaises(DatasetError):
            load_location(self.directory)

    def test_manifest_without_gauges(self):
        """
        This method loads a manifest that lacks the gauges key.

        Expected behavior:
            Raises DatasetError naming the key.
        """
        location = synth_location()
        manifest_path = save_location(location, self.directory / location.name)
        manifest = json.loads(manifest_path.read_text())
        del manifest["gauges"]
        manifest_path.write_text(json.dumps(manifest))

        with self.assertRaisesRegex(DatasetError, "gauges"):
            load_location(manifest_path)

    def test_unknown_location_name(self):
        """
        This method loads a location name that has no directory.

        Expected behavior:
            Raises DatasetError.
        """
        with self.assertRaises(DatasetError):
            load_locations(self.directory, ["nowhere"])

    def test_gauge_outside_grid(self):
        """
        This method builds a location with a gauge beyond the raster grid.

        Expected behavior:
            Raises DatasetError.
        """
        location = constant_location()

        with self.assertRaises(DatasetError):
            Location(
                name="broken",
                rasters=location.rasters,
                rain=location.rain,
                temp=location.temp,
                gauges=(Gauge("g", (40, 3), location.gauges[0].flow),),
            )

    def test_split_round_trip_and_empty_train(self):
        """
        This method saves a split, loads it, and loads a split without training locations.

        Expected behavior:
            The split survives; the empty one raises DatasetError.
        """
        save_split(Split(train=("a", "b"), val=("c",)), self.directory / "split.json")
        (self.directory / "empty.json").write_text(json.dumps({"train": [], "val": ["c"]}))

        self.assertEqual(load_split(self.directory / "split.json"), Split(train=("a", "b"), val=("c",)))
        with self.assertRaises(DatasetError):
            load_split(self.directory / "empty.json")


@ddt.ddt
class TestSupervisedDays(TestCase):
    """
    Test class to verify which days can supervise training.
    """

    def test_days_need_full_history(self):
        """
        This method lists the supervised days of a fully measured 10-day gauge with T = 4.

        Expected behavior:
            Days 4 .. 9 are supervised.
        """
        np.testing.assert_array_equal(supervised_days(np.ones(10, dtype=bool), 4), np.arange(4, 10))

    def test_unmeasured_days_are_skipped(self):
        """
        This method lists supervised days with two unmeasured days.

        Expected behavior:
            The unmeasured days are left out.
        """
        measured = np.ones(10, dtype=bool)
        measured[[5, 8]] = False

        np.testing.assert_array_equal(supervised_days(measured, 4), [4, 6, 7, 9])

    @ddt.data(
        (1, [6, 7, 8, 9, 10, 11]),
        (2, [7, 8, 9, 10, 11]),
        (3, [8, 9, 10, 11]),
    )
    @ddt.unpack
    def test_flow_lag_needs_measured_history(self, flow_lag, expected):
        """
        This method lists supervised days for flow-lag inputs when day 1 is unmeasured.

        Expected behavior:
            A day is kept only if the lagged flow history t-T-k+1 .. t-k avoids day 1.
        """
        measured = np.ones(12, dtype=bool)
        measured[1] = False

        np.testing.assert_array_equal(supervised_days(measured, 4, flow_lag), expected)


class TestPrepareDataset(TestCase):
    """
    Test class to verify the dataset preparation pipeline.
    """

    def test_prepared_arrays(self):
        """
        This method prepares two synthetic locations with weather gaps.

        Expected behavior:
            Spatial inputs lie in [0, 1], weather is gap free and in [0, 1], and normalized flows are the
            raw flows divided by the flow scale.
        """
        locations = synth_locations(2, weather_missing_fraction=0.1, flow_missing_fraction=0.1)

        prepared, stats = prepare_dataset(locations)

        for location in prepared:
            self.assertGreaterEqual(location.spatial.min(), 0.0)
            self.assertLessEqual(location.spatial.max(), 1.0 + 1e-6)
            self.assertFalse(np.isnan(location.rain).any())
            self.assertFalse(np.isnan(location.temp).any())
            self.assertGreaterEqual(location.temp.min(), 0.0)
            self.assertLessEqual(location.temp.max(), 1.0 + 1e-12)
            flow = location.gauges[0].flow
            np.testing.assert_allclose(
                location.flows_norm[0][~flow.missing], flow.values[~flow.missing] / stats.flow.scale,
            )
            self.assertTrue(np.isnan(location.flows_norm[0][flow.missing]).all())

    def test_supplied_statistics_are_used(self):
        """
        This method prepares locations with statistics computed elsewhere.

        Expected behavior:
            The same statistics come back and the flow scale of the prepared locations is theirs.
        """
        _, stats = prepare_dataset(synth_locations(2, seed=5))

        prepared, used = prepare_dataset([synth_location(seed=11)], stats=stats)

        self.assertIs(used, stats)
        self.assertEqual(prepared[0].flow_scaling, stats.flow)

    def test_series_are_aligned_to_the_weather_overlap(self):
        """
        This method prepares a location whose temperature series starts two days after the rain.

        Expected behavior:
            The calendar starts with the temperature series and the flow is cut accordingly.
        """
        location = constant_location(n_days=10)
        later = datetime.date(2000, 1, 3)
        shifted = dataclasses.replace(location, temp=series(np.full(8, 5.0), SeriesKind.TEMPERATURE, later))

        prepared, _ = prepare_dataset([shifted])

        self.assertEqual(prepared[0].n_days, 8)
        self.assertEqual(prepared[0].gauges[0].flow.start_date, later)

    def test_statistics_save_and_load(self):
        """
        This method saves normalization statistics as JSON and loads them again.

        Expected behavior:
            The loaded statistics equal the saved ones.
        """
        _, stats = prepare_dataset(synth_locations(2))
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "normalization.json"
            stats.save(path)

            self.assertEqual(NormalizationStats.load(path), stats)

    @override_settings(
        FLOWMAP_PIPELINES_CONFIG={
            "flowmap.dataset.preparation.requested.v1": [
                "flowmap.tests.test_dataset.DropAllButFirstGauge",
                "flowmap.steps.AlignLocationSeries",
                "flowmap.steps.InterpolateWeatherGaps",
                "flowmap.steps.ComputeNormalization",
                "flowmap.steps.NormalizeLocations",
            ],
        },
    )
    def test_configured_extra_step(self):
        """
        This method prepares locations with an extra step configured in settings.

        Expected behavior:
            The extra step runs first, so only one gauge per location remains.
        """
        prepared, _ = prepare_dataset(synth_locations(1, n_gauges=3))

        self.assertEqual(len(prepared[0].gauges), 1)

    @override_settings(
        FLOWMAP_PIPELINES_CONFIG={
            "flowmap.dataset.preparation.requested.v1": ["flowmap.steps.AlignLocationSeries"],
        },
    )
    def test_pipeline_without_normalization(self):
        """
        This method prepares locations with a pipeline that never normalizes.

        Expected behavior:
            Raises DatasetError.
        """
        with self.assertRaises(DatasetError):
            prepare_dataset(synth_locations(1))


class TestPrepareSplit(TestCase):
    """
    Test class to verify split preparation and the scope of the normalization statistics.
    """

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.directory = Path(self.tmp.name)
        self.train = constant_location(name="low", flow=2.0)
        self.val = constant_location(name="high", flow=6.0)
        for location in (self.train, self.val):
            save_location(location, self.directory / location.name)
        self.split = Split(train=("low",), val=("high",))

    def tearDown(self):
        self.tmp.cleanup()
        super().tearDown()

    def test_statistics_over_all_locations(self):
        """
        This method prepares a split with statistics over every location.

        Expected behavior:
            The flow scale is the maximum over train and validation flows.
        """
        train, val, stats = prepare_split(self.directory, self.split, "all")

        self.assertEqual([location.name for location in train + val], ["low", "high"])
        self.assertEqual(stats.flow.scale, 6.0)
        self.assertEqual(stats.scope, "all")

    def test_statistics_over_training_locations(self):
        """
        This method prepares a split with statistics over the training locations only.

        Expected behavior:
            The flow scale is the training maximum, so validation flows may exceed 1 once normalized.
        """
        _, val, stats = prepare_split(self.directory, self.split, "train")

        self.assertEqual(stats.flow.scale, 2.0)
        self.assertEqual(stats.scope, "train")
        self.assertEqual(float(np.nanmax(val[0].flows_norm[0])), 3.0)


class TestComputeNormalization(TestCase):
    """
    Test class to verify normalization statistics computed directly from locations.
    """

    def test_statistics(self):
        """
        This method computes statistics over two constant locations.

        Expected behavior:
            Layer maxima and the flow scale are the maxima over both locations, temperatures are shifted
            by their minimum, and the scope label is kept.
        """
        locations = [
            constant_location(name="a", flow=2.0, temp=-3.0, layer_value=1.0),
            constant_location(name="b", flow=4.0, temp=5.0, layer_value=3.0),
        ]

        stats = compute_normalization(locations, "train")

        self.assertEqual(set(stats.layer_maxima.values), {3.0})
        self.assertEqual((stats.flow.shift, stats.flow.scale), (0.0, 4.0))
        self.assertEqual((stats.temp.shift, stats.temp.scale), (-3.0, 8.0))
        self.assertEqual(stats.scope, "train")

    def test_zscore_statistics(self):
        """
        This method prepares two synthetic locations with zero-mean, unit-variance normalization.

        Expected behavior:
            Every raster layer and the rain and temperature arrays have pooled mean 0 and standard deviation
            1, the normalized flows denormalize to the measurements, and the statistics survive a save and
            load.
        """
        prepared, stats = prepare_dataset(synth_locations(2, flow_missing_fraction=0.1), method="zscore")

        self.assertEqual(stats.method.value, "zscore")
        spatial = np.concatenate([location.spatial.reshape(location.spatial.shape[0], -1) for location in prepared],
                                 axis=1).astype(np.float64)
        np.testing.assert_allclose(spatial.mean(axis=1), 0.0, atol=1e-4)
        np.testing.assert_allclose(spatial.std(axis=1), 1.0, rtol=1e-4)
        for name in ("rain", "temp"):
            pooled = np.concatenate([getattr(location, name) for location in prepared])
            self.assertAlmostEqual(float(pooled.mean()), 0.0, places=9)
            self.assertAlmostEqual(float(pooled.std()), 1.0, places=9)
        for location in prepared:
            for gauge, flows_norm in zip(location.gauges, location.flows_norm):
                measured = ~gauge.flow.missing
                np.testing.assert_allclose(
                    flows_norm[measured] * stats.flow.scale + stats.flow.shift, gauge.flow.values[measured],
                    rtol=1e-12,
                )
        with tempfile.TemporaryDirectory() as directory:
            stats.save(Path(directory) / "normalization.json")
            self.assertEqual(NormalizationStats.load(Path(directory) / "normalization.json"), stats)

    def test_constant_layer_under_zscore(self):
        """
        This method computes zero-mean, unit-variance statistics of constant locations.

        Expected behavior:
            Constant layers get divisor 1.0 with a warning, so they normalize to 0.
        """
        with self.assertLogs("flowmap.raster_store", level="WARNING"):
            prepared, stats = prepare_dataset([constant_location(layer_value=3.0)], method="zscore")

        self.assertEqual(set(stats.layer_maxima.values), {1.0})
        self.assertEqual(set(stats.layer_means), {3.0})
        self.assertFalse(prepared[0].spatial.any())

    def test_no_location(self):
        """
        This method computes statistics over an empty list.

        Expected behavior:
            Raises DatasetError.
        """
        with self.assertRaises(DatasetError):
            compute_normalization([], "all")
