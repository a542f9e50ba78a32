"""
Tests for window origins, input assembly, flips and sample drawing.
"""
import itertools

import ddt
import numpy as np
from django.test import TestCase, override_settings

from flowmap.exceptions import ConfigError, HistoryUnavailable, SamplingError
from flowmap.raster_store import NUM_LAYERS
from flowmap.sampler import (
    AssemblyMode,
    SamplerSettings,
    SamplingIndex,
    Variant,
    apply_flips,
    assemble_input,
    build_eval_sample,
    build_sample,
    centered_origin,
    draw_training_sample,
    enumerate_window_origins,
)
from test_utils.factories import constant_location, prepared, settings, synth_locations


def brute_force_origins(pixel, h, w, full):
    rows, cols = full
    return {
        (row, col)
        for row, col in itertools.product(range(rows), range(cols))
        if row + h <= rows and col + w <= cols and row <= pixel[0] < row + h and col <= pixel[1] < col + w
    }


@ddt.ddt
class TestWindowOrigins(TestCase):
    """
    Test class to verify the set of windows that contain a gauge.
    """

    @ddt.data(
        ((0, 0), 4, 4, (10, 10)),
        ((9, 9), 4, 4, (10, 10)),
        ((5, 2), 3, 7, (10, 12)),
        ((4, 4), 10, 10, (10, 10)),
        ((3, 8), 1, 1, (6, 9)),
    )
    @ddt.unpack
    def test_origins_match_brute_force(self, pixel, h, w, full):
        """
        This method enumerates window origins and compares them with an exhaustive search.

        Expected behavior:
            Both sets are equal and every window lies inside the grid and contains the gauge.
        """
        origins = enumerate_window_origins(pixel, h, w, full)

        self.assertEqual(set(origins), brute_force_origins(pixel, h, w, full))
        self.assertEqual(len(origins), len(set(origins)))

    def test_random_cases_match_brute_force(self):
        """
        This method compares window origins with an exhaustive search on 200 random grids up to 40x40.

        Expected behavior:
            The sets are equal for every case.
        """
        rng = np.random.default_rng(7)
        for _ in range(200):
            full = (int(rng.integers(1, 41)), int(rng.integers(1, 41)))
            pixel = (int(rng.integers(0, full[0])), int(rng.integers(0, full[1])))
            h, w = int(rng.integers(1, full[0] + 1)), int(rng.integers(1, full[1] + 1))

            self.assertEqual(
                set(enumerate_window_origins(pixel, h, w, full)),
                brute_force_origins(pixel, h, w, full),
                msg="pixel={} h={} w={} full={}".format(pixel, h, w, full),
            )

    def test_window_larger_than_grid(self):
        """
        This method enumerates windows larger than the grid.

        Expected behavior:
            No origin exists.
        """
        self.assertEqual(len(enumerate_window_origins((1, 1), 12, 4, (10, 10))), 0)

    @ddt.data(((0, 0), (0, 0)), ((20, 20), (4, 4)), ((39, 39), (8, 8)))
    @ddt.unpack
    def test_centered_origin_is_clipped(self, pixel, expected):
        """
        This method centers a 32x32 window on gauges of a 40x40 grid.

        Expected behavior:
            The window is centered when possible and clipped to the grid otherwise.
        """
        self.assertEqual(centered_origin(pixel, 32, 32, (40, 40)), expected)


@ddt.ddt
class TestAssemblyMode(TestCase):
    """
    Test class to verify channel bookkeeping of assembly modes.
    """

    @ddt.data(
        ({}, NUM_LAYERS + 40),
        ({"include_temp": False}, NUM_LAYERS + 20),
        ({"variant": "alt_rain_temp"}, NUM_LAYERS + 20),
        ({"variant": "flow_lag", "flow_lag": 2}, NUM_LAYERS + 60),
        ({"variant": "fc_early"}, NUM_LAYERS),
        ({"include_layers": (True, False) * 5, "include_rain": False}, 5 + 20),
    )
    @ddt.unpack
    def test_channel_count(self, kwargs, expected):
        """
        This method computes the channel count of assembly modes with T = 20.

        Expected behavior:
            Matches the number of spatial plus temporal channels of the variant.
        """
        self.assertEqual(AssemblyMode(T=20, **kwargs).channel_count, expected)

    @ddt.data(
        {"T": 0},
        {"variant": "flow_lag", "flow_lag": 4},
        {"variant": "main", "flow_lag": 1},
        {"variant": "alt_rain_temp", "include_temp": False},
        {"variant": "fc_mid", "include_rain": False, "include_temp": False},
        {"include_layers": (False,) * NUM_LAYERS, "include_rain": False, "include_temp": False},
    )
    def test_invalid_modes(self, kwargs):
        """
        This method builds inconsistent assembly modes.

        Expected behavior:
            Raises ConfigError.
        """
        with self.assertRaises(ConfigError):
            AssemblyMode(**kwargs)


class TestAssembleInput(TestCase):
    """
    Test class to verify the layout of assembled inputs.
    """

    def setUp(self):
        super().setUp()
        self.window = np.random.default_rng(0).random((NUM_LAYERS, 6, 5)).astype(np.float32)
        self.rain = np.arange(1, 4, dtype=np.float32) / 10
        self.temp = np.arange(4, 7, dtype=np.float32) / 10

    def test_main_variant_layout(self):
        """
        This method assembles a main-variant input with T = 3.

        Expected behavior:
            Spatial layers come first, then one constant channel per rain day and per temperature day.
        """
        inputs, temporal = assemble_input(self.window, self.rain, self.temp, AssemblyMode(T=3))

        self.assertIsNone(temporal)
        self.assertEqual(inputs.shape, (NUM_LAYERS + 6, 6, 5))
        np.testing.assert_array_equal(inputs[:NUM_LAYERS], self.window)
        for index, value in enumerate(np.concatenate([self.rain, self.temp])):
            np.testing.assert_array_equal(inputs[NUM_LAYERS + index], np.full((6, 5), value, dtype=np.float32))

    def test_checkerboard_layout(self):
        """
        This method assembles an alternating rain/temperature input.

        Expected behavior:
            Pixels with even row + col hold rain, the others hold temperature.
        """
        inputs, _ = assemble_input(self.window, self.rain, self.temp, AssemblyMode(T=3, variant="alt_rain_temp"))

        self.assertEqual(inputs.shape, (NUM_LAYERS + 3, 6, 5))
        channel = inputs[NUM_LAYERS + 1]
        self.assertEqual(channel[0, 0], self.rain[1])
        self.assertEqual(channel[0, 1], self.temp[1])
        self.assertEqual(channel[3, 3], self.rain[1])
        self.assertEqual(channel[2, 1], self.temp[1])

    def test_fully_connected_variant_side_vector(self):
        """
        This method assembles an input for a fully connected fusion variant.

        Expected behavior:
            The input holds only spatial channels and the side vector is rain then temperature.
        """
        inputs, temporal = assemble_input(self.window, self.rain, self.temp, AssemblyMode(T=3, variant="fc_mid"))

        self.assertEqual(inputs.shape, (NUM_LAYERS, 6, 5))
        np.testing.assert_array_equal(temporal, np.concatenate([self.rain, self.temp]))

    def test_flow_lag_needs_flow_history(self):
        """
        This method assembles a flow-lag input without a flow history.

        Expected behavior:
            Raises SamplingError.
        """
        with self.assertRaises(SamplingError):
            assemble_input(self.window, self.rain, self.temp, AssemblyMode(T=3, variant="flow_lag", flow_lag=1))

    def test_history_length_mismatch(self):
        """
        This method assembles an input with a rain history of the wrong length.

        Expected behavior:
            Raises SamplingError.
        """
        with self.assertRaises(SamplingError):
            assemble_input(self.window, self.rain[:2], self.temp, AssemblyMode(T=3))


class TestSamples(TestCase):
    """
    Test class to verify sample construction, flips and drawing.
    """

    def setUp(self):
        super().setUp()
        self.locations = prepared(synth_locations(2, n_gauges=2, flow_missing_fraction=0.2))
        self.settings = settings()

    def test_targets_are_measured_gauges_inside_the_window(self):
        """
        This method builds samples at every supervised day of a gauge.

        Expected behavior:
            Each target pixel is the gauge pixel relative to the origin and its flow equals the raw flow.
        """
        location = self.locations[0]
        gauge = location.gauges[0]
        origin = centered_origin(gauge.pixel, 32, 32, location.grid_shape)
        for t in range(5, location.n_days):
            sample = build_sample(location, origin, t, self.settings)
            pixels = {target.site_id: target for target in sample.targets}
            if gauge.flow.missing[t]:
                self.assertNotIn(gauge.site_id, pixels)
                continue
            target = pixels[gauge.site_id]
            self.assertEqual(target.pixel, (gauge.pixel[0] - origin[0], gauge.pixel[1] - origin[1]))
            self.assertEqual(target.flow_gt, gauge.flow.values[t])
            self.assertAlmostEqual(target.flow_norm * target.norm_max, target.flow_gt, places=9)

    def test_day_without_history(self):
        """
        This method builds a sample for a day earlier than T.

        Expected behavior:
            Raises HistoryUnavailable.
        """
        with self.assertRaises(HistoryUnavailable):
            build_eval_sample(self.locations[0], 0, 4, self.settings)

    def test_flips_mirror_spatial_channels_and_targets(self):
        """
        This method flips a sample horizontally and vertically.

        Expected behavior:
            Spatial channels are mirrored, temporal channels are untouched, target pixels follow the
            flip, and flipping twice restores the sample.
        """
        sample = build_eval_sample(self.locations[0], 0, 20, self.settings)
        spatial = sample.spatial_channels

        flipped = apply_flips(sample, True, True)

        np.testing.assert_array_equal(flipped.input[:spatial], sample.input[:spatial, ::-1, ::-1])
        np.testing.assert_array_equal(flipped.input[spatial:], sample.input[spatial:])
        for before, after in zip(sample.targets, flipped.targets):
            self.assertEqual(after.pixel, (31 - before.pixel[0], 31 - before.pixel[1]))
            self.assertEqual(after.flow_gt, before.flow_gt)
        self.assertEqual(flipped.meta.flips, (True, True))
        restored = apply_flips(flipped, True, True)
        np.testing.assert_array_equal(restored.input, sample.input)
        self.assertEqual(restored.targets, sample.targets)

    def test_flow_lag_history_comes_from_the_anchor(self):
        """
        This method builds a flow-lag sample with lag 2.

        Expected behavior:
            The last T channels hold the anchor gauge's normalized flows of days t-T-1 .. t-2.
        """
        location = prepared([constant_location(n_days=30)])[0]
        lag_settings = settings(variant="flow_lag", flow_lag=2)

        sample = build_sample(location, (4, 4), 15, lag_settings)

        flow_channels = sample.input[-5:]
        np.testing.assert_allclose(flow_channels[:, 0, 0], location.flows_norm[0][9:14])

    def test_draws_are_reproducible(self):
        """
        This method draws samples twice from generators with the same seed.

        Expected behavior:
            The same locations, origins, days and flips are drawn.
        """
        flip_settings = settings(flip_prob=0.5)

        def draw(seed):
            rng = np.random.default_rng(seed)
            index = SamplingIndex(self.locations, flip_settings.mode)
            return [draw_training_sample(self.locations, rng, flip_settings, index).meta for _ in range(20)]

        self.assertEqual(draw(4), draw(4))
        self.assertNotEqual(draw(4), draw(5))

    def test_drawn_samples_are_supervised(self):
        """
        This method draws samples from locations with unmeasured days.

        Expected behavior:
            Every sample has at least one target, whose pixel lies inside the window.
        """
        rng = np.random.default_rng(1)
        for _ in range(30):
            sample = draw_training_sample(self.locations, rng, self.settings)
            self.assertTrue(sample.targets)
            for target in sample.targets:
                self.assertTrue(0 <= target.pixel[0] < 32 and 0 <= target.pixel[1] < 32)

    def test_empty_training_split(self):
        """
        This method builds a sampling index without locations.

        Expected behavior:
            Raises SamplingError.
        """
        with self.assertRaises(SamplingError):
            SamplingIndex([], self.settings.mode)

    def test_location_without_supervised_day(self):
        """
        This method builds a sampling index for a location shorter than the history length.

        Expected behavior:
            Raises SamplingError.
        """
        with self.assertRaises(SamplingError):
            SamplingIndex(self.locations, AssemblyMode(T=70))

    @override_settings(FLOWMAP_PIPELINES_CONFIG={"flowmap.sampler.sample.drawn.v1": []})
    def test_flips_can_be_disabled_in_settings(self):
        """
        This method draws samples with an empty augmentation pipeline and flip probability 1.

        Expected behavior:
            No sample is flipped.
        """
        rng = np.random.default_rng(2)
        always = SamplerSettings(mode=self.settings.mode, h=32, w=32, flip_prob=1.0)

        metas = [draw_training_sample(self.locations, rng, always).meta for _ in range(5)]

        self.assertTrue(all(meta.flips == (False, False) for meta in metas))

    def test_variant_enum_accepts_strings(self):
        """
        This method builds a mode from a variant string.

        Expected behavior:
            The variant is stored as the enum member.
        """
        self.assertIs(AssemblyMode(variant="fc_early").variant, Variant.FC_EARLY)
