"""
Tests for the Adam update, the training loop and its run directory.
"""
import json
import tempfile
from pathlib import Path
from unittest.mock import Mock, patch

import numpy as np
import torch
from django.test import TestCase

from flowmap.conf import build_run_config
from flowmap.dataset import NormalizationStats, prepare_dataset
from flowmap.evaluation import EvalProtocol, ModelPredictor, evaluate_predictor
from flowmap.exceptions import NonFiniteLoss, SamplingError, TrainingError
from flowmap.losses import batch_masked_loss
from flowmap.model import init_model, load_checkpoint
from flowmap.sampler import SamplingIndex, build_eval_sample, draw_training_sample
from flowmap.training import (
    AdamState,
    SampleStream,
    TrainLog,
    adam_step,
    batch_rmse,
    batch_tensors,
    run_id_for,
    sample_loader,
    seed_sample_stream,
    train,
)
from test_utils import slow_test
from test_utils.factories import desk_values, settings, synth_location, synth_locations


class TestAdam(TestCase):
    """
    Test class to verify the Adam update.
    """

    def setUp(self):
        super().setUp()
        generator = torch.Generator().manual_seed(0)
        self.params = [torch.randn(3, 4, generator=generator, dtype=torch.float64),
                       torch.randn(5, generator=generator, dtype=torch.float64)]
        self.grads = [[torch.randn(p.shape, generator=generator, dtype=torch.float64) for p in self.params]
                      for _ in range(4)]

    def test_matches_torch_adam(self):
        """
        This method applies four updates with adam_step and with torch.optim.Adam.

        Expected behavior:
            Both give the same parameters.
        """
        ours = [p.clone() for p in self.params]
        theirs = [p.clone().requires_grad_(True) for p in self.params]
        optimizer = torch.optim.Adam(theirs, lr=0.01, betas=(0.9, 0.999), eps=1e-8)
        state = AdamState.zeros(ours)

        for grads in self.grads:
            adam_step(ours, grads, state, lr=0.01)
            for param, grad in zip(theirs, grads):
                param.grad = grad.clone()
            optimizer.step()

        self.assertEqual(state.step, 4)
        for mine, reference in zip(ours, theirs):
            torch.testing.assert_close(mine, reference.detach(), rtol=1e-12, atol=1e-12)

    def test_zero_learning_rate(self):
        """
        This method applies an update with a learning rate of zero.

        Expected behavior:
            Parameters are unchanged while the moments move.
        """
        params = [p.clone() for p in self.params]
        state = AdamState.zeros(params)

        adam_step(params, self.grads[0], state, lr=0.0)

        for before, after in zip(self.params, params):
            self.assertTrue(torch.equal(before, after))
        self.assertFalse(torch.equal(state.exp_avg[0], torch.zeros_like(state.exp_avg[0])))

    def test_missing_gradient_counts_as_zero(self):
        """
        This method applies a first update without a gradient for the second parameter.

        Expected behavior:
            That parameter is unchanged.
        """
        params = [p.clone() for p in self.params]

        adam_step(params, [self.grads[0][0], None], AdamState.zeros(params), lr=0.1)

        self.assertTrue(torch.equal(params[1], self.params[1]))

    def test_shape_mismatch(self):
        """
        This method applies an update with a gradient of the wrong shape or count.

        Expected behavior:
            Raises TrainingError.
        """
        params = [p.clone() for p in self.params]
        with self.assertRaises(TrainingError):
            adam_step(params, [self.grads[0][1], self.grads[0][0]], AdamState.zeros(params), lr=0.1)
        with self.assertRaises(TrainingError):
            adam_step(params, self.grads[0][:1], AdamState.zeros(params), lr=0.1)


class TestHelpers(TestCase):
    """
    Test class to verify run ids, logs, batch RMSE and the sample loader.
    """

    def test_run_id_ignores_key_order(self):
        """
        This method computes run ids of equal and of different configurations.

        Expected behavior:
            Key order does not matter, values do.
        """
        self.assertEqual(run_id_for({"a": 1, "b": 2}), run_id_for({"b": 2, "a": 1}))
        self.assertNotEqual(run_id_for({"a": 1}), run_id_for({"a": 2}))

    def test_log_steps_must_increase(self):
        """
        This method appends a record whose step does not increase.

        Expected behavior:
            Raises TrainingError.
        """
        train_log = TrainLog(run_id="x", config={})
        train_log.append({"step": 3, "loss": 1.0})

        with self.assertRaises(TrainingError):
            train_log.append({"step": 3, "loss": 1.0})

    def test_batch_rmse_is_in_raw_units(self):
        """
        This method computes the batch RMSE of constant maps.

        Expected behavior:
            Predictions are scaled by the normalization maximum before they are compared.
        """
        location_settings = settings()
        locations, _ = prepare_dataset(synth_locations(1))
        sample = build_eval_sample(locations[0], 0, 10, location_settings)
        target = sample.targets[0]
        flow_maps = torch.full((1, 32, 32), 0.5)

        self.assertAlmostEqual(batch_rmse(flow_maps, [sample]), abs(0.5 * target.norm_max - target.flow_gt), places=5)

    def test_batch_rmse_under_zscore_normalization(self):
        """
        This method computes the batch RMSE of a constant map for a location normalized to zero mean.

        Expected behavior:
            Predictions are scaled and shifted back to m³/s before they are compared.
        """
        locations, stats = prepare_dataset(synth_locations(1), method="zscore")
        sample = build_eval_sample(locations[0], 0, 10, settings())
        target = sample.targets[0]
        flow_maps = torch.full((1, 32, 32), 0.5)

        self.assertNotEqual(target.norm_shift, 0.0)
        self.assertEqual(target.norm_shift, stats.flow.shift)
        self.assertAlmostEqual(
            batch_rmse(flow_maps, [sample]), abs(0.5 * target.norm_max + target.norm_shift - target.flow_gt), places=5,
        )

    def test_loader_workers_deliver_batches(self):
        """
        This method takes two batches from a loader with two worker processes.

        Expected behavior:
            Every batch holds the requested number of samples, each with targets.
        """
        locations, _ = prepare_dataset(synth_locations(2))
        batches = iter(sample_loader(locations, settings(), seed=0, batch_size=3, workers=2, queue_size=6))

        taken = [next(batches) for _ in range(2)]
        del batches

        for samples in taken:
            self.assertEqual(len(samples), 3)
            self.assertTrue(all(sample.targets for sample in samples))

    def test_single_worker_loader_follows_the_seed(self):
        """
        This method takes a batch from a single-worker loader and draws the same number of samples by hand.

        Expected behavior:
            The loader yields exactly the samples drawn with a generator seeded with the run seed.
        """
        locations, _ = prepare_dataset(synth_locations(2))
        loader_settings = settings(flip_prob=0.5)
        rng = np.random.default_rng(7)

        samples = next(iter(sample_loader(locations, loader_settings, seed=7, batch_size=4)))
        expected = [draw_training_sample(locations, rng, loader_settings) for _ in range(4)]

        self.assertEqual([sample.meta for sample in samples], [sample.meta for sample in expected])
        for sample, other in zip(samples, expected):
            np.testing.assert_array_equal(sample.input, other.input)

    def test_worker_streams_are_seeded_by_worker_id(self):
        """
        This method seeds a sample stream as loader worker 3.

        Expected behavior:
            The stream draws with a generator seeded with the run seed plus the worker id.
        """
        locations, _ = prepare_dataset(synth_locations(2))
        stream_settings = settings()
        stream = SampleStream(locations, stream_settings, SamplingIndex(locations, stream_settings.mode), seed=5)

        with patch("flowmap.training.get_worker_info", return_value=Mock(dataset=stream)):
            seed_sample_stream(3)
        drawn = next(iter(stream))

        expected = draw_training_sample(locations, np.random.default_rng(8), stream_settings)
        self.assertEqual(drawn.meta, expected.meta)

    def test_loader_on_empty_split(self):
        """
        This method builds a loader without training locations.

        Expected behavior:
            Raises SamplingError.
        """
        with self.assertRaises(SamplingError):
            sample_loader([], settings(), seed=0, batch_size=2)


class TestTrain(TestCase):
    """
    Test class to verify training runs.
    """

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.directory = Path(self.tmp.name)
        locations, self.normalization = prepare_dataset(synth_locations(3))
        self.train_locations, self.val_locations = locations[:2], locations[2:]

    def tearDown(self):
        self.tmp.cleanup()
        super().tearDown()

    def run_training(self, name, force=False, **values):
        config = build_run_config(profile=None, values=desk_values(**values))
        return train(self.train_locations, self.val_locations, config, self.normalization, self.directory / name,
                     force=force, profile_values={"T": 5})

    def test_run_directory(self):
        """
        This method trains for three batches with validation every two batches.

        Expected behavior:
            The run directory holds the echoes, the logs, the curves and loadable checkpoints, and the
            validation RMSE is logged after batches 2 and 3.
        """
        result = self.run_training("run")

        run_dir = result.run_dir
        for name in ("config.json", "profile.json", "normalization.json", "log.jsonl", "run.json", "curves.png"):
            self.assertTrue((run_dir / name).exists(), name)
        self.assertEqual([step for step, _ in result.log.val_points], [1, 2])
        self.assertEqual(result.best_val_rmse, min(rmse for _, rmse in result.log.val_points))
        best = load_checkpoint(result.best_checkpoint)
        self.assertEqual(best.val_rmse, result.best_val_rmse)
        self.assertEqual(load_checkpoint(result.final_checkpoint).step, 2)
        self.assertEqual(NormalizationStats.load(run_dir / "normalization.json"), self.normalization)
        self.assertEqual(json.loads((run_dir / "config.json").read_text())["T"], 5)
        self.assertEqual(json.loads((run_dir / "run.json").read_text())["run_id"], result.log.run_id)

    def test_runs_are_reproducible(self):
        """
        This method trains twice with the same seed and once with another.

        Expected behavior:
            The same seed writes the same log.jsonl; another seed does not.
        """
        first = self.run_training("a")
        second = self.run_training("b")
        other = self.run_training("c", seed=1)

        self.assertEqual((first.run_dir / "log.jsonl").read_text(), (second.run_dir / "log.jsonl").read_text())
        self.assertNotEqual((first.run_dir / "log.jsonl").read_text(), (other.run_dir / "log.jsonl").read_text())

    def test_existing_run_needs_force(self):
        """
        This method trains twice into the same run directory.

        Expected behavior:
            Raises TrainingError without force; with force the log is rewritten, not appended to.
        """
        self.run_training("run")

        with self.assertRaises(TrainingError):
            self.run_training("run")
        result = self.run_training("run", force=True)

        lines = (result.run_dir / "log.jsonl").read_text().splitlines()
        self.assertEqual([json.loads(line)["step"] for line in lines], [0, 1, 2])

    def test_without_validation_locations(self):
        """
        This method trains without validation locations.

        Expected behavior:
            No validation RMSE is logged and the best checkpoint is the final model.
        """
        config = build_run_config(profile=None, values=desk_values())

        result = train(self.train_locations, [], config, self.normalization, self.directory / "noval")

        self.assertEqual(result.log.val_points, [])
        self.assertIsNone(result.best_val_rmse)
        self.assertTrue(result.best_checkpoint.exists())

    def test_non_finite_loss(self):
        """
        This method trains with a loss that turns NaN.

        Expected behavior:
            Raises NonFiniteLoss and leaves a diagnostic checkpoint.
        """
        with patch("flowmap.training.batch_masked_loss", return_value=torch.tensor(float("nan"))):
            with self.assertRaises(NonFiniteLoss) as context:
                self.run_training("nan")

        self.assertEqual(context.exception.step, 0)
        self.assertTrue((self.directory / "nan" / "checkpoints" / "diagnostic.ckpt").exists())

    def test_zero_learning_rate_keeps_the_initial_model(self):
        """
        This method trains for three batches with a learning rate of 0.

        Expected behavior:
            The final parameters are bit-identical to a freshly initialized network, and the logged
            loss of step 0 equals that network's loss on the first batch.
        """
        config = build_run_config(profile=None, values=desk_values(lr=0.0))
        fresh = init_model(config.model_config)
        samples = next(iter(sample_loader(self.train_locations, config.sampler, config.train.seed,
                                          config.train.batch_size)))
        inputs, temporal = batch_tensors(samples)
        with torch.no_grad():
            expected = batch_masked_loss(fresh(inputs, temporal), [sample.targets for sample in samples],
                                         config.loss)

        result = train(self.train_locations, [], config, self.normalization, self.directory / "frozen")

        final = load_checkpoint(result.final_checkpoint).model.state_dict()
        for name, tensor in fresh.state_dict().items():
            self.assertTrue(torch.equal(final[name], tensor), name)
        self.assertAlmostEqual(result.log.records[0]["loss"], float(expected), places=6)

    @slow_test
    def test_overfits_a_single_location(self):
        """
        This method trains the desk profile with base width 8 on one location with 50 supervised days.

        Expected behavior:
            After 3000 batches the RMSE at the gauge over the supervised days is below 5% of the
            standard deviation of the measured flow.
        """
        locations, normalization = prepare_dataset(
            [synth_location(height=72, width=72, n_days=70, T=20, flow_missing_fraction=0.0)],
        )
        config = build_run_config(
            "desk", values={"base_width": 8, "total_batches": 3000, "eval_every": 3000, "log_every": 100},
        )
        protocol = EvalProtocol(sampler=config.sampler, batch_size=config.train.eval_batch_size)
        days = protocol.days(locations[0], 0)
        self.assertEqual(days.size, 50)

        result = train(locations, [], config, normalization, self.directory / "overfit")

        model = load_checkpoint(result.final_checkpoint).model
        report = evaluate_predictor(ModelPredictor(model, config.sampler), locations, protocol)
        flow_std = float(np.std(locations[0].gauges[0].flow.values[days]))
        self.assertLess(report.aggregate_rmse, 0.05 * flow_std)
