"""
Optimization loop: sampled batches, masked loss, Adam updates, validation, logs and checkpoints.

A run directory holds::

    config.json          flat run configuration
    profile.json         the profile the configuration started from
    normalization.json   normalization statistics used for inputs and targets
    log.jsonl            one JSON object per logged step, reproducible for a fixed seed
    run.json             run id, parameter count and wall-clock time
    curves.png           training and validation RMSE curves
    checkpoints/         best.ckpt (lowest validation RMSE), final.ckpt, diagnostic.ckpt on abort
"""
import hashlib
import json
import time
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, IterableDataset, get_worker_info

from flowmap import __version__
from flowmap.dataset import NormalizationStats, PreparedLocation
from flowmap.evaluation import EvalProtocol, ModelPredictor, evaluate_predictor
from flowmap.exceptions import ConfigError, NonFiniteLoss, TrainingError
from flowmap.losses import LossScale, batch_masked_loss
from flowmap.model import count_parameters, init_model, save_checkpoint
from flowmap.rendering import render_training_curves
from flowmap.sampler import Sample, SamplerSettings, SamplingIndex, draw_training_sample

if TYPE_CHECKING:
    from flowmap.conf import RunConfig

log = getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and loop settings. History length, loss and flip probability live in the run
    configuration's sampler and loss sections.
    """

    batch_size: int = 64
    lr: float = 2e-4
    total_batches: int = 250000
    eval_every: int = 250
    log_every: int = 1
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    workers: int = 1
    queue_size: int = 256
    device: str = "cpu"
    eval_batch_size: int = 16

    def __post_init__(self):
        for name in ("batch_size", "total_batches", "eval_every", "log_every", "workers", "queue_size",
                     "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError("{} must be positive".format(name), key=name)
        if self.lr < 0:
            raise ConfigError("lr must not be negative", key="lr")
        if not all(0.0 < beta < 1.0 for beta in self.betas):
            raise ConfigError("adam betas must lie in (0, 1)", key="beta1")
        if not self.eps > 0:
            raise ConfigError("eps must be positive", key="eps")


@dataclass
class AdamState:
    step: int
    exp_avg: list
    exp_avg_sq: list

    @classmethod
    def zeros(cls, params: Sequence[torch.Tensor]) -> "AdamState":
        return cls(
            step=0,
            exp_avg=[torch.zeros_like(param) for param in params],
            exp_avg_sq=[torch.zeros_like(param) for param in params],
        )


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[Optional[torch.Tensor]], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """
    Apply one bias-corrected Adam update to ``params`` in place.

    A missing gradient counts as zero.
    """
    if not len(params) == len(grads) == len(state.exp_avg):
        raise TrainingError("shape mismatch: {} parameters, {} gradients".format(len(params), len(grads)))
    beta1, beta2 = betas
    state.step += 1
    bias_correction1 = 1 - beta1 ** state.step
    bias_correction2 = 1 - beta2 ** state.step

    with torch.no_grad():
        for param, grad, exp_avg, exp_avg_sq in zip(params, grads, state.exp_avg, state.exp_avg_sq):
            if grad is None:
                grad = torch.zeros_like(param)
            if grad.shape != param.shape or exp_avg.shape != param.shape:
                raise TrainingError(
                    "shape mismatch: parameter {} with gradient {}".format(tuple(param.shape), tuple(grad.shape)),
                )
            exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
            exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
            denom = (exp_avg_sq.sqrt() / bias_correction2 ** 0.5).add_(eps)
            param.addcdiv_(exp_avg, denom, value=-lr / bias_correction1)
    return state


@dataclass
class TrainLog:
    """
    Step records of a run, mirrored line by line into ``log.jsonl``.
    """

    run_id: str
    config: dict
    path: Optional[Path] = None
    records: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise TrainingError(
                "log steps must increase, got {} after {}".format(record["step"], self.records[-1]["step"]),
            )
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")

    @property
    def val_points(self) -> list[tuple[int, float]]:
        return [(record["step"], record["val_rmse"]) for record in self.records if "val_rmse" in record]


@dataclass
class TrainResult:
    run_dir: Path
    log: TrainLog
    best_checkpoint: Path
    final_checkpoint: Path
    best_val_rmse: Optional[float]


def run_id_for(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()[:12]


class SampleStream(IterableDataset):
    """
    Endless stream of training samples for a ``DataLoader``.

    Inside a loader worker the generator is seeded with ``seed + worker_id`` by ``seed_sample_stream``;
    in the main process it is seeded with ``seed``. Batch composition with several workers depends on
    their scheduling, so runs are only reproducible with a single worker.
    """

    def __init__(self, locations, settings: SamplerSettings, index: SamplingIndex, seed: int):
        super().__init__()
        self.locations = locations
        self.settings = settings
        self.index = index
        self.seed = seed
        self.rng = None

    def __iter__(self) -> Iterator[Sample]:
        rng = self.rng if self.rng is not None else np.random.default_rng(self.seed)
        while True:
            yield draw_training_sample(self.locations, rng, self.settings, self.index)


def seed_sample_stream(worker_id: int) -> None:
    stream = get_worker_info().dataset
    stream.rng = np.random.default_rng(stream.seed + worker_id)


def sample_loader(locations, settings: SamplerSettings, seed: int, batch_size: int, workers: int = 1,
                  queue_size: int = 256) -> DataLoader:
    """
    Loader yielding lists of ``batch_size`` training samples.

    One worker draws in the calling process. More workers draw in loader processes, each keeping at
    most ``queue_size`` samples ready.
    """
    stream = SampleStream(locations, settings, SamplingIndex(locations, settings.mode), seed)
    if workers <= 1:
        return DataLoader(stream, batch_size=batch_size, collate_fn=list)
    return DataLoader(
        stream,
        batch_size=batch_size,
        collate_fn=list,
        num_workers=workers,
        worker_init_fn=seed_sample_stream,
        prefetch_factor=max(1, queue_size // (batch_size * workers)),
    )


def batch_tensors(samples: Sequence[Sample], device="cpu", dtype=torch.float32):
    inputs = torch.from_numpy(np.stack([sample.input for sample in samples])).to(device, dtype)
    temporal = None
    if samples[0].temporal is not None:
        temporal = torch.from_numpy(np.stack([sample.temporal for sample in samples])).to(device, dtype)
    return inputs, temporal


def batch_rmse(flow_maps: torch.Tensor, samples: Sequence[Sample]) -> float:
    """
    RMSE in m³/s over every target pixel of a batch.
    """
    errors = []
    for flow_map, sample in zip(flow_maps.detach().cpu().double(), samples):
        for target in sample.targets:
            row, col = target.pixel
            errors.append(float(flow_map[row, col]) * target.norm_max + target.norm_shift - target.flow_gt)
    return float(np.sqrt(np.mean(np.square(errors))))


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True))


def train(train_locations: Sequence[PreparedLocation], val_locations: Sequence[PreparedLocation],
          config: "RunConfig", normalization: NormalizationStats, run_dir, force: bool = False,
          profile_values: Optional[dict] = None) -> TrainResult:
    """
    Train a network from scratch and write its run directory.

    Validation RMSE on ``val_locations`` is computed every ``eval_every`` batches and after the last
    batch; the checkpoint with the lowest validation RMSE is kept as ``best.ckpt``. Without validation
    locations ``best.ckpt`` is the final model.

    Raises:
        TrainingError: the run directory already holds a run and ``force`` is not set.
        NonFiniteLoss: a batch loss is NaN or infinite; ``diagnostic.ckpt`` holds the model at that step.
    """
    run_dir = Path(run_dir)
    log_path = run_dir / "log.jsonl"
    if log_path.exists() and not force:
        raise TrainingError("run directory {} already holds a run".format(run_dir), path=str(run_dir))
    checkpoints = run_dir / "checkpoints"
    checkpoints.mkdir(parents=True, exist_ok=True)
    log_path.unlink(missing_ok=True)

    train_config = config.train
    settings = config.sampler
    run_config = config.as_dict()
    run_id = run_id_for(run_config)
    _write_json(run_dir / "config.json", run_config)
    _write_json(run_dir / "profile.json", {"name": config.profile, "values": profile_values or {}})
    normalization.save(run_dir / "normalization.json")

    torch.use_deterministic_algorithms(True, warn_only=True)
    model = init_model(config.model_config).to(train_config.device)
    model.train()
    params = list(model.parameters())
    state = AdamState.zeros(params)
    protocol = EvalProtocol(sampler=settings, batch_size=train_config.eval_batch_size)
    train_log = TrainLog(run_id=run_id, config=run_config, path=log_path)
    normalization_echo = normalization.as_dict()
    log.info(
        "Training run %s: %d batches of %d, %d parameters, %d train / %d val location(s)",
        run_id, train_config.total_batches, train_config.batch_size, count_parameters(model),
        len(train_locations), len(val_locations),
    )

    best_rmse, best_path = None, checkpoints / "best.ckpt"
    started = time.monotonic()
    batches = iter(sample_loader(train_locations, settings, train_config.seed, train_config.batch_size,
                                 train_config.workers, train_config.queue_size))
    for step in range(train_config.total_batches):
        samples = next(batches)
        inputs, temporal = batch_tensors(samples, train_config.device)
        flow_maps = model(inputs, temporal)
        loss = batch_masked_loss(flow_maps, [sample.targets for sample in samples], config.loss)

        if not torch.isfinite(loss):
            diagnostic = save_checkpoint(
                checkpoints / "diagnostic.ckpt", model, run_config, normalization_echo, step=step,
            )
            raise NonFiniteLoss(
                "non-finite loss at step {}; model saved to {}".format(step, diagnostic), step=step,
                checkpoint=str(diagnostic),
            )

        model.zero_grad(set_to_none=True)
        loss.backward()
        adam_step(params, [param.grad for param in params], state, train_config.lr, train_config.betas,
                  train_config.eps)

        last = step == train_config.total_batches - 1
        record = {"step": step, "loss": float(loss.item()), "train_rmse": batch_rmse(flow_maps, samples)}
        if val_locations and ((step + 1) % train_config.eval_every == 0 or last):
            report = evaluate_predictor(ModelPredictor(model, settings, train_config.eval_batch_size),
                                        val_locations, protocol)
            record["val_rmse"] = report.aggregate_rmse
            if best_rmse is None or report.aggregate_rmse < best_rmse:
                best_rmse = report.aggregate_rmse
                save_checkpoint(best_path, model, run_config, normalization_echo, step=step, val_rmse=best_rmse)
                log.info("Step %d: new best validation RMSE %.6g", step, best_rmse)
        if step % train_config.log_every == 0 or "val_rmse" in record or last:
            train_log.append(record)
    del batches

    train_log.wall_clock_s = time.monotonic() - started
    final_path = save_checkpoint(
        checkpoints / "final.ckpt", model, run_config, normalization_echo, step=train_config.total_batches - 1,
        val_rmse=train_log.val_points[-1][1] if train_log.val_points else None,
    )
    if best_rmse is None:
        save_checkpoint(best_path, model, run_config, normalization_echo, step=train_config.total_batches - 1)

    _write_json(run_dir / "run.json", {
        "run_id": run_id,
        "flowmap_version": __version__,
        "parameters": count_parameters(model),
        "wall_clock_s": round(train_log.wall_clock_s, 3),
        "best_val_rmse": best_rmse,
        "loss_scale": LossScale(config.loss.scale).value,
    })
    render_training_curves(log_path, run_dir / "curves.png")
    log.info("Finished run %s in %.1f s", run_id, train_log.wall_clock_s)
    return TrainResult(
        run_dir=run_dir, log=train_log, best_checkpoint=best_path, final_checkpoint=final_path,
        best_val_rmse=best_rmse,
    )
