"""
RMSE evaluation of any flow predictor over validation gauges, and dense flow map export.

Every predictor is scored the same way: for each gauge and each supervised day it returns a flow in
m³/s (or NaN when its inputs are unavailable that day), and the aggregate RMSE pools all (site, day)
pairs.
"""
import json
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import pandas as pd
import torch

from flowmap.dataset import Location, NormalizationStats, PreparedLocation, prepare_dataset, supervised_days
from flowmap.exceptions import EvaluationError
from flowmap.model import Checkpoint, FlowFCN, FlowMap
from flowmap.raster_store import save_layer_file
from flowmap.rendering import render_flow_map
from flowmap.sampler import SamplerSettings, build_eval_sample, build_sample
from flowmap.timeseries import denormalize_values

log = getLogger(__name__)

POOLING = "site-day"


def rmse(preds, gts) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise EvaluationError(
            "length mismatch: {} predictions for {} ground truths".format(preds.size, gts.size),
        )
    if preds.size == 0:
        raise EvaluationError("cannot compute the RMSE of an empty list")
    return float(np.sqrt(np.mean(np.square(preds - gts))))


@dataclass(frozen=True)
class EvalProtocol:
    """
    Which days are scored and how evaluation windows are built.

    Days of a gauge are its supervised days: a full history of ``T`` days exists (plus the lagged flow
    history for flow-lag models) and the flow is measured.
    """

    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    batch_size: int = 16

    @property
    def T(self) -> int:
        return self.sampler.mode.T

    def days(self, location: PreparedLocation, gauge_index: int) -> np.ndarray:
        return supervised_days(location.flow_measured(gauge_index), self.T, self.sampler.mode.flow_lag)


class Predictor(Protocol):
    name: str

    def predict(self, location: PreparedLocation, gauge_index: int, days: np.ndarray) -> np.ndarray:
        """
        Predicted flows in m³/s for ``days`` at the gauge; NaN marks a day the predictor skips.
        """


@dataclass(frozen=True)
class SiteResult:
    location: str
    site: str
    n_days: int
    rmse: float
    skipped_days: int = 0

    def as_dict(self) -> dict:
        return {
            "location": self.location,
            "site": self.site,
            "n_days": self.n_days,
            "rmse": self.rmse,
            "skipped_days": self.skipped_days,
        }


@dataclass
class EvalReport:
    """
    Per-site and pooled RMSE of one predictor.

    ``aggregate_rmse`` pools every scored (site, day) pair; it is not the mean of the per-site RMSEs.
    """

    predictor: str
    sites: list[SiteResult]
    aggregate_rmse: float
    config: dict = field(default_factory=dict)
    checkpoint_id: Optional[str] = None
    fit_range: Optional[str] = None

    @property
    def n_days(self) -> int:
        return sum(site.n_days for site in self.sites)

    def as_dict(self) -> dict:
        return {
            "predictor": self.predictor,
            "pooling": POOLING,
            "aggregate_rmse": self.aggregate_rmse,
            "n_days": self.n_days,
            "sites": [site.as_dict() for site in self.sites],
            "config": self.config,
            "checkpoint_id": self.checkpoint_id,
            "fit_range": self.fit_range,
        }

    def to_frame(self, variant: Optional[str] = None) -> pd.DataFrame:
        """
        One row per site plus a ``pooled`` row, with columns variant, site, n_days, rmse, aggregate.
        """
        variant = variant or self.predictor
        rows = [
            {"variant": variant, "site": site.site, "n_days": site.n_days, "rmse": site.rmse,
             "aggregate": self.aggregate_rmse}
            for site in self.sites
        ]
        rows.append(
            {"variant": variant, "site": "pooled", "n_days": self.n_days, "rmse": self.aggregate_rmse,
             "aggregate": self.aggregate_rmse}
        )
        return pd.DataFrame(rows, columns=["variant", "site", "n_days", "rmse", "aggregate"])

    def save(self, directory, stem: str = "report") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / "{}.json".format(stem)
        csv_path = directory / "{}.csv".format(stem)
        json_path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True))
        self.to_frame().to_csv(csv_path, index=False)
        return json_path, csv_path


def evaluate_predictor(predictor: Predictor, locations: Sequence[PreparedLocation], protocol: EvalProtocol,
                       config: Optional[dict] = None, checkpoint_id: Optional[str] = None) -> EvalReport:
    """
    Score ``predictor`` at every gauge of ``locations`` on its supervised days.

    Raises:
        EvaluationError: no gauge has a scorable day.
    """
    sites, all_preds, all_gts = [], [], []
    for location in locations:
        for gauge_index, gauge in enumerate(location.gauges):
            days = protocol.days(location, gauge_index)
            if not days.size:
                log.warning("Gauge '%s' at '%s' has no supervised day.", gauge.site_id, location.name)
                continue
            preds = np.asarray(predictor.predict(location, gauge_index, days), dtype=np.float64)
            gts = gauge.flow.values[days]
            scored = np.isfinite(preds)
            skipped = int((~scored).sum())
            if skipped:
                log.warning(
                    "Predictor '%s' skipped %d of %d day(s) at gauge '%s'.",
                    predictor.name, skipped, days.size, gauge.site_id,
                )
            if not scored.any():
                continue
            preds, gts = preds[scored], gts[scored]
            sites.append(
                SiteResult(
                    location=location.name,
                    site=gauge.site_id,
                    n_days=int(preds.size),
                    rmse=rmse(preds, gts),
                    skipped_days=skipped,
                )
            )
            all_preds.append(preds)
            all_gts.append(gts)

    if not sites:
        raise EvaluationError("no supervised days to evaluate '{}' on".format(predictor.name))

    report = EvalReport(
        predictor=predictor.name,
        sites=sites,
        aggregate_rmse=rmse(np.concatenate(all_preds), np.concatenate(all_gts)),
        config=dict(config or {}),
        checkpoint_id=checkpoint_id,
        fit_range=getattr(predictor, "fit_range", None),
    )
    log.info("Evaluated '%s' on %d site(s): RMSE %.6g m³/s", predictor.name, len(sites), report.aggregate_rmse)
    return report


def _model_inputs(model: FlowFCN, samples):
    reference = next(model.parameters())
    inputs = torch.from_numpy(np.stack([sample.input for sample in samples])).to(reference.device, reference.dtype)
    temporal = None
    if samples[0].temporal is not None:
        temporal = torch.from_numpy(np.stack([sample.temporal for sample in samples]))
        temporal = temporal.to(reference.device, reference.dtype)
    return inputs, temporal


class ModelPredictor:
    """
    Reads the network's prediction at the gauge pixel of a gauge-centered window.
    """

    def __init__(self, model: FlowFCN, settings: SamplerSettings, batch_size: int = 16, name: str = "model"):
        self.model = model
        self.settings = settings
        self.batch_size = batch_size
        self.name = name

    def predict(self, location: PreparedLocation, gauge_index: int, days: np.ndarray) -> np.ndarray:
        row, col = location.gauges[gauge_index].pixel
        values = []
        was_training = self.model.training
        self.model.eval()
        with torch.no_grad():
            for start in range(0, len(days), self.batch_size):
                samples = [
                    build_eval_sample(location, gauge_index, int(t), self.settings)
                    for t in days[start:start + self.batch_size]
                ]
                output = self.model(*_model_inputs(self.model, samples))
                for sample, flow_map in zip(samples, output):
                    origin_row, origin_col = sample.meta.origin
                    values.append(float(flow_map[row - origin_row, col - origin_col]))
        self.model.train(was_training)
        scaling = location.flow_scaling
        return denormalize_values(values, scaling.scale, scaling.shift)


def evaluate_model(checkpoint: Checkpoint, locations: Sequence[Location], protocol: EvalProtocol,
                   checkpoint_id: Optional[str] = None) -> EvalReport:
    """
    Evaluate a checkpoint on raw validation locations, normalized with the checkpoint's statistics.
    """
    normalization = NormalizationStats.from_dict(checkpoint.normalization)
    prepared, _ = prepare_dataset(locations, stats=normalization)
    predictor = ModelPredictor(checkpoint.model, protocol.sampler, protocol.batch_size)
    return evaluate_predictor(
        predictor, prepared, protocol, config=checkpoint.run_config, checkpoint_id=checkpoint_id,
    )


@dataclass(frozen=True)
class DensePrediction:
    flow_map: FlowMap
    raster_path: Path
    image_path: Path


def predict_dense(model: FlowFCN, location: PreparedLocation, origin: tuple[int, int], t: int,
                  settings: SamplerSettings, out_dir, anchor: int = 0, name: str = "flow_map") -> DensePrediction:
    """
    Predict the flow at every pixel of one window and write it as a raster layer plus a PNG image.

    The raster holds m³/s values; the image is color-mapped with its own minimum and maximum.
    """
    sample = build_sample(location, origin, t, settings, anchor=anchor)
    model.eval()
    with torch.no_grad():
        output = model(*_model_inputs(model, [sample]))[0]
    scaling = location.flow_scaling
    flow_map = FlowMap(
        values=output.detach().cpu().numpy().astype(np.float64),
        norm_max=scaling.scale,
        norm_shift=scaling.shift,
    )

    out_dir = Path(out_dir)
    raster_path = save_layer_file(out_dir, name, flow_map.denormalized)
    image_path = render_flow_map(flow_map.denormalized, out_dir / "{}.png".format(name))
    log.info("Wrote dense prediction for '%s' day %d at origin %s to %s", location.name, t, origin, out_dir)
    return DensePrediction(flow_map=flow_map, raster_path=raster_path, image_path=image_path)
