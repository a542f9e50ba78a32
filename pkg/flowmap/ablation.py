"""
Ablation suites: named configuration deltas trained and evaluated under identical seeds.
"""
import json
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from flowmap.baselines import BaselineKind, make_baseline
from flowmap.conf import RunConfig, check_value
from flowmap.dataset import Split, prepare_split
from flowmap.evaluation import EvalReport, ModelPredictor, evaluate_predictor
from flowmap.exceptions import ConfigError
from flowmap.model import load_checkpoint
from flowmap.raster_store import LAYER_ORDER
from flowmap.training import train

log = getLogger(__name__)

MAIN_RESULTS = "main-results"
FLOW_INPUT = "flow-input"
LOSS = "loss"
ARCHITECTURE = "architecture"
TABLES = (MAIN_RESULTS, FLOW_INPUT, LOSS, ARCHITECTURE)

ELEVATION_LAYERS = ("elevation", "slope")
SOIL_LAYERS = ("soil_moisture", "land_cover", "soil_type", "soil_depth")


def _without(*names) -> list[str]:
    return [name for name in LAYER_ORDER if name not in names]


@dataclass(frozen=True)
class AblationPreset:
    name: str
    table: str = MAIN_RESULTS
    overrides: Mapping = field(default_factory=dict)
    baseline: Optional[str] = None

    @property
    def is_baseline(self) -> bool:
        return self.baseline is not None


ABLATION_PRESETS = {
    preset.name: preset
    for preset in (
        AblationPreset("main"),
        AblationPreset("no-elev", overrides={"include_layers": _without(*ELEVATION_LAYERS)}),
        AblationPreset("only-elev", overrides={"include_layers": list(ELEVATION_LAYERS)}),
        AblationPreset("no-soil", overrides={"include_layers": _without(*SOIL_LAYERS)}),
        AblationPreset("no-temp", overrides={"include_temp": False}),
        AblationPreset("no-rain", overrides={"include_rain": False}),
        AblationPreset("half-time-hist", overrides={"T": 10}),
        AblationPreset("mean-per-site", baseline=BaselineKind.MEAN_PER_SITE.value),
        AblationPreset("previous-flow", baseline=BaselineKind.PREVIOUS_FLOW.value),
        AblationPreset("flow-t-3", FLOW_INPUT, {"variant": "flow_lag", "flow_lag": 3}),
        AblationPreset("flow-t-2", FLOW_INPUT, {"variant": "flow_lag", "flow_lag": 2}),
        AblationPreset("flow-t-1", FLOW_INPUT, {"variant": "flow_lag", "flow_lag": 1}),
        AblationPreset("huber-0.8", LOSS, {"loss.kind": "huber", "loss.delta": 0.8}),
        AblationPreset("huber-1.1", LOSS, {"loss.kind": "huber", "loss.delta": 1.1}),
        AblationPreset("mse", LOSS, {"loss.kind": "mse"}),
        AblationPreset("l1", LOSS, {"loss.kind": "l1"}),
        AblationPreset("alt-rain-temp", ARCHITECTURE, {"variant": "alt_rain_temp"}),
        AblationPreset("fc-early", ARCHITECTURE, {"variant": "fc_early", "h": 100, "w": 100}),
        AblationPreset("fc-mid", ARCHITECTURE, {"variant": "fc_mid", "h": 100, "w": 100}),
    )
}


@dataclass(frozen=True)
class Suite:
    presets: tuple[AblationPreset, ...]
    seeds: tuple[int, ...] = (0,)


def resolve_preset(entry) -> AblationPreset:
    """
    Accept a preset, a preset name or an ``{"name", "overrides"[, "table"]}`` object.
    """
    if isinstance(entry, AblationPreset):
        return entry
    if isinstance(entry, str):
        if entry not in ABLATION_PRESETS:
            raise ConfigError("unknown ablation variant '{}'".format(entry), variant=entry)
        return ABLATION_PRESETS[entry]
    if isinstance(entry, dict) and isinstance(entry.get("name"), str):
        overrides = entry.get("overrides", {})
        if not isinstance(overrides, dict):
            raise ConfigError("overrides of '{}' must be an object".format(entry["name"]))
        return AblationPreset(
            name=entry["name"],
            table=entry.get("table", MAIN_RESULTS),
            overrides={key: check_value(key, value) for key, value in overrides.items()},
        )
    raise ConfigError("invalid suite entry {!r}".format(entry))


def load_suite(path) -> Suite:
    """
    Read a suite file: a list of variants, or ``{"variants": [...], "seeds": [...]}``.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("cannot read suite {}: {}".format(path, exc), path=str(path)) from exc
    if isinstance(data, list):
        data = {"variants": data}
    if not isinstance(data, dict):
        raise ConfigError("suite {} must hold a list or an object".format(path), path=str(path))
    return make_suite(data.get("variants", []), data.get("seeds", (0,)))


def make_suite(variants: Sequence, seeds: Sequence[int] = (0,)) -> Suite:
    presets = tuple(resolve_preset(entry) for entry in variants)
    if not presets:
        raise ConfigError("the ablation suite is empty")
    names = [preset.name for preset in presets]
    if len(set(names)) != len(names):
        raise ConfigError("the ablation suite names a variant twice")
    seeds = tuple(seeds)
    if not seeds or not all(isinstance(seed, int) and not isinstance(seed, bool) for seed in seeds):
        raise ConfigError("suite seeds must be a non-empty list of integers")
    return Suite(presets=presets, seeds=seeds)


@dataclass
class AblationResult:
    comparison: pd.DataFrame
    per_site: pd.DataFrame
    summary: pd.DataFrame
    reports: dict


def _median_run(runs: list[tuple[int, EvalReport]]) -> tuple[int, EvalReport]:
    """
    The run holding the (lower) median aggregate RMSE.
    """
    ordered = sorted(runs, key=lambda run: run[1].aggregate_rmse)
    return ordered[(len(ordered) - 1) // 2]


def run_ablation_suite(base_config: RunConfig, suite: Suite, data_dir, split: Split, out_dir,
                       force: bool = False) -> AblationResult:
    """
    Train and evaluate every variant of ``suite`` for every seed, and write the comparison tables.

    Each trained variant is scored by its best checkpoint on the validation locations; the reported
    RMSE is the median over seeds. Baseline variants are evaluated once, without training.

    Writes ``comparison.csv`` (one row per variant), ``per_site.csv`` and ``summary.csv`` to ``out_dir``.
    """
    if not split.val:
        raise ConfigError("an ablation suite needs validation locations in the split")
    out_dir = Path(out_dir)

    configs = {}
    for preset in suite.presets:
        if not preset.is_baseline:
            for seed in suite.seeds:
                configs[preset.name, seed] = base_config.with_overrides({**preset.overrides, "seed": seed})

    prepared = {}

    def prepared_for(config: RunConfig):
        key = (config.maxima_scope, config.normalization)
        if key not in prepared:
            prepared[key] = prepare_split(data_dir, split, config.maxima_scope, method=config.normalization)
        return prepared[key]

    rows, site_frames, reports = [], [], {}
    for preset in suite.presets:
        if preset.is_baseline:
            _, val, _ = prepared_for(base_config)
            report = evaluate_predictor(make_baseline(preset.baseline), val, base_config.eval_protocol)
            runs = [(None, report)]
        else:
            runs = []
            for seed in suite.seeds:
                config = configs[preset.name, seed]
                train_locations, val, normalization = prepared_for(config)
                result = train(train_locations, val, config, normalization,
                               out_dir / preset.name / "seed-{}".format(seed), force=force)
                checkpoint = load_checkpoint(result.best_checkpoint)
                predictor = ModelPredictor(checkpoint.model, config.sampler, config.train.eval_batch_size)
                report = evaluate_predictor(predictor, val, config.eval_protocol, config=config.as_dict(),
                                            checkpoint_id=result.log.run_id)
                runs.append((seed, report))

        reports[preset.name] = runs
        for seed, report in runs:
            frame = report.to_frame(preset.name)
            frame["seed"] = seed
            frame["table"] = preset.table
            site_frames.append(frame)

        median_seed, median_report = _median_run(runs)
        median = float(np.median([report.aggregate_rmse for _, report in runs]))
        rows.append({
            "variant": preset.name,
            "table": preset.table,
            "site": "pooled",
            "n_days": median_report.n_days,
            "rmse": median,
            "aggregate": median,
            "seed": median_seed,
            "n_seeds": len(runs),
        })
        log.info("Variant '%s': median RMSE %.6g over %d run(s)", preset.name, median, len(runs))

    comparison = pd.DataFrame(rows)
    per_site = pd.concat(site_frames, ignore_index=True)
    summary = comparison.assign(
        table_order=comparison["table"].map({table: order for order, table in enumerate(TABLES)}).fillna(len(TABLES))
    ).sort_values(["table_order", "rmse"], kind="stable")[["table", "variant", "rmse", "n_seeds"]]

    out_dir.mkdir(parents=True, exist_ok=True)
    comparison.to_csv(out_dir / "comparison.csv", index=False)
    per_site.to_csv(out_dir / "per_site.csv", index=False)
    summary.to_csv(out_dir / "summary.csv", index=False)
    return AblationResult(comparison=comparison, per_site=per_site, summary=summary, reports=reports)
