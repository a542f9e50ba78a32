"""
Catchment locations on disk and their preparation into model-ready arrays.

A location directory holds a ``location.json`` manifest::

    {"name": str, "rasters": dir, "rain": file, "temp": file,
     "gauges": [{"site_id": str, "row": int, "col": int, "flow": file}, ...]}

with paths relative to the manifest.
"""
import json
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from flowmap.exceptions import DatasetError
from flowmap.pipelines import DatasetPreparationRequested
from flowmap.raster_store import (
    LAYER_ORDER,
    LayerMaxima,
    RasterStack,
    compute_layer_maxima,
    compute_layer_moments,
    load_raster_stack,
    save_raster_stack,
)
from flowmap.timeseries import (
    Gauge,
    NormalizationMethod,
    SeriesKind,
    SeriesScaling,
    TimeSeries,
    compute_series_scaling,
    parse_series,
    save_series,
)

log = getLogger(__name__)

MANIFEST_NAME = "location.json"


@dataclass(frozen=True)
class Location:
    """
    One catchment site: its raster stack, shared weather series and flow gauges.
    """

    name: str
    rasters: RasterStack = field(repr=False)
    rain: TimeSeries = field(repr=False)
    temp: TimeSeries = field(repr=False)
    gauges: tuple[Gauge, ...] = ()

    def __post_init__(self):
        for gauge in self.gauges:
            row, col = gauge.pixel
            if not (0 <= row < self.rasters.height_px and 0 <= col < self.rasters.width_px):
                raise DatasetError(
                    "gauge {} at {} lies outside the {}x{} grid of {}".format(
                        gauge.site_id, gauge.pixel, self.rasters.height_px, self.rasters.width_px, self.name,
                    ),
                    location=self.name,
                )


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]

    def as_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val)}


@dataclass(frozen=True)
class NormalizationStats:
    """
    Everything needed to scale raw inputs for the model and map its outputs back to m³/s.

    ``layer_maxima`` holds the per-layer divisors: maxima for ``minmax``, standard deviations for
    ``zscore``, where ``layer_means`` holds the per-layer shifts.
    """

    layer_maxima: LayerMaxima
    rain: SeriesScaling
    temp: SeriesScaling
    flow: SeriesScaling
    scope: str = "all"
    method: NormalizationMethod = NormalizationMethod.MINMAX
    layer_means: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "method", NormalizationMethod(self.method))

    def as_dict(self) -> dict:
        data = {
            "layer_maxima": self.layer_maxima.as_dict(),
            "rain": self.rain.as_dict(),
            "temp": self.temp.as_dict(),
            "flow": self.flow.as_dict(),
            "scope": self.scope,
            "method": self.method.value,
        }
        if self.layer_means is not None:
            data["layer_means"] = dict(zip(LAYER_ORDER, self.layer_means))
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        layer_means = data.get("layer_means")
        if layer_means is not None:
            layer_means = LayerMaxima.from_dict(layer_means).values
        return cls(
            layer_maxima=LayerMaxima.from_dict(data["layer_maxima"]),
            rain=SeriesScaling.from_dict(data["rain"]),
            temp=SeriesScaling.from_dict(data["temp"]),
            flow=SeriesScaling.from_dict(data["flow"]),
            scope=data.get("scope", "all"),
            method=data.get("method", NormalizationMethod.MINMAX.value),
            layer_means=layer_means,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_normalization(locations: Sequence[Location], scope: str = "all",
                          method=NormalizationMethod.MINMAX) -> NormalizationStats:
    """
    Layer divisors and rain, temperature and flow scalings over ``locations``.

    ``scope`` only labels the result: callers pass every split location for "all" and the train
    locations for "train".
    """
    if not locations:
        raise DatasetError("no location to compute normalization statistics from")
    method = NormalizationMethod(method)
    stacks = [location.rasters for location in locations]
    layer_means = None
    if method == NormalizationMethod.ZSCORE:
        layer_means, layer_maxima = compute_layer_moments(stacks)
    else:
        layer_maxima = compute_layer_maxima(stacks)
    return NormalizationStats(
        layer_maxima=layer_maxima,
        rain=compute_series_scaling([location.rain for location in locations], SeriesKind.RAIN, method),
        temp=compute_series_scaling([location.temp for location in locations], SeriesKind.TEMPERATURE, method),
        flow=compute_series_scaling(
            [gauge.flow for location in locations for gauge in location.gauges], SeriesKind.FLOW, method,
        ),
        scope=scope,
        method=method,
        layer_means=layer_means,
    )


@dataclass(frozen=True)
class PreparedLocation:
    """
    A location after alignment, gap interpolation and normalization.

    ``spatial`` is the normalized (C, H, W) raster array; ``rain`` and ``temp`` are gap-free normalized
    arrays on the location calendar; ``gauges`` keep the raw flow series (m³/s) and ``flows_norm`` holds the
    same values scaled by ``flow_scaling``, NaN where unmeasured.
    """

    name: str
    spatial: np.ndarray = field(repr=False)
    rain: np.ndarray = field(repr=False)
    temp: np.ndarray = field(repr=False)
    gauges: tuple[Gauge, ...] = field(repr=False)
    flows_norm: tuple[np.ndarray, ...] = field(repr=False)
    flow_scaling: SeriesScaling = field(repr=False)

    @property
    def n_days(self) -> int:
        return len(self.rain)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.spatial.shape[1], self.spatial.shape[2]

    def flow_measured(self, gauge_index: int) -> np.ndarray:
        return ~self.gauges[gauge_index].flow.missing


def load_split(path) -> Split:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError("cannot read split file {}: {}".format(path, exc), path=str(path)) from exc
    try:
        split = Split(train=tuple(data["train"]), val=tuple(data.get("val", ())))
    except (KeyError, TypeError) as exc:
        raise DatasetError("split file {} must hold a 'train' list".format(path), path=str(path)) from exc
    if not split.train:
        raise DatasetError("split file {} has an empty training split".format(path), path=str(path))
    return split


def save_split(split: Split, path) -> None:
    Path(path).write_text(json.dumps(split.as_dict(), indent=2))


def load_location(path) -> Location:
    """
    Load a location from its directory or its ``location.json`` manifest.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.exists():
        raise DatasetError("missing location manifest {}".format(manifest_path), path=str(manifest_path))

    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    try:
        gauges = tuple(
            Gauge(
                site_id=str(entry["site_id"]),
                pixel=(int(entry["row"]), int(entry["col"])),
                flow=parse_series(root / entry["flow"], SeriesKind.FLOW),
            )
            for entry in manifest["gauges"]
        )
        location = Location(
            name=manifest["name"],
            rasters=load_raster_stack(root / manifest["rasters"]),
            rain=parse_series(root / manifest["rain"], SeriesKind.RAIN),
            temp=parse_series(root / manifest["temp"], SeriesKind.TEMPERATURE),
            gauges=gauges,
        )
    except KeyError as exc:
        raise DatasetError(
            "location manifest {} lacks the key {}".format(manifest_path, exc.args[0]), path=str(manifest_path),
        ) from exc

    log.info("Loaded location '%s' with %d gauge(s)", location.name, len(location.gauges))
    return location


def save_location(location: Location, directory) -> Path:
    """
    Write a location tree (rasters, weather CSVs, one flow CSV per gauge, manifest).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_raster_stack(location.rasters, directory / "rasters")
    save_series(location.rain, directory / "rain.csv")
    save_series(location.temp, directory / "temp.csv")

    gauges = []
    for gauge in location.gauges:
        flow_file = "flow_{}.csv".format(gauge.site_id)
        save_series(gauge.flow, directory / flow_file, float_format="%.9g")
        gauges.append({"site_id": gauge.site_id, "row": gauge.pixel[0], "col": gauge.pixel[1], "flow": flow_file})

    manifest = {"name": location.name, "rasters": "rasters", "rain": "rain.csv", "temp": "temp.csv", "gauges": gauges}
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_locations(data_dir, names: Sequence[str]) -> list[Location]:
    data_dir = Path(data_dir)
    locations = []
    for name in names:
        location_dir = data_dir / name
        if not location_dir.is_dir():
            raise DatasetError("location '{}' not found under {}".format(name, data_dir), location=name)
        locations.append(load_location(location_dir))
    return locations


def supervised_days(flow_measured: np.ndarray, T: int, flow_lag: int = 0) -> np.ndarray:
    """
    Day indices usable as supervision: a full ``T``-day history exists and the flow is measured.

    With ``flow_lag`` k > 0 the flows ``t-T-k+1 .. t-k`` are model inputs, so they must all be
    measured as well.
    """
    n_days = len(flow_measured)
    first = T + max(flow_lag - 1, 0)
    days = np.arange(first, n_days)
    days = days[flow_measured[first:]]
    if flow_lag > 0 and days.size:
        gaps = np.concatenate([[0], np.cumsum(~flow_measured)])
        start, stop = days - T - flow_lag + 1, days - flow_lag + 1
        days = days[gaps[stop] - gaps[start] == 0]
    return days


def prepare_dataset(locations: Sequence[Location], stats: Optional[NormalizationStats] = None,
                    stats_names: Optional[Sequence[str]] = None, scope: str = "all",
                    method=NormalizationMethod.MINMAX):
    """
    Run the dataset preparation pipeline.

    Arguments:
        locations: locations to prepare.
        stats: normalization statistics to apply; computed by the pipeline when omitted.
        stats_names: names of the locations the statistics are computed from (defaults to all of them).
        scope: label recorded in computed statistics.
        method: normalization method of computed statistics; supplied statistics carry their own.

    Returns:
        tuple[list[PreparedLocation], NormalizationStats]
    """
    return DatasetPreparationRequested.run_filter(
        locations=list(locations),
        normalization=stats,
        stats_names=list(stats_names) if stats_names is not None else None,
        scope=scope,
        method=NormalizationMethod(method).value,
    )


def prepare_split(data_dir, split: Split, maxima_scope: str = "all", stats: Optional[NormalizationStats] = None,
                  method=NormalizationMethod.MINMAX):
    """
    Load and prepare the training and validation locations of ``split``.

    Normalization statistics are computed over all split locations, or over the training locations
    only when ``maxima_scope`` is ``"train"``.

    Returns:
        tuple[list[PreparedLocation], list[PreparedLocation], NormalizationStats]
    """
    train = load_locations(data_dir, split.train)
    val = load_locations(data_dir, split.val)
    stats_names = None if maxima_scope == "all" else list(split.train)
    prepared, stats = prepare_dataset(train + val, stats=stats, stats_names=stats_names, scope=maxima_scope,
                                      method=method)
    return prepared[:len(train)], prepared[len(train):], stats
