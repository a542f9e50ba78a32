"""
Synthetic catchments: procedural raster stacks, weather series and a linear-reservoir flow oracle.

Generated locations use the same on-disk formats as real ones, so every other module runs on them
unchanged.
"""
import datetime
import json
import shutil
from dataclasses import asdict, dataclass, field, replace
from logging import getLogger
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from flowmap.dataset import Location, Split, save_location, save_split
from flowmap.exceptions import ConfigError, DatasetError, SeriesError
from flowmap.raster_store import LAYER_ORDER, SHARED_CELL_SIZE_M, RasterStack
from flowmap.timeseries import Gauge, SeriesKind, TimeSeries

log = getLogger(__name__)

START_DATE = datetime.date(2000, 1, 1)
DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class ReservoirParams:
    """
    Linear reservoir with a snow store.

    ``k`` is the recession constant, ``c`` the runoff coefficient; below ``snow_threshold`` (°C) rain
    is stored as snow, and above it up to ``melt_rate`` mm of snow melt per day.
    """

    k: float
    c: float = 0.8
    snow_threshold: float = 0.0
    melt_rate: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.k < 1.0:
            raise ConfigError("recession constant k must lie in (0, 1), got {}".format(self.k), key="k")
        if not 0.0 < self.c <= 1.0:
            raise ConfigError("runoff coefficient c must lie in (0, 1], got {}".format(self.c), key="c")
        if self.melt_rate < 0:
            raise ConfigError("melt rate must not be negative", key="melt_rate")


@dataclass(frozen=True)
class SynthParams:
    name: str = "synth-000"
    height: int = 128
    width: int = 128
    seed: int = 0
    n_days: int = 400
    n_gauges: int = 1
    T: int = 20
    rain_probability: float = 0.35
    rain_scale_mm: float = 6.0
    temp_mean: float = 6.0
    temp_amplitude: float = 10.0
    temp_noise: float = 2.0
    runoff_c: float = 0.8
    snow_threshold: float = 0.0
    melt_rate: float = 3.0
    k_range: tuple[float, float] = (0.25, 0.6)
    flow_scale: float = 1.0
    flow_missing_fraction: float = 0.0
    weather_missing_fraction: float = 0.0
    cell_size_m: float = SHARED_CELL_SIZE_M

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("degenerate grid of {}x{}".format(self.height, self.width), key="height")
        if self.n_days <= self.T:
            raise ConfigError(
                "n_days ({}) must exceed the history length T ({})".format(self.n_days, self.T), key="n_days",
            )
        if self.n_gauges < 1 or self.n_gauges > (self.height - 2) * (self.width - 2):
            raise ConfigError("cannot place {} gauges".format(self.n_gauges), key="n_gauges")
        low, high = self.k_range
        if not 0.0 < low <= high < 1.0:
            raise ConfigError("k_range must lie in (0, 1)", key="k_range")
        if not 0.0 < self.runoff_c <= 1.0:
            raise ConfigError("runoff_c must lie in (0, 1]", key="runoff_c")
        if not 0.0 <= self.rain_probability <= 1.0:
            raise ConfigError("rain_probability must lie in [0, 1]", key="rain_probability")
        for name in ("flow_missing_fraction", "weather_missing_fraction"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError("{} must lie in [0, 1)".format(name), key=name)

    def as_dict(self) -> dict:
        data = asdict(self)
        data["k_range"] = list(self.k_range)
        return data


@dataclass(frozen=True)
class SynthLocation:
    location: Location
    reservoirs: tuple[ReservoirParams, ...] = field(repr=False)
    params: SynthParams = field(repr=False)


def simulate_flow(rain, temp, params: ReservoirParams, return_storage: bool = False):
    """
    Run the linear reservoir over daily rain (mm) and temperature (°C).

    With storage S starting at 0, the outflow of day t is ``k * S_t`` and the storage evolves as
    ``S_{t+1} = S_t + e_t - k * S_t`` where ``e_t = c * (rain + melt)`` on days at or above the snow
    threshold and 0 below it (the rain then goes into the snow pack).

    Returns:
        np.ndarray, or (flow, storage) with ``storage`` of length ``len(rain) + 1`` when
        ``return_storage`` is set.
    """
    rain = np.asarray(rain, dtype=np.float64)
    temp = np.asarray(temp, dtype=np.float64)
    if rain.shape != temp.shape:
        raise SeriesError("rain and temperature lengths differ: {} vs {}".format(rain.size, temp.size))

    n_days = rain.size
    flow = np.zeros(n_days)
    storage = np.zeros(n_days + 1)
    pack = 0.0
    for t in range(n_days):
        if temp[t] < params.snow_threshold:
            pack += rain[t]
            effective = 0.0
        else:
            melt = min(pack, params.melt_rate)
            pack -= melt
            effective = params.c * (rain[t] + melt)
        flow[t] = params.k * storage[t]
        storage[t + 1] = storage[t] + effective - flow[t]
    return (flow, storage) if return_storage else flow


def _field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """
    Smoothed noise rescaled to [0, 1].
    """
    smooth = gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="reflect")
    low, high = smooth.min(), smooth.max()
    return (smooth - low) / (high - low) if high > low else np.zeros(shape)


def slope_from_elevation(elevation: np.ndarray, cell_size_m: float = SHARED_CELL_SIZE_M) -> np.ndarray:
    """
    Terrain slope in degrees from differences between adjacent cells (forward differences, the last
    row and column repeat their neighbour).
    """
    elevation = np.asarray(elevation, dtype=np.float64)
    d_row = np.diff(elevation, axis=0, append=elevation[-1:, :]) / cell_size_m
    d_col = np.diff(elevation, axis=1, append=elevation[:, -1:]) / cell_size_m
    if elevation.shape[0] > 1:
        d_row[-1, :] = d_row[-2, :]
    if elevation.shape[1] > 1:
        d_col[:, -1] = d_col[:, -2]
    return np.degrees(np.arctan(np.hypot(d_row, d_col)))


def generate_rasters(params: SynthParams, rng: np.random.Generator) -> RasterStack:
    shape = (params.height, params.width)
    sigma = max(shape) / 10

    elevation = 100.0 + 300.0 * _field(rng, shape, sigma)
    vegetation = _field(rng, shape, sigma / 2)
    moisture = _field(rng, shape, sigma)
    soil = _field(rng, shape, sigma)

    land_cover = 1.0 + np.digitize(vegetation, [0.2, 0.4, 0.6, 0.8])
    layers = {
        "satellite_r": 40.0 + 150.0 * (1.0 - vegetation) + 10.0 * _field(rng, shape, 1.0),
        "satellite_g": 60.0 + 150.0 * vegetation + 10.0 * _field(rng, shape, 1.0),
        "satellite_b": 30.0 + 80.0 * moisture + 10.0 * _field(rng, shape, 1.0),
        "elevation": elevation,
        "slope": slope_from_elevation(elevation, params.cell_size_m),
        "soil_moisture": 0.05 + 0.45 * moisture,
        "land_cover": land_cover,
        "soil_type": 1.0 + np.digitize(soil, [0.25, 0.5, 0.75]),
        "soil_depth": 0.2 + 2.8 * soil,
        "hydraulic_conductivity": np.exp(-2.0 + 3.0 * (1.0 - soil)),
    }
    array = np.stack([layers[name] for name in LAYER_ORDER]).astype(np.float32)
    return RasterStack.from_array(array, cell_size_m=params.cell_size_m)


def generate_weather(params: SynthParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    days = np.arange(params.n_days)
    wet = rng.random(params.n_days) < params.rain_probability
    rain = np.where(wet, rng.exponential(params.rain_scale_mm, params.n_days), 0.0)
    phase = rng.uniform(0.0, DAYS_PER_YEAR)
    temp = (
        params.temp_mean
        + params.temp_amplitude * np.sin(2.0 * np.pi * (days - phase) / DAYS_PER_YEAR)
        + rng.normal(0.0, params.temp_noise, params.n_days)
    )
    return rain, temp


def _gauge_pixels(params: SynthParams, rng: np.random.Generator) -> list[tuple[int, int]]:
    interior = (params.height - 2) * (params.width - 2)
    flat = rng.choice(interior, size=params.n_gauges, replace=False)
    return [(1 + int(index) // (params.width - 2), 1 + int(index) % (params.width - 2)) for index in flat]


def _with_missing(values: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    values = values.copy()
    if fraction > 0:
        values[rng.random(values.size) < fraction] = np.nan
    return values


def generate_location(params: SynthParams) -> SynthLocation:
    """
    Generate one synthetic location, deterministically from ``params.seed``.

    Each gauge gets its own reservoir: shallow soil at the gauge drains faster (larger k), steep
    terrain raises the runoff coefficient, and low-lying gauges drain a larger area.
    """
    rng = np.random.default_rng(params.seed)
    rasters = generate_rasters(params, rng)
    rain, temp = generate_weather(params, rng)

    depth = rasters.layer("soil_depth").data
    slope = rasters.layer("slope").data
    elevation = rasters.layer("elevation").data
    k_low, k_high = params.k_range

    gauges, reservoirs = [], []
    for number, pixel in enumerate(_gauge_pixels(params, rng)):
        depth_norm = float((depth[pixel] - depth.min()) / max(np.ptp(depth), 1e-9))
        slope_norm = float(slope[pixel] / max(slope.max(), 1e-9))
        elevation_norm = float((elevation[pixel] - elevation.min()) / max(np.ptp(elevation), 1e-9))
        reservoir = ReservoirParams(
            k=k_low + (k_high - k_low) * (1.0 - depth_norm),
            c=params.runoff_c * (0.75 + 0.25 * slope_norm),
            snow_threshold=params.snow_threshold,
            melt_rate=params.melt_rate,
        )
        area = params.flow_scale * (1.5 - elevation_norm)
        flow = area * simulate_flow(rain, temp, reservoir)
        flow = _with_missing(flow, params.flow_missing_fraction, rng)
        gauges.append(
            Gauge(
                site_id="{}-g{:02d}".format(params.name, number),
                pixel=pixel,
                flow=TimeSeries.from_values(flow, SeriesKind.FLOW, start_date=START_DATE),
            )
        )
        reservoirs.append(reservoir)

    location = Location(
        name=params.name,
        rasters=rasters,
        rain=TimeSeries.from_values(
            _with_missing(rain, params.weather_missing_fraction, rng), SeriesKind.RAIN, start_date=START_DATE,
        ),
        temp=TimeSeries.from_values(
            _with_missing(temp, params.weather_missing_fraction, rng), SeriesKind.TEMPERATURE,
            start_date=START_DATE,
        ),
        gauges=tuple(gauges),
    )
    return SynthLocation(location=location, reservoirs=tuple(reservoirs), params=params)


def location_params(base: SynthParams, index: int) -> SynthParams:
    return replace(base, name="synth-{:03d}".format(index), seed=base.seed * 1000 + index)


def default_split(names: list[str]) -> Split:
    """
    Hold out the last quarter of the locations (at least one when there are two or more) for validation.
    """
    n_val = max(1, len(names) // 4) if len(names) > 1 else 0
    return Split(train=tuple(names[:len(names) - n_val]), val=tuple(names[len(names) - n_val:]))


def write_dataset(out_dir, base: SynthParams, n_locations: int, force: bool = False,
                  split: Optional[Split] = None) -> Path:
    """
    Write ``n_locations`` synthetic locations, a ``split.json`` and a ``synth.json`` parameter echo.

    Raises:
        DatasetError: ``out_dir`` exists and is not empty, and ``force`` is not set.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise DatasetError("output directory {} exists; pass --force to overwrite".format(out_dir),
                               path=str(out_dir))
        shutil.rmtree(out_dir)
    if n_locations < 1:
        raise ConfigError("at least one location is needed", key="locations")
    out_dir.mkdir(parents=True, exist_ok=True)

    names = []
    for index in range(n_locations):
        synth = generate_location(location_params(base, index))
        save_location(synth.location, out_dir / synth.location.name)
        names.append(synth.location.name)
        log.info("Wrote synthetic location '%s' with %d gauge(s)", synth.location.name, len(synth.location.gauges))

    save_split(split or default_split(names), out_dir / "split.json")
    (out_dir / "synth.json").write_text(
        json.dumps({"locations": n_locations, "params": base.as_dict()}, indent=2, sort_keys=True)
    )
    return out_dir
