"""
Builders for small locations used across the test modules.
"""
import datetime

import numpy as np

from flowmap.dataset import Location, prepare_dataset
from flowmap.raster_store import NUM_LAYERS, RasterStack
from flowmap.sampler import AssemblyMode, SamplerSettings
from flowmap.synthcatch import SynthParams, generate_location
from flowmap.timeseries import Gauge, SeriesKind, TimeSeries

START = datetime.date(2000, 1, 1)


def small_params(**kwargs) -> SynthParams:
    """
    Synthetic parameters sized for fast tests: a 40x40 grid, 60 days, T = 5.
    """
    values = {"height": 40, "width": 40, "n_days": 60, "T": 5, "seed": 3}
    values.update(kwargs)
    return SynthParams(**values)


def synth_location(name="synth-000", **kwargs) -> Location:
    return generate_location(small_params(name=name, **kwargs)).location


def synth_locations(count=2, **kwargs) -> list[Location]:
    seed = kwargs.pop("seed", 3)
    return [synth_location(name="synth-{:03d}".format(index), seed=seed * 10 + index, **kwargs)
            for index in range(count)]


def series(values, kind, start=START) -> TimeSeries:
    return TimeSeries.from_values(values, kind, start_date=start)


def constant_location(name="flat", height=40, width=40, n_days=30, flow=2.0, rain=1.0, temp=5.0,
                      pixels=((20, 20),), layer_value=1.0) -> Location:
    """
    A location whose layers, weather and flows are constant in space and time.
    """
    array = np.full((NUM_LAYERS, height, width), layer_value, dtype=np.float32)
    gauges = tuple(
        Gauge("{}-g{:02d}".format(name, index), pixel, series(np.full(n_days, flow), SeriesKind.FLOW))
        for index, pixel in enumerate(pixels)
    )
    return Location(
        name=name,
        rasters=RasterStack.from_array(array),
        rain=series(np.full(n_days, rain), SeriesKind.RAIN),
        temp=series(np.full(n_days, temp), SeriesKind.TEMPERATURE),
        gauges=gauges,
    )


def prepared(locations, stats=None):
    """
    Run the default preparation pipeline and return only the prepared locations.
    """
    result, _ = prepare_dataset(locations, stats=stats)
    return result


def settings(T=5, h=32, w=32, flip_prob=0.0, **mode_kwargs) -> SamplerSettings:
    return SamplerSettings(mode=AssemblyMode(T=T, **mode_kwargs), h=h, w=w, flip_prob=flip_prob)


def desk_values(**kwargs) -> dict:
    """
    Flat run-configuration values for tiny CPU runs.
    """
    values = {
        "T": 5,
        "h": 32,
        "w": 32,
        "base_width": 1,
        "fc_hidden": 8,
        "batch_size": 2,
        "lr": 0.001,
        "total_batches": 3,
        "eval_every": 2,
        "log_every": 1,
        "eval_batch_size": 8,
        "seed": 0,
    }
    values.update(kwargs)
    return values
