"""
Training and evaluation samples: window selection, input assembly and flip augmentation.

Inputs are channel-first arrays of shape (K, H, W): the selected spatial layers first, followed by the
temporal channels of the assembly variant.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from logging import getLogger
from typing import Iterator, Optional, Sequence

import numpy as np

from flowmap.dataset import PreparedLocation, supervised_days
from flowmap.exceptions import ConfigError, HistoryUnavailable, SamplingError
from flowmap.pipelines import TrainingSampleDrawn
from flowmap.raster_store import LAYER_ORDER, NUM_LAYERS, check_window

log = getLogger(__name__)


class Variant(str, Enum):
    MAIN = "main"
    ALT_RAIN_TEMP = "alt_rain_temp"
    FC_EARLY = "fc_early"
    FC_MID = "fc_mid"
    FLOW_LAG = "flow_lag"


FC_VARIANTS = (Variant.FC_EARLY, Variant.FC_MID)


@dataclass(frozen=True)
class AssemblyMode:
    """
    How spatial and temporal inputs are combined into one model input.

    ``flow_lag`` is the lag k of the flow-lag variant and must be 0 for every other variant.
    """

    variant: Variant = Variant.MAIN
    T: int = 20
    include_layers: tuple[bool, ...] = (True,) * NUM_LAYERS
    include_rain: bool = True
    include_temp: bool = True
    flow_lag: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "include_layers", tuple(bool(flag) for flag in self.include_layers))
        if self.T <= 0:
            raise ConfigError("history length T must be positive, got {}".format(self.T), key="T")
        if len(self.include_layers) != NUM_LAYERS:
            raise ConfigError("include_layers must hold {} flags".format(NUM_LAYERS), key="include_layers")
        if self.variant == Variant.FLOW_LAG:
            if self.flow_lag not in (1, 2, 3):
                raise ConfigError("flow_lag must be 1, 2 or 3, got {}".format(self.flow_lag), key="flow_lag")
        elif self.flow_lag:
            raise ConfigError("flow_lag is only valid with the flow_lag variant", key="flow_lag")
        if self.variant == Variant.ALT_RAIN_TEMP and not (self.include_rain and self.include_temp):
            raise ConfigError("alt_rain_temp interleaves rain and temperature and needs both", key="variant")
        if self.variant in FC_VARIANTS and not (self.include_rain or self.include_temp):
            raise ConfigError("fully connected fusion variants need a temporal input", key="variant")
        if self.channel_count < 1:
            raise ConfigError("the assembly mode selects no input channel at all", key="include_layers")

    @property
    def spatial_channels(self) -> int:
        return sum(self.include_layers)

    @property
    def layer_indices(self) -> np.ndarray:
        return np.flatnonzero(self.include_layers)

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(name for name, flag in zip(LAYER_ORDER, self.include_layers) if flag)

    @property
    def weather_series(self) -> int:
        return int(self.include_rain) + int(self.include_temp)

    @property
    def channel_count(self) -> int:
        """
        Number of channels K of the assembled input array.
        """
        spatial = self.spatial_channels
        if self.variant == Variant.ALT_RAIN_TEMP:
            return spatial + self.T
        if self.variant in FC_VARIANTS:
            return spatial
        temporal = self.T * self.weather_series
        if self.variant == Variant.FLOW_LAG:
            temporal += self.T
        return spatial + temporal

    @property
    def temporal_vector_len(self) -> int:
        return self.T * self.weather_series if self.variant in FC_VARIANTS else 0

    @property
    def min_day(self) -> int:
        return self.T + max(self.flow_lag - 1, 0)


@dataclass(frozen=True)
class SamplerSettings:
    mode: AssemblyMode = field(default_factory=AssemblyMode)
    h: int = 100
    w: int = 100
    flip_prob: float = 0.5


@dataclass(frozen=True)
class Target:
    """
    One supervised pixel: ground truth in m³/s and on the normalized scale the model predicts, with the
    scale and shift that map one onto the other.
    """

    pixel: tuple[int, int]
    flow_gt: float
    flow_norm: float
    norm_max: float
    site_id: str = ""
    norm_shift: float = 0.0


@dataclass(frozen=True)
class SampleMeta:
    location: str
    origin: tuple[int, int]
    day: int
    flips: tuple[bool, bool] = (False, False)
    anchor: str = ""


@dataclass(frozen=True)
class Sample:
    input: np.ndarray = field(repr=False)
    targets: tuple[Target, ...]
    meta: SampleMeta
    spatial_channels: int
    temporal: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def window_shape(self) -> tuple[int, int]:
        return self.input.shape[1], self.input.shape[2]


@dataclass(frozen=True)
class OriginRange:
    """
    Axis-aligned set of window origins: every (row, col) with row in ``rows`` and col in ``cols``.
    """

    rows: range
    cols: range

    def __len__(self):
        return len(self.rows) * len(self.cols)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        for row in self.rows:
            for col in self.cols:
                yield row, col

    def __contains__(self, origin) -> bool:
        row, col = origin
        return row in self.rows and col in self.cols


def enumerate_window_origins(gauge_pixel: tuple[int, int], h: int, w: int, full: tuple[int, int]) -> OriginRange:
    """
    All origins of ``h`` x ``w`` windows that lie inside the ``full`` grid and contain ``gauge_pixel``.
    """
    row, col = gauge_pixel
    rows, cols = full
    return OriginRange(
        rows=range(max(0, row - h + 1), min(row, rows - h) + 1),
        cols=range(max(0, col - w + 1), min(col, cols - w) + 1),
    )


def _check_history(name: str, values, T: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float32)
    if values.shape != (T,):
        raise SamplingError(
            "{} history has length {}, expected {}".format(name, values.size, T), series=name,
        )
    return values


def assemble_input(window: np.ndarray, rain_hist, temp_hist, mode: AssemblyMode,
                   flow_hist=None) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Combine a normalized, layer-masked (C', h, w) window with the temporal histories.

    Returns:
        tuple[np.ndarray, Optional[np.ndarray]]: the (K, h, w) input and, for the fully connected fusion
        variants, the temporal side vector (rain history then temperature history).
    """
    window = np.asarray(window, dtype=np.float32)
    if window.shape[0] != mode.spatial_channels:
        raise SamplingError(
            "window has {} channels but the mode selects {} layers".format(window.shape[0], mode.spatial_channels),
        )
    _, h, w = window.shape
    T = mode.T
    rain = _check_history("rain", rain_hist, T) if mode.include_rain else None
    temp = _check_history("temperature", temp_hist, T) if mode.include_temp else None

    if mode.variant in FC_VARIANTS:
        temporal = np.concatenate([series for series in (rain, temp) if series is not None])
        return np.ascontiguousarray(window), temporal

    if mode.variant == Variant.ALT_RAIN_TEMP:
        even = ((np.arange(h)[:, None] + np.arange(w)[None, :]) % 2) == 0
        checkerboard = np.where(even[None, :, :], rain[:, None, None], temp[:, None, None]).astype(np.float32)
        return np.concatenate([window, checkerboard]), None

    channels = [window]
    for series in (rain, temp):
        if series is not None:
            channels.append(np.broadcast_to(series[:, None, None], (T, h, w)))
    if mode.variant == Variant.FLOW_LAG:
        if flow_hist is None:
            raise SamplingError("the flow_lag variant needs a flow history")
        flow = _check_history("flow", flow_hist, T)
        channels.append(np.broadcast_to(flow[:, None, None], (T, h, w)))
    return np.concatenate(channels).astype(np.float32, copy=False), None


def apply_flips(sample: Sample, flip_h: bool, flip_v: bool) -> Sample:
    """
    Mirror the spatial channels and target pixels of a sample.

    Temporal channels are spatially constant or a fixed-parity checkerboard in window coordinates and
    are kept as they are, which is the same as re-tiling them after the flip.
    """
    if not (flip_h or flip_v):
        return sample

    h, w = sample.window_shape
    spatial = sample.input[:sample.spatial_channels]
    if flip_h:
        spatial = spatial[:, :, ::-1]
    if flip_v:
        spatial = spatial[:, ::-1, :]
    flipped = np.concatenate([spatial, sample.input[sample.spatial_channels:]])

    targets = []
    for target in sample.targets:
        row, col = target.pixel
        if flip_h:
            col = w - 1 - col
        if flip_v:
            row = h - 1 - row
        targets.append(replace(target, pixel=(row, col)))

    flips = (sample.meta.flips[0] != flip_h, sample.meta.flips[1] != flip_v)
    return replace(
        sample,
        input=np.ascontiguousarray(flipped),
        targets=tuple(targets),
        meta=replace(sample.meta, flips=flips),
    )


def _history(values: np.ndarray, t: int, T: int, name: str) -> np.ndarray:
    if t - T < 0 or t > len(values):
        raise HistoryUnavailable("insufficient history: day {} needs {} previous {} days".format(t, T, name), day=t)
    history = values[t - T:t]
    if np.isnan(history).any():
        raise HistoryUnavailable("missing {} value in the history of day {}".format(name, t), day=t)
    return history


def build_sample(location: PreparedLocation, origin: tuple[int, int], t: int, settings: SamplerSettings,
                 anchor: int = 0) -> Sample:
    """
    Assemble the sample for the window at ``origin`` and day ``t``.

    Every gauge of the location inside the window whose flow at ``t`` is measured becomes a target;
    flow-lag inputs use the history of the ``anchor`` gauge.
    """
    mode, h, w = settings.mode, settings.h, settings.w
    check_window(location.grid_shape, origin, h, w)
    if t < mode.T or t >= location.n_days:
        raise HistoryUnavailable("insufficient history: day {} with T={}".format(t, mode.T), day=t)

    row0, col0 = origin
    window = location.spatial[:, row0:row0 + h, col0:col0 + w][mode.layer_indices]
    flow_hist = None
    if mode.variant == Variant.FLOW_LAG:
        lagged_end = t - mode.flow_lag + 1
        flow_hist = _history(location.flows_norm[anchor], lagged_end, mode.T, "flow")
    inputs, temporal = assemble_input(
        window,
        _history(location.rain, t, mode.T, "rain"),
        _history(location.temp, t, mode.T, "temperature"),
        mode,
        flow_hist=flow_hist,
    )

    targets = []
    for index, gauge in enumerate(location.gauges):
        row, col = gauge.pixel
        inside = row0 <= row < row0 + h and col0 <= col < col0 + w
        if inside and not gauge.flow.missing[t]:
            targets.append(
                Target(
                    pixel=(row - row0, col - col0),
                    flow_gt=float(gauge.flow.values[t]),
                    flow_norm=float(location.flows_norm[index][t]),
                    norm_max=location.flow_scaling.scale,
                    site_id=gauge.site_id,
                    norm_shift=location.flow_scaling.shift,
                )
            )

    return Sample(
        input=inputs,
        targets=tuple(targets),
        meta=SampleMeta(location=location.name, origin=origin, day=t, anchor=location.gauges[anchor].site_id),
        spatial_channels=mode.spatial_channels,
        temporal=temporal,
    )


def centered_origin(pixel: tuple[int, int], h: int, w: int, full: tuple[int, int]) -> tuple[int, int]:
    rows, cols = full
    if h > rows or w > cols:
        raise SamplingError("a {}x{} window does not fit a {}x{} grid".format(h, w, rows, cols))
    row, col = pixel
    return int(np.clip(row - h // 2, 0, rows - h)), int(np.clip(col - w // 2, 0, cols - w))


def build_eval_sample(location: PreparedLocation, gauge_index: int, t: int, settings: SamplerSettings) -> Sample:
    """
    Deterministic evaluation sample: the window is centered on the gauge (clipped to the grid), no flips.
    """
    origin = centered_origin(location.gauges[gauge_index].pixel, settings.h, settings.w, location.grid_shape)
    return build_sample(location, origin, t, settings, anchor=gauge_index)


class SamplingIndex:
    """
    Supervised days of every gauge of every training location, computed once per sampler.
    """

    def __init__(self, locations: Sequence[PreparedLocation], mode: AssemblyMode):
        if not locations:
            raise SamplingError("the training split is empty")
        self.locations = list(locations)
        self.days = []
        for location in self.locations:
            per_gauge = [
                supervised_days(location.flow_measured(index), mode.T, mode.flow_lag)
                for index in range(len(location.gauges))
            ]
            if not any(days.size for days in per_gauge):
                raise SamplingError(
                    "no supervised day available at location '{}'".format(location.name), location=location.name,
                )
            self.days.append(per_gauge)

    def gauges_with_days(self, location_index: int) -> list[int]:
        return [index for index, days in enumerate(self.days[location_index]) if days.size]


def draw_training_sample(locations: Sequence[PreparedLocation], rng: np.random.Generator,
                         settings: SamplerSettings, index: Optional[SamplingIndex] = None) -> Sample:
    """
    Draw one training sample.

    A location is picked uniformly, then one of its gauges with supervised days, then a window origin
    among all windows containing that gauge, then one of the gauge's supervised days. The sample is
    then handed to the ``TrainingSampleDrawn`` pipeline, which applies the random flips.
    """
    index = index or SamplingIndex(locations, settings.mode)
    location_index = int(rng.integers(len(index.locations)))
    location = index.locations[location_index]

    candidates = index.gauges_with_days(location_index)
    anchor = candidates[int(rng.integers(len(candidates)))]
    origins = enumerate_window_origins(location.gauges[anchor].pixel, settings.h, settings.w, location.grid_shape)
    if not len(origins):
        raise SamplingError(
            "a {}x{} window does not fit the grid of '{}'".format(settings.h, settings.w, location.name),
        )
    origin = (
        origins.rows[int(rng.integers(len(origins.rows)))],
        origins.cols[int(rng.integers(len(origins.cols)))],
    )
    days = index.days[location_index][anchor]
    t = int(days[int(rng.integers(days.size))])

    sample = build_sample(location, origin, t, settings, anchor=anchor)
    return TrainingSampleDrawn.run_filter(sample=sample, rng=rng, flip_prob=settings.flip_prob)
