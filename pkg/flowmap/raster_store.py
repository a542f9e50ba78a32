"""
Spatial data model: aligned raster stacks, their on-disk layout and normalization.

A stack is stored as a directory holding one headerless little-endian float32 file per layer
(``<layer_name>.f32``), one JSON sidecar per layer (``<layer_name>.json``) and a ``stack.json`` listing
the canonical layer order.
"""
import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from logging import getLogger
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from flowmap.exceptions import DimensionMismatch, MissingLayer, NonFiniteValues, RasterStackError, WindowOutOfBounds

log = getLogger(__name__)

RASTER_DTYPE = np.dtype("<f4")
SHARED_CELL_SIZE_M = 10.0


class LayerName(str, Enum):
    """
    Spatial input layers, in canonical channel order.
    """

    SATELLITE_R = "satellite_r"
    SATELLITE_G = "satellite_g"
    SATELLITE_B = "satellite_b"
    ELEVATION = "elevation"
    SLOPE = "slope"
    SOIL_MOISTURE = "soil_moisture"
    LAND_COVER = "land_cover"
    SOIL_TYPE = "soil_type"
    SOIL_DEPTH = "soil_depth"
    HYDRAULIC_CONDUCTIVITY = "hydraulic_conductivity"


LAYER_ORDER = tuple(layer.value for layer in LayerName)
NUM_LAYERS = len(LAYER_ORDER)

# Resolution of the source products before they were resampled onto the shared grid; metadata only.
NATIVE_RESOLUTION_M = {
    "satellite_r": 10.0,
    "satellite_g": 10.0,
    "satellite_b": 10.0,
    "elevation": 50.0,
    "slope": 50.0,
    "soil_moisture": 2.0,
    "land_cover": 10.0,
    "soil_type": 10.0,
    "soil_depth": 10.0,
    "hydraulic_conductivity": 100.0,
}


@dataclass(frozen=True)
class RasterLayer:
    name: str
    data: np.ndarray
    native_resolution_m: float = SHARED_CELL_SIZE_M

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class RasterStack:
    """
    Aligned multi-channel spatial grid of exactly ``NUM_LAYERS`` layers in canonical order.

    Layer arrays are read-only; every operation on a stack returns a new stack.
    """

    layers: tuple[RasterLayer, ...]
    cell_size_m: float = SHARED_CELL_SIZE_M

    def __post_init__(self):
        names = tuple(layer.name for layer in self.layers)
        if names != LAYER_ORDER:
            raise RasterStackError(
                "Raster stack layers must follow the canonical order.", expected=LAYER_ORDER, found=names,
            )
        shapes = {layer.shape for layer in self.layers}
        if len(shapes) != 1:
            raise DimensionMismatch("dimension mismatch between raster layers", shapes=sorted(shapes))
        for layer in self.layers:
            layer.data.setflags(write=False)

    @classmethod
    def from_array(cls, array: np.ndarray, cell_size_m: float = SHARED_CELL_SIZE_M) -> "RasterStack":
        """
        Build a stack from a (C, H, W) array in canonical layer order.
        """
        if array.ndim != 3 or array.shape[0] != NUM_LAYERS:
            raise DimensionMismatch(
                "dimension mismatch: expected an array of shape ({}, H, W)".format(NUM_LAYERS),
                shape=array.shape,
            )
        layers = tuple(
            RasterLayer(name, np.array(array[index], dtype=np.float32), NATIVE_RESOLUTION_M[name])
            for index, name in enumerate(LAYER_ORDER)
        )
        return cls(layers=layers, cell_size_m=cell_size_m)

    @property
    def height_px(self) -> int:
        return self.layers[0].shape[0]

    @property
    def width_px(self) -> int:
        return self.layers[0].shape[1]

    @cached_property
    def array(self) -> np.ndarray:
        """
        The stack as a read-only (C, H, W) float32 array.
        """
        stacked = np.stack([layer.data for layer in self.layers]).astype(np.float32, copy=False)
        stacked.setflags(write=False)
        return stacked

    def layer(self, name: str) -> RasterLayer:
        return self.layers[LAYER_ORDER.index(name)]


@dataclass(frozen=True)
class LayerMaxima:
    """
    Per-layer normalization divisors, in canonical layer order.
    """

    values: tuple[float, ...]

    def as_dict(self) -> dict:
        return dict(zip(LAYER_ORDER, self.values))

    @classmethod
    def from_dict(cls, data: dict) -> "LayerMaxima":
        try:
            return cls(values=tuple(float(data[name]) for name in LAYER_ORDER))
        except KeyError as exc:
            raise MissingLayer("missing layer in maxima: {}".format(exc.args[0]), layer=exc.args[0]) from exc

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: Path) -> "LayerMaxima":
        return cls.from_dict(json.loads(Path(path).read_text()))


def read_layer(directory, name: str) -> RasterLayer:
    """
    Read one layer file and its sidecar; used for input layers and for written flow maps alike.
    """
    directory = Path(directory)
    data_path = directory / "{}.f32".format(name)
    sidecar_path = directory / "{}.json".format(name)
    if not data_path.exists() or not sidecar_path.exists():
        raise MissingLayer("missing layer: {}".format(name), layer=name, directory=str(directory))

    sidecar = json.loads(sidecar_path.read_text())
    height, width = int(sidecar["height"]), int(sidecar["width"])
    values = np.fromfile(data_path, dtype=RASTER_DTYPE)
    if values.size != height * width:
        raise DimensionMismatch(
            "dimension mismatch: {} holds {} values, sidecar declares {}x{}".format(
                data_path.name, values.size, height, width,
            ),
            layer=name,
        )
    if not np.all(np.isfinite(values)):
        raise NonFiniteValues("non-finite values in layer {}".format(name), layer=name)

    return RasterLayer(
        name=name,
        data=values.reshape(height, width).astype(np.float32),
        native_resolution_m=float(
            sidecar.get("native_resolution_m", NATIVE_RESOLUTION_M.get(name, SHARED_CELL_SIZE_M))
        ),
    )


def load_raster_stack(directory) -> RasterStack:
    """
    Load and validate the raster stack stored in ``directory``.

    Raises:
        MissingLayer: a layer file or its sidecar is absent.
        DimensionMismatch: layers disagree on grid dimensions, or a file disagrees with its sidecar.
        NonFiniteValues: a layer holds NaN or Inf.
    """
    directory = Path(directory)
    stack_meta_path = directory / "stack.json"
    cell_size_m = SHARED_CELL_SIZE_M
    if stack_meta_path.exists():
        stack_meta = json.loads(stack_meta_path.read_text())
        listed = tuple(stack_meta.get("layers", LAYER_ORDER))
        if listed != LAYER_ORDER:
            raise RasterStackError("stack.json lists a non-canonical layer order", found=listed)
        cell_size_m = float(stack_meta.get("cell_size_m", SHARED_CELL_SIZE_M))

    layers = tuple(read_layer(directory, name) for name in LAYER_ORDER)
    stack = RasterStack(layers=layers, cell_size_m=cell_size_m)
    log.debug("Loaded raster stack %s (%dx%d)", directory, stack.height_px, stack.width_px)
    return stack


def save_layer_file(directory, name: str, data: np.ndarray, cell_size_m: float = SHARED_CELL_SIZE_M,
                    native_resolution_m: float | None = None) -> Path:
    """
    Write one layer file plus its sidecar and return the path of the ``.f32`` file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(data, dtype=RASTER_DTYPE)
    data_path = directory / "{}.f32".format(name)
    data.tofile(data_path)
    sidecar = {
        "height": int(data.shape[0]),
        "width": int(data.shape[1]),
        "cell_size_m": float(cell_size_m),
        "layer": name,
    }
    if native_resolution_m is not None:
        sidecar["native_resolution_m"] = float(native_resolution_m)
    (directory / "{}.json".format(name)).write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return data_path


def save_raster_stack(stack: RasterStack, directory) -> None:
    directory = Path(directory)
    for layer in stack.layers:
        save_layer_file(directory, layer.name, layer.data, stack.cell_size_m, layer.native_resolution_m)
    stack_meta = {"layers": list(LAYER_ORDER), "cell_size_m": stack.cell_size_m}
    (directory / "stack.json").write_text(json.dumps(stack_meta, indent=2, sort_keys=True))


def compute_layer_maxima(stacks: Sequence[RasterStack]) -> LayerMaxima:
    """
    Compute the layer-wise maximum across all given stacks.

    An all-zero layer gets the divisor 1.0 and stays at zero after normalization.

    Raises:
        RasterStackError: no stack is given, or a layer has a negative maximum.
    """
    if not stacks:
        raise RasterStackError("cannot compute layer maxima of an empty list of stacks")

    maxima = []
    for index, name in enumerate(LAYER_ORDER):
        maximum = max(float(stack.layers[index].data.max()) for stack in stacks)
        if maximum < 0.0:
            raise RasterStackError(
                "layer '{}' has negative maximum {}; it cannot be scaled into [0, 1]".format(name, maximum),
                layer=name, maximum=maximum,
            )
        if maximum == 0.0:
            log.warning("Layer '%s' is zero everywhere; using 1.0 as its normalization divisor.", name)
            maximum = 1.0
        maxima.append(maximum)
    return LayerMaxima(values=tuple(maxima))


def compute_layer_moments(stacks: Sequence[RasterStack]) -> tuple[tuple[float, ...], LayerMaxima]:
    """
    Compute the layer-wise mean and standard deviation over every pixel of the given stacks.

    A constant layer gets the divisor 1.0.

    Returns:
        tuple: the per-layer means and the per-layer standard deviations as divisors.
    """
    if not stacks:
        raise RasterStackError("cannot compute layer moments of an empty list of stacks")

    means, deviations = [], []
    for index, name in enumerate(LAYER_ORDER):
        pooled = np.concatenate([stack.layers[index].data.ravel() for stack in stacks]).astype(np.float64)
        deviation = float(pooled.std())
        if deviation == 0.0:
            log.warning("Layer '%s' is constant; using 1.0 as its normalization divisor.", name)
            deviation = 1.0
        means.append(float(pooled.mean()))
        deviations.append(deviation)
    return tuple(means), LayerMaxima(values=tuple(deviations))


def normalize_stack(stack: RasterStack, maxima: LayerMaxima,
                    shifts: Optional[Sequence[float]] = None) -> RasterStack:
    """
    Scale every layer as ``(data - shift) / divisor``; the shifts default to 0.
    """
    if any(value <= 0 for value in maxima.values):
        raise RasterStackError("layer maxima must be positive", maxima=maxima.values)
    shifts = tuple(shifts) if shifts is not None else (0.0,) * len(maxima.values)
    if len(shifts) != len(maxima.values):
        raise RasterStackError("expected {} layer shifts, got {}".format(len(maxima.values), len(shifts)))

    layers = tuple(
        RasterLayer(
            layer.name,
            ((layer.data - np.float32(shift)) / np.float32(maximum)).astype(np.float32),
            layer.native_resolution_m,
        )
        for layer, maximum, shift in zip(stack.layers, maxima.values, shifts)
    )
    return RasterStack(layers=layers, cell_size_m=stack.cell_size_m)


def check_window(shape: tuple[int, int], origin: tuple[int, int], h: int, w: int) -> None:
    rows, cols = shape
    row, col = origin
    if h <= 0 or w <= 0 or row < 0 or col < 0 or row + h > rows or col + w > cols:
        raise WindowOutOfBounds(
            "window out of bounds: origin ({}, {}) size {}x{} on a {}x{} grid".format(row, col, h, w, rows, cols),
            origin=origin,
        )


def crop_window(stack: RasterStack, origin: tuple[int, int], h: int, w: int) -> RasterStack:
    check_window((stack.height_px, stack.width_px), origin, h, w)
    row, col = origin
    layers = tuple(
        RasterLayer(layer.name, layer.data[row:row + h, col:col + w].copy(), layer.native_resolution_m)
        for layer in stack.layers
    )
    return RasterStack(layers=layers, cell_size_m=stack.cell_size_m)


def layer_mask(include: Iterable[str]) -> tuple[bool, ...]:
    """
    Translate a collection of layer names into a boolean mask over the canonical order.
    """
    include = set(include)
    unknown = include.difference(LAYER_ORDER)
    if unknown:
        raise RasterStackError("unknown layer names: {}".format(", ".join(sorted(unknown))), layers=sorted(unknown))
    return tuple(name in include for name in LAYER_ORDER)
