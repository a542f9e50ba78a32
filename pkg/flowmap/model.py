"""
The fully convolutional flow regression network and its fully connected fusion variants.

The trunk is an FCN8: five VGG-style blocks, a convolutional ``fc6``/``fc7`` head, single-channel score
maps fused at strides 16 and 8, and learned upsampling back to input resolution. Flows are predicted
on the normalized scale with a linear output.
"""
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from logging import getLogger
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from flowmap import __version__
from flowmap.exceptions import ModelConfigError, ModelError, ModelInputError

log = getLogger(__name__)

BLOCK_CONVS = (2, 2, 3, 3, 3)
BLOCK_WIDTH_FACTORS = (1, 2, 4, 8, 8)
HEAD_WIDTH_FACTOR = 64
TRUNK_STRIDE = 32
MIN_INPUT_SIZE = 32

FC_WINDOW = 100
FC_INJECTED_CHANNELS = 2
# Fully connected mid fusion: 100x100 windows are padded to 152x152 so the pool2 map is 38x38.
FC_MID_BLOCK = 2
FC_MID_PADDED = 152
FC_MID_SIDE = 38

CHECKPOINT_FORMAT = "flowmap-checkpoint"
CHECKPOINT_VERSION = 1


class Arch(str, Enum):
    FCN8 = "fcn8"
    FC_EARLY = "fc_early"
    FC_MID = "fc_mid"


@dataclass(frozen=True)
class ModelConfig:
    """
    Shape and initialization of a flow network.

    For the fully connected fusion archs ``in_channels`` counts the spatial channels only and
    ``temporal_vector_len`` is the length of the temporal side vector.
    """

    in_channels: int
    arch: Arch = Arch.FCN8
    temporal_vector_len: int = 0
    base_width: int = 64
    init_seed: int = 0
    fc_hidden: int = 256

    def __post_init__(self):
        try:
            object.__setattr__(self, "arch", Arch(self.arch))
        except ValueError as exc:
            raise ModelConfigError("unknown arch '{}'".format(self.arch), arch=self.arch) from exc
        if self.in_channels < 1:
            raise ModelConfigError("in_channels must be at least 1, got {}".format(self.in_channels))
        if self.base_width < 1 or self.fc_hidden < 1:
            raise ModelConfigError("base_width and fc_hidden must be positive")
        if self.arch != Arch.FCN8 and self.temporal_vector_len <= 0:
            raise ModelConfigError("arch '{}' needs a positive temporal_vector_len".format(self.arch.value))
        if self.arch == Arch.FCN8 and self.temporal_vector_len:
            raise ModelConfigError("arch 'fcn8' takes no temporal side vector")

    def as_dict(self) -> dict:
        data = asdict(self)
        data["arch"] = self.arch.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass(frozen=True)
class FlowMap:
    """
    Dense (H, W) prediction on the normalized flow scale.
    """

    values: np.ndarray = field(repr=False)
    norm_max: float = 1.0
    norm_shift: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ModelError("flow map holds non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def denormalized(self) -> np.ndarray:
        """
        The map in m³/s.
        """
        return np.asarray(self.values, dtype=np.float64) * self.norm_max + self.norm_shift

    def at(self, pixel: tuple[int, int]) -> float:
        row, col = pixel
        return float(self.denormalized[row, col])


def bilinear_kernel(factor: int) -> torch.Tensor:
    size = 2 * factor
    center = factor - 0.5
    taps = 1 - torch.abs(torch.arange(size, dtype=torch.float64) - center) / factor
    return torch.outer(taps, taps).to(torch.float32)


class LearnedUpsample(nn.Module):
    """
    Single-channel transposed convolution upsampling by ``factor``, initialized as bilinear.

    The input is replicate-padded by one pixel before the transposed convolution and the result is
    cropped to exactly ``factor`` times the input size, so constant maps stay constant up to the borders.
    """

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor
        self.deconv = nn.ConvTranspose2d(1, 1, kernel_size=2 * factor, stride=factor, bias=False)

    def reset_parameters(self):
        with torch.no_grad():
            self.deconv.weight.copy_(bilinear_kernel(self.factor)[None, None])

    def forward(self, x):
        height, width = x.shape[-2:]
        padded = nn.functional.pad(x, (1, 1, 1, 1), mode="replicate")
        upsampled = self.deconv(padded)
        offset = self.factor + self.factor // 2
        return upsampled[..., offset:offset + height * self.factor, offset:offset + width * self.factor]


def _vgg_block(in_channels: int, width: int, n_convs: int) -> nn.Sequential:
    layers = []
    for _ in range(n_convs):
        layers += [nn.Conv2d(in_channels, width, kernel_size=3, padding=1), nn.ReLU(inplace=True)]
        in_channels = width
    layers.append(nn.MaxPool2d(kernel_size=2, stride=2, ceil_mode=True))
    return nn.Sequential(*layers)


class FlowFCN(nn.Module):
    """
    FCN8 flow regressor; see ``ModelConfig`` for the fusion archs.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        width = config.base_width
        widths = [factor * width for factor in BLOCK_WIDTH_FACTORS]

        in_channels = config.in_channels
        if config.arch == Arch.FC_EARLY:
            in_channels += FC_INJECTED_CHANNELS
        blocks = []
        for index, (n_convs, block_width) in enumerate(zip(BLOCK_CONVS, widths)):
            if config.arch == Arch.FC_MID and index == FC_MID_BLOCK:
                in_channels += FC_INJECTED_CHANNELS
            blocks.append(_vgg_block(in_channels, block_width, n_convs))
            in_channels = block_width
        self.blocks = nn.ModuleList(blocks)

        head_width = HEAD_WIDTH_FACTOR * width
        self.fc6 = nn.Conv2d(widths[4], head_width, kernel_size=7, padding=3)
        self.fc7 = nn.Conv2d(head_width, head_width, kernel_size=1)
        self.score_fr = nn.Conv2d(head_width, 1, kernel_size=1, bias=False)
        self.score_pool4 = nn.Conv2d(widths[3], 1, kernel_size=1, bias=False)
        self.score_pool3 = nn.Conv2d(widths[2], 1, kernel_size=1, bias=False)
        self.upscore2 = LearnedUpsample(2)
        self.upscore_pool4 = LearnedUpsample(2)
        self.upscore8 = LearnedUpsample(8)
        self.output_bias = nn.Parameter(torch.zeros(1))

        self.temporal_branch = None
        if config.arch != Arch.FCN8:
            side = FC_WINDOW if config.arch == Arch.FC_EARLY else FC_MID_SIDE
            self.injected_side = side
            self.temporal_branch = nn.Sequential(
                nn.Linear(config.temporal_vector_len, config.fc_hidden),
                nn.ReLU(inplace=True),
                nn.Linear(config.fc_hidden, FC_INJECTED_CHANNELS * side * side),
            )

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                is_score = module in (self.score_fr, self.score_pool4, self.score_pool3)
                nn.init.kaiming_normal_(
                    module.weight, mode="fan_in", nonlinearity="linear" if is_score else "relu",
                )
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, LearnedUpsample):
                module.reset_parameters()
        nn.init.zeros_(self.output_bias)

    def _padding(self, height: int, width: int) -> tuple[int, int]:
        if self.config.arch == Arch.FCN8:
            return (
                math.ceil(height / TRUNK_STRIDE) * TRUNK_STRIDE - height,
                math.ceil(width / TRUNK_STRIDE) * TRUNK_STRIDE - width,
            )
        if (height, width) != (FC_WINDOW, FC_WINDOW):
            raise ModelInputError(
                "arch '{}' needs {}x{} inputs, got {}x{}".format(
                    self.config.arch.value, FC_WINDOW, FC_WINDOW, height, width,
                ),
            )
        if self.config.arch == Arch.FC_MID:
            return FC_MID_PADDED - height, FC_MID_PADDED - width
        return (
            math.ceil(height / TRUNK_STRIDE) * TRUNK_STRIDE - height,
            math.ceil(width / TRUNK_STRIDE) * TRUNK_STRIDE - width,
        )

    def _check_inputs(self, x: torch.Tensor, temporal: Optional[torch.Tensor]):
        if x.ndim != 4:
            raise ModelInputError("expected a (B, K, H, W) input, got shape {}".format(tuple(x.shape)))
        if x.shape[1] != self.config.in_channels:
            raise ModelInputError(
                "channel mismatch: input has {} channels, model expects {}".format(
                    x.shape[1], self.config.in_channels,
                ),
            )
        if x.shape[2] < MIN_INPUT_SIZE or x.shape[3] < MIN_INPUT_SIZE:
            raise ModelInputError(
                "input of {}x{} is smaller than {}x{}".format(x.shape[2], x.shape[3], MIN_INPUT_SIZE, MIN_INPUT_SIZE),
            )
        if not torch.isfinite(x).all():
            raise ModelInputError("non-finite values in model input")
        if self.temporal_branch is None:
            if temporal is not None:
                raise ModelInputError("arch 'fcn8' takes no temporal side vector")
            return
        expected = (x.shape[0], self.config.temporal_vector_len)
        if temporal is None or tuple(temporal.shape) != expected:
            raise ModelInputError(
                "arch '{}' needs a temporal vector of shape {}".format(self.config.arch.value, expected),
            )
        if not torch.isfinite(temporal).all():
            raise ModelInputError("non-finite values in temporal input")

    def _injected(self, temporal: torch.Tensor) -> torch.Tensor:
        side = self.injected_side
        return self.temporal_branch(temporal).view(-1, FC_INJECTED_CHANNELS, side, side)

    def forward(self, x: torch.Tensor, temporal: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Map a (B, K, H, W) input to a (B, H, W) flow map.
        """
        self._check_inputs(x, temporal)
        height, width = x.shape[-2:]
        pad_h, pad_w = self._padding(height, width)

        if self.config.arch == Arch.FC_EARLY:
            x = torch.cat([x, self._injected(temporal)], dim=1)

        top, left = pad_h // 2, pad_w // 2
        x = nn.functional.pad(x, (left, pad_w - left, top, pad_h - top))

        skips = []
        for index, block in enumerate(self.blocks):
            if self.config.arch == Arch.FC_MID and index == FC_MID_BLOCK:
                if x.shape[-2:] != (FC_MID_SIDE, FC_MID_SIDE):
                    raise ModelInputError(
                        "mid-trunk feature map is {}x{}, expected {}x{}".format(
                            x.shape[-2], x.shape[-1], FC_MID_SIDE, FC_MID_SIDE,
                        ),
                    )
                x = torch.cat([x, self._injected(temporal)], dim=1)
            x = block(x)
            skips.append(x)
        pool3, pool4 = skips[2], skips[3]

        x = torch.relu(self.fc6(x))
        x = torch.relu(self.fc7(x))
        score = self.upscore2(self.score_fr(x))
        skip = self.score_pool4(pool4)
        score = score[..., :skip.shape[-2], :skip.shape[-1]] + skip
        score = self.upscore_pool4(score)
        skip = self.score_pool3(pool3)
        score = score[..., :skip.shape[-2], :skip.shape[-1]] + skip
        score = self.upscore8(score)

        score = score[:, 0, top:top + height, left:left + width]
        return score + self.output_bias


def init_model(config: ModelConfig) -> FlowFCN:
    """
    Build a network with parameters drawn deterministically from ``config.init_seed``.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.init_seed)
        model = FlowFCN(config)
        model.reset_parameters()
    log.info(
        "Initialized %s model with %d input channels and %d parameters",
        config.arch.value, config.in_channels, count_parameters(model),
    )
    return model


def _as_batch(tensor):
    tensor = torch.as_tensor(tensor)
    return tensor.unsqueeze(0) if tensor.ndim in (1, 3) else tensor


def _run(model: FlowFCN, inputs, temporal=None) -> torch.Tensor:
    single = torch.as_tensor(inputs).ndim == 3
    reference = next(model.parameters())
    inputs = _as_batch(inputs).to(device=reference.device, dtype=reference.dtype)
    if temporal is not None:
        temporal = _as_batch(temporal).to(device=reference.device, dtype=reference.dtype)
    output = model(inputs, temporal)
    return output[0] if single else output


def forward(model: FlowFCN, inputs, temporal=None) -> torch.Tensor:
    """
    Run the network on a (K, H, W) or (B, K, H, W) input and return (H, W) or (B, H, W) flows.
    """
    if model.config.arch == Arch.FC_EARLY:
        return forward_fc_early(model, inputs, temporal)
    if model.config.arch == Arch.FC_MID:
        return forward_fc_mid(model, inputs, temporal)
    return _run(model, inputs)


def forward_fc_early(model: FlowFCN, spatial, temporal) -> torch.Tensor:
    if model.config.arch != Arch.FC_EARLY:
        raise ModelInputError("model arch is '{}', not 'fc_early'".format(model.config.arch.value))
    return _run(model, spatial, temporal)


def forward_fc_mid(model: FlowFCN, spatial, temporal) -> torch.Tensor:
    if model.config.arch != Arch.FC_MID:
        raise ModelInputError("model arch is '{}', not 'fc_mid'".format(model.config.arch.value))
    return _run(model, spatial, temporal)


def count_parameters(model: nn.Module) -> int:
    return sum(parameter.numel() for parameter in model.parameters() if parameter.requires_grad)


@dataclass
class Checkpoint:
    model: FlowFCN
    run_config: dict
    normalization: dict
    step: int = 0
    val_rmse: Optional[float] = None

    @property
    def model_config(self) -> ModelConfig:
        return self.model.config


def save_checkpoint(path, model: FlowFCN, run_config: dict, normalization: dict, step: int = 0,
                    val_rmse: Optional[float] = None) -> Path:
    """
    Write a checkpoint: config echoes plus float32 named parameter tensors.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    container = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "flowmap_version": __version__,
        "model_config": model.config.as_dict(),
        "run_config": run_config,
        "normalization": normalization,
        "step": int(step),
        "val_rmse": None if val_rmse is None else float(val_rmse),
        "parameters": {
            name: tensor.detach().to("cpu", torch.float32).contiguous()
            for name, tensor in model.state_dict().items()
        },
    }
    torch.save(container, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ModelError("missing checkpoint {}".format(path), path=str(path))
    try:
        container = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # pylint: disable=broad-except
        raise ModelError("unreadable checkpoint {}: {}".format(path, exc), path=str(path)) from exc
    if container.get("format") != CHECKPOINT_FORMAT:
        raise ModelError("{} is not a flowmap checkpoint".format(path), path=str(path))
    if container.get("version") != CHECKPOINT_VERSION:
        raise ModelError(
            "unsupported checkpoint version {}".format(container.get("version")), path=str(path),
        )

    model = FlowFCN(ModelConfig.from_dict(container["model_config"]))
    model.load_state_dict(container["parameters"])
    model.eval()
    return Checkpoint(
        model=model,
        run_config=container["run_config"],
        normalization=container["normalization"],
        step=container["step"],
        val_rmse=container["val_rmse"],
    )
