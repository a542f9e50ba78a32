"""
Run configuration: flat keys, run profiles and override merging.

Sources are merged with the precedence CLI flags > ``--config`` file > profile > built-in defaults.
Every key is flat (``lr``, ``loss.delta``, ...) so that overrides, ablation presets and the
``config.json`` echo of a run share one vocabulary.
"""
import json
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Any, Mapping, Optional

from django.conf import settings

from flowmap.evaluation import EvalProtocol
from flowmap.exceptions import ConfigError, FlowMapException, RasterStackError
from flowmap.losses import LossSpec
from flowmap.model import Arch, ModelConfig
from flowmap.raster_store import LAYER_ORDER, layer_mask
from flowmap.sampler import FC_VARIANTS, AssemblyMode, SamplerSettings, Variant
from flowmap.timeseries import NormalizationMethod
from flowmap.training import TrainConfig

log = getLogger(__name__)

PROFILES_DIR = Path(__file__).parent / "profiles"
SPLITS_DIR = Path(__file__).parent / "splits"
# Alternative names of bundled profiles and splits.
PROFILE_ALIASES = {"full": "paper"}
SPLIT_ALIASES = {"swedish": "paper"}

# key -> (accepted types, default)
CONFIG_KEYS = {
    "variant": (str, Variant.MAIN.value),
    "T": (int, 20),
    "flow_lag": (int, 0),
    "include_layers": (list, list(LAYER_ORDER)),
    "include_rain": (bool, True),
    "include_temp": (bool, True),
    "h": (int, 100),
    "w": (int, 100),
    "flip_prob": ((int, float), 0.5),
    "seed": (int, 0),
    "base_width": (int, 64),
    "fc_hidden": (int, 256),
    "init_seed": ((int, type(None)), None),
    "loss.kind": (str, "huber"),
    "loss.delta": ((int, float), 1.0),
    "loss.scale": (str, "normalized"),
    "batch_size": (int, 64),
    "lr": ((int, float), 2e-4),
    "total_batches": (int, 250000),
    "eval_every": (int, 250),
    "log_every": (int, 1),
    "beta1": ((int, float), 0.9),
    "beta2": ((int, float), 0.999),
    "eps": ((int, float), 1e-8),
    "workers": (int, 1),
    "queue_size": (int, 256),
    "device": (str, "cpu"),
    "maxima_scope": (str, "all"),
    "normalization": (str, NormalizationMethod.MINMAX.value),
    "eval_batch_size": (int, 16),
}

MAXIMA_SCOPES = ("all", "train")


def default_values() -> dict:
    return {key: (list(default) if isinstance(default, list) else default) for key, (_, default) in CONFIG_KEYS.items()}


def check_value(key: str, value: Any) -> Any:
    """
    Type-check one flat configuration value and return it in canonical form.
    """
    if key not in CONFIG_KEYS:
        raise ConfigError("unknown configuration key '{}'".format(key), key=key)
    accepted, _ = CONFIG_KEYS[key]
    accepted = accepted if isinstance(accepted, tuple) else (accepted,)
    # bool is an int subclass; only accept it where bool is asked for.
    if isinstance(value, bool) and bool not in accepted:
        raise ConfigError("invalid value {!r} for '{}'".format(value, key), key=key)
    if not isinstance(value, accepted):
        raise ConfigError(
            "invalid value {!r} for '{}': expected {}".format(
                value, key, " or ".join(kind.__name__ for kind in accepted),
            ),
            key=key,
        )
    if key == "include_layers":
        if not all(isinstance(name, str) for name in value):
            raise ConfigError("include_layers must list layer names", key=key)
        try:
            layer_mask(value)
        except RasterStackError as exc:
            raise ConfigError(str(exc), key=key) from exc
        return [name for name in LAYER_ORDER if name in value]
    if float in accepted:
        return float(value)
    return value


def parse_override(text: str) -> tuple[str, Any]:
    """
    Parse a ``key=value`` override; the value is read as a JSON literal, falling back to a string.
    """
    key, separator, raw = text.partition("=")
    key = key.strip()
    if not separator or not key:
        raise ConfigError("override '{}' is not of the form key=value".format(text), override=text)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, check_value(key, value)


def _read_json(path: Path, what: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("cannot read {} {}: {}".format(what, path, exc), path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("{} {} is not valid JSON: {}".format(what, path, exc), path=str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError("{} {} must hold a JSON object".format(what, path), path=str(path))
    return data


def profile_path(name: str) -> Path:
    name = PROFILE_ALIASES.get(name, name)
    directories = [PROFILES_DIR]
    extra = getattr(settings, "FLOWMAP_PROFILES_DIR", None)
    if extra:
        directories.insert(0, Path(extra))
    for directory in directories:
        candidate = directory / "{}.json".format(name)
        if candidate.exists():
            return candidate
    raise ConfigError("unknown run profile '{}'".format(name), profile=name)


def bundled_split_path(name: str) -> Path:
    """
    Resolve a split argument: an existing file, or the name of a split shipped with flowmap.
    """
    path = Path(name)
    if path.exists():
        return path
    candidate = SPLITS_DIR / "{}.json".format(SPLIT_ALIASES.get(name, name))
    return candidate if candidate.exists() else path


def load_profile(name: str) -> dict:
    """
    Load the flat values of a named run profile.
    """
    data = _read_json(profile_path(name), "profile")
    data.pop("name", None)
    return {key: check_value(key, value) for key, value in data.items()}


def load_config_file(path) -> dict:
    return {key: check_value(key, value) for key, value in _read_json(path, "config file").items()}


@dataclass(frozen=True)
class RunConfig:
    """
    A complete, validated run configuration.

    ``values`` holds every flat key; the typed views (``sampler``, ``loss``, ``train``) are built
    and validated on construction.
    """

    values: Mapping[str, Any]
    profile: Optional[str] = None
    sampler: SamplerSettings = field(init=False, repr=False)
    loss: LossSpec = field(init=False, repr=False)
    train: TrainConfig = field(init=False, repr=False)

    def __post_init__(self):
        values = default_values()
        for key, value in dict(self.values).items():
            values[key] = check_value(key, value)
        object.__setattr__(self, "values", values)

        try:
            mode = AssemblyMode(
                variant=values["variant"],
                T=values["T"],
                include_layers=layer_mask(values["include_layers"]),
                include_rain=values["include_rain"],
                include_temp=values["include_temp"],
                flow_lag=values["flow_lag"],
            )
            sampler = SamplerSettings(mode=mode, h=values["h"], w=values["w"], flip_prob=values["flip_prob"])
            loss = LossSpec(kind=values["loss.kind"], delta=values["loss.delta"], scale=values["loss.scale"])
            train = TrainConfig(
                batch_size=values["batch_size"],
                lr=values["lr"],
                total_batches=values["total_batches"],
                eval_every=values["eval_every"],
                log_every=values["log_every"],
                seed=values["seed"],
                betas=(values["beta1"], values["beta2"]),
                eps=values["eps"],
                workers=values["workers"],
                queue_size=values["queue_size"],
                device=values["device"],
                eval_batch_size=values["eval_batch_size"],
            )
        except ConfigError:
            raise
        except (FlowMapException, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

        if not 0.0 <= sampler.flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]", key="flip_prob")
        if values["maxima_scope"] not in MAXIMA_SCOPES:
            raise ConfigError("maxima_scope must be one of {}".format(", ".join(MAXIMA_SCOPES)), key="maxima_scope")
        if values["normalization"] not in {method.value for method in NormalizationMethod}:
            raise ConfigError(
                "normalization must be one of {}".format(", ".join(method.value for method in NormalizationMethod)),
                key="normalization",
            )
        if sampler.h < 32 or sampler.w < 32:
            raise ConfigError("windows must be at least 32x32", key="h")
        if mode.variant in FC_VARIANTS and (sampler.h, sampler.w) != (100, 100):
            raise ConfigError("variant '{}' needs h = w = 100".format(mode.variant.value), key="variant")

        object.__setattr__(self, "sampler", sampler)
        object.__setattr__(self, "loss", loss)
        object.__setattr__(self, "train", train)

    @property
    def mode(self) -> AssemblyMode:
        return self.sampler.mode

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def maxima_scope(self) -> str:
        return self.values["maxima_scope"]

    @property
    def normalization(self) -> NormalizationMethod:
        return NormalizationMethod(self.values["normalization"])

    @property
    def arch(self) -> Arch:
        if self.mode.variant == Variant.FC_EARLY:
            return Arch.FC_EARLY
        if self.mode.variant == Variant.FC_MID:
            return Arch.FC_MID
        return Arch.FCN8

    @property
    def model_config(self) -> ModelConfig:
        init_seed = self.values["init_seed"]
        try:
            return ModelConfig(
                in_channels=self.mode.channel_count,
                arch=self.arch,
                temporal_vector_len=self.mode.temporal_vector_len,
                base_width=self.values["base_width"],
                init_seed=self.seed if init_seed is None else init_seed,
                fc_hidden=self.values["fc_hidden"],
            )
        except FlowMapException as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def eval_protocol(self) -> EvalProtocol:
        return EvalProtocol(sampler=self.sampler, batch_size=self.train.eval_batch_size)

    def as_dict(self) -> dict:
        return dict(sorted(self.values.items()))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        return RunConfig(values={**self.values, **overrides}, profile=self.profile)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], profile: Optional[str] = None) -> "RunConfig":
        return cls(values=dict(data), profile=profile)


def build_run_config(profile: Optional[str] = "desk", config_file=None, overrides=(), seed: Optional[int] = None,
                     values: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Merge a profile, an optional config file and CLI overrides into one ``RunConfig``.

    Arguments:
        profile: name of a run profile, or None for the built-in defaults.
        config_file: path of a JSON file with flat keys.
        overrides: iterable of ``key=value`` strings.
        seed: value of ``--seed``, applied after every other source.
        values: already-parsed flat values applied with override precedence.
    """
    merged = {}
    if profile:
        merged.update(load_profile(profile))
    if config_file:
        merged.update(load_config_file(config_file))
    for text in overrides or ():
        key, value = parse_override(text)
        merged[key] = value
    if values:
        merged.update({key: check_value(key, value) for key, value in values.items()})
    if seed is not None:
        merged["seed"] = check_value("seed", seed)
    config = RunConfig(values=merged, profile=profile)
    log.debug("Built run configuration from profile %s with %d explicit key(s)", profile, len(merged))
    return config


# Keys a trained checkpoint's run configuration may take from --config or --set when it is evaluated.
CHECKPOINT_OVERRIDE_KEYS = ("h", "w", "eval_batch_size", "device")


def checkpoint_run_config(run_config: Mapping[str, Any], config_file=None, overrides=()) -> RunConfig:
    """
    Rebuild the run configuration stored in a checkpoint, with a config file and CLI overrides on top.

    Only the window size, the evaluation batch size and the device may change; any other key must keep
    the value the network was trained with.

    Raises:
        ConfigError: a config file or an override changes a key the trained network depends on.
    """
    stored = RunConfig.from_dict(run_config).values
    explicit = dict(load_config_file(config_file)) if config_file else {}
    for text in overrides or ():
        key, value = parse_override(text)
        explicit[key] = value
    fixed = sorted(
        key for key, value in explicit.items() if key not in CHECKPOINT_OVERRIDE_KEYS and value != stored[key]
    )
    if fixed:
        raise ConfigError("cannot change {} of a trained checkpoint".format(", ".join(fixed)), key=fixed[0])
    return RunConfig(values={**stored, **explicit})
