"""Run configuration: one typed schema, YAML in, unknown keys rejected.

A run file has top-level run keys (task, mode, model, memory, ...) and four
sections: data, arch, train, eval. Every key is declared by a dataclass
below; anything else raises ConfigurationError so an ablation typo cannot
silently run the wrong experiment.
"""

import dataclasses
import json

import yaml

from .exceptions import ConfigurationError
from .utils import stable_hash

TASKS = ("generation", "perception")
MODES = ("online", "offline")
MODELS = ("mamba", "causal_transformer")
MEMORY_VARIANTS = ("off", "ms_only", "ml_only", "me")
FUSIONS = ("concat_maxpool", "add", "max")


@dataclasses.dataclass
class GenerationDataConfig:
    n_train: int = 16
    n_val: int = 12
    seq_len: int = 24
    pose_dim: int = 4
    actor_dim: int = 4
    n_classes: int = 4
    n_object_points: int = 32
    lag: int = 2
    ema_decay: float = 0.85
    ema_weight: float = 0.9
    lag_weight: float = 0.5
    object_weight: float = 0.3
    noise_scale: float = 0.02
    long_range_weight: float = 0.0
    long_range_start: int = 5
    fps: float = 30.0
    data_seed: int = 0


@dataclasses.dataclass
class PerceptionDataConfig:
    n_train: int = 8
    n_val: int = 6
    seq_len: int = 48
    n_points: int = 48
    n_classes: int = 4
    segment_min: int = 8
    segment_max: int = 16
    context_mode: str = "paired"
    context_len: int = 4
    jitter: float = 0.003
    data_seed: int = 0


@dataclasses.dataclass
class ArchConfig:
    model_dim: int = 48
    depth: int = 2
    state_dim: int = 8
    conv_width: int = 4
    expansion: int = 2
    heads: int = 2
    ffn_width: int = 0  # 0 means "match the selective-SSM parameter count"
    channels: tuple = (12, 16, 24, 32)
    out_channels: int = 32
    radius_base: float = 0.3
    radius_growth: float = 1.8
    temporal_radius: int = 1
    frame_dt: float = 0.1
    granularity: str = "frame"


@dataclasses.dataclass
class TrainConfig:
    steps: int = 400
    batch_size: int = 8
    learning_rate: float = 1e-3
    grad_clip: float = 1.0
    diffusion_steps: int = 16
    schedule: str = "cosine"
    beta_start: float = 1e-3
    beta_end: float = 0.2
    checkpoint_every: int = 0  # 0 writes only the final checkpoint


@dataclasses.dataclass
class EvalConfig:
    sample_seed: int = 1234
    div_pairs: int = 0  # 0 picks n_val // 2
    f1_overlap: float = 0.5
    extractor_hidden: int = 32
    extractor_features: int = 8
    extractor_steps: int = 300
    extractor_lr: float = 1e-2
    causality_probe: bool = True
    probe_frame: int = 0  # 0 probes at seq_len // 2


_SECTION_TYPES = {
    "arch": ArchConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _coerce_override(current, value):
    """Parse a command line override against the type of the value it replaces.

    Plain YAML parsing is wrong here twice over: YAML 1.1 reads "off" as a
    boolean (breaking --set memory=off) and "1e14" as a string (sending a
    str learning rate into the optimizer). The existing value's type says
    what the flag must mean.
    """
    if not isinstance(value, str):
        return value
    if isinstance(current, str):
        return value
    if isinstance(current, bool):
        parsed = yaml.safe_load(value)
        if isinstance(parsed, bool):
            return parsed
        raise ConfigurationError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigurationError(f"expected an integer, got {value!r}") from exc
    if isinstance(current, float):
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigurationError(f"expected a number, got {value!r}") from exc
    parsed = yaml.safe_load(value)
    if isinstance(current, (list, tuple)) and not isinstance(parsed, list):
        raise ConfigurationError(f"expected a list, got {value!r}")
    return parsed


def _build_section(cls, mapping, path):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) {unknown} in section '{path}'")
    coerced = {}
    for key, value in mapping.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigurationError(f"bad section '{path}': {exc}") from exc


@dataclasses.dataclass
class RunConfig:
    task: str = "generation"
    mode: str = "online"
    model: str = "mamba"
    memory: str = "me"
    fusion: str = "concat_maxpool"
    short_capacity: int = 8
    long_capacity: int = 8
    memory_mode: str = "accumulate"
    similarity: str = "dot"
    merge: str = "mean"
    seeds: tuple = (0, 1, 2)
    name: str = ""
    out_dir: str = ""
    data: object = None
    arch: ArchConfig = None
    train: TrainConfig = None
    eval: EvalConfig = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}")
        if self.memory not in MEMORY_VARIANTS:
            raise ConfigurationError(f"memory must be one of {MEMORY_VARIANTS}")
        if self.fusion not in FUSIONS:
            raise ConfigurationError(f"fusion must be one of {FUSIONS}")
        if self.memory_mode not in ("accumulate", "literal"):
            raise ConfigurationError("memory_mode must be 'accumulate' or 'literal'")
        if isinstance(self.seeds, list):
            self.seeds = tuple(self.seeds)
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigurationError("seeds must be a non-empty list of ints")
        if self.short_capacity < 1 or self.long_capacity < 1:
            raise ConfigurationError("memory capacities must be >= 1")
        data_cls = (
            GenerationDataConfig if self.task == "generation" else PerceptionDataConfig
        )
        if self.data is None:
            self.data = data_cls()
        elif isinstance(self.data, dict):
            self.data = _build_section(data_cls, self.data, "data")
        elif not isinstance(self.data, data_cls):
            raise ConfigurationError(f"data section does not match task {self.task}")
        for section, cls in _SECTION_TYPES.items():
            value = getattr(self, section)
            if value is None:
                setattr(self, section, cls())
            elif isinstance(value, dict):
                setattr(self, section, _build_section(cls, value, section))
            elif not isinstance(value, cls):
                raise ConfigurationError(f"bad section '{section}'")

    @classmethod
    def from_mapping(cls, mapping):
        if not isinstance(mapping, dict):
            raise ConfigurationError("run config must be a mapping")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown top-level key(s) {unknown}")
        return cls(**mapping)

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        return cls.from_mapping(raw or {})

    def to_mapping(self):
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        out["arch"] = dataclasses.asdict(self.arch)
        out["arch"]["channels"] = list(self.arch.channels)
        out["data"] = dataclasses.asdict(self.data)
        out["train"] = dataclasses.asdict(self.train)
        out["eval"] = dataclasses.asdict(self.eval)
        return out

    def config_hash(self):
        return stable_hash(self.to_mapping())

    def run_name(self, seed):
        base = self.name or (
            f"{self.task}-{self.mode}-{self.model}-{self.memory}"
        )
        return f"{base}-seed{seed}"

    def with_overrides(self, **kwargs):
        """New RunConfig with top-level fields replaced."""
        mapping = self.to_mapping()
        mapping.update(kwargs)
        return RunConfig.from_mapping(mapping)

    def set_dotted(self, dotted_key, value):
        """New RunConfig with one (possibly dotted) key replaced.

        String values are coerced to the type of the key they replace, so
        "--set train.steps=200" is an int, "--set train.learning_rate=1e14"
        a float, and "--set memory=off" the literal string.
        """
        mapping = self.to_mapping()
        parts = dotted_key.split(".")
        target = mapping
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigurationError(f"unknown config section {part!r}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigurationError(f"unknown config key {dotted_key!r}")
        target[parts[-1]] = _coerce_override(target[parts[-1]], value)
        return RunConfig.from_mapping(mapping)


def config_to_json(config):
    return json.dumps(config.to_mapping(), sort_keys=True, indent=2)


def config_from_json(text):
    return RunConfig.from_mapping(json.loads(text))
