"""Run configuration: defaults, validation, and the flat key=value file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

ALL_STREAMS = ("global", "part", "head")

# total downsampling of the stream backbones (stem * branch) and the dense backbone
STREAM_STRIDE = 16
DENSE_STRIDE = 4


@dataclass
class ModelConfig:
    """Architecture and loss hyperparameters.

    Desk-scale defaults; the full-scale geometry (384x128 input, 512/1920
    channels) stays reachable through the same fields.
    """

    input_h: int = 64
    input_w: int = 32
    branch_channels: int = 32  # per-branch feature channels of the global/head streams
    dense_channels: int = 48  # channels of the dense part-stream map
    stem_channels: tuple[int, int] = (16, 32)
    dense_hidden: int = 24
    num_parts: int = 7  # part clusters including background
    num_classes: int = 2  # training identities; dataset-derived
    lambda_pair: float = 1.0
    lambda_psd: float = 0.1
    alpha_pos: float = 2.0
    alpha_neg: float = 40.0
    pair_margin: float = 0.5
    batch_identities: int = 6  # P
    batch_instances: int = 7  # K_inst
    streams: tuple[str, ...] = ALL_STREAMS
    use_erasing: bool = True
    erase_fraction: float = 1.0 / 3.0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.num_parts < 2:
            raise ConfigError(f"num_parts must be >= 2, got {self.num_parts}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        stride = STREAM_STRIDE if set(self.streams) & {"global", "head"} else DENSE_STRIDE
        if self.input_h % stride or self.input_w % stride:
            raise ConfigError(
                f"input {self.input_h}x{self.input_w} not divisible by backbone stride {stride}"
            )
        bad = [s for s in self.streams if s not in ALL_STREAMS]
        if bad or not self.streams:
            raise ConfigError(f"streams must be a non-empty subset of {ALL_STREAMS}, got {self.streams}")
        if self.batch_identities < 2:
            raise ConfigError("batch_identities must be >= 2")
        if not (0.0 < self.erase_fraction <= 1.0):
            raise ConfigError("erase_fraction must be in (0, 1]")

    @property
    def descriptor_dim(self) -> int:
        dim = 0
        if "global" in self.streams:
            dim += (3 if self.use_erasing else 2) * self.branch_channels
        if "head" in self.streams:
            dim += (3 if self.use_erasing else 2) * self.branch_channels
        if "part" in self.streams:
            dim += (self.num_parts - 1) * self.dense_channels
        return dim


@dataclass
class RunConfig(ModelConfig):
    """Everything a training run needs; full-scale schedule by default.

    ``desk_default()`` is the configuration the CLI uses when no config file
    is given: the short schedule with learning rates rescaled for training
    small randomly initialized backbones (the full-scale rates assume
    pretrained weights and long schedules).
    """

    epochs_warmup: int = 10
    epochs_main: int = 150
    lr_init: float = 6e-5
    lr_peak: float = 6e-4
    lr_final: float = 6e-7
    sgd_momentum: float = 0.9
    weight_decay: float = 5e-4
    dataset_root: str = ""
    output_dir: str = "runs/out"
    eval_every: int = 0  # 0 = only after the final epoch
    eval_topk: int = 10
    exclude_same_sample: bool = False
    allow_shared_test_identities: bool = False

    def validate(self) -> None:
        super().validate()
        if self.lr_init > self.lr_peak or self.lr_final > self.lr_peak:
            raise ConfigError("learning rates must satisfy lr_init <= lr_peak and lr_final <= lr_peak")
        if self.epochs_warmup + self.epochs_main < 1:
            raise ConfigError("total epochs must be >= 1")
        if self.epochs_warmup < 0 or self.epochs_main < 0:
            raise ConfigError("epoch counts must be >= 0")

    @property
    def total_epochs(self) -> int:
        return self.epochs_warmup + self.epochs_main

    @classmethod
    def desk_default(cls, **overrides) -> "RunConfig":
        # full-scale rates x10: random-init small backbones on a short schedule
        # need larger steps than the pretrained full-scale recipe
        base = dict(
            epochs_warmup=3,
            epochs_main=30,
            lr_init=6e-4,
            lr_peak=6e-3,
            lr_final=6e-6,
        )
        base.update(overrides)
        return cls(**base)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(raw: str, ftype):
    raw = raw.strip()
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is str:
        return raw
    # remaining fields are tuples of str or int
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if all(p.lstrip("+-").isdigit() for p in parts):
        return tuple(int(p) for p in parts)
    return tuple(parts)


def config_to_text(cfg: RunConfig) -> str:
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(raw, _field_type(fields[key]))
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"config line {lineno}: {e}") from e
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _field_type(f: dataclasses.Field):
    # dataclass field types arrive as strings under `from __future__ import annotations`
    t = f.type
    if isinstance(t, str):
        if t.startswith("tuple"):
            return tuple
        return {"int": int, "float": float, "str": str, "bool": bool}.get(t, str)
    return t


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def config_to_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def config_from_dict(d: dict) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for key, v in d.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = tuple(v) if isinstance(v, list) else v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
