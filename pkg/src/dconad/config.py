"""Run configuration stored as a flat ``key = value`` text file with ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data import ANOMALY_KINDS, DIFF_ORDERS, SynthSpec
from .errors import ConfigError
from .evaluation import ThresholdSpec
from .model import EncoderConfig
from .views import LOSS_MODES, OBJECTIVES


@dataclass
class RunConfig:
    data_dir: str = ""
    synth_d: int = 5
    synth_t_train: int = 2000
    synth_t_test: int = 2000
    synth_rate: float = 0.01
    synth_kinds: str = "spike"
    window: int = 90
    stride: int = 1
    d_model: int = 256
    n_heads: int = 1
    n_layers: int = 1
    ff_inner: int = 0
    lr: float = 1e-4
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    loss_mode: str = "symmetric-kl"
    objective: str = "difference"
    threshold: str = "fixed:1.1"
    adjust: bool = True
    enable_time_block: bool = True
    enable_rel_block: bool = True
    diff_order: str = "norm-then-diff"
    out_dir: str = "runs/default"

    # -- validation ---------------------------------------------------------

    def validate(self) -> "RunConfig":
        positive = ("window", "stride", "d_model", "n_heads", "n_layers", "batch_size", "synth_d", "synth_t_train", "synth_t_test")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("epochs", "seed", "ff_inner"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr: must be positive, got {self.lr}")
        if self.window < 2:
            raise ConfigError(f"window: must be >= 2, got {self.window}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode: expected one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective: expected one of {OBJECTIVES}, got {self.objective!r}")
        if self.diff_order not in DIFF_ORDERS:
            raise ConfigError(f"diff_order: expected one of {DIFF_ORDERS}, got {self.diff_order!r}")
        if not (self.enable_time_block or self.enable_rel_block):
            raise ConfigError("enable_time_block/enable_rel_block: at least one block must stay enabled")
        if self.d_model % self.n_heads:
            raise ConfigError(f"n_heads: d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        ThresholdSpec.parse(self.threshold)
        if not self.data_dir:
            self.synth_spec().validate()
            if self.window > min(self.synth_t_train, self.synth_t_test):
                raise ConfigError(
                    f"window: {self.window} exceeds series length {min(self.synth_t_train, self.synth_t_test)}"
                )
        return self

    # -- derived views ----------------------------------------------------

    def synth_spec(self) -> SynthSpec:
        kinds = tuple(k.strip() for k in self.synth_kinds.split(",") if k.strip())
        bad = [k for k in kinds if k not in ANOMALY_KINDS]
        if bad:
            raise ConfigError(f"synth_kinds: unknown kinds {bad}; choose from {ANOMALY_KINDS}")
        return SynthSpec(self.synth_d, self.synth_t_train, self.synth_t_test, self.synth_rate, kinds)

    def encoder_config(self, d_in: int) -> EncoderConfig:
        return EncoderConfig(
            d_in=d_in,
            window=self.window,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            enable_time_block=self.enable_time_block,
            enable_rel_block=self.enable_rel_block,
            ff_inner=self.ff_inner,
        )

    def threshold_spec(self) -> ThresholdSpec:
        return ThresholdSpec.parse(self.threshold)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- serialisation ----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}\n")
        return "".join(lines)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown field {key!r}")
            values[key] = _coerce(key, value, types[key], f"{source}:{lineno}")
        return cls(**values)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**{k: v for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"{path}: config file not found")
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))


def _coerce(key: str, value: str, typ, where: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: field {key!r} expects {typ}, got {value!r}") from None
    return value


# window / layers / threshold per public benchmark
PRESETS: dict[str, dict] = {
    "msl": {"window": 90, "n_layers": 1, "threshold": "fixed:1.1"},
    "smap": {"window": 105, "n_layers": 3, "threshold": "fixed:0.8"},
    "psm": {"window": 60, "n_layers": 3, "threshold": "fixed:1.5"},
    "smd": {"window": 105, "n_layers": 1, "threshold": "fixed:1.1"},
    "swat": {"window": 105, "n_layers": 3, "threshold": "fixed:1.0"},
}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig(**{"data_dir": f"data/{name}", **PRESETS[name], **overrides})
