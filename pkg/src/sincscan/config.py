"""Flat run configuration with a lossless text round trip.

Every field is addressable in a plain ``key = value`` file, one per line,
with ``#`` comments.  Floats serialize via repr so parsing them back gives
bitwise-identical values.
"""

import dataclasses
from dataclasses import dataclass

from .bimamba import FUSION_MODES
from .errors import ConfigError, ParseError


@dataclass
class TrainConfig:
    # run
    seed: int = 1234
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # audio
    sample_rate: int = 16000
    n_samples: int = 64000
    # frontend plan
    n_filters: int = 70
    sinc_kernel: int = 129
    sinc_pool: int = 3
    block_channels: tuple = (32, 32, 64, 64)
    block_pools_f: tuple = (2, 2, 2, 2)
    block_pools_t: tuple = (4, 4, 4, 2)
    trainable_bank: bool = True
    # sequence model
    n_layers: int = 6
    inner_dim: int = 128
    state_dim: int = 16
    conv_kernel: int = 4
    bias: bool = True
    residual: bool = True
    fusion_mode: str = "concat"
    # loss
    margin: int = 4
    lambda_start: float = 1000.0
    lambda_decay: float = 0.99
    lambda_floor: float = 5.0
    # tandem cost constants
    p_target: float = 0.9405
    p_nontarget: float = 0.0095
    p_spoof: float = 0.05
    cost_miss_asv: float = 1.0
    cost_fa_asv: float = 10.0
    cost_miss_cm: float = 1.0
    cost_fa_cm: float = 10.0
    asv_p_miss: float = 0.05
    asv_p_fa: float = 0.05
    asv_p_miss_spoof: float = 0.05

    @property
    def channels(self) -> int:
        """Token width handed from the frontend to the sequence model."""
        return self.block_channels[-1]

    def validate(self) -> "TrainConfig":
        positive = ["batch_size", "epochs", "sample_rate",
                    "n_samples", "n_filters", "sinc_kernel", "sinc_pool",
                    "n_layers", "inner_dim", "state_dim", "conv_kernel",
                    "margin", "lambda_start", "lambda_floor"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, "
                                  f"got {getattr(self, name)}")
        # zero is a legitimate degenerate (a no-op epoch must stay a no-op)
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be >= 0, "
                              f"got {self.learning_rate}")
        for name in ["adam_beta1", "adam_beta2", "lambda_decay"]:
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), "
                                  f"got {getattr(self, name)}")
        if self.adam_eps <= 0.0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, "
                              f"got {self.fusion_mode!r}")
        plan = (self.block_channels, self.block_pools_f, self.block_pools_t)
        if not all(plan) or len(set(map(len, plan))) != 1:
            raise ConfigError("block_channels / block_pools_f / block_pools_t "
                              f"must be non-empty and aligned, got {plan}")
        for tup in plan:
            if any(int(v) < 1 for v in tup):
                raise ConfigError(f"block plan entries must be >= 1, got {tup}")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"line {lineno}: expected 'key = value', "
                                 f"got {raw!r}")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in fields:
                raise ParseError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ParseError(f"line {lineno}: duplicate key {key!r}")
            try:
                values[key] = _parse_value(fields[key].type, value)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad value for {key!r}: "
                                 f"{exc}") from exc
        return cls(**values).validate()


def _parse_value(annotation, text: str):
    name = annotation if isinstance(annotation, str) else annotation.__name__
    if name == "int":
        return int(text)
    if name == "float":
        return float(text)
    if name == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if name == "tuple":
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    return text


def full_config() -> TrainConfig:
    """Full-scale preset; slow, for completeness rather than CI."""
    return TrainConfig().validate()


def tiny_config() -> TrainConfig:
    """Desk-scale preset that exercises every code path in minutes."""
    return TrainConfig(
        learning_rate=3e-3,
        batch_size=16,
        epochs=30,
        n_filters=4,
        sinc_pool=16,
        block_channels=(16, 32),
        block_pools_f=(1, 2),
        block_pools_t=(4, 8),
        n_layers=2,
        inner_dim=64,
        state_dim=8,
    ).validate()


PRESETS = {"full": full_config, "tiny": tiny_config}


def preset_config(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; "
                          f"choose from {sorted(PRESETS)}")
    return PRESETS[name]()
