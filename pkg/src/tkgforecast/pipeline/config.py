"""Training configuration and the flat key=value config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..decoder import DecoderConfig
from ..encoder import EncoderConfig
from ..errors import ConfigError
from ..seqheads import SeqHeadConfig, SeqHeadKind
from ..tkg import HistorySpec

DT_MODES = ("train-only", "train-valid")
FILTER_MODES = ("time-aware", "static")


@dataclass(frozen=True)
class TrainConfig:
    head: str = "mlp"
    hx: tuple[int, ...] = (31, 23, 15, 7, 3, 1, 0)
    window: int = 4
    dt_mode: str = "train-only"
    dim: int = 200
    heads: int = 4
    time_dim: int = 32
    layers: int = 1
    neighbor_cap: int = 64
    slope: float = 0.2
    dec_blocks: int = 2
    dec_hidden: int = 400
    satt_layers: int = 2
    satt_heads: int = 4
    conv_channels: int = 8
    mlp_hidden: int = 400
    lr: float = 1e-3
    epochs: int = 50
    patience: int = 5
    min_improvement: float = 1e-4
    batch_size: int = 1024
    copy: bool = True
    rare_threshold: int = 0
    seed: int = 0
    icews14_mode: bool = False
    filter_mode: str = "time-aware"

    def __post_init__(self):
        object.__setattr__(self, "hx", HistorySpec(tuple(self.hx)).offsets)
        SeqHeadKind(self.head)
        if self.dt_mode not in DT_MODES:
            raise ConfigError(f"dt_mode must be one of {DT_MODES}")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"filter_mode must be one of {FILTER_MODES}")
        if self.window <= 0:
            raise ConfigError("window must be positive")
        if self.dim % self.heads or self.dim % self.satt_heads:
            raise ConfigError("dim must be divisible by the attention head counts")
        if self.lr < 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("lr/epochs must be >= 0 and batch_size > 0")

    @property
    def history(self) -> HistorySpec:
        return HistorySpec(self.hx)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(dim=self.dim, out_dim=self.dim, heads=self.heads, time_dim=self.time_dim,
                             layers=self.layers, slope=self.slope, neighbor_cap=self.neighbor_cap)

    def head_config(self) -> SeqHeadConfig:
        return SeqHeadConfig(satt_layers=self.satt_layers, satt_heads=self.satt_heads,
                             conv_channels=self.conv_channels, mlp_hidden=self.mlp_hidden)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(rel_dim=self.dim, blocks=self.dec_blocks, hidden=self.dec_hidden,
                             copy_head=self.copy)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["hx"] = list(self.hx)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if k == "hx" else v for k, v in values.items()})

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines into raw strings.

    ``#`` starts a comment; dashes in keys are read as underscores so keys
    can be spelled like the command-line flags.
    """
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values
