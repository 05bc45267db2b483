"""Model configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .chebyshev import CLAMP, EXTRAPOLATE


class ConfigError(ValueError):
    pass


AGGREGATORS = ("mlp", "gat_style", "sparse_transformer")
AGGREGATOR_ALIASES = {"gat": "gat_style", "transformer": "sparse_transformer", "t": "sparse_transformer"}
VARIANTS = ("full", "wo_spectral", "wo_spatial", "wo_hrm", "static_spectral")


@dataclass(frozen=True)
class DeftConfig:
    n_layers: int = 1
    hidden_dim: int = 32
    n_heads: int = 4
    filter_order: int = 8
    scales: tuple[float, ...] = (0.5, 1.0)
    clamp_mode: str = CLAMP
    d_t: int = 16
    aggregator: str = "sparse_transformer"
    rnn_style: str = "weights_as_state"
    pooling: str = "mean"
    n_filter_heads: int = 1
    share_coefficients: bool = True
    variant: str = "full"
    activation: str = "leaky_relu"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(sorted(float(s) for s in self.scales)))
        object.__setattr__(self, "aggregator", AGGREGATOR_ALIASES.get(self.aggregator, self.aggregator))
        checks = [
            (self.n_layers in (1, 2), "n_layers must be 1 or 2"),
            (self.hidden_dim in (32, 64, 128), "hidden_dim must be one of 32, 64, 128"),
            (self.n_heads in (4, 8, 16), "n_heads must be one of 4, 8, 16"),
            (self.filter_order in (4, 8, 16), "filter_order must be one of 4, 8, 16"),
            (len(self.scales) >= 1, "scales must be non-empty"),
            (all(0.1 <= s <= 10.0 for s in self.scales), "scales must lie in [0.1, 10]"),
            (self.clamp_mode in (CLAMP, EXTRAPOLATE), "clamp_mode must be clamp or extrapolate"),
            (self.d_t > 0 and self.d_t % 2 == 0, "d_t must be a positive even number"),
            (self.aggregator in AGGREGATORS, f"aggregator must be one of {AGGREGATORS}"),
            (self.rnn_style in ("weights_as_state", "input_driven"), "rnn_style must be weights_as_state or input_driven"),
            (self.pooling in ("mean", "sum"), "pooling must be mean or sum"),
            (self.n_filter_heads >= 1, "n_filter_heads must be at least 1"),
            (self.variant in VARIANTS, f"variant must be one of {VARIANTS}"),
            (self.activation in ("leaky_relu", "tanh"), "activation must be leaky_relu or tanh"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def d_out(self) -> int:
        return self.hidden_dim // self.n_heads

    def to_mapping(self) -> dict[str, str]:
        return {f.name: format_value(getattr(self, f.name)) for f in dataclasses.fields(self)}


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def parse_value(raw: str, like: Any):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def read_kv_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_kv_file(path, mapping: Mapping[str, Any], comment: str | None = None):
    lines = [f"# {comment}"] if comment else []
    lines += [f"{k} = {format_value(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def build(cls, mapping: Mapping[str, str], strict: bool = True):
    """Instantiate a config dataclass from string values."""
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if strict and unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {k: parse_value(v, getattr(defaults, k)) if isinstance(v, str) else v
              for k, v in mapping.items() if k in names}
    return cls(**kwargs)


def load_deft_config(path) -> DeftConfig:
    return build(DeftConfig, read_kv_file(path))


def field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


__all__ = ["DeftConfig", "ConfigError", "build", "read_kv_file", "write_kv_file", "load_deft_config"]
