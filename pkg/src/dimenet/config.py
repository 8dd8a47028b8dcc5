"""Flat dotted-key configuration.

Values are layered: built-in defaults < config file < command-line overrides.
The on-disk format is one ``key = value`` pair per line; ``#`` starts a comment.
Lists are comma-separated.
"""
from __future__ import annotations

import difflib
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict[str, object] = {
    # illumination estimator
    "moe.num_experts": 16,
    "moe.k": 4,
    "moe.n_values": [],  # explicit list overrides the geometric spacing rule
    "moe.n_min": 0.2,
    "moe.n_max": 5.0,
    "moe.sigma": 0.5,
    "moe.noise": True,
    "moe.learnable_n": False,
    "moe.balance_loss_weight": 0.0,
    "moe.feat_channels": 16,
    # bottleneck attention
    "dscam.heads": 4,
    "dscam.d_state": 8,
    "dscam.per_direction": False,
    "dscam.zero_init": True,
    # damage restorer
    "restorer.base_channels": 16,
    "restorer.depth": 2,
    "restorer.dscam_blocks": 2,
    # ablation switches
    "ablation.no_moe": False,
    "ablation.all_n_below_1": False,
    "ablation.all_n_above_1": False,
    "ablation.no_estimator": False,
    "ablation.no_restorer": False,
    # training
    "train.iterations": 2000,
    "train.batch_size": 4,
    "train.patch": 64,
    "train.lr_init": 2e-4,
    "train.lr_final": 1e-6,
    "train.betas": [0.9, 0.999],
    "train.seed": 0,
    "train.mixup": True,
    "train.rotation": True,
    "train.flip": True,
    "train.mixup_alpha": 0.2,
    "train.grad_clip": 1.0,  # <= 0 disables clipping
    "train.w_l1": 1.0,
    "train.w_ssim": 0.5,
    "train.w_perc": 0.1,
    "train.log_every": 100,
    "train.checkpoint_every": 500,
    "train.dtype": "float32",
    # synthetic data
    "data.n_low": 64,
    "data.n_back": 64,
    "data.seed": 0,
    "data.scenes": 8,
    "data.scene_size": 64,
    # brightness histogram analysis (heuristic constants)
    "imaging.bins": 64,
    "imaging.smooth_width": 5,
    "imaging.peak_threshold": 0.01,
    "imaging.low_boundary": 0.33,
    "imaging.high_boundary": 0.66,
}

# Keys that determine the model's parameter tree; checked on checkpoint load.
MODEL_PREFIXES = ("moe.", "dscam.", "restorer.", "ablation.")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, raw) -> object:
    """Coerce ``raw`` to the type of the default for ``key``."""
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        if isinstance(default, list):
            return [float(v) for v in raw]
        if isinstance(default, bool):
            return bool(raw)
        return type(default)(raw)
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(v) for v in raw.split(",") if v.strip()]
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def check_key(key: str) -> None:
    if key not in DEFAULTS:
        close = difflib.get_close_matches(key, DEFAULTS.keys(), n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")


class Config:
    """Immutable-by-convention mapping of dotted keys to typed values."""

    def __init__(self, values: dict | None = None):
        self._values = dict(DEFAULTS)
        for key, raw in (values or {}).items():
            check_key(key)
            self._values[key] = parse_value(key, raw)

    def __getitem__(self, key):
        check_key(key)
        return self._values[key]

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values

    def items(self):
        return self._values.items()

    def section(self, prefix: str) -> dict:
        prefix = prefix.rstrip(".") + "."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def with_overrides(self, overrides: dict) -> "Config":
        merged = dict(self._values)
        for key, raw in overrides.items():
            check_key(key)
            merged[key] = parse_value(key, raw)
        return Config(merged)

    def diff_keys(self, other: "Config", prefixes=MODEL_PREFIXES) -> list[str]:
        return sorted(
            k for k in self._values
            if k.startswith(prefixes) and self._values[k] != other._values[k]
        )

    def dumps(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self._values.items())

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Config":
        return cls(parse_lines(text))

    @classmethod
    def load(cls, path) -> "Config":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def parse_lines(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        check_key(key)
        out[key] = value
    return out


def parse_overrides(pairs) -> dict[str, str]:
    """Parse ``key=value`` strings from the command line."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        check_key(key)
        out[key] = value
    return out
