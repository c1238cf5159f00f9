"""SGD with momentum and weight decay, plus the step learning-rate schedule.

Update rule, per parameter tensor ``w`` with gradient ``g``::

    v <- momentum * v - lr * (g + weight_decay * w)
    w <- w + v
"""

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from decimal import Decimal

import numpy as np

from .colorspace import ColorSpace
from .errors import ConfigError, NonFiniteError, ShapeError
from .layers import LrnParams
from .model import NetworkSpec

NETWORK_PRESETS = ("full", "tiny")


@dataclass
class TrainConfig:
    batch_size: int = 115
    momentum: float = 0.9
    weight_decay: float = 0.0005
    base_lr: float = 0.01
    lr_step: int = 50_000
    lr_factor: float = 0.1
    max_iter: int = 200_000
    dropout_rate: float = 0.5
    seed: int = 0
    color_space: str = "rgb"
    network: str = "full"
    resize_size: int = 256
    checkpoint_every: int = 5_000
    log_every: int = 20
    lrn_override: bool = False
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    lrn_n: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.lr_step < 1:
            raise ConfigError(f"lr_step must be >= 1, got {self.lr_step}")
        if self.weight_decay < 0 or self.max_iter < 0:
            raise ConfigError("weight_decay and max_iter must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.network not in NETWORK_PRESETS:
            raise ConfigError(f"network must be one of {NETWORK_PRESETS}, got {self.network!r}")
        try:
            ColorSpace.parse(self.color_space)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        default_lrn = LrnParams()
        if not self.lrn_override and (
            (self.lrn_alpha, self.lrn_beta, self.lrn_n)
            != (default_lrn.alpha, default_lrn.beta, default_lrn.n)
        ):
            raise ConfigError("changing lrn_alpha/lrn_beta/lrn_n requires lrn_override = true")

    @property
    def space(self):
        return ColorSpace.parse(self.color_space)

    def network_spec(self, n_classes=8):
        lrn = LrnParams(self.lrn_alpha, self.lrn_beta, self.lrn_n)
        if self.network == "tiny":
            return NetworkSpec.tiny(lrn=lrn, n_classes=n_classes)
        return NetworkSpec(lrn=lrn, n_classes=n_classes)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # key=value serialization

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _parse_value(types[key], value, key)
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _parse_value(kind, value, key):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(value.replace("_", ""))
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return value


def lr_at(iteration, cfg):
    """Learning rate at ``iteration``: base_lr * lr_factor ** (iteration // lr_step)."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    # Decimal arithmetic on the written values, so 0.01 * 0.1**3 is exactly 1e-05.
    steps = iteration // cfg.lr_step
    return float(Decimal(repr(cfg.base_lr)) * Decimal(repr(cfg.lr_factor)) ** steps)


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    iteration: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()}, 0)


def sgd_step(state, params, grads, cfg, lr=None):
    """One in-place update of ``params`` and ``state``; returns both."""
    lr = lr_at(state.iteration, cfg) if lr is None else lr
    for name, w in params.items():
        g = grads[name]
        v = state.velocity.setdefault(name, np.zeros_like(w))
        if g.shape != w.shape or v.shape != w.shape:
            raise ShapeError(f"{name}: param {w.shape}, grad {g.shape}, velocity {v.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    for name, w in params.items():
        v = state.velocity[name]
        step = grads[name] + cfg.weight_decay * w
        v *= cfg.momentum
        v -= lr * step
        w += v
    state.iteration += 1
    return params, state
