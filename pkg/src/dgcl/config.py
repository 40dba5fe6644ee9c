"""Training configuration and its plain-text (INI-style) file format.

Keys are written with hyphens (``embed-dim``, ``beta-schedule``); sections
are for readability only and every key must be unique across sections::

    [data]
    dataset = synthetic

    [model]
    layers = 3
    embed-dim = 64

    [diffusion]
    diff-steps = 30
    beta-schedule = linear
"""

import configparser
import dataclasses
from dataclasses import dataclass, fields

from .diffusion import SCHEDULE_KINDS
from .errors import ConfigError

ABLATIONS = ("full", "no-diff", "no-neg", "uniform-noise", "vae")

# config-file key -> dataclass field, where they differ
_ALIASES = {"lambda": "lam"}


@dataclass
class TrainConfig:
    # data
    dataset: str = "synthetic"
    synth_users: int = 32
    synth_items: int = 32
    synth_blocks: int = 2
    synth_p: float = 0.5
    split_ratio: float = 0.8
    # encoder
    embed_dim: int = 64
    layers: int = 3
    include_layer_zero: bool = False
    neg_candidates: int = 8
    weight_decay: float = 1e-4
    init_std: float = 0.1
    # diffusion augmenter
    diff_steps: int = 30
    beta_min: float = 1e-5
    beta_max: float = 2e-2
    beta_schedule: str = "linear"
    heads: int = 4
    t_start: int = 0  # 0 means "use diff_steps"
    row_independent: bool = False
    diff_batch_size: int = 256
    diff_iters: int = 1
    diff_pretrain_epochs: int = 0
    vae_latent: int = 0  # 0 means "use embed_dim"
    uniform_eps: float = 0.1
    # contrastive
    tau: float = 0.2
    raw_dot: bool = False
    lam: float = 0.2
    # optimization
    lr: float = 1e-3
    diff_lr: float = 1e-3
    epochs: int = 500
    batch_size: int = 2048
    eval_every: int = 1
    patience: int = 10
    restore_best: bool = True
    cutoffs: tuple = (10, 20)
    ablation: str = "full"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.lr <= 0 or self.diff_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.beta_schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown beta schedule {self.beta_schedule!r}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.embed_dim % self.heads or self.embed_dim % 2:
            raise ConfigError(f"embed-dim {self.embed_dim} must be even and divisible by heads={self.heads}")
        if self.t_start < 0 or self.t_start > self.diff_steps:
            raise ConfigError(f"t-start must lie in 1..{self.diff_steps} (or 0 for the default)")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.neg_candidates < 1:
            raise ConfigError("epochs >= 0, batch-size >= 1 and neg-candidates >= 1 are required")

    @property
    def view_start(self):
        return self.t_start or self.diff_steps

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[key_name(f.name)] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data):
        cfg = cls()
        return apply_overrides(cfg, data)

    def diff(self, other):
        """Keys whose values differ from ``other``."""
        a, b = self.to_dict(), other.to_dict()
        return {k: a[k] for k in a if a[k] != b[k]}


def key_name(field_name):
    for k, v in _ALIASES.items():
        if v == field_name:
            return k
    return field_name.replace("_", "-")


def field_name(key):
    key = key.strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    return key.replace("-", "_")


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _coerce(name, value):
    f = _FIELDS[name]
    default = f.default if f.default is not dataclasses.MISSING else None
    if not isinstance(value, str):
        if isinstance(default, tuple):
            return tuple(int(v) for v in value)
        return value
    text = value.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {key_name(name)}: {value!r}") from None
    return text


def apply_overrides(cfg, mapping):
    changes = {}
    for key, value in mapping.items():
        name = field_name(key)
        if name not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        changes[name] = _coerce(name, value)
    return dataclasses.replace(cfg, **changes)


def parse_set_args(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in parser.sections():
            for key, value in parser.items(section):
                if key in values:
                    raise ConfigError(f"key {key!r} appears in more than one section")
                values[key] = value
    values.update(overrides or {})
    return apply_overrides(TrainConfig(), values)


def dump_config(cfg):
    """Render ``cfg`` in the file format understood by :func:`load_config`."""
    data = cfg.to_dict()
    lines = ["[dgcl]"]
    for k, v in data.items():
        if isinstance(v, list):
            v = " ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
