"""Key/value run configuration (INI sections mirror the config dataclasses).

Unknown sections or keys are hard errors: few-shot experiments are too
sensitive for silently ignored typos.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .data import DataConfig
from .errors import ConfigError, InputError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunSettings:
    shots_per_class: int = 16
    test_size: int = 256
    template: str = "none"     # manual | soft | ptuning | none
    out_dir: str = "runs/out"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> None:
        m, d = self.model, self.data
        if (m.n_patches, m.patch_feature_dim, m.max_text_len, m.vocab_size) != \
                (d.n_patches, d.patch_feature_dim, d.max_text_len, d.vocab_size):
            raise ConfigError("model and data sections disagree on input shapes")
        if m.n_classes != d.n_classes:
            raise ConfigError(
                f"model.n_classes={m.n_classes} but task {d.task!r} has {d.n_classes}")
        if m.head == "lm_verbalizer" and self.run.template not in ("manual", "ptuning"):
            raise ConfigError("lm_verbalizer head requires a template containing [MASK]")
        if self.run.template not in ("manual", "soft", "ptuning", "none"):
            raise ConfigError(f"unknown template mode {self.run.template!r}")


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "run": RunSettings,
}


def _coerce(raw: str, typ) -> object:
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(raw)
    if typ is str:
        return raw
    # tuple[float, float] (optimizer betas)
    parts = [p.strip() for p in raw.split(",")]
    return tuple(float(p) for p in parts)


def parse_run_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # case-sensitive keys
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc

    kwargs: dict[str, object] = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict[str, object] = {}
        for key, raw in cp.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            typ = fields[key].type
            base = {"int": int, "float": float, "bool": bool, "str": str}.get(
                typ if isinstance(typ, str) else getattr(typ, "__name__", ""), None)
            try:
                values[key] = _coerce(raw, base)
            except ValueError as exc:
                raise ConfigError(
                    f"[{section}] {key}: cannot parse {raw!r}") from exc
        try:
            kwargs[section] = cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
        except (InputError, TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc

    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_run_config(text)


def dump_run_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for section, obj in (("model", cfg.model), ("train", cfg.train),
                         ("data", cfg.data), ("run", cfg.run)):
        cp[section] = {}
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, tuple):
                val = ", ".join(repr(v) for v in val)
            cp[section][f.name] = str(val)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
