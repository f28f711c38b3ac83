"""Run configuration: one tree of dataclass sections, merged file < env < flag.

File format is TOML::

    seed = 3
    [loss]
    tau = 0.5
    lambda = 2.0

Environment overrides use ``TACO_SEED``, ``TACO_DETERMINISTIC``, ``TACO_OUT``
and ``TACO_<SECTION>__<KEY>`` (e.g. ``TACO_LOSS__TAU=0.5``). Values are parsed
as TOML literals, falling back to plain strings.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import tomli

from .augment import AugmentConfig
from .datagen import DatagenConfig
from .errors import ConfigError
from .maem import MaemConfig
from .model import ModelConfig
from .pipeline import TrainConfig
from .scoring import LossConfig

SECTIONS = {
    "datagen": DatagenConfig,
    "augment": AugmentConfig,
    "maem": MaemConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "pipeline": TrainConfig,
}
ROOT_KEYS = {"seed": int, "deterministic": bool, "out": str}
# config-file spelling -> dataclass field
ALIASES = {("loss", "lambda"): "lam"}
ENV_PREFIX = "TACO_"
VARIABLE_LENGTH = {"model.widths", "model.depths"}


def _field_name(section: str, key: str) -> str:
    return ALIASES.get((section, key), key)


def _key_name(section: str, fname: str) -> str:
    for (s, k), f in ALIASES.items():
        if s == section and f == fname:
            return k
    return fname


def _coerce(value: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        if len(default) and len(value) != len(default) and where not in VARIABLE_LENGTH:
            raise ConfigError(f"{where} must have {len(default)} elements")
        inner = default[0] if default else None
        return tuple(_coerce(v, inner, where) if inner is not None else v for v in value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return list(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    # Optional[str] fields default to None
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


def parse_literal(text: str) -> Any:
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    out: str = "taco_out"
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    maem: MaemConfig = field(default_factory=MaemConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    pipeline: TrainConfig = field(default_factory=TrainConfig)
    sources: dict = field(default_factory=dict, compare=False, repr=False)

    def set(self, dotted: str, value: Any, source: str = "flag"):
        """Set ``section.key`` (or a root key) with type checking."""
        parts = dotted.split(".")
        if len(parts) == 1:
            key = parts[0]
            if key not in ROOT_KEYS:
                raise ConfigError(f"unknown config key {dotted!r}")
            setattr(self, key, _coerce(value, getattr(RunConfig, key), dotted))
        elif len(parts) == 2:
            section, key = parts
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            obj = getattr(self, section)
            fname = _field_name(section, key)
            names = {f.name for f in dataclasses.fields(obj)}
            if fname not in names:
                raise ConfigError(f"unknown config key {dotted!r}")
            default = getattr(SECTIONS[section](), fname)
            setattr(obj, fname, _coerce(value, default, dotted))
        else:
            raise ConfigError(f"config keys are at most two levels deep: {dotted!r}")
        self.sources[dotted] = source

    def update(self, tree: Mapping, source: str):
        for key, value in tree.items():
            if isinstance(value, Mapping):
                if key not in SECTIONS:
                    raise ConfigError(f"unknown config section {key!r}")
                for sub, v in value.items():
                    self.set(f"{key}.{sub}", v, source)
            else:
                self.set(key, value, source)

    def to_dict(self) -> dict:
        tree = {k: getattr(self, k) for k in ROOT_KEYS}
        for section in SECTIONS:
            obj = getattr(self, section)
            tree[section] = {_key_name(section, f.name): _plain(getattr(obj, f.name))
                             for f in dataclasses.fields(obj)}
        return tree

    def validate(self) -> "RunConfig":
        self.datagen.validate()
        self.augment.validate()
        self.model.validate(self.maem, self.augment.canvas)
        self.loss.validate()
        self.pipeline.validate(self.loss)
        return self

    def to_toml(self) -> str:
        tree = self.to_dict()
        lines = [f"{k} = {json.dumps(tree[k])}" for k in ROOT_KEYS]
        for section in SECTIONS:
            lines.append(f"\n[{section}]")
            for k, v in tree[section].items():
                if v is None:
                    lines.append(f"# {k} = (unset)")
                else:
                    lines.append(f"{k} = {json.dumps(v)}")
        return "\n".join(lines) + "\n"


def _plain(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        # a run.json record carries the resolved tree under "config"
        return data["config"] if "config" in data and "command" in data else data
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        dotted = rest.replace("__", ".")
        if "." not in dotted and dotted not in ROOT_KEYS:
            continue  # unrelated TACO_* variable
        out[dotted] = parse_literal(raw)
    return out


def resolve_config(config_path=None, flags: Optional[Mapping[str, Any]] = None,
                   environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the config file, then environment, then flags."""
    cfg = RunConfig()
    for f in dataclasses.fields(cfg):
        if f.name in ROOT_KEYS:
            cfg.sources[f.name] = "default"
    if config_path:
        cfg.update(read_config_file(config_path), "file")
    for dotted, value in env_overrides(environ).items():
        cfg.set(dotted, value, "env")
    for dotted, value in (flags or {}).items():
        if value is not None:
            cfg.set(dotted, value, "flag")
    return cfg.validate()
