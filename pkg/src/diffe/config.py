"""Run configuration: one JSON document with sections data, pipeline, model,
train and eval.  Unknown sections or keys are rejected, values are type-checked
against the defaults, and ``--set section.key=value`` overrides are applied on
top before validation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .networks import ModelConfig
from .preprocessing import PipelineConfig
from .synth import SynthSpec
from .training import TrainConfig


@dataclass
class EvalConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])   # repetitions for ablate
    batch_size: int = 128

    def validate(self) -> None:
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("eval.seeds must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("eval.seeds must not repeat")
        if self.batch_size < 1:
            raise ConfigError("eval.batch_size must be >= 1")


SECTIONS = {"data": SynthSpec, "pipeline": PipelineConfig, "model": ModelConfig,
            "train": TrainConfig, "eval": EvalConfig}


@dataclass
class RunConfig:
    data: SynthSpec = field(default_factory=SynthSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _coerce(where: str, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return value


def _section(name: str, values: dict):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(f'{name}.{k}' for k in unknown)}")
    kwargs = {k: _coerce(f"{name}.{k}", getattr(defaults, k), v) for k, v in values.items()}
    return cls(**kwargs)


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    if path.count(".") != 1:
        raise ConfigError(f"override key {path!r} must be section.key")
    section, key = path.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def build_config(doc: dict | None = None, overrides=()) -> RunConfig:
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in (doc or {}).items()}
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {unknown}")
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in override {text!r}")
        doc.setdefault(section, {})[key] = value
    cfg = RunConfig(**{name: _section(name, doc.get(name, {})) for name in SECTIONS})
    cfg.validate()
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
    return build_config(doc, overrides)
