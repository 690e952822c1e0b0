"""Experiment configuration: a flat key=value text format with section prefixes.

Example::

    run.data_dir=data
    run.out_dir=runs
    run.seeds=1,2,3
    model.hidden_size=128
    mle.learning_rate=0.001
    train.total_iterations=5000
    strategy.kind=stepgan_w

Sections map onto the dataclasses below: ``model.*`` -> ModelConfig, ``mle.*``
and ``train.*`` -> the two TrainingConfig phases, ``strategy.*`` ->
StrategyConfig, ``run.*`` -> top-level fields.  Unknown keys are rejected so
typos cannot silently change a run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .credit_assignment import StrategyConfig
from .models import ModelConfig
from .training import TrainingConfig


def _default_mle() -> TrainingConfig:
    return TrainingConfig(optimizer="rmsprop", learning_rate=1e-3, batch_size=64,
                          total_iterations=50_000, eval_interval=500, patience=3)


def _default_gan() -> TrainingConfig:
    return TrainingConfig(optimizer="rmsprop", learning_rate=1e-4, d_iterations=5,
                          g_iterations=1, batch_size=64, total_iterations=5000,
                          eval_interval=500)


@dataclass
class ExperimentConfig:
    data_dir: str = "data"
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    mle_checkpoint: str | None = None  # reuse a shared pretrained generator
    model: ModelConfig = field(default_factory=ModelConfig)
    mle: TrainingConfig = field(default_factory=_default_mle)
    gan: TrainingConfig = field(default_factory=_default_gan)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)

    def sections(self) -> dict[str, object]:
        return {"run": self, "model": self.model, "mle": self.mle,
                "train": self.gan, "strategy": self.strategy}


_RUN_KEYS = ("data_dir", "out_dir", "seeds", "mle_checkpoint")


def _coerce(annotation: str, raw: str):
    raw = raw.strip()
    if "none" == raw.lower() and "None" in annotation:
        return None
    if "tuple" in annotation:
        return tuple(int(tok) for tok in raw.split(",") if tok != "")
    if "bool" in annotation:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if "int" in annotation:
        return int(raw)
    if "float" in annotation:
        return float(raw)
    return raw


def _annotations(obj) -> dict[str, str]:
    return {f.name: str(f.type) for f in dataclasses.fields(obj)}


def apply_setting(cfg: ExperimentConfig, key: str, value: str) -> None:
    if "." not in key:
        raise ValueError(f"config key {key!r} must look like section.name")
    section_name, name = key.split(".", 1)
    sections = cfg.sections()
    if section_name not in sections:
        raise ValueError(f"unknown config section {section_name!r}")
    target = sections[section_name]
    if section_name == "run" and name not in _RUN_KEYS:
        raise ValueError(f"unknown run key {name!r}")
    annotations = _annotations(target)
    if name not in annotations:
        raise ValueError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(annotations[name], value))


def parse_config_text(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        apply_setting(cfg, key.strip(), value)
    # re-run dataclass validation on the mutated sections
    for section in (cfg.mle, cfg.gan, cfg.strategy):
        section.__post_init__()
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section_name, target in cfg.sections().items():
        names = _RUN_KEYS if section_name == "run" else [f.name for f in dataclasses.fields(target)]
        for name in names:
            lines.append(f"{section_name}.{name}={_format_value(getattr(target, name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
