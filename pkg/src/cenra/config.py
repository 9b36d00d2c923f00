"""Run configuration and its flat ``key = value`` file format.

Files use ini-style sections (``[run]``, ``[env]``, ``[cra]``, ``[dqn]``,
``[sync]``); any key left out keeps its default. ``dump_config`` writes every
effective value, which is what the CLI stores as ``resolved-config``.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cra import CraConfig
from .envsuite import DEFAULT_MAX_STEPS, MAZE_DIR
from .errors import ConfigurationError
from .policy_agent import DqnConfig
from .sync import Synchronizer, WeightConfig


@dataclass
class EnvConfig:
    suite: str = str(MAZE_DIR)
    train_tasks: tuple[str, ...] = ("maze1", "maze2", "maze3", "maze4")
    heldout_task: str = "maze5"
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass
class RunConfig:
    seed: int = 0
    total_steps: int = 150_000
    eval_episodes: int = 100
    log_interval: int = 1000
    # one CRA update every this many outer iterations
    cra_update_period: int = 1
    weight_mode: str = "both"
    parallel_rollouts: bool = False


@dataclass
class TrainConfig:
    run: RunConfig = field(default_factory=RunConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    cra: CraConfig = field(default_factory=CraConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    sync: WeightConfig = field(default_factory=WeightConfig)

    def validate(self) -> None:
        r = self.run
        if r.total_steps < 1 or r.eval_episodes < 1 or r.log_interval < 1 or r.cra_update_period < 1:
            raise ConfigurationError("total_steps, eval_episodes, log_interval, cra_update_period must be >= 1")
        if r.weight_mode not in Synchronizer.MODES:
            raise ConfigurationError(f"weight_mode must be one of {Synchronizer.MODES}")
        if self.env.max_steps < 1 or not self.env.train_tasks:
            raise ConfigurationError("env needs max_steps >= 1 and at least one training task")
        self.cra.validate()
        self.dqn.validate()
        self.sync.validate()

    def replace(self, **sections: dict[str, Any]) -> "TrainConfig":
        """Copy with per-section overrides, e.g. ``replace(run={"seed": 3})``."""
        new = copy_config(self)
        for name, values in sections.items():
            section = getattr(new, name)
            for k, v in values.items():
                if not hasattr(section, k):
                    raise ConfigurationError(f"unknown key {name}.{k}")
                setattr(section, k, v)
        new.validate()
        return new


SECTIONS = ("run", "env", "cra", "dqn", "sync")


def copy_config(cfg: TrainConfig) -> TrainConfig:
    return TrainConfig(**{s: dataclasses.replace(getattr(cfg, s)) for s in SECTIONS})


def _parse_value(raw: str, default: Any, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if raw.lower().count("e") else int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.replace(",", " ").split()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"{where}: cannot parse {raw!r}") from exc


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: TrainConfig | None = None, source: str = "<config>") -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    cfg = copy_config(base or TrainConfig())
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigurationError(f"{source}: unknown section [{name}]")
        section = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigurationError(f"{source}: unknown key {name}.{key}")
            setattr(section, key, _parse_value(raw, getattr(section, key), f"{source}: {name}.{key}"))
    cfg.validate()
    return cfg


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(), base, str(path))
    suite = Path(cfg.env.suite)
    if not suite.is_absolute() and not suite.exists():
        # relative suite paths are taken relative to the config file
        cfg.env.suite = str((path.parent / suite).resolve())
    return cfg


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)
