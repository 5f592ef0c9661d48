"""Experiment configuration: typed INI files over the two config dataclasses.

A config file has three sections, each mapping directly onto dataclass
fields; unknown sections or keys are rejected rather than ignored so a
typo cannot silently fall back to a default::

    [stream]
    n_tasks = 4
    noise_scale = 0.35

    [train]
    e_max = 30
    hidden = 64,64

    [experiment]
    strategies = naive,frozen,refresh,krkc
    seeds = 0,1,2,3,4
    out_dir = results

Every field left out keeps its default, and writing a config back out
re-parses to an identical configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from typing import get_type_hints

from .baselines import STRATEGY_NAMES
from .data import StreamConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig
    train: TrainConfig
    strategies: tuple[str, ...] = ("naive", "frozen", "refresh", "krkc")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "results"

    def validate(self) -> None:
        self.stream.validate()
        self.train.validate()
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        for name in self.strategies:
            if name not in STRATEGY_NAMES:
                raise ValueError(
                    f"unknown strategy {name!r}; known strategies are {sorted(STRATEGY_NAMES)}"
                )
        if not self.seeds:
            raise ValueError("at least one seed is required")


def default_config() -> ExperimentConfig:
    return ExperimentConfig(stream=StreamConfig(), train=TrainConfig())


def _parse_value(raw: str, annotation) -> object:
    if annotation is int:
        return int(raw)
    if annotation is float:
        return float(raw)
    if annotation is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if annotation is str:
        return raw.strip()
    origin = getattr(annotation, "__origin__", None)
    if origin is tuple:
        item_type = annotation.__args__[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_parse_value(p, item_type) for p in parts)
    raise ValueError(f"unsupported config field type {annotation!r}")


def _section_to_dataclass(parser: configparser.ConfigParser, section: str, cls):
    hints = get_type_hints(cls)
    known = {f.name: hints[f.name] for f in fields(cls)}
    values = {}
    if parser.has_section(section):
        for key, raw in parser.items(section):
            if key not in known:
                raise ValueError(
                    f"unknown key {key!r} in section [{section}]; "
                    f"known keys: {sorted(known)}"
                )
            try:
                values[key] = _parse_value(raw, known[key])
            except ValueError as exc:
                raise ValueError(f"bad value for [{section}] {key}: {exc}") from exc
    return cls(**values)


def load_config(path: str) -> ExperimentConfig:
    """Parse an INI experiment file; unknown sections and keys are errors."""
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    allowed = {"stream", "train", "experiment"}
    extra = set(parser.sections()) - allowed
    if extra:
        raise ValueError(f"unknown config sections {sorted(extra)}; allowed: {sorted(allowed)}")
    stream = _section_to_dataclass(parser, "stream", StreamConfig)
    train = _section_to_dataclass(parser, "train", TrainConfig)
    exp_values = {}
    if parser.has_section("experiment"):
        hints = {"strategies": tuple[str, ...], "seeds": tuple[int, ...], "out_dir": str}
        for key, raw in parser.items("experiment"):
            if key not in hints:
                raise ValueError(
                    f"unknown key {key!r} in section [experiment]; known keys: {sorted(hints)}"
                )
            exp_values[key] = _parse_value(raw, hints[key])
    config = ExperimentConfig(stream=stream, train=train, **exp_values)
    config.validate()
    return config


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(config: ExperimentConfig, path: str) -> None:
    """Write every field explicitly; the result re-parses identically."""
    lines: list[str] = []
    for section, payload in (
        ("stream", asdict(config.stream)),
        ("train", asdict(config.train)),
        ("experiment", {
            "strategies": config.strategies,
            "seeds": config.seeds,
            "out_dir": config.out_dir,
        }),
    ):
        lines.append(f"[{section}]")
        for key, value in payload.items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def config_echo(config: ExperimentConfig, strategy: str, seed: int) -> dict:
    """The provenance block embedded into each run's metrics payload."""
    return {
        "stream": asdict(replace(config.stream, seed=seed)),
        "train": asdict(config.train),
        "strategy": strategy,
        "seed": seed,
    }
