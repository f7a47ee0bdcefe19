"""Run configuration: file + flag overrides, validated before any work starts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .ambiguity import AmbiguityParams
from .explorer import PuctConfig
from .retrieval_index import DedupConfig, DedupConfigError

SCHEDULES = ("round_robin", "threads")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass
class PoolParams:
    min_occurrences: int = 3
    min_anchor: int = 5
    count: int = 3
    trials: int = 5


@dataclass
class RunConfig:
    scenario: str = "reference"
    workers: int = 1
    episodes: int = 1
    budget: int = 50
    seed: int = 0
    output: str = "runs/latest"
    schedule: str = "round_robin"
    puct: PuctConfig = field(default_factory=PuctConfig)
    ambiguity: AmbiguityParams = field(default_factory=AmbiguityParams)
    dedup: DedupConfig = field(default_factory=DedupConfig)
    pool: PoolParams = field(default_factory=PoolParams)

    def echo(self) -> dict:
        """The verbatim config embedded in every output artifact."""
        d = asdict(self)
        d.pop("output")
        return d

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        problems: list[str] = []
        data = dict(data or {})
        nested = {"puct": PuctConfig, "ambiguity": AmbiguityParams, "dedup": DedupConfig, "pool": PoolParams}
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                problems.append(f"unknown config key {key!r}")
        for key, typ in nested.items():
            sub = data.get(key) or {}
            if not isinstance(sub, dict):
                problems.append(f"{key} must be a mapping")
                continue
            sub_known = {f.name for f in fields(typ)}
            bad = [k for k in sub if k not in sub_known]
            if bad:
                problems.append(f"unknown {key} keys {bad}")
                continue
            try:
                kwargs[key] = typ(**sub)
            except (TypeError, ValueError, DedupConfigError) as exc:
                problems.append(f"{key}: {exc}")
        for key in ("scenario", "workers", "episodes", "budget", "seed", "output", "schedule"):
            if key in data:
                kwargs[key] = data[key]
        if problems:
            raise ConfigError(problems)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        problems = []
        if not isinstance(self.workers, int) or self.workers < 1:
            problems.append("workers must be a positive integer")
        if not isinstance(self.episodes, int) or self.episodes < 0:
            problems.append("episodes must be a non-negative integer")
        if not isinstance(self.budget, int) or self.budget < 0:
            problems.append("budget must be a non-negative integer")
        if not isinstance(self.seed, int):
            problems.append("seed must be an integer")
        if self.schedule not in SCHEDULES:
            problems.append(f"schedule must be one of {SCHEDULES}")
        if self.pool.count < 1 or self.pool.trials < 1:
            problems.append("pool count and trials must be >= 1")
        if problems:
            raise ConfigError(problems)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML/JSON config file and apply flag overrides (flags win).

    Overrides use dotted keys for nested sections, e.g. ``puct.c_puct``.
    """
    data: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        data = loaded or {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, leaf = key.partition(".")
        if leaf:
            data.setdefault(section, {})
            data[section] = {**(data[section] or {}), leaf: value}
        else:
            data[key] = value
    return RunConfig.from_mapping(data)
