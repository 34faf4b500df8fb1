"""Experiment configuration and its flat INI representation.

Sections mirror the pipeline stages (``dataset``, ``base``, ``teacher``,
``sft``, ``pass_rate``, ``grpo``, ``reward``, ``eval``, ``run``).  The run seed
keys every random stream; per-stage ``seed`` fields are overwritten by it.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..grpo import GrpoConfig
from ..policy import BaseConfig
from ..reward import RewardWeights
from ..sft import LengthParams, SftConfig


@dataclass(frozen=True)
class DataConfig:
    n_sft: int = 200
    n_rl: int = 1600
    n_eval: int = 400
    d: int = 8
    zero_signal_frac: float = 0.05
    prototype_spread: float = 0.3


@dataclass(frozen=True)
class PassRateConfig:
    attempts: int = 16
    temperature: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    k: int = 4
    temperature: float = 1.0
    greedy: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1


DESK_GRPO = GrpoConfig(learning_rate=10.0)
DESK_SFT = SftConfig(learning_rate=0.5)
DESK_BASE = BaseConfig(knowledge=1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DataConfig = field(default_factory=DataConfig)
    base: BaseConfig = DESK_BASE
    teacher: LengthParams = field(default_factory=LengthParams)
    sft: SftConfig = DESK_SFT
    pass_rate: PassRateConfig = field(default_factory=PassRateConfig)
    grpo: GrpoConfig = DESK_GRPO
    reward: RewardWeights = field(default_factory=RewardWeights)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def resolved(self) -> "ExperimentConfig":
        """Copy with the run seed and worker count pushed into stage configs."""
        return replace(self,
                       sft=replace(self.sft, seed=self.seed),
                       grpo=replace(self.grpo, seed=self.seed, workers=self.run.workers))

    def with_overrides(self, seed: int | None = None, workers: int | None = None
                       ) -> "ExperimentConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=seed)
        if workers is not None:
            run = replace(run, workers=workers)
        return replace(self, run=run)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for f in fields(self):
            section = getattr(self, f.name)
            cp[f.name] = {k.name: _to_text(getattr(section, k.name)) for k in fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self, exclude_workers: bool = True) -> str:
        cfg = self.with_overrides(workers=1) if exclude_workers else self
        return hashlib.sha256(cfg.to_ini().encode("utf-8")).hexdigest()[:16]


def _to_text(value: Any) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _convert(raw: str, like: Any, where: str) -> Any:
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"{where}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Build a config from INI text; unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from None
    cfg = ExperimentConfig()
    known = {f.name for f in fields(cfg)}
    updates = {}
    for name in cp.sections():
        if name not in known:
            raise ValueError(f"{source}: unknown section [{name}]")
        section = getattr(cfg, name)
        names = {f.name for f in fields(section)}
        values = {}
        for key, raw in cp[name].items():
            if key not in names:
                raise ValueError(f"{source}: unknown key {name}.{key}")
            values[key] = _convert(raw, getattr(section, key), f"{source}: {name}.{key}")
        updates[name] = replace(section, **values)
    return replace(cfg, **updates)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def as_dict(cfg: ExperimentConfig) -> dict[str, dict[str, Any]]:
    return {f.name: dataclasses.asdict(getattr(cfg, f.name)) for f in fields(cfg)}
