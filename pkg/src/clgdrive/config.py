"""Run configuration stored as TOML.

Layout::

    provider = "synthetic"            # or "store:<path to .vlme file>"

    [simulator]   # scenario: traffic, budgets, map file ("" = shipped loop)
    [reward]      # paradigm, normalization bounds, synthesis constants, goal texts
    [trainer]     # SAC hyperparameters and network/feature sizes
    [buffer]      # replay capacity and labeling cadence
    [eval]        # test-route file, evaluation interval, step limit, seed

Unknown sections or keys are rejected. Missing keys take the defaults below.
``dumps`` writes every key in a fixed order, so parse -> dump -> parse is the
identity and dump output is stable byte for byte.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

import tomli
import tomli_w

from .embeddings import NEG_GOAL, POS_GOAL, StoreProvider, SyntheticProvider, store_read
from .replay import BufferConfig
from .reward_stack import VLM_RM_BASELINE, VLM_RM_TARGET, RewardStack
from .rewards import ParadigmConfig
from .sac import TrainerConfig
from .sim.world import ConfigurationError, ScenarioConfig
from .synthesis import DEFAULT_V_MAX, SynthesisConfig


class ConfigError(ValueError):
    """Invalid configuration content (CLI exit code 2)."""


class DataFileError(OSError):
    """A referenced file is missing or unreadable (CLI exit code 3)."""


@dataclass(frozen=True)
class SimulatorSection:
    n_traffic: int = 20
    episode_distance_budget: float = 3000.0
    stuck_speed_kmh: float = 1.0
    stuck_duration_s: float = 90.0
    deviation_limit: float = 3.0
    dt: float = 0.1
    seed: int = 0
    map: str = ""

    def scenario(self, seed: Optional[int] = None) -> ScenarioConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(ScenarioConfig)}
        if seed is not None:
            kw["seed"] = seed
        return ScenarioConfig(**kw)


@dataclass(frozen=True)
class RewardSection:
    mode: str = "clg"
    synthesis: bool = True
    alpha: float = 0.5
    beta: float = 0.5
    theta_min: float = -0.03
    theta_max: float = 0.0
    sr_temperature: float = 1.0
    sr_threshold: float = 0.8
    rho: float = 1.0
    v_max: float = DEFAULT_V_MAX
    center_limit: float = 3.0
    angle_limit: float = math.pi / 2
    stability_rate: float = 4.0
    stability_window: int = 10
    pos_goal: str = POS_GOAL
    neg_goal: str = NEG_GOAL
    rm_baseline: str = VLM_RM_BASELINE
    rm_target: str = VLM_RM_TARGET

    def paradigm(self) -> ParadigmConfig:
        return ParadigmConfig(self.mode, self.alpha, self.beta, self.theta_min, self.theta_max,
                              self.sr_temperature, self.sr_threshold)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig(self.v_max, self.rho, self.center_limit, self.angle_limit,
                               self.stability_rate, self.stability_window)


@dataclass(frozen=True)
class EvalSection:
    routes: str = ""
    interval: int = 5000
    max_steps: int = 3000
    seed: int = 1000


_SECTIONS = {
    "simulator": SimulatorSection,
    "reward": RewardSection,
    "trainer": TrainerConfig,
    "buffer": BufferConfig,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class RunConfig:
    provider: str = "synthetic"
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    reward: RewardSection = field(default_factory=RewardSection)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    base_dir: Optional[Path] = field(default=None, compare=False)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"provider": self.provider}
        for name in _SECTIONS:
            sec = {}
            for k, v in asdict(getattr(self, name)).items():
                sec[k] = list(v) if isinstance(v, tuple) else v
            out[name] = sec
        return out

    def make_provider(self):
        if self.provider == "synthetic":
            return SyntheticProvider()
        path = self.resolve(self.provider[len("store:"):])
        if not path.is_file():
            raise DataFileError(f"embedding store {path} does not exist")
        return store_read(path)

    def make_stack(self, provider=None) -> RewardStack:
        r = self.reward
        return RewardStack(provider if provider is not None else self.make_provider(), r.paradigm(),
                           r.synthesis_config(), r.synthesis, r.pos_goal, r.neg_goal,
                           r.rm_baseline, r.rm_target)


def _build_section(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kw = {}
    for k, v in raw.items():
        default = getattr(cls(), k)
        if isinstance(default, tuple):
            if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
                raise ConfigError(f"[{name}].{k} must be a list of integers")
            v = tuple(v)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"[{name}].{k} must be true or false")
        elif isinstance(default, int):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"[{name}].{k} must be an integer")
        elif isinstance(default, float):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"[{name}].{k} must be a number")
            v = float(v)
        elif isinstance(default, str):
            if not isinstance(v, str):
                raise ConfigError(f"[{name}].{k} must be a string")
        kw[k] = v
    try:
        return cls(**kw)
    except (ValueError, ConfigurationError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def from_dict(doc: Dict[str, Any], base_dir: Optional[Path] = None) -> RunConfig:
    unknown = sorted(set(doc) - set(_SECTIONS) - {"provider"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    provider = doc.get("provider", "synthetic")
    if not isinstance(provider, str) or not (provider == "synthetic" or
                                             (provider.startswith("store:") and len(provider) > 6)):
        raise ConfigError('provider must be "synthetic" or "store:<path>"')
    sections = {name: _build_section(name, cls, doc.get(name, {})) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(provider, base_dir=base_dir, **sections)
    for name, build in (("reward", cfg.reward.paradigm), ("reward", cfg.reward.synthesis_config),
                        ("simulator", cfg.simulator.scenario)):
        try:
            build()
        except (ValueError, ConfigurationError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    if cfg.reward.mode != "sparse_binary" and not (cfg.reward.pos_goal and cfg.reward.neg_goal):
        raise ConfigError(f"reward mode {cfg.reward.mode!r} needs both pos_goal and neg_goal")
    return cfg


def loads(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(doc, base_dir)


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def load(path: Union[str, Path], check_files: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFileError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = loads(text, path.parent)
    if check_files:
        check_referenced_files(cfg)
    return cfg


def check_referenced_files(cfg: RunConfig) -> None:
    refs = [cfg.simulator.map, cfg.eval.routes]
    if cfg.provider.startswith("store:"):
        refs.append(cfg.provider[len("store:"):])
    for rel in refs:
        if rel and not cfg.resolve(rel).is_file():
            raise DataFileError(f"referenced file {cfg.resolve(rel)} does not exist")


def save(cfg: RunConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def desk_config(mode: str = "clg", seed: int = 0) -> RunConfig:
    """Small setting used by the desk-scale learning check: empty loop, no BEV input."""
    base = RunConfig()
    return replace(
        base,
        simulator=replace(base.simulator, n_traffic=0, seed=seed),
        reward=replace(base.reward, mode=mode),
        trainer=replace(base.trainer, seed=seed, hidden_sizes=(64, 64), bev_size=0, batch_size=128,
                        init_temperature=0.05, total_steps=50_000),
    )
