"""Run configuration: INI-style sections, defaults, validation, and seed derivation."""
from __future__ import annotations

import configparser
import enum
import io
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from sarlkit.grid import TaskKind
from sarlkit.levelgen import LevelSpec
from sarlkit.policy import Arch
from sarlkit.ppo import PpoConfig
from sarlkit.sarl import DistanceKind, SarlConfig, default_cost_matrix

log = logging.getLogger(__name__)


class Algorithm(enum.Enum):
    PLAIN_PPO = "ppo"
    REWARD_PENALTY = "penalty"
    SARL = "sarl"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: TaskKind = TaskKind.PRUNE
    dynamic: bool = False
    algorithm: Algorithm = Algorithm.SARL
    penalty_weight: float | None = None
    master_seed: int = 0
    total_env_steps: int = 200_000
    eval_every_k: int = 20_000
    episode_cap: int = 100
    T_stab: int = 20
    greedy_eval: bool = True
    seeded_counterfactual: bool = True
    checkpoint_every_eval: bool = True
    run_dir: str = "runs/default"

    width: int = 10
    height: int = 10
    n_pattern_cells: int = 8
    n_goal_markers: int = 2
    n_spawners: int = 1
    train_seed_lo: int = 0
    train_seed_hi: int = 10_000
    test_n: int = 100
    test_base_seed: int = 10_000

    hidden: tuple[int, ...] = (64, 64)
    centered: bool = True

    ppo: PpoConfig = field(default_factory=PpoConfig)
    sarl: SarlConfig | None = field(default_factory=SarlConfig)

    def level_spec(self, seed: int = 0) -> LevelSpec:
        return LevelSpec(
            task=self.task, dynamic=self.dynamic, width=self.width, height=self.height,
            seed=seed, n_pattern_cells=self.n_pattern_cells,
            n_goal_markers=self.n_goal_markers,
            n_spawners=self.n_spawners if self.dynamic else 0,
        )

    def arch(self) -> Arch:
        return Arch(self.height, self.width, tuple(self.hidden), centered=self.centered)

    @property
    def variant(self) -> str:
        return "dynamic" if self.dynamic else "still"

    @property
    def beta(self) -> float:
        if self.algorithm == Algorithm.SARL and self.sarl is not None:
            return self.sarl.beta
        return 0.0

    def validate(self) -> None:
        try:
            self.ppo.validate()
            self.level_spec().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.algorithm == Algorithm.REWARD_PENALTY:
            if self.penalty_weight is None:
                raise ConfigError("algorithm 'penalty' requires penalty_weight")
        elif self.penalty_weight is not None:
            log.warning("penalty_weight is ignored for algorithm %s", self.algorithm.value)
        if self.algorithm == Algorithm.SARL:
            if self.sarl is None:
                raise ConfigError("algorithm 'sarl' requires a [sarl] section")
            try:
                self.sarl.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.train_seed_lo >= self.train_seed_hi:
            raise ConfigError("empty training seed range")
        test = range(self.test_base_seed, self.test_base_seed + self.test_n)
        if test.start < self.train_seed_hi and self.train_seed_lo < test.stop:
            raise ConfigError("training and test seed ranges overlap")
        if min(self.total_env_steps, self.eval_every_k, self.episode_cap, self.test_n, self.T_stab) < 1:
            raise ConfigError("step counts, cap, T_stab and test_n must be positive")


# Seed derivation

_MASK64 = (1 << 64) - 1
SEED_COMPONENTS = (
    "levels_task", "levels_safe", "init_task", "init_safe",
    "rollout_task", "rollout_safe", "minibatch_task", "minibatch_safe", "eval",
)


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seeds(master_seed: int) -> dict[str, int]:
    """Expand the master seed into one 64-bit seed per component, in ``SEED_COMPONENTS`` order."""
    state = master_seed & _MASK64
    seeds = {}
    for name in SEED_COMPONENTS:
        state, seeds[name] = splitmix64(state)
    return seeds


# INI round-trip

_RUN_KEYS = (
    "task", "dynamic", "algorithm", "penalty_weight", "master_seed", "total_env_steps",
    "eval_every_k", "episode_cap", "T_stab", "greedy_eval", "seeded_counterfactual",
    "checkpoint_every_eval", "run_dir",
)
_LEVEL_KEYS = (
    "width", "height", "n_pattern_cells", "n_goal_markers", "n_spawners",
    "train_seed_lo", "train_seed_hi", "test_n", "test_base_seed",
)
_POLICY_KEYS = ("hidden", "centered")


def _fmt(value) -> str:
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _convert(name: str, text: str, current):
    text = text.strip()
    try:
        if name == "task":
            return TaskKind(text)
        if name == "algorithm":
            return Algorithm(text)
        if name == "distance":
            return DistanceKind(text)
        if name in ("penalty_weight", "safe_checkpoint_path"):
            if text.lower() == "none" or not text:
                return None
            return float(text) if name == "penalty_weight" else text
        if name == "hidden":
            return tuple(int(x) for x in text.split(",") if x.strip())
        if name == "cost_matrix":
            if text.lower() == "default":
                return default_cost_matrix()
            vals = np.array([float(x) for x in text.replace(";", ",").split(",") if x.strip()])
            side = int(round(np.sqrt(vals.size)))
            if side * side != vals.size:
                raise ConfigError("cost_matrix must have a square number of entries")
            return vals.reshape(side, side)
        if isinstance(current, bool):
            return _parse_bool(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        return text
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def to_ini(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {k: _fmt(getattr(cfg, k)) for k in _RUN_KEYS}
    cp["levels"] = {k: _fmt(getattr(cfg, k)) for k in _LEVEL_KEYS}
    cp["policy"] = {k: _fmt(getattr(cfg, k)) for k in _POLICY_KEYS}
    cp["ppo"] = {f.name: _fmt(getattr(cfg.ppo, f.name)) for f in fields(PpoConfig)}
    if cfg.sarl is not None:
        section = {}
        for f in fields(SarlConfig):
            v = getattr(cfg.sarl, f.name)
            if f.name == "cost_matrix":
                section[f.name] = ",".join(repr(float(x)) for x in np.asarray(v).ravel())
            else:
                section[f.name] = _fmt(v)
        cp["sarl"] = section
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _apply(obj, section, keys=None):
    updates = {}
    names = {f.name: f for f in fields(obj)}
    for key, text in section.items():
        if key not in names or (keys is not None and key not in keys):
            raise ConfigError(f"unknown key {key!r} in section [{section.name}]")
        updates[key] = _convert(key, text, getattr(obj, key))
    return replace(obj, **updates)


def from_ini(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig()
    known = {"run": _RUN_KEYS, "levels": _LEVEL_KEYS, "policy": _POLICY_KEYS}
    for name in cp.sections():
        if name in known:
            cfg = _apply(cfg, cp[name], known[name])
        elif name == "ppo":
            cfg = replace(cfg, ppo=_apply(cfg.ppo, cp[name]))
        elif name == "sarl":
            cfg = replace(cfg, sarl=_apply(cfg.sarl or SarlConfig(), cp[name]))
        else:
            raise ConfigError(f"unknown section [{name}]")
    if not cp.has_section("sarl") and cfg.algorithm != Algorithm.SARL:
        cfg = replace(cfg, sarl=None)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_ini(text)


def configs_equal(a: RunConfig, b: RunConfig) -> bool:
    return to_ini(a) == to_ini(b)
