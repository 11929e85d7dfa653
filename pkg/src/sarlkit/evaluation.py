"""Fixed-bank policy evaluation and per-metric champion tracking."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from sarlkit.grid import Board, CellKind, Env, TaskKind, observe
from sarlkit.policy import PolicyParams, forward
from sarlkit.safety import DEFAULT_T_STAB, episodic_side_effect, inaction_rollout


class Metric(enum.Enum):
    LENGTH = "length"
    PERFORMANCE = "performance"
    SIDE_EFFECT = "side_effect"

    @property
    def higher_is_better(self) -> bool:
        return self is Metric.PERFORMANCE


@dataclass
class EpisodeResult:
    length: int
    performance_ratio: float
    side_effect: float
    task_reward: float
    possible_reward: float


@dataclass
class EvalScore:
    mean_episode_length: float
    mean_performance_ratio: float
    mean_side_effect: float
    stderr_episode_length: float
    stderr_performance_ratio: float
    stderr_side_effect: float
    env_steps_at_eval: int = 0
    episodes: list[EpisodeResult] = field(default_factory=list, repr=False)

    def metric(self, metric: Metric) -> float:
        return {
            Metric.LENGTH: self.mean_episode_length,
            Metric.PERFORMANCE: self.mean_performance_ratio,
            Metric.SIDE_EFFECT: self.mean_side_effect,
        }[metric]


def possible_reward(level: Board, task: TaskKind) -> float:
    if task == TaskKind.PRUNE:
        return float(level.count(CellKind.RED))
    return float(np.count_nonzero(level.goals))


def _is_still(level: Board) -> bool:
    return level.count(CellKind.SPAWNER) == 0


def run_episode(policy, level: Board, task: TaskKind, episode_cap: int,
                T_stab: int = DEFAULT_T_STAB) -> EpisodeResult:
    """Play one episode with ``policy(board) -> action`` and score it."""
    env = Env(level, task, episode_cap)
    task_reward = 0.0
    while not env.done:
        outcome = env.step(policy(env.board))
        task_reward += outcome.task_reward
    if _is_still(level):
        side = episodic_side_effect(env.board, None, env.t, T_stab, still_level=level)
    else:
        trace = inaction_rollout(level, env.t + T_stab)
        side = episodic_side_effect(env.board, trace, env.t, T_stab)
    possible = possible_reward(level, task)
    ratio = task_reward / possible if possible else 0.0
    return EpisodeResult(env.t, ratio, side, task_reward, possible)


def policy_fn(params: PolicyParams, greedy: bool = True, rng: np.random.Generator | None = None):
    centered = params.arch.centered

    def act(board: Board) -> int:
        probs = forward(params, observe(board, centered=centered)).probs[0]
        if greedy:
            return int(np.argmax(probs))
        return int(rng.choice(len(probs), p=probs))

    return act


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def summarize(episodes: list[EpisodeResult], env_steps: int = 0) -> EvalScore:
    length = np.array([e.length for e in episodes], dtype=np.float64)
    perf = np.array([e.performance_ratio for e in episodes])
    side = np.array([e.side_effect for e in episodes])
    return EvalScore(
        float(length.mean()), float(perf.mean()), float(side.mean()),
        _stderr(length), _stderr(perf), _stderr(side), env_steps, episodes,
    )


def evaluate(params: PolicyParams, test_bank: list[Board], episode_cap: int, task: TaskKind,
             T_stab: int = DEFAULT_T_STAB, greedy: bool = True, seed: int = 0,
             env_steps: int = 0) -> EvalScore:
    """One episode per bank level; greedy argmax actions unless ``greedy`` is False."""
    if not test_bank:
        raise ValueError("test bank is empty")
    rng = np.random.default_rng(seed)
    act = policy_fn(params, greedy, rng)
    episodes = [run_episode(act, level, task, episode_cap, T_stab) for level in test_bank]
    return summarize(episodes, env_steps)


@dataclass
class ChampionRecord:
    metric: Metric
    best_score: float | None = None
    best_params: PolicyParams | None = None
    step_found: int = -1
    best_eval: EvalScore | None = None

    def is_better(self, candidate: float) -> bool:
        if self.best_score is None:
            return True
        if self.metric.higher_is_better:
            return candidate > self.best_score
        return candidate < self.best_score


def champion_update(record: ChampionRecord, score: EvalScore,
                    params: PolicyParams | None = None) -> tuple[ChampionRecord, bool]:
    """Strict-improvement replacement; ties keep the incumbent. Returns (record, replaced)."""
    candidate = score.metric(record.metric)
    if not record.is_better(candidate):
        return record, False
    snapshot = params.copy() if params is not None else None
    return ChampionRecord(record.metric, candidate, snapshot, score.env_steps_at_eval, score), True


def evaluation_schedule(step_counts: Iterable[int], every_k_steps: int) -> Iterator[int]:
    """Yield the cumulative step counts at which a k-step boundary was crossed.

    ``step_counts`` is the running environment-step total after each training
    iteration; a count that crosses several boundaries at once triggers one
    evaluation.
    """
    if every_k_steps < 1:
        raise ValueError("every_k_steps must be >= 1")
    done = 0
    for steps in step_counts:
        if steps // every_k_steps > done:
            done = steps // every_k_steps
            yield steps
