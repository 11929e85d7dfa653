"""Training loops for plain PPO, the reward-penalty baseline, and safe-agent co-training.

One iteration is a task-agent phase (collect, then update theta with the PPO
loss plus ``beta`` times the distance to the safe agent) followed, for
co-training from scratch, by a safe-agent phase that trains psi with plain PPO
on the safety reward in its own environments. Zero-shot runs load psi frozen
and skip the second phase.
"""
from __future__ import annotations

import csv
import json
import logging
import pickle
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from sarlkit.config import Algorithm, RunConfig, derive_seeds, to_ini
from sarlkit.evaluation import ChampionRecord, EvalScore, Metric, champion_update, evaluate
from sarlkit.levelgen import build_test_bank, generate_level
from sarlkit.policy import PolicyParams, init_params, load_checkpoint, param_hash, save_checkpoint
from sarlkit.ppo import PpoLearner, TrainingEnv, collect_rollout, compute_advantages
from sarlkit.sarl import sarl_gradient

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "env_steps", "algorithm", "task", "variant",
    "mean_length", "mean_perf_ratio", "mean_side_effect",
    "stderr_length", "stderr_perf_ratio", "stderr_side_effect",
    "champion_length", "champion_performance", "champion_side_effect",
    "beta", "penalty_weight",
)


class NumericalAbort(RuntimeError):
    pass


class LevelSource:
    """Fresh training levels with seeds drawn uniformly from the training range."""

    def __init__(self, cfg: RunConfig, rng: np.random.Generator):
        self.spec = cfg.level_spec()
        self.lo, self.hi = cfg.train_seed_lo, cfg.train_seed_hi
        self.rng = rng

    def __call__(self):
        seed = int(self.rng.integers(self.lo, self.hi))
        return generate_level(replace(self.spec, seed=seed))


def make_envs(cfg: RunConfig, rng: np.random.Generator) -> list[TrainingEnv]:
    source = LevelSource(cfg, rng)
    return [
        TrainingEnv(source, cfg.task, cfg.episode_cap, seeded=cfg.seeded_counterfactual)
        for _ in range(cfg.ppo.n_envs)
    ]


def test_bank_for(cfg: RunConfig):
    spec = cfg.level_spec()
    return build_test_bank(
        cfg.task, cfg.dynamic, cfg.test_n, cfg.test_base_seed,
        width=spec.width, height=spec.height, n_pattern_cells=spec.n_pattern_cells,
        n_goal_markers=spec.n_goal_markers, n_spawners=spec.n_spawners,
    )


@dataclass
class IterationStats:
    env_steps: int
    task_loss: float | None = None
    distance: float | None = None
    safe_loss: float | None = None
    episode_returns: list[float] = field(default_factory=list)


class Trainer:
    def __init__(self, cfg: RunConfig, run_dir: str | Path | None = None):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.seeds = derive_seeds(cfg.master_seed)
        rng = {k: np.random.default_rng(v) for k, v in self.seeds.items()}
        arch = cfg.arch()

        self.task = PpoLearner(init_params(arch, self.seeds["init_task"]), cfg.ppo, rng["minibatch_task"])
        self.task_envs = make_envs(cfg, rng["levels_task"])
        self.task_rollout_rng = rng["rollout_task"]

        self.safe: PpoLearner | None = None
        self.safe_envs = None
        self.safe_rollout_rng = rng["rollout_safe"]
        if cfg.algorithm == Algorithm.SARL:
            if cfg.sarl.zero_shot:
                psi = load_checkpoint(cfg.sarl.safe_checkpoint_path)
                if psi.arch != arch:
                    raise ValueError(f"safe checkpoint arch {psi.arch} does not match run arch {arch}")
            else:
                psi = init_params(arch, self.seeds["init_safe"])
                self.safe_envs = make_envs(cfg, rng["levels_safe"])
            self.safe = PpoLearner(psi, cfg.ppo, rng["minibatch_safe"])

        self.penalty = cfg.penalty_weight if cfg.algorithm == Algorithm.REWARD_PENALTY else 0.0
        self.env_steps = 0
        self.iterations = 0
        self.evals_done = 0
        self.boundaries_seen = 0
        self.champions = {m: ChampionRecord(m) for m in Metric}
        self.rows: list[dict] = []
        self._bank = None

    # phases

    @property
    def test_bank(self):
        if self._bank is None:
            self._bank = test_bank_for(self.cfg)
        return self._bank

    def task_phase(self) -> IterationStats:
        cfg = self.cfg
        batch = collect_rollout(self.task.params, self.task_envs, cfg.ppo.steps_per_iter,
                                self.task_rollout_rng, "task")
        compute_advantages(batch, cfg.ppo.gamma, cfg.ppo.gae_lambda, self.penalty)
        if cfg.algorithm == Algorithm.SARL:
            psi = self.safe.params
            bd = self.task.update(batch, lambda p, mb: sarl_gradient(p, psi, mb, cfg.ppo, cfg.sarl))
        else:
            bd = self.task.update(batch)
        self.env_steps += len(batch)
        return IterationStats(
            self.env_steps, bd.total, getattr(bd, "distance", None),
            episode_returns=batch.episode_returns,
        )

    def safe_phase(self) -> float | None:
        if self.safe is None or self.cfg.sarl.zero_shot:
            return None
        cfg = self.cfg
        batch = collect_rollout(self.safe.params, self.safe_envs, cfg.ppo.steps_per_iter,
                                self.safe_rollout_rng, "safety")
        compute_advantages(batch, cfg.ppo.gamma, cfg.ppo.gae_lambda)
        return self.safe.update(batch).total

    def iteration(self) -> IterationStats:
        try:
            stats = self.task_phase()
            stats.safe_loss = self.safe_phase()
        except FloatingPointError as exc:
            self._dump_diagnostic(str(exc))
            raise NumericalAbort(str(exc)) from exc
        self.iterations += 1
        return stats

    # evaluation and persistence

    def evaluate_now(self) -> EvalScore:
        cfg = self.cfg
        score = evaluate(self.task.params, self.test_bank, cfg.episode_cap, cfg.task,
                         T_stab=cfg.T_stab, greedy=cfg.greedy_eval, seed=self.seeds["eval"],
                         env_steps=self.env_steps)
        flags = {}
        for metric, record in self.champions.items():
            record, replaced = champion_update(record, score, self.task.params)
            self.champions[metric] = record
            flags[metric] = replaced
            if replaced and self.run_dir is not None:
                save_checkpoint(record.best_params, self.run_dir / f"champion_{metric.value}.ckpt")
        row = {
            "env_steps": self.env_steps,
            "algorithm": cfg.algorithm.value,
            "task": cfg.task.value,
            "variant": cfg.variant,
            "mean_length": score.mean_episode_length,
            "mean_perf_ratio": score.mean_performance_ratio,
            "mean_side_effect": score.mean_side_effect,
            "stderr_length": score.stderr_episode_length,
            "stderr_perf_ratio": score.stderr_performance_ratio,
            "stderr_side_effect": score.stderr_side_effect,
            "champion_length": int(flags[Metric.LENGTH]),
            "champion_performance": int(flags[Metric.PERFORMANCE]),
            "champion_side_effect": int(flags[Metric.SIDE_EFFECT]),
            "beta": cfg.beta,
            "penalty_weight": self.penalty,
        }
        self.rows.append(row)
        self.evals_done += 1
        return score

    def _dump_diagnostic(self, message: str) -> None:
        if self.run_dir is None:
            return
        info = {
            "error": message,
            "env_steps": self.env_steps,
            "iterations": self.iterations,
            "task_param_hash": param_hash(self.task.params),
            "task_param_finite": bool(np.isfinite(self.task.params.flat()).all()),
        }
        (self.run_dir / "diagnostic.json").write_text(json.dumps(info, indent=2) + "\n")

    def run(self, progress=None, resume: bool = False) -> list[dict]:
        """Train to ``total_env_steps``, evaluating every ``eval_every_k`` steps."""
        cfg = self.cfg
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            if not resume:
                (self.run_dir / "config.ini").write_text(to_ini(cfg))
                _write_csv(self.run_dir / "metrics.csv", [])
                _write_timing(self.run_dir / "timing.csv", None, reset=True)
        start = time.perf_counter()
        while self.env_steps < cfg.total_env_steps:
            stats = self.iteration()
            if progress is not None:
                progress(stats)
            boundary = self.env_steps // cfg.eval_every_k
            if boundary > self.boundaries_seen:
                self.boundaries_seen = boundary
                score = self.evaluate_now()
                log.info(
                    "steps=%d length=%.2f perf=%.3f side=%.3f",
                    self.env_steps, score.mean_episode_length,
                    score.mean_performance_ratio, score.mean_side_effect,
                )
                if self.run_dir is not None:
                    self._persist(time.perf_counter() - start)
        return self.rows

    def _persist(self, wall_time: float) -> None:
        _write_csv(self.run_dir / "metrics.csv", self.rows)
        _write_timing(self.run_dir / "timing.csv", (self.env_steps, wall_time))
        save_checkpoint(self.task.params, self.run_dir / "task.ckpt")
        if self.safe is not None:
            save_checkpoint(self.safe.params, self.run_dir / "safe.ckpt")
        if self.cfg.checkpoint_every_eval:
            with open(self.run_dir / "state.pkl", "wb") as fh:
                pickle.dump(self, fh)

    @classmethod
    def resume(cls, run_dir) -> Trainer:
        run_dir = Path(run_dir)
        with open(run_dir / "state.pkl", "rb") as fh:
            trainer = pickle.load(fh)
        trainer.run_dir = run_dir
        _write_csv(run_dir / "metrics.csv", trainer.rows)
        return trainer


def _fmt_cell(v):
    return repr(v) if isinstance(v, float) else str(v)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([_fmt_cell(row[c]) for c in METRICS_COLUMNS])


def _write_timing(path: Path, entry, reset: bool = False) -> None:
    with open(path, "w" if reset else "a", newline="") as fh:
        if reset:
            fh.write("env_steps,wall_time\n")
        if entry is not None:
            fh.write(f"{entry[0]},{entry[1]:.3f}\n")


def train_sarl(cfg: RunConfig, run_dir=None, progress=None) -> Trainer:
    """Run a full training job and return the finished trainer."""
    trainer = Trainer(cfg, run_dir if run_dir is not None else cfg.run_dir)
    trainer.run(progress)
    return trainer


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
