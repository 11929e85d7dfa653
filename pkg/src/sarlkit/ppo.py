"""Rollout collection, GAE, and the clipped PPO loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sarlkit import autodiff as ad
from sarlkit.grid import Board, Env, TaskKind, observe
from sarlkit.policy import Adam, PolicyParams, forward, forward_tensors, gradient
from sarlkit.safety import ImpactTracker


@dataclass
class PpoConfig:
    gamma: float = 0.97
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_clip: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    entropy_clip: float = 1.0
    lr: float = 3e-4
    batch_size: int = 64
    epochs: int = 3
    steps_per_iter: int = 20
    n_envs: int = 16

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        for name in ("gae_lambda", "value_clip", "c1", "c2", "entropy_clip", "lr"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if min(self.batch_size, self.epochs, self.steps_per_iter, self.n_envs) < 1:
            raise ValueError("batch_size, epochs, steps_per_iter and n_envs must be >= 1")


@dataclass
class Transition:
    observation: np.ndarray
    action: int
    log_prob: float
    reward: float
    safety_reward: float
    value: float
    done: bool


@dataclass
class TransitionBatch:
    """Time-major rollout arrays of shape (T, E) plus flattened training targets.

    ``rewards`` holds the task reward r and ``safety_rewards`` the safety
    reward s; ``channel`` records which one drives the advantages.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    safety_rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    channel: str = "task"
    advantages: np.ndarray | None = None
    raw_advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.actions.size

    def transitions(self) -> list[Transition]:
        T, E = self.actions.shape
        return [
            Transition(
                self.obs[t, e], int(self.actions[t, e]), float(self.log_probs[t, e]),
                float(self.rewards[t, e]), float(self.safety_rewards[t, e]),
                float(self.values[t, e]), bool(self.dones[t, e]),
            )
            for t in range(T) for e in range(E)
        ]

    def flat_obs(self) -> np.ndarray:
        return self.obs.reshape(-1, *self.obs.shape[2:])


class TrainingEnv:
    """An environment slot that regenerates its level whenever an episode ends."""

    def __init__(self, level_source: Callable[[], Board], task: TaskKind, cap: int,
                 seeded: bool = True):
        self.level_source = level_source
        self.seeded = seeded
        self.env = Env(level_source(), task, cap)
        self.tracker = ImpactTracker(self.env.initial, seeded=seeded)
        self.episode_return = 0.0

    def reset(self):
        self.env.reset(self.level_source())
        self.tracker = ImpactTracker(self.env.initial, seeded=self.seeded)
        self.episode_return = 0.0


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling, one uniform per row."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))[:, None] * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=1), probs.shape[1] - 1)


def collect_rollout(
    params: PolicyParams,
    envs: list[TrainingEnv],
    n_steps: int,
    rng: np.random.Generator,
    reward_channel: str = "task",
    action_fn: Callable | None = None,
) -> TransitionBatch:
    """Step every env ``n_steps`` times with actions sampled from the policy.

    ``action_fn(probs, rng)`` overrides sampling, e.g. for scripted tests.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if reward_channel not in ("task", "safety"):
        raise ValueError(f"unknown reward channel {reward_channel!r}")
    arch = params.arch
    E = len(envs)
    obs_shape = (arch.in_channels, arch.height, arch.width)
    obs = np.zeros((n_steps, E, *obs_shape))
    actions = np.zeros((n_steps, E), dtype=np.int64)
    log_probs = np.zeros((n_steps, E))
    rewards = np.zeros((n_steps, E))
    safety = np.zeros((n_steps, E))
    values = np.zeros((n_steps, E))
    dones = np.zeros((n_steps, E), dtype=bool)
    batch_returns, batch_lengths = [], []

    for t in range(n_steps):
        for e, slot in enumerate(envs):
            obs[t, e] = observe(slot.env.board, centered=arch.centered)
        out = forward(params, obs[t])
        probs = out.probs
        act = action_fn(probs, rng) if action_fn is not None else sample_actions(probs, rng)
        actions[t] = act
        log_probs[t] = np.log(probs[np.arange(E), act])
        values[t] = out.value
        for e, slot in enumerate(envs):
            outcome = slot.env.step(int(act[e]))
            rewards[t, e] = outcome.reward
            safety[t, e] = slot.tracker.advance(slot.env.board)
            dones[t, e] = outcome.done
            slot.episode_return += outcome.reward
            if outcome.done:
                batch_returns.append(slot.episode_return)
                batch_lengths.append(slot.env.t)
                slot.reset()

    last = np.stack([observe(s.env.board, centered=arch.centered) for s in envs])
    last_values = forward(params, last).value
    return TransitionBatch(
        obs, actions, log_probs, rewards, safety, values, dones, last_values,
        channel=reward_channel, episode_returns=batch_returns, episode_lengths=batch_lengths,
    )


def training_rewards(batch: TransitionBatch, penalty_weight: float = 0.0) -> np.ndarray:
    """Rewards fed to the advantage estimator for the batch's channel.

    ``penalty_weight`` subtracts ``w * max(0, impact increase)`` from the
    task reward; the impact increase of a step is ``-s``.
    """
    if batch.channel == "safety":
        return batch.safety_rewards
    if penalty_weight:
        return batch.rewards - penalty_weight * np.maximum(0.0, -batch.safety_rewards)
    return batch.rewards


def gae(rewards, values, dones, last_values, gamma, lam):
    """Generalized advantage estimates over time-major (T, E) arrays."""
    rewards = np.asarray(rewards, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in reversed(range(T)):
        next_values = last_values if t == T - 1 else values[t + 1]
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + values


def normalize(x: np.ndarray) -> np.ndarray:
    if x.size < 2:
        return x - x.mean()
    return (x - x.mean()) / (x.std() + 1e-8)


def compute_advantages(
    batch: TransitionBatch, gamma: float, lam: float, penalty_weight: float = 0.0
) -> TransitionBatch:
    if len(batch) == 0:
        raise ValueError("empty batch")
    rewards = training_rewards(batch, penalty_weight)
    adv, ret = gae(rewards, batch.values, batch.dones, batch.last_values, gamma, lam)
    batch.raw_advantages = adv.ravel()
    batch.advantages = normalize(adv.ravel())
    batch.returns = ret.ravel()
    return batch


@dataclass
class MiniBatch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    old_values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.actions)


def minibatches(batch: TransitionBatch, size: int, rng: np.random.Generator):
    n = len(batch)
    obs = batch.flat_obs()
    cols = (
        batch.actions.ravel(), batch.log_probs.ravel(), batch.values.ravel(),
        batch.advantages, batch.returns,
    )
    order = rng.permutation(n)
    for start in range(0, n, size):
        idx = order[start:start + size]
        yield MiniBatch(obs[idx], *(c[idx] for c in cols))


@dataclass
class PpoLossBreakdown:
    total: float
    clip_term: float
    value_term: float
    entropy_term: float

    @property
    def objective(self) -> float:
        """The maximization-form value, ``-total``."""
        return -self.total


def ppo_loss_tensors(logits: ad.Tensor, values: ad.Tensor, mb: MiniBatch, cfg: PpoConfig):
    """Minimization-form PPO loss; returns (total tensor, breakdown)."""
    logp_all = ad.log_softmax(logits)
    new_logp = logp_all.take_last(mb.actions)
    ratio = (new_logp - mb.old_log_probs).exp()
    adv = mb.advantages
    surrogate = ad.minimum(ratio * adv, ratio.clip(1.0 - cfg.clip, 1.0 + cfg.clip) * adv)
    clip_term = surrogate.mean()

    v_clipped = mb.old_values + (values - mb.old_values).clip(-cfg.value_clip, cfg.value_clip)
    value_term = ad.maximum((values - mb.returns).square(), (v_clipped - mb.returns).square()).mean()

    entropy = -(logp_all.exp() * logp_all).sum(axis=-1)
    entropy_term = ad.minimum(entropy, cfg.entropy_clip).mean()

    total = -clip_term + cfg.c1 * value_term - cfg.c2 * entropy_term
    breakdown = PpoLossBreakdown(
        float(total.value), float(clip_term.value), float(value_term.value), float(entropy_term.value)
    )
    return total, breakdown


def ppo_loss(params: PolicyParams, mb: MiniBatch, cfg: PpoConfig) -> PpoLossBreakdown:
    tensors = [ad.Tensor(a, requires_grad=False) for a in params.arrays]
    logits, values = forward_tensors(params.arch, tensors, mb.obs)
    return ppo_loss_tensors(logits, values, mb, cfg)[1]


def ppo_gradient(params: PolicyParams, mb: MiniBatch, cfg: PpoConfig):
    holder = {}

    def loss_fn(tensors):
        logits, values = forward_tensors(params.arch, tensors, mb.obs)
        total, holder["breakdown"] = ppo_loss_tensors(logits, values, mb, cfg)
        return total

    _, grad = gradient(params, loss_fn)
    return holder["breakdown"], grad


class PpoLearner:
    """Parameters, optimizer and minibatch stream for one agent.

    ``on_step(params)``, if set, sees the parameters after every optimizer step.
    """

    def __init__(self, params: PolicyParams, cfg: PpoConfig, rng: np.random.Generator):
        self.params = params
        self.cfg = cfg
        self.rng = rng
        self.opt = Adam(params.flat().size, lr=cfg.lr)
        self.updates = 0
        self.on_step = None

    def update(self, batch: TransitionBatch, loss_and_grad=None):
        """Run the configured epochs of minibatch updates; returns the last loss breakdown.

        ``loss_and_grad(params, mb) -> (breakdown, grad)`` replaces the plain PPO loss.
        """
        loss_and_grad = loss_and_grad or (lambda p, mb: ppo_gradient(p, mb, self.cfg))
        last = None
        for _ in range(self.cfg.epochs):
            for mb in minibatches(batch, self.cfg.batch_size, self.rng):
                last, grad = loss_and_grad(self.params, mb)
                self.params = self.opt.step(self.params, grad)
                self.updates += 1
                if self.on_step is not None:
                    self.on_step(self.params)
        return last
