"""Distances between action distributions and the safe-agent regularized objective.

The task agent's loss is ``ppo_total + beta * mean_state_distance`` where the
distance compares the task policy with a frozen snapshot of the safe agent on
the task agent's own states. The safe-agent side enters as constants, so no
gradient ever reaches its parameters through the regularizer.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from sarlkit import autodiff as ad
from sarlkit.grid import N_ACTIONS, Action
from sarlkit.policy import PolicyParams, forward, forward_tensors, gradient
from sarlkit.ppo import MiniBatch, PpoConfig, ppo_loss_tensors

PROB_FLOOR = 1e-12


class DistanceKind(enum.Enum):
    JENSEN_SHANNON = "js"
    WASSERSTEIN_SINKHORN = "sinkhorn"


def default_cost_matrix() -> np.ndarray:
    """0 on the diagonal, 0.5 between two moves or two toggles, 1.0 otherwise (noop included)."""
    group = {Action.NOOP: 0}
    for a in Action:
        if a != Action.NOOP:
            group[a] = 1 if a <= Action.MOVE_RIGHT else 2
    c = np.ones((N_ACTIONS, N_ACTIONS))
    for i in Action:
        for j in Action:
            if i == j:
                c[i, j] = 0.0
            elif group[i] == group[j] and group[i] != 0:
                c[i, j] = 0.5
    return c


@dataclass
class SarlConfig:
    beta: float = 0.01
    distance: DistanceKind = DistanceKind.JENSEN_SHANNON
    sinkhorn_epsilon: float = 0.05
    sinkhorn_iters: int = 50
    cost_matrix: np.ndarray = field(default_factory=default_cost_matrix)
    zero_shot: bool = False
    safe_checkpoint_path: str | None = None

    def validate(self) -> None:
        if not (self.beta >= 0 and np.isfinite(self.beta)):
            raise ValueError("beta must be a finite non-negative number")
        if self.sinkhorn_epsilon <= 0 or self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_epsilon must be > 0 and sinkhorn_iters >= 1")
        c = np.asarray(self.cost_matrix)
        if c.shape != (N_ACTIONS, N_ACTIONS):
            raise ValueError(f"cost_matrix must be {N_ACTIONS}x{N_ACTIONS}")
        if (c < 0).any() or not np.allclose(c, c.T) or np.any(np.diag(c) != 0):
            raise ValueError("cost_matrix must be nonnegative, symmetric, zero on the diagonal")
        if self.zero_shot and not self.safe_checkpoint_path:
            raise ValueError("zero_shot needs safe_checkpoint_path")


@dataclass
class DistanceResult:
    value: float
    per_state_values: np.ndarray


# Plain-array distances

def floor_probs(p, floor: float = PROB_FLOOR) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=np.float64), floor)
    return p / p.sum(axis=-1, keepdims=True)


def _kl_terms(p, q):
    out = np.zeros(np.broadcast(p, q).shape)
    mask = p > 0
    np.divide(p, q, out=out, where=mask)
    np.log(out, out=out, where=mask)
    return p * out


def kl_divergence(p, q) -> float:
    """KL(p || q); q is floored at 1e-12 and renormalized, 0 * log 0 counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    return float(_kl_terms(p, floor_probs(q)).sum(axis=-1))


def js_distance(p, q) -> float:
    """Mixture-form Jensen-Shannon divergence with both inputs floored; in [0, ln 2]."""
    p, q = floor_probs(p), floor_probs(q)
    m = 0.5 * (p + q)
    return float(0.5 * _kl_terms(p, m).sum(axis=-1) + 0.5 * _kl_terms(q, m).sum(axis=-1))


def _logsumexp(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return np.log(np.exp(x - m).sum(axis=axis)) + np.squeeze(m, axis=axis)


def sinkhorn_plan(p, q, cost_matrix, epsilon: float, iters: int, tol: float = 0.0):
    """Log-domain Sinkhorn scaling on plain arrays.

    Returns ``(plan, violations)`` where ``violations[k]`` is the row-marginal
    L1 error after iteration k. Stops early once the error drops below ``tol``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p, q = floor_probs(p), floor_probs(q)
    neg_c = -np.asarray(cost_matrix, dtype=np.float64) / epsilon
    log_p, log_q = np.log(p), np.log(q)
    g = np.zeros(len(q))
    violations = []
    for _ in range(iters):
        f = epsilon * (log_p - _logsumexp(g[None, :] / epsilon + neg_c, axis=1))
        g = epsilon * (log_q - _logsumexp(f[:, None] / epsilon + neg_c, axis=0))
        plan = np.exp((f[:, None] + g[None, :]) / epsilon + neg_c)
        violations.append(float(np.abs(plan.sum(axis=1) - p).sum()))
        if violations[-1] < tol:
            break
    return plan, violations


def sinkhorn_distance(p, q, cost_matrix, epsilon: float, iters: int, tol: float = 1e-13) -> float:
    """Entropic OT cost <P, C> between two action distributions.

    Warns when the row-marginal violation is still above 1e-6 after ``iters``.
    """
    plan, violations = sinkhorn_plan(p, q, cost_matrix, epsilon, iters, tol)
    if violations[-1] > 1e-6:
        warnings.warn(
            f"sinkhorn did not converge: marginal violation {violations[-1]:.2e}",
            RuntimeWarning, stacklevel=2,
        )
    return float((plan * np.asarray(cost_matrix)).sum())


# Differentiable forms, batched over states (rows)

def floor_tensor(p: ad.Tensor) -> ad.Tensor:
    p = ad.maximum(p, PROB_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


def js_tensor(p: ad.Tensor, q) -> ad.Tensor:
    p, q = floor_tensor(ad.as_tensor(p)), floor_tensor(ad.as_tensor(q))
    m = (p + q) * 0.5
    kl_pm = (p * (p.log() - m.log())).sum(axis=-1)
    kl_qm = (q * (q.log() - m.log())).sum(axis=-1)
    return (kl_pm + kl_qm) * 0.5


def sinkhorn_tensor(p: ad.Tensor, q, cost_matrix, epsilon: float, iters: int):
    """Per-row entropic OT cost and final row-marginal L1 violation.

    Dual potentials f, g are updated in the log domain; gradients flow
    through every iteration.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p, q = floor_tensor(ad.as_tensor(p)), floor_tensor(ad.as_tensor(q))
    C = np.asarray(cost_matrix, dtype=np.float64)
    n, m = C.shape
    N = p.shape[0]
    log_p, log_q = p.log(), q.log()
    neg_c = -C / epsilon
    g = ad.Tensor(np.zeros((N, m)), requires_grad=False)
    for _ in range(iters):
        f = (log_p - ad.logsumexp(g.reshape(N, 1, m) * (1.0 / epsilon) + neg_c, axis=2)) * epsilon
        g = (log_q - ad.logsumexp(f.reshape(N, n, 1) * (1.0 / epsilon) + neg_c, axis=1)) * epsilon
    plan = ((f.reshape(N, n, 1) + g.reshape(N, 1, m)) * (1.0 / epsilon) + neg_c).exp()
    cost = (plan * C).sum(axis=2).sum(axis=1)
    violation = np.abs(plan.value.sum(axis=2) - p.value).sum(axis=1)
    return cost, violation


def per_state_distance(p: ad.Tensor, q, cfg: SarlConfig) -> ad.Tensor:
    if cfg.distance == DistanceKind.JENSEN_SHANNON:
        return js_tensor(p, q)
    cost, _ = sinkhorn_tensor(p, q, cfg.cost_matrix, cfg.sinkhorn_epsilon, cfg.sinkhorn_iters)
    return cost


def safe_probs(safe_params: PolicyParams, obs) -> np.ndarray:
    """Safe-agent action probabilities as plain constants."""
    return forward(safe_params, obs).probs


def distance_tensor(task_logits: ad.Tensor, target_probs: np.ndarray, cfg: SarlConfig) -> ad.Tensor:
    return per_state_distance(ad.softmax(task_logits), target_probs, cfg)


def distance_loss(task_params: PolicyParams, safe_params: PolicyParams, obs, cfg: SarlConfig) -> DistanceResult:
    tensors = [ad.Tensor(a, requires_grad=False) for a in task_params.arrays]
    logits, _ = forward_tensors(task_params.arch, tensors, obs)
    per_state = distance_tensor(logits, safe_probs(safe_params, obs), cfg).value
    return DistanceResult(float(per_state.mean()), per_state)


def sarl_objective(ppo_total: float, dist: DistanceResult, beta: float) -> float:
    return ppo_total + beta * dist.value


def sarl_loss_tensor(arch, tensors, mb: MiniBatch, target_probs, ppo_cfg: PpoConfig, cfg: SarlConfig):
    """Differentiable ``ppo_total + beta * mean distance``; returns (total, breakdown, mean distance)."""
    logits, values = forward_tensors(arch, tensors, mb.obs)
    total, breakdown = ppo_loss_tensors(logits, values, mb, ppo_cfg)
    dist = distance_tensor(logits, target_probs, cfg).mean()
    if cfg.beta:
        total = total + cfg.beta * dist
    return total, breakdown, float(dist.value)


def sarl_gradient(task_params: PolicyParams, safe_params: PolicyParams, mb: MiniBatch,
                  ppo_cfg: PpoConfig, cfg: SarlConfig):
    """Loss breakdown (with ``distance`` and ``total`` updated) and flat gradient for theta."""
    target = safe_probs(safe_params, mb.obs)
    holder = {}

    def loss_fn(tensors):
        total, holder["breakdown"], holder["dist"] = sarl_loss_tensor(
            task_params.arch, tensors, mb, target, ppo_cfg, cfg
        )
        return total

    value, grad = gradient(task_params, loss_fn)
    bd = holder["breakdown"]
    bd.distance = holder["dist"]
    bd.total = value
    return bd, grad


def regularizer_gradient(task_params: PolicyParams, safe_params: PolicyParams, obs, cfg: SarlConfig):
    """Value and theta-gradient of ``beta * mean distance`` alone."""
    target = safe_probs(safe_params, obs)

    def loss_fn(tensors):
        logits, _ = forward_tensors(task_params.arch, tensors, obs)
        return distance_tensor(logits, target, cfg).mean() * cfg.beta

    return gradient(task_params, loss_fn)
