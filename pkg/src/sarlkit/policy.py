"""Two-hidden-layer tanh MLP with policy and value heads.

Parameters are plain float64 arrays in a fixed order:
``W1, b1, W2, b2, ..., W_pi, b_pi, W_v, b_v``. Gradients come from
:mod:`sarlkit.autodiff`; rollouts use the tape-free :func:`act_numpy`.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sarlkit import autodiff as ad
from sarlkit.grid import N_ACTIONS, N_CHANNELS

CHECKPOINT_MAGIC = b"SARLCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Arch:
    height: int
    width: int
    hidden: tuple[int, ...] = (64, 64)
    in_channels: int = N_CHANNELS
    n_actions: int = N_ACTIONS
    centered: bool = True

    @property
    def input_size(self) -> int:
        return self.in_channels * self.height * self.width

    def layer_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        fan_in = self.input_size
        for h in self.hidden:
            shapes += [(fan_in, h), (h,)]
            fan_in = h
        shapes += [(fan_in, self.n_actions), (self.n_actions,), (fan_in, 1), (1,)]
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.layer_shapes())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Arch:
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class PolicyParams:
    arch: Arch
    arrays: list[np.ndarray]
    version: int = field(default=0, compare=False)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def from_flat(cls, arch: Arch, flat: np.ndarray, version: int = 0) -> PolicyParams:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != arch.param_count():
            raise ValueError(f"expected {arch.param_count()} values, got {flat.size}")
        arrays, i = [], 0
        for shape in arch.layer_shapes():
            n = int(np.prod(shape))
            arrays.append(flat[i:i + n].reshape(shape).copy())
            i += n
        return cls(arch, arrays, version)

    def copy(self) -> PolicyParams:
        return PolicyParams(self.arch, [a.copy() for a in self.arrays], self.version)


def init_params(arch: Arch, seed: int) -> PolicyParams:
    """Scaled-uniform init: gain sqrt(2) hidden, 0.01 policy head, 1.0 value head; zero biases."""
    rng = np.random.default_rng(seed)
    shapes = arch.layer_shapes()
    n_hidden = len(arch.hidden)
    gains = [np.sqrt(2.0)] * n_hidden + [0.01, 1.0]
    arrays = []
    for layer, gain in enumerate(gains):
        w_shape, b_shape = shapes[2 * layer], shapes[2 * layer + 1]
        limit = gain * np.sqrt(6.0 / (w_shape[0] + w_shape[1]))
        arrays.append(rng.uniform(-limit, limit, size=w_shape))
        arrays.append(np.zeros(b_shape))
    return PolicyParams(arch, arrays)


def zero_params(arch: Arch) -> PolicyParams:
    return PolicyParams(arch, [np.zeros(s) for s in arch.layer_shapes()])


@dataclass
class ForwardOutput:
    logits: np.ndarray
    value: np.ndarray
    hidden: list[np.ndarray]

    @property
    def probs(self) -> np.ndarray:
        return softmax_np(self.logits)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _flatten_obs(arch: Arch, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    per_item = arch.input_size
    if obs.size % per_item or obs.shape[-3:] != (arch.in_channels, arch.height, arch.width):
        raise ValueError(
            f"observation shape {obs.shape} does not match arch "
            f"({arch.in_channels}, {arch.height}, {arch.width})"
        )
    return obs.reshape(-1, per_item)


def forward(params: PolicyParams, obs) -> ForwardOutput:
    """Batch forward pass; a single (C, H, W) observation gives a batch of one."""
    x = _flatten_obs(params.arch, obs)
    a = params.arrays
    hidden = []
    n = len(params.arch.hidden)
    for layer in range(n):
        x = np.tanh(x @ a[2 * layer] + a[2 * layer + 1])
        hidden.append(x)
    logits = x @ a[2 * n] + a[2 * n + 1]
    value = (x @ a[2 * n + 2] + a[2 * n + 3])[:, 0]
    return ForwardOutput(logits, value, hidden)


def forward_tensors(arch: Arch, tensors: list[ad.Tensor], obs) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable forward: returns (logits (N, A), values (N,))."""
    x = ad.as_tensor(_flatten_obs(arch, obs))
    n = len(arch.hidden)
    for layer in range(n):
        x = (x @ tensors[2 * layer] + tensors[2 * layer + 1]).tanh()
    logits = x @ tensors[2 * n] + tensors[2 * n + 1]
    value = (x @ tensors[2 * n + 2] + tensors[2 * n + 3]).reshape(-1)
    return logits, value


def gradient(params: PolicyParams, loss_fn) -> tuple[float, np.ndarray]:
    """Reverse-mode gradient of ``loss_fn(tensors) -> scalar Tensor``.

    Returns ``(loss, flat_gradient)`` in :meth:`PolicyParams.flat` order.
    """
    tensors = [ad.parameter(a) for a in params.arrays]
    loss = loss_fn(tensors)
    value = float(loss.value)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    if loss.requires_grad:
        loss.backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.value) for t in tensors]
    return value, np.concatenate([g.ravel() for g in grads])


class Adam:
    def __init__(self, size: int, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: PolicyParams, grad: np.ndarray) -> PolicyParams:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        flat = params.flat() - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return PolicyParams.from_flat(params.arch, flat, params.version + 1)


# Persistence

def _arch_bytes(arch: Arch) -> bytes:
    return json.dumps(arch.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def param_hash(params: PolicyParams) -> str:
    h = hashlib.sha256()
    h.update(_arch_bytes(params.arch))
    h.update(params.flat().astype("<f8").tobytes())
    return h.hexdigest()


def checkpoint_bytes(params: PolicyParams) -> bytes:
    arch = _arch_bytes(params.arch)
    flat = params.flat().astype("<f8")
    body = b"".join([
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(arch)),
        arch,
        struct.pack("<Q", flat.size),
        flat.tobytes(),
    ])
    return body + hashlib.sha256(body).digest()


def save_checkpoint(params: PolicyParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> PolicyParams:
    data = Path(path).read_bytes()
    header = len(CHECKPOINT_MAGIC) + 8
    if len(data) < header + 32 or data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, arch_len = struct.unpack_from("<II", body, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    arch = Arch.from_dict(json.loads(body[header:header + arch_len]))
    (count,) = struct.unpack_from("<Q", body, header + arch_len)
    start = header + arch_len + 8
    flat = np.frombuffer(body, dtype="<f8", count=count, offset=start)
    if start + 8 * count != len(body):
        raise CheckpointError(f"{path}: truncated parameter block")
    return PolicyParams.from_flat(arch, flat.astype(np.float64))
