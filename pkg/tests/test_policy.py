import numpy as np
import pytest

from oracles import central_difference, mlp_oracle, relative_error
from sarlkit import autodiff as ad
from sarlkit.policy import (
    Adam, Arch, CheckpointError, PolicyParams, forward, forward_tensors, gradient, init_params,
    load_checkpoint, param_hash, save_checkpoint, zero_params,
)

ARCH = Arch(10, 10, (64, 64))
SMALL = Arch(2, 2, (3, 4), centered=False)
# sha256 over the arch JSON and 62474 little-endian zeros, computed once and pinned
ZERO_HASH_10x10 = "f38b27ddb644c6da52fb0b50b05583426785dc0f7cf72a7e0082e0810d19907a"


def test_param_count_closed_form():
    n = 9 * 10 * 10
    assert ARCH.param_count() == n * 64 + 64 + 64 * 64 + 64 + 64 * 9 + 9 + 64 + 1 == 62474
    assert init_params(ARCH, 0).flat().size == 62474


def test_init_deterministic_and_finite():
    a, b = init_params(ARCH, 3), init_params(ARCH, 3)
    assert np.array_equal(a.flat(), b.flat())
    assert np.isfinite(a.flat()).all()
    assert not np.array_equal(a.flat(), init_params(ARCH, 4).flat())


def test_init_scales():
    p = init_params(ARCH, 0)
    limit = np.sqrt(2) * np.sqrt(6 / (900 + 64))
    assert np.abs(p.arrays[0]).max() <= limit
    assert np.abs(p.arrays[0]).max() > 0.9 * limit
    assert np.abs(p.arrays[4]).max() <= 0.01 * np.sqrt(6 / (64 + 9))
    assert all(not b.any() for b in p.arrays[1::2])


def test_zero_params_uniform():
    out = forward(zero_params(ARCH), np.random.default_rng(0).random((5, 9, 10, 10)))
    assert np.allclose(out.probs, 1 / 9)
    assert np.array_equal(out.value, np.zeros(5))


def test_logit_shift_invariance():
    p = init_params(SMALL, 1)
    obs = np.random.default_rng(1).random((3, 9, 2, 2))
    base = forward(p, obs).probs
    shifted = p.copy()
    shifted.arrays[5] = shifted.arrays[5] + 7.25
    assert np.allclose(forward(shifted, obs).probs, base, atol=1e-15)


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(2)
    p = PolicyParams.from_flat(SMALL, rng.normal(scale=0.5, size=SMALL.param_count()))
    obs = rng.random((9, 2, 2))
    probs, value = mlp_oracle([a.tolist() for a in p.arrays], obs.ravel().tolist())
    out = forward(p, obs)
    assert np.allclose(out.probs[0], probs, atol=1e-13)
    assert out.value[0] == pytest.approx(value, abs=1e-13)
    assert out.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_forward_tensors_agree_with_numpy():
    p = init_params(SMALL, 5)
    obs = np.random.default_rng(5).random((4, 9, 2, 2))
    logits, values = forward_tensors(SMALL, [ad.as_tensor(a) for a in p.arrays], obs)
    out = forward(p, obs)
    assert np.allclose(logits.value, out.logits) and np.allclose(values.value, out.value)


def test_forward_rejects_bad_shape():
    with pytest.raises(ValueError):
        forward(zero_params(SMALL), np.zeros((9, 3, 3)))


def test_constant_loss_zero_gradient():
    p = init_params(SMALL, 0)
    value, grad = gradient(p, lambda ts: ad.as_tensor(3.0) + ts[0].sum() * 0.0)
    assert value == 3.0 and not grad.any()


def test_value_gradient_matches_fd():
    p = init_params(SMALL, 7)
    obs = np.random.default_rng(7).random((1, 9, 2, 2))

    def loss_fn(ts):
        return forward_tensors(SMALL, ts, obs)[1].sum()

    _, grad = gradient(p, loss_fn)
    fd = central_difference(lambda f: forward(PolicyParams.from_flat(SMALL, f), obs).value[0], p.flat())
    assert relative_error(grad, fd) < 1e-6
    # value-head weight gradient is the last hidden activation
    n_before = sum(a.size for a in p.arrays[:6])
    h = forward(p, obs).hidden[-1][0]
    assert np.allclose(grad[n_before:n_before + 4], h)


def test_gradient_rejects_nan():
    with pytest.raises(FloatingPointError):
        gradient(init_params(SMALL, 0), lambda ts: ts[0].sum() * np.nan)


def test_adam_first_step_is_lr_sign():
    p = init_params(SMALL, 0)
    g = np.random.default_rng(0).normal(size=p.flat().size)
    q = Adam(g.size, lr=1e-3).step(p, g)
    assert np.allclose(q.flat() - p.flat(), -1e-3 * np.sign(g), atol=1e-8)
    assert q.version == p.version + 1


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(ARCH, 9)
    save_checkpoint(p, tmp_path / "p.ckpt")
    q = load_checkpoint(tmp_path / "p.ckpt")
    assert q.arch == p.arch
    assert np.array_equal(q.flat(), p.flat())
    assert param_hash(q) == param_hash(p)


def test_checkpoint_byte_flip_detected(tmp_path):
    path = tmp_path / "p.ckpt"
    save_checkpoint(init_params(SMALL, 0), path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


@pytest.mark.parametrize("blob", [b"", b"NOTACKPT" + b"\0" * 60])
def test_checkpoint_garbage(tmp_path, blob):
    path = tmp_path / "x.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_zero_hash_pinned():
    assert param_hash(zero_params(ARCH)) == ZERO_HASH_10x10


def test_hash_sensitive_to_arch_and_values():
    a = zero_params(ARCH)
    b = zero_params(Arch(10, 10, (64, 64), centered=False))
    c = a.copy()
    c.arrays[0][0, 0] = 1e-300
    assert len({param_hash(a), param_hash(b), param_hash(c)}) == 3
