"""Loss definitions: L1, gradient penalty, critic/generator objectives."""

import numpy as np
import pytest

from ctdenoise import tensor as T
from ctdenoise.errors import ConfigError
from ctdenoise.losses import (BatchSample, LossConfig, critic_loss,
                              critic_loss_parts, generator_adversarial_loss,
                              gradient_penalty, interpolate, joint_generator_loss,
                              l1_loss)
from ctdenoise.models import GeneratorConfig, build_generator, generator_forward
from ctdenoise.rng import RngStream

from helpers import numeric_grad, rel_err

rng = np.random.default_rng(31)


def unit_linear_critic(dim, scale=1.0, seed=0):
    """D(v) = scale * <w, v> with ||w|| = 1; returns (apply, w tensor)."""
    r = np.random.default_rng(seed)
    w = r.standard_normal(dim)
    w = w / np.linalg.norm(w) * scale
    wt = T.Tensor(w.reshape(-1, 1), requires_grad=True)

    def apply(v):
        flat = T.reshape(v, (v.shape[0], int(np.prod(v.shape[1:]))))
        return T.reshape(T.matmul(flat, wt), (v.shape[0],))

    return apply, wt


# ---------------------------------------------------------------------------
# L1

def test_l1_zero_when_equal():
    x = rng.random((2, 1, 4, 4))
    assert l1_loss(T.constant(x), T.constant(x.copy())).data.item() == 0.0


def test_l1_constant_difference():
    y = rng.random((2, 1, 4, 4))
    gx = y + 0.5
    assert np.isclose(l1_loss(T.constant(gx), T.constant(y)).data.item(), 0.5)


def test_l1_matches_scalar_loop_oracle():
    gx = rng.random((2, 1, 4, 4))
    y = rng.random((2, 1, 4, 4))
    acc, n = 0.0, 0
    for b in range(2):
        for i in range(4):
            for j in range(4):
                acc += abs(gx[b, 0, i, j] - y[b, 0, i, j])
                n += 1
    assert np.isclose(l1_loss(T.constant(gx), T.constant(y)).data.item(), acc / n,
                      atol=1e-14)


def test_l1_shape_mismatch():
    with pytest.raises(ConfigError):
        l1_loss(T.constant(np.zeros((1, 1, 2, 2))), T.constant(np.zeros((1, 1, 3, 3))))


def test_l1_symmetry_and_triangle():
    a, b, c = (rng.random((1, 1, 5, 5)) for _ in range(3))
    lab = l1_loss(T.constant(a), T.constant(b)).data.item()
    lba = l1_loss(T.constant(b), T.constant(a)).data.item()
    lac = l1_loss(T.constant(a), T.constant(c)).data.item()
    lcb = l1_loss(T.constant(c), T.constant(b)).data.item()
    assert lab == lba
    assert lab <= lac + lcb + 1e-15


# ---------------------------------------------------------------------------
# gradient penalty

def test_gp_zero_for_unit_norm_linear_critic():
    apply, _ = unit_linear_critic(16, scale=1.0)
    y = rng.random((4, 1, 4, 4))
    gx = rng.random((4, 1, 4, 4))
    eps = rng.uniform(size=4)
    pen = gradient_penalty(apply, y, gx, eps, 10.0)
    assert abs(pen.data.item()) < 1e-9


def test_gp_doubled_critic_gives_exactly_lambda():
    apply, _ = unit_linear_critic(16, scale=2.0)
    y = rng.random((4, 1, 4, 4))
    gx = rng.random((4, 1, 4, 4))
    eps = rng.uniform(size=4)
    pen = gradient_penalty(apply, y, gx, eps, 10.0)
    assert abs(pen.data.item() - 10.0) < 1e-9


def test_gp_nonnegative_random_critics():
    for seed in range(5):
        apply, _ = unit_linear_critic(9, scale=rng.uniform(0.2, 3.0), seed=seed)
        pen = gradient_penalty(apply, rng.random((2, 1, 3, 3)),
                               rng.random((2, 1, 3, 3)), rng.uniform(size=2), 10.0)
        assert pen.data.item() >= 0.0


def test_interpolate_is_per_sample():
    y = np.ones((2, 1, 2, 2))
    gx = np.zeros((2, 1, 2, 2))
    out = interpolate(y, gx, np.array([0.25, 1.0]))
    assert np.allclose(out[0], 0.25)
    assert np.allclose(out[1], 1.0)


# ---------------------------------------------------------------------------
# critic loss

def test_critic_loss_zero_critic_equals_penalty_weight():
    def zero_apply(v):
        return T.scale(T.sum_(v, axes=(1, 2, 3)), 0.0)

    y = rng.random((3, 1, 4, 4))
    gx = rng.random((3, 1, 4, 4))
    loss = critic_loss(zero_apply, T.constant(y), T.constant(gx),
                       rng.uniform(size=3), 7.0)
    # zero critic: wasserstein 0, gradient norm 0 -> penalty = lambda * 1
    assert np.isclose(loss.data.item(), 7.0, atol=1e-12)


def test_critic_loss_wasserstein_part_zero_for_identical_batches():
    apply, _ = unit_linear_critic(16, scale=1.3, seed=3)
    y = rng.random((4, 1, 4, 4))
    loss, gp = critic_loss_parts(apply, T.constant(y), T.constant(y.copy()),
                                 rng.uniform(size=4), 10.0)
    assert loss.data.item() == gp.data.item()  # wasserstein part exactly 0


def test_critic_loss_matches_compositional_recomputation():
    apply, _ = unit_linear_critic(16, scale=1.7, seed=11)
    y = rng.random((3, 1, 4, 4))
    gx = rng.random((3, 1, 4, 4))
    eps = rng.uniform(size=3)
    total = critic_loss(apply, T.constant(y), T.constant(gx), eps, 10.0)
    expect = (float(T.mean_(apply(T.constant(gx))).data)
              - float(T.mean_(apply(T.constant(y))).data)
              + float(gradient_penalty(apply, y, gx, eps, 10.0).data))
    assert np.isclose(total.data.item(), expect, atol=1e-12)


def test_no_gradient_leaks_to_generator_through_critic_loss():
    gen = build_generator(GeneratorConfig(feature_filters=(4, 3)),
                          RngStream(0).stream("g"))
    apply, _ = unit_linear_critic(64, scale=1.5, seed=2)
    x = rng.random((2, 1, 8, 8))
    y = rng.random((2, 1, 8, 8))
    gx = generator_forward(gen, T.constant(x))
    loss = critic_loss(apply, T.constant(y), gx, rng.uniform(size=2), 10.0)
    grads = T.grad(loss, gen.tensors())
    for g in grads:
        assert np.array_equal(g.data, np.zeros_like(g.data))


# ---------------------------------------------------------------------------
# generator losses

def test_generator_adversarial_zero_critic():
    def zero_apply(v):
        return T.scale(T.sum_(v, axes=(1, 2, 3)), 0.0)

    gx = T.Tensor(rng.random((2, 1, 4, 4)), requires_grad=True)
    loss = generator_adversarial_loss(zero_apply, gx)
    assert loss.data.item() == 0.0
    g = T.grad(loss, gx)
    assert np.array_equal(g.data, np.zeros_like(gx.data))


def test_generator_adversarial_sum_critic():
    def sum_apply(v):
        return T.sum_(v, axes=(1, 2, 3))

    gx = T.Tensor(rng.random((4, 1, 3, 3)), requires_grad=True)
    loss = generator_adversarial_loss(sum_apply, gx)
    assert np.isclose(loss.data.item(), -np.mean(gx.data.sum(axis=(1, 2, 3))))
    g = T.grad(loss, gx)
    assert np.allclose(g.data, -1.0 / 4.0)


def test_joint_loss_modes():
    apply, _ = unit_linear_critic(16, scale=0.8, seed=7)
    gx = T.constant(rng.random((2, 1, 4, 4)))
    y = T.constant(rng.random((2, 1, 4, 4)))

    adv = generator_adversarial_loss(apply, gx).data.item()
    l1 = l1_loss(gx, y).data.item()

    joint0 = joint_generator_loss(apply, gx, y, LossConfig(10.0, 0.0, "joint"))
    assert np.isclose(joint0.data.item(), adv, atol=1e-15)

    only_l1 = joint_generator_loss(apply, gx, y, LossConfig(10.0, 50.0, "l1"))
    assert np.isclose(only_l1.data.item(), 50.0 * l1, atol=1e-12)

    wgan = joint_generator_loss(apply, gx, y, LossConfig(10.0, 50.0, "wgan"))
    assert np.isclose(wgan.data.item(), adv, atol=1e-15)

    joint = joint_generator_loss(apply, gx, y, LossConfig(10.0, 50.0, "joint"))
    assert np.isclose(joint.data.item(), adv + 50.0 * l1, atol=1e-12)


def test_generator_gradient_through_tiny_generator_matches_fd():
    gen = build_generator(GeneratorConfig(feature_filters=(3, 2)),
                          RngStream(4).stream("g"))
    apply, _ = unit_linear_critic(64, scale=1.2, seed=9)
    x = rng.random((1, 1, 8, 8))
    y = rng.random((1, 1, 8, 8))
    cfg = LossConfig(10.0, 5.0, "joint")

    def value():
        gx = generator_forward(gen, T.constant(x))
        return float(joint_generator_loss(apply, gx, T.constant(y), cfg).data)

    gx = generator_forward(gen, T.constant(x))
    loss = joint_generator_loss(apply, gx, T.constant(y), cfg)
    grads = T.grad(loss, gen.tensors())
    # probe a couple of parameters end to end
    for name in ("feat1.w", "nin.w", "feat2.a"):
        p = gen[name]
        g = grads[gen.tensors().index(p)]
        num = numeric_grad(value, p.data, h=1e-6)
        assert rel_err(g.data, num, floor=1e-3) < 1e-5


def test_batch_sample_validation():
    x = np.zeros((2, 1, 4, 4))
    with pytest.raises(ConfigError):
        BatchSample(x, np.zeros((2, 1, 5, 5)), np.zeros(2))
    with pytest.raises(ConfigError):
        BatchSample(x, x.copy(), np.zeros(3))
    with pytest.raises(ConfigError):
        BatchSample(x, x.copy(), np.array([0.5, 1.5]))
    BatchSample(x, x.copy(), np.array([0.0, 1.0]))


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(-1.0, 0.0, "joint")
    with pytest.raises(ConfigError):
        LossConfig(1.0, 1.0, "bogus")
