"""Training objectives: L1 data term, Wasserstein terms, gradient penalty.

The critic is always passed in as a pure function (params are closed
over), so the same loss code serves the full conv critic and the tiny
analytic critics used for verification. ``mode`` selects between plain
supervised L1 training, pure adversarial training, and the joint
objective (adversarial + weighted L1).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError

MODES = ("l1", "wgan", "joint")


@dataclass(frozen=True)
class LossConfig:
    gp_weight: float = 10.0
    l1_weight: float = 50.0
    mode: str = "joint"

    def __post_init__(self):
        if self.gp_weight < 0 or self.l1_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class BatchSample:
    """Aligned LDCT/NDCT batch plus the per-sample interpolation draws."""

    x: np.ndarray  # LDCT [B,1,H,W], unit scale
    y: np.ndarray  # NDCT [B,1,H,W], unit scale
    eps: np.ndarray  # uniform [0,1], shape [B]

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ConfigError(f"batch shapes differ: {self.x.shape} vs {self.y.shape}")
        if self.eps.shape != (self.x.shape[0],):
            raise ConfigError(f"eps must be per-sample, got shape {self.eps.shape}")
        if np.any(self.eps < 0) or np.any(self.eps > 1):
            raise ConfigError("eps draws must lie in [0, 1]")


def l1_loss(gx, y):
    """Mean absolute error over every element of the batch."""
    gx, y = T.as_tensor(gx), T.as_tensor(y)
    if gx.shape != y.shape:
        raise ConfigError(f"l1_loss shapes differ: {gx.shape} vs {y.shape}")
    return T.mean_(T.abs_(T.sub(gx, y)))


def interpolate(y, gx, eps):
    """Per-sample straight-line interpolation between real and denoised batches."""
    y = y.data if isinstance(y, T.Tensor) else np.asarray(y, dtype=np.float64)
    gx = gx.data if isinstance(gx, T.Tensor) else np.asarray(gx, dtype=np.float64)
    e = np.asarray(eps, dtype=np.float64).reshape((-1,) + (1,) * (y.ndim - 1))
    return e * y + (1.0 - e) * gx


def gradient_penalty(critic_apply, y, gx, eps, gp_weight):
    """gp_weight * mean over samples of (||d critic / d input||_2 - 1)^2.

    Interpolates y and gx per sample (both treated as constants), scores the
    interpolates, and differentiates the score through the critic with graph
    construction enabled so the penalty stays differentiable w.r.t. the
    critic parameters.
    """
    yhat = T.Tensor(interpolate(y, gx, eps), requires_grad=True)
    score = T.sum_(critic_apply(yhat))
    g = T.gradient_as_graph(score, yhat)
    norms = T.l2_norm_per_sample(g)
    return T.scale(T.mean_(T.pow_const(T.add_const(norms, -1.0), 2.0)), gp_weight)


def critic_loss_parts(critic_apply, y, gx, eps, gp_weight):
    """(total critic loss, gradient-penalty term).

    Total is mean D(G(x)) - mean D(y) + penalty; minimized by the critic.
    The denoised batch is detached: no gradient reaches the generator here.
    """
    y = T.as_tensor(y)
    gx_const = gx.detach() if isinstance(gx, T.Tensor) else T.constant(gx)
    wasserstein = T.sub(T.mean_(critic_apply(gx_const)), T.mean_(critic_apply(y)))
    gp = gradient_penalty(critic_apply, y, gx_const, eps, gp_weight)
    return T.add(wasserstein, gp), gp


def critic_loss(critic_apply, y, gx, eps, gp_weight):
    return critic_loss_parts(critic_apply, y, gx, eps, gp_weight)[0]


def generator_adversarial_loss(critic_apply, gx):
    """-mean D(G(x)); gradients flow through gx into the generator only."""
    return T.neg(T.mean_(critic_apply(gx)))


def joint_generator_loss(critic_apply, gx, y, cfg: LossConfig):
    """Mode-dependent generator objective.

    joint: adversarial + l1_weight * L1; l1: l1_weight * L1 alone;
    wgan: adversarial alone.
    """
    if cfg.mode == "l1":
        return T.scale(l1_loss(gx, y), cfg.l1_weight)
    if cfg.mode == "wgan":
        return generator_adversarial_loss(critic_apply, gx)
    adv = generator_adversarial_loss(critic_apply, gx)
    return T.add(adv, T.scale(l1_loss(gx, y), cfg.l1_weight))
