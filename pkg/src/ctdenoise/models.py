"""Denoising generator and critic: configs, parameter stores, forward passes.

The generator is a seven-layer feature-extraction cascade whose outputs are
all channel-concatenated (dense skips) into a two-channel reconstruction
stage (a wide 1x1 branch and a narrow 1x1 -> 3x3 branch), fused by a final
1x1 network-in-network projection down to one channel that is added onto
the input (residual learning). The critic is a plain strided conv stack
with a fully-connected head and no normalization layers, so that its
per-sample input gradient is well-defined for the gradient penalty.
"""

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, asdict, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .rng import RngStream

PRELU_INIT = 0.25


def _fingerprint(kind, cfg) -> bytes:
    blob = json.dumps({"kind": kind, **asdict(cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).digest()


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    feature_filters: tuple = (32, 26, 22, 18, 14, 11, 8)
    feature_kernel: int = 3
    a1_filters: int = 24
    a1_kernel: int = 1
    b1_filters: int = 8
    b1_kernel: int = 1
    b2_filters: int = 8
    b2_kernel: int = 3
    min_size: int = 8

    def __post_init__(self):
        if len(self.feature_filters) < 1 or any(f < 1 for f in self.feature_filters):
            raise ConfigError(f"feature_filters must be positive: {self.feature_filters}")
        for name in ("a1_filters", "b1_filters", "b2_filters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        object.__setattr__(self, "feature_filters", tuple(self.feature_filters))

    @property
    def skip_channels(self):
        """Width of the dense-skip concatenation feeding reconstruction."""
        return sum(self.feature_filters)

    @property
    def fuse_channels(self):
        """Width of the A/B concatenation feeding the final 1x1 projection."""
        return self.a1_filters + self.b2_filters

    def fingerprint(self):
        return _fingerprint("generator", self)


@dataclass(frozen=True)
class CriticConfig:
    in_channels: int = 1
    input_size: int = 80
    conv_filters: tuple = (64, 64, 128, 128, 256, 256)
    conv_strides: tuple = (1, 2, 1, 2, 1, 2)
    conv_kernel: int = 3
    leaky_slope: float = 0.2
    fc_hidden: int = 1024

    def __post_init__(self):
        if len(self.conv_filters) != len(self.conv_strides):
            raise ConfigError("conv_filters and conv_strides lengths differ")
        if any(f < 1 for f in self.conv_filters) or any(s < 1 for s in self.conv_strides):
            raise ConfigError("critic filters and strides must be positive")
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        object.__setattr__(self, "conv_strides", tuple(self.conv_strides))

    def conv_output_size(self, size=None):
        size = self.input_size if size is None else size
        for s in self.conv_strides:
            size = -(-size // s)  # 'same' padding: ceil division
        return size

    @property
    def flat_features(self):
        n = self.conv_output_size()
        return self.conv_filters[-1] * n * n

    def fingerprint(self):
        return _fingerprint("critic", self)


class ParameterStore:
    """Ordered named parameter tensors plus the architecture fingerprint."""

    def __init__(self, config, params):
        self.config = config
        self.params = OrderedDict(params)
        self.fingerprint = config.fingerprint()
        if len(set(self.params)) != len(self.params):
            raise ConfigError("duplicate parameter names")

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def tensors(self):
        return list(self.params.values())

    @property
    def param_count(self):
        return sum(t.size for t in self.params.values())

    def copy_values_from(self, other):
        for name, t in self.params.items():
            t.data[...] = other.params[name].data


def _conv_init(rng, cout, cin, k):
    """Zero-mean normal, std sqrt(2 / (k^2 * Cin)): variance-preserving."""
    std = np.sqrt(2.0 / (k * k * cin))
    return rng.normal(0.0, std, (cout, cin, k, k))


def _generator_specs(cfg):
    """(name, shape, init) triples in build order; single source of truth."""
    specs = []
    cin = cfg.in_channels
    for i, f in enumerate(cfg.feature_filters, start=1):
        specs.append((f"feat{i}.w", (f, cin, cfg.feature_kernel, cfg.feature_kernel), "conv"))
        specs.append((f"feat{i}.b", (f,), "zero"))
        specs.append((f"feat{i}.a", (f,), "prelu"))
        cin = f
    skip = cfg.skip_channels
    for name, cout, cin_, k in (
        ("a1", cfg.a1_filters, skip, cfg.a1_kernel),
        ("b1", cfg.b1_filters, skip, cfg.b1_kernel),
        ("b2", cfg.b2_filters, cfg.b1_filters, cfg.b2_kernel),
    ):
        specs.append((f"{name}.w", (cout, cin_, k, k), "conv"))
        specs.append((f"{name}.b", (cout,), "zero"))
        specs.append((f"{name}.a", (cout,), "prelu"))
    specs.append(("nin.w", (1, cfg.fuse_channels, 1, 1), "conv"))
    specs.append(("nin.b", (1,), "zero"))
    return specs


def _critic_specs(cfg):
    specs = []
    cin = cfg.in_channels
    for i, (f, _s) in enumerate(zip(cfg.conv_filters, cfg.conv_strides), start=1):
        specs.append((f"conv{i}.w", (f, cin, cfg.conv_kernel, cfg.conv_kernel), "conv"))
        specs.append((f"conv{i}.b", (f,), "zero"))
        cin = f
    specs.append(("fc1.w", (cfg.flat_features, cfg.fc_hidden), "fc"))
    specs.append(("fc1.b", (cfg.fc_hidden,), "zero"))
    specs.append(("fc2.w", (cfg.fc_hidden, 1), "fc"))
    specs.append(("fc2.b", (1,), "zero"))
    return specs


def _materialize(specs, rng):
    params = OrderedDict()
    for name, shape, kind in specs:
        if kind == "conv":
            cout, cin, k, _ = shape
            data = _conv_init(rng, cout, cin, k)
        elif kind == "fc":
            fan_in = shape[0]
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        elif kind == "zero":
            data = np.zeros(shape)
        elif kind == "prelu":
            data = np.full(shape, PRELU_INIT)
        else:
            raise ConfigError(f"unknown init kind {kind!r}")
        params[name] = T.Tensor(data, requires_grad=True)
    return params


def build_generator(cfg, rng: RngStream) -> ParameterStore:
    return ParameterStore(cfg, _materialize(_generator_specs(cfg), rng))


def build_critic(cfg, rng: RngStream) -> ParameterStore:
    return ParameterStore(cfg, _materialize(_critic_specs(cfg), rng))


def generator_forward(store: ParameterStore, x):
    """Denoise x[B,1,H,W] -> same shape; output = x + learned residual."""
    cfg = store.config
    x = T.as_tensor(x)
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ConfigError(
            f"generator expects [B,{cfg.in_channels},H,W], got {x.shape}"
        )
    if x.shape[2] < cfg.min_size or x.shape[3] < cfg.min_size:
        raise ConfigError(
            f"input {x.shape[2]}x{x.shape[3]} below minimum size {cfg.min_size}"
        )
    p = store.params
    h = x
    skips = []
    for i in range(1, len(cfg.feature_filters) + 1):
        h = T.conv2d(h, p[f"feat{i}.w"], p[f"feat{i}.b"], 1, "same")
        h = T.prelu(h, p[f"feat{i}.a"])
        skips.append(h)
    cat = T.concat_channels(skips)
    a1 = T.prelu(T.conv2d(cat, p["a1.w"], p["a1.b"], 1, "same"), p["a1.a"])
    b1 = T.prelu(T.conv2d(cat, p["b1.w"], p["b1.b"], 1, "same"), p["b1.a"])
    b2 = T.prelu(T.conv2d(b1, p["b2.w"], p["b2.b"], 1, "same"), p["b2.a"])
    fused = T.concat_channels([a1, b2])
    residual = T.conv2d(fused, p["nin.w"], p["nin.b"], 1, "same")
    return T.add(x, residual)


def critic_forward(store: ParameterStore, y):
    """Score y[B,1,H,W] -> one unbounded real per sample, shape [B]."""
    cfg = store.config
    y = T.as_tensor(y)
    if y.data.ndim != 4 or y.shape[1] != cfg.in_channels:
        raise ConfigError(f"critic expects [B,{cfg.in_channels},H,W], got {y.shape}")
    p = store.params
    h = y
    for i, s in enumerate(cfg.conv_strides, start=1):
        h = T.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], s, "same")
        h = T.leaky_relu(h, cfg.leaky_slope)
    flat_n = h.shape[1] * h.shape[2] * h.shape[3]
    if flat_n != cfg.flat_features:
        raise ConfigError(
            f"critic input {y.shape[2]}x{y.shape[3]} maps to {flat_n} features, "
            f"but the head was built for {cfg.flat_features} "
            f"(input_size {cfg.input_size})"
        )
    flat = T.reshape(h, (h.shape[0], flat_n))
    h = T.add(T.matmul(flat, p["fc1.w"]), T.reshape(p["fc1.b"], (1, cfg.fc_hidden)))
    h = T.leaky_relu(h, cfg.leaky_slope)
    out = T.add(T.matmul(h, p["fc2.w"]), T.reshape(p["fc2.b"], (1, 1)))
    return T.reshape(out, (out.shape[0],))


def expected_param_count(specs):
    """Closed-form parameter count: sum of extents products over the spec list."""
    return sum(int(np.prod(shape)) for _, shape, _ in specs)
