"""Run configuration: INI-style sections with strict keys.

Five sections (data, model, loss, train, eval) carry every tunable with
its default. Files may override defaults, CLI flags override files, and
the fully resolved configuration is echoed into the run directory so a
run can be reproduced from the echo alone. Unknown sections or keys are
rejected outright.
"""

import configparser
import os

from .ctdata import DEFAULT_I0_FULL
from .errors import ConfigError
from .losses import LossConfig
from .models import CriticConfig, GeneratorConfig
from .training import TrainConfig


def _int_list(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v != "")


_SCHEMA = {
    "data": {
        "slices": (int, 8),
        "size": (int, 256),
        "seed": (int, 0),
        "i0_full": (float, DEFAULT_I0_FULL),
        "i0_low": (float, DEFAULT_I0_FULL / 4.0),
        "n_angles": (int, 0),  # 0 = derive from size
        "n_detectors": (int, 0),  # 0 = equal to size
        "fov_mm": (float, 400.0),
        "complexity_lo": (int, 4),
        "complexity_hi": (int, 10),
    },
    "model": {
        "feature_filters": (_int_list, (32, 26, 22, 18, 14, 11, 8)),
        "feature_kernel": (int, 3),
        "a1_filters": (int, 24),
        "a1_kernel": (int, 1),
        "b1_filters": (int, 8),
        "b1_kernel": (int, 1),
        "b2_filters": (int, 8),
        "b2_kernel": (int, 3),
        "critic_filters": (_int_list, (64, 64, 128, 128, 256, 256)),
        "critic_strides": (_int_list, (1, 2, 1, 2, 1, 2)),
        "critic_kernel": (int, 3),
        "critic_leaky": (float, 0.2),
        "critic_fc_hidden": (int, 1024),
        "critic_input_size": (int, 80),
    },
    "loss": {
        "gp_weight": (float, 10.0),
        "l1_weight": (float, 50.0),
    },
    "train": {
        "mode": (str, "joint"),
        "steps": (int, 1000),
        "batch_size": (int, 16),
        "n_critic": (int, 4),
        "seed": (int, 0),
        "lr": (float, 1e-4),
        "beta1": (float, 0.5),
        "beta2": (float, 0.9),
        "adam_eps": (float, 1e-8),
        "patch_size": (int, 80),
        "patch_count": (int, 2000),
        "checkpoint_every": (int, 500),
    },
    "eval": {
        "tile": (int, 160),
        "overlap": (int, 16),
    },
}


def default_config():
    return {s: {k: v for k, (_t, v) in keys.items()} for s, keys in _SCHEMA.items()}


def load_config(path=None):
    """Defaults, overlaid with an optional INI file (strictly validated)."""
    cfg = default_config()
    if path is None:
        return cfg
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}] of {path}")
            cast = _SCHEMA[section][key][0]
            try:
                cfg[section][key] = cast(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value {raw!r} for [{section}] {key}: {exc}") from exc
    return cfg


def apply_overrides(cfg, overrides):
    """overrides: {(section, key): value or None}; None entries are skipped."""
    for (section, key), value in overrides.items():
        if value is None:
            continue
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config entry [{section}] {key}")
        cast = _SCHEMA[section][key][0]
        cfg[section][key] = cast(value) if not isinstance(value, tuple) else value
    return cfg


def write_config(cfg, path):
    """Echo every effective value, sorted, for provenance."""
    with open(path, "w") as f:
        for section in _SCHEMA:
            f.write(f"[{section}]\n")
            for key in _SCHEMA[section]:
                value = cfg[section][key]
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                f.write(f"{key}={value}\n")
            f.write("\n")


def generator_config(cfg) -> GeneratorConfig:
    m = cfg["model"]
    return GeneratorConfig(
        feature_filters=m["feature_filters"], feature_kernel=m["feature_kernel"],
        a1_filters=m["a1_filters"], a1_kernel=m["a1_kernel"],
        b1_filters=m["b1_filters"], b1_kernel=m["b1_kernel"],
        b2_filters=m["b2_filters"], b2_kernel=m["b2_kernel"],
    )


def critic_config(cfg) -> CriticConfig:
    m = cfg["model"]
    return CriticConfig(
        input_size=m["critic_input_size"], conv_filters=m["critic_filters"],
        conv_strides=m["critic_strides"], conv_kernel=m["critic_kernel"],
        leaky_slope=m["critic_leaky"], fc_hidden=m["critic_fc_hidden"],
    )


def train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        mode=t["mode"], steps=t["steps"], batch_size=t["batch_size"],
        n_critic=t["n_critic"], seed=t["seed"], lr=t["lr"], beta1=t["beta1"],
        beta2=t["beta2"], adam_eps=t["adam_eps"],
        gp_weight=cfg["loss"]["gp_weight"], l1_weight=cfg["loss"]["l1_weight"],
        checkpoint_every=t["checkpoint_every"],
    )


def loss_config(cfg) -> LossConfig:
    return LossConfig(cfg["loss"]["gp_weight"], cfg["loss"]["l1_weight"],
                      cfg["train"]["mode"])
