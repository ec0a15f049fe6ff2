"""Low-dose CT denoising on a from-scratch autodiff engine.

Submodules:
    tensor       float64 tensors + reverse-mode autodiff (second order capable)
    models       generator / critic configs, builders, forward passes
    losses       L1, Wasserstein, gradient penalty, joint objective
    optim        Adam
    training     alternating training loop, checkpoints, CSV logs
    phantom      random ellipse phantoms
    projection   parallel-beam radon, Poisson dose model, FBP
    ctdata       HU windowing, patches, .ctf/.png formats, dataset generation
    metrics      PSNR / SSIM / RMSE and batch reports
    inference    overlapped-tile full-slice denoising
    config       INI run configuration
    cli          command-line front end

The package root imports lazily so the CLI can cap BLAS threads before
numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor", "models", "losses", "optim", "training", "phantom",
    "projection", "ctdata", "metrics", "inference", "config", "cli",
    "rng", "errors", "checkpoint", "conv_kernels",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
