"""Adam with bias correction over named parameter dicts."""

import numpy as np

from .errors import ConfigError, NumericsError
from .tensor import Tensor


class Adam:
    """Standard Adam. State mirrors the parameter dict; fully deterministic."""

    def __init__(self, params, lr=1e-4, beta1=0.5, beta2=0.9, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.items()}

    def step(self, grads):
        """Apply one update from a {name: Tensor-or-array} gradient map."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ConfigError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} of shape {p.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter {name!r}")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_entries(self, prefix):
        """Flat (name, array) pairs for checkpointing, step counter included."""
        out = [(f"{prefix}/step", np.float64(self.step_count))]
        for name in self.params:
            out.append((f"{prefix}/m/{name}", self.m[name]))
            out.append((f"{prefix}/v/{name}", self.v[name]))
        return out

    def load_state_entries(self, prefix, entries):
        self.step_count = int(entries[f"{prefix}/step"])
        for name in self.params:
            self.m[name] = entries[f"{prefix}/m/{name}"].copy()
            self.v[name] = entries[f"{prefix}/v/{name}"].copy()
