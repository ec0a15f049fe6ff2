"""Alternating critic/generator training with checkpointing and CSV logs.

One "step" is a generator update; in the adversarial modes each step is
preceded by `n_critic` critic updates, each on a fresh batch. All batch
indices and interpolation draws come from substreams keyed by the step
index, so resuming from a checkpoint replays the identical trajectory of
an uninterrupted run.
"""

import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import read_tensors, write_tensors
from .errors import ConfigError, DataError, NumericsError
from .losses import (BatchSample, LossConfig, critic_loss_parts,
                     joint_generator_loss, l1_loss)
from .models import (CriticConfig, GeneratorConfig, ParameterStore, build_critic,
                     build_generator, critic_forward, generator_forward)
from .optim import Adam
from .rng import RngStream

LOG_HEADER = "step,phase,loss,l1,gp,wall_ms\n"
CHECKPOINT_NAME = "checkpoint.dcsw"
GENERATOR_NAME = "generator.dcsw"
LOG_NAME = "train.csv"


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "joint"
    steps: int = 1000
    batch_size: int = 16
    n_critic: int = 4
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    gp_weight: float = 10.0
    l1_weight: float = 50.0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        LossConfig(self.gp_weight, self.l1_weight, self.mode)  # validates mode

    @property
    def loss(self):
        return LossConfig(self.gp_weight, self.l1_weight, self.mode)


@dataclass
class LogRecord:
    step: int
    phase: str
    loss: float
    l1: float
    gp: float
    wall_ms: float


def trainer_fingerprint(gen_cfg, critic_cfg):
    h = hashlib.sha256(b"trainer")
    h.update(gen_cfg.fingerprint())
    h.update(critic_cfg.fingerprint() if critic_cfg is not None else b"none")
    return h.digest()


class Trainer:
    """Owns the models, optimizers, log, and the alternating schedule."""

    def __init__(self, x, y, gen_cfg: GeneratorConfig, critic_cfg, cfg: TrainConfig,
                 run_dir=None):
        if x.shape != y.shape or x.ndim != 4:
            raise ConfigError(f"patch tensors must match, got {x.shape} vs {y.shape}")
        if x.shape[0] == 0:
            raise DataError("empty patch set")
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.cfg = cfg
        self.gen_cfg = gen_cfg
        self.adversarial = cfg.mode != "l1"
        self.critic_cfg = critic_cfg if self.adversarial else None
        if self.adversarial and critic_cfg is None:
            raise ConfigError(f"mode {cfg.mode!r} needs a critic config")

        self.root = RngStream(cfg.seed)
        self.generator = build_generator(gen_cfg, self.root.stream("init/generator"))
        self.opt_g = Adam(dict(self.generator.items()), cfg.lr, cfg.beta1,
                          cfg.beta2, cfg.adam_eps)
        if self.adversarial:
            self.critic = build_critic(self.critic_cfg, self.root.stream("init/critic"))
            self.opt_c = Adam(dict(self.critic.items()), cfg.lr, cfg.beta1,
                              cfg.beta2, cfg.adam_eps)
        else:
            self.critic = None
            self.opt_c = None

        self.gstep = 0
        self.records = []
        self.run_dir = run_dir
        self._log_file = None
        if run_dir is not None:
            os.makedirs(run_dir, exist_ok=True)

    # ------------------------------------------------------------------
    # batching

    def _batch(self, key) -> BatchSample:
        idx = self.root.stream(f"batch/{key}").integers(
            0, self.x.shape[0], size=self.cfg.batch_size)
        eps = self.root.stream(f"eps/{key}").uniform(size=self.cfg.batch_size)
        return BatchSample(self.x[idx], self.y[idx], eps)

    def _critic_apply(self, v):
        return critic_forward(self.critic, v)

    # ------------------------------------------------------------------
    # single updates

    def train_step_critic(self, batch: BatchSample) -> LogRecord:
        t0 = time.perf_counter()
        with T.no_grad():
            gx = generator_forward(self.generator, T.constant(batch.x))
        loss, gp = critic_loss_parts(self._critic_apply, T.constant(batch.y), gx,
                                     batch.eps, self.cfg.gp_weight)
        gp_val = float(gp.data)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise NumericsError(f"non-finite critic loss at step {self.gstep}")
        grads = T.backward(loss, dict(self.critic.items()))
        self.opt_c.step(grads)
        ms = (time.perf_counter() - t0) * 1e3
        return LogRecord(self.gstep, "critic", loss_val, 0.0, gp_val, ms)

    def train_step_generator(self, batch: BatchSample) -> LogRecord:
        t0 = time.perf_counter()
        gx = generator_forward(self.generator, T.constant(batch.x))
        ytens = T.constant(batch.y)
        loss = joint_generator_loss(
            self._critic_apply if self.adversarial else None,
            gx, ytens, self.cfg.loss)
        loss_val = float(loss.data)
        if self.cfg.mode == "l1":
            l1_val = loss_val / self.cfg.l1_weight if self.cfg.l1_weight else 0.0
        else:
            with T.no_grad():
                l1_val = float(l1_loss(gx, ytens).data)
        if not np.isfinite(loss_val):
            raise NumericsError(f"non-finite generator loss at step {self.gstep}")
        grads = T.backward(loss, dict(self.generator.items()))
        self.opt_g.step(grads)
        ms = (time.perf_counter() - t0) * 1e3
        return LogRecord(self.gstep, "generator", loss_val, l1_val, 0.0, ms)

    # ------------------------------------------------------------------
    # schedule

    def run(self):
        """Train to cfg.steps generator steps; returns the log records."""
        self._open_log()
        if self.run_dir is not None and self.gstep == 0:
            self.save_checkpoint()  # something to fall back to on early aborts
        try:
            while self.gstep < self.cfg.steps:
                self.gstep += 1
                if self.adversarial:
                    for j in range(1, self.cfg.n_critic + 1):
                        rec = self.train_step_critic(self._batch(f"c/{self.gstep}/{j}"))
                        self._log(rec)
                rec = self.train_step_generator(self._batch(f"g/{self.gstep}"))
                self._log(rec)
                if (self.run_dir is not None
                        and self.cfg.checkpoint_every > 0
                        and self.gstep % self.cfg.checkpoint_every == 0):
                    self.save_checkpoint()
            if self.run_dir is not None:
                self.save_checkpoint()
        finally:
            if self._log_file is not None:
                self._log_file.close()
                self._log_file = None
        return self.records

    def _open_log(self):
        if self.run_dir is None:
            return
        path = os.path.join(self.run_dir, LOG_NAME)
        fresh = not os.path.exists(path) or self.gstep == 0
        self._log_file = open(path, "w" if fresh else "a")
        if fresh:
            self._log_file.write(LOG_HEADER)

    def _log(self, rec: LogRecord):
        self.records.append(rec)
        if self._log_file is not None:
            self._log_file.write(
                f"{rec.step},{rec.phase},{rec.loss:.12g},{rec.l1:.12g},"
                f"{rec.gp:.12g},{rec.wall_ms:.3f}\n")
            self._log_file.flush()

    # ------------------------------------------------------------------
    # checkpointing

    def save_checkpoint(self, path=None):
        path = path or os.path.join(self.run_dir, CHECKPOINT_NAME)
        entries = [("meta/gstep", np.float64(self.gstep))]
        entries += [(f"gen/{n}", t.data) for n, t in self.generator.items()]
        entries += self.opt_g.state_entries("opt_g")
        if self.adversarial:
            entries += [(f"critic/{n}", t.data) for n, t in self.critic.items()]
            entries += self.opt_c.state_entries("opt_c")
        write_tensors(path, trainer_fingerprint(self.gen_cfg, self.critic_cfg),
                      entries)
        gen_path = os.path.join(os.path.dirname(path), GENERATOR_NAME)
        write_tensors(gen_path, self.generator.fingerprint,
                      list((n, t.data) for n, t in self.generator.items()))
        return path

    def load_checkpoint(self, path):
        fp, entries = read_tensors(path)
        if fp != trainer_fingerprint(self.gen_cfg, self.critic_cfg):
            raise DataError(
                f"checkpoint {path} does not match the configured architecture "
                "(fingerprint mismatch)")
        self.gstep = int(entries["meta/gstep"])
        for name, t in self.generator.items():
            t.data[...] = entries[f"gen/{name}"]
        self.opt_g.load_state_entries("opt_g", entries)
        if self.adversarial:
            for name, t in self.critic.items():
                t.data[...] = entries[f"critic/{name}"]
            self.opt_c.load_state_entries("opt_c", entries)


def load_generator_params(path, gen_cfg) -> ParameterStore:
    """Load a params-only generator checkpoint, verifying the fingerprint."""
    fp, entries = read_tensors(path)
    store = build_generator(gen_cfg, RngStream(0))
    if fp != store.fingerprint:
        raise DataError(
            f"{path} was written for a different generator architecture "
            "(fingerprint mismatch)")
    names = list(store.params)
    if list(entries) != names:
        raise DataError(f"{path} parameter names do not match the architecture")
    for name in names:
        if entries[name].shape != store.params[name].data.shape:
            raise DataError(f"{path} parameter {name!r} has wrong shape")
        store.params[name].data[...] = entries[name]
    return store


def train_loop(x, y, gen_cfg, critic_cfg, cfg: TrainConfig, run_dir=None,
               resume_from=None):
    """Convenience wrapper: build a Trainer, optionally resume, run to cfg.steps."""
    tr = Trainer(x, y, gen_cfg, critic_cfg, cfg, run_dir)
    if resume_from is not None:
        tr.load_checkpoint(resume_from)
    tr.run()
    return tr
