"""Pretraining and early-exit fine-tuning with an EMA teacher.

Fine-tuning follows the loop: sample a batch, draw a step ``t`` per example,
perturb, run the student to depth ``S(t)``, weight each example's loss by
``lambda(t)``, take an AdamW step on the student and fold it into the
teacher with ``theta_T <- a theta_T + (1 - a) theta_S``.  ``lambda(t)`` is
boosted on the noise region for the first ``cycle_C`` steps (or until the
validation loss plateaus) and is 1 afterwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .diffusion import (NoiseSchedule, linear_beta_schedule, model_log_variance,
                        perturb, posterior_q, mu_theta, weighted_eps_loss)
from .errors import ConfigurationError, TrainingError
from .network import NetworkConfig, ScoreNetwork, init_network
from .schedules import ExitSchedule, lookup_blocks

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer and loss-weighting knobs shared by pretraining and fine-tuning."""

    batch_size: int = 256
    lr: float = 2e-5
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    lr_schedule: str = "constant"
    ema_rate: float = 0.999
    cycle_C: int = 1000
    lambda_boost: float = 2.0
    noise_region_start: float = 0.5
    plateau_patience: int | None = None
    plateau_eval_every: int = 100
    vlb_weight: float = 0.0
    t_range: tuple[float, float] | None = None
    log_every: int = 100

    def __post_init__(self):
        if not 0.0 <= self.ema_rate <= 1.0:
            raise ConfigurationError("ema_rate must lie in [0, 1]")
        if self.lambda_boost < 1.0:
            raise ConfigurationError("lambda_boost must be >= 1")
        if not 0.0 < self.noise_region_start < 1.0:
            raise ConfigurationError("noise_region_start must lie in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1 or self.cycle_C < 0:
            raise ConfigurationError("batch_size must be >= 1 and cycle_C >= 0")


class AdamW:
    """Adam with decoupled weight decay over a dict of arrays."""

    def __init__(self, params: dict, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * params[k]
            params[k] -= lr * update


@dataclass
class TrainState:
    """Student, EMA teacher, optimizer moments and the step counter."""

    student: ScoreNetwork
    teacher: ScoreNetwork
    optimizer: AdamW
    ema_rate: float = 0.999
    cycle_C: int = 1000
    lambda_boost: float = 2.0
    noise_region_start: float = 0.5
    step: int = 0
    boost_active: bool = True

    @property
    def lr(self):
        return self.optimizer.lr


def ema_update(state: TrainState) -> dict:
    """``theta_T <- a theta_T + (1 - a) theta_S`` in place; returns teacher params."""
    a = state.ema_rate
    for k, p_t in state.teacher.params.items():
        p_s = state.student.params[k]
        if a == 0.0:
            p_t[...] = p_s
        else:
            # difference form: exact no-op where teacher and student agree
            p_t += (1.0 - a) * (p_s - p_t)
    return state.teacher.params


def lambda_schedule(t, state: TrainState, T: int):
    """Per-step loss weight under the reweighting cycle.

    While the boost phase lasts (``step < cycle_C`` and no plateau reset),
    steps with ``t / T > noise_region_start`` get ``lambda_boost``.
    """
    t = np.asarray(t)
    if state.step >= state.cycle_C or not state.boost_active:
        return np.ones(t.shape)
    return np.where(t / T > state.noise_region_start, state.lambda_boost, 1.0)


def plateau_check(history, patience: int = 5, rel_tol: float = 1e-3, window: int = 1) -> bool:
    """True once the last ``patience`` evaluations stop improving.

    The history is smoothed by a trailing mean of ``window`` points.  The
    best smoothed value among the last ``patience`` points must beat the best
    earlier one by more than ``rel_tol`` (relative) to count as progress.
    """
    h = np.asarray(history, dtype=np.float64)
    if window > 1:
        if h.size < window:
            return False
        h = np.convolve(h, np.ones(window) / window, mode="valid")
    if h.size < patience + 1:
        return False
    best_before = h[:-patience].min()
    best_recent = h[-patience:].min()
    return bool(best_recent > best_before - rel_tol * abs(best_before))


def _cosine_lr(base, step, total):
    return 0.5 * base * (1.0 + math.cos(math.pi * min(step, total) / max(total, 1)))


class Trainer:
    """Runs training steps against a dataset.

    With ``schedule=None`` and ``use_ema=False`` this is plain pretraining
    (``lambda = 1``).  Otherwise each step follows the fine-tuning loop
    described in the module docstring.
    """

    def __init__(self, net: ScoreNetwork, dataset: Dataset, ns: NoiseSchedule, cfg: TrainConfig,
                 seed: int, schedule: ExitSchedule | None = None, use_ema: bool = True,
                 reweight: bool = True, total_iterations: int | None = None):
        if dataset.dim != net.config.in_dim:
            raise ConfigurationError("dataset dimension does not match the network")
        if ns.T != net.config.T:
            raise ConfigurationError("noise schedule T does not match the network")
        if schedule is not None:
            schedule.check_bound(net)
        self.dataset = dataset
        self.ns = ns
        self.cfg = cfg
        self.schedule = schedule
        self.use_ema = use_ema
        self.reweight = reweight
        self.total_iterations = total_iterations
        self.rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
        student = net.copy()
        self.state = TrainState(
            student=student, teacher=student.copy(),
            optimizer=AdamW(student.params, cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay),
            ema_rate=cfg.ema_rate, cycle_C=cfg.cycle_C if reweight else 0,
            lambda_boost=cfg.lambda_boost, noise_region_start=cfg.noise_region_start,
            boost_active=reweight)
        self.history: list[dict] = []
        self.val_history: list[float] = []
        self._val_batch = None
        self._losses: list[float] = []

    def _sample_t(self, n):
        T = self.ns.T
        if self.cfg.t_range is None:
            return self.rng.integers(1, T + 1, size=n)
        lo, hi = self.cfg.t_range
        t_lo = int(math.floor(lo * T)) + 1
        t_hi = max(t_lo, int(math.floor(hi * T)))
        return self.rng.integers(t_lo, t_hi + 1, size=n)

    def _exit(self, t):
        if self.schedule is None:
            return None
        return lookup_blocks(self.schedule, t, self.ns.T)

    def batch_loss_and_grads(self, net, x0, t, eps, weights):
        """Weighted hybrid loss on one batch and its parameter gradients."""
        x_t = perturb(x0, t, eps, self.ns)
        out, cache = net.forward(x_t, t, self._exit(t), keep_cache=True)
        eps_hat, v = out if net.learned_variance else (out, None)
        loss, d_eps = weighted_eps_loss(eps, eps_hat, weights)
        d_v = None
        if v is not None:
            d_v = np.zeros_like(v)
            if self.cfg.vlb_weight > 0:
                loss_vlb, d_v = self._vlb_grad(x0, x_t, t, eps_hat, v, weights)
                loss += self.cfg.vlb_weight * loss_vlb
                d_v *= self.cfg.vlb_weight
        return loss, net.backward(cache, d_eps, d_v)

    def _vlb_grad(self, x0, x_t, t, eps_hat, v, weights):
        # mean prediction is held fixed; the VLB term only trains v
        keep = t >= 2
        t_s = np.where(keep, t, 2)
        mu_q, var_q = posterior_q(x_t, x0, t_s, self.ns)
        mu_p = mu_theta(x_t, eps_hat, t_s, self.ns)
        logvar = model_log_variance(v, t_s, self.ns)
        var_q = var_q[:, None]
        ratio = (var_q + (mu_q - mu_p) ** 2) * np.exp(-logvar)
        kl = 0.5 * (logvar - np.log(var_q) + ratio - 1.0)
        w = (weights * keep)[:, None] / x0.shape[0]
        loss = float(np.sum(w * kl))
        dlog = np.log(self.ns.beta_at(t_s)) - np.log(self.ns.beta_tilde_at(t_s))
        return loss, w * 0.5 * (1.0 - ratio) * dlog[:, None]

    def _validation_loss(self):
        if self._val_batch is None:
            rng = np.random.default_rng(np.random.SeedSequence([12345, self.ns.T]))
            n = 2048
            self._val_batch = (self.dataset.sample(n, rng), rng.integers(1, self.ns.T + 1, n),
                               rng.standard_normal((n, self.dataset.dim)))
        x0, t, eps = self._val_batch
        x_t = perturb(x0, t, eps, self.ns)
        eps_hat = self.state.student.predict(x_t, t, self._exit(t))
        return weighted_eps_loss(eps, eps_hat, np.ones(t.shape))[0]

    def step(self) -> float:
        st, cfg = self.state, self.cfg
        n = cfg.batch_size
        x0 = self.dataset.sample(n, self.rng)
        t = self._sample_t(n)
        eps = self.rng.standard_normal(x0.shape)
        weights = lambda_schedule(t, st, self.ns.T) if self.reweight else np.ones(n)
        loss, grads = self.batch_loss_and_grads(st.student, x0, t, eps, weights)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {st.step}",
                                step=st.step, history=self._losses)
        lr = cfg.lr
        if cfg.lr_schedule == "cosine" and self.total_iterations:
            lr = _cosine_lr(cfg.lr, st.step, self.total_iterations)
        st.optimizer.step(st.student.params, grads, lr)
        if self.use_ema:
            ema_update(st)
        phase = "boost" if (st.boost_active and st.step < st.cycle_C) else "uniform"
        st.step += 1
        self._losses.append(loss)
        if cfg.log_every and st.step % cfg.log_every == 0:
            row = {"step": st.step, "loss": float(np.mean(self._losses[-cfg.log_every:])),
                   "lambda_phase": phase}
            self.history.append(row)
            log.debug("step %d loss %.5f (%s)", row["step"], row["loss"], phase)
        if (cfg.plateau_patience and st.boost_active and st.step < st.cycle_C
                and st.step % cfg.plateau_eval_every == 0):
            self.val_history.append(self._validation_loss())
            if plateau_check(self.val_history, cfg.plateau_patience):
                st.boost_active = False
                log.info("loss plateaued at step %d; lambda reset to 1", st.step)
        return loss

    def run(self, iterations: int):
        for _ in range(int(iterations)):
            self.step()
        return self


def pretrain(config: NetworkConfig, dataset: Dataset, iterations: int, seed: int,
             train_cfg: TrainConfig | None = None, ns: NoiseSchedule | None = None,
             history: list | None = None, dtype=np.float64) -> ScoreNetwork:
    """Train a full-depth network from scratch with ``lambda = 1``.

    Initialization uses ``seed``; the data/noise stream uses ``seed + 1``.
    ``dtype`` sets the precision of the network math (float32 is about twice
    as fast for toy runs).
    """
    train_cfg = train_cfg or TrainConfig(lr=1e-3, lr_schedule="cosine")
    ns = ns or linear_beta_schedule(config.T)
    net = init_network(config, seed, dtype)
    if iterations < 0:
        raise ConfigurationError("iterations must be >= 0")
    trainer = Trainer(net, dataset, ns, train_cfg, seed + 1, schedule=None, use_ema=False,
                      reweight=False, total_iterations=iterations)
    trainer.run(iterations)
    if history is not None:
        history.extend(trainer.history)
    return trainer.state.student


def finetune_ase(pretrained: ScoreNetwork, sched: ExitSchedule | None, dataset: Dataset,
                 train_cfg: TrainConfig, iterations: int, seed: int,
                 ns: NoiseSchedule | None = None, history: list | None = None,
                 reweight: bool = True) -> ScoreNetwork:
    """Fine-tune under an exit schedule and return the EMA teacher.

    ``sched=None`` fine-tunes at full depth (used for continued training and
    per-interval experts).
    """
    ns = ns or linear_beta_schedule(pretrained.config.T)
    trainer = Trainer(pretrained, dataset, ns, train_cfg, seed, schedule=sched, use_ema=True,
                      reweight=reweight, total_iterations=iterations)
    trainer.run(iterations)
    if history is not None:
        history.extend(trainer.history)
    return trainer.state.teacher


__all__ = ["AdamW", "TrainConfig", "TrainState", "Trainer", "ema_update", "finetune_ase",
           "lambda_schedule", "plateau_check", "pretrain"]
