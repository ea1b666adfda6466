"""Reverse-process solvers driven through an exit schedule.

Any model with ``predict(x, t, exit_blocks)``, ``flop_count(exit_blocks)``
and ``in_dim`` can be sampled: a :class:`~asediff.network.ScoreNetwork`, the
analytic :class:`~asediff.diffusion.GaussianOracle`, or a router that picks a
parameter set per time interval.

Noise is drawn per chain from streams derived from ``(seed, chain index)``,
so a chain's trajectory never depends on which other chains share its batch.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, eps_to_score, model_log_variance, mu_theta
from .errors import ConfigurationError, MismatchError
from .schedules import ExitSchedule, lookup_blocks

KINDS = ("ddpm", "ddim", "em", "langevin")


@dataclass
class SamplerConfig:
    """Solver choice and its knobs.

    ``step_grid`` optionally lists the diffusion steps visited, in
    decreasing order; the default is uniform over ``n_steps``.  For ``em``
    the grid is always uniform in continuous time.
    """

    kind: str = "ddim"
    n_steps: int = 50
    eta: float = 0.0
    langevin_step: float = 1e-4
    langevin_iters: int = 1
    step_grid: tuple[int, ...] | None = None
    seed: int = 0
    batch: int = 1024

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown sampler kind {self.kind!r}")
        if self.n_steps < 1 or self.batch < 1:
            raise ConfigurationError("n_steps and batch must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError("eta must lie in [0, 1]")
        if self.langevin_step <= 0 or self.langevin_iters < 0:
            raise ConfigurationError("langevin_step must be > 0 and langevin_iters >= 0")


@dataclass
class RunStats:
    """Per-step cost of one sampling run.

    FLOPs are per chain (multiply-accumulates of one network forward summed
    over every forward in the run); times are wall-clock seconds of the
    network forwards only.
    """

    step_t: list = field(default_factory=list)
    step_blocks: list = field(default_factory=list)
    step_flops: list = field(default_factory=list)
    step_times: list = field(default_factory=list)

    @property
    def total_flops(self) -> int:
        return int(sum(self.step_flops))

    @property
    def total_time(self) -> float:
        return float(sum(self.step_times))

    def to_dict(self) -> dict:
        return {"total_flops": self.total_flops, "total_time": self.total_time,
                "n_forwards": len(self.step_t), "step_t": list(map(int, self.step_t)),
                "step_blocks": list(map(int, self.step_blocks)),
                "step_flops": list(map(int, self.step_flops)),
                "step_times": list(map(float, self.step_times))}


class ChainNoise:
    """Standard-normal draws from one independent stream per chain."""

    def __init__(self, seed: int, batch: int, dim: int, chunk: int = 64):
        self.gens = [np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(i,)))
                     for i in range(batch)]
        self.dim = dim
        self.chunk = chunk
        self._buf = None
        self._pos = chunk

    def draw(self) -> np.ndarray:
        if self._pos == self.chunk:
            self._buf = np.stack([g.standard_normal((self.chunk, self.dim)) for g in self.gens],
                                 axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def ddpm_step(x_t, t, eps_hat, ns: NoiseSchedule, z, sigma=None):
    """Ancestral step ``mu_theta + sigma_t z``; no noise is added at ``t = 1``."""
    mean = mu_theta(x_t, eps_hat, t, ns)
    if int(t) == 1:
        return mean
    s = ns.sigma_at(t) if sigma is None else sigma
    return mean + s * np.asarray(z)


def ddim_step(x_t, t, t_next, eps_hat, ns: NoiseSchedule, eta=0.0, z=None):
    """Generalized DDIM update from ``t`` to ``t_next < t`` (``t_next`` may be 0).

    ``eta = 0`` is the deterministic first-order exponential-integrator step;
    ``eta = 1`` with ``t_next = t - 1`` reproduces the ancestral step.
    """
    if not t_next < t:
        raise ConfigurationError("ddim_step needs t_next < t")
    ab = float(ns.alpha_bar_at(t))
    ab_next = float(ns.alpha_bar_at(t_next))
    x0_hat = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    sigma = eta * np.sqrt((1.0 - ab_next) / (1.0 - ab)) * np.sqrt(1.0 - ab / ab_next)
    c = 1.0 - ab_next - sigma ** 2
    if c < 0:
        warnings.warn(f"ddim_step: direction coefficient {c:.3e} clamped to 0", RuntimeWarning)
        c = 0.0
    out = np.sqrt(ab_next) * x0_hat + np.sqrt(c) * eps_hat
    if sigma > 0:
        out = out + sigma * np.asarray(z)
    return out


def em_step(x, u, score, ns: NoiseSchedule, dt, z):
    """Euler-Maruyama step of the reverse VP-SDE from time ``u`` to ``u - dt``."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    beta = ns.continuous_beta(u)
    return x + (0.5 * beta * x + beta * score) * dt + np.sqrt(beta * dt) * np.asarray(z)


def langevin_step(x, score, beta_step, z):
    """``x + beta score + sqrt(2 beta) z``."""
    if beta_step <= 0:
        raise ConfigurationError("beta_step must be positive")
    return x + beta_step * score + np.sqrt(2.0 * beta_step) * np.asarray(z)


def uniform_grid(T: int, n_steps: int) -> list[int]:
    """Decreasing steps ``1 + floor(k T / n)`` for ``k = n-1..0``.

    The grid always ends at ``t = 1``; with ``n = T`` it visits every step.
    """
    if not 1 <= n_steps <= T:
        raise ConfigurationError(f"n_steps must lie in [1, {T}]")
    return [1 + (k * T) // n_steps for k in range(n_steps - 1, -1, -1)]


class _Runner:
    def __init__(self, model, exit_sched, T, stats):
        self.model = model
        self.exit_sched = exit_sched
        self.T = T
        self.stats = stats

    def blocks(self, t):
        if self.exit_sched is None:
            return None
        return lookup_blocks(self.exit_sched, t, self.T)

    def __call__(self, x, t):
        s = self.blocks(t)
        lv = getattr(self.model, "learned_variance", False)
        start = time.perf_counter()
        out = self.model.forward(x, t, s) if lv else self.model.predict(x, t, s)
        elapsed = time.perf_counter() - start
        st = self.stats
        st.step_t.append(t)
        st.step_blocks.append(0 if s is None else s)
        st.step_flops.append(self.model.flop_count(s))
        st.step_times.append(elapsed)
        return out if lv else (out, None)


def sample_loop(model, exit_sched: ExitSchedule | None, cfg: SamplerConfig,
                ns: NoiseSchedule, x_T=None):
    """Draw ``cfg.batch`` samples.

    Returns:
        ``(samples, RunStats)``.
    """
    T = ns.T
    if exit_sched is not None and hasattr(model, "config"):
        try:
            exit_sched.check_bound(model)
        except ConfigurationError as exc:
            raise MismatchError(f"sampler/schedule mismatch: {exc}") from None
    noise = ChainNoise(cfg.seed, cfg.batch, model.in_dim)
    x = noise.draw() if x_T is None else np.array(x_T, dtype=np.float64)
    stats = RunStats()
    run = _Runner(model, exit_sched, T, stats)

    if cfg.kind == "em":
        n = cfg.n_steps
        dt = 1.0 / n
        for k in range(n, 0, -1):
            u = k / n
            t = min(T, max(1, int(np.ceil(u * T - 1e-9))))
            eps_hat, _ = run(x, t)
            z = noise.draw() if k > 1 else np.zeros_like(x)
            x = em_step(x, u, eps_to_score(eps_hat, t, ns), ns, dt, z)
        return x, stats

    grid = list(cfg.step_grid) if cfg.step_grid else uniform_grid(T, cfg.n_steps)
    full = grid == list(range(T, 0, -1))
    for i, t in enumerate(grid):
        t_next = grid[i + 1] if i + 1 < len(grid) else 0
        eps_hat, v = run(x, t)
        if cfg.kind in ("ddpm", "langevin") and full:
            sigma = None
            if v is not None and t >= 2:
                sigma = np.sqrt(np.exp(model_log_variance(v, t, ns)))
            x = ddpm_step(x, t, eps_hat, ns, noise.draw() if t > 1 else None, sigma)
        else:
            eta = 1.0 if cfg.kind in ("ddpm", "langevin") else cfg.eta
            z = noise.draw() if eta > 0 else None
            x = ddim_step(x, t, t_next, eps_hat, ns, eta, z)
        if cfg.kind == "langevin" and t_next >= 1:
            for _ in range(cfg.langevin_iters):
                e, _ = run(x, t_next)
                x = langevin_step(x, eps_to_score(e, t_next, ns), cfg.langevin_step, noise.draw())
    return x, stats
