"""Closed-form diffusion mathematics.

Discrete time runs over ``t = 1..T``; ``u = t / T`` is the continuous time with
``u -> 0`` the data end and ``u -> 1`` the noise end.  Every function here is
pure and takes the caller's noise explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables of a discrete variance-preserving forward process.

    All arrays have length ``T`` and are indexed by ``t - 1``.  Use the
    ``*_at`` helpers for lookups by step, which also accept ``t = 0`` with the
    convention ``alpha_bar_0 = 1``.
    """

    beta: np.ndarray
    sigma_kind: str = "posterior"
    alpha: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)
    beta_tilde: np.ndarray = field(init=False, repr=False)
    sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ConfigurationError("beta must be a non-empty 1-D array")
        if not np.all((beta > 0) & (beta < 1)):
            raise ConfigurationError("every beta_t must lie in (0, 1)")
        if self.sigma_kind not in ("posterior", "beta"):
            raise ConfigurationError(f"unknown sigma_kind {self.sigma_kind!r}")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
        beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
        sigma = np.sqrt(beta_tilde if self.sigma_kind == "posterior" else beta)
        for name, arr in [("beta", beta), ("alpha", alpha), ("alpha_bar", alpha_bar),
                          ("beta_tilde", beta_tilde), ("sigma", sigma)]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        padded = np.concatenate([[1.0], alpha_bar])
        padded.setflags(write=False)
        object.__setattr__(self, "_alpha_bar_padded", padded)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def _check_t(self, t, allow_zero=False):
        t = np.asarray(t)
        lo = 0 if allow_zero else 1
        if np.any(t < lo) or np.any(t > self.T):
            raise ContractError(f"time step out of range [{lo}, {self.T}]")
        return t.astype(np.int64)

    def alpha_bar_at(self, t):
        """``alpha_bar_t`` for ``t`` in ``0..T`` (scalar or array)."""
        return self._alpha_bar_padded[self._check_t(t, allow_zero=True)]

    def beta_at(self, t):
        return self.beta[self._check_t(t) - 1]

    def alpha_at(self, t):
        return self.alpha[self._check_t(t) - 1]

    def beta_tilde_at(self, t):
        return self.beta_tilde[self._check_t(t) - 1]

    def sigma_at(self, t):
        return self.sigma[self._check_t(t) - 1]

    def continuous_beta(self, u):
        """Rate ``beta(u)`` of the matching VP-SDE, ``u`` in ``[0, 1]``.

        Linear interpolation of the discrete table placed at ``u = t / T``,
        scaled by ``T`` so that ``beta(u) du`` matches ``beta_t`` per step.
        """
        grid = np.arange(1, self.T + 1) / self.T
        return self.T * np.interp(u, grid, self.beta)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "sigma_kind": self.sigma_kind}


def linear_beta_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                         sigma_kind: str = "posterior") -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    return NoiseSchedule(np.linspace(beta_start, beta_end, int(T), dtype=np.float64),
                         sigma_kind=sigma_kind)


def _col(values, like):
    """Broadcast per-row coefficients against a (batch, dim) array."""
    values = np.asarray(values, dtype=np.float64)
    like = np.asarray(like)
    if values.ndim == 0 or like.ndim <= 1:
        return values
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim))


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ContractError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def perturb(x0, t, eps, ns: NoiseSchedule):
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(x0, eps, "perturb")
    ab = _col(ns.alpha_bar_at(ns._check_t(t)), x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def eps_to_score(eps, t, ns: NoiseSchedule):
    """Score ``-eps / sqrt(1 - abar_t)`` of the noise prediction ``eps``."""
    eps = np.asarray(eps, dtype=np.float64)
    ab = _col(ns.alpha_bar_at(t), eps)
    if np.any(ab >= 1.0):
        raise ContractError("score undefined where alpha_bar_t = 1")
    return -eps / np.sqrt(1.0 - ab)


def score_to_eps(score, t, ns: NoiseSchedule):
    score = np.asarray(score, dtype=np.float64)
    ab = _col(ns.alpha_bar_at(t), score)
    if np.any(ab >= 1.0):
        raise ContractError("score undefined where alpha_bar_t = 1")
    return -score * np.sqrt(1.0 - ab)


def recover_eps(x_t, x0, t, ns: NoiseSchedule):
    """Invert :func:`perturb` for the noise given both endpoints."""
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = _col(ns.alpha_bar_at(t), x_t)
    return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


def posterior_q(x_t, x0, t, ns: NoiseSchedule):
    """Mean and variance of ``q(x_{t-1} | x_t, x0)``.

    The mean uses the two-coefficient form, which equals
    ``(x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)`` with the
    recovered noise and returns ``x0`` exactly at ``t = 1``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    _same_shape(x_t, x0, "posterior_q")
    t = ns._check_t(t)
    ab = ns.alpha_bar_at(t)
    ab_prev = ns.alpha_bar_at(t - 1)
    beta = ns.beta_at(t)
    # 1 - abar_1 and beta_1 differ in the last bit; pin the t = 1 weight to 1
    coef_x0 = _col(np.where(t == 1, 1.0, np.sqrt(ab_prev) * beta / (1.0 - ab)), x_t)
    coef_xt = _col(np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab), x_t)
    return coef_x0 * x0 + coef_xt * x_t, ns.beta_tilde_at(t)


def mu_theta(x_t, eps_hat, t, ns: NoiseSchedule):
    """Model posterior mean from a noise prediction."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _same_shape(x_t, eps_hat, "mu_theta")
    t = ns._check_t(t)
    beta = _col(ns.beta_at(t), x_t)
    ab = _col(ns.alpha_bar_at(t), x_t)
    return (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)


def model_log_variance(v, t, ns: NoiseSchedule):
    """``v log beta_t + (1 - v) log beta_tilde_t`` (requires ``t >= 2``)."""
    v = np.asarray(v, dtype=np.float64)
    t = ns._check_t(t)
    log_beta = _col(np.log(ns.beta_at(t)), v)
    log_bt = _col(np.log(np.maximum(ns.beta_tilde_at(t), np.finfo(float).tiny)), v)
    return v * log_beta + (1.0 - v) * log_bt


@dataclass
class LossConfig:
    """Weighting of the noise-regression loss.

    ``lambda_fn`` maps an integer step array to positive weights.  The same
    map serves as the weight of the score-matching form of the loss.
    """

    lambda_fn: Callable[[np.ndarray], np.ndarray] | None = None
    vlb_weight: float = 0.0
    learned_variance: bool = False

    def __post_init__(self):
        if self.vlb_weight < 0:
            raise ConfigurationError("vlb_weight must be non-negative")

    def weights(self, t):
        t = np.asarray(t)
        if self.lambda_fn is None:
            return np.ones(t.shape, dtype=np.float64)
        w = np.asarray(self.lambda_fn(t), dtype=np.float64)
        if np.any(w <= 0):
            raise ConfigurationError("lambda(t) must be positive")
        return np.broadcast_to(w, t.shape)


def vlb_lambda(ns: NoiseSchedule):
    """``beta_t^2 / (2 sigma^2 alpha_t (1 - abar_t))`` with ``sigma^2 = beta_t``.

    Using the forward variance keeps the weight finite at ``t = 1``.
    """
    w = ns.beta / (2.0 * ns.alpha * (1.0 - ns.alpha_bar))
    return lambda t: w[np.asarray(t) - 1]


def weighted_eps_loss(eps, eps_hat, weights):
    """Mean over the batch of ``w_i * ||eps_i - eps_hat_i||^2``.

    Returns:
        ``(loss, d_loss / d_eps_hat)``.
    """
    diff = eps_hat - eps
    n = diff.shape[0]
    w = _col(weights, diff)
    loss = float(np.sum(np.asarray(weights) * np.sum(diff * diff, axis=-1)) / n)
    return loss, 2.0 * w * diff / n


def loss_simple(batch, eps_hat_fn, ns: NoiseSchedule, cfg: LossConfig | None = None) -> float:
    """Weighted noise-regression loss over ``batch = (x0, t, eps)``.

    ``eps_hat_fn(x_t, t)`` is the predictor under test.
    """
    cfg = cfg or LossConfig()
    x0, t, eps = (np.asarray(a) for a in batch)
    x_t = perturb(x0, t, eps, ns)
    eps_hat = np.asarray(eps_hat_fn(x_t, t), dtype=np.float64)
    _same_shape(eps, eps_hat, "loss_simple")
    return weighted_eps_loss(eps, eps_hat, cfg.weights(t))[0]


def gaussian_kl(mean1, var1, mean2, logvar2):
    """Diagonal ``KL(N(mean1, var1) || N(mean2, exp(logvar2)))`` per element."""
    var2 = np.exp(logvar2)
    return 0.5 * (logvar2 - np.log(var1) + (var1 + (mean1 - mean2) ** 2) / var2 - 1.0)


def kl_vlb_term(x0, x_t, t, eps_hat, v, ns: NoiseSchedule):
    """KL between the true posterior and the learned-variance model transition.

    Summed over the last axis.  Rows with ``t = 1`` contribute exactly zero:
    that term is left to the simple loss instead of a discretized decoder.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any((v < 0) | (v > 1)):
        raise ContractError("variance interpolation v must lie in [0, 1]")
    t = ns._check_t(t)
    keep = t >= 2
    t_safe = np.where(keep, t, 2)
    mu_q, var_q = posterior_q(x_t, x0, t_safe, ns)
    mu_p = mu_theta(x_t, eps_hat, t_safe, ns)
    logvar_p = model_log_variance(v, t_safe, ns)
    kl = gaussian_kl(mu_q, _col(var_q, mu_q), mu_p, logvar_p).sum(axis=-1)
    return np.where(keep, kl, 0.0) if kl.ndim else (float(kl) if keep else 0.0)


def gaussian_oracle_eps(x_t, t, data_mean, data_std, ns: NoiseSchedule):
    """Optimal noise predictor when the data are ``N(data_mean, data_std^2 I)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = _col(ns.alpha_bar_at(t), x_t)
    m = np.asarray(data_mean, dtype=np.float64)
    return np.sqrt(1.0 - ab) * (x_t - np.sqrt(ab) * m) / (ab * data_std ** 2 + 1.0 - ab)


class GaussianOracle:
    """Stand-in score network returning :func:`gaussian_oracle_eps`.

    Exposes the same ``predict`` / ``flop_count`` surface as a network so the
    samplers can run against ground truth.
    """

    learned_variance = False

    def __init__(self, data_mean, data_std, ns: NoiseSchedule):
        self.data_mean = np.asarray(data_mean, dtype=np.float64)
        self.data_std = float(data_std)
        self.ns = ns

    @property
    def in_dim(self):
        return int(self.data_mean.size)

    def predict(self, x, t, exit_blocks=None):
        t = np.broadcast_to(np.asarray(t), np.shape(x)[:1])
        return gaussian_oracle_eps(x, t, self.data_mean, self.data_std, self.ns)

    def flop_count(self, exit_blocks=None):
        return 0
