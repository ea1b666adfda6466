"""Sample-quality distances for low-dimensional point sets."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

RIDGE = 1e-8


def _as_points(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ContractError(f"{name} must be a non-empty (n, dim) array")
    return a


def random_directions(n_proj: int, dim: int, seed: int) -> np.ndarray:
    """``n_proj`` unit vectors, uniform on the sphere."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5717]))
    d = rng.standard_normal((n_proj, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _quantiles(proj, n):
    """Empirical quantile function at ``n`` midpoints for each projection column."""
    s = np.sort(proj, axis=0)
    if s.shape[0] == n:
        return s
    levels = (np.arange(n) + 0.5) / n
    src = (np.arange(s.shape[0]) + 0.5) / s.shape[0]
    return np.stack([np.interp(levels, src, s[:, j]) for j in range(s.shape[1])], axis=1)


def sliced_wasserstein(A, B, n_proj: int = 256, seed: int = 0) -> float:
    """Mean over random directions of the 1-D 2-Wasserstein distance.

    Equal-size sets use the sorted-match formula; unequal sizes are compared
    through their empirical quantile functions on a common grid.
    """
    A = _as_points(A, "A")
    B = _as_points(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ContractError("point sets differ in dimension")
    if n_proj < 1:
        raise ContractError("n_proj must be >= 1")
    dirs = random_directions(n_proj, A.shape[1], seed)
    n = max(A.shape[0], B.shape[0])
    qa = _quantiles(A @ dirs.T, n)
    qb = _quantiles(B @ dirs.T, n)
    return float(np.mean(np.sqrt(np.mean((qa - qb) ** 2, axis=0))))


def _sqrtm_psd(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_from_moments(mu1, cov1, mu2, cov2):
    """``|mu1 - mu2|^2 + tr(C1 + C2 - 2 (C1 C2)^{1/2})``.

    The cross term is computed as ``tr sqrt(C1^{1/2} C2 C1^{1/2})``, which is
    symmetric PSD.  A ridge of 1e-8 is added when either covariance is
    singular.

    Returns:
        ``(distance, ridge_applied)``.
    """
    cov1 = np.atleast_2d(cov1)
    cov2 = np.atleast_2d(cov2)
    ridge = False
    for c in (cov1, cov2):
        if np.linalg.eigvalsh((c + c.T) / 2).min() <= 0:
            ridge = True
    if ridge:
        eye = RIDGE * np.eye(cov1.shape[0])
        cov1, cov2 = cov1 + eye, cov2 + eye
    r1 = _sqrtm_psd(cov1)
    cross = np.linalg.eigvalsh(r1 @ cov2 @ r1)
    tr_cross = float(np.sum(np.sqrt(np.clip(cross, 0, None))))
    diff = np.asarray(mu1) - np.asarray(mu2)
    d = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_cross)
    return max(d, 0.0), ridge


def gaussian_frechet(A, B, return_flag: bool = False):
    """Frechet distance between Gaussians fitted to two point sets."""
    A = _as_points(A, "A")
    B = _as_points(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ContractError("point sets differ in dimension")
    if min(A.shape[0], B.shape[0]) <= A.shape[1]:
        raise ContractError("need more samples than dimensions to fit a covariance")
    d, ridge = frechet_from_moments(A.mean(0), np.cov(A, rowvar=False),
                                    B.mean(0), np.cov(B, rowvar=False))
    return (d, ridge) if return_flag else d
