"""Low-dimensional toy data distributions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

KINDS = ("gaussian", "gmm_ring", "checkerboard", "tiny_blobs")


@dataclass(frozen=True)
class Dataset:
    """A samplable toy distribution.

    Parameters by kind (all optional, defaults in brackets):

    * ``gaussian``: ``mean`` [zeros], ``std`` [1.0]
    * ``gmm_ring``: ``n_modes`` [8], ``radius`` [1.0], ``std`` [0.1]
    * ``checkerboard``: ``n_squares`` [4] per side over ``[-2, 2]^2``
    * ``tiny_blobs``: ``n_blobs`` [4], ``std`` [0.15], ``spread`` [2.0],
      ``center_seed`` [0]
    """

    kind: str = "gmm_ring"
    dim: int = 2
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if self.kind in ("gmm_ring", "checkerboard") and self.dim != 2:
            raise ConfigurationError(f"{self.kind} is two-dimensional")
        weights = self.weights
        if weights is not None and (np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0)):
            raise ConfigurationError("mixture weights must be positive and sum to 1")

    @property
    def weights(self):
        if self.kind == "gmm_ring":
            n = self.params.get("n_modes", 8)
        elif self.kind == "tiny_blobs":
            n = self.params.get("n_blobs", 4)
        else:
            return None
        w = self.params.get("weights")
        return np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=np.float64)

    def centers(self) -> np.ndarray:
        if self.kind == "gmm_ring":
            n = self.params.get("n_modes", 8)
            r = self.params.get("radius", 1.0)
            ang = 2 * np.pi * np.arange(n) / n
            return r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        if self.kind == "tiny_blobs":
            rng = np.random.default_rng(self.params.get("center_seed", 0))
            n = self.params.get("n_blobs", 4)
            return rng.uniform(-1, 1, size=(n, self.dim)) * self.params.get("spread", 2.0)
        raise ConfigurationError(f"{self.kind} has no mixture centers")

    @property
    def mean(self) -> np.ndarray:
        if self.kind == "gaussian":
            return np.asarray(self.params.get("mean", np.zeros(self.dim)), dtype=np.float64)
        if self.kind == "checkerboard":
            return np.zeros(2)
        return self.weights @ self.centers()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean + self.params.get("std", 1.0) * rng.standard_normal((n, self.dim))
        if self.kind in ("gmm_ring", "tiny_blobs"):
            std = self.params.get("std", 0.1 if self.kind == "gmm_ring" else 0.15)
            idx = rng.choice(len(self.weights), size=n, p=self.weights)
            return self.centers()[idx] + std * rng.standard_normal((n, self.dim))
        m = self.params.get("n_squares", 4)
        side = 4.0 / m
        cells = [(i, j) for i in range(m) for j in range(m) if (i + j) % 2 == 0]
        pick = np.asarray(cells)[rng.integers(len(cells), size=n)]
        return -2.0 + side * (pick + rng.uniform(size=(n, 2)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "params": dict(self.params)}
