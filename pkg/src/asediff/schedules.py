"""Exit schedules: how many blocks run in each time interval.

Rows are ordered from the data interval ``[0, 0.1)`` to the noise interval
``[0.9, 1.0]``.  Step ``t`` of ``T`` falls in interval
``k = min(K - 1, floor(K (t - 1) / T))``, so ``t = 1`` is always in the data
interval and ``t = T`` in the noise interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CatalogError, ConfigurationError, MismatchError

ARCHES = ("stack", "u_skip")


@dataclass(frozen=True)
class Architecture:
    """Block layout for the cost model.

    ``stack`` uses ``n_blocks``; ``u_skip`` uses ``n_encoder`` (== decoder).
    """

    kind: str
    n_blocks: int = 0
    n_encoder: int = 0

    @classmethod
    def stack(cls, n_blocks: int) -> "Architecture":
        return cls("stack", n_blocks=n_blocks)

    @classmethod
    def u_skip(cls, n_encoder: int) -> "Architecture":
        return cls("u_skip", n_blocks=2 * n_encoder + 1, n_encoder=n_encoder)

    @classmethod
    def of(cls, net_or_config) -> "Architecture":
        cfg = getattr(net_or_config, "config", net_or_config)
        if cfg.topology == "stack":
            return cls.stack(cfg.n_blocks)
        return cls.u_skip(cfg.n_encoder)

    @property
    def block_limit(self) -> int:
        return self.n_blocks if self.kind == "stack" else self.n_encoder


# Catalog rows target a 28-block DiT-style stack and a 6-1-6 U-ViT-style layout.
CATALOG_SCALE = {"stack": Architecture.stack(28), "u_skip": Architecture.u_skip(6)}

DN_CATALOG = {
    "D2-DiT": ("stack", (28, 28, 25, 25, 22, 22, 19, 19, 16, 16), 0.2343),
    "D3-DiT": ("stack", (28, 28, 24, 24, 20, 20, 16, 16, 12, 12), 0.3046),
    "D4-DiT": ("stack", (28, 28, 26, 24, 20, 18, 12, 10, 8, 8), 0.3456),
    "D7-DiT": ("stack", (28, 28, 24, 21, 18, 15, 10, 10, 8, 8), 0.3892),
    "D1-U-ViT": ("u_skip", (6, 6, 4, 4, 2, 2, 2, 2, 1, 1), 0.213),
    "D2-U-ViT": ("u_skip", (5, 5, 4, 4, 2, 2, 1, 1, 1, 1), 0.248),
    "D3-U-ViT": ("u_skip", (3, 3, 2, 2, 2, 2, 1, 1, 1, 1), 0.297),
    "D6-U-ViT": ("u_skip", (2, 2, 2, 2, 1, 1, 1, 1, 1, 1), 0.326),
}


@dataclass(frozen=True)
class ExitSchedule:
    """Per-interval retained block counts bound to an architecture kind."""

    blocks: tuple[int, ...]
    arch: str
    block_limit: int
    name: str = "custom"
    edges: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        blocks = tuple(int(b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if self.arch not in ARCHES:
            raise ConfigurationError(f"unknown architecture {self.arch!r}")
        if not blocks:
            raise ConfigurationError("schedule needs at least one interval")
        bad = [b for b in blocks if not 1 <= b <= self.block_limit]
        if bad:
            raise ConfigurationError(
                f"schedule {self.name!r}: block counts {bad} outside [1, {self.block_limit}]")
        if self.edges is not None:
            edges = tuple(float(e) for e in self.edges)
            if (len(edges) != len(blocks) + 1 or edges[0] != 0.0 or edges[-1] != 1.0
                    or any(b <= a for a, b in zip(edges, edges[1:]))):
                raise ConfigurationError("edges must increase from 0 to 1, one more than blocks")
            object.__setattr__(self, "edges", edges)

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def mean_blocks(self) -> float:
        return float(np.mean(self.blocks))

    def interval_edges(self) -> np.ndarray:
        if self.edges is None:
            return np.linspace(0.0, 1.0, self.K + 1)
        return np.asarray(self.edges)

    def check_bound(self, net_or_config):
        arch = Architecture.of(net_or_config)
        if arch.kind != self.arch or arch.block_limit != self.block_limit:
            raise MismatchError(
                f"schedule {self.name!r} is bound to {self.arch}/{self.block_limit}, "
                f"network is {arch.kind}/{arch.block_limit}")

    def to_dict(self) -> dict:
        out = {"name": self.name, "arch": self.arch, "block_limit": self.block_limit,
               "blocks": list(self.blocks)}
        if self.edges is not None:
            out["edges"] = list(self.edges)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExitSchedule":
        edges = d.get("edges")
        return cls(tuple(d["blocks"]), d["arch"], int(d["block_limit"]), d.get("name", "custom"),
                   None if edges is None else tuple(edges))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExitSchedule":
        return cls.from_dict(json.loads(text))


def all_keep(arch: Architecture, K: int = 10) -> ExitSchedule:
    return ExitSchedule((arch.block_limit,) * K, arch.kind, arch.block_limit, "all-keep")


def scale_row(row, source_limit: int, target_limit: int) -> tuple[int, ...]:
    """``max(1, round(S * target / source))`` with halves rounded up."""
    return tuple(max(1, math.floor(s * target_limit / source_limit + 0.5)) for s in row)


def make_dn_schedule(name: str, target_limit: int | None = None) -> ExitSchedule:
    """Catalog D-n schedule; unscaled unless ``target_limit`` is given.

    ``target_limit`` is the toy network's block limit (N for stack, decoder
    depth for u_skip).
    """
    if name not in DN_CATALOG:
        raise CatalogError(f"unknown schedule {name!r}; known: {sorted(DN_CATALOG)}")
    arch, row, _ = DN_CATALOG[name]
    source = CATALOG_SCALE[arch].block_limit
    if target_limit is None or target_limit == source:
        return ExitSchedule(row, arch, source, name)
    return ExitSchedule(scale_row(row, source, target_limit), arch, target_limit,
                        f"{name}@{target_limit}")


def reported_acceleration(name: str) -> float:
    """Wall-clock acceleration reported alongside a catalog row."""
    if name not in DN_CATALOG:
        raise CatalogError(f"unknown schedule {name!r}")
    return DN_CATALOG[name][2]


def interval_index(sched: ExitSchedule, t, T: int):
    """Interval of step ``t`` (scalar or array) using ``u' = (t - 1) / T``."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > T):
        raise ConfigurationError(f"time step out of range [1, {T}]")
    if sched.edges is None:
        k = np.floor_divide(sched.K * (t.astype(np.int64) - 1), T)
    else:
        k = np.searchsorted(np.asarray(sched.edges), (t - 1) / T, side="right") - 1
    k = np.minimum(k, sched.K - 1)
    return int(k) if k.ndim == 0 else k


def lookup_blocks(sched: ExitSchedule, t, T: int):
    """Retained block count ``S(t)``."""
    k = interval_index(sched, t, T)
    row = np.asarray(sched.blocks)
    return int(row[k]) if np.ndim(k) == 0 else row[k]


def predicted_acceleration(sched: ExitSchedule, arch: Architecture, weights=None) -> float:
    """Fraction of block compute saved, averaged over intervals.

    ``weights`` optionally gives per-interval time fractions (e.g. from a
    non-uniform solver grid); the default weights intervals equally.  Merge
    maps of reduced u_skip decoder blocks are treated as free.
    """
    if sched.arch != arch.kind or sched.block_limit != arch.block_limit:
        raise ConfigurationError("schedule is not bound to this architecture")
    blocks = np.asarray(sched.blocks, dtype=np.float64)
    if weights is None:
        mean_s = float(np.mean(blocks))
    else:
        w = np.asarray(weights, dtype=np.float64)
        mean_s = float(np.sum(w * blocks) / np.sum(w))
    if arch.kind == "stack":
        return 1.0 - mean_s / arch.n_blocks
    fixed = arch.n_encoder + 1
    return 1.0 - (fixed + mean_s) / (fixed + arch.n_encoder)


def grid_interval_weights(sched: ExitSchedule, steps, T: int) -> np.ndarray:
    """Fraction of solver steps landing in each interval."""
    k = np.atleast_1d(interval_index(sched, np.asarray(steps), T))
    return np.bincount(k, minlength=sched.K) / k.size


def _ramp(high: int, low: int, K: int) -> tuple[int, ...]:
    if K == 1:
        return (high,)
    return tuple(math.floor(high - (high - low) * k / (K - 1) + 0.5) for k in range(K))


@dataclass(frozen=True)
class ExpertPartition:
    """K intervals, each served by its own full-depth parameter set."""

    edges: tuple[float, ...]
    arch: str
    block_limit: int

    @property
    def K(self) -> int:
        return len(self.edges) - 1

    def schedules(self) -> list[ExitSchedule]:
        """One full-depth schedule per expert, in interval order."""
        return [ExitSchedule((self.block_limit,) * self.K, self.arch, self.block_limit,
                             f"expert-{k}") for k in range(self.K)]


def make_named_schedule(kind: str, arch: Architecture, **params):
    """Build one of the named schedule families.

    Kinds:
        ``noise_easy`` (``min_blocks``, ``K``): ramp from full depth at the
        data end down to ``min_blocks`` at the noise end.
        ``data_easy``: the reversed ``noise_easy`` row.
        ``ablation`` (``row``): a user-supplied row, e.g. one of the
        equal-total ablation schedules.
        ``mixed_k`` (``k``, ``reduced``): full depth except interval ``k``,
        which takes ``reduced`` (an int, or a row to read index ``k`` from).
        ``experts`` (``K``): an :class:`ExpertPartition`.
    """
    limit = arch.block_limit
    K = int(params.get("K", 10))
    if kind in ("noise_easy", "data_easy"):
        low = int(params.get("min_blocks", 1))
        row = _ramp(limit, low, K)
        if kind == "data_easy":
            row = row[::-1]
        return ExitSchedule(row, arch.kind, limit, f"{kind}-{low}")
    if kind == "ablation":
        row = tuple(params["row"])
        return ExitSchedule(row, arch.kind, limit, params.get("name", "ablation"))
    if kind == "mixed_k":
        k = int(params["k"])
        if not 0 <= k < K:
            raise ConfigurationError(f"mixed_k index {k} outside [0, {K})")
        reduced = params["reduced"]
        s_k = int(reduced[k]) if np.ndim(reduced) else int(reduced)
        row = [limit] * K
        row[k] = s_k
        return ExitSchedule(tuple(row), arch.kind, limit, f"mixed-{k}")
    if kind == "experts":
        return ExpertPartition(tuple(np.linspace(0.0, 1.0, K + 1)), arch.kind, limit)
    raise ConfigurationError(f"unknown schedule kind {kind!r}")


def parse_row(text: str) -> tuple[int, ...] | None:
    """``"8,8,6,4"`` -> ``(8, 8, 6, 4)``; ``None`` if ``text`` is not a row."""
    parts = [p.strip() for p in str(text).split(",")]
    if not all(p.isdigit() for p in parts):
        return None
    return tuple(int(p) for p in parts)


def resolve_schedule(spec, arch: Architecture, min_blocks: int = 1, K: int = 10) -> ExitSchedule:
    """Turn a name or row into a schedule bound to ``arch``.

    Accepted: ``"all-keep"``, ``"noise_easy"``, ``"data_easy"``, a catalog
    name (scaled proportionally when ``arch`` is smaller than the catalog
    scale), a comma-separated row string or a sequence of ints.

    Raises:
        CatalogError: unknown name.
        MismatchError: the catalog row targets the other topology, or the
            row does not fit ``arch``.
    """
    if not isinstance(spec, str):
        row = tuple(int(s) for s in spec)
    else:
        row = parse_row(spec)
    if row is not None:
        try:
            return ExitSchedule(row, arch.kind, arch.block_limit, "custom")
        except ConfigurationError as exc:
            raise MismatchError(str(exc)) from None
    name = spec
    if name in ("all-keep", "all_keep"):
        return all_keep(arch, K)
    if name in ("noise_easy", "data_easy"):
        return make_named_schedule(name, arch, min_blocks=min_blocks, K=K)
    if name not in DN_CATALOG:
        raise CatalogError(f"unknown schedule {name!r}; known: all-keep, noise_easy, data_easy, "
                           f"{', '.join(sorted(DN_CATALOG))}")
    cat_arch = DN_CATALOG[name][0]
    if cat_arch != arch.kind:
        raise MismatchError(f"{name} is a {cat_arch} schedule, network topology is {arch.kind}")
    return make_dn_schedule(name, arch.block_limit)
