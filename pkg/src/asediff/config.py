"""Run configuration: a strict JSON schema shared by every command.

Unknown keys are rejected so a typo in a sweep file fails loudly instead of
silently falling back to a default.  ``digest()`` hashes the canonical JSON
of everything except the output directory; it is stamped into every file a
run writes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .datasets import Dataset
from .diffusion import NoiseSchedule, linear_beta_schedule
from .errors import ConfigurationError
from .network import NetworkConfig
from .samplers import SamplerConfig
from .training import TrainConfig

OUTPUT_ENV = "ASE_OUTPUT_DIR"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class DatasetSpec(_Strict):
    kind: Literal["gaussian", "gmm_ring", "checkerboard", "tiny_blobs"] = "gmm_ring"
    dim: int = Field(2, ge=1)
    params: dict[str, float | int | list[float]] = Field(default_factory=dict)


class NetworkSpec(_Strict):
    topology: Literal["stack", "u_skip"] = "stack"
    n_blocks: int = Field(8, ge=1)
    width: int = Field(32, ge=1)
    time_embed_dim: int = Field(32, ge=2)
    ff_mult: int = Field(2, ge=1)
    learned_variance: bool = False
    dtype: Literal["float32", "float64"] = "float32"


class NoiseSpec(_Strict):
    T: int = Field(1000, ge=1)
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_kind: Literal["posterior", "beta"] = "posterior"


class ScheduleSpec(_Strict):
    """Either a named schedule or an explicit row of retained-block counts."""

    name: str | None = None
    row: list[int] | None = None
    min_blocks: int = Field(1, ge=1)
    K: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if self.name is not None and self.row is not None:
            raise ValueError("give either name or row, not both")
        return self


class TrainingSpec(_Strict):
    pretrain_iterations: int = Field(4000, ge=0)
    pretrain_lr: float = Field(2e-3, gt=0)
    finetune_iterations: int = Field(3000, ge=0)
    lr: float = Field(1e-4, gt=0)
    batch_size: int = Field(128, ge=1)
    weight_decay: float = Field(0.0, ge=0)
    ema_rate: float = Field(0.999, ge=0, le=1)
    cycle_C: int = Field(1500, ge=0)
    lambda_boost: float = Field(2.0, ge=1)
    noise_region_start: float = Field(0.5, gt=0, lt=1)
    plateau_patience: int | None = Field(None, ge=1)
    vlb_weight: float = Field(0.0, ge=0)
    log_every: int = Field(100, ge=0)


class SamplerSpec(_Strict):
    kind: Literal["ddpm", "ddim", "em", "langevin"] = "ddpm"
    n_steps: int = Field(50, ge=1)
    eta: float = Field(0.0, ge=0, le=1)
    langevin_step: float = Field(1e-4, gt=0)
    langevin_iters: int = Field(1, ge=0)
    batch: int = Field(8192, ge=1)


class MetricSpec(_Strict):
    n_proj: int = Field(256, ge=1)
    n_reference: int = Field(8192, ge=2)
    reference_seed: int = 99
    projection_seed: int = 0


class ExperimentSpec(_Strict):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    solvers: list[tuple[str, int]] = Field(default_factory=lambda: [("ddpm", 50)])
    schedules: list[str] = Field(default_factory=lambda: ["noise_easy", "data_easy"])
    include_raw: bool = True
    ablation_rows: list[list[int]] | None = None
    ablation_steps: list[int] = Field(default_factory=lambda: [25, 50])
    further_iterations: int = Field(3000, ge=0)
    expert_iterations: int = Field(3000, ge=0)
    mixed_k: list[int] = Field(default_factory=lambda: [5, 9])
    bench_schedules: list[str] = Field(default_factory=lambda: ["all-keep", "D3-DiT"])
    bench_repeats: int = Field(5, ge=1)
    bench_batch: int = Field(1024, ge=1)
    bench_steps: int = Field(20, ge=1)

    @field_validator("solvers")
    @classmethod
    def _solver_kinds(cls, v):
        for kind, n in v:
            if kind not in ("ddpm", "ddim", "em", "langevin") or n < 1:
                raise ValueError(f"bad solver entry ({kind!r}, {n})")
        return v


class RunConfig(_Strict):
    seed: int = 0
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    training: TrainingSpec = Field(default_factory=TrainingSpec)
    sampler: SamplerSpec = Field(default_factory=SamplerSpec)
    metrics: MetricSpec = Field(default_factory=MetricSpec)
    experiments: ExperimentSpec = Field(default_factory=ExperimentSpec)
    output_dir: str = "runs"

    # -- identity ----------------------------------------------------------

    def canonical_json(self) -> str:
        body = self.model_dump(mode="json", exclude={"output_dir"})
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical content."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    # -- builders ----------------------------------------------------------

    def build_dataset(self) -> Dataset:
        return Dataset(self.dataset.kind, self.dataset.dim, dict(self.dataset.params))

    def build_network_config(self) -> NetworkConfig:
        n = self.network
        return NetworkConfig(topology=n.topology, n_blocks=n.n_blocks, width=n.width,
                             in_dim=self.dataset.dim, time_embed_dim=n.time_embed_dim,
                             ff_mult=n.ff_mult, learned_variance=n.learned_variance,
                             T=self.noise.T)

    @property
    def dtype(self):
        return np.float32 if self.network.dtype == "float32" else np.float64

    def build_noise(self) -> NoiseSchedule:
        s = self.noise
        return linear_beta_schedule(s.T, s.beta_start, s.beta_end, s.sigma_kind)

    def pretrain_config(self) -> TrainConfig:
        tr = self.training
        return TrainConfig(batch_size=tr.batch_size, lr=tr.pretrain_lr, lr_schedule="cosine",
                           weight_decay=tr.weight_decay, log_every=tr.log_every)

    def finetune_config(self, **overrides) -> TrainConfig:
        tr = self.training
        kw = dict(batch_size=tr.batch_size, lr=tr.lr, weight_decay=tr.weight_decay,
                  ema_rate=tr.ema_rate, cycle_C=tr.cycle_C, lambda_boost=tr.lambda_boost,
                  noise_region_start=tr.noise_region_start,
                  plateau_patience=tr.plateau_patience, vlb_weight=tr.vlb_weight,
                  log_every=tr.log_every)
        kw.update(overrides)
        return TrainConfig(**kw)

    def sampler_config(self, seed: int | None = None, **overrides) -> SamplerConfig:
        s = self.sampler
        kw = dict(kind=s.kind, n_steps=s.n_steps, eta=s.eta, langevin_step=s.langevin_step,
                  langevin_iters=s.langevin_iters, batch=s.batch,
                  seed=self.seed if seed is None else seed)
        kw.update(overrides)
        return SamplerConfig(**kw)


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded JSON object; errors name the offending key."""
    try:
        # JSON-mode validation: arrays are accepted for tuple fields
        cfg = RunConfig.model_validate_json(json.dumps(data))
    except ValidationError as exc:
        raise ConfigurationError(f"invalid config: {_describe(exc)}") from None
    # cross-field checks the domain types perform on construction
    try:
        cfg.build_dataset()
        cfg.build_network_config()
        cfg.build_noise()
    except ConfigurationError as exc:
        raise ConfigurationError(f"invalid config: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid config: {path} is not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError("invalid config: top level must be an object")
    return parse_config(data)


__all__ = ["OUTPUT_ENV", "RunConfig", "load_config", "parse_config"]
