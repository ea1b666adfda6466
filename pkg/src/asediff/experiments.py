"""Benchmarks and experiment suites built from the library pieces.

Every runner is a pure function of ``(RunConfig, seeds)`` as far as the
emitted report content goes; wall-clock numbers live in ``wall_*`` columns
so determinism checks can ignore them.

Quality is measured against a fresh draw from the data distribution of
``metrics.n_reference`` points (seeded by ``metrics.reference_seed``), not
against the training samples.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint
from .config import RunConfig
from .errors import ConfigurationError
from .metrics import gaussian_frechet, sliced_wasserstein
from .network import ScoreNetwork
from .samplers import SamplerConfig, sample_loop
from .schedules import (Architecture, all_keep, interval_index,
                        make_named_schedule, predicted_acceleration, resolve_schedule)
from .training import finetune_ase, pretrain

log = logging.getLogger(__name__)

REFERENCE_NOTE = ("quality is measured against an equal-size fresh draw from the data "
                  "distribution, not the training set")


@dataclass
class MetricsReport:
    """One configuration's quality and cost."""

    label: str
    seed: int
    schedule: str
    row: str
    solver: str
    n_steps: int
    finetune_iterations: int
    sliced_wasserstein: float
    gaussian_frechet: float
    ridge_applied: bool
    predicted_accel: float
    flop_accel: float
    total_flops: int
    config_digest: str
    wall_time_s: float | None = None
    wall_measured_accel: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_row(self) -> dict:
        return asdict(self)


# -- evaluation helpers -----------------------------------------------------

def reference_samples(cfg: RunConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.metrics.reference_seed))
    return cfg.build_dataset().sample(cfg.metrics.n_reference, rng)


def score_samples(x, reference, cfg: RunConfig):
    """``(sliced_wasserstein, gaussian_frechet, ridge_applied)``."""
    sw = sliced_wasserstein(x, reference, cfg.metrics.n_proj, cfg.metrics.projection_seed)
    fd, ridge = gaussian_frechet(x, reference, return_flag=True)
    return sw, fd, ridge


def _row_text(sched) -> str:
    return "full" if sched is None else "-".join(map(str, sched.blocks))


def _report(label, seed, sched, arch, scfg: SamplerConfig, iterations, x, stats, base_flops,
            reference, cfg: RunConfig, base_time=None) -> MetricsReport:
    sw, fd, ridge = score_samples(x, reference, cfg)
    pred = 0.0 if sched is None else predicted_acceleration(sched, arch)
    wall_accel = None
    if base_time:
        wall_accel = 1.0 - stats.total_time / base_time
    return MetricsReport(
        label=label, seed=seed, schedule="full" if sched is None else sched.name,
        row=_row_text(sched), solver=scfg.kind, n_steps=scfg.n_steps,
        finetune_iterations=iterations, sliced_wasserstein=sw, gaussian_frechet=fd,
        ridge_applied=ridge, predicted_accel=pred,
        flop_accel=1.0 - stats.total_flops / base_flops, total_flops=stats.total_flops,
        config_digest=cfg.digest(), wall_time_s=stats.total_time, wall_measured_accel=wall_accel)


# -- acceleration benchmark -------------------------------------------------

def bench_acceleration(net: ScoreNetwork, schedules: list, sampler_cfg: SamplerConfig, ns,
                       repeats: int = 5, reference=None, cfg: RunConfig | None = None) -> list[dict]:
    """Time sampling under each schedule against the all-keep baseline.

    Runs are interleaved across schedules (one round per repeat) on a single
    BLAS thread.  ``measured_accel = 1 - median time / median baseline
    time``, where time is the summed network-forward time of one run.
    Quality columns are filled when ``reference`` (and ``cfg``) are given.
    """
    arch = Architecture.of(net)
    base = all_keep(arch, schedules[0].K if schedules else 10)
    for s in schedules:
        s.check_bound(net)
    runs = [base] + list(schedules)
    times = [[] for _ in runs]
    flops = [0] * len(runs)
    samples = [None] * len(runs)
    with threadpool_limits(limits=1):
        for r in range(repeats):
            for i, s in enumerate(runs):
                x, stats = sample_loop(net, s, sampler_cfg, ns)
                times[i].append(stats.total_time)
                flops[i] = stats.total_flops
                if r == 0:
                    samples[i] = x
    base_t = float(np.median(times[0]))
    rows = []
    for i, s in enumerate(runs):
        med = float(np.median(times[i]))
        row = {"schedule": "all-keep" if i == 0 else s.name, "row": _row_text(s),
               "mean_blocks": s.mean_blocks,
               "predicted_accel": predicted_acceleration(s, arch),
               "flop_accel": 1.0 - flops[i] / flops[0], "total_flops": flops[i]}
        if reference is not None and cfg is not None:
            sw, fd, _ = score_samples(samples[i], reference, cfg)
            row.update(sliced_wasserstein=sw, gaussian_frechet=fd)
        row["repeats"] = repeats
        row.update(wall_median_time_s=med, wall_measured_accel=1.0 - med / base_t)
        rows.append(row)
    return rows


# -- model provisioning -----------------------------------------------------

def pretrained_for_seed(cfg: RunConfig, seed: int, pretrained=None) -> ScoreNetwork:
    """The pretrained network for ``seed``.

    ``pretrained`` may be ``None`` (train now), a dict ``seed -> network or
    checkpoint path``, a single network, or a checkpoint path.
    """
    if isinstance(pretrained, dict):
        pretrained = pretrained.get(seed)
    if isinstance(pretrained, ScoreNetwork):
        return pretrained
    if pretrained is not None:
        net, _, _ = load_checkpoint(pretrained)
        return net
    return pretrain(cfg.build_network_config(), cfg.build_dataset(),
                    cfg.training.pretrain_iterations, seed, cfg.pretrain_config(),
                    cfg.build_noise(), dtype=cfg.dtype)


class IntervalRouter:
    """Serve each time interval with its own parameter set.

    ``models[k]`` answers every step whose ``t`` falls in interval ``k`` of
    ``K`` equal intervals; used for per-interval experts and mixed-k runs.
    FLOPs are those of the routed model at the requested depth.
    """

    def __init__(self, models: list, T: int):
        if not models:
            raise ConfigurationError("router needs at least one model")
        first = models[0]
        for m in models[1:]:
            if m.config != first.config:
                raise ConfigurationError("routed models must share one architecture")
        self.models = list(models)
        self.T = T
        self._index = all_keep(Architecture.of(first), len(models))

    @property
    def config(self):
        return self.models[0].config

    @property
    def in_dim(self):
        return self.models[0].in_dim

    @property
    def learned_variance(self):
        return self.models[0].learned_variance

    def _pick(self, t):
        k = np.unique(interval_index(self._index, np.asarray(t).reshape(-1), self.T))
        if k.size != 1:
            raise ConfigurationError("router needs all rows of a call in one interval")
        return self.models[int(k[0])]

    def forward(self, x, t, exit_blocks=None):
        return self._pick(t).forward(x, t, exit_blocks)

    def predict(self, x, t, exit_blocks=None):
        return self._pick(t).predict(x, t, exit_blocks)

    def flop_count(self, exit_blocks=None):
        return self.models[0].flop_count(exit_blocks)


# -- suites -----------------------------------------------------------------

def _evaluate_all(label, seed, model, sched, arch, iterations, reference, cfg, ns, base):
    """One report per configured solver; ``base`` maps solver -> (flops, time)."""
    out = []
    for kind, n in cfg.experiments.solvers:
        scfg = cfg.sampler_config(seed=seed, kind=kind, n_steps=n)
        x, stats = sample_loop(model, sched, scfg, ns)
        key = (kind, n)
        if key not in base:
            base[key] = (stats.total_flops, stats.total_time)
        b_flops, b_time = base[key]
        out.append(_report(label, seed, sched, arch, scfg, iterations, x, stats, b_flops,
                           reference, cfg, b_time))
    return out


def run_tradeoff_experiment(cfg: RunConfig, pretrained=None, schedules=None,
                            seeds=None) -> list[MetricsReport]:
    """Fine-tune under each schedule and measure quality per solver.

    Rows per seed: the full pretrained model, then for each schedule the
    zero-iteration (raw early-exit) model when ``include_raw`` is set and the
    fine-tuned teacher.
    """
    ns = cfg.build_noise()
    ds = cfg.build_dataset()
    reference = reference_samples(cfg)
    names = schedules if schedules is not None else cfg.experiments.schedules
    seeds = cfg.experiments.seeds if seeds is None else seeds
    iters = cfg.training.finetune_iterations
    reports = []
    for seed in seeds:
        net = pretrained_for_seed(cfg, seed, pretrained)
        arch = Architecture.of(net)
        base = {}
        reports += _evaluate_all("full", seed, net, None, arch, 0, reference, cfg, ns, base)
        for name in names:
            sched = resolve_schedule(name, arch, cfg.schedule.min_blocks, cfg.schedule.K)
            if cfg.experiments.include_raw:
                reports += _evaluate_all(f"{name}/raw", seed, net, sched, arch, 0, reference,
                                         cfg, ns, base)
            teacher = finetune_ase(net, sched, ds, cfg.finetune_config(), iters, seed + 2, ns=ns)
            reports += _evaluate_all(name, seed, teacher, sched, arch, iters, reference, cfg,
                                     ns, base)
            log.info("seed %d %s done", seed, name)
    return reports


def run_negative_transfer_suite(cfg: RunConfig, pretrained=None, seeds=None,
                                reduced: str | None = None) -> list[MetricsReport]:
    """baseline / further_trained / multi_experts / mixed_k per seed.

    * further_trained: the pretrained model trained on for
      ``further_iterations`` at full depth (EMA teacher, no reweighting).
    * multi_experts: one copy per interval, each trained for
      ``expert_iterations`` on steps of its own interval only, then routed.
    * mixed_k: the baseline everywhere except interval ``k``, which is served
      by the model fine-tuned under ``reduced`` (default: the configured
      schedule) at that schedule's depth for interval ``k``.
    """
    ns = cfg.build_noise()
    ds = cfg.build_dataset()
    reference = reference_samples(cfg)
    seeds = cfg.experiments.seeds if seeds is None else seeds
    ex = cfg.experiments
    reduced = reduced or cfg.schedule.name or "noise_easy"
    reports = []
    for seed in seeds:
        net = pretrained_for_seed(cfg, seed, pretrained)
        arch = Architecture.of(net)
        K = cfg.schedule.K
        for k in ex.mixed_k:
            if not 0 <= k < K:
                raise ConfigurationError(f"mixed_k index {k} outside [0, {K})")
        base = {}
        reports += _evaluate_all("baseline", seed, net, None, arch, 0, reference, cfg, ns, base)

        further = finetune_ase(net, None, ds, cfg.finetune_config(), ex.further_iterations,
                               seed + 3, ns=ns, reweight=False)
        reports += _evaluate_all("further_trained", seed, further, None, arch,
                                 ex.further_iterations, reference, cfg, ns, base)

        experts = []
        for k in range(K):
            tcfg = cfg.finetune_config(t_range=(k / K, (k + 1) / K))
            experts.append(finetune_ase(net, None, ds, tcfg, ex.expert_iterations,
                                        seed + 100 + k, ns=ns, reweight=False))
        reports += _evaluate_all("multi_experts", seed, IntervalRouter(experts, ns.T), None,
                                 arch, ex.expert_iterations, reference, cfg, ns, base)

        red = resolve_schedule(reduced, arch, cfg.schedule.min_blocks, K)
        ase = finetune_ase(net, red, ds, cfg.finetune_config(), cfg.training.finetune_iterations,
                           seed + 2, ns=ns)
        for k in ex.mixed_k:
            sched = make_named_schedule("mixed_k", arch, k=k, reduced=red.blocks, K=K)
            models = [net] * K
            models[k] = ase
            reports += _evaluate_all(f"mixed_{k}", seed, IntervalRouter(models, ns.T), sched,
                                     arch, cfg.training.finetune_iterations, reference, cfg,
                                     ns, base)
        log.info("seed %d suite done", seed)
    return reports


def run_ablation_schedules(rows, cfg: RunConfig, pretrained=None, seeds=None) -> list[MetricsReport]:
    """Fine-tune each equal-total row and evaluate it at two step counts."""
    rows = [tuple(int(s) for s in r) for r in rows]
    if len({sum(r) for r in rows}) > 1:
        raise ConfigurationError(f"ablation rows must share one total, got {[sum(r) for r in rows]}")
    steps = cfg.experiments.ablation_steps
    if len(steps) != 2:
        raise ConfigurationError("ablation_steps must list exactly two step counts")
    ns = cfg.build_noise()
    ds = cfg.build_dataset()
    reference = reference_samples(cfg)
    seeds = [cfg.seed] if seeds is None else seeds
    kind = cfg.sampler.kind
    reports = []
    for seed in seeds:
        net = pretrained_for_seed(cfg, seed, pretrained)
        arch = Architecture.of(net)
        for i, row in enumerate(rows):
            sched = make_named_schedule("ablation", arch, row=row, name=f"ablation_{i + 1}")
            teacher = finetune_ase(net, sched, ds, cfg.finetune_config(),
                                   cfg.training.finetune_iterations, seed + 2, ns=ns)
            for n in steps:
                scfg = cfg.sampler_config(seed=seed, kind=kind, n_steps=n)
                x, stats = sample_loop(teacher, sched, scfg, ns)
                full_flops = len(stats.step_t) * net.flop_count(None)
                reports.append(_report(f"ablation_{i + 1}", seed, sched, arch, scfg,
                                       cfg.training.finetune_iterations, x, stats, full_flops,
                                       reference, cfg))
    return reports


# -- report files -----------------------------------------------------------

def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_reports(rows, out_dir, stem: str, digest: str, notes: list[str] | None = None):
    """Write ``<stem>.csv`` and its JSON mirror ``<stem>.json``.

    ``rows`` are :class:`MetricsReport` objects or plain dicts.  Columns keep
    their first-seen order; timing columns (``wall_*``) are moved last.
    """
    dict_rows = [r.to_row() if isinstance(r, MetricsReport) else dict(r) for r in rows]
    for r in dict_rows:
        r.setdefault("config_digest", digest)
    columns = []
    for r in dict_rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    columns = [c for c in columns if not c.startswith("wall_")] + \
              [c for c in columns if c.startswith("wall_")]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(_csv_text(dict_rows, columns))
    mirror = {"config_digest": digest, "columns": columns, "notes": list(notes or []),
              "rows": [{k: _jsonable(r.get(k)) for k in columns} for r in dict_rows]}
    json_path.write_text(json.dumps(mirror, indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


def strip_wall(rows) -> list[dict]:
    """Rows without their ``wall_*`` columns (for determinism comparisons)."""
    out = []
    for r in rows:
        d = r.to_row() if isinstance(r, MetricsReport) else dict(r)
        out.append({k: v for k, v in d.items() if not k.startswith("wall_")})
    return out


def compare_pairs(reports, better: str, worse: str, metric: str = "sliced_wasserstein"):
    """Per seed, is ``better``'s metric strictly below ``worse``'s?

    Compares the first solver row of each label.  Returns ``{seed: bool}``.
    """
    first = {}
    for r in reports:
        first.setdefault((r.seed, r.label), getattr(r, metric))
    seeds = sorted({s for s, _ in first})
    return {s: first[(s, better)] < first[(s, worse)] for s in seeds
            if (s, better) in first and (s, worse) in first}


__all__ = ["IntervalRouter", "MetricsReport", "REFERENCE_NOTE", "bench_acceleration",
           "compare_pairs", "pretrained_for_seed", "reference_samples",
           "run_ablation_schedules", "run_negative_transfer_suite", "run_tradeoff_experiment",
           "score_samples", "strip_wall", "write_reports"]
