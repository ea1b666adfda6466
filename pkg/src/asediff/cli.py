"""Command-line entry point.

Exit codes: 0 success, 1 training/runtime failure, 2 invalid configuration
or usage, 3 architecture/schedule mismatch, 4 missing or unreadable input
file, 5 unknown schedule name.

Outputs go to ``--out-dir``, else ``$ASE_OUTPUT_DIR``, else the config's
``output_dir``.  Every file written carries the config digest.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, load_samples, save_checkpoint, save_samples
from .config import OUTPUT_ENV, RunConfig, load_config
from .errors import CatalogError, ConfigurationError, MismatchError, TrainingError
from .experiments import (REFERENCE_NOTE, bench_acceleration, reference_samples,
                          run_ablation_schedules, run_negative_transfer_suite,
                          run_tradeoff_experiment, score_samples, write_reports)
from .samplers import sample_loop
from .schedules import (CATALOG_SCALE, DN_CATALOG, Architecture, make_dn_schedule, parse_row,
                        predicted_acceleration, reported_acceleration, resolve_schedule)
from .training import Trainer, pretrain

log = logging.getLogger("asediff")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISMATCH, EXIT_MISSING, EXIT_CATALOG = 0, 1, 2, 3, 4, 5


def _out_dir(args, cfg: RunConfig) -> Path:
    d = Path(args.out_dir) if getattr(args, "out_dir", None) else cfg.resolved_output_dir()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_net(path, cfg: RunConfig):
    net, ns, meta = load_checkpoint(path)
    want = cfg.build_network_config()
    if net.config != want:
        raise MismatchError(f"checkpoint network {net.config.to_dict()} differs from the "
                            f"config's {want.to_dict()}")
    return net, ns, meta


def _schedule(spec, net, cfg: RunConfig):
    if spec is None:
        spec = cfg.schedule.row if cfg.schedule.row is not None else cfg.schedule.name
    if spec is None:
        return None
    return resolve_schedule(spec, Architecture.of(net), cfg.schedule.min_blocks, cfg.schedule.K)


# -- commands ---------------------------------------------------------------

def cmd_pretrain(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    iters = cfg.training.pretrain_iterations if args.iterations is None else args.iterations
    history = []
    start = time.perf_counter()
    net = pretrain(cfg.build_network_config(), cfg.build_dataset(), iters, cfg.seed,
                   cfg.pretrain_config(), cfg.build_noise(), history=history, dtype=cfg.dtype)
    ckpt = out / (args.name or "pretrain.ckpt")
    save_checkpoint(ckpt, net, cfg.build_noise(), {"config_digest": cfg.digest()})
    _write_json(ckpt.with_suffix(".log.json"), {
        "command": "pretrain", "config_digest": cfg.digest(), "seed": cfg.seed,
        "iterations": iters, "history": history,
        "wall_time_s": time.perf_counter() - start})
    print(f"wrote {ckpt}")
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    net, ns, _ = _load_net(args.checkpoint, cfg)
    sched = _schedule(args.schedule, net, cfg)
    iters = cfg.training.finetune_iterations if args.iterations is None else args.iterations
    trainer = Trainer(net.astype(cfg.dtype), cfg.build_dataset(), ns, cfg.finetune_config(),
                      cfg.seed + 2, schedule=sched, use_ema=True, reweight=True,
                      total_iterations=iters)
    start = time.perf_counter()
    trainer.run(iters)
    ckpt = out / (args.name or "finetune.ckpt")
    save_checkpoint(ckpt, trainer.state.teacher, ns, {"config_digest": cfg.digest()})
    _write_json(ckpt.with_suffix(".log.json"), {
        "command": "finetune", "config_digest": cfg.digest(), "seed": cfg.seed,
        "iterations": iters, "schedule": None if sched is None else sched.to_dict(),
        "history": trainer.history, "wall_time_s": time.perf_counter() - start})
    print(f"wrote {ckpt}")
    return EXIT_OK


def cmd_sample(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    net, ns, _ = _load_net(args.checkpoint, cfg)
    sched = _schedule(args.schedule, net, cfg)
    overrides = {}
    if args.n is not None:
        overrides["batch"] = args.n
    scfg = cfg.sampler_config(seed=cfg.seed if args.seed is None else args.seed, **overrides)
    x, stats = sample_loop(net, sched, scfg, ns)
    path = out / (args.name or "samples.f32")
    save_samples(path, x, cfg.digest())
    d = stats.to_dict()
    _write_json(path.with_suffix(".stats.json"), {
        "config_digest": cfg.digest(), "sampler": vars(scfg) | {"step_grid": None},
        "schedule": None if sched is None else sched.to_dict(),
        "total_flops": d["total_flops"], "step_t": d["step_t"], "step_blocks": d["step_blocks"],
        "step_flops": d["step_flops"],
        "wall_total_time_s": d["total_time"], "wall_step_times_s": d["step_times"]})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    net, ns, _ = _load_net(args.checkpoint, cfg)
    names = args.schedules.split(";") if args.schedules else cfg.experiments.bench_schedules
    arch = Architecture.of(net)
    scheds = [resolve_schedule(n, arch, cfg.schedule.min_blocks, cfg.schedule.K)
              for n in names if n not in ("all-keep", "all_keep")]
    scfg = cfg.sampler_config(batch=cfg.experiments.bench_batch,
                              n_steps=cfg.experiments.bench_steps)
    rows = bench_acceleration(net, scheds, scfg, ns, cfg.experiments.bench_repeats,
                              reference_samples(cfg), cfg)
    paths = write_reports(rows, out, args.name or "bench", cfg.digest())
    for r in rows:
        print(f"{r['schedule']:>14}  predicted {r['predicted_accel']:.2%}  "
              f"flops {r['flop_accel']:.2%}  measured {r['wall_measured_accel']:.2%}")
    print(f"wrote {paths[0]}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    x, _ = load_samples(args.samples)
    if args.reference:
        ref, _ = load_samples(args.reference)
        source = str(args.reference)
    else:
        ref = reference_samples(cfg)
        source = "fresh draw"
    sw, fd, ridge = score_samples(x, ref, cfg)
    row = {"samples": str(args.samples), "reference": source, "n": int(x.shape[0]),
           "sliced_wasserstein": sw, "gaussian_frechet": fd, "ridge_applied": ridge}
    notes = [] if args.reference else [REFERENCE_NOTE]
    paths = write_reports([row], out, args.name or "eval", cfg.digest(), notes)
    print(f"sliced_wasserstein {sw:.6g}  gaussian_frechet {fd:.6g}")
    print(f"wrote {paths[0]}")
    return EXIT_OK


def _parse_arch(text: str) -> Architecture:
    try:
        kind, n = text.split(":")
        n = int(n)
    except ValueError:
        raise ConfigurationError(f"--arch must look like stack:8 or u_skip:3, got {text!r}") from None
    if kind == "stack":
        return Architecture.stack(n)
    if kind == "u_skip":
        return Architecture.u_skip(n)
    raise ConfigurationError(f"unknown topology {kind!r}")


def cmd_schedule_info(args) -> int:
    spec = args.schedule
    toy = {"stack": Architecture.stack(8), "u_skip": Architecture.u_skip(3)}
    if args.toy_arch:
        a = _parse_arch(args.toy_arch)
        toy[a.kind] = a
    if spec in DN_CATALOG:
        kind = DN_CATALOG[spec][0]
        full = make_dn_schedule(spec)
        scaled = make_dn_schedule(spec, toy[kind].block_limit)
        lines = [("row", list(full.blocks)),
                 ("predicted (catalog scale)", f"{predicted_acceleration(full, CATALOG_SCALE[kind]):.2%}"),
                 ("reported wall-clock", f"{reported_acceleration(spec):.2%}"),
                 (f"toy row ({kind}, limit {toy[kind].block_limit})", list(scaled.blocks)),
                 ("predicted (toy scale)", f"{predicted_acceleration(scaled, toy[kind]):.2%}")]
    else:
        arch = _parse_arch(args.arch) if args.arch else CATALOG_SCALE["stack"]
        if parse_row(spec) is None and spec not in ("all-keep", "all_keep", "noise_easy",
                                                     "data_easy"):
            raise CatalogError(f"unknown schedule {spec!r}")
        sched = resolve_schedule(spec, arch, args.min_blocks)
        lines = [("row", list(sched.blocks)),
                 (f"predicted ({arch.kind}, limit {arch.block_limit})",
                  f"{predicted_acceleration(sched, arch):.2%}")]
    print(f"schedule {spec}")
    for k, v in lines:
        print(f"  {k:<34} {v}")
    return EXIT_OK


def cmd_experiment(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    pre = args.checkpoint
    if pre is not None and not Path(pre).exists():
        raise FileNotFoundError(f"checkpoint {pre} not found")
    if args.suite == "tradeoff":
        rows = run_tradeoff_experiment(cfg, pre)
    elif args.suite == "negative-transfer":
        rows = run_negative_transfer_suite(cfg, pre)
    else:
        if not cfg.experiments.ablation_rows:
            raise ConfigurationError("experiments.ablation_rows must list the rows to compare")
        rows = run_ablation_schedules(cfg.experiments.ablation_rows, cfg, pre)
    paths = write_reports(rows, out, args.name or args.suite, cfg.digest(), [REFERENCE_NOTE])
    for r in rows:
        print(f"seed {r.seed} {r.label:>18} {r.solver}-{r.n_steps}: SW {r.sliced_wasserstein:.4f} "
              f"FD {r.gaussian_frechet:.5f}")
    print(f"wrote {paths[0]}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ase", description="Early-exit diffusion toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--out-dir", help=f"output directory (overrides ${OUTPUT_ENV})")
        sp.add_argument("--name", help="output file name")
        return sp

    sp = with_config(sub.add_parser("pretrain", help="train a full-depth model"))
    sp.add_argument("--iterations", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = with_config(sub.add_parser("finetune", help="fine-tune under an exit schedule"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--schedule", help="name (D3-DiT, noise_easy, ...) or row 8,8,6,...")
    sp.add_argument("--iterations", type=int)
    sp.set_defaults(func=cmd_finetune)

    sp = with_config(sub.add_parser("sample", help="draw samples"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--schedule")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_sample)

    sp = with_config(sub.add_parser("bench", help="time schedules against all-keep"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--schedules", help="';'-separated names or rows")
    sp.set_defaults(func=cmd_bench)

    sp = with_config(sub.add_parser("eval", help="score a sample file"))
    sp.add_argument("--samples", required=True)
    sp.add_argument("--reference", help="reference sample file (default: fresh data draw)")
    sp.set_defaults(func=cmd_eval)

    sp = with_config(sub.add_parser("experiment", help="run an experiment suite"))
    sp.add_argument("--suite", required=True, choices=["tradeoff", "negative-transfer", "ablation"])
    sp.add_argument("--checkpoint", help="pretrained checkpoint shared by all seeds")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("schedule-info", help="show a schedule and its predicted acceleration")
    sp.add_argument("schedule", help="catalog name, all-keep, noise_easy, data_easy or a row")
    sp.add_argument("--arch", help="architecture for non-catalog schedules, e.g. stack:28")
    sp.add_argument("--toy-arch", help="toy architecture for scaled catalog rows, e.g. stack:8")
    sp.add_argument("--min-blocks", type=int, default=1)
    sp.set_defaults(func=cmd_schedule_info, no_config=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "no_config", False):
            return args.func(args)
        if not Path(args.config).exists():
            raise FileNotFoundError(f"config {args.config} not found")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except CatalogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CATALOG
    except MismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingError as exc:
        print(f"error: {exc} (step {exc.step})", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
