"""Command-line verbs: teacher-train, train, sample, eval, diag, plot.

Every verb reads one config file and/or one checkpoint, writes only inside
its --out target, and funnels all randomness through config seeds (no OS
entropy). Errors print a single machine-parsable line

    ERROR kind=<ExceptionName> detail=<message>

to stderr and map to exit codes: 0 success, 2 config/format error, 3 numeric
abort, 4 plot component not installed.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

# tiny-matrix workloads run fastest single-threaded; must be set before the
# first numpy import to take effect, and explicit settings are honored
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np

from . import evalkit, synthdata, trainer
from .errors import ConfigError, DitlabError, FormatError, NumericError
from .formats import (TensorEntry, default_config, load_config,
                      read_checkpoint, save_config, write_checkpoint)
from .interpolant import SamplerConfig, sample
from .ndgrad import Rng
from .schedule import ConflictProbe, probe_conflict
from .teacher import load_teacher, pretrain_teacher, save_teacher
from .trainer import TeacherCache, build_spec, load_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NO_PLOTTER = 4


def _data_for(cfg: dict):
    spec = build_spec(cfg)
    dataset = synthdata.gen(spec.data_seed, spec.data_n,
                            synthdata.DataConfig(image_size=spec.student.image_size,
                                                 classes=spec.student.classes))
    return spec, dataset


def cmd_init_config(args) -> int:
    save_config(default_config(), args.out)
    print(f"wrote default config to {args.out}")
    return EXIT_OK


def cmd_teacher_train(args) -> int:
    cfg = load_config(args.config)
    spec, dataset = _data_for(cfg)
    train_set, holdout = synthdata.split(dataset, spec.data_holdout, seed=spec.data_seed)
    steps = args.steps if args.steps is not None else cfg["teacher"]["pretrain_steps"]
    teacher = pretrain_teacher(train_set, steps, Rng(cfg["teacher"]["seed"]),
                               cfg=spec.teacher, lr=cfg["teacher"]["pretrain_lr"])
    images, labels = synthdata.as_arrays(holdout)
    acc = teacher.accuracy(images, labels)
    save_teacher(teacher, args.out)
    print(f"teacher trained for {steps} steps; holdout accuracy {acc:.3f}; "
          f"checksum {teacher.checksum()[:16]}; wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.teacher:
        cfg["teacher"]["ckpt"] = args.teacher
    state = trainer.run(cfg, args.out, resume_from=args.resume, stop_after=args.stop_after)
    print(f"run complete at step {state.step}; outputs in {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg, state = load_run(args.ckpt)
    spec = build_spec(cfg)
    s = cfg["sampler"]
    scfg = SamplerConfig(
        nfes=args.nfes if args.nfes is not None else s["nfes"],
        kind=args.kind if args.kind is not None else s["kind"],
        cfg_scale=args.cfg_scale if args.cfg_scale is not None else s["cfg_scale"],
        guidance_lo=s["guidance_lo"], guidance_hi=s["guidance_hi"],
        t_min=s["t_min"], noise_scale=s["noise_scale"],
        seed=args.seed if args.seed is not None else s["seed"])
    n = args.n
    labels = (np.arange(n) % spec.student.classes).astype(np.int64) if args.label < 0 \
        else np.full(n, args.label, np.int64)
    images = sample(state.student.velocity_fn, scfg, labels,
                    spec.student.image_size, spec.student.null_label)
    write_checkpoint(args.out, [
        TensorEntry("samples", "meta", images),
        TensorEntry("labels", "meta", labels.astype(np.float32)),
    ], meta={"artifact": "samples", "sampler": {"nfes": scfg.nfes, "kind": scfg.kind,
                                                "cfg_scale": scfg.cfg_scale, "seed": scfg.seed}})
    print(f"wrote {n} samples to {args.out} ({scfg.kind}, nfes={scfg.nfes})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, state = load_run(args.ckpt)
    if args.data_seed is not None:
        cfg["data"]["seed"] = args.data_seed
    spec, dataset = _data_for(cfg)
    _, holdout = synthdata.split(dataset, spec.data_holdout, seed=spec.data_seed)
    holdout_images, holdout_labels = synthdata.as_arrays(holdout)

    n = spec.eval_samples
    labels = (np.arange(n) % spec.student.classes).astype(np.int64)
    scfg = SamplerConfig(nfes=spec.eval_nfes, kind="ode", cfg_scale=1.0, seed=cfg["sampler"]["seed"])
    samples = sample(state.student.velocity_fn, scfg, labels,
                     spec.student.image_size, spec.student.null_label)

    teacher = load_teacher(spec.teacher_ckpt)
    pair_layers = tuple(sorted({lt for _, lt in spec.align_cfg.pair_set}))
    n_probe = min(64, len(holdout_images))
    cache = TeacherCache(teacher, holdout_images[:n_probe], pair_layers,
                         lowpass_k=spec.teacher_lowpass_k)
    tout = cache.take(np.arange(n_probe))
    feat_cos, feat_cos_proj, attn_ce = evalkit.alignment_progress(
        state.student, state.projector, tout, holdout_images[:n_probe],
        holdout_labels[:n_probe], spec.align_cfg)

    report = evalkit.MetricReport(
        mmd=evalkit.mmd_rbf(samples, holdout_images),
        energy_distance=evalkit.energy_distance(samples, holdout_images),
        feat_cos=feat_cos, feat_cos_projected=feat_cos_proj,
        attn_ce=attn_ce, n_samples=n)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"step": state.step, "mmd": report.mmd,
                   "energy_distance": report.energy_distance,
                   "feat_cos": report.feat_cos,
                   "feat_cos_projected": report.feat_cos_projected,
                   "attn_ce": report.attn_ce, "n_samples": report.n_samples}, fh, indent=2)
        fh.write("\n")
    print(f"eval at step {state.step}: mmd={report.mmd:.5f} "
          f"feat_cos={report.feat_cos:.4f} attn_ce={report.attn_ce:.4f} -> {args.out}")
    return EXIT_OK


def cmd_diag(args) -> int:
    cfg, state = load_run(args.ckpt)
    spec = build_spec(cfg)
    t_grid = tuple(float(x) for x in args.t.split(",")) if args.t else spec.probe_t_grid
    teacher = load_teacher(spec.teacher_ckpt)
    dataset = synthdata.gen(spec.data_seed, spec.data_n,
                            synthdata.DataConfig(image_size=spec.student.image_size,
                                                 classes=spec.student.classes))
    train_set, _ = synthdata.split(dataset, spec.data_holdout, seed=spec.data_seed)
    images, labels = synthdata.as_arrays(train_set)
    idx = Rng(spec.probe_seed).split("probe-set").integers((spec.probe_size,), 0, len(images))
    probe = ConflictProbe(images=images[idx], labels=labels[idx], block_index=spec.probe_block,
                          t_grid=t_grid, seed=spec.probe_seed,
                          loss_kind=args.loss if args.loss else spec.probe_loss)
    pair_layers = tuple(sorted({lt for _, lt in spec.align_cfg.pair_set}))
    cache = TeacherCache(teacher, images[idx], pair_layers, lowpass_k=spec.teacher_lowpass_k)
    tout = cache.take(np.arange(len(idx)))
    rhos = probe_conflict(state.student, state.projector, lambda _x: tout, probe, spec.align_cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(trainer.DIAG_HEADER + "\n")
        for t in t_grid:
            fh.write(f"{state.step},{repr(float(t))},{repr(rhos[float(t)])},{probe.loss_kind}\n")
    print(f"probed {len(t_grid)} timesteps at step {state.step} -> {args.out}")
    return EXIT_OK


def find_plotter() -> list[str] | None:
    """Locate the plotting component: env override, then frontend/dist/main.js
    relative to cwd or the repository this package was installed from."""
    env = os.environ.get("DITLAB_PLOT_CMD")
    if env:
        return env.split()
    here = os.path.dirname(os.path.abspath(__file__))
    candidates = [
        os.path.join(os.getcwd(), "frontend", "dist", "main.js"),
        os.path.abspath(os.path.join(here, "..", "..", "frontend", "dist", "main.js")),
    ]
    for cand in candidates:
        if os.path.exists(cand):
            return ["node", cand]
    return None


def cmd_plot(args) -> int:
    plotter = find_plotter()
    if plotter is None:
        print("plot component not installed", file=sys.stderr)
        return EXIT_NO_PLOTTER
    rc = subprocess.call(plotter + ["render-metrics", *args.run_dirs])
    if rc != 0:
        return rc
    for run_dir in args.run_dirs:
        if os.path.exists(os.path.join(run_dir, "diag.csv")):
            rc = subprocess.call(plotter + ["render-diag", run_dir])
            if rc != 0:
                return rc
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ditlab", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("init-config", help="write the documented default config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init_config)

    p = sub.add_parser("teacher-train", help="pretrain and freeze the encoder")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_teacher_train)

    p = sub.add_parser("train", help="run the two-phase training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", default=None, help="override [teacher] ckpt path")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, default=None, dest="stop_after")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw images from a run checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--label", type=int, default=-1, help="-1 cycles all classes")
    p.add_argument("--nfes", type=int, default=None)
    p.add_argument("--kind", choices=("ode", "sde"), default=None)
    p.add_argument("--cfg-scale", type=float, default=None, dest="cfg_scale")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="sample-quality and alignment metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data-seed", type=int, default=None, dest="data_seed")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diag", help="gradient-conflict probe at a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t", default=None, help="comma-separated probe timesteps")
    p.add_argument("--loss", choices=("repa", "atta", "hybrid"), default=None)
    p.set_defaults(fn=cmd_diag)

    p = sub.add_parser("plot", help="render charts via the plotting component")
    p.add_argument("run_dirs", nargs="+")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError) as e:
        print(f"ERROR kind={type(e).__name__} detail={e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"ERROR kind={type(e).__name__} detail={e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DitlabError as e:
        print(f"ERROR kind={type(e).__name__} detail={e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
