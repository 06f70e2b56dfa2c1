"""The joint two-phase optimization loop.

Each step draws (indices, t, eps, label dropout) from four named counter
streams, forwards the student on the corrupted batch, and minimizes

    L = L_diff + [alignment active] * (lambda_R * L_feat + lambda_A * L_attn)

with one backward pass and one decoupled-weight-decay adaptive-moment update.
The projector participates in updates only while feature alignment is active;
after the stage-wise switch the step executes literally the same code as a
pure-denoising step, so the post-switch trajectory is bit-identical to one
trained without alignment from the same state.

Side channels (metrics.csv, diag.csv, checkpoints) are deterministic byte
streams given the config seed: evaluation and probing derive their own seeds
per step instead of consuming the training streams, and wall-clock timing is
logged only when `log_timing` is enabled.

Teacher outputs for the training set are precomputed once into a cache (the
teacher is frozen, so its embeddings and attention maps per image never
change), which keeps the per-step alignment cost to the student-side graph.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import align as al
from . import evalkit, ndgrad as ng, synthdata
from .errors import ConfigError, ContractError, FormatError, NumericError
from .formats import (TensorEntry, config_hash, limbs_to_u64, read_checkpoint,
                      serialize_config, u64_to_limbs, write_checkpoint)
from .interpolant import (T_FLOOR, DiffusionBatch, SamplerConfig, corrupt,
                          diffusion_loss, sample_ode, velocity_target)
from .ndgrad import Array, ParamSet, Rng
from .optim import AdamW
from .schedule import (ConflictProbe, FixedIter, GradAngle, TerminationPolicy,
                       alignment_active, block_param_names, probe_conflict)
from .student import Student, StudentConfig, apply_label_dropout
from .teacher import Teacher, TeacherConfig, TeacherOutputs, load_teacher, low_pass

METRICS_HEADER = "step,loss_diff,loss_repa,loss_atta,rho_min_t,mmd,feat_cos,attn_ce,wall_ms"
DIAG_HEADER = "step,t,rho,loss_kind"


@dataclass
class RunSpec:
    """Typed view of one run's full configuration."""

    raw: dict
    student: StudentConfig
    teacher: TeacherConfig
    align_cfg: al.AlignConfig
    policy: TerminationPolicy
    steps: int
    batch: int
    lr: float
    betas: tuple[float, float]
    weight_decay: float
    seed: int
    eval_every: int
    ckpt_every: int
    probe_every: int
    eval_samples: int
    eval_nfes: int
    log_timing: bool
    probe_size: int
    probe_block: int
    probe_t_grid: tuple[float, ...]
    probe_seed: int
    probe_loss: str
    teacher_lowpass_k: int
    teacher_ckpt: str
    data_n: int
    data_seed: int
    data_holdout: float

    @property
    def align_enabled(self) -> bool:
        return self.align_cfg.lambda_repa > 0 or self.align_cfg.lambda_atta > 0


def build_spec(cfg: dict) -> RunSpec:
    scfg = StudentConfig(
        depth=cfg["student"]["depth"], width=cfg["student"]["width"], heads=cfg["student"]["heads"],
        patch=cfg["student"]["patch"], image_size=cfg["student"]["image_size"],
        classes=cfg["student"]["classes"], time_dim=cfg["student"]["time_dim"],
        label_dropout=cfg["student"]["label_dropout"], mlp_ratio=cfg["student"]["mlp_ratio"])
    tcfg = TeacherConfig(
        depth=cfg["teacher"]["depth"], width=cfg["teacher"]["width"], heads=cfg["teacher"]["heads"],
        patch=cfg["student"]["patch"], image_size=cfg["student"]["image_size"],
        classes=cfg["student"]["classes"], mlp_ratio=cfg["teacher"]["mlp_ratio"])

    acfg = al.default_pairing(scfg, tcfg, cfg["align"]["preset"],
                              lambda_repa=cfg["align"]["lambda_repa"],
                              lambda_atta=cfg["align"]["lambda_atta"])
    overrides = {}
    if cfg["align"]["feature_depth"] >= 0:
        overrides["feature_depth"] = cfg["align"]["feature_depth"]
    if cfg["align"]["pairs"]:
        overrides["pair_set"] = tuple(cfg["align"]["pairs"])
    if cfg["align"]["aligned_heads"] >= 0:
        overrides["aligned_heads"] = cfg["align"]["aligned_heads"]
    if cfg["align"]["projector_hidden"] > 0:
        overrides["projector_hidden"] = cfg["align"]["projector_hidden"]
    if overrides:
        acfg = al.AlignConfig(lambda_repa=acfg.lambda_repa, lambda_atta=acfg.lambda_atta,
                              feature_depth=overrides.get("feature_depth", acfg.feature_depth),
                              pair_set=overrides.get("pair_set", acfg.pair_set),
                              aligned_heads=overrides.get("aligned_heads", acfg.aligned_heads),
                              projector_hidden=overrides.get("projector_hidden", acfg.projector_hidden))
        acfg.validate(scfg, tcfg)

    sched = cfg["schedule"]
    if sched["policy"] == "fixed":
        policy: TerminationPolicy = FixedIter(tau=sched["tau"])
    elif sched["policy"] == "gradangle":
        policy = GradAngle(window=sched["window"], threshold=sched["threshold"],
                           check_every=sched["check_every"])
    else:
        raise ConfigError(f"unknown schedule policy {sched['policy']!r}")

    probe_block = sched["probe_block"]
    if probe_block < 0:
        # the block producing the feature-depth hidden state
        probe_block = max(acfg.feature_depth - 1, 0)

    tr = cfg["train"]
    return RunSpec(
        raw=cfg, student=scfg, teacher=tcfg, align_cfg=acfg, policy=policy,
        steps=tr["steps"], batch=tr["batch"], lr=tr["lr"], betas=(tr["beta1"], tr["beta2"]),
        weight_decay=tr["weight_decay"], seed=tr["seed"], eval_every=tr["eval_every"],
        ckpt_every=tr["ckpt_every"], probe_every=tr["probe_every"],
        eval_samples=tr["eval_samples"], eval_nfes=tr["eval_nfes"], log_timing=tr["log_timing"],
        probe_size=sched["probe_size"], probe_block=probe_block,
        probe_t_grid=tuple(sched["probe_t_grid"]), probe_seed=sched["probe_seed"],
        probe_loss=sched["probe_loss"], teacher_lowpass_k=cfg["align"]["teacher_lowpass_k"],
        teacher_ckpt=cfg["teacher"]["ckpt"], data_n=cfg["data"]["n"],
        data_seed=cfg["data"]["seed"], data_holdout=cfg["data"]["holdout"])


# ---------------------------------------------------------------------------
# teacher cache
# ---------------------------------------------------------------------------

class TeacherCache:
    """Precomputed teacher outputs (frozen teacher => compute once per image).

    Only the attention layers named in the pair set are stored; `take` slices
    out a TeacherOutputs view for a batch of dataset indices.
    """

    def __init__(self, teacher: Teacher, images: Array, layers: tuple[int, ...],
                 lowpass_k: int = -1, chunk: int = 256):
        feed = low_pass(images, lowpass_k) if lowpass_k >= 0 else images
        ys, attns = [], {l: [] for l in layers}
        for lo in range(0, len(feed), chunk):
            out = teacher.encode(feed[lo:lo + chunk])
            ys.append(out.y)
            for l in layers:
                attns[l].append(out.attn[l])
        self.y = np.concatenate(ys) if ys else np.zeros((0,), np.float32)
        self.depth = teacher.cfg.depth
        self._attn = {l: np.concatenate(v) for l, v in attns.items()}

    def take(self, idx: np.ndarray) -> TeacherOutputs:
        attn: list = [None] * self.depth
        for l, arr in self._attn.items():
            attn[l] = arr[idx]
        return TeacherOutputs(y=self.y[idx], attn=attn)


# ---------------------------------------------------------------------------
# run state
# ---------------------------------------------------------------------------

RNG_STREAMS = ("batch", "t", "eps", "drop")


@dataclass
class RunState:
    step: int
    student: Student
    projector: al.Projector
    opt_theta: AdamW
    opt_phi: AdamW
    rngs: dict[str, Rng]
    terminated: bool = False
    probe_history: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class StepMetrics:
    loss_diff: float
    loss_repa: float | None
    loss_atta: float | None
    loss_total: float
    align_applied: bool


def init_state(spec: RunSpec) -> RunState:
    root = Rng(spec.seed)
    student = Student(spec.student, root.split("student"))
    projector = al.Projector(spec.student, spec.teacher, root.split("projector"),
                             hidden=spec.align_cfg.projector_hidden)
    opt_theta = AdamW(student.params, lr=spec.lr, betas=spec.betas, weight_decay=spec.weight_decay)
    opt_phi = AdamW(projector.params, lr=spec.lr, betas=spec.betas, weight_decay=spec.weight_decay)
    rngs = {name: root.split(f"stream-{name}") for name in RNG_STREAMS}
    return RunState(step=0, student=student, projector=projector,
                    opt_theta=opt_theta, opt_phi=opt_phi, rngs=rngs)


def _policy_active(state: RunState, spec: RunSpec) -> bool:
    if state.terminated:
        return False
    active = alignment_active(state.step, spec.policy, state.probe_history)
    if not active:
        state.terminated = True
    return active


def train_step(state: RunState, batch: DiffusionBatch, spec: RunSpec,
               teacher_out: TeacherOutputs | None) -> StepMetrics:
    """One optimization step; `teacher_out` may be None once alignment is off."""
    active = _policy_active(state, spec) and spec.align_enabled

    state.student.params.zero_grads()
    state.projector.params.zero_grads()

    loss_diff, trace = diffusion_loss(state.student, batch)
    repa_val = atta_val = None
    if active:
        if teacher_out is None:
            raise ContractError("alignment active but no teacher outputs supplied")
        hybrid = al.hybrid_loss(trace, teacher_out, state.projector, spec.align_cfg)
        total = ng.add(loss_diff, hybrid.total)
        repa_val = float(hybrid.repa.value) if hybrid.repa is not None else None
        atta_val = float(hybrid.atta.value) if hybrid.atta is not None else None
    else:
        total = loss_diff
    if not np.isfinite(total.value):
        raise NumericError(f"non-finite loss at step {state.step}")

    ng.backward(total)
    state.opt_theta.step()
    if active and spec.align_cfg.lambda_repa > 0:
        state.opt_phi.step()
    state.step += 1
    return StepMetrics(loss_diff=float(loss_diff.value), loss_repa=repa_val,
                       loss_atta=atta_val, loss_total=float(total.value), align_applied=active)


def draw_batch(state: RunState, spec: RunSpec, images: Array, labels: np.ndarray) -> tuple[DiffusionBatch, np.ndarray]:
    idx = state.rngs["batch"].integers((spec.batch,), 0, len(images))
    t = state.rngs["t"].uniform((spec.batch,), T_FLOOR, 1.0)
    eps = state.rngs["eps"].normal((spec.batch, spec.student.image_size, spec.student.image_size, 1))
    lab = apply_label_dropout(labels[idx], spec.student.label_dropout,
                              state.rngs["drop"], spec.student.null_label)
    return DiffusionBatch(x0=images[idx], eps=eps, t=t, labels=lab), idx


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state: RunState, spec: RunSpec, path: str, teacher_checksum: str) -> None:
    entries: list[TensorEntry] = []
    for prefix, params, opt in (("theta", state.student.params, state.opt_theta),
                                ("phi", state.projector.params, state.opt_phi)):
        for name, node in params.items():
            entries.append(TensorEntry(f"{prefix}.{name}", "param", node.value))
        for name, _ in params.items():
            m, v = opt.moment_arrays(name)
            entries.append(TensorEntry(f"{prefix}.{name}.m1", "moment1", m))
            entries.append(TensorEntry(f"{prefix}.{name}.m2", "moment2", v))
    for stream in RNG_STREAMS:
        seed, counter = state.rngs[stream].state()
        entries.append(TensorEntry(f"rng.{stream}.seed", "rng", u64_to_limbs(seed)))
        entries.append(TensorEntry(f"rng.{stream}.counter", "rng", u64_to_limbs(counter)))
    hist = np.array([[s, r] for s, r in state.probe_history], np.float32).reshape(-1, 2)
    entries.append(TensorEntry("probe_history", "meta", hist))
    entries.append(TensorEntry("scalars", "meta", np.array(
        [state.step, 1.0 if state.terminated else 0.0,
         state.opt_theta.step_count, state.opt_phi.step_count], np.float32)))
    meta = {"artifact": "run", "config_hash": config_hash(spec.raw),
            "config": serialize_config(spec.raw),
            "teacher_checksum": teacher_checksum, "step": state.step}
    write_checkpoint(path, entries, meta)


def load_run(path: str) -> tuple[dict, RunState]:
    """Rebuild (config, state) from a run checkpoint alone."""
    from .formats import parse_config

    _, meta = read_checkpoint(path)
    if meta.get("artifact") != "run" or "config" not in meta:
        raise FormatError(f"{path}: not a run checkpoint")
    cfg = parse_config(meta["config"])
    state = load_checkpoint(path, build_spec(cfg))
    return cfg, state


def load_checkpoint(path: str, spec: RunSpec, teacher_checksum: str | None = None) -> RunState:
    tensors, meta = read_checkpoint(path)
    if meta.get("artifact") != "run":
        raise FormatError(f"{path}: not a run checkpoint")
    if meta.get("config_hash") != config_hash(spec.raw):
        raise ConfigError(f"{path}: checkpoint config hash does not match this run config")
    if teacher_checksum is not None and meta.get("teacher_checksum") != teacher_checksum:
        raise ConfigError(f"{path}: checkpoint was trained against a different teacher")
    state = init_state(spec)
    for prefix, params, opt in (("theta", state.student.params, state.opt_theta),
                                ("phi", state.projector.params, state.opt_phi)):
        params.load_values({name: tensors[f"{prefix}.{name}"][1] for name, _ in params.items()})
        for name, _ in params.items():
            opt.load_moments(name, tensors[f"{prefix}.{name}.m1"][1], tensors[f"{prefix}.{name}.m2"][1])
    for stream in RNG_STREAMS:
        seed = limbs_to_u64(tensors[f"rng.{stream}.seed"][1])
        counter = limbs_to_u64(tensors[f"rng.{stream}.counter"][1])
        state.rngs[stream] = Rng.from_state((seed, counter))
    hist = tensors["probe_history"][1].reshape(-1, 2)
    state.probe_history = [(int(s), float(r)) for s, r in hist]
    scalars = tensors["scalars"][1]
    state.step = int(scalars[0])
    state.terminated = bool(scalars[1] > 0.5)
    state.opt_theta.step_count = int(scalars[2])
    state.opt_phi.step_count = int(scalars[3])
    return state


# ---------------------------------------------------------------------------
# evaluation hooks
# ---------------------------------------------------------------------------

def eval_state(state: RunState, spec: RunSpec, holdout_images: Array,
               probe_images: Array, probe_labels: np.ndarray,
               teacher_probe_out: TeacherOutputs, step: int) -> tuple[float, float, float]:
    """(mmd, feat_cos, attn_ce) of the current parameters at one boundary."""
    n = spec.eval_samples
    labels = (np.arange(n) % spec.student.classes).astype(np.int64)
    scfg = SamplerConfig(nfes=spec.eval_nfes, kind="ode", cfg_scale=1.0,
                         seed=Rng(spec.seed).split(f"eval-{step}").seed)
    samples = sample_ode(state.student.velocity_fn, scfg, labels,
                         spec.student.image_size, spec.student.null_label)
    mmd = evalkit.mmd_rbf(samples, holdout_images)
    feat_cos, _, attn_ce = evalkit.alignment_progress(
        state.student, state.projector, teacher_probe_out, probe_images, probe_labels,
        spec.align_cfg, noise_seed=Rng(spec.seed).split("progress").seed)
    return mmd, feat_cos, attn_ce


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------

def _truncate_csv(path: str, header: str, max_step: int) -> None:
    if not os.path.exists(path):
        return
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    kept = [line for line in lines[1:] if line and int(line.split(",", 1)[0]) <= max_step]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for line in kept:
            fh.write(line + "\n")


def run(cfg: dict, out_dir: str, teacher: Teacher | None = None,
        resume_from: str | None = None, stop_after: int | None = None) -> RunState:
    """Execute a training run; writes metrics.csv, diag.csv, checkpoints.

    `resume_from` continues a run in the same output directory, reproducing
    the byte stream an uninterrupted run would have written. `stop_after`
    ends the run early at a step boundary (checkpointing there), which is the
    supported way to produce a resumable prefix.
    """
    spec = build_spec(cfg)
    os.makedirs(out_dir, exist_ok=True)

    lock_path = os.path.join(out_dir, "run.lock")
    chash = config_hash(cfg)
    if os.path.exists(lock_path):
        with open(lock_path, "r", encoding="utf-8") as fh:
            if fh.read().strip() != chash:
                raise ConfigError(f"{out_dir}: existing run.lock belongs to a different config")
    else:
        with open(lock_path, "w", encoding="utf-8") as fh:
            fh.write(chash + "\n")
    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))

    if teacher is None:
        if not spec.teacher_ckpt:
            raise ConfigError("no teacher: set [teacher] ckpt or pass a Teacher object")
        teacher = load_teacher(spec.teacher_ckpt)
    if not teacher.frozen:
        raise ContractError("trainer requires a frozen teacher")
    tchecksum = teacher.checksum()

    dataset = synthdata.gen(spec.data_seed, spec.data_n,
                            synthdata.DataConfig(image_size=spec.student.image_size,
                                                 classes=spec.student.classes))
    train_set, holdout = synthdata.split(dataset, spec.data_holdout, seed=spec.data_seed)
    images, labels = synthdata.as_arrays(train_set)
    holdout_images, holdout_labels = synthdata.as_arrays(holdout)

    pair_layers = tuple(sorted({lt for _, lt in spec.align_cfg.pair_set}))
    cache = TeacherCache(teacher, images, pair_layers, lowpass_k=spec.teacher_lowpass_k)

    # alignment-progress probe: fixed holdout slice, clean teacher inputs
    n_probe = min(64, len(holdout_images))
    probe_images = holdout_images[:n_probe]
    probe_labels = holdout_labels[:n_probe]
    probe_cache = TeacherCache(teacher, probe_images, pair_layers, lowpass_k=spec.teacher_lowpass_k)
    teacher_probe_out = probe_cache.take(np.arange(n_probe))

    # conflict probe: fixed training images
    conflict_idx = Rng(spec.probe_seed).split("probe-set").integers((spec.probe_size,), 0, len(images))
    conflict = ConflictProbe(images=images[conflict_idx], labels=labels[conflict_idx],
                             block_index=spec.probe_block, t_grid=spec.probe_t_grid,
                             seed=spec.probe_seed, loss_kind=spec.probe_loss)
    conflict_tout = cache.take(conflict_idx)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    diag_path = os.path.join(out_dir, "diag.csv")

    if resume_from is not None:
        state = load_checkpoint(resume_from, spec, tchecksum)
        _truncate_csv(metrics_path, METRICS_HEADER, state.step)
        _truncate_csv(diag_path, DIAG_HEADER, state.step)
        metrics_fh = open(metrics_path, "a", encoding="utf-8")
        diag_fh = open(diag_path, "a", encoding="utf-8")
    else:
        state = init_state(spec)
        metrics_fh = open(metrics_path, "w", encoding="utf-8")
        metrics_fh.write(METRICS_HEADER + "\n")
        diag_fh = open(diag_path, "w", encoding="utf-8")
        diag_fh.write(DIAG_HEADER + "\n")
        if spec.eval_every > 0:
            mmd, fc, ace = eval_state(state, spec, holdout_images, probe_images,
                                      probe_labels, teacher_probe_out, step=0)
            metrics_fh.write(f"0,,,,,{_fmt(mmd)},{_fmt(fc)},{_fmt(ace)},\n")
        else:
            metrics_fh.write("0,,,,,,,,\n")
        metrics_fh.flush()

    def teacher_out_for_probe(_imgs):
        return conflict_tout

    limit = spec.steps if stop_after is None else min(spec.steps, stop_after)
    try:
        while state.step < limit:
            t0 = time.perf_counter() if spec.log_timing else 0.0
            batch, idx = draw_batch(state, spec, images, labels)
            teacher_out = cache.take(idx) if spec.align_enabled and not state.terminated else None
            sm = train_step(state, batch, spec, teacher_out)
            n = state.step  # 1-based row index after the update

            rho_min = None
            if spec.probe_every > 0 and n % spec.probe_every == 0 and spec.align_enabled:
                rhos = probe_conflict(state.student, state.projector, teacher_out_for_probe,
                                      conflict, spec.align_cfg)
                for t_val in conflict.t_grid:
                    diag_fh.write(f"{n},{repr(float(t_val))},{repr(rhos[float(t_val)])},{conflict.loss_kind}\n")
                diag_fh.flush()
                rho_min = rhos[min(conflict.t_grid)]
                state.probe_history.append((n, rho_min))

            mmd = fc = ace = None
            if spec.eval_every > 0 and n % spec.eval_every == 0:
                mmd, fc, ace = eval_state(state, spec, holdout_images, probe_images,
                                          probe_labels, teacher_probe_out, step=n)

            wall = repr(round((time.perf_counter() - t0) * 1000.0, 3)) if spec.log_timing else ""
            metrics_fh.write(
                f"{n},{_fmt(sm.loss_diff)},{_fmt(sm.loss_repa)},{_fmt(sm.loss_atta)},"
                f"{_fmt(rho_min)},{_fmt(mmd)},{_fmt(fc)},{_fmt(ace)},{wall}\n")
            metrics_fh.flush()

            if (spec.ckpt_every > 0 and n % spec.ckpt_every == 0) or n == limit:
                save_checkpoint(state, spec, os.path.join(out_dir, f"ckpt_{n:08d}.hste"), tchecksum)
    finally:
        metrics_fh.close()
        diag_fh.close()
    return state
