"""Stage-wise termination of the alignment loss and the gradient-conflict probe.

Training runs in two phases: while `alignment_active` is true the hybrid
alignment loss is added to the denoising loss; afterwards it is dropped
entirely. The switch is either a fixed step index tau (step n = tau is
already inactive) or a gradient-angle trigger that fires once the recent
probe history shows the two objectives conflicting at the smallest probed
timestep.

`probe_conflict` measures that conflict: it corrupts a fixed probe set at
each timestep in a grid, computes the denoising gradient and an alignment
gradient separately over one block's parameters, and reports their cosine
similarity rho in [-1, 1]. The probe is side-effect free: it owns its noise
stream, zeroes the adjoints it touched, and never steps the optimizer, so a
probed run's parameter trajectory is bit-identical to an unprobed one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import align as al
from . import ndgrad as ng
from .errors import ConfigError, NumericError
from .ndgrad import Array, ParamSet, Rng
from .interpolant import corrupt, velocity_target
from .teacher import TeacherOutputs

DEFAULT_T_GRID = (0.02, 0.05, 0.1, 0.2, 0.5, 0.9)


@dataclass(frozen=True)
class FixedIter:
    tau: int

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")


@dataclass(frozen=True)
class GradAngle:
    window: int = 5
    threshold: float = 0.0
    check_every: int = 1000

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.check_every < 1:
            raise ConfigError("check_every must be >= 1")


TerminationPolicy = FixedIter | GradAngle


@dataclass(frozen=True)
class ConflictProbe:
    """Fixed probe inputs plus where/what to measure."""

    images: Array                       # [P, H, W, 1] clean images, fixed at run start
    labels: np.ndarray                  # [P]
    block_index: int                    # student block whose parameters are measured
    t_grid: tuple[float, ...] = DEFAULT_T_GRID
    seed: int = 0
    loss_kind: str = "hybrid"           # "repa" | "atta" | "hybrid"

    def __post_init__(self):
        if not self.t_grid:
            raise ConfigError("t_grid must not be empty")
        if self.loss_kind not in ("repa", "atta", "hybrid"):
            raise ConfigError(f"unknown probe loss kind {self.loss_kind!r}")


def alignment_active(n: int, policy: TerminationPolicy, history: Iterable[tuple[int, float]] = ()) -> bool:
    """Phase predicate: true while the auxiliary alignment loss applies.

    FixedIter: active iff n < tau. GradAngle: active until the median of the
    last `window` recorded smallest-t rho values drops to the threshold or
    below; once off, stays off (callers pass the full probe history, so the
    predicate is monotone in n by construction).
    """
    if n < 0:
        raise ConfigError("step index must be >= 0")
    if isinstance(policy, FixedIter):
        return n < policy.tau
    rhos = [r for step, r in history if step <= n]
    for i in range(len(rhos)):
        window = rhos[max(0, i + 1 - policy.window): i + 1]
        if len(window) == policy.window and float(np.median(window)) <= policy.threshold:
            return False
    return True


def rho(grad_a: dict[str, Array], grad_b: dict[str, Array], subset: list[str]) -> float:
    """Cosine similarity of two gradients flattened over `subset`, in [-1, 1]."""
    if not subset:
        raise ConfigError("rho: parameter subset must not be empty")
    names = sorted(subset)
    va = np.concatenate([np.asarray(grad_a[k], np.float64).reshape(-1) for k in names])
    vb = np.concatenate([np.asarray(grad_b[k], np.float64).reshape(-1) for k in names])
    denom = max(float(np.linalg.norm(va) * np.linalg.norm(vb)), 1e-12)
    return float(np.dot(va, vb) / denom)


def block_param_names(params: ParamSet, block_index: int) -> list[str]:
    prefix = f"block{block_index}."
    names = [k for k in params.names() if k.startswith(prefix)]
    if not names:
        raise ConfigError(f"no parameters with prefix {prefix!r}")
    return names


def _grad_snapshot(params: ParamSet, names: list[str]) -> dict[str, Array]:
    return {k: params.adjoint(k).copy() for k in names}


def probe_conflict(model, proj: al.Projector, teacher_out_fn, probe: ConflictProbe,
                   align_cfg: al.AlignConfig) -> dict[float, float]:
    """rho_t per probed timestep; pure with respect to training state.

    `teacher_out_fn` maps clean probe images to TeacherOutputs (usually a
    cached encode). Parameters are read, never written; every adjoint the
    probe populates is zeroed again before returning.
    """
    names = block_param_names(model.params, probe.block_index)
    rng = Rng(probe.seed).split("probe")
    result: dict[float, float] = {}
    tout: TeacherOutputs = teacher_out_fn(probe.images)
    for t in probe.t_grid:
        eps = rng.split(f"t={t:.6g}").normal(probe.images.shape)
        tvec = np.full(probe.images.shape[0], t, np.float32)
        x_t = corrupt(probe.images, eps, tvec)
        target = velocity_target(probe.images, eps)

        model.params.zero_grads()
        proj.params.zero_grads()
        v_pred, trace = model.forward(x_t, tvec, probe.labels)
        diff = ng.sub(v_pred, ng.constant(target))
        loss_diff = ng.mean_all(ng.mul(diff, diff))
        ng.backward(loss_diff)
        if not np.isfinite(loss_diff.value):
            raise NumericError(f"non-finite denoising gradient at probe t={t}")
        g_diff = _grad_snapshot(model.params, names)

        model.params.zero_grads()
        proj.params.zero_grads()
        _, trace = model.forward(x_t, tvec, probe.labels)
        if probe.loss_kind == "repa":
            loss_align = al.repa_loss(trace, tout, proj, align_cfg)
        elif probe.loss_kind == "atta":
            loss_align = al.atta_loss(trace, tout, align_cfg)
        else:
            loss_align = al.hybrid_loss(trace, tout, proj, align_cfg).total
        ng.backward(loss_align)
        if not np.isfinite(loss_align.value):
            raise NumericError(f"non-finite alignment gradient at probe t={t}")
        g_align = _grad_snapshot(model.params, names)

        model.params.zero_grads()
        proj.params.zero_grads()
        result[float(t)] = rho(g_diff, g_align, names)
    return result
