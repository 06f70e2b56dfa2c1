#!/usr/bin/env python3
"""The gradient-conflict diagnostic: cosine between the denoising gradient
and an alignment gradient, per diffusion timestep.

Trains briefly so gradients are informative, probes a timestep grid for each
alignment loss, and verifies that probing leaves training state untouched.
"""
import numpy as np

from ditlab import formats, ndgrad as ng, schedule, synthdata, trainer
from ditlab.teacher import Teacher

cfg_dict = formats.default_config()
cfg_dict["train"].update(steps=150, lr=1e-3, eval_every=0, probe_every=0, ckpt_every=150)
cfg_dict["data"].update(n=512)
spec = trainer.build_spec(cfg_dict)

teacher = Teacher(spec.teacher, ng.Rng(99))
teacher.freeze()

data = synthdata.gen(spec.data_seed, spec.data_n)
train_set, _ = synthdata.split(data, spec.data_holdout, seed=spec.data_seed)
images, labels = synthdata.as_arrays(train_set)
layers = tuple(sorted({lt for _, lt in spec.align_cfg.pair_set}))
cache = trainer.TeacherCache(teacher, images, layers)

print("warming up the student for 150 steps ...")
state = trainer.init_state(spec)
for _ in range(spec.steps):
    batch, idx = trainer.draw_batch(state, spec, images, labels)
    trainer.train_step(state, batch, spec, cache.take(idx))

probe_idx = ng.Rng(7).split("probe-set").integers((64,), 0, len(images))
tout = cache.take(probe_idx)
t_grid = (0.02, 0.05, 0.1, 0.2, 0.5, 0.9)

print(f"\nprobing block {spec.probe_block} parameters over t = {t_grid}")
print(f"{'t':>6} | {'feature':>8} {'attention':>10} {'hybrid':>8}")
tables = {}
for kind in ("repa", "atta", "hybrid"):
    probe = schedule.ConflictProbe(images=images[probe_idx], labels=labels[probe_idx],
                                   block_index=spec.probe_block, t_grid=t_grid,
                                   seed=7, loss_kind=kind)
    tables[kind] = schedule.probe_conflict(state.student, state.projector,
                                           lambda _x: tout, probe, spec.align_cfg)
for t in t_grid:
    print(f"{t:6.2f} | {tables['repa'][t]:+8.4f} {tables['atta'][t]:+10.4f} {tables['hybrid'][t]:+8.4f}")
print("positive: alignment pushes with the denoising objective; negative: against it")

print("\n== probe purity ==")
before = {k: v.value.copy() for k, v in state.student.params.items()}
probe = schedule.ConflictProbe(images=images[probe_idx], labels=labels[probe_idx],
                               block_index=spec.probe_block, t_grid=(0.1,), seed=7)
schedule.probe_conflict(state.student, state.projector, lambda _x: tout, probe, spec.align_cfg)
untouched = all(np.array_equal(v.value, before[k]) for k, v in state.student.params.items())
no_adjoints = all(v.grad is None for _, v in state.student.params.items())
print(f"parameters untouched: {untouched}; adjoints cleared: {no_adjoints}")

print("\n== the termination policies the trigger can drive ==")
fixed = schedule.FixedIter(tau=5000)
angle = schedule.GradAngle(window=5, threshold=0.0, check_every=1000)
history = [(1000 * k, rho) for k, rho in enumerate([0.2, 0.15, 0.05, -0.02, -0.05, -0.1, -0.12])]
for n in (3000, 5000, 8000):
    print(f"n={n}: fixed-iteration active={schedule.alignment_active(n, fixed)}, "
          f"gradient-angle active={schedule.alignment_active(n, angle, history)}")
