#!/usr/bin/env python3
"""The two alignment losses and their hybrid, on live activations.

Shows the hand-checkable values (perfect alignment, uniform attention), the
Gibbs floor of the attention loss, where gradients flow, and the named
layer-pairing presets.
"""
import numpy as np

from ditlab import align, ndgrad as ng
from ditlab.student import ActivationTrace, Student, StudentConfig
from ditlab.teacher import Teacher, TeacherConfig, TeacherOutputs

scfg = StudentConfig()
tcfg = TeacherConfig()
student = Student(scfg, ng.Rng(0))
teacher = Teacher(tcfg, ng.Rng(1))
teacher.freeze()
proj = align.Projector(scfg, tcfg, ng.Rng(2))
cfg = align.AlignConfig()  # desk pairing: feature depth 2, pairs (1,4) (2,5)

rng = ng.Rng(3)
x = np.clip(rng.normal((4, 16, 16, 1)), -1, 1)
t = rng.uniform((4,), 0.1, 0.9)
labels = rng.integers((4,), 0, 8)
_, trace = student.forward(x, t, labels)
tout = teacher.encode(x)

print("== hand-checkable values ==")
y = rng.split("y").normal((1, 3, 8))
perfect = ActivationTrace(hidden=[ng.constant(y.copy())], attn=[])
val = align.repa_loss(perfect, TeacherOutputs(y=y, attn=[]),
                      lambda h: h, align.AlignConfig(feature_depth=0))
print(f"feature loss at exact agreement: {float(val.value):+.6f} (floor is -1)")

uniform = np.full((1, 1, 2, 2), 0.5, np.float32)
tr2 = ActivationTrace(hidden=[ng.constant(np.zeros((1, 2, 2), np.float32))], attn=[ng.constant(uniform)])
val = align.atta_loss(tr2, TeacherOutputs(y=np.zeros((1, 2, 2), np.float32), attn=[uniform]),
                      align.AlignConfig(pair_set=((0, 0),), aligned_heads=1))
print(f"attention loss, both uniform over 2 tokens: {float(val.value):.6f} (ln 2 = {np.log(2):.6f})")

print("\n== on live activations ==")
res = align.hybrid_loss(trace, tout, proj, cfg)
floor = np.mean([align.teacher_row_entropy(tout.attn[lt], cfg.aligned_heads) for _, lt in cfg.pair_set])
print(f"feature loss   : {float(res.repa.value):+.4f}   (in [-1, 1])")
print(f"attention loss : {float(res.atta.value):.4f}   (Gibbs floor {floor:.4f})")
print(f"hybrid 0.5/0.5 : {float(res.total.value):+.4f}")

print("\n== gradient routing ==")
ng.backward(res.total)
print(f"|grad| student patch embed : {np.abs(student.params.adjoint('patch_embed.w')).max():.2e}")
print(f"|grad| projector layer 1   : {np.abs(proj.params.adjoint('proj.w1')).max():.2e}")
print(f"teacher received gradients : {any(n.grad is not None for _, n in teacher.params.items())}")

print("\n== pairing presets ==")
for preset, s, t_ in (("desk", scfg, tcfg),
                      ("paper-B", StudentConfig(depth=12, heads=16), TeacherConfig(depth=12, heads=12)),
                      ("paper-XL", StudentConfig(depth=28, heads=16), TeacherConfig(depth=12, heads=12))):
    p = align.default_pairing(s, t_, preset)
    print(f"{preset:9s}: feature depth {p.feature_depth}, pairs {p.pair_set}, heads {p.aligned_heads}")
