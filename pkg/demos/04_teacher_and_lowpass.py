#!/usr/bin/env python3
"""Pretrain a small frozen encoder and inspect its outputs.

Trains a reduced ViT classifier on the shape dataset (about a minute),
freezes it, and shows the encode contract: patch embeddings, attention rows
that sum to one, determinism, and the band-limited input variant.
"""
import numpy as np

from ditlab import ndgrad as ng, synthdata
from ditlab.teacher import TeacherConfig, low_pass, pretrain_teacher

data = synthdata.gen(seed=11, n=1536)
train, hold = synthdata.split(data, 0.2, seed=1)

cfg = TeacherConfig(depth=3, width=48, heads=4)
print(f"pretraining a depth-{cfg.depth}, width-{cfg.width} encoder on "
      f"{len(train)} labeled shapes ...")
teacher = pretrain_teacher(train, steps=300, rng=ng.Rng(0), cfg=cfg, lr=1e-3)

images, labels = synthdata.as_arrays(hold)
print(f"holdout accuracy: {teacher.accuracy(images, labels):.3f}")
print(f"weights frozen:   {teacher.frozen}, checksum {teacher.checksum()[:16]}...")

out = teacher.encode(images[:4])
print(f"\nencode -> patch embeddings {out.y.shape}, "
      f"{len(out.attn)} attention layers of shape {out.attn[0].shape}")
rows = out.attn[0].sum(axis=-1)
print(f"attention rows sum to one: max deviation {np.abs(rows - 1).max():.2e}")
again = teacher.encode(images[:4])
print(f"bit-identical re-encode:   {out.y.tobytes() == again.y.tobytes()}")

print("\n== low-pass teacher inputs ==")
img = images[:1]
for k in (8, 4, 2, 1):
    lp = low_pass(img, k)
    kept = float((lp.astype(np.float64) ** 2).sum() / (img.astype(np.float64) ** 2).sum())
    print(f"cutoff radius {k}: {kept * 100:5.1f}% of the spectral energy kept")
lp2 = low_pass(low_pass(img, 2), 2)
print(f"idempotent: max |lp(lp(x)) - lp(x)| = {np.abs(lp2 - low_pass(img, 2)).max():.2e}")
