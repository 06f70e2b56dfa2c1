"""Desk-scale diffusion-transformer training laboratory.

Library layout:
  ndgrad       float32 arrays + reverse-mode differentiation + Rng
  synthdata    procedural labeled shape images (ImageNet stand-in)
  interpolant  linear-interpolant corruption, denoising loss, ODE/SDE samplers
  student      class-conditional diffusion transformer exposing activations
  teacher      frozen ViT encoder, desk-scale pretraining, low-pass inputs
  align        feature + attention alignment losses and pairing presets
  schedule     stage-wise termination and gradient-conflict probes
  optim        decoupled-weight-decay adaptive-moment updates
  trainer      joint two-phase optimization loop, metrics, checkpoints
  evalkit      kernel two-sample distances and alignment-progress metrics
  formats      run-config text format and binary checkpoint format
  cli          command-line verbs (teacher-train/train/sample/eval/diag/plot)
"""

__version__ = "0.1.0"
