"""Adaptive-moment updates with decoupled weight decay.

Moments are float32 buffers keyed by parameter name; the update reads each
parameter's adjoint and mutates its value in place. Bias correction uses the
optimizer's own step counter, which is part of the checkpointable state.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .ndgrad import Array, ParamSet


class AdamW:
    """Moments live in one flat float32 buffer per order; parameter values are
    gathered/scattered through per-name views so the update is a handful of
    vectorized passes regardless of how many tensors the model has."""

    def __init__(self, params: ParamSet, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 weight_decay: float = 0.0, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.weight_decay = float(weight_decay)
        self.eps = float(eps)
        self.step_count = 0
        self._slices: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        offset = 0
        for name, node in params.items():
            size = node.value.size
            self._slices[name] = (offset, offset + size, node.value.shape)
            offset += size
        self.total = offset
        self.m_flat = np.zeros(offset, np.float32)
        self.v_flat = np.zeros(offset, np.float32)
        self._g = np.zeros(offset, np.float32)
        self._p = np.zeros(offset, np.float32)

    def _gather(self) -> None:
        for name, node in self.params.items():
            lo, hi, _ = self._slices[name]
            self._p[lo:hi] = node.value.reshape(-1)
            g = node.grad
            if g is None:
                self._g[lo:hi] = 0.0
            else:
                self._g[lo:hi] = g.reshape(-1)

    def _scatter(self) -> None:
        for name, node in self.params.items():
            lo, hi, shape = self._slices[name]
            node.value = self._p[lo:hi].reshape(shape).copy()

    def step(self) -> None:
        """One decoupled-weight-decay adaptive-moment update."""
        self.step_count += 1
        self._gather()
        g, p, m, v = self._g, self._p, self.m_flat, self.v_flat
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        m *= b1
        m += (np.float32(1.0) - b1) * g
        np.multiply(g, g, out=g)  # g buffer now holds g^2
        v *= b2
        v += (np.float32(1.0) - b2) * g
        c1 = np.float32(1.0 / (1.0 - self.beta1 ** self.step_count))
        c2 = np.float32(1.0 / (1.0 - self.beta2 ** self.step_count))
        denom = np.sqrt(v * c2)
        denom += np.float32(self.eps)
        update = m * c1
        update /= denom
        if self.weight_decay != 0.0:
            update += np.float32(self.weight_decay) * p
        update *= np.float32(self.lr)
        p -= update
        self._scatter()

    # -- checkpointable state -------------------------------------------------
    def moment_arrays(self, name: str) -> tuple[Array, Array]:
        lo, hi, shape = self._slices[name]
        return self.m_flat[lo:hi].reshape(shape), self.v_flat[lo:hi].reshape(shape)

    def load_moments(self, name: str, m: Array, v: Array) -> None:
        lo, hi, shape = self._slices[name]
        self.m_flat[lo:hi] = np.asarray(m, np.float32).reshape(-1)
        self.v_flat[lo:hi] = np.asarray(v, np.float32).reshape(-1)
