"""Class-conditional diffusion transformer that predicts velocity.

A small adaLN-zero design: per-block scale/shift/gate modulation is computed
from (time embedding + class embedding) through a zero-initialized projection,
so every block is the identity at initialization, and the zero-initialized
final projection makes the initial model output exactly zero. The forward
pass records post-block hidden states and per-head post-softmax attention
maps, which the alignment losses and conflict probes consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as ng
from .errors import ConfigError, NumericError
from .ndgrad import Array, Node, ParamSet, Rng


@dataclass(frozen=True)
class StudentConfig:
    depth: int = 4
    width: int = 64
    heads: int = 4
    patch: int = 4
    image_size: int = 16
    classes: int = 8
    time_dim: int = 64
    label_dropout: float = 0.1
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.image_size % self.patch != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch}")
        if self.time_dim % 2 != 0:
            raise ConfigError("time_dim must be even")
        if not 0.0 <= self.label_dropout < 1.0:
            raise ConfigError("label_dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def tokens(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def null_label(self) -> int:
        return self.classes


@dataclass
class ActivationTrace:
    """hidden[k] = tokens after k blocks (k = 0 .. depth); attn has one
    [B, heads, N, N] entry per block."""

    hidden: list[Node] = field(default_factory=list)
    attn: list[Node] = field(default_factory=list)

    def attn_head(self, layer: int, head: int) -> Array:
        return self.attn[layer].value[:, head]

    @property
    def depth(self) -> int:
        return len(self.attn)


def sinusoidal_embedding(t: Array, dim: int, scale: float = 1000.0) -> Array:
    """Fixed-frequency embedding of t (in (0,1), scaled to [0, scale])."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float32) / half)
    args = (np.asarray(t, np.float32) * np.float32(scale))[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1).astype(np.float32)


def apply_label_dropout(labels: np.ndarray, rate: float, rng: Rng, null_label: int) -> np.ndarray:
    """Independently replace each label by the null label with probability rate."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout rate must be in [0, 1)")
    labels = np.asarray(labels, np.int64)
    if rate == 0.0:
        return labels.copy()
    u = rng.uniform(labels.shape)
    return np.where(u < np.float32(rate), np.int64(null_label), labels)


def _linear_init(rng: Rng, fan_in: int, fan_out: int) -> Array:
    return rng.normal((fan_in, fan_out)) * np.float32(1.0 / np.sqrt(fan_in))


class Student:
    """G_theta: velocity prediction plus an activation trace per forward."""

    def __init__(self, cfg: StudentConfig, rng: Rng):
        self.cfg = cfg
        p = ParamSet()
        d, pp = cfg.width, cfg.patch * cfg.patch
        r = rng.split("student-init")
        p.add("patch_embed.w", _linear_init(r.split("pe"), pp, d))
        p.add("patch_embed.b", np.zeros(d, np.float32))
        p.add("pos_embed", r.split("pos").normal((cfg.tokens, d)) * np.float32(0.02))
        p.add("time_mlp.w1", _linear_init(r.split("t1"), cfg.time_dim, d))
        p.add("time_mlp.b1", np.zeros(d, np.float32))
        p.add("time_mlp.w2", _linear_init(r.split("t2"), d, d))
        p.add("time_mlp.b2", np.zeros(d, np.float32))
        p.add("class_embed", r.split("cls").normal((cfg.classes + 1, d)) * np.float32(0.02))
        for i in range(cfg.depth):
            b = f"block{i}"
            ri = r.split(b)
            for name in ("wq", "wk", "wv", "wo"):
                p.add(f"{b}.attn.{name}", _linear_init(ri.split(name), d, d))
                p.add(f"{b}.attn.{name[1]}b", np.zeros(d, np.float32))
            hd = cfg.mlp_ratio * d
            p.add(f"{b}.mlp.w1", _linear_init(ri.split("m1"), d, hd))
            p.add(f"{b}.mlp.b1", np.zeros(hd, np.float32))
            p.add(f"{b}.mlp.w2", _linear_init(ri.split("m2"), hd, d))
            p.add(f"{b}.mlp.b2", np.zeros(d, np.float32))
            p.add(f"{b}.mod.w", np.zeros((d, 6 * d), np.float32))
            p.add(f"{b}.mod.b", np.zeros(6 * d, np.float32))
        p.add("final.mod.w", np.zeros((d, 2 * d), np.float32))
        p.add("final.mod.b", np.zeros(2 * d, np.float32))
        p.add("final.proj.w", np.zeros((d, pp), np.float32))
        p.add("final.proj.b", np.zeros(pp, np.float32))
        self.params = p

    # -- token <-> image layout ------------------------------------------------
    def patchify(self, x: Node | Array) -> Node:
        cfg = self.cfg
        g, pch = cfg.image_size // cfg.patch, cfg.patch
        x = ng.constant(x) if not isinstance(x, Node) else x
        bsz = x.value.shape[0]
        t = ng.reshape(x, (bsz, g, pch, g, pch))
        t = ng.transpose(t, (0, 1, 3, 2, 4))
        return ng.reshape(t, (bsz, cfg.tokens, pch * pch))

    def unpatchify(self, tokens: Node) -> Node:
        cfg = self.cfg
        g, pch = cfg.image_size // cfg.patch, cfg.patch
        bsz = tokens.value.shape[0]
        t = ng.reshape(tokens, (bsz, g, g, pch, pch))
        t = ng.transpose(t, (0, 1, 3, 2, 4))
        return ng.reshape(t, (bsz, cfg.image_size, cfg.image_size, 1))

    # -- conditioning ----------------------------------------------------------
    def _condition(self, t: Array, labels: np.ndarray) -> Node:
        p, cfg = self.params, self.cfg
        sin = ng.constant(sinusoidal_embedding(t, cfg.time_dim))
        h = ng.linear(sin, p["time_mlp.w1"], p["time_mlp.b1"])
        h = ng.linear(ng.silu(h), p["time_mlp.w2"], p["time_mlp.b2"])
        c = ng.gather_rows(p["class_embed"], np.asarray(labels, np.int64))
        return ng.silu(ng.add(h, c))

    def _modulation(self, cond: Node, block: str, parts: int) -> list[Node]:
        p = self.params
        d = self.cfg.width
        mod = ng.linear(cond, p[f"{block}.mod.w"], p[f"{block}.mod.b"])
        mod = ng.reshape(mod, (cond.value.shape[0], parts, d))
        return [ng.slice_axis(mod, 1, i, i + 1) for i in range(parts)]  # each [B,1,d]

    # -- attention block -------------------------------------------------------
    def _heads(self, x: Node, bsz: int) -> Node:
        cfg = self.cfg
        return ng.transpose(ng.reshape(x, (bsz, cfg.tokens, cfg.heads, cfg.head_dim)), (0, 2, 1, 3))

    def _attention(self, x: Node, block: str, bsz: int) -> tuple[Node, Node]:
        p, cfg = self.params, self.cfg
        q = self._heads(ng.linear(x, p[f"{block}.attn.wq"], p[f"{block}.attn.qb"]), bsz)
        k = self._heads(ng.linear(x, p[f"{block}.attn.wk"], p[f"{block}.attn.kb"]), bsz)
        v = self._heads(ng.linear(x, p[f"{block}.attn.wv"], p[f"{block}.attn.vb"]), bsz)
        scores = ng.matmul(q, ng.transpose_last2(k), alpha=1.0 / np.sqrt(cfg.head_dim))
        attn = ng.softmax_lastdim(scores)  # [B, M, N, N]
        mixed = ng.transpose(ng.matmul(attn, v), (0, 2, 1, 3))
        mixed = ng.reshape(mixed, (bsz, cfg.tokens, cfg.width))
        out = ng.linear(mixed, p[f"{block}.attn.wo"], p[f"{block}.attn.ob"])
        return out, attn

    # -- full forward ----------------------------------------------------------
    def forward(self, x_t: Array | Node, t: Array, labels: np.ndarray) -> tuple[Node, ActivationTrace]:
        cfg, p = self.cfg, self.params
        labels = np.asarray(labels, np.int64)
        if labels.min() < 0 or labels.max() > cfg.null_label:
            raise ConfigError(f"labels must lie in 0..{cfg.null_label}")
        xv = x_t.value if isinstance(x_t, Node) else x_t
        if xv.shape[1:] != (cfg.image_size, cfg.image_size, 1):
            raise ConfigError(f"expected [B,{cfg.image_size},{cfg.image_size},1], got {xv.shape}")
        bsz = xv.shape[0]

        tokens = ng.add(ng.linear(self.patchify(x_t), p["patch_embed.w"], p["patch_embed.b"]), p["pos_embed"])
        cond = self._condition(t, labels)

        trace = ActivationTrace()
        trace.hidden.append(tokens)
        x = tokens
        for i in range(cfg.depth):
            block = f"block{i}"
            sh1, sc1, g1, sh2, sc2, g2 = self._modulation(cond, block, 6)
            att_in = ng.layer_norm_affine(x, sc1, sh1, one_plus=True)
            att_out, attn = self._attention(att_in, block, bsz)
            x = ng.add_gated(x, att_out, g1)
            mlp_in = ng.layer_norm_affine(x, sc2, sh2, one_plus=True)
            h = ng.silu(ng.linear(mlp_in, p[f"{block}.mlp.w1"], p[f"{block}.mlp.b1"]))
            h = ng.linear(h, p[f"{block}.mlp.w2"], p[f"{block}.mlp.b2"])
            x = ng.add_gated(x, h, g2)
            trace.attn.append(attn)
            trace.hidden.append(x)

        shf, scf = self._modulation(cond, "final", 2)
        out = ng.layer_norm_affine(x, scf, shf, one_plus=True)
        out = ng.linear(out, p["final.proj.w"], p["final.proj.b"])
        velocity = self.unpatchify(out)
        if not np.all(np.isfinite(velocity.value)):
            raise NumericError("non-finite velocity in student forward")
        return velocity, trace

    def velocity_fn(self, x_t: Array, t: Array, labels: np.ndarray) -> Array:
        """Inference-only forward (no tape, trace discarded)."""
        with ng.no_grad():
            v, _ = self.forward(x_t, t, labels)
        return v.value
