"""Frozen non-generative ViT encoder and its desk-scale pretraining.

The encoder shares the student's token grid (same image size and patch) so
alignment is token-wise by construction. It is pretrained as a supervised
shape classifier with a mean-pooled linear head; the head is discarded and
the weights frozen before any alignment use. Patch embeddings `y` are the
raw final-block tokens (no final normalization), and every block's
post-softmax attention maps are exposed.

`low_pass` produces the band-limited teacher-input variant: a hard radial
cutoff in the 2-D Fourier domain.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as ng
from .errors import ConfigError, ContractError, NumericError, TrainingDivergence
from .ndgrad import Array, Node, ParamSet, Rng
from .optim import AdamW
from .student import _linear_init, ActivationTrace  # shared init + trace shape
from .synthdata import ShapeSample, as_arrays


@dataclass(frozen=True)
class TeacherConfig:
    depth: int = 6
    width: int = 96
    heads: int = 4
    patch: int = 4
    image_size: int = 16
    classes: int = 8
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.image_size % self.patch != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def tokens(self) -> int:
        return (self.image_size // self.patch) ** 2


@dataclass
class TeacherOutputs:
    y: Array                 # [B, N, d_T] final-block patch embeddings
    attn: list[Array]        # per layer: [B, M_T, N, N]

    def attn_head(self, layer: int, head: int) -> Array:
        return self.attn[layer][:, head]


class Teacher:
    """Pre-LN ViT with affine layer norms and a detachable classifier head."""

    def __init__(self, cfg: TeacherConfig, rng: Rng):
        self.cfg = cfg
        self.frozen = False
        p = ParamSet()
        d, pp = cfg.width, cfg.patch * cfg.patch
        r = rng.split("teacher-init")
        p.add("patch_embed.w", _linear_init(r.split("pe"), pp, d))
        p.add("patch_embed.b", np.zeros(d, np.float32))
        p.add("pos_embed", r.split("pos").normal((cfg.tokens, d)) * np.float32(0.02))
        for i in range(cfg.depth):
            b = f"block{i}"
            ri = r.split(b)
            for affine in ("ln1", "ln2"):
                p.add(f"{b}.{affine}.g", np.ones(d, np.float32))
                p.add(f"{b}.{affine}.b", np.zeros(d, np.float32))
            for name in ("wq", "wk", "wv", "wo"):
                p.add(f"{b}.attn.{name}", _linear_init(ri.split(name), d, d))
                p.add(f"{b}.attn.{name[1]}b", np.zeros(d, np.float32))
            hd = cfg.mlp_ratio * d
            p.add(f"{b}.mlp.w1", _linear_init(ri.split("m1"), d, hd))
            p.add(f"{b}.mlp.b1", np.zeros(hd, np.float32))
            p.add(f"{b}.mlp.w2", _linear_init(ri.split("m2"), hd, d))
            p.add(f"{b}.mlp.b2", np.zeros(d, np.float32))
        p.add("head.w", _linear_init(r.split("head"), d, cfg.classes))
        p.add("head.b", np.zeros(cfg.classes, np.float32))
        self.params = p

    def _ln(self, x: Node, block: str, which: str) -> Node:
        p = self.params
        return ng.layer_norm_affine(x, p[f"{block}.{which}.g"], p[f"{block}.{which}.b"])

    def _patchify(self, x: Array) -> Node:
        cfg = self.cfg
        g, pch = cfg.image_size // cfg.patch, cfg.patch
        xn = ng.constant(ng.as_f32(x))
        bsz = xn.value.shape[0]
        t = ng.reshape(xn, (bsz, g, pch, g, pch))
        t = ng.transpose(t, (0, 1, 3, 2, 4))
        return ng.reshape(t, (bsz, cfg.tokens, pch * pch))

    def _forward_tokens(self, x: Array) -> tuple[Node, ActivationTrace]:
        cfg, p = self.cfg, self.params
        bsz = x.shape[0]
        tokens = ng.add(ng.linear(self._patchify(x), p["patch_embed.w"], p["patch_embed.b"]), p["pos_embed"])
        trace = ActivationTrace()
        trace.hidden.append(tokens)
        h = tokens
        for i in range(cfg.depth):
            block = f"block{i}"
            xin = self._ln(h, block, "ln1")
            q = self._split_heads(ng.linear(xin, p[f"{block}.attn.wq"], p[f"{block}.attn.qb"]), bsz)
            k = self._split_heads(ng.linear(xin, p[f"{block}.attn.wk"], p[f"{block}.attn.kb"]), bsz)
            v = self._split_heads(ng.linear(xin, p[f"{block}.attn.wv"], p[f"{block}.attn.vb"]), bsz)
            scores = ng.matmul(q, ng.transpose_last2(k), alpha=1.0 / np.sqrt(cfg.head_dim))
            attn = ng.softmax_lastdim(scores)
            mixed = ng.reshape(ng.transpose(ng.matmul(attn, v), (0, 2, 1, 3)), (bsz, cfg.tokens, cfg.width))
            h = ng.add(h, ng.linear(mixed, p[f"{block}.attn.wo"], p[f"{block}.attn.ob"]))
            xin2 = self._ln(h, block, "ln2")
            m = ng.silu(ng.linear(xin2, p[f"{block}.mlp.w1"], p[f"{block}.mlp.b1"]))
            h = ng.add(h, ng.linear(m, p[f"{block}.mlp.w2"], p[f"{block}.mlp.b2"]))
            trace.attn.append(attn)
            trace.hidden.append(h)
        return h, trace

    def _split_heads(self, x: Node, bsz: int) -> Node:
        cfg = self.cfg
        return ng.transpose(ng.reshape(x, (bsz, cfg.tokens, cfg.heads, cfg.head_dim)), (0, 2, 1, 3))

    def logits(self, x: Array) -> Node:
        """Mean-pooled linear classification head (pretraining only)."""
        h, _ = self._forward_tokens(x)
        pooled = ng.scale(ng.sum_lastdim(ng.transpose_last2(h)), 1.0 / self.cfg.tokens)
        return ng.linear(pooled, self.params["head.w"], self.params["head.b"])

    def freeze(self) -> None:
        self.params.freeze()
        self.frozen = True

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, node in self.params.items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(node.value).tobytes())
        return digest.hexdigest()

    def encode(self, x: Array) -> TeacherOutputs:
        """Patch embeddings and attention maps for clean images; frozen only."""
        if not self.frozen:
            raise ContractError("encode requires a frozen teacher")
        with ng.no_grad():
            h, trace = self._forward_tokens(ng.as_f32(x))
        if not np.all(np.isfinite(h.value)):
            raise NumericError("non-finite teacher embeddings")
        return TeacherOutputs(y=h.value, attn=[a.value for a in trace.attn])

    def accuracy(self, images: Array, labels: np.ndarray) -> float:
        with ng.no_grad():
            pred = self.logits(images).value.argmax(axis=1)
        return float((pred == labels).mean())


def pretrain_teacher(dataset: list[ShapeSample], steps: int, rng: Rng,
                     cfg: TeacherConfig = TeacherConfig(), batch: int = 64,
                     lr: float = 3e-4) -> Teacher:
    """Supervised pretraining on the shape classes; returns a frozen encoder.

    Emits TrainingDivergence if the loss has not moved down across the first
    100 steps (averaged over the first and last 10 of them).
    """
    teacher = Teacher(cfg, rng.split("model"))
    opt = AdamW(teacher.params, lr=lr, betas=(0.9, 0.999), weight_decay=0.0)
    images, labels = as_arrays(dataset)
    draw = rng.split("batches")
    losses: list[float] = []
    for step in range(steps):
        idx = draw.integers((batch,), 0, len(dataset))
        loss = ng.xent_logits(teacher.logits(images[idx]), labels[idx])
        losses.append(float(loss.value))
        teacher.params.zero_grads()
        ng.backward(loss)
        opt.step()
        if step == 99 and np.mean(losses[-10:]) >= np.mean(losses[:10]):
            warnings.warn("teacher loss non-decreasing over first 100 steps", TrainingDivergence)
    teacher.freeze()
    return teacher


def save_teacher(teacher: Teacher, path: str) -> None:
    from .formats import TensorEntry, write_checkpoint

    entries = [TensorEntry(name, "param", node.value) for name, node in teacher.params.items()]
    meta = {
        "artifact": "teacher",
        "config": {
            "depth": teacher.cfg.depth, "width": teacher.cfg.width, "heads": teacher.cfg.heads,
            "patch": teacher.cfg.patch, "image_size": teacher.cfg.image_size,
            "classes": teacher.cfg.classes, "mlp_ratio": teacher.cfg.mlp_ratio,
        },
        "checksum": teacher.checksum(),
    }
    write_checkpoint(path, entries, meta)


def load_teacher(path: str) -> Teacher:
    from .errors import FormatError
    from .formats import read_checkpoint
    from .ndgrad import Rng

    tensors, meta = read_checkpoint(path)
    if meta.get("artifact") != "teacher":
        raise FormatError(f"{path}: not a teacher checkpoint")
    cfg = TeacherConfig(**meta["config"])
    teacher = Teacher(cfg, Rng(0))
    teacher.params.load_values({k: arr for k, (kind, arr) in tensors.items() if kind == "param"})
    teacher.freeze()
    if teacher.checksum() != meta.get("checksum"):
        raise FormatError(f"{path}: teacher checksum mismatch")
    return teacher


def low_pass(x: Array, cutoff_radius: int) -> Array:
    """Zero every 2-D Fourier coefficient with radial frequency index > k.

    Operates per channel on [..., H, W, 1] (or [H, W, 1]) images; the inverse
    transform's imaginary residue is discarded (it is ~1e-7 for real input).
    """
    if cutoff_radius < 0:
        raise ConfigError("cutoff_radius must be >= 0")
    x = ng.as_f32(x)
    squeeze = x.ndim == 3
    imgs = x[None] if squeeze else x
    h, w = imgs.shape[-3], imgs.shape[-2]
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    radius = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    mask = (radius <= cutoff_radius).astype(np.float64)
    spec = np.fft.fft2(imgs[..., 0].astype(np.float64), axes=(-2, -1))
    out = np.fft.ifft2(spec * mask, axes=(-2, -1))
    result = out.real.astype(np.float32)[..., None]
    if squeeze:
        result = result[0]
    return result
