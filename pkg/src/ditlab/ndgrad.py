"""Dense float32 arrays with reverse-mode differentiation.

A small tape-based engine on top of numpy: each operation returns a `Node`
holding a float32 ndarray plus a backward closure that scatters the output
adjoint onto its parents. The op set is exactly what a small diffusion
transformer, a frozen ViT encoder, an MLP projector, and their losses need;
there is no kernel fusion, no GPU, and no dynamic shape games.

Conventions:
  * everything is float32, row-major; scalars are 0-d arrays;
  * broadcasting follows numpy's singleton rule (the backward pass sums the
    adjoint over broadcast axes), which keeps bias adds and per-sample
    conditioning explicit without a zoo of expand ops;
  * `backward` may be called once per root; adjoints accumulate additively
    across fan-out within that single traversal, and a second call on the
    same root raises ContractError instead of silently double-counting;
  * gradients are verified against central finite differences by
    `finite_diff_check`, which is the one numerical oracle the rest of the
    package leans on.

Randomness goes through `Rng`, a counter-based Philox wrapper whose state is
two u64s, so any draw sequence can be checkpointed and replayed bit-exactly.
"""

from __future__ import annotations

import os
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

Array = np.ndarray  # always float32 in this package

_CHECK_FINITE_EVERY_OP = os.environ.get("DITLAB_CHECK_FINITE", "") == "1"

_grad_enabled = True


class no_grad:
    """Context manager that turns off tape construction (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def as_f32(x) -> Array:
    a = np.asarray(x, dtype=np.float32)
    return a


def guard_finite(a: Array, what: str) -> Array:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


class Node:
    """One value in the computation graph.

    `grad` is lazily allocated during backward; `None` means "all zeros so
    far". Adjoint buffers are never mutated in place once created, so views
    handed out by reshape/transpose backward rules stay valid.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, value, requires_grad: bool = False):
        v = as_f32(value)
        self.value = v
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Node, ...] = ()
        self._backward: Callable[[Array], None] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(x) -> Node:
    return x if isinstance(x, Node) else Node(x, requires_grad=False)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else Node(x, requires_grad=False)


def _acc(n: Node, g: Array) -> None:
    if n.grad is None:
        n.grad = g
    else:
        n.grad = n.grad + g


def _make(value: Array, parents: Sequence[Node], bwd: Callable[[Array], None]) -> Node:
    if _CHECK_FINITE_EVERY_OP:
        guard_finite(value, "op output")
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Node(value, rg)
    if rg:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = bwd
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum an adjoint over the axes numpy broadcast to produce it."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    try:
        v = a.value + b.value
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}: {e}") from None

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.value.shape))

    return _make(v, (a, b), bwd)


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    try:
        v = a.value - b.value
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}: {e}") from None

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g, b.value.shape))

    return _make(v, (a, b), bwd)


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    try:
        v = a.value * b.value
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}: {e}") from None
    av, bv = a.value, b.value

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * bv, av.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * av, bv.shape))

    return _make(v, (a, b), bwd)


def scale(a, s: float) -> Node:
    a = _wrap(a)
    s32 = np.float32(s)
    v = a.value * s32

    def bwd(g):
        _acc(a, g * s32)

    return _make(v, (a,), bwd)


def add_scalar(a, s: float) -> Node:
    a = _wrap(a)
    v = a.value + np.float32(s)

    def bwd(g):
        _acc(a, g)

    return _make(v, (a,), bwd)


def silu(a) -> Node:
    a = _wrap(a)
    av = a.value
    sig = 1.0 / (1.0 + np.exp(-av))
    v = (av * sig).astype(np.float32, copy=False)

    def bwd(g):
        # d silu/dx = sig + silu(x) * (1 - sig), written to one buffer
        d = np.subtract(np.float32(1.0), sig)
        np.multiply(v, d, out=d)
        np.add(sig, d, out=d)
        np.multiply(g, d, out=d)
        _acc(a, d)

    return _make(v, (a,), bwd)


def log_clamped(a, floor: float = 1e-12) -> Node:
    """log(max(a, floor)); the clamp keeps underflowed softmax entries finite."""
    a = _wrap(a)
    clamped = np.maximum(a.value, np.float32(floor))
    v = np.log(clamped)
    active = a.value > floor

    def bwd(g):
        _acc(a, np.where(active, g / clamped, np.float32(0.0)))

    return _make(v, (a,), bwd)


def reshape(a, shape) -> Node:
    a = _wrap(a)
    try:
        v = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}: {e}") from None
    src_shape = a.value.shape

    def bwd(g):
        _acc(a, g.reshape(src_shape))

    return _make(v, (a,), bwd)


def transpose(a, axes: Sequence[int]) -> Node:
    a = _wrap(a)
    axes = tuple(axes)
    v = a.value.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _acc(a, g.transpose(inv))

    return _make(v, (a,), bwd)


def transpose_last2(a) -> Node:
    a = _wrap(a)
    if a.value.ndim < 2:
        raise ShapeError("transpose_last2 needs ndim >= 2")
    nd = a.value.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    return transpose(a, axes)


def slice_axis(a, axis: int, start: int, stop: int) -> Node:
    a = _wrap(a)
    nd = a.value.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"slice_axis: axis {axis} out of range for ndim {nd}")
    axis = axis % nd
    idx = tuple(slice(None) if i != axis else slice(start, stop) for i in range(nd))
    v = np.ascontiguousarray(a.value[idx])
    src_shape = a.value.shape

    def bwd(g):
        full = np.zeros(src_shape, np.float32)
        full[idx] = g
        _acc(a, full)

    return _make(v, (a,), bwd)


def gather_rows(table, idx) -> Node:
    """Row lookup `table[idx]` for embeddings; backward scatter-adds."""
    table = _wrap(table)
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise ShapeError("gather_rows: integer indices required")
    v = table.value[idx]
    vocab = table.value.shape

    def bwd(g):
        full = np.zeros(vocab, np.float32)
        np.add.at(full, idx, g)
        _acc(table, full)

    return _make(v, (table,), bwd)


# ---------------------------------------------------------------------------
# contractions and reductions
# ---------------------------------------------------------------------------

def matmul(a, b, alpha: float = 1.0) -> Node:
    """Batched matrix product alpha * (a @ b); alpha folds in attention's 1/sqrt(d)."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {av.shape} x {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {av.shape} x {bv.shape}")
    try:
        v = np.matmul(av, bv)
    except ValueError as e:
        raise ShapeError(f"matmul batch extents differ: {av.shape} x {bv.shape}: {e}") from None
    al = np.float32(alpha)
    if alpha != 1.0:
        v *= al

    def bwd(g):
        if alpha != 1.0:
            g = g * al
        if a.requires_grad:
            ga = np.matmul(g, bv.swapaxes(-1, -2))
            _acc(a, _unbroadcast(ga, av.shape))
        if b.requires_grad:
            gb = np.matmul(av.swapaxes(-1, -2), g)
            _acc(b, _unbroadcast(gb, bv.shape))

    return _make(v, (a, b), bwd)


def linear(x, w, b=None) -> Node:
    """Affine map on the last axis: x @ w (+ b).

    Equivalent to matmul+add but with the weight gradient computed as one
    2-D GEMM over the folded batch axes, which is the throughput-critical
    path of every transformer layer here.
    """
    x, w = _wrap(x), _wrap(w)
    xv, wv = x.value, w.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
        raise ShapeError(f"linear: {xv.shape} x {wv.shape}")
    v = np.matmul(xv, wv)
    bn = _wrap(b) if b is not None else None
    if bn is not None:
        if bn.value.shape != (wv.shape[1],):
            raise ShapeError(f"linear bias: {bn.value.shape} vs ({wv.shape[1]},)")
        v = v + bn.value
    x2 = xv.reshape(-1, xv.shape[-1])

    def bwd(g):
        g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
        if x.requires_grad:
            _acc(x, np.matmul(g2, wv.T).reshape(xv.shape))
        if w.requires_grad:
            _acc(w, np.matmul(x2.T, g2))
        if bn is not None and bn.requires_grad:
            _acc(bn, g2.sum(axis=0))

    parents = (x, w) if bn is None else (x, w, bn)
    return _make(v, parents, bwd)


def sum_all(a) -> Node:
    a = _wrap(a)
    v = a.value.sum(dtype=np.float32)
    shp = a.value.shape

    def bwd(g):
        _acc(a, np.broadcast_to(g, shp).astype(np.float32, copy=False))

    return _make(v, (a,), bwd)


def mean_all(a) -> Node:
    a = _wrap(a)
    n = a.value.size
    v = a.value.mean(dtype=np.float32)
    shp = a.value.shape
    inv = np.float32(1.0 / n)

    def bwd(g):
        _acc(a, np.broadcast_to(g * inv, shp).astype(np.float32, copy=False))

    return _make(v, (a,), bwd)


def sum_lastdim(a) -> Node:
    a = _wrap(a)
    v = a.value.sum(axis=-1, dtype=np.float32)
    shp = a.value.shape

    def bwd(g):
        _acc(a, np.broadcast_to(g[..., None], shp).astype(np.float32, copy=False))

    return _make(v, (a,), bwd)


def softmax_lastdim(a) -> Node:
    """Stabilized softmax along the last axis; rows sum to 1 for any finite input."""
    a = _wrap(a)
    av = a.value
    if av.shape[-1] < 1:
        raise ShapeError("softmax_lastdim needs a non-empty last axis")
    shifted = av - av.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    v = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        gs = (g * v).sum(axis=-1, keepdims=True)
        _acc(a, (v * (g - gs)).astype(np.float32, copy=False))

    return _make(v, (a,), bwd)


def layer_norm(a, eps: float = 1e-5) -> Node:
    """Standardize the last axis (no affine; conditioning supplies scale/shift)."""
    a = _wrap(a)
    av = a.value
    mu = av.mean(axis=-1, keepdims=True)
    xc = av - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    v = (xc * inv).astype(np.float32, copy=False)
    d = av.shape[-1]

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * v).mean(axis=-1, keepdims=True)
        _acc(a, (inv * (g - gm - v * gy)).astype(np.float32, copy=False))

    _ = d
    return _make(v, (a,), bwd)


def layer_norm_affine(x, scl, shift, one_plus: bool = False, eps: float = 1e-5) -> Node:
    """Standardize the last axis, then apply scale (or 1+scale) and shift.

    One fused node for the LN -> modulate pattern; scale/shift may be [d]
    parameters or per-sample [B, 1, d] conditioning (any broadcastable shape).
    """
    x, scl, shift = _wrap(x), _wrap(scl), _wrap(shift)
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    norm = xc * inv
    sv = scl.value + np.float32(1.0) if one_plus else scl.value
    try:
        v = norm * sv + shift.value
    except ValueError as e:
        raise ShapeError(f"layer_norm_affine: {xv.shape} vs {scl.value.shape}: {e}") from None

    def bwd(g):
        if shift.requires_grad:
            _acc(shift, _unbroadcast(g, shift.value.shape))
        if scl.requires_grad:
            _acc(scl, _unbroadcast(g * norm, scl.value.shape))
        if x.requires_grad:
            gn = g * sv
            gm = gn.mean(axis=-1, keepdims=True)
            gy = (gn * norm).mean(axis=-1, keepdims=True)
            _acc(x, (inv * (gn - gm - norm * gy)).astype(np.float32, copy=False))

    return _make(v, (x, scl, shift), bwd)


def add_gated(x, u, gate) -> Node:
    """Residual update x + u * gate (gate broadcastable over tokens)."""
    x, u, gate = _wrap(x), _wrap(u), _wrap(gate)
    try:
        v = x.value + u.value * gate.value
    except ValueError as e:
        raise ShapeError(f"add_gated: {x.shape} vs {u.shape} vs {gate.shape}: {e}") from None

    def bwd(g):
        if x.requires_grad:
            _acc(x, g)
        if u.requires_grad:
            _acc(u, _unbroadcast(g * gate.value, u.value.shape))
        if gate.requires_grad:
            _acc(gate, _unbroadcast(g * u.value, gate.value.shape))

    return _make(v, (x, u, gate), bwd)


def cosine_sim_lastdim(a, b, eps: float = 1e-8) -> Node:
    """Token-wise cosine similarity; eps clamps the norm product for zero vectors."""
    if eps <= 0:
        raise ShapeError("cosine_sim_lastdim: eps must be positive")
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeError(f"cosine_sim_lastdim: {av.shape} vs {bv.shape}")
    s = (av * bv).sum(axis=-1)
    na2 = (av * av).sum(axis=-1)
    nb2 = (bv * bv).sum(axis=-1)
    denom_raw = np.sqrt(na2 * nb2)
    denom = np.maximum(denom_raw, np.float32(eps))
    v = (s / denom).astype(np.float32, copy=False)
    clamped = denom_raw < eps

    def bwd(g):
        gd = (g / denom)[..., None]
        if a.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                proj = np.where(clamped, 0.0, (v * g / np.maximum(na2, 1e-30)))[..., None]
            _acc(a, (gd * bv - proj * av).astype(np.float32, copy=False))
        if b.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                proj = np.where(clamped, 0.0, (v * g / np.maximum(nb2, 1e-30)))[..., None]
            _acc(b, (gd * av - proj * bv).astype(np.float32, copy=False))

    return _make(v, (a, b), bwd)


def xent_logits(logits, labels) -> Node:
    """Mean cross-entropy of integer labels against raw logits [B, C]."""
    logits = _wrap(logits)
    lv = logits.value
    if lv.ndim != 2:
        raise ShapeError(f"xent_logits expects [B, C], got {lv.shape}")
    labels = np.asarray(labels)
    bsz = lv.shape[0]
    shifted = lv - lv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    lse = np.log(e.sum(axis=-1)) + lv.max(axis=-1)
    nll = lse - lv[np.arange(bsz), labels]
    v = np.float32(nll.mean())

    def bwd(g):
        gg = probs.copy()
        gg[np.arange(bsz), labels] -= 1.0
        _acc(logits, (gg * (g / np.float32(bsz))).astype(np.float32, copy=False))

    return _make(v, (logits,), bwd)


# ---------------------------------------------------------------------------
# backward traversal
# ---------------------------------------------------------------------------

def backward(root: Node) -> None:
    """Populate adjoints of every requires_grad node reachable from `root`.

    The root must be scalar. Traversal is one reverse-topological sweep; the
    tape (parent links and closures) is released afterwards so a second call
    on the same root raises instead of re-accumulating.
    """
    if root.value.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    if root._consumed:
        raise ContractError("backward already ran for this root; zero adjoints and rebuild the graph")
    if not root.requires_grad:
        root._consumed = True
        return

    topo: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p._backward is not None:
                stack.append((p, False))

    root.grad = np.ones((), np.float32)
    for node in reversed(topo):
        fn = node._backward
        if fn is not None:
            fn(node.grad)
        node._backward = None
        node._parents = ()
    root._consumed = True


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class ParamSet:
    """Ordered name -> trainable Node map; iteration is insertion order."""

    def __init__(self):
        self._items: dict[str, Node] = {}

    def add(self, name: str, value) -> Node:
        if name in self._items:
            raise ContractError(f"duplicate parameter name {name!r}")
        node = Node(value, requires_grad=True)
        self._items[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self) -> Iterator[tuple[str, Node]]:
        return iter(self._items.items())

    def zero_grads(self) -> None:
        for node in self._items.values():
            node.grad = None

    def adjoint(self, name: str) -> Array:
        node = self._items[name]
        return node.grad if node.grad is not None else np.zeros_like(node.value)

    def n_params(self) -> int:
        return sum(n.value.size for n in self._items.values())

    def freeze(self) -> None:
        for node in self._items.values():
            node.requires_grad = False

    def copy_values(self) -> dict[str, Array]:
        return {k: v.value.copy() for k, v in self._items.items()}

    def load_values(self, values: dict[str, Array]) -> None:
        for k, node in self._items.items():
            v = as_f32(values[k])
            if v.shape != node.value.shape:
                raise ShapeError(f"param {k}: stored shape {v.shape} != model shape {node.value.shape}")
            node.value = v.copy()


# ---------------------------------------------------------------------------
# deterministic randomness
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based Philox stream: state is (seed, counter), both u64.

    Every draw keys a fresh Philox generator with (seed, counter) and bumps
    the counter, so the stream is a pure function of the seed and the draw
    sequence; `split` derives an independent child stream from a label.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def split(self, label: str | int) -> "Rng":
        tag = _fnv1a64(str(label).encode("utf-8"))
        return Rng(_splitmix64(self.seed ^ tag))

    def _gen(self) -> np.random.Generator:
        g = np.random.Generator(np.random.Philox(key=[self.seed, self.counter]))
        self.counter = (self.counter + 1) & _MASK64
        return g

    def normal(self, shape=()) -> Array:
        return self._gen().standard_normal(shape, dtype=np.float32)

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> Array:
        u = self._gen().random(shape, dtype=np.float32)
        return (u * np.float32(hi - lo) + np.float32(lo)).astype(np.float32, copy=False)

    def integers(self, shape, lo: int, hi: int) -> np.ndarray:
        return self._gen().integers(lo, hi, size=shape, dtype=np.int64)

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    @classmethod
    def from_state(cls, state: tuple[int, int]) -> "Rng":
        return cls(state[0], state[1])


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Node], Node], x: Array, h: float = 1e-3) -> float:
    """Max relative disagreement between backward() and central differences.

    `f` must be a deterministic scalar-valued graph builder; it is evaluated
    once with a differentiable leaf and 2*size times with perturbed constant
    copies. Relative error floors at 1e-4 absolute so near-zero gradients do
    not blow up the ratio.
    """
    if h <= 0:
        raise ContractError("finite_diff_check: h must be positive")
    x = as_f32(x).copy()
    leaf_node = Node(x.copy(), requires_grad=True)
    out = f(leaf_node)
    if out.value.shape != ():
        raise ContractError("finite_diff_check: f must return a scalar Node")
    if not np.isfinite(out.value):
        raise NumericError("finite_diff_check: f(x) is not finite")
    backward(out)
    g_ad = leaf_node.grad if leaf_node.grad is not None else np.zeros_like(x)

    g_fd = np.zeros(x.shape, np.float64)
    flat = g_fd.reshape(-1)
    xflat = x.reshape(-1)
    for i in range(x.size):
        xp = x.copy()
        xp.reshape(-1)[i] = np.float32(float(xflat[i]) + h)
        fp = f(Node(xp)).value
        xm = x.copy()
        xm.reshape(-1)[i] = np.float32(float(xflat[i]) - h)
        fm = f(Node(xm)).value
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("finite_diff_check: perturbed evaluation is not finite")
        # divide by the step the float32 grid actually realized
        step = float(xp.reshape(-1)[i]) - float(xm.reshape(-1)[i])
        flat[i] = (float(fp) - float(fm)) / step

    rel = np.abs(g_ad - g_fd) / np.maximum(1e-4, np.abs(g_fd))
    return float(rel.max()) if rel.size else 0.0
