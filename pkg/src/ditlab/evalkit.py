"""Desk-scale sample-quality and alignment-progress metrics.

Sample quality is a kernel two-sample test between generated and held-out
images (unbiased multi-bandwidth RBF MMD^2, clamped at zero) plus the energy
distance; both operate on flattened pixel vectors and need no pretrained
network. Alignment progress mirrors the two cross-effect probes: mean token
cosine between a mid-depth hidden state and the teacher embeddings (with and
without the projector) and the mean attention cross-entropy over the
configured layer pairs, all measured at one fixed probe timestep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import align as al
from . import ndgrad as ng
from .errors import ConfigError
from .interpolant import corrupt
from .ndgrad import Array, Rng

DEFAULT_BANDWIDTH_FACTORS = (0.5, 1.0, 2.0, 4.0)
PROBE_T = 0.25  # mid-noise: where alignment is constructive


@dataclass(frozen=True)
class MetricReport:
    mmd: float
    energy_distance: float
    feat_cos: float            # unprojected mean token cosine
    feat_cos_projected: float
    attn_ce: float
    n_samples: int


def _flatten(x: Array) -> np.ndarray:
    x = np.asarray(x, np.float64)
    return x.reshape(len(x), -1)


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def median_heuristic_bandwidth(x: Array, y: Array) -> float:
    """Median pairwise distance over the pooled sample (zero-safe)."""
    z = np.concatenate([_flatten(x), _flatten(y)], axis=0)
    d2 = _pairwise_sq_dists(z, z)
    upper = d2[np.triu_indices(len(z), k=1)]
    med = float(np.sqrt(np.median(upper)))
    return med if med > 0 else 1.0


def mmd_rbf(x: Array, y: Array, bandwidths: tuple[float, ...] | None = None) -> float:
    """Unbiased MMD^2 with a sum of RBF kernels, clamped at zero.

    When `bandwidths` is omitted, uses the median-heuristic distance scaled
    by the default factor ladder. Symmetric in (x, y) by construction.
    """
    xf, yf = _flatten(x), _flatten(y)
    # the estimator is symmetric; canonical argument order makes the float
    # summation order (and hence the result) exactly symmetric too
    if (xf.shape, xf.tobytes()) > (yf.shape, yf.tobytes()):
        xf, yf = yf, xf
    m, n = len(xf), len(yf)
    if m < 2 or n < 2:
        raise ConfigError("mmd_rbf needs at least 2 samples on each side")
    if bandwidths is None:
        med = median_heuristic_bandwidth(xf, yf)
        bandwidths = tuple(f * med for f in DEFAULT_BANDWIDTH_FACTORS)
    dxx = _pairwise_sq_dists(xf, xf)
    dyy = _pairwise_sq_dists(yf, yf)
    dxy = _pairwise_sq_dists(xf, yf)
    total = 0.0
    for bw in bandwidths:
        gamma = 1.0 / (2.0 * bw * bw)
        kxx = np.exp(-gamma * dxx)
        kyy = np.exp(-gamma * dyy)
        kxy = np.exp(-gamma * dxy)
        a = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        b = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        c = 2.0 * kxy.mean()
        total += a + b - c
    return max(float(total), 0.0)


def mmd_rbf_bruteforce(x: Array, y: Array, bandwidths: tuple[float, ...]) -> float:
    """O(n^2) loop oracle for the vectorized estimator."""
    xf, yf = _flatten(x), _flatten(y)
    m, n = len(xf), len(yf)
    total = 0.0
    for bw in bandwidths:
        gamma = 1.0 / (2.0 * bw * bw)
        k = lambda u, v: np.exp(-gamma * float(((u - v) ** 2).sum()))
        a = sum(k(xf[i], xf[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
        b = sum(k(yf[i], yf[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
        c = 2.0 * sum(k(xf[i], yf[j]) for i in range(m) for j in range(n)) / (m * n)
        total += a + b - c
    return max(total, 0.0)


def energy_distance(x: Array, y: Array) -> float:
    """2 E|x-y| - E|x-x'| - E|y-y'| over flattened vectors, clamped at zero."""
    xf, yf = _flatten(x), _flatten(y)
    m, n = len(xf), len(yf)
    if m < 2 or n < 2:
        raise ConfigError("energy_distance needs at least 2 samples on each side")
    dxy = np.sqrt(_pairwise_sq_dists(xf, yf))
    dxx = np.sqrt(_pairwise_sq_dists(xf, xf))
    dyy = np.sqrt(_pairwise_sq_dists(yf, yf))
    exy = dxy.mean()
    exx = (dxx.sum() - np.trace(dxx)) / (m * (m - 1))
    eyy = (dyy.sum() - np.trace(dyy)) / (n * (n - 1))
    return max(float(2.0 * exy - exx - eyy), 0.0)


def _token_cosines(a: np.ndarray, b: np.ndarray) -> float:
    """Mean cosine over [B, N] token pairs; widths may differ (zero-padded)."""
    da, db = a.shape[-1], b.shape[-1]
    if da != db:
        wide = max(da, db)
        if da < wide:
            a = np.concatenate([a, np.zeros(a.shape[:-1] + (wide - da,), a.dtype)], axis=-1)
        if db < wide:
            b = np.concatenate([b, np.zeros(b.shape[:-1] + (wide - db,), b.dtype)], axis=-1)
    num = (a * b).sum(axis=-1)
    den = np.maximum(np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1), 1e-8)
    return float((num / den).mean())


def alignment_progress(model, proj: al.Projector, teacher_out, probe_images: Array,
                       probe_labels: np.ndarray, align_cfg: al.AlignConfig,
                       t_probe: float = PROBE_T, noise_seed: int = 0) -> tuple[float, float, float]:
    """(feat_cos unprojected, feat_cos projected, attn_ce) on clean probe images.

    The student runs on the probe set corrupted at a single fixed timestep;
    the teacher outputs are for the clean images. Widths may differ between
    student and teacher, in which case the unprojected cosine zero-pads the
    narrower side (the projected one matches by construction).
    """
    eps = Rng(noise_seed).split("progress-eps").normal(probe_images.shape)
    tvec = np.full(probe_images.shape[0], t_probe, np.float32)
    x_t = corrupt(probe_images, eps, tvec)
    with ng.no_grad():
        _, trace = model.forward(x_t, tvec, probe_labels)
        h = trace.hidden[align_cfg.feature_depth]
        projected = proj(h).value
        attn_ce = float(al.atta_loss(trace, teacher_out, align_cfg).value)
    feat_cos = _token_cosines(np.asarray(h.value, np.float64), np.asarray(teacher_out.y, np.float64))
    feat_cos_proj = _token_cosines(np.asarray(projected, np.float64), np.asarray(teacher_out.y, np.float64))
    return feat_cos, feat_cos_proj, attn_ce
