"""On-disk formats: the line-oriented run config and the binary checkpoint.

Run config: `key = value` lines under `[section]` headers. The schema is
closed; unknown sections or keys are rejected, every key has a typed default,
and parse -> serialize -> parse is a fixed point (serialization is canonical:
schema order, `repr` floats).

Checkpoint: magic "HSTE", little-endian u32 version, little-endian u32 header
length, a UTF-8 JSON header {"tensors": [{name, shape, offset, kind}...],
"meta": {...}}, then a payload of little-endian float32 values. Offsets are
element offsets into the payload, ascending and non-overlapping, and the
payload length must equal the sum of tensor sizes exactly. Files are written
to a temp path and atomically renamed, so a file with a valid magic is never
a partial write. 64-bit integers (RNG state) ride in the float32 payload as
four 16-bit limbs, which float32 represents exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .ndgrad import Array

MAGIC = b"HSTE"
VERSION = 1

# ---------------------------------------------------------------------------
# run config
# ---------------------------------------------------------------------------

# section -> key -> (type tag, default); type tags: int, float, str, bool,
# pairs ("1:4,2:5"), floats ("0.02,0.05")
CONFIG_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "student": {
        "depth": ("int", 4),
        "width": ("int", 64),
        "heads": ("int", 4),
        "patch": ("int", 4),
        "image_size": ("int", 16),
        "classes": ("int", 8),
        "time_dim": ("int", 64),
        "label_dropout": ("float", 0.1),
        "mlp_ratio": ("int", 2),
    },
    "teacher": {
        "depth": ("int", 6),
        "width": ("int", 96),
        "heads": ("int", 4),
        "mlp_ratio": ("int", 4),
        "ckpt": ("str", ""),
        "pretrain_steps": ("int", 1500),
        "pretrain_lr": ("float", 3e-4),
        "seed": ("int", 0),
    },
    "align": {
        "lambda_repa": ("float", 0.5),
        "lambda_atta": ("float", 0.5),
        "preset": ("str", "desk"),
        "feature_depth": ("int", -1),       # -1: take from preset
        "pairs": ("pairs", ()),             # empty: take from preset
        "aligned_heads": ("int", -1),
        "projector_hidden": ("int", 0),
        "teacher_lowpass_k": ("int", -1),   # -1: full-band teacher inputs
    },
    "schedule": {
        "policy": ("str", "fixed"),         # fixed | gradangle
        "tau": ("int", 5000),
        "window": ("int", 5),
        "threshold": ("float", 0.0),
        "check_every": ("int", 1000),
        "probe_size": ("int", 64),
        "probe_block": ("int", -1),         # -1: block feeding the feature depth
        "probe_t_grid": ("floats", (0.02, 0.05, 0.1, 0.2, 0.5, 0.9)),
        "probe_seed": ("int", 1234),
        "probe_loss": ("str", "hybrid"),
    },
    "train": {
        "steps": ("int", 10000),
        "batch": ("int", 64),
        "lr": ("float", 1e-4),
        "beta1": ("float", 0.9),
        "beta2": ("float", 0.999),
        "weight_decay": ("float", 0.0),
        "seed": ("int", 0),
        "eval_every": ("int", 1000),
        "ckpt_every": ("int", 5000),
        "probe_every": ("int", 1000),
        "eval_samples": ("int", 256),
        "eval_nfes": ("int", 50),
        "log_timing": ("bool", False),
    },
    "sampler": {
        "nfes": ("int", 50),
        "kind": ("str", "ode"),
        "cfg_scale": ("float", 1.0),
        "guidance_lo": ("float", 0.0),
        "guidance_hi": ("float", 1.0),
        "t_min": ("float", 0.04),
        "noise_scale": ("float", 1.0),
        "seed": ("int", 0),
    },
    "data": {
        "n": ("int", 4096),
        "seed": ("int", 17),
        "holdout": ("float", 0.125),
    },
}


def default_config() -> dict[str, dict[str, object]]:
    return {sec: {k: v for k, (_, v) in keys.items()} for sec, keys in CONFIG_SCHEMA.items()}


def _parse_value(tag: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "str":
            return raw
        if tag == "bool":
            if raw in ("true", "True", "1"):
                return True
            if raw in ("false", "False", "0"):
                return False
            raise ValueError(raw)
        if tag == "pairs":
            if not raw:
                return ()
            out = []
            for part in raw.split(","):
                a, b = part.split(":")
                out.append((int(a), int(b)))
            return tuple(out)
        if tag == "floats":
            if not raw:
                return ()
            return tuple(float(p) for p in raw.split(","))
    except ValueError as e:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tag}") from None
    raise ConfigError(f"{where}: unknown type tag {tag}")


def _format_value(tag: str, value) -> str:
    if tag == "bool":
        return "true" if value else "false"
    if tag == "pairs":
        return ",".join(f"{a}:{b}" for a, b in value)
    if tag == "floats":
        return ",".join(repr(float(v)) for v in value)
    if tag == "float":
        return repr(float(value))
    return str(value)


def parse_config(text: str) -> dict[str, dict[str, object]]:
    """Strict parse: unknown sections/keys, bad values, and stray lines all raise."""
    result = default_config()
    section: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        tag, _ = CONFIG_SCHEMA[section][key]
        result[section][key] = _parse_value(tag, raw, f"line {lineno}")
    return result


def serialize_config(cfg: dict[str, dict[str, object]]) -> str:
    lines = []
    for section, keys in CONFIG_SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (tag, _) in keys.items():
            lines.append(f"{key} = {_format_value(tag, cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str) -> dict[str, dict[str, object]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: dict[str, dict[str, object]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def config_hash(cfg: dict[str, dict[str, object]]) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# checkpoint
# ---------------------------------------------------------------------------

KINDS = ("param", "moment1", "moment2", "rng", "meta")


@dataclass(frozen=True)
class TensorEntry:
    name: str
    kind: str
    array: Array


def u64_to_limbs(value: int) -> np.ndarray:
    """u64 -> four 16-bit limbs as float32 (each exactly representable)."""
    value = int(value) & ((1 << 64) - 1)
    return np.array([(value >> (16 * i)) & 0xFFFF for i in range(4)], np.float32)


def limbs_to_u64(limbs: Array) -> int:
    out = 0
    for i, limb in enumerate(np.asarray(limbs).reshape(-1)[:4]):
        out |= (int(limb) & 0xFFFF) << (16 * i)
    return out


def write_checkpoint(path: str, entries: list[TensorEntry], meta: dict | None = None) -> None:
    tensors = []
    offset = 0
    blobs = []
    for e in entries:
        if e.kind not in KINDS:
            raise FormatError(f"unknown tensor kind {e.kind!r}")
        arr = np.ascontiguousarray(e.array, dtype="<f4")
        tensors.append({"name": e.name, "shape": list(arr.shape), "offset": offset, "kind": e.kind})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = json.dumps({"tensors": tensors, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[dict[str, tuple[str, Array]], dict]:
    """Returns ({name: (kind, array)}, meta); any structural defect raises FormatError."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint: {e}") from None
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError("bad magic: not a checkpoint file")
    version = int(np.frombuffer(raw[4:8], "<u4")[0])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(raw[8:12], "<u4")[0])
    if 12 + header_len > len(raw):
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
        tensors = header["tensors"]
        meta = header.get("meta", {})
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise FormatError(f"malformed checkpoint header: {e}") from None
    payload = np.frombuffer(raw[12 + header_len:], "<f4")
    expected = 0
    prev_end = 0
    for t in tensors:
        size = int(np.prod(t["shape"], dtype=np.int64)) if t["shape"] else 1
        if t["offset"] != prev_end:
            raise FormatError(f"tensor {t['name']!r}: offsets must be ascending and non-overlapping")
        if t["kind"] not in KINDS:
            raise FormatError(f"tensor {t['name']!r}: unknown kind {t['kind']!r}")
        prev_end = t["offset"] + size
        expected += size
    if payload.size != expected:
        raise FormatError(f"payload length {payload.size} != sum of tensor sizes {expected}")
    out: dict[str, tuple[str, Array]] = {}
    for t in tensors:
        size = int(np.prod(t["shape"], dtype=np.int64)) if t["shape"] else 1
        arr = payload[t["offset"]: t["offset"] + size].reshape(t["shape"]).copy()
        out[t["name"]] = (t["kind"], arr)
    return out, meta
