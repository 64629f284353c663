"""Binary tensor container, checkpoints, dataset manifests and descriptor files.

TensorFile layout (all integers little-endian)::

    "SVPT" | version u8 (=1) | dtype u8 | ndim u8 | dims u32 x ndim | payload

dtype 1 is IEEE-754 float32, dtype 2 is uint8; the payload is row-major.

A checkpoint is::

    "SVPC" | header_len u32 | header JSON (utf-8)
    then per section: name_len u16 | name (utf-8) | body_len u64 | TensorFile body

The header JSON carries ``module``, ``stage``, ``seed``, ``config_hash``,
free-form ``meta`` and the ordered section names.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SVPT"
CKPT_MAGIC = b"SVPC"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U8 = 2
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


class FormatError(ValueError):
    """Malformed or unexpected file contents."""


class StageMismatchError(FormatError):
    pass


class ConfigMismatchError(FormatError):
    pass


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype == np.uint8:
        return DTYPE_U8
    if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
        return DTYPE_F32
    raise FormatError(f"unsupported dtype {arr.dtype}")


def encode_tensor(t) -> bytes:
    arr = np.asarray(t)
    if not 1 <= arr.ndim <= 4:
        raise FormatError(f"ndim must be in [1, 4], got {arr.ndim}")
    if any(d == 0 for d in arr.shape):
        raise FormatError(f"zero-length dimension in shape {arr.shape}")
    code = _dtype_code(arr)
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return header + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError("bad magic")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if not 1 <= ndim <= 4:
        raise FormatError(f"bad ndim {ndim}")
    if len(buf) < 7 + 4 * ndim:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    dt = _DTYPES[code]
    start = 7 + 4 * ndim
    nbytes = math.prod(dims) * dt.itemsize
    if len(buf) - start < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - start}")
    if len(buf) - start > nbytes:
        raise FormatError("trailing bytes after payload")
    return np.frombuffer(buf, dtype=dt, count=math.prod(dims), offset=start).reshape(dims).copy()


def write_tensor(t, path) -> None:
    data = encode_tensor(t)
    Path(path).write_bytes(data)


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def as_f32_exact(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Round float64 parameters to the nearest float32 value, kept as float64."""
    return {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in params.items()}


# --- checkpoints ---------------------------------------------------------


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    module: str
    stage: int
    seed: int
    config_hash: str
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write ``ckpt``; ``ckpt.params`` may be a dict or a list of (name, tensor) pairs."""
    items = list(ckpt.params.items()) if isinstance(ckpt.params, dict) else list(ckpt.params)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise FormatError("duplicate section name")
    header = {
        "module": ckpt.module,
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "config_hash": ckpt.config_hash,
        "meta": ckpt.meta,
        "sections": names,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes)
    for name, tensor in items:
        nb = name.encode()
        body = encode_tensor(tensor)
        out.write(struct.pack("<H", len(nb)) + nb + struct.pack("<Q", len(body)) + body)
    Path(path).write_bytes(out.getvalue())


def load_checkpoint(path, expect_stage: int | None = None, expect_hash: str | None = None,
                    expect_module: str | None = None) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8 : 8 + hlen].decode())
    pos = 8 + hlen
    params: dict[str, np.ndarray] = {}
    while pos < len(buf):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode()
        pos += nlen
        (blen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if name in params:
            raise FormatError(f"duplicate section {name!r}")
        params[name] = decode_tensor(buf[pos : pos + blen]).astype(np.float64)
        pos += blen
    if list(params) != header["sections"]:
        raise FormatError("section list does not match header")
    if expect_module is not None and header["module"] != expect_module:
        raise FormatError(f"expected module {expect_module!r}, found {header['module']!r}")
    if expect_stage is not None and header["stage"] != expect_stage:
        raise StageMismatchError(f"expected stage {expect_stage}, found stage {header['stage']}")
    if expect_hash is not None and header["config_hash"] != expect_hash:
        raise ConfigMismatchError("config hash mismatch")
    return Checkpoint(header["module"], header["stage"], header["seed"], header["config_hash"],
                      params, header.get("meta", {}))


# --- manifests -----------------------------------------------------------


class ManifestError(ValueError):
    pass


def validate_manifest(doc: dict, root=None) -> None:
    seen = set()
    for e in doc["entries"]:
        if e["id"] in seen:
            raise ManifestError(f"duplicate id {e['id']}")
        seen.add(e["id"])
        pose = e["pose"]
        if not 0.0 <= pose["heading"] < 360.0:
            raise ManifestError(f"heading out of range for id {e['id']}: {pose['heading']}")
        if not (math.isfinite(pose["easting"]) and math.isfinite(pose["northing"])):
            raise ManifestError(f"non-finite coordinates for id {e['id']}")
        if root is not None:
            for key in ("rgb", "seg"):
                if key in e and not (Path(root) / e[key]).is_file():
                    raise ManifestError(f"missing file {e[key]} for id {e['id']}")


def write_manifest(doc: dict, path) -> None:
    validate_manifest(doc)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(path, check_files: bool = True) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text())
    validate_manifest(doc, path.parent if check_files else None)
    return doc


# --- descriptors ---------------------------------------------------------


def write_descriptors(values: np.ndarray, ids, layout, kind: str, path) -> None:
    """Descriptor matrix as a TensorFile plus ``<path>.json`` layout sidecar."""
    path = Path(path)
    write_tensor(np.asarray(values), path)
    side = {"kind": kind, "ids": [int(i) for i in ids], "layout": [list(p) for p in layout]}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=1) + "\n")


def read_descriptors(path):
    path = Path(path)
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    layout = [tuple(p) for p in side["layout"]]
    return read_tensor(path).astype(np.float64), side["ids"], layout, side["kind"]
