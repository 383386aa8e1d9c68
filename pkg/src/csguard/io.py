"""Binary vector/matrix files with JSON sidecars.

Every file is a 16-byte little-endian header ``(magic, version, rows, cols,
flags)`` followed by ``rows * cols`` float64 values in row-major order.  The
sidecar ``<path>.json`` carries whatever is needed to rebuild the object.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .diffusion import GmmPrior
from .sensing import SecretMatrix

FORMAT_VERSION = 1
MAGIC_MATRIX = b"CSGA"
MAGIC_PRIOR = b"CSGP"
MAGIC_LATENT = b"CSGL"

_HEADER = struct.Struct("<4sHIIH")


class FormatError(ValueError):
    pass


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_array(path, magic: bytes, data: np.ndarray, meta: dict | None = None) -> None:
    path = Path(path)
    data = np.asarray(data, dtype="<f8")
    if data.ndim == 1:
        data = data[None, :]
    rows, cols = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, rows, cols, 0))
        fh.write(np.ascontiguousarray(data).tobytes())
    if meta is not None:
        _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_array(path, magic: bytes) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got, version, rows, cols, _flags = _HEADER.unpack_from(raw)
    if got != magic:
        raise FormatError(f"{path}: magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise FormatError(f"{path}: body has {len(body)} bytes, header says {rows}x{cols}")
    data = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    side = _sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return data, meta


def save_matrix(path, a: SecretMatrix) -> None:
    write_array(path, MAGIC_MATRIX, a.entries, {"seed": a.seed, "cs_ratio": a.cs_ratio})


def load_matrix(path) -> SecretMatrix:
    data, meta = read_array(path, MAGIC_MATRIX)
    return SecretMatrix.from_entries(data, seed=meta.get("seed", 0), cs_ratio=meta.get("cs_ratio"))


def save_prior(path, prior: GmmPrior) -> None:
    write_array(path, MAGIC_PRIOR, prior.means, {"component_std": prior.component_std, "seed": prior.seed})


def load_prior(path) -> GmmPrior:
    data, meta = read_array(path, MAGIC_PRIOR)
    if "component_std" not in meta:
        raise FormatError(f"{path}: sidecar lacks component_std")
    data.setflags(write=False)
    return GmmPrior(data, float(meta["component_std"]), int(meta.get("seed", 0)))


def save_latent(path, z: np.ndarray, meta: dict | None = None) -> None:
    z = np.asarray(z)
    if z.ndim != 1:
        raise FormatError("latent must be a vector")
    write_array(path, MAGIC_LATENT, z, meta)


def load_latent(path) -> tuple[np.ndarray, dict]:
    data, meta = read_array(path, MAGIC_LATENT)
    if data.shape[0] != 1:
        raise FormatError(f"{path}: latent file holds {data.shape[0]} rows")
    return data[0].copy(), meta
