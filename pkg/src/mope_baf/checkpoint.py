"""Binary checkpoint format: versioned, CRC-guarded, bit-exact round trip.

Layout: magic "MPBF" | u32 version | u32 crc32(body) | u64 body length | body.
The body is a u32-length-prefixed JSON header (config echo, tensor manifest,
optimizer scalars, RNG provenance) followed by the raw little-endian float64
payloads in manifest order.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import InputError
from .numerics import Tensor
from .training import OptimizerState

MAGIC = b"MPBF"
VERSION = 1


def _pack_arrays(arrays: dict[str, np.ndarray]) -> tuple[list, bytes]:
    manifest = []
    payload = bytearray()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(a.shape), "offset": len(payload)})
        payload += a.tobytes()
    return manifest, bytes(payload)


def _unpack_arrays(manifest: list, payload: bytes) -> dict[str, np.ndarray]:
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = a.reshape(shape).astype(np.float64).copy()
    return out


def save_checkpoint(path: str, config_text: str, params: dict[str, Tensor],
                    opt_state: OptimizerState | None = None,
                    rng_info: dict | None = None) -> None:
    manifest, payload = _pack_arrays({k: t.data for k, t in params.items()})
    header: dict = {"config": config_text, "params": manifest,
                    "rng": rng_info or {}}
    if opt_state is not None:
        m_manifest, m_payload = _pack_arrays(
            {f"m.{k}": v for k, v in opt_state.m.items()}
            | {f"v.{k}": v for k, v in opt_state.v.items()})
        for entry in m_manifest:
            entry["offset"] += len(payload)
        header["opt"] = {"step": opt_state.step, "buffers": m_manifest}
        payload += m_payload
    hjson = json.dumps(header).encode("utf-8")
    body = struct.pack("<I", len(hjson)) + hjson + payload
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, zlib.crc32(body)))
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)


def load_checkpoint(path: str) -> tuple[str, dict[str, Tensor],
                                        OptimizerState | None, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    version, crc = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise InputError(f"{path}: version {version}, expected {VERSION}")
    (body_len,) = struct.unpack("<Q", raw[12:20])
    body = raw[20:20 + body_len]
    if len(body) != body_len or zlib.crc32(body) != crc:
        raise InputError(f"{path}: checksum mismatch, file corrupted")
    (hlen,) = struct.unpack("<I", body[:4])
    header = json.loads(body[4:4 + hlen].decode("utf-8"))
    payload = body[4 + hlen:]
    arrays = _unpack_arrays(header["params"], payload)
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    opt = None
    if "opt" in header:
        bufs = _unpack_arrays(header["opt"]["buffers"], payload)
        opt = OptimizerState(
            m={k[2:]: v for k, v in bufs.items() if k.startswith("m.")},
            v={k[2:]: v for k, v in bufs.items() if k.startswith("v.")},
            step=header["opt"]["step"])
    return header["config"], params, opt, header.get("rng", {})


def check_param_names(loaded: dict[str, Tensor], expected: dict[str, Tensor],
                      path: str = "checkpoint") -> None:
    """Reject unknown or missing parameter names against a freshly built model."""
    unknown = sorted(set(loaded) - set(expected))
    missing = sorted(set(expected) - set(loaded))
    if unknown or missing:
        raise InputError(
            f"{path}: parameter name mismatch (unknown={unknown}, missing={missing})")
    for name, t in loaded.items():
        if t.shape != expected[name].shape:
            raise InputError(
                f"{path}: shape mismatch for {name}: {t.shape} vs {expected[name].shape}")
