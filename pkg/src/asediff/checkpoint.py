"""On-disk formats: network checkpoints and sample matrices.

Checkpoint layout (all integers little-endian)::

    bytes 0..7     magic b"ASECKPT\\x01"
    bytes 8..15    uint64 manifest length M
    next M bytes   UTF-8 JSON manifest (sorted keys, no whitespace)
    remainder      payload: float32 little-endian tensors in manifest order

The manifest holds ``format_version``, ``network`` (the NetworkConfig),
``noise`` (beta table and sigma kind), ``tensors`` (a list of ``{name,
shape, dtype, offset, length}`` with byte offsets into the payload) and a
free-form ``meta`` object (for instance the config digest).

Sample file layout: one ASCII header line ``"<n> <dim> <digest>\\n"``
followed by ``n * dim`` float32 little-endian values in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ContractError
from .network import NetworkConfig, ScoreNetwork, param_shapes

MAGIC = b"ASECKPT\x01"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ContractError):
    """Unreadable or inconsistent checkpoint/sample file."""


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def encode_checkpoint(net: ScoreNetwork, ns: NoiseSchedule, meta: dict | None = None) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, shape in param_shapes(net.config):
        buf = np.ascontiguousarray(net.params[name], dtype=_F32).tobytes()
        tensors.append({"name": name, "shape": list(shape), "dtype": "float32",
                        "offset": offset, "length": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    manifest = {"format_version": FORMAT_VERSION, "network": net.config.to_dict(),
                "noise": ns.to_dict(), "tensors": tensors, "meta": meta or {}}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode_checkpoint(blob: bytes):
    """Returns ``(net, noise_schedule, meta)``; the network is float32."""
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (m,) = struct.unpack("<Q", blob[8:16])
    if 16 + m > len(blob):
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(blob[16:16 + m].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')!r}")
    config = NetworkConfig(**manifest["network"])
    ns = NoiseSchedule(np.asarray(manifest["noise"]["beta"], dtype=np.float64),
                       manifest["noise"]["sigma_kind"])
    payload = blob[16 + m:]
    expected = dict(param_shapes(config))
    params, pos = {}, 0
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"tensor {name} has shape {shape}, expected {expected.get(name)}")
        if entry["dtype"] != "float32" or entry["offset"] != pos:
            raise CheckpointError(f"tensor {name}: non-contiguous or unsupported entry")
        n = entry["length"]
        if n != int(np.prod(shape, dtype=np.int64)) * 4 or pos + n > len(payload):
            raise CheckpointError(f"tensor {name}: bad length")
        params[name] = np.frombuffer(payload, dtype=_F32, count=n // 4, offset=pos) \
            .reshape(shape).astype(np.float32)
        pos += n
    if pos != len(payload):
        raise CheckpointError("payload length does not match the tensor index")
    if set(params) != set(expected):
        raise CheckpointError("tensor index does not cover the network parameters")
    return ScoreNetwork(config, params), ns, manifest.get("meta", {})


def save_checkpoint(path, net: ScoreNetwork, ns: NoiseSchedule, meta: dict | None = None):
    _atomic_write(path, encode_checkpoint(net, ns, meta))


def load_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(blob)


def encode_samples(x, digest: str = "-") -> bytes:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ContractError("samples must be an (n, dim) matrix")
    if not digest or any(c.isspace() for c in digest):
        raise ContractError("digest must be a non-empty token without whitespace")
    head = f"{x.shape[0]} {x.shape[1]} {digest}\n".encode("ascii")
    return head + np.ascontiguousarray(x, dtype=_F32).tobytes()


def decode_samples(blob: bytes):
    """Returns ``(samples float32 (n, dim), digest)``."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError("sample file has no header line")
    try:
        fields = blob[:nl].decode("ascii").split()
        n, dim = int(fields[0]), int(fields[1])
        digest = fields[2] if len(fields) > 2 else "-"
    except (UnicodeDecodeError, ValueError, IndexError):
        raise CheckpointError("malformed sample header") from None
    body = blob[nl + 1:]
    if len(body) != n * dim * 4:
        raise CheckpointError(f"sample payload holds {len(body)} bytes, header implies {n * dim * 4}")
    return np.frombuffer(body, dtype=_F32).reshape(n, dim).copy(), digest


def save_samples(path, x, digest: str = "-"):
    _atomic_write(path, encode_samples(x, digest))


def load_samples(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read samples {path}: {exc.strerror}") from None
    return decode_samples(blob)


__all__ = ["CheckpointError", "decode_checkpoint", "decode_samples", "encode_checkpoint",
           "encode_samples", "load_checkpoint", "load_samples", "save_checkpoint",
           "save_samples"]
