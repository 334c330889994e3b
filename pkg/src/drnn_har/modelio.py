"""Self-describing binary model file.

Layout::

    8 bytes   magic  b"DRNNHAR\\0"
    4 bytes   format version, little-endian uint32
    8 bytes   header length N, little-endian uint64
    N bytes   UTF-8 JSON header (config, seed, metadata, parameter manifest,
              payload SHA-256)
    ...       raw little-endian float64 arrays, in manifest order

The header is serialized with sorted keys so identical models produce
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .network import LstmLayerParams, NetworkConfig, NetworkParams, OutputLayerParams

MAGIC = b"DRNNHAR\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ModelFormatError(ValueError):
    """Raised for unreadable, corrupt or inconsistent model files."""


def to_bytes(params: NetworkParams, seed: int | None = None, metadata: dict | None = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in params.named_arrays():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "config": params.config.to_dict(),
        "seed": seed,
        "metadata": metadata or {},
        "params": manifest,
        "dtype": "float64-le",
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload


def from_bytes(blob: bytes) -> tuple[NetworkParams, dict]:
    """Parse a model file; returns ``(params, header)``."""
    if len(blob) < _PREFIX.size:
        raise ModelFormatError("file too short to be a model file")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError("bad magic bytes; not a model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from None
    payload = blob[start + header_len :]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise ModelFormatError("payload checksum mismatch; file is corrupt or truncated")

    try:
        config = NetworkConfig(**header["config"])
        arrays = {}
        for entry in header["params"]:
            n = int(np.prod(entry["shape"], dtype=np.int64))
            if entry["nbytes"] != 8 * n or entry["offset"] + entry["nbytes"] > len(payload):
                raise ModelFormatError(f"parameter {entry['name']} has inconsistent size")
            arrays[entry["name"]] = (
                np.frombuffer(payload, dtype="<f8", count=n, offset=entry["offset"])
                .astype(np.float64)
                .reshape(entry["shape"])
            )
        layers = [
            LstmLayerParams(arrays[f"lstm{i}.W"], arrays[f"lstm{i}.R"], arrays[f"lstm{i}.b"])
            for i in range(config.num_layers)
        ]
        params = NetworkParams(layers, OutputLayerParams(arrays["output.W"], arrays["output.b"]))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model shape error: {exc}") from None
    if params.config != config:
        raise ModelFormatError(f"array shapes imply {params.config}, header says {config}")
    return params, header


def save_model(path, params: NetworkParams, seed: int | None = None, metadata: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(params, seed, metadata))


def load_model(path) -> tuple[NetworkParams, dict]:
    return from_bytes(Path(path).read_bytes())
