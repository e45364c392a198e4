"""Checkpoint container: JSON header plus raw little-endian float32 blobs.

Layout: 4-byte magic "LFCK", u32 format version, u64 header length, UTF-8
canonical-JSON header {"metadata": ..., "tensors": [{name, shape, offset,
nbytes}]}, then the blob section (offsets relative to its start). The header
JSON is canonicalized (sorted keys, no whitespace) so save -> load -> save
is byte-identical.
"""

import json
import struct

import numpy as np

from .exceptions import CheckpointFormatError

MAGIC = b"LFCK"
FORMAT_VERSION = 1


def save_checkpoint(path, state, metadata):
    """state: ordered {name: ndarray}; metadata: JSON-serializable dict."""
    tensors = []
    blobs = []
    offset = 0
    for name, arr in state.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"metadata": metadata, "tensors": tensors},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Returns (state, metadata); parameters reload bit-exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: corrupt header ({e})") from e
    base = 16 + hlen

    state = {}
    for entry in header["tensors"]:
        name = entry["name"]
        if name in state:
            raise CheckpointFormatError(f"{path}: duplicate tensor {name!r}")
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise CheckpointFormatError(f"{path}: tensor {name!r} extends past EOF")
        arr = np.frombuffer(raw[start:end], dtype="<f4").reshape(entry["shape"])
        state[name] = arr.copy()
    return state, header["metadata"]
