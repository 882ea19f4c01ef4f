"""Single-file named-tensor container.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON header
``{"format", "precision", "manifest": [{"name", "shape", "offset"}], "extra"}``,
then the little-endian payload in manifest order. Offsets are relative to the
start of the payload.
"""

import json
import struct

import numpy as np

from ..errors import CheckpointMismatch

MAGIC = b"NIKTENS\x00"
FORMAT_VERSION = "neurik-tensors/1"


def save_tensors(path, tensors, precision=32, extra=None):
    dtype = np.dtype("<f4" if precision == 32 else "<f8")
    manifest, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format": FORMAT_VERSION, "precision": precision, "manifest": manifest, "extra": extra or {}}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_tensors(path):
    """Returns (dict name -> array, header dict)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointMismatch(f"{path}: not a neurik tensor file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported format {header.get('format')!r}")
    dtype = np.dtype("<f4" if header["precision"] == 32 else "<f8")
    out = {}
    for entry in header["manifest"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return out, header
