"""Tensor container files and checkpoint directories.

Container layout (little endian, no padding, no checksum)::

    b"CVT1" | u8 rank | rank x u32 extents | float32 payload, row-major
"""

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError, ParseError

MAGIC = b"CVT1"


def encode_tensor(array):
    arr = np.asarray(array, dtype="<f4", order="C")
    if arr.ndim > 255:
        raise ValueError("rank must fit in one byte")
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 5:
        raise ParseError("truncated header", offset=len(buf))
    if buf[:4] != MAGIC:
        raise ParseError(f"bad magic {buf[:4]!r}", offset=0)
    rank = buf[4]
    dims_end = 5 + 4 * rank
    if len(buf) < dims_end:
        raise ParseError(f"truncated extents for rank {rank}", offset=len(buf))
    shape = struct.unpack(f"<{rank}I", buf[5:dims_end])
    if any(d == 0 for d in shape):
        raise ParseError(f"zero extent in shape {shape}", offset=5)
    count = int(np.prod(shape, dtype=np.int64))
    expected = dims_end + 4 * count
    if len(buf) != expected:
        raise ParseError(f"payload is {len(buf) - dims_end} bytes, shape {shape} needs {4 * count}", offset=min(len(buf), expected))
    return np.frombuffer(buf, dtype="<f4", offset=dims_end, count=count).reshape(shape).astype(np.float32)


def save_tensor(path, array):
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path):
    return decode_tensor(Path(path).read_bytes())


def content_hash(tensors):
    """sha256 over sorted tensor names and their container bytes."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(encode_tensor(tensors[name]))
    return h.hexdigest()


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_checkpoint(directory, tensors, meta):
    """Write ``<name>.cvt`` per tensor plus ``meta.json``. Returns the content hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for stale in directory.glob("*.cvt"):
        stale.unlink()
    for name, arr in tensors.items():
        save_tensor(directory / f"{name}.cvt", arr)
    meta = dict(meta)
    meta["tensors"] = sorted(tensors)
    meta["content_hash"] = content_hash(tensors)
    tmp = directory / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, directory / "meta.json")
    return meta["content_hash"]


def load_checkpoint(directory, verify=True):
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"{directory}: no meta.json, not a checkpoint")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{meta_path}: {exc}") from None
    tensors = {}
    for name in meta.get("tensors", []):
        path = directory / f"{name}.cvt"
        if not path.is_file():
            raise LoadError(f"{directory}: missing tensor file {path.name}")
        tensors[name] = load_tensor(path)
    if verify and content_hash(tensors) != meta.get("content_hash"):
        raise LoadError(f"{directory}: content hash mismatch")
    return tensors, meta


def read_jsonl(path):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}") from None
    return records


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
