"""Bit-exact file formats: AVTK tensor blobs, P5 PGM images, checkpoints."""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"AVTK"
VERSION = 1


class TensorFileError(IOError):
    """Raised for malformed or truncated tensor files."""


def write_tensor(path, array):
    """Write a float32 tensor: magic, version u8, rank u8, dims u32 LE, payload LE."""
    # asarray, not ascontiguousarray: the latter promotes rank-0 to rank-1
    a = np.asarray(array, dtype=np.float32, order="C")
    if a.ndim > 255:
        raise TensorFileError("rank exceeds format limit")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.astype("<f4").tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        head = fh.read(6)
        if len(head) != 6 or head[:4] != MAGIC:
            raise TensorFileError(f"{path}: not an AVTK tensor file")
        version, rank = struct.unpack("<BB", head[4:6])
        if version != VERSION:
            raise TensorFileError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        payload = fh.read()
    n = int(np.prod(dims)) if rank else 1
    if len(payload) != 4 * n:
        raise TensorFileError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def write_pgm(path, values):
    """Write a (H, W) array of floats in [0, 1] as an 8-bit binary PGM."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"PGM expects a 2-D array, got shape {v.shape}")
    pix = np.clip(np.round(255.0 * v), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def save_checkpoint(directory, params):
    """Write each parameter as an AVTK blob plus a text manifest."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, (name, tensor) in enumerate(sorted(params.items())):
        fname = f"p{i:04d}.avtk"
        data = tensor.data if hasattr(tensor, "data") else np.asarray(tensor)
        write_tensor(os.path.join(directory, fname), data)
        shape = "x".join(str(s) for s in data.shape) or "scalar"
        lines.append(f"{name}\t{shape}\t{fname}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory):
    """Return a dict of parameter name -> float32 numpy array."""
    manifest = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest):
        raise TensorFileError(f"{directory}: missing manifest.txt")
    out = {}
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, shape, fname = line.split("\t")
            arr = read_tensor(os.path.join(directory, fname))
            want = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            if arr.shape != want:
                raise TensorFileError(f"{name}: manifest shape {want} != blob shape {arr.shape}")
            out[name] = arr
    return out
