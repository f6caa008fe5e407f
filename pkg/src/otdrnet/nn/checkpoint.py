"""Binary checkpoint format.

Layout (little-endian)::

    8s   magic b"OTDRCKPT"
    u32  format version
    32s  sha256 of the canonical architecture JSON
    u32  length of the architecture JSON, then the JSON bytes
    f64  every parameter array, flattened, in declaration order
    u64  optimizer step count
    f64  optimizer first moments, then second moments (same order)
"""

import hashlib
import json
import struct

import numpy as np

from ..exceptions import FormatError

MAGIC = b"OTDRCKPT"
VERSION = 1


def architecture_hash(arch: dict) -> bytes:
    return hashlib.sha256(json.dumps(arch, sort_keys=True, separators=(",", ":")).encode()).digest()


def save_checkpoint(path, arch: dict, params, opt_t=0, opt_moments=()):
    """Write ``params`` (list of arrays) and optional Adam state to ``path``."""
    arch = dict(arch, shapes=[list(p.shape) for p in params])
    blob = json.dumps(arch, sort_keys=True, separators=(",", ":")).encode()
    moments = list(opt_moments) or [np.zeros_like(p) for p in params] * 2
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(architecture_hash(arch))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", int(opt_t)))
        for m in moments:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_checkpoint(path, expected_arch: dict | None = None):
    """Return ``(arch, params, opt_t, moments)``.

    With ``expected_arch`` the stored architecture hash must match.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: not an otdrnet checkpoint")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    digest = data[12:44]
    (n,) = struct.unpack_from("<I", data, 44)
    arch = json.loads(data[48:48 + n])
    if architecture_hash(arch) != digest:
        raise FormatError(f"{path}: architecture header corrupted")
    if expected_arch is not None:
        want = dict(expected_arch)
        want.setdefault("shapes", arch["shapes"])
        if architecture_hash(want) != digest:
            raise FormatError(f"{path}: architecture hash does not match the model")
    off = 48 + n
    shapes = [tuple(s) for s in arch["shapes"]]

    def read_arrays(off):
        out = []
        for shape in shapes:
            size = int(np.prod(shape)) * 8
            if off + size > len(data):
                raise FormatError(f"{path}: truncated")
            out.append(np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).copy())
            off += size
        return out, off

    params, off = read_arrays(off)
    if off + 8 > len(data):
        raise FormatError(f"{path}: truncated")
    (opt_t,) = struct.unpack_from("<Q", data, off)
    off += 8
    m, off = read_arrays(off)
    v, off = read_arrays(off)
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return arch, params, opt_t, m + v
