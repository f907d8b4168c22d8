"""
Binary checkpoints.

Layout (all little-endian)::

    b"LCL1"                 magic
    u32 version             currently 1
    u32 kmax                velocity truncation
    u32 n_acc               number of accumulator reals
    u32 n_counters          number of RNG counters
    f64 t                   solver time
    f64 a[(2K+1)^2]         velocity coefficients, row-major [k1+K, k2+K]
    f64 x[2], v[2]          particle position and direction
    f64 A[4]                tangent matrix, row-major
    f64 counters[n]         RNG counters (integers, exact below 2^53)
    f64 acc[n_acc]          estimator accumulators

Reals are written with ``tobytes`` so a save/load/save cycle is bit-exact.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, CheckpointError
from ..solver import SnsState
from ..spectral import SpectralVelocity

MAGIC = b"LCL1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class Checkpoint:
    state: SnsState
    x: np.ndarray
    v: np.ndarray
    A: np.ndarray
    counters: tuple = ()
    accumulators: np.ndarray = None


def to_bytes(ck):
    u = ck.state.u
    acc = np.zeros(0) if ck.accumulators is None else np.asarray(ck.accumulators, dtype="<f8")
    counters = np.asarray(ck.counters, dtype=np.int64)
    if counters.size and (counters.min() < 0 or counters.max() >= 2 ** 53):
        raise CheckpointError("RNG counter out of range")
    head = _HEADER.pack(MAGIC, VERSION, u.kmax, acc.size, counters.size)
    body = np.concatenate([
        [float(ck.state.t)], u.coeffs.ravel(), np.asarray(ck.x, float), np.asarray(ck.v, float),
        np.asarray(ck.A, float).ravel(), counters.astype(float), acc,
    ]).astype("<f8")
    return head + body.tobytes()


def from_bytes(data):
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise CheckpointError("truncated header")
    _, version, K, n_acc, n_cnt = _HEADER.unpack_from(data)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    n = 2 * K + 1
    count = 1 + n * n + 8 + n_cnt + n_acc
    if len(data) != _HEADER.size + 8 * count:
        raise CheckpointError(f"expected {_HEADER.size + 8 * count} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    i = 1 + n * n
    coeffs = body[1:i].reshape(n, n)
    cnt = body[i + 8:i + 8 + n_cnt]
    if np.any(cnt != np.floor(cnt)):
        raise CheckpointError("non-integer RNG counter")
    return Checkpoint(
        state=SnsState(SpectralVelocity(K, coeffs), float(body[0])),
        x=body[i:i + 2].copy(), v=body[i + 2:i + 4].copy(), A=body[i + 4:i + 8].reshape(2, 2).copy(),
        counters=tuple(int(c) for c in cnt), accumulators=body[i + 8 + n_cnt:].copy(),
    )


def checkpoint_save(ck, path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    tmp.replace(path)


def checkpoint_load(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return from_bytes(data)
