"""Little-endian binary containers for masks and feature bundles.

Mask file::

    offset  size  field
    0       8     magic b"SPKMASK1"
    8       4     uint32 T (frames)
    12      4     uint32 F (bins)
    16      1     uint8 kind (0 = real, 1 = complex)
    17      16*T*F  float64 pairs (re, im), row-major over (T, F)

Feature bundle file::

    0       8     magic b"SPKFEAT1"
    8       4     uint32 T
    12      4     uint32 F
    16      4     uint32 P (number of planes)
    20      ...   P plane headers: uint16 name length, UTF-8 name, uint8 kind
    ...     ...   P plane payloads in header order; real planes are T*F float64,
                  complex planes are T*F (re, im) float64 pairs; all row-major
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MASK_MAGIC = b"SPKMASK1"
FEATURE_MAGIC = b"SPKFEAT1"
REAL, COMPLEX = 0, 1


class ContainerError(ValueError):
    pass


def _complex_bytes(values: np.ndarray) -> bytes:
    v = np.ascontiguousarray(values, dtype=np.complex128)
    return v.view(np.float64).astype("<f8").tobytes()


def write_mask_file(path, values: np.ndarray, kind: int) -> None:
    t, f = values.shape
    Path(path).write_bytes(MASK_MAGIC + struct.pack("<IIB", t, f, kind) + _complex_bytes(values))


def read_mask_file(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MASK_MAGIC:
        raise ContainerError(f"{path}: not a mask file (bad magic)")
    if len(raw) < 17:
        raise ContainerError(f"{path}: truncated header")
    t, f, kind = struct.unpack_from("<IIB", raw, 8)
    if kind not in (REAL, COMPLEX):
        raise ContainerError(f"{path}: unknown kind byte {kind}")
    payload = raw[17:]
    if len(payload) != 16 * t * f:
        raise ContainerError(f"{path}: payload has {len(payload)} bytes, expected {16 * t * f}")
    values = np.frombuffer(payload, dtype="<f8").reshape(t, f, 2)
    return values[..., 0] + 1j * values[..., 1], kind


def write_feature_file(path, planes: list[tuple[str, np.ndarray, int]]) -> None:
    t, f = planes[0][1].shape
    header = FEATURE_MAGIC + struct.pack("<III", t, f, len(planes))
    body = []
    for name, values, kind in planes:
        if values.shape != (t, f):
            raise ContainerError(f"plane {name!r} has shape {values.shape}, expected {(t, f)}")
        encoded = name.encode("utf-8")
        header += struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", kind)
        if kind == REAL:
            body.append(np.ascontiguousarray(values.real, dtype="<f8").tobytes())
        else:
            body.append(_complex_bytes(values))
    Path(path).write_bytes(header + b"".join(body))


def read_feature_file(path) -> list[tuple[str, np.ndarray, int]]:
    raw = Path(path).read_bytes()
    if raw[:8] != FEATURE_MAGIC:
        raise ContainerError(f"{path}: not a feature bundle (bad magic)")
    try:
        t, f, p = struct.unpack_from("<III", raw, 8)
        pos = 20
        heads = []
        for _ in range(p):
            (n,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + n].decode("utf-8")
            (kind,) = struct.unpack_from("<B", raw, pos + 2 + n)
            heads.append((name, kind))
            pos += 3 + n
    except struct.error as e:
        raise ContainerError(f"{path}: truncated header") from e
    planes = []
    for name, kind in heads:
        size = 8 * t * f * (1 if kind == REAL else 2)
        chunk = raw[pos:pos + size]
        if len(chunk) != size:
            raise ContainerError(f"{path}: plane {name!r} truncated")
        arr = np.frombuffer(chunk, dtype="<f8")
        if kind == REAL:
            values = arr.reshape(t, f).astype(np.float64)
        else:
            arr = arr.reshape(t, f, 2)
            values = arr[..., 0] + 1j * arr[..., 1]
        planes.append((name, values, kind))
        pos += size
    if pos != len(raw):
        raise ContainerError(f"{path}: {len(raw) - pos} trailing bytes")
    return planes
