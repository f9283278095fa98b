"""Binary signal/spectrum container format.

Layout (little-endian): magic ``S2SG``, version u32, kind u8
(0 = S2 signal, 1 = SO(3) signal, 2 = S2 spectrum, 3 = SO(3) spectrum),
bw u32, channels u32, then raw f64 payload.  Signals store their samples in
C index order; spectra store only the valid coefficients (|m|, |n| <= l) as
interleaved re/im pairs, channel-major, degrees ascending, orders ascending
from -l to l (m-major then n for SO(3)).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MalformedFile
from .sphere import (
    BandLimit,
    S2Signal,
    S2Spectrum,
    SO3Signal,
    SO3Spectrum,
    make_s2_grid,
    make_so3_grid,
    num_s2_coeffs,
    num_so3_coeffs,
)

MAGIC = b"S2SG"
VERSION = 1

KIND_S2_SIGNAL = 0
KIND_SO3_SIGNAL = 1
KIND_S2_SPECTRUM = 2
KIND_SO3_SPECTRUM = 3

_HEADER = struct.Struct("<4sIBII")


def _pack_s2_coeffs(coeff: np.ndarray, bw: int) -> np.ndarray:
    off = bw - 1
    parts = [coeff[:, l, off - l : off + l + 1] for l in range(bw)]
    flat = np.concatenate([p.reshape(coeff.shape[0], -1) for p in parts], axis=1)
    return flat.ravel()


def _unpack_s2_coeffs(flat: np.ndarray, bw: int, channels: int) -> np.ndarray:
    off = bw - 1
    coeff = np.zeros((channels, bw, 2 * bw - 1), dtype=complex)
    flat = flat.reshape(channels, -1)
    pos = 0
    for l in range(bw):
        n = 2 * l + 1
        coeff[:, l, off - l : off + l + 1] = flat[:, pos : pos + n]
        pos += n
    return coeff


def _pack_so3_coeffs(coeff: np.ndarray, bw: int) -> np.ndarray:
    off = bw - 1
    parts = [
        coeff[:, l, off - l : off + l + 1, off - l : off + l + 1] for l in range(bw)
    ]
    flat = np.concatenate([p.reshape(coeff.shape[0], -1) for p in parts], axis=1)
    return flat.ravel()


def _unpack_so3_coeffs(flat: np.ndarray, bw: int, channels: int) -> np.ndarray:
    off = bw - 1
    coeff = np.zeros((channels, bw, 2 * bw - 1, 2 * bw - 1), dtype=complex)
    flat = flat.reshape(channels, -1)
    pos = 0
    for l in range(bw):
        n = (2 * l + 1) ** 2
        coeff[:, l, off - l : off + l + 1, off - l : off + l + 1] = flat[
            :, pos : pos + n
        ].reshape(channels, 2 * l + 1, 2 * l + 1)
        pos += n
    return coeff


def dumps(obj) -> bytes:
    """Serialize a signal or spectrum to bytes."""
    if isinstance(obj, S2Signal):
        kind, bw, data = KIND_S2_SIGNAL, obj.bw, np.asarray(obj.values, np.float64).ravel()
    elif isinstance(obj, SO3Signal):
        kind, bw, data = KIND_SO3_SIGNAL, obj.bw, np.asarray(obj.values, np.float64).ravel()
    elif isinstance(obj, S2Spectrum):
        kind, bw = KIND_S2_SPECTRUM, obj.bw.bw
        z = _pack_s2_coeffs(obj.coeff, bw)
        data = np.empty(2 * z.size, np.float64)
        data[0::2], data[1::2] = z.real, z.imag
    elif isinstance(obj, SO3Spectrum):
        kind, bw = KIND_SO3_SPECTRUM, obj.bw.bw
        z = _pack_so3_coeffs(obj.coeff, bw)
        data = np.empty(2 * z.size, np.float64)
        data[0::2], data[1::2] = z.real, z.imag
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    channels = obj.channels
    header = _HEADER.pack(MAGIC, VERSION, kind, bw, channels)
    return header + data.astype("<f8").tobytes()


def loads(buf: bytes):
    """Deserialize bytes produced by :func:`dumps`."""
    if len(buf) < _HEADER.size:
        raise MalformedFile("buffer shorter than header")
    magic, version, kind, bw, channels = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MalformedFile(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedFile(f"unsupported version {version}")
    payload = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
    n = 2 * bw
    if kind == KIND_S2_SIGNAL:
        expect = channels * n * n
        if payload.size != expect:
            raise MalformedFile(f"payload size {payload.size}, expected {expect}")
        return S2Signal(make_s2_grid(bw), payload.reshape(channels, n, n).copy())
    if kind == KIND_SO3_SIGNAL:
        expect = channels * n * n * n
        if payload.size != expect:
            raise MalformedFile(f"payload size {payload.size}, expected {expect}")
        return SO3Signal(make_so3_grid(bw), payload.reshape(channels, n, n, n).copy())
    if kind == KIND_S2_SPECTRUM:
        expect = 2 * channels * num_s2_coeffs(bw)
        if payload.size != expect:
            raise MalformedFile(f"payload size {payload.size}, expected {expect}")
        z = payload[0::2] + 1j * payload[1::2]
        return S2Spectrum(BandLimit(bw), _unpack_s2_coeffs(z, bw, channels))
    if kind == KIND_SO3_SPECTRUM:
        expect = 2 * channels * num_so3_coeffs(bw)
        if payload.size != expect:
            raise MalformedFile(f"payload size {payload.size}, expected {expect}")
        z = payload[0::2] + 1j * payload[1::2]
        return SO3Spectrum(BandLimit(bw), _unpack_so3_coeffs(z, bw, channels))
    raise MalformedFile(f"unknown kind {kind}")


def save(obj, path):
    Path(path).write_bytes(dumps(obj))


def load(path):
    return loads(Path(path).read_bytes())
