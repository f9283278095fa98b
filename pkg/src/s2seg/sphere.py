"""Equiangular grids on S2 and SO(3) and the signal/spectrum containers.

Sampling follows the Driscoll-Healy convention: a bandwidth ``bw`` grid has
2*bw samples per axis, with polar rings at theta_j = pi*(2j+1)/(4*bw) and
uniform azimuth phi_k = pi*k/bw.  Quadrature weights per ring integrate every
polynomial of degree < 2*bw in cos(theta) against sin(theta) d(theta) exactly,
which makes the harmonic transforms in :mod:`s2seg.harmonics` exact on
band-limited signals.

Spectra are stored densely per channel: an S2 spectrum is ``[C, bw, 2*bw-1]``
indexed ``[c, l, m + bw - 1]``; an SO(3) spectrum is ``[C, bw, 2*bw-1, 2*bw-1]``
indexed ``[c, l, m + bw - 1, n + bw - 1]``.  Entries with ``|m| > l`` (or
``|n| > l``) are structural zeros.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

__all__ = [
    "BandLimit",
    "S2Grid",
    "SO3Grid",
    "S2Signal",
    "SO3Signal",
    "S2Spectrum",
    "SO3Spectrum",
    "make_s2_grid",
    "make_so3_grid",
    "num_s2_coeffs",
    "num_so3_coeffs",
]


@dataclass(frozen=True)
class BandLimit:
    """Spherical bandwidth; grids have side 2*bw and spectra degrees l < bw."""

    bw: int

    def __post_init__(self):
        if not isinstance(self.bw, (int, np.integer)) or self.bw < 1:
            raise ValueError(f"bandwidth must be a positive integer, got {self.bw!r}")
        object.__setattr__(self, "bw", int(self.bw))

    @property
    def n(self) -> int:
        """Grid side length (2*bw)."""
        return 2 * self.bw


def as_bandlimit(bw) -> BandLimit:
    return bw if isinstance(bw, BandLimit) else BandLimit(int(bw))


def num_s2_coeffs(bw: int) -> int:
    """Number of (l, m) coefficients per channel: sum of 2l+1 = bw^2."""
    return bw * bw


def num_so3_coeffs(bw: int) -> int:
    """Number of (l, m, n) coefficients per channel: sum of (2l+1)^2."""
    return (4 * bw**3 - bw) // 3


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class S2Grid:
    """Driscoll-Healy grid on the sphere with ring quadrature weights."""

    bw: BandLimit
    theta: np.ndarray
    phi: np.ndarray
    quad_weight: np.ndarray

    @property
    def phi_step(self) -> float:
        return np.pi / self.bw.bw

    def cell_measure(self) -> np.ndarray:
        """Per-cell integration measure [2bw, 2bw]: quad_weight[j] * phi_step."""
        return np.broadcast_to(
            (self.quad_weight * self.phi_step)[:, None], (self.bw.n, self.bw.n)
        )


@dataclass(frozen=True)
class SO3Grid:
    """Euler-angle grid for SO(3): beta like theta, alpha/gamma like phi."""

    bw: BandLimit
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    quad_weight: np.ndarray

    @property
    def ang_step(self) -> float:
        return np.pi / self.bw.bw


def _dh_weights(bw: int) -> np.ndarray:
    """Closed-form Driscoll-Healy ring weights, renormalized so sum == 2."""
    j = np.arange(2 * bw)
    theta = np.pi * (2 * j + 1) / (4 * bw)
    k = np.arange(bw)
    w = (2.0 / bw) * np.sin(theta) * (
        np.sin((2 * k[None, :] + 1) * theta[:, None]) / (2 * k + 1)
    ).sum(axis=1)
    w *= 2.0 / w.sum()
    return w


_grid_cache: dict = {}
_grid_lock = threading.Lock()


def make_s2_grid(bw) -> S2Grid:
    """Build (or fetch the cached) S2 grid at bandwidth ``bw``."""
    bw = as_bandlimit(bw)
    key = ("s2", bw.bw)
    with _grid_lock:
        if key not in _grid_cache:
            j = np.arange(bw.n)
            theta = np.pi * (2 * j + 1) / (4 * bw.bw)
            phi = np.pi * j / bw.bw
            _grid_cache[key] = S2Grid(
                bw, _readonly(theta), _readonly(phi), _readonly(_dh_weights(bw.bw))
            )
        return _grid_cache[key]


def make_so3_grid(bw) -> SO3Grid:
    """Build (or fetch the cached) SO(3) grid at bandwidth ``bw``."""
    bw = as_bandlimit(bw)
    key = ("so3", bw.bw)
    with _grid_lock:
        if key not in _grid_cache:
            j = np.arange(bw.n)
            beta = np.pi * (2 * j + 1) / (4 * bw.bw)
            ang = np.pi * j / bw.bw
            _grid_cache[key] = SO3Grid(
                bw,
                _readonly(ang.copy()),
                _readonly(beta),
                _readonly(ang.copy()),
                _readonly(_dh_weights(bw.bw)),
            )
        return _grid_cache[key]


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass
class S2Signal:
    """Real multi-channel samples on an S2 grid, shape [C, 2bw, 2bw] = [c, theta, phi]."""

    grid: S2Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        n = self.grid.bw.n
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[1:] != (n, n):
            raise ShapeMismatch(f"S2Signal values must be [C, {n}, {n}], got {v.shape}")
        _check_finite(v, "S2Signal")
        self.values = v

    @property
    def bw(self) -> int:
        return self.grid.bw.bw

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def integral(self) -> np.ndarray:
        """Per-channel integral over the sphere by ring quadrature."""
        w = self.grid.quad_weight
        return (self.values * w[None, :, None]).sum(axis=(1, 2)) * self.grid.phi_step


@dataclass
class SO3Signal:
    """Real multi-channel samples on an SO(3) grid, [C, 2bw, 2bw, 2bw] = [c, beta, alpha, gamma]."""

    grid: SO3Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        n = self.grid.bw.n
        if v.ndim == 3:
            v = v[None]
        if v.ndim != 4 or v.shape[1:] != (n, n, n):
            raise ShapeMismatch(
                f"SO3Signal values must be [C, {n}, {n}, {n}], got {v.shape}"
            )
        _check_finite(v, "SO3Signal")
        self.values = v

    @property
    def bw(self) -> int:
        return self.grid.bw.bw

    @property
    def channels(self) -> int:
        return self.values.shape[0]


def _sym_error_s2(coeff: np.ndarray, bw: int) -> float:
    """Max deviation of coeff[l,-m] from (-1)^m conj(coeff[l,m])."""
    m = np.arange(-(bw - 1), bw)
    sgn = (-1.0) ** np.abs(m)
    return float(np.abs(coeff[..., ::-1] * sgn - np.conj(coeff)).max(initial=0.0))


def _sym_error_so3(coeff: np.ndarray, bw: int) -> float:
    m = np.arange(-(bw - 1), bw)
    sgn = (-1.0) ** np.abs(np.add.outer(m, m))
    flipped = coeff[..., ::-1, ::-1] * sgn
    return float(np.abs(flipped - np.conj(coeff)).max(initial=0.0))


@dataclass
class S2Spectrum:
    """Spherical-harmonic coefficients, dense [C, bw, 2bw-1] with m offset bw-1."""

    bw: BandLimit
    coeff: np.ndarray

    def __post_init__(self):
        self.bw = as_bandlimit(self.bw)
        c = np.asarray(self.coeff, dtype=complex)
        b = self.bw.bw
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[1:] != (b, 2 * b - 1):
            raise ShapeMismatch(
                f"S2Spectrum coeff must be [C, {b}, {2 * b - 1}], got {c.shape}"
            )
        self.coeff = c * degree_mask_s2(b)

    @property
    def channels(self) -> int:
        return self.coeff.shape[0]

    def real_symmetry_error(self) -> float:
        return _sym_error_s2(self.coeff, self.bw.bw)

    def degree(self, c: int, l: int) -> np.ndarray:
        """Coefficient vector of degree l, orders -l..l, for channel c."""
        off = self.bw.bw - 1
        return self.coeff[c, l, off - l : off + l + 1]


@dataclass
class SO3Spectrum:
    """Wigner coefficients, dense [C, bw, 2bw-1, 2bw-1] with m,n offsets bw-1."""

    bw: BandLimit
    coeff: np.ndarray

    def __post_init__(self):
        self.bw = as_bandlimit(self.bw)
        c = np.asarray(self.coeff, dtype=complex)
        b = self.bw.bw
        if c.ndim == 3:
            c = c[None]
        if c.ndim != 4 or c.shape[1:] != (b, 2 * b - 1, 2 * b - 1):
            raise ShapeMismatch(
                f"SO3Spectrum coeff must be [C, {b}, {2 * b - 1}, {2 * b - 1}], got {c.shape}"
            )
        self.coeff = c * degree_mask_so3(b)

    @property
    def channels(self) -> int:
        return self.coeff.shape[0]

    def real_symmetry_error(self) -> float:
        return _sym_error_so3(self.coeff, self.bw.bw)

    def block(self, c: int, l: int) -> np.ndarray:
        """(2l+1) x (2l+1) coefficient block of degree l for channel c."""
        off = self.bw.bw - 1
        return self.coeff[c, l, off - l : off + l + 1, off - l : off + l + 1]


_mask_cache: dict = {}


def degree_mask_s2(bw: int) -> np.ndarray:
    """[bw, 2bw-1] mask, 1 where |m| <= l."""
    key = ("s2", bw)
    if key not in _mask_cache:
        l = np.arange(bw)[:, None]
        m = np.abs(np.arange(-(bw - 1), bw))[None, :]
        _mask_cache[key] = _readonly((m <= l).astype(float))
    return _mask_cache[key]


def degree_mask_so3(bw: int) -> np.ndarray:
    """[bw, 2bw-1, 2bw-1] mask, 1 where max(|m|,|n|) <= l."""
    key = ("so3", bw)
    if key not in _mask_cache:
        l = np.arange(bw)[:, None, None]
        m = np.abs(np.arange(-(bw - 1), bw))
        mn = np.maximum(m[:, None], m[None, :])[None]
        _mask_cache[key] = _readonly((mn <= l).astype(float))
    return _mask_cache[key]
