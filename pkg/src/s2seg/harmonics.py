"""Forward/inverse Fourier transforms on S2 and SO(3) and the kernels behind them.

Conventions (fixed once, self-consistent; verified by the test suite):

* Spherical harmonics are orthonormal with the Condon-Shortley phase:
  ``Y_l^m(theta, phi) = Pbar_l^m(cos theta) * exp(i m phi)`` where ``Pbar``
  carries the full normalization ``sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)``.
* The SO(3) synthesis kernel is ``exp(+i m alpha) d^l_mn(beta) exp(+i n gamma)``
  with ``d`` the Wigner small-d in the standard (Varshalovich) sign convention,
  and per-degree synthesis weight ``(2l+1)/(8 pi^2)``.  Analysis integrates
  against the conjugate kernel with the Haar measure
  ``d(alpha) sin(beta) d(beta) d(gamma)``.
* Under these choices the analysis/synthesis pairs are exact inverses on
  band-limited signals, Parseval holds with the plain coefficient 2-norm on
  S2, and the correlation theorems used by :mod:`s2seg.spectral_ops` hold
  without extra constants.

All heavy tables (associated Legendre, Wigner small-d sampled on the beta
grid) are computed once per bandwidth and cached; first use from concurrent
threads is serialized by a lock.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from math import lgamma

import numpy as np
import scipy.fft as sfft

from .errors import SymmetryViolation
from .sphere import (
    S2Signal,
    S2Spectrum,
    SO3Signal,
    SO3Spectrum,
    degree_mask_s2,
    degree_mask_so3,
    make_s2_grid,
    make_so3_grid,
)

__all__ = [
    "LegendreTable",
    "WignerTable",
    "legendre_table",
    "wigner_table",
    "legendre_values",
    "wigner_d_stack",
    "wigner_D_matrix",
    "sft",
    "isft",
    "so3ft",
    "iso3ft",
    "rotate_spectrum",
    "rotate_so3_spectrum",
    "evaluate_s2",
    "evaluate_so3",
    "euler_zyz_to_matrix",
    "matrix_to_euler_zyz",
]

_FFT_WORKERS = -1  # scipy.fft: use all cores

# Tolerance above which a spectrum fed to a real-signal synthesis is rejected.
_SYMMETRY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Basis evaluation
# ---------------------------------------------------------------------------

def legendre_values(bw: int, x: np.ndarray) -> np.ndarray:
    """Orthonormalized associated Legendre values Pbar[l, m+bw-1, j] at points x = cos(theta).

    Includes the sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) factor and the
    Condon-Shortley phase; negative orders follow
    Pbar_l^{-m} = (-1)^m Pbar_l^m.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    off = bw - 1
    P = np.zeros((bw, 2 * bw - 1, x.size))
    P[0, off] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, bw):
        P[m, m + off] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1 + off]
    for m in range(0, bw - 1):
        P[m + 1, m + off] = np.sqrt(2.0 * m + 3.0) * x * P[m, m + off]
    for m in range(0, bw):
        for l in range(m + 2, bw):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[l, m + off] = a * (x * P[l - 1, m + off] - b * P[l - 2, m + off])
    for m in range(1, bw):
        P[:, off - m] = (-1.0) ** m * P[:, off + m]
    return P


def wigner_d_stack(lmax: int, beta: np.ndarray) -> np.ndarray:
    """Wigner small-d values d[l, m+lmax, n+lmax, j] for 0 <= l <= lmax at angles beta.

    Degrees are filled by the three-term recurrence in l; each new degree's
    boundary band max(|m|,|n|) == l comes from the closed form
    xi * sqrt((mu+nu)!/(mu! nu!)) sin(beta/2)^mu cos(beta/2)^nu with
    mu = |m-n|, nu = |m+n|.
    """
    beta = np.asarray(beta, dtype=np.float64).ravel()
    J = beta.size
    W = 2 * lmax + 1
    off = lmax
    d = np.zeros((lmax + 1, W, W, J))
    d[0, off, off] = 1.0
    if lmax == 0:
        return d
    cb = np.cos(beta)
    sb2, cb2 = np.sin(beta / 2.0), np.cos(beta / 2.0)

    def seed(l: int, m: int, n: int) -> np.ndarray:
        mu, nu = abs(m - n), abs(m + n)
        xi = (-1.0) ** (m - n) if n < m else 1.0
        fac = np.exp(0.5 * (lgamma(mu + nu + 1) - lgamma(mu + 1) - lgamma(nu + 1)))
        return xi * fac * sb2**mu * cb2**nu

    d[1, off, off] = cb
    for m in (-1, 0, 1):
        for n in (-1, 0, 1):
            if max(abs(m), abs(n)) == 1:
                d[1, m + off, n + off] = seed(1, m, n)
    for l in range(2, lmax + 1):
        lm1 = l - 1
        m = np.arange(-lm1, lm1 + 1)
        mm = m[:, None]
        nn = m[None, :]
        a = lm1 * np.sqrt((l * l - mm * mm) * (l * l - nn * nn))
        b = (2.0 * lm1 + 1.0) * (
            lm1 * (lm1 + 1.0) * cb[None, None, :] - (mm * nn)[..., None]
        )
        c = (lm1 + 1.0) * np.sqrt(
            np.clip((lm1 * lm1 - mm * mm) * (lm1 * lm1 - nn * nn), 0.0, None)
        )
        sl = slice(off - lm1, off + lm1 + 1)
        d[l, sl, sl] = (b * d[l - 1, sl, sl] - c[..., None] * d[l - 2, sl, sl]) / a[..., None]
        for k in range(-l, l + 1):
            d[l, l + off, k + off] = seed(l, l, k)
            d[l, -l + off, k + off] = seed(l, -l, k)
            if abs(k) < l:
                d[l, k + off, l + off] = seed(l, k, l)
                d[l, k + off, -l + off] = seed(l, k, -l)
    return d


def wigner_D_matrix(l: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Degree-l rotation matrix D^l(alpha, beta, gamma) acting on coefficient vectors.

    ``D^l_mn = exp(-i m alpha) d^l_mn(beta) exp(-i n gamma)``; multiplying a
    degree-l coefficient vector by this matrix yields the coefficients of
    ``omega -> f(R^{-1} omega)`` with ``R = Rz(alpha) Ry(beta) Rz(gamma)``.
    """
    dl = wigner_d_stack(l, np.array([beta]))[l, :, :, 0]
    m = np.arange(-l, l + 1)
    return np.exp(-1j * m[:, None] * alpha) * dl * np.exp(-1j * m[None, :] * gamma)


# ---------------------------------------------------------------------------
# Cached per-bandwidth tables and transform plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LegendreTable:
    """Legendre values on the theta grid of one bandwidth, plus matmul layouts."""

    bw: int
    P: np.ndarray        # [bw, 2bw-1, j]
    analysis: np.ndarray  # [M, bw, j]  (M = 2bw-1)
    synthesis: np.ndarray  # [M, j, bw]


@dataclass(frozen=True)
class WignerTable:
    """Wigner small-d on the beta grid of one bandwidth, plus matmul layouts."""

    bw: int
    d: np.ndarray         # [bw, 2bw-1, 2bw-1, j]
    analysis: np.ndarray  # [M, N, bw, j]
    synthesis: np.ndarray  # [M, N, j, bw]


_tables: dict = {}
_tables_lock = threading.Lock()


def legendre_table(bw: int) -> LegendreTable:
    key = ("leg", bw)
    with _tables_lock:
        if key not in _tables:
            grid = make_s2_grid(bw)
            P = legendre_values(bw, np.cos(grid.theta))
            _tables[key] = LegendreTable(
                bw,
                P,
                np.ascontiguousarray(P.transpose(1, 0, 2)),
                np.ascontiguousarray(P.transpose(1, 2, 0)),
            )
        return _tables[key]


def wigner_table(bw: int) -> WignerTable:
    key = ("wig", bw)
    with _tables_lock:
        if key not in _tables:
            grid = make_so3_grid(bw)
            d = wigner_d_stack(bw - 1, grid.beta)
            _tables[key] = WignerTable(
                bw,
                d,
                np.ascontiguousarray(d.transpose(1, 2, 0, 3)),
                np.ascontiguousarray(d.transpose(1, 2, 3, 0)),
            )
        return _tables[key]


def _cast(a: np.ndarray, dtype) -> np.ndarray:
    key = ("cast", id(a), np.dtype(dtype).str)
    with _tables_lock:
        if key not in _tables:
            _tables[key] = a.astype(dtype)
        return _tables[key]


def _wrapped_m(bw: int) -> np.ndarray:
    """FFT bin index of order m for m = -(bw-1)..(bw-1)."""
    return np.arange(-(bw - 1), bw) % (2 * bw)


def _real_dtype(values: np.ndarray):
    return np.float32 if values.dtype == np.float32 else np.float64


def _complex_dtype(values: np.ndarray):
    if values.dtype in (np.float32, np.complex64):
        return np.complex64
    return np.complex128


# ---------------------------------------------------------------------------
# Raw array transforms (engine API; typed wrappers below)
# ---------------------------------------------------------------------------

def sft_raw(values: np.ndarray, bw: int) -> np.ndarray:
    """Forward S2 transform of real samples [C, 2bw, 2bw] -> coeff [C, bw, 2bw-1]."""
    cdt = _complex_dtype(values)
    rdt = _real_dtype(values)
    grid = make_s2_grid(bw)
    tab = legendre_table(bw)
    Pa = _cast(tab.analysis, rdt)
    F = sfft.fft(values.astype(cdt, copy=False), axis=2, workers=_FFT_WORKERS)
    Fg = F[:, :, _wrapped_m(bw)]                      # [C, j, M]
    Fw = Fg * grid.quad_weight.astype(rdt)[None, :, None]
    t = Pa @ np.ascontiguousarray(Fw.transpose(2, 1, 0))  # [M, bw, C]
    return (np.pi / bw) * np.ascontiguousarray(t.transpose(2, 1, 0))


def isft_cplx_raw(coeff: np.ndarray, bw: int) -> np.ndarray:
    """Inverse S2 transform without the real projection (used by adjoints)."""
    cdt = _complex_dtype(coeff)
    rdt = np.float32 if cdt == np.complex64 else np.float64
    tab = legendre_table(bw)
    Ps = _cast(tab.synthesis, rdt)
    t = Ps @ np.ascontiguousarray(coeff.astype(cdt, copy=False).transpose(2, 1, 0))  # [M, j, C]
    n = 2 * bw
    G = np.zeros((coeff.shape[0], n, n), dtype=cdt)
    G[:, :, _wrapped_m(bw)] = t.transpose(2, 1, 0)
    return sfft.ifft(G, axis=2, workers=_FFT_WORKERS) * n


def isft_raw(coeff: np.ndarray, bw: int) -> np.ndarray:
    return np.ascontiguousarray(isft_cplx_raw(coeff, bw).real)


def sft_vjp(coeff_bar: np.ndarray, bw: int) -> np.ndarray:
    """Adjoint of sft_raw: spectrum cotangent -> real sample cotangent."""
    grid = make_s2_grid(bw)
    scaled = coeff_bar * (np.pi / bw)
    y = isft_cplx_raw(scaled, bw)
    return np.ascontiguousarray(y.real) * grid.quad_weight[None, :, None].astype(
        _real_dtype(y.real)
    )


def isft_vjp(values_bar: np.ndarray, bw: int) -> np.ndarray:
    """Adjoint of isft_raw: real sample cotangent -> spectrum cotangent."""
    cdt = _complex_dtype(values_bar)
    tab = legendre_table(bw)
    Pa = _cast(tab.analysis, np.float32 if cdt == np.complex64 else np.float64)
    F = sfft.fft(values_bar.astype(cdt, copy=False), axis=2, workers=_FFT_WORKERS)
    Fg = F[:, :, _wrapped_m(bw)]
    t = Pa @ np.ascontiguousarray(Fg.transpose(2, 1, 0))
    return np.ascontiguousarray(t.transpose(2, 1, 0))


def so3ft_raw(values: np.ndarray, bw: int) -> np.ndarray:
    """Forward SO(3) transform of real samples [C, 2bw, 2bw, 2bw] -> [C, bw, 2bw-1, 2bw-1]."""
    cdt = _complex_dtype(values)
    rdt = _real_dtype(values)
    grid = make_so3_grid(bw)
    tab = wigner_table(bw)
    Da = _cast(tab.analysis, rdt)
    F = sfft.fftn(values.astype(cdt, copy=False), axes=(2, 3), workers=_FFT_WORKERS)
    mi = _wrapped_m(bw)
    Fg = F[:, :, mi[:, None], mi[None, :]]            # [C, j, M, N]
    Fw = Fg * grid.quad_weight.astype(rdt)[None, :, None, None]
    t = Da @ np.ascontiguousarray(Fw.transpose(2, 3, 1, 0))  # [M, N, bw, C]
    return (np.pi / bw) ** 2 * np.ascontiguousarray(t.transpose(3, 2, 0, 1))


def iso3ft_cplx_raw(coeff: np.ndarray, bw: int) -> np.ndarray:
    cdt = _complex_dtype(coeff)
    rdt = np.float32 if cdt == np.complex64 else np.float64
    tab = wigner_table(bw)
    Ds = _cast(tab.synthesis, rdt)
    ls = ((2 * np.arange(bw) + 1) / (8 * np.pi**2)).astype(rdt)
    cl = coeff.astype(cdt, copy=False) * ls[None, :, None, None]
    t = Ds @ np.ascontiguousarray(cl.transpose(2, 3, 1, 0))  # [M, N, j, C]
    n = 2 * bw
    G = np.zeros((coeff.shape[0], n, n, n), dtype=cdt)
    mi = _wrapped_m(bw)
    G[:, :, mi[:, None], mi[None, :]] = t.transpose(3, 2, 0, 1)
    return sfft.ifftn(G, axes=(2, 3), workers=_FFT_WORKERS) * (n * n)


def iso3ft_raw(coeff: np.ndarray, bw: int) -> np.ndarray:
    return np.ascontiguousarray(iso3ft_cplx_raw(coeff, bw).real)


def so3ft_vjp(coeff_bar: np.ndarray, bw: int) -> np.ndarray:
    """Adjoint of so3ft_raw."""
    grid = make_so3_grid(bw)
    rdt = np.float32 if coeff_bar.dtype == np.complex64 else np.float64
    # Undo the synthesis degree weight, then reuse the complex synthesis.
    ls = ((2 * np.arange(bw) + 1) / (8 * np.pi**2)).astype(rdt)
    scaled = coeff_bar * ((np.pi / bw) ** 2 / ls[None, :, None, None])
    y = iso3ft_cplx_raw(scaled, bw)
    return np.ascontiguousarray(y.real) * grid.quad_weight.astype(rdt)[None, :, None, None]


def iso3ft_vjp(values_bar: np.ndarray, bw: int) -> np.ndarray:
    """Adjoint of iso3ft_raw."""
    cdt = _complex_dtype(values_bar)
    rdt = np.float32 if cdt == np.complex64 else np.float64
    tab = wigner_table(bw)
    Da = _cast(tab.analysis, rdt)
    F = sfft.fftn(values_bar.astype(cdt, copy=False), axes=(2, 3), workers=_FFT_WORKERS)
    mi = _wrapped_m(bw)
    Fg = F[:, :, mi[:, None], mi[None, :]]
    t = Da @ np.ascontiguousarray(Fg.transpose(2, 3, 1, 0))
    ls = ((2 * np.arange(bw) + 1) / (8 * np.pi**2)).astype(rdt)
    return np.ascontiguousarray(t.transpose(3, 2, 0, 1)) * ls[None, :, None, None]


# ---------------------------------------------------------------------------
# Typed wrappers
# ---------------------------------------------------------------------------

def sft(signal: S2Signal) -> S2Spectrum:
    """Forward spherical-harmonic transform; exact for band-limited content."""
    return S2Spectrum(signal.grid.bw, sft_raw(signal.values, signal.bw))


def _check_symmetry(err: float, scale: float, what: str):
    if err > _SYMMETRY_TOL * max(1.0, scale):
        raise SymmetryViolation(
            f"{what} breaks real-signal conjugate symmetry (deviation {err:.3e})"
        )


def isft(spectrum: S2Spectrum) -> S2Signal:
    """Inverse spherical-harmonic transform onto the matching real grid."""
    scale = float(np.abs(spectrum.coeff).max(initial=0.0))
    _check_symmetry(spectrum.real_symmetry_error(), scale, "S2Spectrum")
    bw = spectrum.bw.bw
    return S2Signal(make_s2_grid(bw), isft_raw(spectrum.coeff, bw))


def so3ft(signal: SO3Signal) -> SO3Spectrum:
    """Forward SO(3) Fourier transform; exact for band-limited content."""
    return SO3Spectrum(signal.grid.bw, so3ft_raw(signal.values, signal.bw))


def iso3ft(spectrum: SO3Spectrum) -> SO3Signal:
    """Inverse SO(3) Fourier transform onto the matching real grid."""
    scale = float(np.abs(spectrum.coeff).max(initial=0.0))
    _check_symmetry(spectrum.real_symmetry_error(), scale, "SO3Spectrum")
    bw = spectrum.bw.bw
    return SO3Signal(make_so3_grid(bw), iso3ft_raw(spectrum.coeff, bw))


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def rotate_spectrum(spectrum: S2Spectrum, alpha: float, beta: float, gamma: float) -> S2Spectrum:
    """Coefficients of omega -> f(R^{-1} omega), R = Rz(alpha) Ry(beta) Rz(gamma).

    Applies the degree-l rotation matrix to each degree's coefficient vector;
    per-degree 2-norms are preserved.
    """
    bw = spectrum.bw.bw
    off = bw - 1
    dl = wigner_d_stack(bw - 1, np.array([beta]))[..., 0]
    out = np.empty_like(spectrum.coeff)
    for l in range(bw):
        m = np.arange(-l, l + 1)
        D = (
            np.exp(-1j * m[:, None] * alpha)
            * dl[l, off - l : off + l + 1, off - l : off + l + 1]
            * np.exp(-1j * m[None, :] * gamma)
        )
        blk = spectrum.coeff[:, l, off - l : off + l + 1]
        out[:, l, off - l : off + l + 1] = blk @ D.T
    return S2Spectrum(spectrum.bw, out)


def rotate_so3_spectrum(spectrum: SO3Spectrum, alpha: float, beta: float, gamma: float) -> SO3Spectrum:
    """Coefficients of Q -> h(R^{-1} Q) (left translation by R = Rz Ry Rz)."""
    bw = spectrum.bw.bw
    off = bw - 1
    dl = wigner_d_stack(bw - 1, np.array([beta]))[..., 0]
    out = np.empty_like(spectrum.coeff)
    for l in range(bw):
        m = np.arange(-l, l + 1)
        D = (
            np.exp(-1j * m[:, None] * alpha)
            * dl[l, off - l : off + l + 1, off - l : off + l + 1]
            * np.exp(-1j * m[None, :] * gamma)
        )
        blk = spectrum.coeff[:, l, off - l : off + l + 1, off - l : off + l + 1]
        out[:, l, off - l : off + l + 1, off - l : off + l + 1] = np.einsum(
            "mk,ckn->cmn", D, blk
        )
    return SO3Spectrum(spectrum.bw, out)


def euler_zyz_to_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation matrix Rz(alpha) @ Ry(beta) @ Rz(gamma)."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    rz1 = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1.0]])
    ry = np.array([[cb, 0, sb], [0, 1.0, 0], [-sb, 0, cb]])
    rz2 = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1.0]])
    return rz1 @ ry @ rz2


def matrix_to_euler_zyz(R: np.ndarray) -> tuple[float, float, float]:
    """ZYZ Euler angles of a rotation matrix; gamma = 0 on the degenerate axes."""
    if R[2, 2] > 1.0 - 1e-12:
        return float(np.arctan2(R[1, 0], R[0, 0])), 0.0, 0.0
    if R[2, 2] < -1.0 + 1e-12:
        return float(np.arctan2(-R[1, 0], -R[0, 0])), float(np.pi), 0.0
    beta = float(np.arccos(np.clip(R[2, 2], -1.0, 1.0)))
    alpha = float(np.arctan2(R[1, 2], R[0, 2]))
    gamma = float(np.arctan2(R[2, 1], -R[2, 0]))
    return alpha, beta, gamma


# ---------------------------------------------------------------------------
# Direct (slow) evaluation at arbitrary points; oracle building block
# ---------------------------------------------------------------------------

def evaluate_s2(spectrum: S2Spectrum, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Pointwise synthesis sum over (l, m) at arbitrary angles; returns [C, ...]."""
    bw = spectrum.bw.bw
    shp = np.shape(theta)
    theta = np.asarray(theta, float).ravel()
    phi = np.asarray(phi, float).ravel()
    P = legendre_values(bw, np.cos(theta))
    m = np.arange(-(bw - 1), bw)
    E = np.exp(1j * m[:, None] * phi[None, :])        # [M, pts]
    out = np.einsum("clm,lmp,mp->cp", spectrum.coeff, P, E)
    return out.real.reshape((spectrum.channels,) + shp)


def evaluate_so3(
    spectrum: SO3Spectrum, alpha: np.ndarray, beta: np.ndarray, gamma: np.ndarray
) -> np.ndarray:
    """Pointwise SO(3) synthesis at arbitrary Euler angles; returns [C, ...]."""
    bw = spectrum.bw.bw
    shp = np.shape(alpha)
    alpha = np.asarray(alpha, float).ravel()
    beta = np.asarray(beta, float).ravel()
    gamma = np.asarray(gamma, float).ravel()
    d = wigner_d_stack(bw - 1, beta)                  # [l, M, N, pts]
    m = np.arange(-(bw - 1), bw)
    Ea = np.exp(1j * m[:, None] * alpha[None, :])
    Eg = np.exp(1j * m[:, None] * gamma[None, :])
    ls = (2 * np.arange(bw) + 1) / (8 * np.pi**2)
    out = np.einsum("clmn,l,lmnp,mp,np->cp", spectrum.coeff, ls, d, Ea, Eg)
    return out.real.reshape((spectrum.channels,) + shp)
