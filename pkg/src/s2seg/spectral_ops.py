"""Spectral layer primitives: correlations on S2/SO(3), pooling, gamma-integration.

The two correlation operators are computed entirely in the spectral domain:

* ``s2_conv`` lifts an S2 signal to SO(3).  For each degree l the output
  block is the scaled outer product ``(8 pi^2 / (2l+1)) * fhat_l^m *
  conj(ghat_l^n)`` summed over input channels; synthesizing it at the (lower)
  output bandwidth realizes ``out(R) = integral_{S2} f(w) g(R^{-1} w) dw``,
  i.e. correlation against the kernel swept over all rotations.
* ``so3_conv`` multiplies per-degree coefficient blocks by the
  conjugate-transposed kernel block, realizing the group correlation
  ``out(R) = integral_{SO(3)} f(Q) g(R^{-1} Q) dQ`` at unchanged bandwidth.

Pooling truncates harmonic degrees (ideal low-pass) and resamples on the
smaller grid; unpooling zero-pads degrees.  All operators are linear in the
input signal and exactly equivariant in the spectral domain.

Kernels are parameterized directly by their spectral coefficients under the
real-signal conjugate-symmetry constraint; only the non-redundant half of
each coefficient block is stored as real (re, im) arrays.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import BandwidthMismatch
from .harmonics import (
    iso3ft_raw,
    iso3ft_vjp,
    sft_raw,
    sft_vjp,
    so3ft_raw,
    so3ft_vjp,
)
from .sphere import (
    BandLimit,
    S2Signal,
    S2Spectrum,
    SO3Signal,
    SO3Spectrum,
    make_s2_grid,
    make_so3_grid,
)

__all__ = [
    "S2KernelBank",
    "SO3KernelBank",
    "s2_conv",
    "so3_conv",
    "so3_pool",
    "so3_unpool",
    "integrate_gamma",
]


def _kappa(bw: int) -> np.ndarray:
    """Per-degree Plancherel factor for the S2 -> SO(3) correlation."""
    return 8 * np.pi**2 / (2 * np.arange(bw) + 1)


# ---------------------------------------------------------------------------
# Packed real parameterization of conjugate-symmetric spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Packing:
    """Index maps between packed (re, im) params and a dense coefficient block."""

    block_shape: tuple
    half: np.ndarray      # flat indices of stored entries
    mirror: np.ndarray    # flat index of each entry's conjugate partner (self for m=n=0)
    sign: np.ndarray      # (-1)^m or (-1)^(m+n) relating the pair; 0 for self entries
    selfconj: np.ndarray  # bool: entry is its own partner (im forced to 0)
    degree: np.ndarray    # degree l of each stored entry
    size: int


_pack_cache: dict = {}
_pack_lock = threading.Lock()


def _build_packing(bw: int, so3: bool) -> _Packing:
    off = bw - 1
    half, mirror, sign, selfc, degree = [], [], [], [], []
    if so3:
        shape = (bw, 2 * bw - 1, 2 * bw - 1)
        for l in range(bw):
            for m in range(0, l + 1):
                for n in range(-l, l + 1):
                    if m == 0 and n < 0:
                        continue
                    half.append(np.ravel_multi_index((l, m + off, n + off), shape))
                    mirror.append(np.ravel_multi_index((l, -m + off, -n + off), shape))
                    degree.append(l)
                    selfc.append(m == 0 and n == 0)
                    sign.append(0.0 if selfc[-1] else (-1.0) ** (m + n))
    else:
        shape = (bw, 2 * bw - 1)
        for l in range(bw):
            for m in range(0, l + 1):
                half.append(np.ravel_multi_index((l, m + off), shape))
                mirror.append(np.ravel_multi_index((l, -m + off), shape))
                degree.append(l)
                selfc.append(m == 0)
                sign.append(0.0 if selfc[-1] else (-1.0) ** m)
    return _Packing(
        shape,
        np.asarray(half),
        np.asarray(mirror, dtype=int),
        np.asarray(sign),
        np.asarray(selfc, dtype=bool),
        np.asarray(degree, dtype=int),
        len(half),
    )


def _packing(bw: int, so3: bool) -> _Packing:
    key = (bw, so3)
    with _pack_lock:
        if key not in _pack_cache:
            _pack_cache[key] = _build_packing(bw, so3)
        return _pack_cache[key]


def _expand(re: np.ndarray, im: np.ndarray, pk: _Packing) -> np.ndarray:
    """Packed params [..., H] -> dense conjugate-symmetric block [..., *block_shape]."""
    lead = re.shape[:-1]
    cdt = np.complex64 if re.dtype == np.float32 else np.complex128
    dense = np.zeros(lead + (int(np.prod(pk.block_shape)),), dtype=cdt)
    vals = (re + 1j * np.where(pk.selfconj, 0.0, im)).astype(cdt)
    ns = ~pk.selfconj
    dense[..., pk.half] = vals
    dense[..., pk.mirror[ns]] = pk.sign[ns] * np.conj(vals[..., ns])
    return dense.reshape(lead + pk.block_shape)


def _expand_vjp(gbar: np.ndarray, pk: _Packing, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Cotangent of the dense block -> cotangents of the packed (re, im) params.

    Gather-only: each stored entry reads its own dense slot plus its mirror.
    """
    lead = gbar.shape[: -len(pk.block_shape)]
    flat = gbar.reshape(lead + (-1,))
    h = flat[..., pk.half]
    mir = flat[..., pk.mirror]
    gre = h.real + pk.sign * mir.real
    gim = np.where(pk.selfconj, 0.0, h.imag - pk.sign * mir.imag)
    return gre.astype(dtype), gim.astype(dtype)


@dataclass
class S2KernelBank:
    """[out, in] learnable S2 kernels stored as packed spectral coefficients."""

    bw: int
    re: np.ndarray  # [out, in, H]
    im: np.ndarray

    @property
    def out_channels(self) -> int:
        return self.re.shape[0]

    @property
    def in_channels(self) -> int:
        return self.re.shape[1]

    def expand(self) -> np.ndarray:
        """Dense conjugate-symmetric kernels [out, in, bw, 2bw-1]."""
        return _expand(self.re, self.im, _packing(self.bw, so3=False))

    def grad_from_dense(self, gbar: np.ndarray):
        return _expand_vjp(gbar, _packing(self.bw, so3=False), self.re.dtype)

    def to_spectrum(self) -> S2Spectrum:
        dense = self.expand().reshape(-1, self.bw, 2 * self.bw - 1)
        return S2Spectrum(BandLimit(self.bw), dense)

    @classmethod
    def random(cls, out_channels, in_channels, bw, rng, dtype=np.float64):
        pk = _packing(bw, so3=False)
        sig2 = 1.0 / (in_channels * bw * bw * (2 * pk.degree + 1))
        std = np.sqrt(np.where(pk.selfconj, sig2, sig2 / 2))
        re = rng.normal(size=(out_channels, in_channels, pk.size)) * std
        im = rng.normal(size=(out_channels, in_channels, pk.size)) * std
        im[..., pk.selfconj] = 0.0
        return cls(bw, re.astype(dtype), im.astype(dtype))


@dataclass
class SO3KernelBank:
    """[out, in] learnable SO(3) kernels stored as packed spectral coefficients."""

    bw: int
    re: np.ndarray
    im: np.ndarray

    @property
    def out_channels(self) -> int:
        return self.re.shape[0]

    @property
    def in_channels(self) -> int:
        return self.re.shape[1]

    def expand(self) -> np.ndarray:
        """Dense conjugate-symmetric kernels [out, in, bw, 2bw-1, 2bw-1]."""
        return _expand(self.re, self.im, _packing(self.bw, so3=True))

    def grad_from_dense(self, gbar: np.ndarray):
        return _expand_vjp(gbar, _packing(self.bw, so3=True), self.re.dtype)

    def to_spectrum(self) -> SO3Spectrum:
        M = 2 * self.bw - 1
        return SO3Spectrum(BandLimit(self.bw), self.expand().reshape(-1, self.bw, M, M))

    @classmethod
    def random(cls, out_channels, in_channels, bw, rng, dtype=np.float64):
        pk = _packing(bw, so3=True)
        sig2 = 1.0 / (in_channels * bw * bw * (2 * pk.degree + 1))
        std = np.sqrt(np.where(pk.selfconj, sig2, sig2 / 2))
        re = rng.normal(size=(out_channels, in_channels, pk.size)) * std
        im = rng.normal(size=(out_channels, in_channels, pk.size)) * std
        im[..., pk.selfconj] = 0.0
        return cls(bw, re.astype(dtype), im.astype(dtype))

    @classmethod
    def identity(cls, channels, bw, dtype=np.float64):
        """Kernels whose per-degree blocks are identity matrices (so3_conv no-op)."""
        pk = _packing(bw, so3=True)
        dense = np.zeros((channels, channels) + pk.block_shape, complex)
        off = bw - 1
        for c in range(channels):
            for l in range(bw):
                sl = slice(off - l, off + l + 1)
                dense[c, c, l][sl, sl] = np.eye(2 * l + 1)
        flat = dense.reshape(channels, channels, -1)
        re = flat[..., pk.half].real.astype(dtype)
        im = flat[..., pk.half].imag.astype(dtype)
        return cls(bw, re, im)


# ---------------------------------------------------------------------------
# Engine (raw arrays + dense kernels); typed wrappers below
# ---------------------------------------------------------------------------

def _truncate_s2(coeff: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    cut = bw_in - bw_out
    return coeff[..., :bw_out, cut : cut + 2 * bw_out - 1]


def _pad_s2(coeff: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    out = np.zeros(coeff.shape[:-2] + (bw_out, 2 * bw_out - 1), dtype=coeff.dtype)
    cut = bw_out - bw_in
    out[..., :bw_in, cut : cut + 2 * bw_in - 1] = coeff
    return out


def _truncate_so3(coeff: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    cut = bw_in - bw_out
    w = slice(cut, cut + 2 * bw_out - 1)
    return coeff[..., :bw_out, w, w]


def _pad_so3(coeff: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    M = 2 * bw_out - 1
    out = np.zeros(coeff.shape[:-3] + (bw_out, M, M), dtype=coeff.dtype)
    cut = bw_out - bw_in
    w = slice(cut, cut + 2 * bw_in - 1)
    out[..., :bw_in, w, w] = coeff
    return out


def s2_conv_fwd(x: np.ndarray, gdense: np.ndarray, bw_in: int, bw_out: int):
    """x [Cin, 2b, 2b] real, gdense [out, in, bw_in, M] -> (y [out, 2bo, 2bo, 2bo], cache)."""
    xhat = _truncate_s2(sft_raw(x, bw_in), bw_in, bw_out)
    gtr = _truncate_s2(gdense, bw_in, bw_out)
    kap = _kappa(bw_out).astype(xhat.real.dtype)
    H = np.einsum("ilm,oiln->olmn", xhat, np.conj(gtr)) * kap[None, :, None, None]
    y = iso3ft_raw(H, bw_out)
    return y, xhat


def s2_conv_bwd(gy: np.ndarray, gdense: np.ndarray, xhat: np.ndarray, bw_in: int, bw_out: int):
    """Adjoints of s2_conv_fwd: returns (gx [Cin, 2b, 2b], gdense_bar)."""
    Hbar = iso3ft_vjp(gy, bw_out)
    gtr = _truncate_s2(gdense, bw_in, bw_out)
    kap = _kappa(bw_out).astype(xhat.real.dtype)
    Hk = Hbar * kap[None, :, None, None]
    xbar = np.einsum("oiln,olmn->ilm", gtr, Hk)
    gbar_tr = np.einsum("ilm,olmn->oiln", xhat, np.conj(Hk))
    gx = sft_vjp(_pad_s2(xbar, bw_out, bw_in), bw_in)
    return gx, _pad_s2(gbar_tr, bw_out, bw_in)


def _blocks_matmul(xhat: np.ndarray, gdense: np.ndarray, bw: int) -> np.ndarray:
    """Per-degree Y^l = X^l (G^l)^H summed over input channels.

    xhat [in, bw, M, M]; gdense [out, in, bw, M, M] -> [out, bw, M, M].
    """
    off = bw - 1
    out = np.zeros((gdense.shape[0], bw, 2 * bw - 1, 2 * bw - 1), dtype=xhat.dtype)
    cin = xhat.shape[0]
    for l in range(bw):
        sl = slice(off - l, off + l + 1)
        n = 2 * l + 1
        X = xhat[:, l, sl, sl].transpose(1, 0, 2).reshape(n, cin * n)       # [m, i*n]
        G = np.conj(gdense[:, :, l, sl, sl]).transpose(0, 2, 1, 3).reshape(-1, cin * n)  # [o*k, i*n]
        out[:, l, sl, sl] = (X @ G.T).reshape(n, -1, n).transpose(1, 0, 2)
    return out


def so3_conv_fwd(x: np.ndarray, gdense: np.ndarray, bw: int):
    """x [Cin, n, n, n] real, gdense [out, in, bw, M, M] -> (y [out, n, n, n], xhat)."""
    xhat = so3ft_raw(x, bw)
    Y = _blocks_matmul(xhat, gdense, bw)
    return iso3ft_raw(Y, bw), xhat


def so3_conv_bwd(gy: np.ndarray, gdense: np.ndarray, xhat: np.ndarray, bw: int):
    """Adjoints of so3_conv_fwd: returns (gx, gdense_bar)."""
    Ybar = iso3ft_vjp(gy, bw)
    off = bw - 1
    cin, cout = xhat.shape[0], gdense.shape[0]
    xbar = np.zeros_like(xhat)
    gbar = np.zeros_like(gdense)
    for l in range(bw):
        sl = slice(off - l, off + l + 1)
        n = 2 * l + 1
        Yb = Ybar[:, l, sl, sl]                                   # [o, m, k]
        G = gdense[:, :, l, sl, sl]                               # [o, i, k, n]
        X = xhat[:, l, sl, sl]                                    # [i, m, n]
        # xbar[i,m,n] = sum_{o,k} Yb[o,m,k] G[o,i,k,n]
        Yb2 = Yb.transpose(1, 0, 2).reshape(n, cout * n)          # [m, o*k]
        G2 = G.transpose(0, 2, 1, 3).reshape(cout * n, cin * n)   # [o*k, i*n]
        xbar[:, l, sl, sl] = (Yb2 @ G2).reshape(n, cin, n).transpose(1, 0, 2)
        # gbar[o,i,k,n] = sum_m conj(Yb[o,m,k]) X[i,m,n]
        Yc = np.conj(Yb).transpose(0, 2, 1).reshape(cout * n, n)  # [o*k, m]
        X2 = X.transpose(1, 0, 2).reshape(n, cin * n)             # [m, i*n]
        gbar[:, :, l, sl, sl] = (
            (Yc @ X2).reshape(cout, n, cin, n).transpose(0, 2, 1, 3)
        )
    gx = so3ft_vjp(xbar, bw)
    return gx, gbar


def so3_pool_fwd(x: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    c = so3ft_raw(x, bw_in)
    return iso3ft_raw(_truncate_so3(c, bw_in, bw_out), bw_out)


def so3_pool_bwd(gy: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    cbar = iso3ft_vjp(gy, bw_out)
    return so3ft_vjp(_pad_so3(cbar, bw_out, bw_in), bw_in)


def so3_unpool_fwd(x: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    c = so3ft_raw(x, bw_in)
    return iso3ft_raw(_pad_so3(c, bw_in, bw_out), bw_out)


def so3_unpool_bwd(gy: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    cbar = iso3ft_vjp(gy, bw_out)
    return so3ft_vjp(_truncate_so3(cbar, bw_out, bw_in), bw_in)


def integrate_gamma_fwd(x: np.ndarray, bw: int) -> np.ndarray:
    return x.sum(axis=3) * (np.pi / bw)


def integrate_gamma_bwd(gy: np.ndarray, bw: int) -> np.ndarray:
    n = 2 * bw
    return np.broadcast_to(gy[..., None] * (np.pi / bw), gy.shape + (n,)).copy()


# ---------------------------------------------------------------------------
# Typed wrappers
# ---------------------------------------------------------------------------

def s2_conv(signal: S2Signal, kernels: S2KernelBank, bw_out) -> SO3Signal:
    """Correlate an S2 signal against rotated kernels; output lives on SO(3) at bw_out."""
    bw_out = bw_out.bw if isinstance(bw_out, BandLimit) else int(bw_out)
    if kernels.bw != signal.bw:
        raise BandwidthMismatch(f"kernel bw {kernels.bw} != signal bw {signal.bw}")
    if bw_out > signal.bw:
        raise BandwidthMismatch(f"bw_out {bw_out} exceeds input bw {signal.bw}")
    if kernels.in_channels != signal.channels:
        raise BandwidthMismatch(
            f"kernel expects {kernels.in_channels} channels, signal has {signal.channels}"
        )
    y, _ = s2_conv_fwd(signal.values, kernels.expand(), signal.bw, bw_out)
    return SO3Signal(make_so3_grid(bw_out), y)


def so3_conv(signal: SO3Signal, kernels: SO3KernelBank) -> SO3Signal:
    """Group-correlate an SO(3) signal against rotated kernels at unchanged bandwidth."""
    if kernels.bw != signal.bw:
        raise BandwidthMismatch(f"kernel bw {kernels.bw} != signal bw {signal.bw}")
    if kernels.in_channels != signal.channels:
        raise BandwidthMismatch(
            f"kernel expects {kernels.in_channels} channels, signal has {signal.channels}"
        )
    y, _ = so3_conv_fwd(signal.values, kernels.expand(), signal.bw)
    return SO3Signal(signal.grid, y)


def so3_pool(signal: SO3Signal, bw_out) -> SO3Signal:
    """Ideal spectral low-pass: truncate degrees to l < bw_out, resample smaller grid."""
    bw_out = bw_out.bw if isinstance(bw_out, BandLimit) else int(bw_out)
    if bw_out > signal.bw:
        raise BandwidthMismatch(f"pool target {bw_out} exceeds input bw {signal.bw}")
    return SO3Signal(make_so3_grid(bw_out), so3_pool_fwd(signal.values, signal.bw, bw_out))


def so3_unpool(signal: SO3Signal, bw_out) -> SO3Signal:
    """Zero-pad the spectrum to bw_out and synthesize on the larger grid."""
    bw_out = bw_out.bw if isinstance(bw_out, BandLimit) else int(bw_out)
    if bw_out < signal.bw:
        raise BandwidthMismatch(f"unpool target {bw_out} below input bw {signal.bw}")
    return SO3Signal(make_so3_grid(bw_out), so3_unpool_fwd(signal.values, signal.bw, bw_out))


def integrate_gamma(signal: SO3Signal) -> S2Signal:
    """Collapse SO(3) to S2 by integrating the periodic gamma axis (equal weights)."""
    vals = integrate_gamma_fwd(signal.values, signal.bw)
    return S2Signal(make_s2_grid(signal.bw), vals)
