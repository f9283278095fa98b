"""Half-spectrum fast path for real signals (internal).

Every activation inside the network is real, so its SO(3) spectrum satisfies
``c[l, -m, -n] = (-1)^{m+n} conj(c[l, m, n])`` and only the ``m >= 0`` rows
need to be computed or stored.  This module mirrors the transform and layer
primitives of :mod:`s2seg.harmonics` / :mod:`s2seg.spectral_ops` on that half
representation, roughly halving FFT, quadrature and block-matmul work.  The
public full-spectrum API remains the reference; the test suite checks the two
paths agree to rounding.

Half layouts:
  * S2:    ``[C, bw, bw]``            indexed ``[c, l, m]`` for m = 0..bw-1
  * SO(3): ``[C, bw, bw, 2bw-1]``     indexed ``[c, l, m, n + bw - 1]``

Adjoints (``*_vjp``) are exact transposes of the forward maps with respect to
the real inner product Re<a, b>; they are what the network backward pass uses.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .harmonics import legendre_table, sft_raw, wigner_table
from .sphere import make_s2_grid, make_so3_grid

_FFT_WORKERS = -1


def _rdt(a):
    return np.float32 if a.dtype in (np.float32, np.complex64) else np.float64


def _cdt(a):
    return np.complex64 if a.dtype in (np.float32, np.complex64) else np.complex128


def _wrapped_n(bw: int) -> np.ndarray:
    return np.arange(-(bw - 1), bw) % (2 * bw)


def _cast_tab(a: np.ndarray, dtype):
    # tables live forever in the harmonics cache; reuse its dtype-cast cache
    from .harmonics import _cast

    return _cast(a, dtype)


def half_from_full_so3(coeff: np.ndarray, bw: int) -> np.ndarray:
    """Slice the m >= 0 rows of a dense SO(3) spectrum."""
    return np.ascontiguousarray(coeff[:, :, bw - 1 :, :])


def full_from_half_so3(half: np.ndarray, bw: int) -> np.ndarray:
    """Rebuild the dense spectrum from half rows via conjugate symmetry."""
    C = half.shape[0]
    M = 2 * bw - 1
    out = np.zeros((C, bw, M, M), dtype=half.dtype)
    out[:, :, bw - 1 :, :] = half
    m = np.arange(1, bw)
    n = np.arange(-(bw - 1), bw)
    sgn = ((-1.0) ** (np.abs(m)[:, None] + np.abs(n)[None, :])).astype(half.real.dtype)
    # row -m, col -n from row m, col n
    out[:, :, bw - 2 :: -1, ::-1] = sgn * np.conj(half[:, :, 1:, :])
    return out


# ---------------------------------------------------------------------------
# SO(3) half transforms
# ---------------------------------------------------------------------------

def so3_analysis_half(x: np.ndarray, bw: int) -> np.ndarray:
    """Real samples [C, 2bw, 2bw, 2bw] -> half spectrum [C, bw, bw, 2bw-1]."""
    rdt, cdt = _rdt(x), _cdt(x)
    grid = make_so3_grid(bw)
    Da = _cast_tab(wigner_table(bw).analysis, rdt)[bw - 1 :]  # [m>=0, N, l, j]
    F1 = sfft.rfft(x, axis=2, workers=_FFT_WORKERS)[:, :, :bw, :]
    F2 = sfft.fft(F1, axis=3, workers=_FFT_WORKERS)
    Fg = F2[..., _wrapped_n(bw)]                               # [C, j, m, N]
    Fw = Fg * grid.quad_weight.astype(rdt)[None, :, None, None]
    t = Da @ np.ascontiguousarray(Fw.transpose(2, 3, 1, 0))    # [m, N, l, C]
    out = t.transpose(3, 2, 0, 1) * rdt((np.pi / bw) ** 2)
    return np.ascontiguousarray(out.astype(cdt, copy=False))


def so3_synthesis_half(h: np.ndarray, bw: int) -> np.ndarray:
    """Half spectrum [C, bw, bw, 2bw-1] -> real samples [C, 2bw, 2bw, 2bw]."""
    cdt = _cdt(h)
    rdt = np.float32 if cdt == np.complex64 else np.float64
    Ds = _cast_tab(wigner_table(bw).synthesis, rdt)[bw - 1 :]  # [m>=0, N, j, l]
    ls = ((2 * np.arange(bw) + 1) / (8 * np.pi**2)).astype(rdt)
    cl = h.astype(cdt, copy=False) * ls[None, :, None, None]
    t = Ds @ np.ascontiguousarray(cl.transpose(2, 3, 1, 0))    # [m, N, j, C]
    C = h.shape[0]
    n2 = 2 * bw
    Gn = np.zeros((C, n2, bw, n2), dtype=cdt)                  # [C, j, m, p-freq]
    Gn[:, :, :, _wrapped_n(bw)] = t.transpose(3, 2, 0, 1)
    H = sfft.ifft(Gn, axis=3, workers=_FFT_WORKERS) * n2       # gamma synthesis
    Hp = np.zeros((C, n2, bw + 1, n2), dtype=cdt)
    Hp[:, :, :bw, :] = H
    x = sfft.irfft(Hp, n=n2, axis=2, workers=_FFT_WORKERS) * n2
    return np.ascontiguousarray(x.astype(rdt, copy=False))


def so3_synthesis_half_vjp(ybar: np.ndarray, bw: int) -> np.ndarray:
    """Adjoint of so3_synthesis_half."""
    rdt, cdt = _rdt(ybar), _cdt(ybar)
    n2 = 2 * bw
    A = sfft.fft(ybar.astype(cdt, copy=False), axis=2, workers=_FFT_WORKERS)[:, :, :bw, :]
    # adjoint of (2bw * irfft): bin 0 counts once, interior bins twice
    fac = np.full(bw, 2.0, dtype=rdt)
    fac[0] = 1.0
    Hbar = A * fac[None, None, :, None]
    Gbar = sfft.fft(Hbar, axis=3, workers=_FFT_WORKERS)        # adjoint of n2*ifft
    Gg = Gbar[..., _wrapped_n(bw)]                             # [C, j, m, N]
    Da = _cast_tab(wigner_table(bw).analysis, rdt)[bw - 1 :]
    t = Da @ np.ascontiguousarray(Gg.transpose(2, 3, 1, 0))    # [m, N, l, C]
    ls = ((2 * np.arange(bw) + 1) / (8 * np.pi**2)).astype(rdt)
    return np.ascontiguousarray(t.transpose(3, 2, 0, 1) * ls[None, :, None, None])


def so3_analysis_half_vjp(cbar: np.ndarray, bw: int) -> np.ndarray:
    """Adjoint of so3_analysis_half (returns a real cotangent)."""
    cdt = _cdt(cbar)
    rdt = np.float32 if cdt == np.complex64 else np.float64
    grid = make_so3_grid(bw)
    Ds = _cast_tab(wigner_table(bw).synthesis, rdt)[bw - 1 :]
    t = Ds @ np.ascontiguousarray((cbar * rdt((np.pi / bw) ** 2)).transpose(2, 3, 1, 0))  # [m, N, j, C]
    C = cbar.shape[0]
    n2 = 2 * bw
    Gn = np.zeros((C, n2, bw, n2), dtype=cdt)
    Gn[:, :, :, _wrapped_n(bw)] = t.transpose(3, 2, 0, 1)
    Gn *= grid.quad_weight.astype(rdt)[None, :, None, None]
    F1bar = sfft.ifft(Gn, axis=3, workers=_FFT_WORKERS) * n2   # adjoint of fft
    # adjoint of (rfft then slice): zero-extend bins and take the real part
    Fp = np.zeros((C, n2, n2, n2), dtype=cdt)
    Fp[:, :, :bw, :] = F1bar
    xbar = sfft.ifft(Fp, axis=2, workers=_FFT_WORKERS) * n2
    return np.ascontiguousarray(xbar.real.astype(rdt, copy=False))


# ---------------------------------------------------------------------------
# Layer primitives on the half representation
# ---------------------------------------------------------------------------

def _truncate_half(h: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    cut = bw_in - bw_out
    return h[:, :bw_out, :bw_out, cut : cut + 2 * bw_out - 1]


def _pad_half(h: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    out = np.zeros((h.shape[0], bw_out, bw_out, 2 * bw_out - 1), dtype=h.dtype)
    cut = bw_out - bw_in
    out[:, :bw_in, :bw_in, cut : cut + 2 * bw_in - 1] = h
    return out


def pool_half_fwd(x: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    return so3_synthesis_half(_truncate_half(so3_analysis_half(x, bw_in), bw_in, bw_out), bw_out)


def pool_half_bwd(gy: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    c = so3_synthesis_half_vjp(gy, bw_out)
    return so3_analysis_half_vjp(_pad_half(c, bw_out, bw_in), bw_in)


def unpool_half_fwd(x: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    return so3_synthesis_half(_pad_half(so3_analysis_half(x, bw_in), bw_in, bw_out), bw_out)


def unpool_half_bwd(gy: np.ndarray, bw_in: int, bw_out: int) -> np.ndarray:
    c = so3_synthesis_half_vjp(gy, bw_out)
    return so3_analysis_half_vjp(_truncate_half(c, bw_out, bw_in), bw_in)


def s2_conv_half_fwd(x: np.ndarray, gdense: np.ndarray, bw_in: int, bw_out: int):
    """S2 correlation producing the half SO(3) output at bw_out.

    x [Cin, 2b, 2b]; gdense [out, in, bw_in, 2bw_in-1] (conjugate-symmetric).
    Returns (y [out, 2bo, 2bo, 2bo], xhat_half [Cin, bw_out, bw_out]).
    """
    full = sft_raw(x, bw_in)
    cut = bw_in - bw_out
    xh = np.ascontiguousarray(full[:, :bw_out, bw_in - 1 : bw_in - 1 + bw_out])  # m>=0
    gtr = gdense[:, :, :bw_out, cut : cut + 2 * bw_out - 1]
    kap = (8 * np.pi**2 / (2 * np.arange(bw_out) + 1)).astype(_rdt(x))
    H = np.einsum("ilm,oiln->olmn", xh, np.conj(gtr)) * kap[None, :, None, None]
    return so3_synthesis_half(H, bw_out), xh


def s2_conv_half_bwd(gy: np.ndarray, gdense: np.ndarray, xh: np.ndarray, bw_in: int, bw_out: int):
    """Adjoints of s2_conv_half_fwd -> (gx, gdense_bar)."""
    from .harmonics import sft_vjp

    Hbar = so3_synthesis_half_vjp(gy, bw_out)
    cut = bw_in - bw_out
    gtr = gdense[:, :, :bw_out, cut : cut + 2 * bw_out - 1]
    kap = (8 * np.pi**2 / (2 * np.arange(bw_out) + 1)).astype(xh.real.dtype)
    Hk = Hbar * kap[None, :, None, None]
    xbar_h = np.einsum("oiln,olmn->ilm", gtr, Hk)
    gbar_tr = np.einsum("ilm,olmn->oiln", xh, np.conj(Hk))
    # place the half-row cotangent back into a dense spectrum cotangent
    C = xh.shape[0]
    xbar = np.zeros((C, bw_in, 2 * bw_in - 1), dtype=xbar_h.dtype)
    xbar[:, :bw_out, bw_in - 1 : bw_in - 1 + bw_out] = xbar_h
    gx = sft_vjp(xbar, bw_in)
    gbar = np.zeros(gdense.shape, dtype=gbar_tr.dtype)
    gbar[:, :, :bw_out, cut : cut + 2 * bw_out - 1] = gbar_tr
    return gx, gbar


def so3_conv_half_fwd(x: np.ndarray, gdense: np.ndarray, bw: int):
    """SO(3) correlation on half spectra; gdense [out, in, bw, M, M] full blocks.

    Returns (y [out, n, n, n], xhat_half).
    """
    xh = so3_analysis_half(x, bw)                  # [in, l, m>=0, N]
    cin, cout = x.shape[0], gdense.shape[0]
    off = bw - 1
    Y = np.zeros((cout, bw, bw, 2 * bw - 1), dtype=xh.dtype)
    for l in range(bw):
        mh = min(l, bw - 1) + 1                    # rows m = 0..l
        sl = slice(off - l, off + l + 1)
        n = 2 * l + 1
        X = xh[:, l, :mh, sl].transpose(1, 0, 2).reshape(mh, cin * n)            # [m, i*n]
        G = np.conj(gdense[:, :, l, sl, sl]).transpose(0, 2, 1, 3).reshape(-1, cin * n)
        Y[:, l, :mh, sl] = (X @ G.T).reshape(mh, cout, n).transpose(1, 0, 2)
    return so3_synthesis_half(Y, bw), xh


def so3_conv_half_bwd(gy: np.ndarray, gdense: np.ndarray, xh: np.ndarray, bw: int):
    """Adjoints of so3_conv_half_fwd -> (gx, gdense_bar)."""
    Ybar = so3_synthesis_half_vjp(gy, bw)
    off = bw - 1
    cin, cout = xh.shape[0], gdense.shape[0]
    xbar = np.zeros_like(xh)
    gbar = np.zeros_like(gdense)
    for l in range(bw):
        mh = l + 1
        sl = slice(off - l, off + l + 1)
        n = 2 * l + 1
        Yb = Ybar[:, l, :mh, sl]                                  # [o, m, k]
        G = gdense[:, :, l, sl, sl]                               # [o, i, k, n]
        X = xh[:, l, :mh, sl]                                     # [i, m, n]
        Yb2 = Yb.transpose(1, 0, 2).reshape(mh, cout * n)
        G2 = G.transpose(0, 2, 1, 3).reshape(cout * n, cin * n)
        xbar[:, l, :mh, sl] = (Yb2 @ G2).reshape(mh, cin, n).transpose(1, 0, 2)
        Yc = np.conj(Yb).transpose(0, 2, 1).reshape(cout * n, mh)
        X2 = X.transpose(1, 0, 2).reshape(mh, cin * n)
        gbar[:, :, l, sl, sl] = (Yc @ X2).reshape(cout, n, cin, n).transpose(0, 2, 1, 3)
    gx = so3_analysis_half_vjp(xbar, bw)
    return gx, gbar
