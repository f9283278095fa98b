import numpy as np
import pytest

from conftest import random_s2_spectrum, random_so3_spectrum
from s2seg.errors import BandwidthMismatch
from s2seg.harmonics import (
    euler_zyz_to_matrix,
    evaluate_s2,
    evaluate_so3,
    iso3ft,
    isft,
    matrix_to_euler_zyz,
    rotate_so3_spectrum,
    rotate_spectrum,
    sft,
    sft_raw,
    so3ft,
    so3ft_raw,
)
from s2seg.spectral_ops import (
    S2KernelBank,
    SO3KernelBank,
    integrate_gamma,
    integrate_gamma_bwd,
    integrate_gamma_fwd,
    s2_conv,
    s2_conv_bwd,
    s2_conv_fwd,
    so3_conv,
    so3_conv_bwd,
    so3_conv_fwd,
    so3_pool,
    so3_pool_bwd,
    so3_pool_fwd,
    so3_unpool,
    so3_unpool_bwd,
    so3_unpool_fwd,
)
from s2seg.sphere import (
    BandLimit,
    S2Signal,
    S2Spectrum,
    SO3Signal,
    SO3Spectrum,
    make_s2_grid,
    make_so3_grid,
)


def _bank_from_spectrum(spec, out_channels, in_channels, so3=False):
    """Wrap given per-(out,in) spectra into a kernel bank (test helper)."""
    bw = spec.bw.bw
    cls = SO3KernelBank if so3 else S2KernelBank
    bank = cls.random(out_channels, in_channels, bw, np.random.default_rng(0))
    dense = spec.coeff.reshape((out_channels, in_channels) + spec.coeff.shape[1:])
    flat = dense.reshape(out_channels, in_channels, -1)
    from s2seg.spectral_ops import _packing

    pk = _packing(bw, so3)
    bank.re = flat[..., pk.half].real.copy()
    bank.im = flat[..., pk.half].imag.copy()
    bank.im[..., pk.selfconj] = 0.0
    return bank


# ---------------------------------------------------------------------------
# s2_conv
# ---------------------------------------------------------------------------

def test_s2_conv_zonal_kernel_gives_constant():
    rng = np.random.default_rng(0)
    bw = 6
    fspec = random_s2_spectrum(bw, 1, rng)
    f = isft(fspec)
    kcoef = np.zeros((1, bw, 2 * bw - 1), complex)
    g00 = 1.7
    kcoef[0, 0, bw - 1] = g00
    bank = _bank_from_spectrum(S2Spectrum(BandLimit(bw), kcoef), 1, 1)
    out = s2_conv(f, bank, bw)
    expect = f.integral()[0] * g00 / np.sqrt(4 * np.pi)
    assert np.abs(out.values - expect).max() < 1e-10


def test_s2_conv_zero_input():
    bank = S2KernelBank.random(3, 2, 4, np.random.default_rng(1))
    f = S2Signal(make_s2_grid(4), np.zeros((2, 8, 8)))
    out = s2_conv(f, bank, 3)
    assert np.abs(out.values).max() == 0.0


def _s2_conv_quadrature(fsig, kspec, j, k, p):
    """Brute-force correlation at one grid rotation via direct kernel evaluation."""
    bw = fsig.bw
    g2 = fsig.grid
    so3 = make_so3_grid(bw)
    R = euler_zyz_to_matrix(so3.alpha[k], so3.beta[j], so3.gamma[p])
    th, ph = np.meshgrid(g2.theta, g2.phi, indexing="ij")
    pts = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    q = pts @ R
    th2 = np.arccos(np.clip(q[..., 2], -1, 1))
    ph2 = np.arctan2(q[..., 1], q[..., 0])
    gv = evaluate_s2(kspec, th2, ph2)[0]
    return (g2.quad_weight[:, None] * fsig.values[0] * gv).sum() * g2.phi_step


def test_s2_conv_matches_quadrature_oracle():
    rng = np.random.default_rng(2)
    bw = 8
    for trial in range(3):
        fspec = random_s2_spectrum(bw, 1, rng)
        kspec = random_s2_spectrum(bw, 1, rng)
        f = isft(fspec)
        bank = _bank_from_spectrum(kspec, 1, 1)
        out = s2_conv(f, bank, bw)
        for _ in range(3):
            j, k, p = rng.integers(0, 2 * bw, 3)
            ref = _s2_conv_quadrature(f, kspec, j, k, p)
            got = out.values[0, j, k, p]
            assert abs(got - ref) < 1e-6 * max(1.0, abs(ref))


def test_s2_conv_sums_input_channels():
    rng = np.random.default_rng(3)
    bw = 4
    bank = S2KernelBank.random(2, 2, bw, rng)
    f = isft(random_s2_spectrum(bw, 2, rng))
    out = s2_conv(f, bank, bw)
    # compare against summing single-channel runs
    acc = np.zeros_like(out.values)
    for i in range(2):
        sub = S2KernelBank(bw, bank.re[:, i : i + 1], bank.im[:, i : i + 1])
        fi = S2Signal(f.grid, f.values[i : i + 1])
        acc += s2_conv(fi, sub, bw).values
    assert np.abs(out.values - acc).max() < 1e-10


def test_s2_conv_bandwidth_checks():
    bank = S2KernelBank.random(1, 1, 4, np.random.default_rng(4))
    f = S2Signal(make_s2_grid(8), np.zeros((1, 16, 16)))
    with pytest.raises(BandwidthMismatch):
        s2_conv(f, bank, 4)
    bank8 = S2KernelBank.random(1, 1, 8, np.random.default_rng(4))
    with pytest.raises(BandwidthMismatch):
        s2_conv(f, bank8, 9)


# ---------------------------------------------------------------------------
# so3_conv
# ---------------------------------------------------------------------------

def test_so3_conv_identity_kernel():
    rng = np.random.default_rng(5)
    bw = 4
    f = iso3ft(random_so3_spectrum(bw, 2, rng))
    bank = SO3KernelBank.identity(2, bw)  # per-degree identity blocks, diagonal in channels
    out = so3_conv(f, bank)
    assert np.abs(out.values - f.values).max() < 1e-9


def test_so3_conv_zero_kernel():
    rng = np.random.default_rng(6)
    bw = 3
    f = iso3ft(random_so3_spectrum(bw, 1, rng))
    bank = SO3KernelBank.random(2, 1, bw, rng)
    bank.re[:] = 0
    bank.im[:] = 0
    out = so3_conv(f, bank)
    assert np.abs(out.values).max() == 0.0


def test_so3_conv_matches_quadrature_oracle():
    rng = np.random.default_rng(7)
    bw = 4
    grid = make_so3_grid(bw)
    fspec = random_so3_spectrum(bw, 1, rng)
    kspec = random_so3_spectrum(bw, 1, rng)
    f = iso3ft(fspec)
    bank = _bank_from_spectrum(kspec, 1, 1, so3=True)
    out = so3_conv(f, bank)
    BB, AA, GG = np.meshgrid(grid.beta, grid.alpha, grid.gamma, indexing="ij")
    Qmats = np.empty((2 * bw, 2 * bw, 2 * bw, 3, 3))
    for j in range(2 * bw):
        for k in range(2 * bw):
            for p in range(2 * bw):
                Qmats[j, k, p] = euler_zyz_to_matrix(AA[j, k, p], BB[j, k, p], GG[j, k, p])
    for _ in range(3):
        j, k, p = rng.integers(0, 2 * bw, 3)
        R = euler_zyz_to_matrix(grid.alpha[k], grid.beta[j], grid.gamma[p])
        a2 = np.empty_like(AA)
        b2 = np.empty_like(AA)
        g2 = np.empty_like(AA)
        for jj in range(2 * bw):
            for kk in range(2 * bw):
                for pp in range(2 * bw):
                    a2[jj, kk, pp], b2[jj, kk, pp], g2[jj, kk, pp] = matrix_to_euler_zyz(
                        R.T @ Qmats[jj, kk, pp]
                    )
        gv = evaluate_so3(kspec, a2, b2, g2)[0]
        ref = (grid.quad_weight[:, None, None] * f.values[0] * gv).sum() * grid.ang_step**2
        got = out.values[0, j, k, p]
        assert abs(got - ref) < 1e-6 * max(1.0, abs(ref))


# ---------------------------------------------------------------------------
# pool / unpool
# ---------------------------------------------------------------------------

def test_pool_identity_when_target_equals_bw():
    rng = np.random.default_rng(8)
    f = iso3ft(random_so3_spectrum(6, 2, rng))
    out = so3_pool(f, 6)
    assert np.abs(out.values - f.values).max() < 1e-9


def test_pool_then_unpool_of_bandlimited_input():
    rng = np.random.default_rng(9)
    bw = 8
    spec = random_so3_spectrum(4, 1, rng)
    from s2seg.spectral_ops import _pad_so3

    up = SO3Spectrum(BandLimit(bw), _pad_so3(spec.coeff, 4, bw))
    f = iso3ft(up)  # content strictly below degree 4
    back = so3_unpool(so3_pool(f, 4), 8)
    assert np.abs(back.values - f.values).max() < 1e-8


def test_pool_spectrum_is_truncation():
    rng = np.random.default_rng(10)
    f = iso3ft(random_so3_spectrum(8, 1, rng))
    pooled = so3_pool(f, 4)
    big = so3ft(f).coeff
    small = so3ft(pooled).coeff
    cut = 8 - 4
    assert np.abs(small - big[:, :4, cut : cut + 7, cut : cut + 7]).max() < 1e-9


def test_unpool_pads_zero_degrees():
    rng = np.random.default_rng(11)
    f = iso3ft(random_so3_spectrum(4, 1, rng))
    up = so3_unpool(f, 8)
    spec = so3ft(up).coeff
    assert np.abs(spec[:, 4:]).max() < 1e-9
    assert np.abs(so3_pool(up, 4).values - f.values).max() < 1e-8


def test_unpool_same_bw_is_identity():
    rng = np.random.default_rng(12)
    f = iso3ft(random_so3_spectrum(4, 1, rng))
    assert np.abs(so3_unpool(f, 4).values - f.values).max() < 1e-9


def test_pool_unpool_bandwidth_checks():
    f = SO3Signal(make_so3_grid(4), np.zeros((1, 8, 8, 8)))
    with pytest.raises(BandwidthMismatch):
        so3_pool(f, 5)
    with pytest.raises(BandwidthMismatch):
        so3_unpool(f, 3)


# ---------------------------------------------------------------------------
# integrate_gamma
# ---------------------------------------------------------------------------

def test_integrate_gamma_constant():
    bw = 4
    v = 0.37
    f = SO3Signal(make_so3_grid(bw), np.full((2, 8, 8, 8), v))
    out = integrate_gamma(f)
    assert np.abs(out.values - 2 * np.pi * v).max() < 1e-12


def test_integrate_gamma_kills_cos():
    bw = 4
    g = make_so3_grid(bw)
    f = np.broadcast_to(np.cos(g.gamma)[None, None, :], (8, 8, 8)).copy()
    out = integrate_gamma(SO3Signal(g, f[None]))
    assert np.abs(out.values).max() < 1e-12


def test_integrate_gamma_spectral_identity():
    # sft(integrate_gamma(f))[l, m] == sqrt((2l+1)/(4pi)) * so3ft(f)[l, m, 0]
    rng = np.random.default_rng(13)
    bw = 6
    spec = random_so3_spectrum(bw, 1, rng)
    f = iso3ft(spec)
    s2 = sft(integrate_gamma(f))
    fac = np.sqrt((2 * np.arange(bw) + 1) / (4 * np.pi))
    expect = spec.coeff[:, :, :, bw - 1] * fac[None, :, None]
    assert np.abs(s2.coeff - expect).max() < 1e-8


# ---------------------------------------------------------------------------
# linearity and equivariance
# ---------------------------------------------------------------------------

def test_ops_linear_in_input():
    rng = np.random.default_rng(14)
    bw = 4
    a = iso3ft(random_so3_spectrum(bw, 2, rng))
    b = iso3ft(random_so3_spectrum(bw, 2, rng))
    bank = SO3KernelBank.random(3, 2, bw, rng)
    combo = SO3Signal(a.grid, 1.5 * a.values - 0.25 * b.values)
    lhs = so3_conv(combo, bank).values
    rhs = 1.5 * so3_conv(a, bank).values - 0.25 * so3_conv(b, bank).values
    assert np.abs(lhs - rhs).max() < 1e-10
    lhs = so3_pool(combo, 2).values
    rhs = 1.5 * so3_pool(a, 2).values - 0.25 * so3_pool(b, 2).values
    assert np.abs(lhs - rhs).max() < 1e-10
    lhs = integrate_gamma(combo).values
    rhs = 1.5 * integrate_gamma(a).values - 0.25 * integrate_gamma(b).values
    assert np.abs(lhs - rhs).max() < 1e-10


def test_s2_conv_spectral_equivariance():
    # rotating the input left-translates the output, exactly in the spectral domain
    rng = np.random.default_rng(15)
    bw = 8
    fspec = random_s2_spectrum(bw, 1, rng)
    kspec = random_s2_spectrum(bw, 1, rng)
    bank = _bank_from_spectrum(kspec, 1, 1)
    a, b, g = 0.5, 1.3, -0.9
    f = isft(fspec)
    frot = isft(rotate_spectrum(fspec, a, b, g))
    out_rot = so3ft(s2_conv(frot, bank, bw))
    out = so3ft(s2_conv(f, bank, bw))
    translated = rotate_so3_spectrum(out, a, b, g)
    assert np.abs(out_rot.coeff - translated.coeff).max() < 1e-9


def test_s2_conv_zshift_equivariance_spatial():
    # a grid-aligned z-rotation of the input cyclically shifts the alpha axis
    rng = np.random.default_rng(16)
    bw = 8
    f = isft(random_s2_spectrum(bw, 2, rng))
    bank = S2KernelBank.random(2, 2, bw, rng)
    s = 3
    rolled = S2Signal(f.grid, np.roll(f.values, s, axis=2))
    out = s2_conv(f, bank, bw).values
    out_rolled = s2_conv(rolled, bank, bw).values
    assert np.abs(out_rolled - np.roll(out, s, axis=2)).max() < 1e-10


# ---------------------------------------------------------------------------
# adjoint (vjp) dot tests
# ---------------------------------------------------------------------------

def _dot(a, b):
    return float(np.sum(a.real * b.real) + np.sum(a.imag * b.imag))


def test_s2_conv_adjoints():
    rng = np.random.default_rng(17)
    bw_in, bw_out, cin, cout = 5, 3, 2, 3
    x = rng.normal(size=(cin, 2 * bw_in, 2 * bw_in))
    bank = S2KernelBank.random(cout, cin, bw_in, rng)
    dense = bank.expand()
    y, xhat = s2_conv_fwd(x, dense, bw_in, bw_out)
    gy = rng.normal(size=y.shape)
    gx, gdense = s2_conv_bwd(gy, dense, xhat, bw_in, bw_out)
    # directional derivative wrt x
    dx = rng.normal(size=x.shape)
    y2, _ = s2_conv_fwd(x + 1e-6 * dx, dense, bw_in, bw_out)
    num = _dot((y2 - y) / 1e-6, gy)
    ana = _dot(dx, gx)
    assert abs(num - ana) < 1e-4 * max(1.0, abs(ana))
    # directional derivative wrt kernel params through the packing
    dre = rng.normal(size=bank.re.shape)
    dim = rng.normal(size=bank.im.shape)
    bank2 = S2KernelBank(bw_in, bank.re + 1e-6 * dre, bank.im + 1e-6 * dim)
    y3, _ = s2_conv_fwd(x, bank2.expand(), bw_in, bw_out)
    num = _dot((y3 - y) / 1e-6, gy)
    gre, gim = bank.grad_from_dense(gdense)
    from s2seg.spectral_ops import _packing

    pk = _packing(bw_in, so3=False)
    dim2 = dim.copy()
    dim2[..., pk.selfconj] = 0.0
    ana = float((gre * dre).sum() + (gim * dim2).sum())
    assert abs(num - ana) < 1e-4 * max(1.0, abs(ana))


def test_so3_conv_adjoints():
    rng = np.random.default_rng(18)
    bw, cin, cout = 3, 2, 2
    n = 2 * bw
    x = rng.normal(size=(cin, n, n, n))
    bank = SO3KernelBank.random(cout, cin, bw, rng)
    dense = bank.expand()
    y, xhat = so3_conv_fwd(x, dense, bw)
    gy = rng.normal(size=y.shape)
    gx, gdense = so3_conv_bwd(gy, dense, xhat, bw)
    dx = rng.normal(size=x.shape)
    y2, _ = so3_conv_fwd(x + 1e-6 * dx, dense, bw)
    assert abs(_dot((y2 - y) / 1e-6, gy) - _dot(dx, gx)) < 1e-4
    dre = rng.normal(size=bank.re.shape)
    dim = rng.normal(size=bank.im.shape)
    bank2 = SO3KernelBank(bw, bank.re + 1e-6 * dre, bank.im + 1e-6 * dim)
    y3, _ = so3_conv_fwd(x, bank2.expand(), bw)
    num = _dot((y3 - y) / 1e-6, gy)
    gre, gim = bank.grad_from_dense(gdense)
    from s2seg.spectral_ops import _packing

    pk = _packing(bw, so3=True)
    dim2 = dim.copy()
    dim2[..., pk.selfconj] = 0.0
    ana = float((gre * dre).sum() + (gim * dim2).sum())
    assert abs(num - ana) < 1e-4 * max(1.0, abs(ana))


def test_pool_unpool_integrate_adjoints():
    rng = np.random.default_rng(19)
    bw = 4
    n = 2 * bw
    x = rng.normal(size=(2, n, n, n))
    y = so3_pool_fwd(x, bw, 2)
    gy = rng.normal(size=y.shape)
    gx = so3_pool_bwd(gy, bw, 2)
    assert abs(_dot(so3_pool_fwd(x, bw, 2), gy) - _dot(x, gx)) < 1e-9
    y = so3_unpool_fwd(x, bw, 6)
    gy = rng.normal(size=y.shape)
    gx = so3_unpool_bwd(gy, bw, 6)
    assert abs(_dot(so3_unpool_fwd(x, bw, 6), gy) - _dot(x, gx)) < 1e-9
    y = integrate_gamma_fwd(x, bw)
    gy = rng.normal(size=y.shape)
    gx = integrate_gamma_bwd(gy, bw)
    assert abs(_dot(integrate_gamma_fwd(x, bw), gy) - _dot(x, gx)) < 1e-10


def test_kernel_bank_spectrum_roundtrip():
    rng = np.random.default_rng(20)
    bank = SO3KernelBank.random(2, 3, 4, rng)
    spec = bank.to_spectrum()
    assert spec.channels == 6
    assert spec.real_symmetry_error() < 1e-12
