import numpy as np

from s2seg.sphere import BandLimit, S2Spectrum, SO3Spectrum


def random_s2_spectrum(bw, channels, rng, scale=1.0):
    """Random band-limited spectrum with real-signal conjugate symmetry."""
    off = bw - 1
    c = np.zeros((channels, bw, 2 * bw - 1), dtype=complex)
    for l in range(bw):
        c[:, l, off] = scale * rng.normal(size=channels)
        for m in range(1, l + 1):
            z = scale * (rng.normal(size=channels) + 1j * rng.normal(size=channels))
            c[:, l, off + m] = z
            c[:, l, off - m] = (-1.0) ** m * np.conj(z)
    return S2Spectrum(BandLimit(bw), c)


def random_so3_spectrum(bw, channels, rng, scale=1.0):
    """Random band-limited SO(3) spectrum with real-signal conjugate symmetry."""
    off = bw - 1
    c = np.zeros((channels, bw, 2 * bw - 1, 2 * bw - 1), dtype=complex)
    for l in range(bw):
        sl = slice(off - l, off + l + 1)
        blk = scale * (
            rng.normal(size=(channels, 2 * l + 1, 2 * l + 1))
            + 1j * rng.normal(size=(channels, 2 * l + 1, 2 * l + 1))
        )
        m = np.arange(-l, l + 1)
        sgn = (-1.0) ** np.abs(np.add.outer(m, m))
        c[:, l, sl, sl] = 0.5 * (blk + sgn * np.conj(blk[:, ::-1, ::-1]))
    return SO3Spectrum(BandLimit(bw), c)
