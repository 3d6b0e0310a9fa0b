"""Frequency-domain machinery for block-circulant (periodic) operators.

Images are numpy arrays whose last two axes are ``(height, width)``; leading
axes (typically a channel axis) are treated as a batch.  Every blur used here
is a circular convolution on the full extended grid, so it is diagonal in the
2-D DFT basis and products and solves cost ``O(N log N)``.

Internally the half spectrum of :func:`scipy.fft.rfft2` is used; the public
``response`` and ``dtd_response`` attributes hold full complex spectra.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from ._validation import DimensionError


class SingularSpectrumError(ArithmeticError):
    """A diagonal system has a zero eigenvalue at some frequency bin."""


class NumericalIntegrityError(ArithmeticError):
    """A spectrum that should describe a real operator does not."""


@dataclass(frozen=True)
class PsfKernel:
    """Square, centred point spread function of size ``(2b+1) x (2b+1)``.

    Parameters
    ----------
    taps : ndarray
        Kernel values; the centre tap sits at ``[b, b]``.
    normalize : bool, default True
        Rescale the taps to unit DC gain.
    """

    taps: np.ndarray
    normalize: bool = True

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 != 1:
            raise DimensionError(f"PSF support must be square and odd-sized, got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ValueError("PSF taps must be finite")
        if self.normalize:
            total = taps.sum()
            if total == 0:
                raise ValueError("cannot normalize a PSF with zero DC gain")
            taps = taps / total
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def half_width(self):
        return self.taps.shape[0] // 2

    @property
    def size(self):
        return self.taps.shape[0]

    @property
    def dc_gain(self):
        return float(self.taps.sum())


def delta_psf():
    return PsfKernel(np.ones((1, 1)))


def boxcar_psf(size):
    """Uniform ``size x size`` kernel with unit DC gain."""
    _check_odd(size)
    return PsfKernel(np.ones((size, size)))


def gaussian_psf(size, std=None):
    """Truncated Gaussian on a ``size x size`` support, default std ``sqrt(size)``."""
    _check_odd(size)
    if std is None:
        std = np.sqrt(size)
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / std) ** 2)
    return PsfKernel(np.outer(g, g))


def psf_from_spec(spec):
    """Parse ``"boxcar:13"``, ``"gaussian:5"`` or ``"delta"``."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "delta":
        return delta_psf()
    if not arg:
        raise ValueError(f"PSF spec {spec!r} needs a size, e.g. boxcar:13")
    size = int(arg)
    if kind == "boxcar":
        return boxcar_psf(size)
    if kind == "gaussian":
        return gaussian_psf(size)
    raise ValueError(f"unknown PSF kind {kind!r}")


def _check_odd(size):
    if int(size) != size or size < 1 or size % 2 != 1:
        raise ValueError(f"kernel size must be a positive odd integer, got {size!r}")


def dtd_spectrum(height, width):
    """Eigenvalues of ``D^T D`` for periodic first differences.

    Bin ``(p, q)`` holds ``4 - 2 cos(2 pi p / height) - 2 cos(2 pi q / width)``.
    """
    cp = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(height) / height)
    cq = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(width) / width)
    return cp[:, None] + cq[None, :]


class SpectralOperator:
    """Frequency response of a circular blur on a ``height x width`` grid.

    Parameters
    ----------
    response : complex ndarray of shape (height, width)
        Full 2-D DFT of the circularly embedded kernel.
    dtd_response : ndarray, optional
        Eigenvalues of ``D^T D``; computed from the grid size when omitted.

    The instance is immutable and may be shared between threads.
    """

    def __init__(self, response, dtd_response=None):
        response = np.array(response, dtype=np.complex128)
        if response.ndim != 2:
            raise DimensionError("response must be a 2-D spectrum")
        h, w = response.shape
        # real kernel <=> Hermitian spectrum; otherwise the inverse transform is not real
        mirrored = np.conj(np.roll(response[::-1, ::-1], 1, axis=(0, 1)))
        scale = max(np.abs(response).max(), 1e-300)
        if np.abs(response - mirrored).max() > 1e-10 * scale:
            raise NumericalIntegrityError("response is not Hermitian; operator is not real")
        if dtd_response is None:
            dtd_response = dtd_spectrum(h, w)
        dtd_response = np.array(dtd_response, dtype=np.float64)
        if dtd_response.shape != (h, w):
            raise DimensionError("dtd_response shape does not match response")
        self.height, self.width = h, w
        self.response = response
        self.dtd_response = dtd_response
        half = w // 2 + 1
        self.half = np.ascontiguousarray(response[:, :half])
        self.half_conj = np.conj(self.half)
        self.abs2_half = np.abs(self.half) ** 2
        self.dtd_half = np.ascontiguousarray(dtd_response[:, :half])
        for a in (self.response, self.dtd_response, self.half, self.half_conj,
                  self.abs2_half, self.dtd_half):
            a.setflags(write=False)

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def dc_gain(self):
        return float(self.response[0, 0].real)

    def condition_number(self):
        """Ratio of the extreme OTF magnitudes (``inf`` if some bin is zero)."""
        mag = np.abs(self.response)
        lo = mag.min()
        return float(mag.max() / lo) if lo > 0 else float("inf")

    def denominator(self, mu, reg=None):
        """``|response|^2 + mu * reg`` on the half spectrum, checked for zeros."""
        reg = self.dtd_half if reg is None else reg
        den = self.abs2_half + mu * reg
        zero = np.argwhere(den <= 0)
        if zero.size:
            p, q = zero[0]
            raise SingularSpectrumError(
                f"system is singular at frequency bin ({p}, {q}) for mu={mu!r}")
        return den

    def forward(self, x):
        return sfft.rfft2(x, axes=(-2, -1))

    def inverse(self, spectrum):
        return sfft.irfft2(spectrum, s=self.shape, axes=(-2, -1))


def psf_to_otf(psf, height, width):
    """Embed ``psf`` in a ``height x width`` grid and return its operator.

    The kernel is zero-padded and circularly shifted so that its centre lands
    on index ``(0, 0)`` before the DFT.
    """
    size = psf.size
    if size > min(height, width):
        raise DimensionError(
            f"PSF of size {size}x{size} does not fit in a {height}x{width} grid")
    b = psf.half_width
    padded = np.zeros((height, width))
    padded[:size, :size] = psf.taps
    padded = np.roll(padded, (-b, -b), axis=(0, 1))
    return SpectralOperator(sfft.fft2(padded))


def _check_grid(x, op):
    if np.shape(x)[-2:] != op.shape:
        raise DimensionError(f"image grid {np.shape(x)[-2:]} does not match operator grid {op.shape}")


def circ_conv(x, op):
    """Circular convolution of ``x`` (any leading batch axes) with the operator's PSF."""
    _check_grid(x, op)
    return op.inverse(op.forward(x) * op.half)


def adjoint_conv(x, op):
    """Apply the transpose of the circular convolution."""
    _check_grid(x, op)
    return op.inverse(op.forward(x) * op.half_conj)


def solve_diag(op, mu, rhs, reg=None):
    """Solve ``(T^T T + mu * R) x = rhs`` bin-wise in the frequency domain.

    ``R`` defaults to ``D^T D``; pass ``reg`` (a full ``(height, width)``
    spectrum, e.g. all ones) to use another BCCB regularizer.
    """
    _check_grid(rhs, op)
    if reg is not None:
        reg = np.asarray(reg, dtype=np.float64)
        if reg.shape != op.shape:
            raise DimensionError("reg spectrum shape does not match operator grid")
        reg = reg[:, : op.width // 2 + 1]
    den = op.denominator(mu, reg)
    return op.inverse(op.forward(rhs) / den)


def apply_normal(op, mu, x, reg=None):
    """Forward application of ``T^T T + mu * D^T D`` using spatial differences.

    Kept independent of the spectral ``dtd_response`` so it can verify
    :func:`solve_diag`.
    """
    from .tv import grad, grad_adjoint

    out = adjoint_conv(circ_conv(x, op), op)
    if reg is None:
        return out + mu * grad_adjoint(grad(x))
    return out + mu * op.inverse(op.forward(x) * np.asarray(reg)[:, : op.width // 2 + 1])
