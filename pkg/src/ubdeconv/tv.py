"""Periodic first differences and (vectorial) isotropic total variation.

A gradient field is an array of shape ``(2, *image.shape)``: index 0 holds
horizontal differences and index 1 vertical ones.  For multichannel images
of shape ``(C, H, W)`` the pixel magnitude couples all ``2 C`` components,
which gives the vectorial TV used for colour images.
"""

import numpy as np

from .grid_fft import dtd_spectrum  # noqa: F401  (re-exported)


def grad(x):
    """Periodic forward differences ``x[., j+1] - x[., j]`` and ``x[i+1, .] - x[i, .]``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty((2,) + x.shape)
    np.subtract(np.roll(x, -1, axis=-1), x, out=g[0])
    np.subtract(np.roll(x, -1, axis=-2), x, out=g[1])
    return g


def grad_adjoint(g):
    """Transpose of :func:`grad` (a negative periodic divergence)."""
    gh, gv = g[0], g[1]
    return (np.roll(gh, 1, axis=-1) - gh) + (np.roll(gv, 1, axis=-2) - gv)


def _pixel_norm(g):
    axes = tuple(range(g.ndim - 2))
    return np.sqrt(np.sum(g * g, axis=axes))


def tv_value(x, lam=1.0):
    """``lam`` times the sum over pixels of the gradient magnitude."""
    return float(lam * _pixel_norm(grad(x)).sum())


def vector_soft(g, threshold):
    """Proximal operator of ``threshold * sum_pixels |g_pixel|``.

    Each pixel's gradient vector is shrunk by ``threshold`` in magnitude and
    set to zero when its magnitude does not exceed the threshold.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    rho = _pixel_norm(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rho > threshold, 1.0 - threshold / rho, 0.0)
    return g * scale


def project_disc(u, radius):
    """Project each pixel's gradient vector onto the disc of given radius."""
    rho = _pixel_norm(u)
    scale = np.minimum(1.0, radius / np.maximum(rho, 1e-300))
    return u * scale
