"""Alternating estimation of the sharp image and the unobserved blurred pixels.

Any deconvolver that assumes circular boundaries can be plugged in: the
observed data, completed with the current estimate of the unobserved
pixels, is handed to the plugin as if it were a complete circularly blurred
image; the unobserved pixels are then re-estimated from the blur of the new
sharp estimate.

A plugin is a callable ``plugin(composite, operator, warm_start, inner_iters)``
returning a sharp image with the composite's shape ``(C, H, W)``.
"""

import time
from typing import NamedTuple

import numpy as np

from ._validation import DimensionError
from .grid_fft import psf_to_otf
from .metrics import central, isnr, rmse
from .partial_admm import adapt_mu
from .tv import grad, grad_adjoint, vector_soft


class FrameworkRecord(NamedTuple):
    iter: int
    elapsed: float
    rmse: float
    isnr: float


class TVPlugin:
    """Circular-boundary TV deconvolution by ADMM, warm-started between calls.

    Solves ``min_x 1/2 |c - T x|^2 + lam TV(x)`` for a complete observation
    ``c``.  The splitting variables and penalty persist across calls on the
    same grid, so repeated calls continue one ADMM run.
    """

    def __init__(self, lam, mu0=None, adapt_t=3.0):
        self.lam = lam
        self.mu0 = mu0
        self.adapt_t = adapt_t
        self.reset()

    def reset(self):
        self.v = self.d = None
        self.mu = self.mu0 if self.mu0 is not None else self.lam

    def __call__(self, composite, operator, warm_start=None, inner_iters=1):
        op = operator
        c = np.asarray(composite, dtype=np.float64)
        if self.v is None or self.v.shape[1:] != c.shape:
            self.mu = self.mu0 if self.mu0 is not None else self.lam
            x0 = c if warm_start is None else np.asarray(warm_start, dtype=np.float64)
            self.v = grad(x0)
            self.d = np.zeros_like(self.v)
        Fc = op.half_conj * op.forward(c)
        x = warm_start
        for _ in range(inner_iters):
            mu = self.mu
            den = op.denominator(mu)
            x = op.inverse((Fc + op.forward(mu * grad_adjoint(self.v - self.d))) / den)
            Dx = grad(x)
            v_new = vector_soft(Dx + self.d, self.lam / mu)
            d_new = self.d + Dx - v_new
            dd = np.linalg.norm(d_new - self.d)
            dv = np.linalg.norm(v_new - self.v)
            self.v, self.d = v_new, d_new
            self.mu, factor = adapt_mu(mu, dd, dv, self.adapt_t)
            self.d *= factor
        return x


class OraclePlugin:
    """Returns a fixed image regardless of its input (testing aid)."""

    def __init__(self, image):
        self.image = np.asarray(image, dtype=np.float64)

    def __call__(self, composite, operator, warm_start=None, inner_iters=1):
        return self.image.copy()


PLUGINS = {"tv": TVPlugin}


def get_plugin(name, **kwargs):
    try:
        return PLUGINS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown plugin {name!r}; available: {sorted(PLUGINS)}") from None


def framework_run(model, plugin, outer_iters, inner_iters, truth=None, reference=None):
    """Alternate ``x = plugin([y; z])`` and ``z = M_z T x`` for ``outer_iters`` rounds.

    ``z`` starts from nearest-pixel replication of the observed data, which
    is also the returned image when ``outer_iters == 0``.  ``truth`` enables
    the ISNR column (only for boundary partitions, over the central block);
    ``reference`` (or ``truth``) the RMSE column.

    Returns ``(x, trace, composite)``.
    """
    op = model.operator
    unobs = ~model.mask
    composite = model.padded()
    x = composite.copy()
    trace = []
    b = model.partitions[0].b
    can_isnr = truth is not None and all(
        p.kind == "boundary" for p in model.partitions)
    if can_isnr:
        y_obs = central(model.y_full, b)
        t_obs = central(np.asarray(truth).reshape(model.shape), b)
    target = reference if reference is not None else truth
    if target is not None:
        target = np.asarray(target, dtype=np.float64).reshape(model.shape)
    t0 = time.perf_counter()
    for i in range(outer_iters):
        x = plugin(composite, op, x, inner_iters)
        x = np.asarray(x, dtype=np.float64)
        if x.shape != composite.shape:
            raise DimensionError(f"plugin returned shape {x.shape}, expected {composite.shape}")
        Tx = op.inverse(op.forward(x) * op.half)
        composite[unobs] = Tx[unobs]
        err = rmse(x, target) if target is not None else float("nan")
        gain = isnr(y_obs, central(x, b), t_obs) if can_isnr else float("nan")
        trace.append(FrameworkRecord(i + 1, time.perf_counter() - t0, err, gain))
    return x, trace, composite


def circular_deconvolve(observed, psf, plugin, iters, taper_psf=None):
    """Run a plugin directly on an ``m x n`` observation, assuming circular boundaries.

    With ``taper_psf`` the observation is first edge-tapered.
    """
    from .baselines import edge_taper

    obs = np.asarray(observed, dtype=np.float64)
    if obs.ndim == 2:
        obs = obs[np.newaxis]
    if taper_psf is not None:
        obs = edge_taper(obs, taper_psf)
    op = psf_to_otf(psf, *obs.shape[-2:])
    return plugin(obs, op, obs, iters)
