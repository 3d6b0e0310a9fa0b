"""Comparison solvers: standard ADMM with CG inner solves, and Condat's primal-dual method.

Both minimize the same TV-regularized objective as the partial ADMM, so
their fixed points coincide with it.  They report traces with the same
:class:`~ubdeconv.partial_admm.MonitorRecord` schema.
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid_fft import circ_conv, psf_to_otf
from .partial_admm import MonitorRecord, adapt_mu, quadratic_init
from .tv import grad, grad_adjoint, project_disc, vector_soft


class CGBreakdownError(ArithmeticError):
    """Conjugate gradients produced a non-finite step."""


class ConfigurationError(ValueError):
    pass


@dataclass
class CgConfig:
    """ADMM-CG parameters.

    ``cg_rtol`` stops an inner solve early once the residual falls below
    ``cg_rtol * |b|``; the default sits at the floating-point floor, so in
    practice ``inner_iters`` sweeps are run until the residual stagnates.
    """

    inner_iters: int = 1000
    mu0: Optional[float] = None
    adapt_t: float = 3.0
    adapt_mu: bool = True
    cg_rtol: float = 1e-15

    def __post_init__(self):
        if self.inner_iters < 1:
            raise ConfigurationError("inner_iters must be >= 1")
        if not self.adapt_t > 1:
            raise ConfigurationError("adapt_t must be > 1")


@dataclass
class CmConfig:
    """Condat primal-dual step sizes; ``tau`` defaults to ``0.99 / (beta/2 + 8 sigma)``."""

    sigma: float = 1e-6
    tau: Optional[float] = None
    beta: float = 1.0

    def __post_init__(self):
        if self.tau is None:
            self.tau = 0.99 / (self.beta / 2.0 + 8.0 * self.sigma)
        if not (self.sigma > 0 and self.tau > 0):
            raise ConfigurationError("sigma and tau must be positive")
        if not self.tau * (self.beta / 2.0 + 8.0 * self.sigma) < 1.0:
            raise ConfigurationError(
                f"step sizes violate tau*(beta/2 + 8 sigma) < 1: tau={self.tau}, sigma={self.sigma}")


def conjugate_gradient(apply, b, x0, maxiter, rtol=0.0):
    """Matrix-free CG for a symmetric positive semidefinite operator.

    Returns ``(x, iterations, residual_norm)``.
    """
    x = x0.copy()
    r = b - apply(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    stop = (rtol * np.linalg.norm(b)) ** 2
    it = 0
    while it < maxiter and rs > stop:
        Ap = apply(p)
        pAp = float(np.vdot(p, Ap))
        alpha = rs / pAp if pAp != 0 else float("inf")
        if not np.isfinite(alpha):
            raise CGBreakdownError(f"CG breakdown at inner iteration {it}: p^T A p = {pAp!r}")
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.vdot(r, r))
        p *= rs_new / rs
        p += r
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs)


class JointNormalOperator:
    """Normal operator of the standard ADMM's joint ``(x, z)`` step.

    Unknowns are packed as ``u`` of shape ``(2, C, H, W)``: ``u[0] = x`` and
    ``u[1]`` holds ``z`` at unobserved pixels (zero elsewhere).  Applies

    ``[[T^T T + mu D^T D, -T^T M_z^T], [-M_z T, (1 + mu) I]]``.
    """

    def __init__(self, model, mu):
        self.model = model
        self.mu = mu
        self.op = model.operator
        self.unobs = ~model.mask
        self.xx = self.op.abs2_half + mu * self.op.dtd_half

    def __call__(self, u):
        op = self.op
        Fx = op.forward(u[0])
        Fz = op.forward(u[1])
        out = np.empty_like(u)
        out[0] = op.inverse(self.xx * Fx - op.half_conj * Fz)
        out[1] = (1.0 + self.mu) * u[1] - op.inverse(op.half * Fx)
        out[1][~self.unobs] = 0.0
        return out

    def rhs(self, v_x, d_x, v_z, d_z):
        op = self.op
        b = np.zeros((2,) + self.model.shape)
        b[0] = op.inverse(op.half_conj * op.forward(self.model.y_full)) + self.mu * grad_adjoint(v_x - d_x)
        b[1] = np.where(self.unobs, self.mu * (v_z - d_z), 0.0)
        return b


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def admm_cg_run(model, cfg=None, lam=None, max_iters=1000, reference=None,
                stop_rmse=None, trace_every=1, callback=None):
    """Standard ADMM on ``u = [x; z]`` with an approximate CG joint step.

    Returns ``(x, trace, info)`` where ``info`` holds the final ``z`` grid,
    ``mu`` and the iteration count.
    """
    cfg = cfg or CgConfig()
    lam = model.lam if lam is None else lam
    unobs = ~model.mask
    x, ytil = quadratic_init(model)
    z = np.where(unobs, ytil, 0.0)
    mu = cfg.mu0 if cfg.mu0 is not None else lam
    v_x = grad(x)
    d_x = np.zeros_like(v_x)
    v_z = z.copy()
    d_z = np.zeros_like(z)
    u = np.stack([x, z])
    trace = []
    t0 = time.perf_counter()
    nan = float("nan")
    it = 0
    while it < max_iters:
        A = JointNormalOperator(model, mu)
        u, _, _ = conjugate_gradient(A, A.rhs(v_x, d_x, v_z, d_z), u, cfg.inner_iters, cfg.cg_rtol)
        x, z = u[0], u[1]
        Dx = grad(x)
        v_x_new = vector_soft(Dx + d_x, lam / mu)
        v_z_new = z + d_z
        d_x_new = d_x - (v_x_new - Dx)
        d_z_new = d_z - (v_z_new - z)
        dd = np.sqrt(np.sum((d_x_new - d_x) ** 2) + np.sum((d_z_new - d_z) ** 2))
        dv = np.sqrt(np.sum((v_x_new - v_x) ** 2) + np.sum((v_z_new - v_z) ** 2))
        primal = float(np.sqrt(np.sum((v_x_new - Dx) ** 2) + np.sum((v_z_new - z) ** 2)))
        dual = float(mu * np.linalg.norm(grad_adjoint(v_x_new - v_x)))
        v_x, v_z, d_x, d_z = v_x_new, v_z_new, d_x_new, d_z_new
        if cfg.adapt_mu:
            mu, factor = adapt_mu(mu, dd, dv, cfg.adapt_t)
            if factor != 1.0:
                d_x *= factor
                d_z *= factor
        it += 1
        err = _rmse(x, reference) if reference is not None else nan
        done = stop_rmse is not None and err < stop_rmse
        if it % trace_every == 0 or done or it == max_iters:
            trace.append(MonitorRecord(it, time.perf_counter() - t0, err, mu, primal, dual, nan, nan))
        if callback is not None and callback(it, x):
            break
        if done:
            break
    return x.copy(), trace, {"z": z.copy(), "mu": mu, "iters": it}


def cm_run(model, cfg=None, lam=None, max_iters=100_000, reference=None,
           stop_rmse=None, trace_every=1, x0=None, callback=None, stall_tol=None):
    """Condat's primal-dual iteration for ``1/2 |y - M_y T x|^2 + lam TV(x)``.

    ``x <- x - tau (grad_f(x) + D^T u)`` then
    ``u <- proj_{|.| <= lam}(u + sigma D (2 x_new - x_old))``.
    The primal start defaults to the replicate-padded observation.  In the
    trace, ``primal_res`` and ``dual_res`` hold the norms of the primal and
    dual steps and ``mu`` is unused (NaN).  With ``stall_tol`` the run also
    stops once ``|x_new - x| <= stall_tol * |x|``.

    Returns ``(x, trace, info)``; ``info["u"]`` is the final dual iterate.
    """
    cfg = cfg or CmConfig()
    lam = model.lam if lam is None else lam
    op = model.operator
    mask = model.mask
    yf = model.y_full
    x = model.padded() if x0 is None else np.array(x0, dtype=np.float64)
    u = np.zeros((2,) + x.shape)
    tau, sigma = cfg.tau, cfg.sigma
    trace = []
    t0 = time.perf_counter()
    nan = float("nan")
    it = 0
    while it < max_iters:
        Tx = op.inverse(op.forward(x) * op.half)
        r = np.where(mask, Tx - yf, 0.0)
        gf = op.inverse(op.forward(r) * op.half_conj)
        x_new = x - tau * (gf + grad_adjoint(u))
        u_new = project_disc(u + sigma * grad(2.0 * x_new - x), lam)
        it += 1
        err = _rmse(x_new, reference) if reference is not None else nan
        step = float(np.linalg.norm(x_new - x))
        done = stop_rmse is not None and err < stop_rmse
        if stall_tol is not None and step <= stall_tol * np.linalg.norm(x_new):
            done = True
        if it % trace_every == 0 or done or it == max_iters:
            trace.append(MonitorRecord(it, time.perf_counter() - t0, err, nan, step,
                                       float(np.linalg.norm(u_new - u)), nan, nan))
        x, u = x_new, u_new
        if callback is not None and callback(it, x):
            break
        if done:
            break
    return x, trace, {"u": u, "iters": it}


def _autocorr_window(profile, n):
    """1 - normalized circular autocorrelation of a 1-D PSF projection, length ``n``."""
    ac = np.correlate(profile, profile, mode="full")
    half = len(profile) - 1
    beta = np.zeros(n)
    # lag 0 at both ends of the axis, decaying inward
    for lag in range(half + 1):
        val = ac[half + lag] / ac[half]
        if lag < n:
            beta[lag] = max(beta[lag], val)
            beta[n - 1 - lag] = max(beta[n - 1 - lag], val)
    return 1.0 - beta


def edge_taper(image, psf):
    """Blend the image borders with a circularly blurred copy.

    The blend weight is the product of per-axis windows built from the
    autocorrelation of the PSF's row and column projections: 0 at the image
    edge, exactly 1 more than ``2b`` pixels inside.
    """
    image = np.asarray(image, dtype=np.float64)
    if psf.size == 1:
        return image.copy()
    H, W = image.shape[-2:]
    if psf.size > min(H, W):
        raise ValueError("PSF larger than image")
    taps = psf.taps
    alpha = np.outer(_autocorr_window(taps.sum(axis=1), H), _autocorr_window(taps.sum(axis=0), W))
    blurred = circ_conv(image, psf_to_otf(psf, H, W))
    out = alpha * image + (1.0 - alpha) * blurred
    interior = alpha == 1.0
    out[..., interior] = image[..., interior]
    return out
