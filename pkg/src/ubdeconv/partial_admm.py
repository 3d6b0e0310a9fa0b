"""Partial ADMM for TV deconvolution with unobserved pixels.

The unobserved blurred pixels ``z`` are estimated jointly with the sharp
image ``x``.  Only ``x`` carries an augmented-Lagrangian splitting
``v = D x``; ``z`` is updated by exact minimization.  One outer iteration:

1. ``passes`` block Gauss-Seidel sweeps of
   ``x <- (T^T T + mu D^T D)^{-1} (T^T [y; z] + mu D^T (v - d))`` followed by
   ``z <- M_z T x`` (over-relaxed to ``2 M_z T x - z`` on the last sweep);
2. ``v <- vector_soft(D x + d, lam / mu)``;
3. ``d <- d - (v - D x)``;
4. ``mu`` doubled/halved when the dual and primal displacements are unbalanced.

All arrays are ``(C, H, W)``; gradient fields are ``(2, C, H, W)``.
"""

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .grid_fft import SingularSpectrumError
from .tv import grad, grad_adjoint, vector_soft


class DivergenceError(RuntimeError):
    """Raised by the divergence guard; carries the trace so far."""

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace or []


class MonitorRecord(NamedTuple):
    iter: int
    elapsed: float
    rmse: float
    mu: float
    primal_res: float
    dual_res: float
    g_dist: float
    objective: float


TRACE_FIELDS = ("iter", "elapsed_s", "rmse", "mu", "primal_res", "dual_res", "g_dist")


@dataclass
class SolverConfig:
    """Parameters of :func:`run`.

    ``passes`` is a positive int or ``"auto"`` (the PSF half width ``b``).
    ``over_relax`` is ``"last"`` (coefficient-2 update on the final sweep of
    each outer iteration), ``"all"`` or ``"none"``; booleans map to
    ``"last"``/``"none"``.  ``stop_rule`` is one of ``"fixed_iters"``,
    ``"rmse"`` (needs a reference) or ``"relative_change"``, with threshold
    ``tol``.  ``adapt_norms`` picks the displacement norms used to adapt
    ``mu``: ``"stacked"`` (``v = [v_x; z]``) or ``"vx"``.
    """

    lam: Optional[float] = None
    mu0: Optional[float] = None
    adapt_t: float = 3.0
    passes: object = 1
    over_relax: object = "last"
    max_iters: int = 10_000
    stop_rule: str = "fixed_iters"
    tol: float = 1e-3
    adapt_mu: bool = True
    freeze_mu_after: Optional[int] = None
    adapt_norms: str = "stacked"
    tau_init: float = 1e-3
    init_iters: int = 100
    full_rank_eps: float = 0.0
    divergence_window: int = 50
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not self.adapt_t > 1:
            raise ValueError("adapt_t must be > 1")
        if self.mu0 is not None and not self.mu0 > 0:
            raise ValueError("mu0 must be > 0")
        if isinstance(self.over_relax, bool):
            self.over_relax = "last" if self.over_relax else "none"
        if self.over_relax not in ("last", "all", "none"):
            raise ValueError(f"unknown over_relax mode {self.over_relax!r}")
        if self.stop_rule not in ("fixed_iters", "rmse", "relative_change"):
            raise ValueError(f"unknown stop_rule {self.stop_rule!r}")
        if self.adapt_norms not in ("stacked", "vx"):
            raise ValueError(f"unknown adapt_norms {self.adapt_norms!r}")
        if self.passes != "auto" and (int(self.passes) != self.passes or self.passes < 1):
            raise ValueError("passes must be a positive integer or 'auto'")
        if self.max_iters < 0 or self.init_iters < 0:
            raise ValueError("iteration counts must be nonnegative")

    def resolve_passes(self, psf):
        if self.passes == "auto":
            return max(1, psf.half_width)
        return int(self.passes)


@dataclass
class SolverState:
    """Iterates of the partial ADMM.

    ``ytil`` is the composite blurred image: observed data at observed
    pixels and the current estimate ``z`` elsewhere.  ``d`` is the scaled
    dual (``mu * d`` is the multiplier).
    """

    x: np.ndarray
    ytil: np.ndarray
    v: np.ndarray
    d: np.ndarray
    mu: float
    iter: int = 0
    v_prev: Optional[np.ndarray] = field(default=None, repr=False)

    def z(self, model):
        return model.z_of(self.ytil)

    def copy(self):
        return replace(
            self, x=self.x.copy(), ytil=self.ytil.copy(), v=self.v.copy(), d=self.d.copy(),
            v_prev=None if self.v_prev is None else self.v_prev.copy())


class _Diff:
    """Difference operator ``D`` (optionally ``D + eps I``) and its spectrum."""

    def __init__(self, op, eps=0.0):
        self.eps = float(eps)
        if self.eps == 0.0:
            self.dtd_half = op.dtd_half
        else:
            h, w = op.shape
            eh = np.exp(2j * np.pi * np.arange(w) / w) - 1 + self.eps
            ev = np.exp(2j * np.pi * np.arange(h) / h) - 1 + self.eps
            full = np.abs(eh[None, :]) ** 2 + np.abs(ev[:, None]) ** 2
            self.dtd_half = np.ascontiguousarray(full[:, : w // 2 + 1])

    def __call__(self, x):
        g = grad(x)
        if self.eps:
            g += self.eps * x
        return g

    def T(self, g):
        out = grad_adjoint(g)
        if self.eps:
            out += self.eps * (g[0] + g[1])
        return out


def check_uniqueness(model):
    """Require a nonzero DC gain so the solution is unique (constants not in N(H))."""
    if abs(model.operator.response[0, 0]) == 0:
        raise SingularSpectrumError("blur has zero DC gain; TV-regularized solution is not unique")


def quadratic_init(model, tau=1e-3, iters=100):
    """Alternating minimization of ``f(x, z) + tau/2 |x|^2`` from replicate padding.

    Returns ``(x, ytil)``; with ``iters == 0``, ``x`` is the padded data.
    """
    op = model.operator
    unobs = ~model.mask
    ytil = model.padded()
    x = ytil.copy()
    if iters == 0:
        return x, ytil
    den = op.denominator(tau, np.ones_like(op.abs2_half))
    for _ in range(iters):
        X = op.half_conj * op.forward(ytil) / den
        Tx = op.inverse(op.half * X)
        ytil[unobs] = Tx[unobs]
    x = op.inverse(X)
    return x, ytil


def init_state(model, config=None):
    """Initial iterates: quadratic warm start for ``(x, z)``, ``v = D x``, ``d = 0``."""
    config = config or SolverConfig()
    x, ytil = quadratic_init(model, config.tau_init, config.init_iters)
    D = _Diff(model.operator, config.full_rank_eps)
    mu = config.mu0 if config.mu0 is not None else (config.lam or model.lam)
    v = D(x)
    return SolverState(x=x, ytil=ytil, v=v, d=np.zeros_like(v), mu=float(mu), iter=0, v_prev=v.copy())


# -- individual steps (reference implementations; run() fuses them) ------------

def x_update(state, model, config=None):
    """Exact minimizer of ``f(x, z) + mu/2 |v - D x - d|^2`` over ``x``."""
    config = config or SolverConfig()
    op = model.operator
    D = _Diff(op, config.full_rank_eps)
    rhs_spec = op.half_conj * op.forward(state.ytil) + op.forward(state.mu * D.T(state.v - state.d))
    den = op.abs2_half + state.mu * D.dtd_half
    if np.any(den <= 0):
        raise SingularSpectrumError("x-update system is singular")
    return op.inverse(rhs_spec / den)


def z_update(state, model, over_relax=False, x=None):
    """New unobserved values: ``M_z T x`` or, over-relaxed, ``2 M_z T x - z``."""
    from .grid_fft import circ_conv

    x = state.x if x is None else x
    tz = model.z_of(circ_conv(x, model.operator))
    if over_relax:
        return 2.0 * tz - state.z(model)
    return tz


def prox_update(state, config, model=None, x=None):
    """``vector_soft(D x + d, lam / mu)``."""
    lam = config.lam if config.lam is not None else model.lam
    D = _Diff(model.operator, config.full_rank_eps) if model is not None else grad
    x = state.x if x is None else x
    return vector_soft(D(x) + state.d, lam / state.mu)


def dual_update(state, x=None, v=None, D=grad):
    """Scaled dual ascent ``d - (v - D x)``."""
    x = state.x if x is None else x
    v = state.v if v is None else v
    return state.d - (v - D(x))


def adapt_mu(mu, delta_d_norm, delta_v_norm, t):
    """Residual-balancing schedule; returns ``(mu_new, factor applied to d)``."""
    if not t > 1:
        raise ValueError("t must be > 1")
    if delta_d_norm > t * delta_v_norm:
        return 2.0 * mu, 0.5
    if delta_v_norm > t * delta_d_norm:
        return 0.5 * mu, 2.0
    return mu, 1.0


def kkt_residuals(state, model=None, config=None):
    """Primal ``|v - D x|`` and dual ``mu |D^T (v - v_prev)|`` residual norms."""
    eps = config.full_rank_eps if config is not None else 0.0
    D = _Diff(model.operator, eps) if model is not None else None
    Dx = D(state.x) if D is not None else grad(state.x)
    primal = float(np.linalg.norm(state.v - Dx))
    if state.v_prev is None:
        return primal, float("nan")
    dv = state.v - state.v_prev
    DT = D.T(dv) if D is not None else grad_adjoint(dv)
    return primal, float(state.mu * np.linalg.norm(DT))


def objective(x, ytil, model, Tx=None):
    """``1/2 |[y; z] - T x|^2 + lam * TV(x)`` for a composite grid ``ytil``."""
    from .grid_fft import circ_conv
    from .tv import tv_value

    Tx = circ_conv(x, model.operator) if Tx is None else Tx
    return 0.5 * float(np.sum((ytil - Tx) ** 2)) + tv_value(x, model.lam)


def reduced_objective(x, model):
    """Objective with ``z`` eliminated: ``1/2 |y - M_y T x|^2 + lam * TV(x)``."""
    from .grid_fft import circ_conv
    from .tv import tv_value

    Tx = circ_conv(x, model.operator)
    r = (Tx - model.y_full)[model.mask]
    return 0.5 * float(r @ r) + tv_value(x, model.lam)


@dataclass
class ReferencePoint:
    """A (near) KKT point: ``z``, ``v`` and the unscaled multiplier ``p = mu d``."""

    x: np.ndarray
    z: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @classmethod
    def from_state(cls, state, model):
        return cls(state.x.copy(), state.z(model).copy(), state.v.copy(), state.mu * state.d)

    def g_norm_sq(self, state, model):
        """``|w - w*|_G^2`` with ``G = diag(I, mu I, mu I)`` over ``[z; v; d]``."""
        mu = state.mu
        dz = state.z(model) - self.z
        dv = state.v - self.v
        dd = state.d - self.p / mu
        return float(dz @ dz + mu * np.sum(dv * dv) + mu * np.sum(dd * dd))


def g_norm_sq_between(a, b, model, mu):
    """``|w_a - w_b|_G^2`` for two states at the same ``mu``."""
    dz = a.z(model) - b.z(model)
    return float(dz @ dz + mu * np.sum((a.v - b.v) ** 2) + mu * np.sum((a.d - b.d) ** 2))


class _Engine:
    """Fused, in-place outer iteration with cached spectra."""

    def __init__(self, model, config):
        check_uniqueness(model)
        self.model = model
        self.cfg = config
        self.op = model.operator
        self.D = _Diff(self.op, config.full_rank_eps)
        self.lam = config.lam if config.lam is not None else model.lam
        self.passes = config.resolve_passes(model.psf)
        self.unobs = ~model.mask
        self.has_z = bool(self.unobs.any())
        self._den_mu = None
        self._den = None

    def den(self, mu):
        if mu != self._den_mu:
            den = self.op.abs2_half + mu * self.D.dtd_half
            if np.any(den <= 0):
                p, q = np.argwhere(den <= 0)[0]
                raise SingularSpectrumError(f"x-update singular at frequency bin ({p}, {q})")
            self._den, self._den_mu = den, mu
        return self._den

    def step(self, s, adapt=True):
        """Advance ``s`` by one outer iteration in place; returns ``(T x, D x)``."""
        op, D, unobs = self.op, self.D, self.unobs
        mu = s.mu
        den = self.den(mu)
        R = op.forward(mu * D.T(s.v - s.d))
        mode = self.cfg.over_relax
        z_old = s.ytil[unobs] if self.has_z else None
        for p in range(self.passes):
            X = (op.half_conj * op.forward(s.ytil) + R) / den
            Tx = op.inverse(op.half * X)
            if self.has_z:
                relax = mode == "all" or (mode == "last" and p == self.passes - 1)
                if relax:
                    s.ytil[unobs] = 2.0 * Tx[unobs] - s.ytil[unobs]
                else:
                    s.ytil[unobs] = Tx[unobs]
            if not self.has_z:
                break
        s.x = op.inverse(X)
        Dx = D(s.x)
        v_new = vector_soft(Dx + s.d, self.lam / mu)
        d_new = s.d + Dx - v_new
        dd = float(np.linalg.norm(d_new - s.d))
        dv_sq = float(np.sum((v_new - s.v) ** 2))
        dz_sq = 0.0
        if self.has_z:
            diff = s.ytil[unobs] - z_old
            dz_sq = float(diff @ diff)
        if self.cfg.adapt_norms == "stacked":
            dv_sq += dz_sq
        s.v_prev = s.v
        s.v = v_new
        s.d = d_new
        if adapt:
            s.mu, factor = adapt_mu(mu, dd, np.sqrt(dv_sq), self.cfg.adapt_t)
            if factor != 1.0:
                s.d *= factor
        s.iter += 1
        return Tx, Dx


def step(state, model, config=None, adapt=False):
    """One outer iteration on a copy of ``state`` (``mu`` fixed unless ``adapt``)."""
    config = config or SolverConfig()
    s = state.copy()
    _Engine(model, config).step(s, adapt=adapt)
    return s


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def run(model, config=None, reference=None, state=None, reference_point=None, callback=None):
    """Iterate the partial ADMM.

    Parameters
    ----------
    model : ObservationModel
    config : SolverConfig, optional
    reference : ndarray, optional
        Image used for the ``rmse`` trace column and the ``"rmse"`` stop rule.
    state : SolverState, optional
        Starting point; built by :func:`init_state` when omitted.
    reference_point : ReferencePoint, optional
        Enables the ``g_dist`` trace column.
    callback : callable, optional
        Called as ``callback(state)`` after every outer iteration; a true
        return value stops the run.

    Returns
    -------
    state : SolverState
    trace : list of MonitorRecord

    Raises
    ------
    DivergenceError
        If the objective grows more than ``divergence_factor`` times over
        ``divergence_window`` iterations and exceeds its initial value.
    """
    config = config or SolverConfig()
    if config.stop_rule == "rmse" and reference is None:
        raise ValueError("stop_rule='rmse' needs a reference image")
    engine = _Engine(model, config)
    s = init_state(model, config) if state is None else state.copy()
    if reference is not None:
        reference = np.asarray(reference, dtype=np.float64).reshape(s.x.shape)
    trace = []
    history = []
    obj0 = None
    t0 = time.perf_counter()
    nan = float("nan")
    while s.iter < config.max_iters:
        x_old = s.x
        adapt = config.adapt_mu and (config.freeze_mu_after is None or s.iter < config.freeze_mu_after)
        mu_used = s.mu
        Tx, Dx = engine.step(s, adapt=adapt)
        obj = 0.5 * float(np.sum((s.ytil - Tx) ** 2)) + engine.lam * float(
            np.sqrt(np.sum(Dx * Dx, axis=(0, 1))).sum())
        if not np.isfinite(obj):
            raise DivergenceError(f"non-finite objective at iteration {s.iter}", s, trace)
        if obj0 is None:
            obj0 = obj
        history.append(obj)
        w = config.divergence_window
        if len(history) > w and obj > config.divergence_factor * history[-1 - w] and obj > obj0:
            raise DivergenceError(
                f"objective grew from {history[-1 - w]:.3e} to {obj:.3e} over {w} iterations "
                f"(iteration {s.iter})", s, trace)
        primal = float(np.linalg.norm(s.v - Dx))
        dual = float(mu_used * np.linalg.norm(engine.D.T(s.v - s.v_prev)))
        err = _rmse(s.x, reference) if reference is not None else nan
        g = np.sqrt(reference_point.g_norm_sq(s, model)) if reference_point is not None else nan
        trace.append(MonitorRecord(s.iter, time.perf_counter() - t0, err, s.mu, primal, dual, g, obj))
        if callback is not None and callback(s):
            break
        if config.stop_rule == "rmse" and err < config.tol:
            break
        if config.stop_rule == "relative_change":
            change = np.linalg.norm(s.x - x_old) / max(np.linalg.norm(x_old), 1e-300)
            if change < config.tol:
                break
    return s, trace
