"""scikit-learn style wrappers around the solvers.

Each estimator takes an observed image on the full ``m' x n'`` grid
(``(H, W)`` or ``(H, W, C)``; values at unobserved pixels are ignored) plus
an optional boolean ``mask`` of observed pixels.  Without a mask, the
unobserved set is the width-``b`` frame implied by the PSF.  ``fit`` stores
the restored image in ``image_``; ``transform`` fits and returns it.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import baselines, partial_admm
from ._validation import as_channels, check_mask, check_scalar, from_channels
from .framework import framework_run, get_plugin
from .grid_fft import PsfKernel, psf_from_spec
from .observation import ObservationModel, boundary_partition


def _resolve_psf(psf):
    if isinstance(psf, PsfKernel):
        return psf
    if isinstance(psf, str):
        return psf_from_spec(psf)
    return PsfKernel(np.asarray(psf, dtype=np.float64))


class _Deconvolver(TransformerMixin, BaseEstimator):
    def _model(self, X, mask):
        check_scalar(self.lam, "lam", min_val=0, strict=True)
        psf = _resolve_psf(self.psf)
        grid = as_channels(X, "X")
        H, W = grid.shape[1:]
        if mask is None:
            b = psf.half_width
            mask = boundary_partition(H - 2 * b, W - 2 * b, b).mask
        mask = check_mask(mask, grid.shape)
        return ObservationModel.from_grid(psf, grid, mask, self.lam)

    def fit(self, X, y=None, mask=None, reference=None):
        """Restore ``X``.  ``reference`` (same layout) fills the ``rmse`` trace column."""
        ndim = np.ndim(X)
        model = self._model(X, mask)
        ref = None if reference is None else as_channels(reference, "reference")
        x, z, trace, n_iter, mu = self._solve(model, ref)
        self.model_ = model
        self.image_ = from_channels(x, ndim)
        self.z_ = z
        self.trace_ = trace
        self.n_iter_ = n_iter
        self.mu_ = mu
        return self

    def transform(self, X, mask=None):
        return self.fit(X, mask=mask).image_

    def fit_transform(self, X, y=None, mask=None, reference=None):
        return self.fit(X, y, mask=mask, reference=reference).image_


class PartialADMMDeconvolver(_Deconvolver):
    """TV deconvolution with unknown boundaries by the partial ADMM.

    ``passes=1`` gives the single-sweep variant; ``"auto"`` uses ``b`` sweeps.
    """

    def __init__(self, psf="boxcar:5", lam=5e-6, mu0=None, adapt_t=3.0, passes=1,
                 over_relax="last", max_iters=1000, stop_rule="fixed_iters", tol=1e-3):
        self.psf = psf
        self.lam = lam
        self.mu0 = mu0
        self.adapt_t = adapt_t
        self.passes = passes
        self.over_relax = over_relax
        self.max_iters = max_iters
        self.stop_rule = stop_rule
        self.tol = tol

    def _solve(self, model, ref):
        cfg = partial_admm.SolverConfig(
            mu0=self.mu0, adapt_t=self.adapt_t, passes=self.passes, over_relax=self.over_relax,
            max_iters=self.max_iters, stop_rule=self.stop_rule, tol=self.tol)
        state, trace = partial_admm.run(model, cfg, reference=ref)
        return state.x, state.z(model), trace, state.iter, state.mu


class ADMMCGDeconvolver(_Deconvolver):
    """Standard ADMM over ``(x, z)`` with conjugate-gradient joint steps."""

    def __init__(self, psf="boxcar:5", lam=5e-6, mu0=None, adapt_t=3.0, inner_iters=1000,
                 max_iters=100, stop_rmse=None):
        self.psf = psf
        self.lam = lam
        self.mu0 = mu0
        self.adapt_t = adapt_t
        self.inner_iters = inner_iters
        self.max_iters = max_iters
        self.stop_rmse = stop_rmse

    def _solve(self, model, ref):
        cfg = baselines.CgConfig(inner_iters=self.inner_iters, mu0=self.mu0, adapt_t=self.adapt_t)
        x, trace, info = baselines.admm_cg_run(model, cfg, max_iters=self.max_iters,
                                               reference=ref, stop_rmse=self.stop_rmse)
        return x, model.z_of(info["z"]), trace, info["iters"], info["mu"]


class CondatDeconvolver(_Deconvolver):
    """Condat's primal-dual method on the masked data term."""

    def __init__(self, psf="boxcar:5", lam=5e-6, sigma=1e-6, tau=None, max_iters=10_000,
                 stop_rmse=None):
        self.psf = psf
        self.lam = lam
        self.sigma = sigma
        self.tau = tau
        self.max_iters = max_iters
        self.stop_rmse = stop_rmse

    def _solve(self, model, ref):
        cfg = baselines.CmConfig(sigma=self.sigma, tau=self.tau)
        x, trace, info = baselines.cm_run(model, cfg, max_iters=self.max_iters,
                                          reference=ref, stop_rmse=self.stop_rmse)
        op = model.operator
        z = model.z_of(op.inverse(op.forward(x) * op.half))
        return x, z, trace, info["iters"], float("nan")


class FrameworkDeconvolver(_Deconvolver):
    """Alternate a circular-boundary plugin with re-estimation of the unobserved pixels."""

    def __init__(self, psf="boxcar:5", lam=5e-6, plugin="tv", outer_iters=80, inner_iters=5):
        self.psf = psf
        self.lam = lam
        self.plugin = plugin
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters

    def _solve(self, model, ref):
        plugin = get_plugin(self.plugin, lam=self.lam) if isinstance(self.plugin, str) else self.plugin
        x, trace, composite = framework_run(model, plugin, self.outer_iters, self.inner_iters,
                                            reference=ref)
        return x, model.z_of(composite), trace, self.outer_iters, getattr(plugin, "mu", float("nan"))
