import numpy as np
import pytest

from ubdeconv import partial_admm as pa
from ubdeconv.grid_fft import (PsfKernel, SingularSpectrumError, circ_conv, delta_psf,
                               gaussian_psf)
from ubdeconv.observation import ObservationModel, boundary_partition, synthesize
from ubdeconv.tv import grad, grad_adjoint

from conftest import dense_operator, invertible_psf, small_problem, smooth_image


def rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


@pytest.fixture(scope="module")
def problem():
    return small_problem(24, psf=gaussian_psf(5), lam=5e-4)


@pytest.fixture(scope="module")
def converged(problem):
    model, _ = problem
    state, trace = pa.run(model, pa.SolverConfig(passes="auto", max_iters=20_000,
                                                freeze_mu_after=2000))
    return state, trace


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(adapt_t=1.0), dict(mu0=0.0), dict(over_relax="some"),
                                    dict(stop_rule="never"), dict(adapt_norms="x"),
                                    dict(passes=0), dict(passes=1.5), dict(max_iters=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            pa.SolverConfig(**kw)

    def test_bool_over_relax(self):
        assert pa.SolverConfig(over_relax=True).over_relax == "last"
        assert pa.SolverConfig(over_relax=False).over_relax == "none"

    def test_auto_passes(self):
        assert pa.SolverConfig(passes="auto").resolve_passes(gaussian_psf(13)) == 6
        assert pa.SolverConfig(passes="auto").resolve_passes(delta_psf()) == 1
        assert pa.SolverConfig(passes=4).resolve_passes(gaussian_psf(13)) == 4

    def test_rmse_rule_needs_reference(self, problem):
        with pytest.raises(ValueError):
            pa.run(problem[0], pa.SolverConfig(stop_rule="rmse"))


class TestInit:
    def test_zero_rounds_is_padding(self, problem):
        model, _ = problem
        s = pa.init_state(model, pa.SolverConfig(init_iters=0))
        np.testing.assert_array_equal(s.x, model.padded())
        np.testing.assert_array_equal(s.z(model), model.z_of(model.padded()))
        np.testing.assert_array_equal(s.v, grad(s.x))
        assert not s.d.any()
        assert s.mu == model.lam

    def test_mu0_override(self, problem):
        assert pa.init_state(problem[0], pa.SolverConfig(mu0=0.25)).mu == 0.25

    def test_rounds_decrease_regularized_cost(self):
        model, _ = small_problem(16, lam=1e-3)
        op = model.operator
        costs = []
        for k in range(1, 8):
            x, ytil = pa.quadratic_init(model, 1e-3, k)
            costs.append(0.5 * np.sum((ytil - circ_conv(x, op)) ** 2) + 0.5e-3 * np.sum(x ** 2))
        assert np.all(np.diff(costs) < 0)

    def test_converges_to_dense_oracle(self):
        psf = invertible_psf()
        part = boundary_partition(6, 6, 1)
        y, truth, _ = synthesize(smooth_image((8, 8), 2), psf, part, np.inf, 0)
        model = ObservationModel(psf, part, y[0], 1e-3)
        op = model.operator
        T = dense_operator(lambda e: circ_conv(e, op), (8, 8))
        My = T[part.mask.ravel()]
        dense = np.linalg.solve(My.T @ My + 1e-3 * np.eye(64), My.T @ y[0])
        x100, _ = pa.quadratic_init(model, 1e-3, 100)
        # after the default 100 rounds the observed blurred data are reproduced
        assert rmse(My @ x100.ravel(), y[0]) < 1e-2
        x, _ = pa.quadratic_init(model, 1e-3, 60_000)
        assert rmse(x.ravel(), dense) < 1e-8


class TestXUpdate:
    def _state(self, shape, rng, mu):
        x = rng.random(shape)
        v = rng.standard_normal((2,) + shape)
        d = rng.standard_normal((2,) + shape)
        return pa.SolverState(x=x, ytil=rng.random(shape), v=v, d=d, mu=mu)

    @pytest.mark.parametrize("eps", [0.0, 1e-8])
    def test_dense_solve(self, rng, eps):
        psf = PsfKernel(rng.random((3, 3)))
        part = boundary_partition(4, 4, 1)
        model = ObservationModel(psf, part, rng.random(16), 1e-3)
        s = self._state((1, 6, 6), rng, 0.07)
        cfg = pa.SolverConfig(full_rank_eps=eps)
        op = model.operator
        T = dense_operator(lambda e: circ_conv(e, op), (1, 6, 6))
        D = dense_operator(lambda e: grad(e) + eps * e, (1, 6, 6))
        A = T.T @ T + s.mu * D.T @ D
        rhs = T.T @ s.ytil.ravel() + s.mu * D.T @ (s.v - s.d).ravel()
        ref = np.linalg.solve(A, rhs)
        out = pa.x_update(s, model, cfg).ravel()
        assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-10

    def test_exact_data_inversion(self, rng):
        psf = invertible_psf()
        part = boundary_partition(6, 6, 1)
        model = ObservationModel(psf, part, rng.random(36), 1e-3)
        x0 = rng.random((1, 8, 8))
        s = self._state((1, 8, 8), rng, 0.0)
        s.ytil = circ_conv(x0, model.operator)
        assert np.abs(pa.x_update(s, model) - x0).max() < 1e-8

    @pytest.mark.parametrize("mu", [1e-6, 0.1, 10.0])
    def test_consistent_point_is_fixed(self, rng, mu):
        psf = gaussian_psf(3)
        part = boundary_partition(6, 6, 1)
        model = ObservationModel(psf, part, rng.random(36), 1e-3)
        x0 = rng.random((1, 8, 8))
        s = self._state((1, 8, 8), rng, mu)
        s.ytil = circ_conv(x0, model.operator)
        s.v = s.d + grad(x0)
        np.testing.assert_allclose(pa.x_update(s, model), x0, atol=1e-9)


class TestZUpdate:
    def test_over_relax_at_fixed_point(self, problem, rng):
        model, _ = problem
        s = pa.init_state(model)
        x = rng.random(model.shape)
        s.ytil = model.unpack(model.z_of(circ_conv(x, model.operator)))
        plain = pa.z_update(s, model, False, x)
        np.testing.assert_allclose(pa.z_update(s, model, True, x), plain, atol=1e-14)

    def test_empty_without_unobserved(self, rng):
        model = ObservationModel(delta_psf(), boundary_partition(5, 5, 0), rng.random(25), 1e-2)
        assert pa.z_update(pa.init_state(model), model).size == 0

    def test_spatial_oracle(self, problem, rng):
        from test_grid_fft import brute_circ_conv

        model, _ = problem
        s = pa.init_state(model)
        x = rng.random(model.shape)
        z = pa.z_update(s, model, False, x)
        np.testing.assert_allclose(z, model.z_of(brute_circ_conv(x[0], model.psf.taps)[None]),
                                   atol=1e-12)


class TestSmallSteps:
    def test_prox_update(self, problem, rng):
        model, _ = problem
        s = pa.init_state(model)
        s.mu = 2e-3
        cfg = pa.SolverConfig()
        x = rng.random(model.shape)
        out = pa.prox_update(s, cfg, model, x)
        g = grad(x) + s.d
        rho = np.sqrt((g ** 2).sum(axis=(0, 1)))
        t = model.lam / s.mu
        np.testing.assert_allclose(out, g * np.where(rho > t, 1 - t / rho, 0), atol=1e-15)

    def test_dual_update(self, rng):
        x = rng.random((1, 5, 5))
        d = rng.standard_normal((2, 1, 5, 5))
        s = pa.SolverState(x=x, ytil=x, v=grad(x), d=d, mu=1.0)
        np.testing.assert_array_equal(pa.dual_update(s), d)
        s0 = pa.SolverState(x=x, ytil=x, v=np.zeros_like(d), d=np.zeros_like(d), mu=1.0)
        np.testing.assert_array_equal(pa.dual_update(s0), grad(x))
        v = rng.standard_normal(d.shape)
        s1 = pa.SolverState(x=x, ytil=x, v=v, d=d, mu=1.0)
        np.testing.assert_array_equal(pa.dual_update(s1) - d, (d - (v - grad(x))) - d)

    def test_adapt_mu(self):
        assert pa.adapt_mu(1.0, 10.0, 1.0, 3) == (2.0, 0.5)
        assert pa.adapt_mu(1.0, 1.0, 10.0, 3) == (0.5, 2.0)
        assert pa.adapt_mu(1.0, 4.0, 4.0, 3) == (1.0, 1.0)
        assert pa.adapt_mu(1.0, 3.0, 1.0, 3) == (1.0, 1.0)
        with pytest.raises(ValueError):
            pa.adapt_mu(1.0, 1.0, 1.0, 1.0)

    def test_primal_residual_zero(self, rng):
        x = rng.random((1, 5, 5))
        s = pa.SolverState(x=x, ytil=x, v=grad(x), d=np.zeros((2, 1, 5, 5)), mu=1.0)
        assert pa.kkt_residuals(s)[0] == 0.0


class TestEngine:
    @pytest.mark.parametrize("passes,mode", [(1, "none"), (1, "last"), (3, "last"), (2, "all")])
    def test_fused_step_matches_reference_ops(self, problem, passes, mode):
        model, _ = problem
        cfg = pa.SolverConfig(passes=passes, over_relax=mode)
        s = pa.init_state(model, cfg)
        for _ in range(3):
            s = pa.step(s, model, cfg, adapt=True)
        manual = s.copy()
        dx = s.d.copy()
        for p in range(passes):
            x = pa.x_update(manual, model, cfg)
            relax = mode == "all" or (mode == "last" and p == passes - 1)
            manual.ytil = model.unpack(pa.z_update(manual, model, relax, x))
        v = pa.prox_update(manual, cfg, model, x)
        d = dx + grad(x) - v
        fused = pa.step(s, model, cfg)
        np.testing.assert_allclose(fused.x, x, atol=1e-12)
        np.testing.assert_allclose(fused.v, v, atol=1e-12)
        np.testing.assert_allclose(fused.d, d, atol=1e-12)
        np.testing.assert_allclose(fused.ytil, manual.ytil, atol=1e-12)
        assert fused.iter == s.iter + 1

    def test_plain_z_is_blur_of_x(self, problem):
        model, _ = problem
        cfg = pa.SolverConfig(passes=1, over_relax="none")
        s = pa.step(pa.init_state(model, cfg), model, cfg)
        np.testing.assert_allclose(s.z(model), model.z_of(circ_conv(s.x, model.operator)),
                                   atol=1e-14)
        np.testing.assert_array_equal(s.ytil[model.mask], model.y_full[model.mask])

    def test_step_does_not_mutate(self, problem):
        model, _ = problem
        s = pa.init_state(model)
        before = s.copy()
        pa.step(s, model)
        np.testing.assert_array_equal(s.x, before.x)
        np.testing.assert_array_equal(s.ytil, before.ytil)


class TestRun:
    def test_both_variants_reach_reference(self, problem, converged):
        model, _ = problem
        ref = converged[0].x
        for passes in (1, "auto"):
            cfg = pa.SolverConfig(passes=passes, max_iters=5000, stop_rule="rmse", tol=1e-3)
            s, trace = pa.run(model, cfg, reference=ref)
            assert trace[-1].rmse < 1e-3
            assert s.iter < 5000

    def test_fixed_point(self, problem, converged):
        model, _ = problem
        s, trace = converged
        assert trace[-1].primal_res < 1e-9 and trace[-1].dual_res < 1e-9
        nxt = pa.step(s, model, pa.SolverConfig(passes="auto"))
        for a, b in [(nxt.x, s.x), (nxt.v, s.v), (nxt.d, s.d), (nxt.ytil, s.ytil)]:
            assert np.abs(a - b).max() < 1e-8
        primal, dual = pa.kkt_residuals(nxt, model)
        assert primal < 1e-9 and dual < 1e-9

    def test_mu_always_positive_and_trace_schema(self, problem):
        model, _ = problem
        _, trace = pa.run(model, pa.SolverConfig(max_iters=200))
        assert [r.iter for r in trace] == list(range(1, 201))
        assert all(r.mu > 0 for r in trace)
        assert pa.TRACE_FIELDS == ("iter", "elapsed_s", "rmse", "mu", "primal_res",
                                   "dual_res", "g_dist")

    def test_no_boundary_reduces_to_plain_admm(self, rng):
        model, _ = small_problem(16, psf=delta_psf(), bsnr=20, lam=0.05)
        assert model.d == 0
        cfg = pa.SolverConfig(max_iters=300, adapt_mu=False, mu0=0.05)
        s, trace = pa.run(model, cfg)
        np.testing.assert_array_equal(s.ytil, model.y_full)
        obj = np.array([r.objective for r in trace])
        assert np.all(np.diff(obj) <= 1e-12 * obj[0])

    def test_stop_rules(self, problem, converged):
        model, _ = problem
        s, _ = pa.run(model, pa.SolverConfig(stop_rule="relative_change", tol=1e-4, max_iters=5000))
        assert 1 < s.iter < 5000
        s, trace = pa.run(model, pa.SolverConfig(max_iters=50), reference=converged[0].x,
                          callback=lambda st: st.iter == 7)
        assert s.iter == 7 and len(trace) == 7

    def test_freeze_mu(self, problem):
        model, _ = problem
        _, trace = pa.run(model, pa.SolverConfig(max_iters=100, freeze_mu_after=10))
        assert len({r.mu for r in trace[10:]}) == 1

    def test_g_dist_column(self, problem, converged):
        model, _ = problem
        refpt = pa.ReferencePoint.from_state(converged[0], model)
        _, trace = pa.run(model, pa.SolverConfig(max_iters=20), reference_point=refpt)
        assert all(np.isfinite(r.g_dist) and r.g_dist > 0 for r in trace)

    def test_zero_dc_gain_rejected(self, rng):
        psf = PsfKernel(np.array([[0, 0, 0], [1.0, 0, -1.0], [0, 0, 0]]), normalize=False)
        model = ObservationModel(psf, boundary_partition(6, 6, 1), rng.random(36), 1e-3)
        with pytest.raises(SingularSpectrumError):
            pa.run(model, pa.SolverConfig(max_iters=2))

    def test_divergence_guard(self, problem, monkeypatch):
        model, _ = problem
        original = pa._Engine.step

        def exploding(self, s, adapt=True):
            Tx, Dx = original(self, s, adapt)
            return Tx * 1.5 ** s.iter, Dx

        monkeypatch.setattr(pa._Engine, "step", exploding)
        with pytest.raises(pa.DivergenceError) as info:
            pa.run(model, pa.SolverConfig(max_iters=500))
        assert info.value.state is not None and len(info.value.trace) >= 50

    def test_rgb_shares_mu(self, rng):
        from ubdeconv.observation import bayer_partitions

        psf = gaussian_psf(3)
        parts = bayer_partitions(14, 14, 1)
        sharp = np.stack([smooth_image((16, 16), s) for s in range(3)])
        y, truth, _ = synthesize(sharp, psf, parts, 50, 0)
        model = ObservationModel(psf, parts, y, 1e-3)
        s, trace = pa.run(model, pa.SolverConfig(max_iters=300))
        assert s.x.shape == (3, 16, 16)
        assert isinstance(s.mu, float)
        assert rmse(s.x, truth) < 0.1


def test_g_norm_descent_small(problem, converged):
    model, _ = problem
    ref_state = converged[0]
    refpt = pa.ReferencePoint.from_state(ref_state, model)
    mu = ref_state.mu
    cfg = pa.SolverConfig(passes=1, adapt_mu=False, mu0=mu * 4)
    s = pa.init_state(model, cfg)
    engine = pa._Engine(model, cfg)
    scale = refpt.z @ refpt.z + cfg.mu0 * np.sum(refpt.v ** 2) + np.sum(refpt.p ** 2) / cfg.mu0
    for _ in range(300):
        prev = s.copy()
        engine.step(s, adapt=False)
        lhs = refpt.g_norm_sq(prev, model) - refpt.g_norm_sq(s, model)
        rhs = pa.g_norm_sq_between(s, prev, model, s.mu)
        assert lhs >= rhs - 1e-10 * scale


def test_objectives_agree_on_composite(problem, converged):
    model, _ = problem
    s = converged[0]
    Tx = circ_conv(s.x, model.operator)
    ytil_opt = np.where(model.mask, model.y_full, Tx)
    assert pa.objective(s.x, ytil_opt, model) == pytest.approx(pa.reduced_objective(s.x, model),
                                                                rel=1e-12)
