"""Tests for orthogonalization, the block update, and the full descent solver."""

import numpy as np
import pytest

from svcflm.basis import RawCurve, constant_basis, evaluate_basis_many, uniform_basis
from svcflm.design import VCFLMDesign, build_design
from svcflm.fpca import FunctionalSample, fpca
from svcflm.simulation import SimulationConfig, generate, rmse
from svcflm.solver import FitResult, PenaltySpec, adaptive_weights, block_update, \
    coefficient_surface, fit, kkt_residuals, orthogonalize, predict, \
    soft_threshold_group
from svcflm.tuning import lambda_max


def make_design(rng, n, dims):
    """Design with random blocks (content-agnostic solver tests)."""
    blocks = [rng.standard_normal((n, d)) for d in dims]
    return VCFLMDesign(y=rng.standard_normal(n), y_center=0.0, y_scale=1.0,
                       t=np.zeros(n), t_basis=constant_basis((0, 1)),
                       blocks=blocks, group_dims=np.array(dims))


def prox_gradient_oracle(u_blocks, y, lam, alpha, weights,
                         max_iter=500000, tol=1e-12):
    """Independent full-gradient proximal minimizer of the working objective."""
    n = y.size
    dims = [u.shape[1] for u in u_blocks]
    stacked = np.hstack(u_blocks)
    lipschitz = np.linalg.eigvalsh(stacked.T @ stacked).max() / n + (1 - alpha) * lam
    step = 1.0 / lipschitz
    x = np.zeros(stacked.shape[1])
    splits = np.cumsum(dims)[:-1]
    for _ in range(max_iter):
        grad = stacked.T @ (stacked @ x - y) / n + (1 - alpha) * lam * x
        z = x - step * grad
        parts = []
        for part, w in zip(np.split(z, splits), weights):
            norm = np.linalg.norm(part)
            thr = step * alpha * lam * w
            parts.append(np.zeros_like(part) if norm <= thr else (1 - thr / norm) * part)
        x_new = np.concatenate(parts)
        if np.abs(x_new - x).max() < tol:
            return np.split(x_new, splits)
        x = x_new
    return np.split(x, splits)


class TestOrthogonalize:
    def test_fixed_point(self):
        rng = np.random.default_rng(0)
        n, d = 40, 3
        q, _ = np.linalg.qr(rng.standard_normal((n, d)))
        z = q * np.sqrt(n)
        design = VCFLMDesign(y=np.zeros(n), y_center=0.0, y_scale=1.0,
                             t=np.zeros(n), t_basis=constant_basis((0, 1)),
                             blocks=[z], group_dims=np.array([d]))
        orth = orthogonalize(design)
        # fixed point up to the positive-diagonal sign convention
        signs = np.sign(np.diag(orth.r_blocks[0]))
        np.testing.assert_allclose(orth.u_blocks[0] * signs, z, atol=1e-10)
        np.testing.assert_allclose(np.abs(orth.r_blocks[0]), np.eye(d), atol=1e-10)

    def test_single_column_scaling(self):
        rng = np.random.default_rng(1)
        n = 25
        z = rng.standard_normal(n)
        z *= 2 * np.sqrt(n) / np.linalg.norm(z)    # ||z||^2 = 4n
        design = VCFLMDesign(y=np.zeros(n), y_center=0.0, y_scale=1.0,
                             t=np.zeros(n), t_basis=constant_basis((0, 1)),
                             blocks=[z[:, None]], group_dims=np.array([1]))
        orth = orthogonalize(design)
        np.testing.assert_allclose(orth.u_blocks[0][:, 0], z / 2, atol=1e-12)
        np.testing.assert_allclose(orth.r_blocks[0], [[2.0]], atol=1e-12)

    def test_invariants_random_block(self):
        rng = np.random.default_rng(2)
        design = make_design(rng, 50, [6])
        orth = orthogonalize(design)
        u, r = orth.u_blocks[0], orth.r_blocks[0]
        assert np.abs(u.T @ u - 50 * np.eye(6)).max() < 1e-10
        assert np.abs(u @ r - design.blocks[0]).max() < 1e-10
        assert np.abs(np.tril(r, -1)).max() == 0.0

    def test_rank_deficient_names_group(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((20, 3))
        z[:, 2] = z[:, 0] + z[:, 1]
        design = VCFLMDesign(y=np.zeros(20), y_center=0.0, y_scale=1.0,
                             t=np.zeros(20), t_basis=constant_basis((0, 1)),
                             blocks=[rng.standard_normal((20, 2)), z],
                             group_dims=np.array([2, 3]))
        with pytest.raises(ValueError, match="block 1"):
            orthogonalize(design)


class TestSoftThreshold:
    def test_at_boundary(self):
        np.testing.assert_array_equal(soft_threshold_group(np.array([3.0, 4.0]), 5.0),
                                      [0.0, 0.0])

    def test_zero_kappa_identity(self):
        x = np.array([1.5, -2.0, 0.25])
        np.testing.assert_array_equal(soft_threshold_group(x, 0.0), x)

    def test_hand_value(self):
        np.testing.assert_allclose(soft_threshold_group(np.array([3.0, 4.0]), 2.0),
                                   [1.8, 2.4], atol=1e-15)

    def test_zero_vector(self):
        np.testing.assert_array_equal(soft_threshold_group(np.zeros(3), 0.0),
                                      np.zeros(3))

    def test_shrinks_norm_property(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            x = rng.standard_normal(rng.integers(1, 6))
            kappa = rng.uniform(0, 2)
            out = soft_threshold_group(x, kappa)
            assert np.linalg.norm(out) <= max(np.linalg.norm(x) - kappa, 0) + 1e-12


class TestAdaptiveWeights:
    def test_single_group_definitional(self):
        rng = np.random.default_rng(5)
        n, d = 30, 3
        design = make_design(rng, n, [d])
        orth = orthogonalize(design)
        theta = rng.standard_normal(d)
        y = orth.u_blocks[0] @ theta
        y *= 2.0 / np.linalg.norm(y)
        w = adaptive_weights(orth, y)
        np.testing.assert_allclose(w, [0.5], atol=1e-10)

    def test_orthogonal_response_capped(self):
        rng = np.random.default_rng(6)
        n = 20
        design = make_design(rng, n, [2, 3])
        orth = orthogonalize(design)
        stacked = np.hstack([u @ r for u, r in zip(orth.u_blocks, orth.r_blocks)])
        q, _ = np.linalg.qr(np.hstack([stacked, rng.standard_normal((n, 1))]))
        y = q[:, -1]  # orthogonal to every design column
        w = adaptive_weights(orth, y)
        np.testing.assert_array_equal(w, [1e12, 1e12])

    def test_matches_pseudoinverse_oracle(self):
        rng = np.random.default_rng(7)
        design = make_design(rng, 40, [3, 4])
        orth = orthogonalize(design)
        y = rng.standard_normal(40)
        w = adaptive_weights(orth, y)
        z = [u @ r for u, r in zip(orth.u_blocks, orth.r_blocks)]
        sol = np.linalg.pinv(np.hstack(z)) @ y
        ref = [1.0 / np.linalg.norm(z[0] @ sol[:3]), 1.0 / np.linalg.norm(z[1] @ sol[3:])]
        np.testing.assert_allclose(w, ref, rtol=1e-8)

    def test_per_group_method(self):
        rng = np.random.default_rng(8)
        design = make_design(rng, 40, [3, 4])
        orth = orthogonalize(design)
        y = rng.standard_normal(40)
        w = adaptive_weights(orth, y, method="per-group")
        z = [u @ r for u, r in zip(orth.u_blocks, orth.r_blocks)]
        for j in range(2):
            b = np.linalg.lstsq(z[j], y, rcond=None)[0]
            assert abs(w[j] - 1.0 / np.linalg.norm(z[j] @ b)) < 1e-8


class TestBlockUpdate:
    def _orth(self, rng, n=4, d=2):
        design = make_design(rng, n, [d])
        return orthogonalize(design)

    def test_lambda_zero_is_least_squares(self):
        rng = np.random.default_rng(9)
        orth = self._orth(rng, n=30, d=3)
        r = rng.standard_normal(30)
        pen = PenaltySpec(lam=0.0, alpha=1.0, weights=np.ones(1))
        np.testing.assert_allclose(block_update(0, r, orth, pen),
                                   orth.u_blocks[0].T @ r / 30, atol=1e-12)

    def test_threshold_region_gives_zero(self):
        rng = np.random.default_rng(10)
        orth = self._orth(rng, n=30, d=3)
        r = rng.standard_normal(30)
        corr = np.linalg.norm(orth.u_blocks[0].T @ r)
        lam = corr / (30 * 1.0) * 1.01
        pen = PenaltySpec(lam=lam, alpha=1.0, weights=np.ones(1))
        assert np.array_equal(block_update(0, r, orth, pen), np.zeros(3))

    def test_hand_derived_update(self):
        # n=4, correlations (8, 6), alpha=1, lambda=0.5, weight 1 -> (1.6, 1.2)
        n = 4
        u = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]])
        u = u / np.linalg.norm(u, axis=0) * np.sqrt(n)
        r = np.linalg.lstsq(u.T, np.array([8.0, 6.0]), rcond=None)[0]
        design = VCFLMDesign(y=np.zeros(n), y_center=0.0, y_scale=1.0,
                             t=np.zeros(n), t_basis=constant_basis((0, 1)),
                             blocks=[u], group_dims=np.array([2]))
        orth = orthogonalize(design)
        signs = np.sign(np.diag(orth.r_blocks[0]))
        assert np.abs(orth.u_blocks[0] - u * signs).max() < 1e-12
        v = orth.u_blocks[0].T @ r
        np.testing.assert_allclose(np.abs(v), [8.0, 6.0], atol=1e-12)
        pen = PenaltySpec(lam=0.5, alpha=1.0, weights=np.ones(1))
        update = block_update(0, r, orth, pen)
        np.testing.assert_allclose(np.abs(update), [1.6, 1.2], atol=1e-12)


class TestFit:
    def test_all_thresholded_when_lambda_large(self):
        rng = np.random.default_rng(11)
        design = make_design(rng, 30, [2, 3, 2])
        orth = orthogonalize(design)
        lam = lambda_max(orth, design.y, np.ones(3), 1.0)
        res = fit(orth, design.y, PenaltySpec(lam=lam, alpha=1.0, weights=np.ones(3)))
        assert not res.active.any()
        assert res.sweeps <= 2
        assert res.converged

    def test_single_group_lambda_zero_one_sweep(self):
        rng = np.random.default_rng(12)
        design = make_design(rng, 30, [4])
        orth = orthogonalize(design)
        res = fit(orth, design.y, PenaltySpec(lam=0.0, alpha=1.0, weights=np.ones(1)))
        np.testing.assert_allclose(res.coef_orth[0],
                                   orth.u_blocks[0].T @ design.y / 30, atol=1e-12)
        proj = design.blocks[0] @ np.linalg.lstsq(design.blocks[0], design.y,
                                                  rcond=None)[0]
        np.testing.assert_allclose(res.fitted, proj, atol=1e-8)

    @pytest.mark.parametrize("alpha,lam", [(0.5, 0.1), (1.0, 0.05), (0.8, 0.5)])
    def test_matches_prox_gradient_oracle(self, alpha, lam):
        rng = np.random.default_rng(13)
        design = make_design(rng, 30, [4, 4, 4])
        orth = orthogonalize(design)
        pen = PenaltySpec(lam=lam, alpha=alpha, weights=np.ones(3))
        mine = fit(orth, design.y, pen, tol=1e-10)
        oracle = prox_gradient_oracle(orth.u_blocks, design.y, lam, alpha, np.ones(3))
        for a, b in zip(mine.coef_orth, oracle):
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_matches_cvxpy_oracle(self):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(14)
        design = make_design(rng, 25, [3, 3])
        orth = orthogonalize(design)
        lam, alpha = 0.2, 0.7
        pen = PenaltySpec(lam=lam, alpha=alpha, weights=np.array([1.0, 2.0]))
        mine = fit(orth, design.y, pen, tol=1e-10)
        theta = [cp.Variable(3), cp.Variable(3)]
        resid = design.y - sum(u @ t for u, t in zip(orth.u_blocks, theta))
        objective = cp.sum_squares(resid) / 50 \
            + alpha * lam * (cp.norm(theta[0], 2) + 2.0 * cp.norm(theta[1], 2)) \
            + (1 - alpha) * lam / 2 * sum(cp.sum_squares(t) for t in theta)
        cp.Problem(cp.Minimize(objective)).solve(
            solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        for var, val in zip(theta, mine.coef_orth):
            np.testing.assert_allclose(var.value, val, atol=1e-5)

    def test_objective_trace_nonincreasing(self):
        rng = np.random.default_rng(15)
        for trial in range(20):
            design = make_design(rng, 25, [3, 2, 4])
            orth = orthogonalize(design)
            pen = PenaltySpec(lam=float(rng.uniform(0.01, 1.0)),
                              alpha=float(rng.uniform(0.1, 1.0)),
                              weights=rng.uniform(0.5, 2.0, 3))
            res = fit(orth, design.y, pen)
            assert np.all(np.diff(res.objective_trace) <= 1e-12)

    def test_kkt_conditions_at_solution(self):
        rng = np.random.default_rng(16)
        tol = 1e-8
        for trial in range(10):
            design = make_design(rng, 30, [3, 3, 3])
            orth = orthogonalize(design)
            lam_hi = lambda_max(orth, design.y, np.ones(3), 1.0)
            pen = PenaltySpec(lam=float(rng.uniform(0.05, 0.9)) * lam_hi,
                              alpha=float(rng.choice([0.5, 1.0])),
                              weights=np.ones(3))
            res = fit(orth, design.y, pen, tol=tol)
            active_resid, inactive_ratio = kkt_residuals(res, orth, design.y, pen)
            if res.active.any():
                assert np.nanmax(active_resid) < 10 * tol
            if not res.active.all():
                assert np.nanmax(inactive_ratio) <= 1 + 10 * tol

    def test_lambda_max_property(self):
        rng = np.random.default_rng(17)
        design = make_design(rng, 40, [3, 4, 2])
        orth = orthogonalize(design)
        w = adaptive_weights(orth, design.y)
        for alpha in (0.5, 1.0):
            lam = lambda_max(orth, design.y, w, alpha)
            res = fit(orth, design.y, PenaltySpec(lam=lam, alpha=alpha, weights=w))
            assert not res.active.any()
            res = fit(orth, design.y,
                      PenaltySpec(lam=1.01 * lam, alpha=alpha, weights=w))
            assert not res.active.any()

    def test_half_lambda_max_activates_on_signal(self):
        rng = np.random.default_rng(18)
        design = make_design(rng, 40, [3, 3])
        theta_true = [rng.standard_normal(3), np.zeros(3)]
        orth = orthogonalize(design)
        y = orth.u_blocks[0] @ theta_true[0] + 0.05 * rng.standard_normal(40)
        lam = lambda_max(orth, y, np.ones(2), 1.0)
        res = fit(orth, y, PenaltySpec(lam=0.5 * lam, alpha=1.0, weights=np.ones(2)))
        assert res.active.any()

    def test_group_permutation_equivariance(self):
        rng = np.random.default_rng(19)
        design = make_design(rng, 30, [3, 2, 4])
        y = design.y
        perm = [2, 0, 1]
        permuted = VCFLMDesign(y=y, y_center=0.0, y_scale=1.0, t=design.t,
                               t_basis=design.t_basis,
                               blocks=[design.blocks[j] for j in perm],
                               group_dims=design.group_dims[perm])
        pen = PenaltySpec(lam=0.1, alpha=0.5, weights=np.ones(3))
        res_a = fit(orthogonalize(design), y, pen, tol=1e-10)
        res_b = fit(orthogonalize(permuted), y, pen, tol=1e-10)
        for slot, j in enumerate(perm):
            np.testing.assert_allclose(res_b.coef_orth[slot], res_a.coef_orth[j],
                                       atol=1e-8)

    def test_fitted_consistency_u_theta_equals_z_b(self):
        rng = np.random.default_rng(20)
        design = make_design(rng, 35, [3, 4])
        orth = orthogonalize(design)
        pen = PenaltySpec(lam=0.05, alpha=0.5, weights=np.ones(2))
        res = fit(orth, design.y, pen)
        for j in range(2):
            np.testing.assert_allclose(orth.u_blocks[j] @ res.coef_orth[j],
                                       design.blocks[j] @ res.coef[j], atol=1e-8)

    def test_warm_start_same_solution(self):
        rng = np.random.default_rng(21)
        design = make_design(rng, 30, [3, 3])
        orth = orthogonalize(design)
        pen = PenaltySpec(lam=0.05, alpha=0.5, weights=np.ones(2))
        cold = fit(orth, design.y, pen, tol=1e-10)
        warm = fit(orth, design.y, pen, tol=1e-10,
                   warm_start=[t + 0.1 for t in cold.coef_orth])
        for a, b in zip(cold.coef_orth, warm.coef_orth):
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_max_sweeps_not_an_error(self):
        rng = np.random.default_rng(22)
        design = make_design(rng, 30, [3, 3])
        orth = orthogonalize(design)
        pen = PenaltySpec(lam=0.01, alpha=0.5, weights=np.ones(2))
        res = fit(orth, design.y, pen, tol=1e-14, max_sweeps=2)
        assert not res.converged
        assert res.sweeps == 2


class TestCoefficientSurface:
    def _fitted(self, rng, n=40, m=2, m2=3):
        basis = uniform_basis((0, 1), 4, 6)
        res = fpca(FunctionalSample(basis, rng.standard_normal((n, 6))),
                   n_components=m)
        t_basis = uniform_basis((0, 1), 3, m2)
        design = build_design([res], rng.uniform(0, 1, n), t_basis,
                              rng.standard_normal(n))
        orth = orthogonalize(design)
        fit_res = fit(orth, design.y,
                      PenaltySpec(lam=0.01, alpha=0.5, weights=np.ones(1)))
        return fit_res, res, t_basis

    def test_zero_coefficients_zero_surface(self):
        rng = np.random.default_rng(23)
        fit_res, res, t_basis = self._fitted(rng)
        zero = FitResult(coef_orth=[np.zeros(6)], coef=[np.zeros(6)],
                         active=np.array([False]), objective_trace=np.zeros(1),
                         sweeps=1, converged=True, fitted=np.zeros(40))
        surface = coefficient_surface(zero, 0, res, t_basis,
                                      np.linspace(0, 1, 5), np.linspace(0, 1, 4))
        assert np.array_equal(surface, np.zeros((5, 4)))

    def test_constant_bases_constant_surface(self):
        rng = np.random.default_rng(24)
        basis = constant_basis((0, 1))
        sample = FunctionalSample(basis, rng.standard_normal((10, 1)))
        res = fpca(sample, n_components=1)
        t_basis = constant_basis((0, 1))
        beta = 2.5
        fit_res = FitResult(coef_orth=[np.array([beta])], coef=[np.array([beta])],
                            active=np.array([True]), objective_trace=np.zeros(1),
                            sweeps=1, converged=True, fitted=np.zeros(10))
        surface = coefficient_surface(fit_res, 0, res, t_basis,
                                      np.array([0.2, 0.8]), np.array([0.5]))
        c1 = res.eigen_coef[0, 0]   # eigenfunction is a constant
        np.testing.assert_allclose(surface, c1 * beta * np.ones((2, 1)), atol=1e-12)

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(25)
        fit_res, res, t_basis = self._fitted(rng, m=2, m2=3)
        grid_s = np.linspace(0, 1, 4)
        grid_t = np.linspace(0, 1, 3)
        surface = coefficient_surface(fit_res, 0, res, t_basis, grid_s, grid_t)
        b_mat = fit_res.coef[0].reshape(2, 3, order="F")
        phi = evaluate_basis_many(res.basis, grid_s) @ res.eigen_coef
        psi = evaluate_basis_many(t_basis, grid_t)
        for a in range(4):
            for b in range(3):
                val = 0.0
                for k in range(2):
                    for l in range(3):
                        val += phi[a, k] * b_mat[k, l] * psi[b, l]
                assert abs(surface[a, b] - val) < 1e-10

    def test_grid_outside_domain(self):
        rng = np.random.default_rng(26)
        fit_res, res, t_basis = self._fitted(rng)
        with pytest.raises(ValueError, match="outside"):
            coefficient_surface(fit_res, 0, res, t_basis, np.array([1.5]),
                                np.array([0.5]))


class TestPredict:
    def _pipeline(self, n=40, seed=27):
        config = SimulationConfig(n=n, p=2, seed=seed, replicates=1,
                                  noise_level=1e-8, predictor_noise_factor=0.0)
        data = generate(config)
        basis = uniform_basis((0, 1), 4, 6)
        from svcflm.basis import smooth_curves
        samples = [FunctionalSample(basis, smooth_curves(
            data.time_points, data.curves[:, j, :], basis)) for j in range(2)]
        results = [fpca(s, n_components=4) for s in samples]
        t_basis = uniform_basis((0, 1), 4, 4)
        design = build_design(results, data.t, t_basis, data.y)
        orth = orthogonalize(design)
        res = fit(orth, design.y, PenaltySpec(lam=1e-6, alpha=1.0,
                                              weights=np.ones(2)), tol=1e-9)
        return config, data, results, design, res

    def test_training_data_reproduces_fitted(self):
        config, data, results, design, res = self._pipeline()
        curves = [[RawCurve(data.time_points, data.curves[i, j, :])
                   for i in range(config.n)] for j in range(2)]
        pred = predict(res, design, results, curves, data.t)
        fitted_raw = res.fitted * design.y_scale + design.y_center
        np.testing.assert_allclose(pred, fitted_raw, atol=1e-10)

    def test_zero_model_predicts_center(self):
        config, data, results, design, _ = self._pipeline()
        zero = FitResult(coef_orth=[np.zeros(16)] * 2, coef=[np.zeros(16)] * 2,
                         active=np.zeros(2, bool), objective_trace=np.zeros(1),
                         sweeps=1, converged=True, fitted=np.zeros(config.n))
        curves = [[RawCurve(data.time_points, data.curves[i, j, :])
                   for i in range(3)] for j in range(2)]
        pred = predict(zero, design, results, curves, data.t[:3])
        np.testing.assert_allclose(pred, np.full(3, design.y_center), atol=1e-12)

    def test_noiseless_recovery_improves_with_n(self):
        # well-specified estimator: generator bases, full component count
        from svcflm.basis import smooth_curves
        errors = {}
        for n in (60, 4000):
            config = SimulationConfig(n=n, p=2, seed=3, replicates=1,
                                      noise_level=1e-8, predictor_noise_factor=0.0)
            data = generate(config)
            samples = [FunctionalSample(data.s_basis, smooth_curves(
                data.time_points, data.curves[:, j, :], data.s_basis))
                for j in range(2)]
            results = [fpca(s, n_components=5) for s in samples]
            design = build_design(results, data.t, data.t_basis, data.y)
            res = fit(orthogonalize(design), design.y,
                      PenaltySpec(lam=1e-7, alpha=1.0, weights=np.ones(2)),
                      tol=1e-10)
            f_hat = res.fitted * design.y_scale + design.y_center
            errors[n] = rmse(data.f, f_hat) / data.f.std()
        assert errors[4000] < errors[60]
        assert errors[4000] < 0.01

    def test_extrapolation_refused(self):
        config, data, results, design, res = self._pipeline()
        curves = [[RawCurve(data.time_points, data.curves[0, j, :])] for j in range(2)]
        with pytest.raises(ValueError, match="domain"):
            predict(res, design, results, curves, np.array([1.7]))
