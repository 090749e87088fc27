import numpy as np
import pytest

import fctbn
from fctbn import (CoefficientTensor, FitOptions, Graph, ModelSpec,
                   PenaltyConfig, adaptive_weights, cross_validate, fista_fit,
                   fit_gmm, gmm_early_stop, group_prox, log_likelihood,
                   penalized_objective, regularization_path)
from fctbn.likelihood import decompose_segments, sufficient_stats
from truths import cluster_truth, random_reversible, small_cohort, uniform_sampler


class TestGroupProx:
    def test_shrinks_by_threshold_over_norm(self):
        v = np.array([3.0, 0.0])  # norm 3, threshold 1 -> scaled by 2/3
        out = group_prox(v, 1.0)
        assert np.allclose(out, [2.0, 0.0])

    def test_kills_small_groups(self):
        assert np.all(group_prox(np.array([0.3, 0.4]), 0.5) == 0.0)

    def test_zero_threshold_is_identity(self):
        v = np.array([1.0, -2.0])
        assert np.array_equal(group_prox(v, 0.0), v)

    def test_random_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = rng.normal(0, 1, rng.integers(1, 6))
            tau = float(rng.uniform(0, 2))
            out = group_prox(v, tau)
            # never flips signs, never grows
            assert np.all(out * v >= 0)
            assert np.linalg.norm(out) <= np.linalg.norm(v) + 1e-15


class TestPenalizedObjective:
    def test_lambda_zero_is_negative_loglik(self):
        spec = random_reversible(2, 1, np.random.default_rng(2))
        cohort = small_cohort(spec, 10, 12.0, seed=1)
        ct = spec.coeffs
        obj = penalized_objective(ct, cohort, spec.graph, PenaltyConfig(lam=0.0))
        assert obj == pytest.approx(-log_likelihood(ct, cohort, spec.graph), abs=1e-12)

    def test_zero_coefficients_have_zero_penalty(self):
        g = Graph(((), (0,)))
        ct = CoefficientTensor.zeros(g, 2)
        cohort = small_cohort(ModelSpec(graph=g, coeffs=ct, irreversible=False),
                              5, 6.0, seed=3, z=np.array([1.0, 0.0]))
        with_pen = penalized_objective(ct, cohort, g, PenaltyConfig(lam=7.0))
        without = penalized_objective(ct, cohort, g, PenaltyConfig(lam=0.0))
        assert with_pen == without

    def test_penalty_arithmetic(self):
        # one group of norm 2, lambda 3, weight 1, size multiplier 4 -> 24
        g = Graph(((), (0,)))
        ct = CoefficientTensor.zeros(g, 4)
        ct.beta[1][0, 1, :] = 1.0  # norm 2
        cohort = small_cohort(ModelSpec(graph=g, coeffs=ct, irreversible=False),
                              4, 5.0, seed=4, z=np.array([1.0, 0, 0, 0]))
        pen = PenaltyConfig(lam=3.0, group_size_multiplier=4.0)
        diff = (penalized_objective(ct, cohort, g, pen)
                - penalized_objective(ct, cohort, g, PenaltyConfig(lam=0.0)))
        assert diff == pytest.approx(24.0, abs=1e-9)


class TestAdaptiveWeights:
    def test_inverse_norm(self):
        g = Graph(((), (0,)))
        ct = CoefficientTensor.zeros(g, 2)
        ct.beta[1][0, 1, :] = np.array([2.0, 0.0])
        w = adaptive_weights(ct)
        assert w[1][0, 1] == pytest.approx(0.5)

    def test_floor_for_zero_groups(self):
        g = Graph(((), (0,)))
        w = adaptive_weights(CoefficientTensor.zeros(g, 2))
        assert w[1][0, 1] == pytest.approx(1e6)

    def test_equal_norms_give_uniform_weights(self):
        g = Graph.complete(3)
        ct = CoefficientTensor.zeros(g, 2)
        for i in range(3):
            ct.beta[i][:, :, 0] = 3.0
        w = adaptive_weights(ct)
        vals = np.concatenate([x.ravel() for x in w])
        assert np.allclose(vals, vals[0])


class TestFistaFit:
    def test_matches_closed_form_rates_at_lambda_zero(self):
        g = Graph.empty(2)
        ct = CoefficientTensor.zeros(g, 1)
        ct.beta[0][0, 0, 0] = np.log(0.15)
        ct.beta[0][1, 0, 0] = np.log(0.10)
        ct.beta[1][0, 0, 0] = np.log(0.05)
        ct.beta[1][1, 0, 0] = np.log(0.25)
        truth = ModelSpec(graph=g, coeffs=ct, irreversible=False)
        cohort = small_cohort(truth, 400, 48.0, seed=15)
        stats = sufficient_stats(decompose_segments(cohort, g), g)
        q = fctbn.mle_intensities(stats)
        fit = fista_fit(cohort, g, PenaltyConfig(lam=0.0),
                        FitOptions(irreversible=False, tol=1e-11))
        assert fit.converged
        for i in range(2):
            for s in (0, 1):
                assert np.exp(fit.coeffs.beta[i][s, 0, 0]) == pytest.approx(
                    q[i][s, 0], rel=1e-4)

    def test_huge_lambda_kills_all_penalized_groups(self):
        spec = random_reversible(3, 2, np.random.default_rng(6))
        cohort = small_cohort(spec, 60, 24.0, seed=8, z=np.array([1.0, 0.5]))
        fit = fista_fit(cohort, spec.graph, PenaltyConfig(lam=1e9),
                        FitOptions(irreversible=False))
        assert fit.nonzero_groups == 0
        assert fit.sparsity_ratio == 1.0
        # baselines stay free
        assert all(np.linalg.norm(b[:, 0, :]) > 0 for b in fit.coeffs.beta)

    def test_trace_is_monotone(self):
        spec = random_reversible(3, 1, np.random.default_rng(7))
        cohort = small_cohort(spec, 50, 24.0, seed=9)
        fit = fista_fit(cohort, spec.graph, PenaltyConfig(lam=2.0),
                        FitOptions(irreversible=False))
        assert np.all(np.diff(fit.objective_trace) <= 1e-10)

    def test_deterministic(self):
        spec = random_reversible(2, 1, np.random.default_rng(3))
        cohort = small_cohort(spec, 30, 12.0, seed=2)
        a = fista_fit(cohort, spec.graph, PenaltyConfig(lam=1.0))
        b = fista_fit(cohort, spec.graph, PenaltyConfig(lam=1.0))
        assert a.coeffs.allclose(b.coeffs, rtol=0, atol=0)
        assert np.array_equal(a.objective_trace, b.objective_trace)

    def test_learned_graph_matches_nonzero_groups(self):
        spec = random_reversible(3, 1, np.random.default_rng(12))
        cohort = small_cohort(spec, 80, 36.0, seed=13)
        fit = fista_fit(cohort, spec.graph, PenaltyConfig(lam=50.0),
                        FitOptions(irreversible=False))
        rebuilt = fctbn.structure_from_coefficients(fit.coeffs, 0.0)
        assert rebuilt.parents == fit.graph.parents

    def test_empty_cohort_rejected(self):
        g = Graph.empty(1)
        cohort = fctbn.Cohort([], np.zeros((0, 1)), {})
        with pytest.raises(ValueError):
            fista_fit(cohort, g, PenaltyConfig(lam=0.0))

    def test_kkt_small_gradient_groups_are_zero(self):
        spec = random_reversible(3, 2, np.random.default_rng(19))
        cohort = small_cohort(spec, 80, 24.0, seed=20, z=np.array([1.0, 0.3]))
        g = spec.graph
        lam = 30.0
        fit = fista_fit(cohort, g, PenaltyConfig(lam=lam),
                        FitOptions(irreversible=False, tol=1e-12))
        grad = fctbn.gradient(fit.coeffs, cohort, g)
        k_mult = cohort.m
        for i in range(g.d):
            for s in (0, 1):
                for k in range(1, g.n_parents(i) + 1):
                    gnorm = np.linalg.norm(grad.beta[i][s, k])
                    if gnorm <= 0.999 * lam * k_mult:
                        assert np.all(fit.coeffs.beta[i][s, k] == 0.0)


class TestRegularizationPath:
    def test_descending_grid_rejected(self):
        spec = random_reversible(2, 1, np.random.default_rng(1))
        cohort = small_cohort(spec, 10, 6.0, seed=1)
        with pytest.raises(ValueError):
            regularization_path(cohort, spec.graph, [1.0, 0.0])

    def test_nonzero_count_shrinks_along_path(self):
        spec = random_reversible(3, 1, np.random.default_rng(23))
        cohort = small_cohort(spec, 100, 36.0, seed=24)
        grid = [0.0] + [10.0 ** k for k in range(0, 7)]
        path = regularization_path(cohort, spec.graph, grid,
                                   FitOptions(irreversible=False))
        assert len(path) == len(grid)
        assert path[-1].nonzero_groups <= path[0].nonzero_groups
        assert path[-1].nonzero_groups == 0
        for fit in path:
            assert 0.0 <= fit.sparsity_ratio <= 1.0

    def test_warm_start_agrees_with_cold_start(self):
        spec = random_reversible(2, 2, np.random.default_rng(29))
        cohort = small_cohort(spec, 60, 24.0, seed=30, z=np.array([1.0, -0.2]))
        g = spec.graph
        opts = FitOptions(irreversible=False, tol=1e-11)
        path = regularization_path(cohort, g, [0.0, 5.0, 50.0], opts, adaptive=False)
        for lam, warm in zip([0.0, 5.0, 50.0], path):
            cold = fista_fit(cohort, g, PenaltyConfig(lam=lam), opts)
            fw = warm.objective_trace[-1]
            fc = cold.objective_trace[-1]
            assert abs(fw - fc) / max(1.0, abs(fc)) < 1e-6


class TestCrossValidate:
    def test_single_lambda_grid_returns_it(self):
        spec = random_reversible(2, 1, np.random.default_rng(4))
        cohort = small_cohort(spec, 20, 12.0, seed=5)
        cv = cross_validate(cohort, spec.graph, [3.0], folds=2, seed=1,
                            opts=FitOptions(irreversible=False))
        assert cv.best_lambda == 3.0
        assert len(cv.curve) == 1

    def test_deterministic_and_finite(self):
        spec = random_reversible(2, 1, np.random.default_rng(16))
        cohort = small_cohort(spec, 40, 24.0, seed=6)
        grid = [0.0, 1.0, 10.0]
        a = cross_validate(cohort, spec.graph, grid, folds=4, seed=9,
                           opts=FitOptions(irreversible=False))
        b = cross_validate(cohort, spec.graph, grid, folds=4, seed=9,
                           opts=FitOptions(irreversible=False))
        assert a.best_lambda == b.best_lambda
        assert a.curve == b.curve
        assert all(np.isfinite(err) for _, err in a.curve)

    def test_folds_validation(self):
        spec = random_reversible(2, 1, np.random.default_rng(4))
        cohort = small_cohort(spec, 10, 6.0, seed=5)
        with pytest.raises(ValueError):
            cross_validate(cohort, spec.graph, [1.0], folds=1, seed=0)

    def test_ties_break_toward_larger_lambda(self):
        # event-free cohort: held-out likelihood is flat in the penalized
        # groups, so every lambda scores the same and the largest wins
        g = Graph(((), (0,)))
        beta = [np.full((2, 1, 1), -60.0), np.full((2, 2, 1), -60.0)]
        truth = ModelSpec(graph=g, coeffs=CoefficientTensor(g, 1, beta),
                          irreversible=True)
        cohort = small_cohort(truth, 12, 6.0, seed=2)
        cv = cross_validate(cohort, g, [1.0, 10.0, 100.0], folds=3, seed=4,
                            opts=FitOptions(irreversible=True), adaptive=False)
        assert cv.best_lambda == 100.0


class TestFitGmm:
    def test_identical_values_collapse(self):
        comps = fit_gmm([2.5] * 50)
        for mean, var, _ in comps:
            assert mean == pytest.approx(2.5, abs=1e-9)
            assert var <= 1e-10

    def test_recovers_two_well_separated_components(self):
        rng = np.random.default_rng(42)
        values = np.concatenate([rng.normal(0, 0.01, 500), rng.normal(2, 0.1, 500)])
        comps = fit_gmm(values, seed=1)
        means = sorted(m for m, _, _ in comps)
        assert abs(means[0] - 0.0) < 0.05
        assert abs(means[-1] - 2.0) < 0.05

    def test_weights_normalized(self):
        rng = np.random.default_rng(3)
        comps = fit_gmm(rng.normal(0, 1, 200), seed=0)
        assert sum(w for _, _, w in comps) == pytest.approx(1.0, abs=1e-9)

    def test_needs_ten_values(self):
        with pytest.raises(ValueError):
            fit_gmm([1.0] * 9)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        values = rng.normal(0, 1, 100)
        assert fit_gmm(values, seed=5) == fit_gmm(values, seed=5)


class TestGmmEarlyStop:
    @pytest.fixture(scope="class")
    def sparse_fit(self):
        truth = cluster_truth()
        cohort = fctbn.simulate_cohort(truth, uniform_sampler(), 600, 60.0, seed=101)
        opts = FitOptions(irreversible=True)
        unpen = fista_fit(cohort, truth.graph, PenaltyConfig(lam=0.0), opts)
        weights = adaptive_weights(unpen.coeffs)
        pen = PenaltyConfig(lam=5.0, weights=weights)
        fit = fista_fit(cohort, truth.graph, pen, opts, init=unpen.coeffs)
        return truth, cohort, pen, opts, fit

    def test_well_separated_fit_unchanged(self, sparse_fit):
        truth, cohort, pen, opts, fit = sparse_fit
        out = gmm_early_stop(fit.coeffs, cohort, truth.graph, pen, opts)
        assert out.allclose(fit.coeffs, rtol=0, atol=0)

    def test_injected_noise_zeroed_and_survivors_keep_sign(self, sparse_fit):
        truth, cohort, pen, opts, fit = sparse_fit
        rng = np.random.default_rng(77)
        injected = fit.coeffs.copy()
        cells = []
        for i in range(truth.d):
            for k in range(1, truth.graph.n_parents(i) + 1):
                if np.all(injected.beta[i][0, k] == 0):
                    injected.beta[i][0, k] = rng.normal(0, 1e-4, 2)
                    cells.append((i, k))
        assert cells
        out = gmm_early_stop(injected, cohort, truth.graph, pen, opts)
        for i, k in cells:
            assert np.all(out.beta[i][0, k] == 0.0)
        before = injected.to_vector()
        after = out.to_vector()
        survivors = after != 0
        assert np.all(np.sign(after[survivors]) == np.sign(before[survivors]))

    def test_no_near_zero_cluster_is_a_noop(self):
        # all coefficient values sit far from zero: guard refuses to zero
        g = Graph(((), (0,)))
        ct = CoefficientTensor.zeros(g, 2)
        rng = np.random.default_rng(5)
        ct.beta[0][:, 0, :] = rng.normal(0.8, 0.02, (2, 2))
        ct.beta[1][:, :, :] = rng.normal(2.0, 0.02, (2, 2, 2))
        truth = ModelSpec(graph=g, coeffs=ct, irreversible=False)
        cohort = small_cohort(truth, 12, 6.0, seed=3, z=np.array([1.0, 0.1]))
        with pytest.warns(UserWarning, match="no near-zero"):
            out = gmm_early_stop(ct, cohort, g, PenaltyConfig(lam=1.0))
        assert out.allclose(ct, rtol=0, atol=0)


class TestGmmTriggerInsideFista:
    def test_plateau_invokes_zeroing(self):
        truth = cluster_truth()
        cohort = fctbn.simulate_cohort(truth, uniform_sampler(), 300, 60.0, seed=55)
        opts = FitOptions(irreversible=True, tol=0.0, max_iter=400,
                          gmm_early_stop=True, plateau_iters=30)
        unpen = fista_fit(cohort, truth.graph, PenaltyConfig(lam=0.0),
                          FitOptions(irreversible=True))
        weights = adaptive_weights(unpen.coeffs)
        fit = fista_fit(cohort, truth.graph, PenaltyConfig(lam=5.0, weights=weights),
                        opts, init=unpen.coeffs)
        assert fit.gmm_stopped
        assert fit.converged
