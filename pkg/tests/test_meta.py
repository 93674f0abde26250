import math

import numpy as np
import pytest

from metasparse.meta import (
    fit_novel_task,
    lambda_schedule,
    novel_lambda,
    pool,
    recover_common_support,
)
from metasparse.model import (
    MetaDataset,
    SupportSet,
    TaskData,
    extract_support,
    support_equal,
)
from metasparse.solvers import SolverOptions, lasso, lasso_dual
from metasparse.synth import GenConfig, generate, make_true_weights


def gaussian_setting(p=100, k=5, l=5, T=20, seed=0, **kw):
    cfg = GenConfig(p=p, k=k, l=l, T=T, seed=seed, **kw)
    w = make_true_weights(p, k, cfg.amplitude)
    return generate(cfg, w)


class TestPool:
    def test_shape(self):
        ds, _ = gaussian_setting(p=4, k=1, l=3, T=2)
        X, y = pool(ds)
        assert X.shape == (6, 4)
        assert y.shape == (6,)

    def test_single_task_identity(self):
        ds, _ = gaussian_setting(p=4, k=1, l=3, T=1)
        X, y = pool(ds)
        assert np.array_equal(X, ds.prior_tasks[0].X)
        assert np.array_equal(y, ds.prior_tasks[0].y)

    def test_row_ordering(self):
        # pooled row i*l + j is sample j of task i
        ds, _ = gaussian_setting(p=4, k=1, l=3, T=2)
        X, y = pool(ds)
        assert np.array_equal(X[5], ds.prior_tasks[1].X[2])
        assert y[5] == ds.prior_tasks[1].y[2]

    def test_novel_task_not_pooled(self):
        ds, _ = gaussian_setting(p=4, k=1, l=3, T=2)
        X, _ = pool(ds)
        assert X.shape[0] == 2 * 3


class TestLambdaSchedule:
    def test_paper_formula_arithmetic(self):
        # sqrt(ln(100)/250), computed independently
        expected = math.sqrt(math.log(100) / 250)
        got = lambda_schedule(100, 50, 5, 1.0)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.135723, abs=1e-6)

    def test_identity_at_e_squared(self):
        p = math.ceil(math.e**2)  # log p = 2 within the integer constraint
        got = lambda_schedule(p, 1, 1, 1.0)
        assert got == pytest.approx(math.sqrt(math.log(p)), rel=1e-12)

    def test_constant_scales_linearly(self):
        assert lambda_schedule(100, 50, 5, 4.0) == pytest.approx(
            4 * lambda_schedule(100, 50, 5, 1.0)
        )

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            lambda_schedule(1, 10, 5, 1.0)
        with pytest.raises(ValueError):
            lambda_schedule(100, 10, 5, 0.0)


class TestNovelLambda:
    def test_formula(self):
        assert novel_lambda(5, 40, 1.0) == pytest.approx(math.sqrt(math.log(5) / 40))

    def test_small_support_guard(self):
        # log(max(|S|, 2)) keeps the schedule positive
        assert novel_lambda(0, 10, 1.0) == pytest.approx(math.sqrt(math.log(2) / 10))
        assert novel_lambda(1, 10, 1.0) == novel_lambda(2, 10, 1.0)


class TestRecoverCommonSupport:
    def test_noiseless_identifiable(self):
        ds, truth = gaussian_setting(
            p=30, k=5, l=5, T=10, sigma_eps=0.0, sigma_delta=0.0, seed=1
        )
        rep = recover_common_support(ds, c_lambda=0.01, truth=truth)
        assert rep.exact_recovery
        assert rep.linf_error <= 1e-2

    def test_lambda_matches_schedule(self):
        ds, truth = gaussian_setting(seed=2)
        rep = recover_common_support(ds, c_lambda=2.0, truth=truth)
        assert rep.lambda_used == pytest.approx(lambda_schedule(100, 20, 5, 2.0))
        assert rep.pooled_n == 100

    def test_high_sample_regime_recovers(self):
        # smoke version of the saturated phase point (full scale is in the
        # acceptance suite)
        hits = 0
        for seed in range(20):
            ds, truth = gaussian_setting(T=92, seed=100 + seed)  # C = 20 at l=5
            rep = recover_common_support(ds, truth=truth)
            hits += bool(rep.converged and rep.exact_recovery)
        assert hits >= 18

    def test_low_sample_regime_fails(self):
        hits = 0
        for seed in range(20):
            ds, truth = gaussian_setting(T=3, seed=200 + seed)  # C = 0.5 at l=5
            rep = recover_common_support(ds, truth=truth)
            hits += bool(rep.converged and rep.exact_recovery)
        assert hits <= 4

    def test_dual_certificate_implies_containment(self):
        # whenever the lasso converged and the dual is strictly feasible off
        # the true support, the recovered support is contained in it
        checked = 0
        for seed in range(30):
            ds, truth = gaussian_setting(T=10, seed=300 + seed)
            rep = recover_common_support(ds, truth=truth)
            if not rep.converged:
                continue
            X, y = pool(ds)
            z = lasso_dual(X, y, rep.lambda_used, rep.w_hat)
            comp = np.setdiff1d(np.arange(100), truth.support.as_array())
            if np.abs(z[comp]).max() < 1.0 - 1e-9:
                checked += 1
                assert rep.recovered_support.issubset(truth.support)
        assert checked > 0

    def test_report_serializes(self):
        ds, truth = gaussian_setting(p=20, k=3, l=4, T=4, seed=4)
        rep = recover_common_support(ds, truth=truth)
        doc = rep.to_json_dict()
        assert set(doc) >= {"lambda_used", "pooled_n", "recovered_support", "w_hat"}
        assert isinstance(doc["recovered_support"], list)


class TestScalingEquivariance:
    def test_power_of_two_scale_is_exact(self):
        # scaling y and lambda by a power of two scales the estimate exactly
        ds, truth = gaussian_setting(p=20, k=3, l=5, T=8, seed=5)
        X, y = pool(ds)
        lam = lambda_schedule(20, 8, 5, 1.0)
        base = lasso(X, y, lam)
        alpha = 4.0
        scaled = lasso(X, alpha * y, alpha * lam)
        assert np.array_equal(scaled.weights, alpha * base.weights)

    def test_general_scale_within_tolerance(self):
        ds, _ = gaussian_setting(p=20, k=3, l=5, T=8, seed=6)
        X, y = pool(ds)
        lam = 0.1
        base = lasso(X, y, lam)
        alpha = 3.0
        scaled = lasso(X, alpha * y, alpha * lam)
        np.testing.assert_allclose(scaled.weights, alpha * base.weights, atol=1e-9)


class TestFitNovelTask:
    def test_noiseless_interpolation_with_refit(self):
        ds, truth = gaussian_setting(
            p=30, k=5, l=10, T=1, sigma_eps=0.0, sigma_delta=0.0, seed=7
        )
        rep = fit_novel_task(
            ds.novel_task, truth.support, c_lambda_novel=0.01, refit=True, truth=truth
        )
        assert rep.refit
        assert rep.linf_error <= 1e-6

    def test_empty_support_flagged(self):
        ds, truth = gaussian_setting(p=20, k=3, l=5, T=2, seed=8)
        rep = fit_novel_task(ds.novel_task, SupportSet(), truth=truth)
        assert rep.empty_support
        assert not rep.w_hat_novel.any()
        assert len(rep.support_novel) == 0

    def test_output_support_within_input_support(self):
        for seed in range(20):
            ds, truth = gaussian_setting(p=25, k=4, l=6, T=3, seed=600 + seed)
            rng = np.random.default_rng(seed)
            given = SupportSet(tuple(rng.choice(25, 8, replace=False)))
            rep = fit_novel_task(ds.novel_task, given, c_lambda_novel=0.5)
            assert rep.support_novel.issubset(given)
            off = np.setdiff1d(np.arange(25), given.as_array())
            assert not rep.w_hat_novel[off].any()

    def test_novel_regime_smoke(self):
        # theorem regime l = 40 >> k' log(k): most seeds recover the novel
        # support exactly (full 100-seed version in the acceptance suite)
        exact = 0
        for seed in range(20):
            cfg = GenConfig(p=100, k=5, l=40, T=1, seed=900 + seed)
            w = make_true_weights(100, 5, 1.0)
            ds, truth = generate(cfg, w)
            rep = fit_novel_task(ds.novel_task, truth.support, refit=True, truth=truth)
            assert rep.support_novel.issubset(truth.support)
            exact += support_equal(rep.support_novel, truth.per_task_supports[-1])
        assert exact >= 17

    def test_lambda_uses_support_size(self):
        ds, _ = gaussian_setting(p=20, k=3, l=5, T=2, seed=9)
        rep = fit_novel_task(ds.novel_task, SupportSet((0, 1, 2)), c_lambda_novel=2.0)
        assert rep.lambda_used == pytest.approx(novel_lambda(3, 5, 2.0))

    def test_oversized_selection_keeps_lasso_weights(self):
        # more selected coordinates than samples: refit must fall back
        rng = np.random.default_rng(10)
        X = rng.standard_normal((3, 10))
        w = np.zeros(10)
        w[:6] = 2.0
        y = X @ w
        novel = TaskData(0, X, y)
        rep = fit_novel_task(
            novel, SupportSet(tuple(range(10))), c_lambda_novel=1e-6, refit=True,
            opts=SolverOptions(max_iter=2000),
        )
        assert not rep.refit


class TestErrorMonotonicity:
    def test_mean_error_non_increasing_as_T_doubles(self):
        # statistical invariant with 10% slack, 100 seeds per point
        from metasparse.bench import T_for_C

        means = []
        for C in (2.0, 4.0, 8.0, 16.0):
            T = T_for_C(C, 5, 5, 100)
            errs = []
            for seed in range(100):
                ds, truth = gaussian_setting(T=T, seed=4000 + seed)
                rep = recover_common_support(ds, truth=truth)
                errs.append(rep.linf_error)
            means.append(float(np.mean(errs)))
        for a, b in zip(means, means[1:]):
            assert b <= a * 1.10
