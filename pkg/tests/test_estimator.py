import math
import warnings

import numpy as np
import pytest

from momentann.errors import ConvergenceError, InputError, RankDeficiencyError
from momentann.estimator import (
    Candidate,
    FitOptions,
    best_candidate,
    fit_linear,
    fit_slfn,
    hessian,
    information_criteria,
    load_fit,
    model_df,
    select_model,
    write_selection_csv,
)
from momentann.slfn import SlfnParams, forward
from momentann.within import FESpec, design_from_arrays

TRUE_NET = SlfnParams([[-1.2, 0.8], [0.9, 1.1]], [-3.0, 2.5])


def ic_oracle(sse, n, df):
    sigma2 = sse / n
    loglik = -0.5 * n * (math.log(2 * math.pi) + math.log(sigma2) + 1)
    return -2 * loglik + 2 * df, -2 * loglik + math.log(n) * df


@pytest.fixture(scope="module")
def net_design():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 2))
    return design_from_arrays(X, forward(TRUE_NET, X))


@pytest.fixture(scope="module")
def noisy_net_design():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 2))
    return design_from_arrays(X, forward(TRUE_NET, X) + 0.2 * rng.normal(size=400))


class TestModelDf:
    @pytest.mark.parametrize(
        "fe, expected", [("pooled", 3), ("region", 262), ("time", 24), ("twoway", 283)]
    )
    def test_linear(self, fe, expected):
        assert model_df("linear", fe, 2, R=260, T=22) == expected

    @pytest.mark.parametrize(
        "fe, H, expected",
        [("pooled", 3, 12), ("pooled", 8, 32), ("region", 4, 272), ("twoway", 2, 287),
         ("time", 3, 31), ("time", 6, 40), ("region", 9, 287), ("twoway", 10, 311)],
    )
    def test_network(self, fe, H, expected):
        assert model_df("slfn", fe, 2, H, R=260, T=22) == expected

    def test_location_model(self):
        assert model_df("slfn", "time", 4, 6, T=22) == 52

    def test_invalid(self):
        with pytest.raises(ValueError):
            model_df("slfn", "time", 2, 0, T=22)
        with pytest.raises(ValueError):
            model_df("tree", "time", 2)


class TestInformationCriteria:
    @pytest.mark.parametrize("sse, n, df", [(10.0, 50, 3), (1234.5, 5078, 283), (0.01, 20, 5)])
    def test_oracle(self, sse, n, df):
        aic, bic = information_criteria(sse, n, df)
        oa, ob = ic_oracle(sse, n, df)
        assert math.isclose(aic, oa, rel_tol=1e-12) and math.isclose(bic, ob, rel_tol=1e-12)

    def test_large_sample_values(self):
        n, df, sigma = 5078, 3, 3.247
        aic, bic = information_criteria(sigma**2 * (n - df), n, df)
        assert abs(aic - 26379) <= 10 and abs(bic - 26399) <= 10

    def test_penalty_identities(self):
        sse, n = 37.0, 120
        a1, b1 = information_criteria(sse, n, 4)
        a2, b2 = information_criteria(sse, n, 8)
        assert math.isclose(a2 - a1, 8.0, rel_tol=1e-12)
        assert math.isclose(b1 - a1, (math.log(n) - 2) * 4, rel_tol=1e-12)

    def test_zero_sse(self):
        with pytest.warns(RuntimeWarning):
            assert information_criteria(0.0, 10, 2) == (-math.inf, -math.inf)

    def test_invalid(self):
        with pytest.raises(ValueError):
            information_criteria(1.0, 3, 3)


class TestLinear:
    def test_noiseless_recovery(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 2))
        beta = np.array([1.5, -0.25, 0.75])
        fit = fit_linear(design_from_arrays(X, X @ beta[:2] + beta[2]))
        np.testing.assert_allclose(fit.params, beta, atol=1e-12)
        assert fit.sse <= 1e-20

    def test_normal_equations(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
        d = design_from_arrays(X, y)
        fit = fit_linear(d)
        oracle = np.linalg.solve(d.X.T @ d.X, d.X.T @ y)
        np.testing.assert_allclose(fit.params, oracle, atol=1e-10, rtol=0)
        np.testing.assert_allclose(fit.hessian, d.X.T @ d.X, atol=1e-10, rtol=0)
        assert math.isclose(fit.sigma_hat**2 * (fit.n - fit.df), fit.sse, rel_tol=1e-12)

    def test_region_df(self):
        rng = np.random.default_rng(2)
        g = np.repeat([f"r{i}" for i in range(260)], 3)
        d = design_from_arrays(rng.normal(size=(780, 2)), rng.normal(size=780), FESpec("region"),
                               region_ids=g, years=np.tile([1, 2, 3], 260))
        assert fit_linear(d).df == 262

    def test_rank_deficient(self):
        X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
        with pytest.raises(RankDeficiencyError):
            fit_linear(design_from_arrays(X, np.arange(10.0)))

    def test_too_few_observations(self):
        with pytest.raises(InputError):
            fit_linear(design_from_arrays(np.eye(3)[:, :2], [1.0, 2.0, 3.0]))


class TestNetwork:
    def test_noiseless_recovery(self, net_design):
        fit = fit_slfn(net_design, 2, FitOptions(restarts=20))
        assert fit.sse <= 1e-6 * net_design.n
        assert fit.df == 8 and fit.converged

    def test_zero_target(self):
        rng = np.random.default_rng(3)
        d = design_from_arrays(rng.normal(size=(40, 2)), np.zeros(40), FESpec("time"),
                               region_ids=[f"r{i % 8}" for i in range(40)], years=np.arange(40) // 8)
        fit = fit_slfn(d, 2, FitOptions(restarts=3))
        for r in fit.restarts:
            assert r["sse"] <= r["start_sse"]

    def test_deterministic(self, noisy_net_design):
        opts = FitOptions(restarts=4, seed=7)
        a, b = fit_slfn(noisy_net_design, 3, opts), fit_slfn(noisy_net_design, 3, opts)
        assert a.to_dict() == b.to_dict()

    def test_more_restarts_never_worse(self, noisy_net_design):
        sses = [fit_slfn(noisy_net_design, 3, FitOptions(restarts=r, seed=5)).sse for r in (1, 3, 6)]
        assert sses[0] >= sses[1] >= sses[2]

    def test_restart_prefix_is_stable(self, noisy_net_design):
        a = fit_slfn(noisy_net_design, 2, FitOptions(restarts=2, seed=5))
        b = fit_slfn(noisy_net_design, 2, FitOptions(restarts=5, seed=5))
        assert a.restarts == b.restarts[:2]

    def test_sigma_identity(self, noisy_net_design):
        fit = fit_slfn(noisy_net_design, 2, FitOptions(restarts=3))
        assert math.isclose(fit.sigma_hat**2 * (fit.n - fit.df), fit.sse, rel_tol=1e-12)
        assert fit.df == model_df("slfn", "pooled", 2, 2)

    def test_all_restarts_fail(self, noisy_net_design):
        with pytest.raises(ConvergenceError):
            fit_slfn(noisy_net_design, 3, FitOptions(restarts=2, max_iterations=1))

    def test_bad_H(self, net_design):
        with pytest.raises(InputError):
            fit_slfn(net_design, 0)

    def test_weak_unit_warning(self, noisy_net_design):
        fit = fit_slfn(noisy_net_design, 2, FitOptions(restarts=2, fully_connected_tol=1e6))
        assert any("hidden units [0, 1]" in w for w in fit.warnings)


class TestHessian:
    def test_linear_is_cross_product(self):
        rng = np.random.default_rng(4)
        d = design_from_arrays(rng.normal(size=(30, 2)), rng.normal(size=30))
        fit = fit_linear(d)
        np.testing.assert_allclose(hessian(fit, d, "finite_difference"), d.X.T @ d.X, atol=1e-6, rtol=1e-8)

    def test_gn_matches_fd_at_zero_residual(self, net_design):
        fit = fit_slfn(net_design, 2, FitOptions(restarts=20))
        gn = hessian(fit, net_design, "gauss_newton")
        fd = hessian(fit, net_design, "finite_difference")
        assert np.abs(gn - fd).max() <= 1e-4 * np.abs(gn).max()

    @pytest.mark.parametrize("mode", ["gauss_newton", "finite_difference"])
    def test_symmetric(self, noisy_net_design, mode):
        fit = fit_slfn(noisy_net_design, 2, FitOptions(restarts=2, hessian_mode=mode))
        assert fit.hessian_mode == mode
        assert np.abs(fit.hessian - fit.hessian.T).max() <= 1e-10

    def test_singular_uses_pinv(self, noisy_net_design):
        fit = fit_slfn(noisy_net_design, 2, FitOptions(restarts=2))
        fit.hessian = np.diag([1.0, 0.0] + [1.0] * (fit.n_params - 2))
        fit.__dict__.pop("_hinv", None)
        inv, pinv = fit.hessian_inverse()
        assert pinv and inv[1, 1] == 0.0

    def test_unknown_mode(self, net_design):
        fit = fit_linear(net_design)
        with pytest.raises(ValueError):
            hessian(fit, net_design, "exact")


class TestSelection:
    def test_single_candidate(self, noisy_net_design):
        best, table = select_model(noisy_net_design, [2], opts=FitOptions(restarts=2))
        assert best == 2 and len(table) == 1

    def test_bic_not_larger_than_aic(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(200, 2))
        d = design_from_arrays(X, X @ [0.5, -1.0] + rng.normal(size=200))
        _, table = select_model(d, range(1, 5), opts=FitOptions(restarts=3))
        assert best_candidate(table, "bic") <= best_candidate(table, "aic")

    def test_failed_candidates_never_selected(self, noisy_net_design):
        table = [Candidate(1, error="boom"), Candidate(2, fit_slfn(noisy_net_design, 2, FitOptions(restarts=2)))]
        assert best_candidate(table, "aic") == 2
        with pytest.raises(ConvergenceError):
            best_candidate(table[:1])

    def test_empty_candidates(self, net_design):
        with pytest.raises(InputError):
            select_model(net_design, [])

    def test_selection_csv(self, tmp_path, noisy_net_design):
        table = [Candidate(1, error="x"), Candidate(2, fit_slfn(noisy_net_design, 2, FitOptions(restarts=2)))]
        write_selection_csv(table, tmp_path / "sel.csv")
        lines = (tmp_path / "sel.csv").read_text().splitlines()
        assert lines[0] == "H,df,aic,bic,sigma_hat,converged"
        assert lines[1] == "1,,,,,false" and lines[2].startswith("2,8,")


class TestSerialization:
    def test_network_round_trip(self, tmp_path, noisy_net_design):
        fit = fit_slfn(noisy_net_design, 2, FitOptions(restarts=2))
        fit.save(tmp_path / "fit.json")
        back = load_fit(tmp_path / "fit.json")
        assert back.to_dict() == fit.to_dict()
        X = noisy_net_design.inputs[:5]
        np.testing.assert_array_equal(back.predict(X), fit.predict(X))

    def test_zero_sse_round_trip(self, tmp_path):
        X = np.random.default_rng(0).normal(size=(10, 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_linear(design_from_arrays(X, np.zeros(10)))
        assert fit.sse == 0.0
        fit.save(tmp_path / "fit.json")
        assert not load_fit(tmp_path / "fit.json").ic_defined

    def test_missing_or_invalid(self, tmp_path):
        with pytest.raises(InputError, match="missing input"):
            load_fit(tmp_path / "nope.json")
        (tmp_path / "bad.json").write_text("{}")
        with pytest.raises(InputError):
            load_fit(tmp_path / "bad.json")


def test_fit_options_validation():
    with pytest.raises(InputError):
        FitOptions(restarts=0)
    with pytest.raises(InputError):
        FitOptions(gradient_tolerance=0)
    with pytest.raises(InputError):
        FitOptions(hessian_mode="bfgs")
