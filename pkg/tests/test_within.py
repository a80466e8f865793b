import numpy as np
import pytest

from conftest import lsdv_slopes, panel_design, random_unbalanced_panel
from momentann.errors import InputError, NumericalError
from momentann.estimator import fit_linear
from momentann.moments import MomentFeatures
from momentann.panel import Observation, PanelDataset, RegionMeta
from momentann.within import (
    FESpec,
    _group_means,
    assemble_design,
    design_from_arrays,
    residual_sum_diagnostics,
    within_transform,
    write_design_csv,
)


def group_mean_max(values, labels):
    return max(abs(values[labels == g].mean()) for g in set(labels))


@pytest.fixture
def small_panel():
    regions = (RegionMeta("A", 50.0, 10.0), RegionMeta("B", 40.0, -3.0), RegionMeta("C", 60.0, 25.0))
    obs = (
        Observation("A", 2000, 1.0),
        Observation("A", 2001, 2.0),
        Observation("B", 2000, 3.0),
        Observation("B", 2001, 5.0),
        Observation("C", 2000, 0.5),
    )
    feats = [
        MomentFeatures("A", 2000, (10.0, 40.0)),
        MomentFeatures("A", 2001, (11.0, 42.0)),
        MomentFeatures("B", 2000, (15.0, 30.0)),
        MomentFeatures("B", 2001, (16.0, 31.0)),
        MomentFeatures("B", 2002, (16.5, 33.0)),  # no observation
    ]
    return PanelDataset(regions, obs), feats


class TestFESpec:
    def test_location_only_for_pooled_or_time(self):
        FESpec("pooled", True)
        FESpec("time", True)
        for kind in ("region", "twoway"):
            with pytest.raises(InputError):
                FESpec(kind, True)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            FESpec("random")


class TestAssemble:
    def test_moment_columns_only(self, small_panel):
        raw = assemble_design(*small_panel, FESpec("time"))
        assert raw.column_names == ["m1", "m2"] and raw.X.shape == (4, 2)

    def test_location_columns(self, small_panel):
        raw = assemble_design(*small_panel, FESpec("time", True))
        assert raw.column_names == ["m1", "m2", "lat", "lon"]
        np.testing.assert_array_equal(raw.X[0, 2:], [50.0, 10.0])

    def test_join_report(self, small_panel):
        raw = assemble_design(*small_panel, FESpec("pooled"))
        assert raw.report == {"rows": 4, "observations_without_features": 1, "features_without_observations": 1}

    def test_strict_mode(self, small_panel):
        with pytest.raises(InputError, match="missing features"):
            assemble_design(*small_panel, FESpec("pooled"), strict=True)

    def test_empty_intersection(self, small_panel):
        panel, _ = small_panel
        with pytest.raises(InputError, match="empty intersection"):
            assemble_design(panel, [MomentFeatures("Z", 1999, (1.0, 2.0))], FESpec("pooled"))


class TestTransform:
    def test_two_by_two_twoway(self):
        d = design_from_arrays(
            np.zeros((4, 1)), [1.0, 2.0, 3.0, 5.0], FESpec("twoway"),
            region_ids=["A", "A", "B", "B"], years=[1, 2, 1, 2],
        )
        np.testing.assert_allclose(d.y, [0.25, -0.25, -0.25, 0.25], atol=1e-12)
        assert d.fe_param_count == 3

    def test_single_region_sums_to_zero(self):
        rng = np.random.default_rng(0)
        d = design_from_arrays(rng.normal(size=(7, 2)), rng.normal(size=7), FESpec("region"),
                               region_ids=["A"] * 7, years=range(7))
        assert abs(d.y.sum()) < 1e-12

    def test_pooled_identity_plus_constant(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(5, 2)), rng.normal(size=5)
        d = design_from_arrays(X, y, FESpec("pooled"))
        np.testing.assert_array_equal(d.y, y)
        np.testing.assert_array_equal(d.X, np.column_stack([X, np.ones(5)]))
        assert d.J == 2 and d.column_names[-1] == "const" and d.fe_param_count == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_group_means_vanish(self, seed):
        rng = np.random.default_rng(seed)
        g, t, X, y = random_unbalanced_panel(rng, 9, 6, 2)
        for kind, checks in (("region", [g]), ("time", [t]), ("twoway", [g, t])):
            d = panel_design(g, t, X, y, kind)
            tol = 1e-12 if kind != "twoway" else 1e-10
            for labels in checks:
                for col in np.column_stack([d.y, d.X]).T:
                    assert group_mean_max(col, labels) <= tol

    @pytest.mark.parametrize("seed", range(5))
    def test_balanced_iterated_equals_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        R, T = 6, 5
        g = np.repeat([f"r{i}" for i in range(R)], T)
        t = np.tile(np.arange(T), R)
        X, y = rng.normal(size=(R * T, 2)) * 5, rng.normal(size=R * T)
        it = panel_design(g, t, X, y, "twoway")
        sp = panel_design(g, t, X, y, "twoway", twoway_method="single_pass")
        np.testing.assert_allclose(it.y, sp.y, atol=1e-12, rtol=0)
        np.testing.assert_allclose(it.X, sp.X, atol=1e-12, rtol=0)

    def test_single_pass_leaves_residual_means_when_unbalanced(self):
        rng = np.random.default_rng(3)
        g, t, X, y = random_unbalanced_panel(rng, 8, 6, 1, keep=0.6)
        sp = panel_design(g, t, X, y, "twoway", twoway_method="single_pass")
        assert group_mean_max(sp.y, g) > 1e-6

    def test_sweep_cap(self):
        rng = np.random.default_rng(4)
        g, t, X, y = random_unbalanced_panel(rng, 8, 6, 1, keep=0.6)
        with pytest.raises(NumericalError):
            panel_design(g, t, X, y, "twoway", max_sweeps=1)

    @pytest.mark.parametrize("kind", ["region", "time", "twoway"])
    def test_lsdv_equivalence(self, kind):
        rng = np.random.default_rng(11)
        g, t, X, y = random_unbalanced_panel(rng, 12, 8, 3)
        fit = fit_linear(panel_design(g, t, X, y, kind))
        np.testing.assert_allclose(fit.params, lsdv_slopes(g, t, X, y, kind), atol=1e-8, rtol=0)

    def test_group_means_helper(self):
        Z = np.array([[1.0], [3.0], [5.0]])
        np.testing.assert_allclose(_group_means(Z, np.array([0, 0, 1]), 2), [[2.0], [5.0]])


class TestResidualDiagnostics:
    def test_ols_on_region_design(self):
        rng = np.random.default_rng(5)
        g, t, X, y = random_unbalanced_panel(rng, 10, 6, 2)
        d = panel_design(g, t, X, y, "region")
        fit = fit_linear(d)
        diag = residual_sum_diagnostics(d.y - d.X @ fit.params, d.region_ids, d.years, d.fe_spec)
        assert diag["max_abs_region_sum"] <= 1e-10 and "max_abs_year_sum" not in diag

    def test_pooled_total_sum(self):
        rng = np.random.default_rng(6)
        X, y = rng.normal(size=(40, 2)), rng.normal(size=40)
        d = design_from_arrays(X, y)
        fit = fit_linear(d)
        diag = residual_sum_diagnostics(d.y - d.X @ fit.params, d.region_ids, d.years, d.fe_spec)
        assert diag["abs_total_sum"] <= 1e-10

    def test_twoway_reports_both(self):
        e = np.array([1.0, -1.0, 2.0])
        diag = residual_sum_diagnostics(e, ["a", "a", "b"], [1, 2, 1], FESpec("twoway"))
        assert diag == {"max_abs_region_sum": 2.0, "max_abs_year_sum": 3.0, "max": 3.0}


def test_design_csv(tmp_path):
    d = design_from_arrays(
        np.array([[1.0, 2.0], [3.0, 4.0]]), [1.0, 2.0], FESpec("time"), region_ids=["A", "B"], years=[1, 1]
    )
    write_design_csv(d, tmp_path / "design.csv")
    lines = (tmp_path / "design.csv").read_text().splitlines()
    assert lines[0] == "region_id,year,y_tilde,x1_tilde,x2_tilde"
    assert lines[1] == "A,1,-0.5,-1.0,-1.0"


def test_location_design_transform_point(small_panel):
    panel, feats = small_panel
    d = within_transform(assemble_design(panel, feats, FESpec("time", True)))
    origin = d.transform_inputs(d.raw_X.mean(axis=0))
    np.testing.assert_allclose(origin, 0.0, atol=1e-12)
    np.testing.assert_allclose(d.input_means, 0.0, atol=1e-12)
