import numpy as np
import pytest

from momentann.synth import make_fixture, write_fixture
from momentann.within import FESpec, design_from_arrays


def random_unbalanced_panel(rng, R, T, J, keep=0.75):
    """Random panel with roughly `keep` of the R x T cells observed.

    Every region keeps at least two years so region effects stay estimable.
    """
    cells = []
    for r in range(R):
        years = [t for t in range(T) if rng.random() < keep]
        if len(years) < 2:
            years = sorted(rng.choice(T, size=2, replace=False).tolist())
        cells += [(f"g{r:02d}", 2000 + t) for t in years]
    region_ids = np.array([c[0] for c in cells], dtype=object)
    years = np.array([c[1] for c in cells])
    n = len(cells)
    alpha = {f"g{r:02d}": rng.normal() for r in range(R)}
    mu = {2000 + t: rng.normal() for t in range(T)}
    X = rng.normal(size=(n, J)) + np.array([[alpha[g]] for g in region_ids])  # correlated with effects
    beta = rng.normal(size=J)
    y = X @ beta + np.array([alpha[g] + mu[t] for g, t in zip(region_ids, years)]) + 0.3 * rng.normal(size=n)
    return region_ids, years, X, y


def lsdv_slopes(region_ids, years, X, y, kind):
    """Slopes from OLS with explicit dummy variables (the oracle for within OLS)."""
    cols = [X]
    if kind in ("region", "twoway"):
        regions = sorted(set(region_ids))
        cols.append(np.column_stack([(region_ids == r).astype(float) for r in regions]))
    if kind in ("time", "twoway"):
        yrs = sorted(set(years))
        D = np.column_stack([(years == t).astype(float) for t in yrs])
        # the region dummies already span the constant in the two-way case
        cols.append(D[:, 1:] if kind == "twoway" else D)
    Z = np.hstack(cols)
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    return coef[: X.shape[1]]


def panel_design(region_ids, years, X, y, kind, **kw):
    return design_from_arrays(X, y, FESpec(kind), region_ids=region_ids, years=years, **kw)


@pytest.fixture(scope="session")
def linear_fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear_fixture")
    write_fixture(make_fixture("linear", R=10, T=7, seed=3, noise=0.5, effects="twoway"), out)
    return out
