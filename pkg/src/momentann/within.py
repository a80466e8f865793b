"""Design assembly and fixed-effects within-transformations.

Four specifications are supported: ``pooled`` (no effects, explicit constant
column), ``region`` and ``time`` (one-way demeaning) and ``twoway``.
Two-way demeaning on unbalanced panels uses alternating projections; on
balanced panels this coincides with ``y - y_r. - y_.t + y_..``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, NumericalError
from .moments import MomentFeatures
from .panel import PanelDataset

__all__ = [
    "FE_KINDS",
    "FESpec",
    "RawDesign",
    "TransformedDesign",
    "assemble_design",
    "within_transform",
    "design_from_arrays",
    "fe_param_count",
    "group_demean",
    "residual_sum_diagnostics",
    "write_design_csv",
]

FE_KINDS = ("pooled", "region", "time", "twoway")
LOCATION_COLUMNS = ("lat", "lon")


@dataclass(frozen=True)
class FESpec:
    kind: str = "time"
    include_location_inputs: bool = False

    def __post_init__(self):
        if self.kind not in FE_KINDS:
            raise InputError(f"unknown fixed-effects kind {self.kind!r}; expected one of {FE_KINDS}")
        if self.include_location_inputs and self.kind not in ("pooled", "time"):
            raise InputError(
                "location inputs are constant within regions and are removed by "
                f"{self.kind!r} demeaning; use 'pooled' or 'time'"
            )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "include_location_inputs": self.include_location_inputs}


def fe_param_count(kind: str, R: int, T: int) -> int:
    return {"pooled": 0, "region": R, "time": T, "twoway": R + T - 1}[kind]


@dataclass
class RawDesign:
    region_ids: np.ndarray
    years: np.ndarray
    y: np.ndarray
    X: np.ndarray
    column_names: list[str]
    fe_spec: FESpec
    K: int
    report: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class TransformedDesign:
    """Within-transformed response and regressors plus bookkeeping.

    `X` holds the transformed regressors and, for pooled designs only, a
    trailing constant column. `inputs` are the J non-constant columns, which
    are what a network sees. `raw_X` keeps the untransformed regressors.
    """

    region_ids: np.ndarray
    years: np.ndarray
    y: np.ndarray
    X: np.ndarray
    column_names: list[str]
    fe_spec: FESpec
    J: int
    K: int
    R: int
    T: int
    fe_param_count: int
    raw_X: np.ndarray
    raw_y: np.ndarray
    sweeps: int = 0

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def has_constant(self) -> bool:
        return self.fe_spec.kind == "pooled"

    @property
    def inputs(self) -> np.ndarray:
        return self.X[:, : self.J]

    @property
    def input_names(self) -> list[str]:
        return self.column_names[: self.J]

    @property
    def input_means(self) -> np.ndarray:
        return self.inputs.mean(axis=0)

    @property
    def location_index(self) -> tuple[int, int] | None:
        if not self.fe_spec.include_location_inputs:
            return None
        return self.column_names.index("lat"), self.column_names.index("lon")

    def transform_inputs(self, raw: np.ndarray) -> np.ndarray:
        """Map raw regressor values into the transformed input space.

        Pooled inputs pass through. For demeaned designs a point is centred
        at the overall mean of the raw column over the design rows; the
        design mean of a transformed column is zero, so the overall raw mean
        maps to the origin.
        """
        raw = np.asarray(raw, dtype=float)
        if self.fe_spec.kind == "pooled":
            return raw.copy()
        return raw - self.raw_X.mean(axis=0)


def assemble_design(
    panel: PanelDataset,
    features: Sequence[MomentFeatures],
    fe_spec: FESpec,
    strict: bool = False,
) -> RawDesign:
    """Join panel observations with moment features on (region_id, year).

    Rows are the intersection of both key sets, sorted by (region_id, year).
    The report counts observations without features and features without
    observations. With ``strict=True`` a missing feature row is an error.
    """
    if not features:
        raise InputError("no feature rows")
    K = features[0].K
    if any(f.K != K for f in features):
        raise InputError("feature rows disagree on the number of moments")
    fmap = {(f.region_id, f.year): f.m for f in features}
    if len(fmap) != len(features):
        raise InputError("duplicate (region_id, year) in features")
    coords = {r.region_id: (r.latitude, r.longitude) for r in panel.regions}

    obs = sorted(panel.observations, key=lambda o: (o.region_id, o.year))
    missing = [(o.region_id, o.year) for o in obs if (o.region_id, o.year) not in fmap]
    if missing and strict:
        raise InputError(f"missing features for {len(missing)} observations, e.g. {missing[0]}")
    rows = [o for o in obs if (o.region_id, o.year) in fmap]
    if not rows:
        raise InputError("empty intersection of observations and features")
    obs_keys = {(o.region_id, o.year) for o in obs}
    unused = sum(1 for key in fmap if key not in obs_keys)

    names = [f"m{k}" for k in range(1, K + 1)]
    X = np.array([fmap[(o.region_id, o.year)] for o in rows], dtype=float)
    if fe_spec.include_location_inputs:
        loc = np.array([coords[o.region_id] for o in rows], dtype=float)
        X = np.hstack([X, loc])
        names += list(LOCATION_COLUMNS)
    return RawDesign(
        region_ids=np.array([o.region_id for o in rows], dtype=object),
        years=np.array([o.year for o in rows], dtype=int),
        y=np.array([o.y for o in rows], dtype=float),
        X=X,
        column_names=names,
        fe_spec=fe_spec,
        K=K,
        report={
            "rows": len(rows),
            "observations_without_features": len(missing),
            "features_without_observations": unused,
        },
    )


def _codes(labels: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(labels, return_inverse=True)
    return inv.ravel(), len(uniq)


def _group_means(Z: np.ndarray, idx: np.ndarray, g: int) -> np.ndarray:
    counts = np.bincount(idx, minlength=g).astype(float)
    return np.column_stack(
        [np.bincount(idx, weights=Z[:, c], minlength=g) / counts for c in range(Z.shape[1])]
    )


def group_demean(Z: np.ndarray, idx: np.ndarray, g: int) -> np.ndarray:
    return Z - _group_means(Z, idx, g)[idx]


def _twoway_iterate(Z, ri, R, ti, T, tol, max_sweeps):
    for sweep in range(1, max_sweeps + 1):
        Z = group_demean(Z, ri, R)
        Z = group_demean(Z, ti, T)
        # year means are ~0 right after the year step; region means are the test
        if np.max(np.abs(_group_means(Z, ri, R))) < tol:
            return Z, sweep
    raise NumericalError(f"two-way demeaning did not converge within {max_sweeps} sweeps")


def _twoway_single_pass(Z, ri, R, ti, T):
    return Z - _group_means(Z, ri, R)[ri] - _group_means(Z, ti, T)[ti] + Z.mean(axis=0)


def within_transform(
    design: RawDesign,
    fe_spec: FESpec | None = None,
    twoway_method: str = "iterate",
    tol: float = 1e-10,
    max_sweeps: int = 1000,
) -> TransformedDesign:
    """Apply the fixed-effects transformation of `fe_spec` to y and every regressor."""
    fe_spec = fe_spec or design.fe_spec
    if fe_spec.include_location_inputs != design.fe_spec.include_location_inputs:
        raise InputError("fe_spec location flag differs from the assembled design")
    if design.n == 0:
        raise InputError("empty design")
    ri, R = _codes(design.region_ids)
    ti, T = _codes(design.years)
    Z = np.column_stack([design.y, design.X])
    sweeps = 0
    if fe_spec.kind == "region":
        Z = group_demean(Z, ri, R)
    elif fe_spec.kind == "time":
        Z = group_demean(Z, ti, T)
    elif fe_spec.kind == "twoway":
        if twoway_method == "iterate":
            Z, sweeps = _twoway_iterate(Z, ri, R, ti, T, tol, max_sweeps)
        elif twoway_method == "single_pass":
            Z = _twoway_single_pass(Z, ri, R, ti, T)
        else:
            raise ValueError(f"unknown twoway_method {twoway_method!r}")

    y, X = Z[:, 0].copy(), Z[:, 1:].copy()
    names = list(design.column_names)
    J = X.shape[1]
    if fe_spec.kind == "pooled":
        X = np.hstack([X, np.ones((design.n, 1))])
        names.append("const")
    return TransformedDesign(
        region_ids=design.region_ids,
        years=design.years,
        y=y,
        X=X,
        column_names=names,
        fe_spec=fe_spec,
        J=J,
        K=design.K,
        R=R,
        T=T,
        fe_param_count=fe_param_count(fe_spec.kind, R, T),
        raw_X=design.X.copy(),
        raw_y=design.y.copy(),
        sweeps=sweeps,
    )


def design_from_arrays(
    X,
    y,
    fe_spec: FESpec | None = None,
    region_ids=None,
    years=None,
    column_names: list[str] | None = None,
    **transform_kw,
) -> TransformedDesign:
    """Build and transform a design from plain arrays (synthetic studies).

    Without labels every row is its own region in a single year, which only
    makes sense for the pooled specification.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    fe_spec = fe_spec or FESpec("pooled")
    if region_ids is None:
        region_ids = np.array([f"r{i}" for i in range(n)], dtype=object)
    if years is None:
        years = np.zeros(n, dtype=int)
    names = column_names or [f"m{k}" for k in range(1, X.shape[1] + 1)]
    K = sum(1 for c in names if c not in LOCATION_COLUMNS)
    raw = RawDesign(
        region_ids=np.asarray(region_ids, dtype=object),
        years=np.asarray(years),
        y=y,
        X=X,
        column_names=names,
        fe_spec=fe_spec,
        K=K,
    )
    return within_transform(raw, **transform_kw)


def residual_sum_diagnostics(residuals, region_ids, years, fe_spec: FESpec) -> dict:
    """Largest absolute residual sum within the demeaned dimension(s).

    Pooled fits report the absolute overall sum instead.
    """
    e = np.asarray(residuals, dtype=float)
    out: dict[str, float] = {}
    if fe_spec.kind in ("region", "twoway"):
        ri, R = _codes(np.asarray(region_ids))
        out["max_abs_region_sum"] = float(np.max(np.abs(np.bincount(ri, weights=e, minlength=R))))
    if fe_spec.kind in ("time", "twoway"):
        ti, T = _codes(np.asarray(years))
        out["max_abs_year_sum"] = float(np.max(np.abs(np.bincount(ti, weights=e, minlength=T))))
    if fe_spec.kind == "pooled":
        out["abs_total_sum"] = float(abs(e.sum()))
    out["max"] = max(out.values())
    return out


def write_design_csv(design: TransformedDesign, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "year", "y_tilde"] + [f"x{j}_tilde" for j in range(1, design.X.shape[1] + 1)])
        for i in range(design.n):
            w.writerow(
                [design.region_ids[i], int(design.years[i]), repr(float(design.y[i]))]
                + [repr(float(v)) for v in design.X[i]]
            )
