"""Delta-method prediction intervals, marginal-effect curves and scenario
simulation for fitted models.

All curves are evaluated in the model's transformed input space: for
demeaned designs the axes are deviations from the within-group means and
held inputs sit at zero.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import InputError
from .estimator import FitResult
from .panel import RegionMeta
from .within import TransformedDesign

__all__ = [
    "MarginalCurve",
    "ScenarioResult",
    "prediction_variance",
    "t_quantile",
    "default_grid",
    "marginal_curve",
    "interaction_curve",
    "contour_grid",
    "location_curve",
    "scenario_uniform_shift",
    "write_curve_csv",
    "write_contour_csv",
    "write_curve_svg",
]

PINV_WARNING = "Hessian singular: interval uses the Moore-Penrose pseudo-inverse"


@dataclass
class MarginalCurve:
    grid: np.ndarray
    points: np.ndarray
    fitted: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    varied: int | None = None
    direction: np.ndarray | None = None
    label: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def half_width(self) -> np.ndarray:
        return self.upper - self.fitted


@dataclass
class ScenarioResult:
    region_ids: list[str]
    baseline: np.ndarray
    scenario: np.ndarray
    shift: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.scenario - self.baseline

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region_id", "baseline", "scenario", "delta"])
            for rid, b, s, d in zip(self.region_ids, self.baseline, self.scenario, self.delta):
                w.writerow([rid, repr(float(b)), repr(float(s)), repr(float(d))])


def _variance(fit: FitResult, X: np.ndarray) -> tuple[np.ndarray, bool]:
    G = np.atleast_2d(fit.param_gradient(X))
    Hinv, pinv = fit.hessian_inverse()
    v = fit.sigma_hat**2 * np.einsum("ip,pq,iq->i", G, Hinv, G)
    return np.maximum(v, 0.0), pinv


def prediction_variance(fit: FitResult, x):
    """``sigma^2 * grad' H^-1 grad`` with the gradient taken w.r.t. the parameters.

    Accepts one input vector (returns a float) or an (n, J) batch. A singular
    Hessian falls back to the pseudo-inverse and emits a RuntimeWarning.
    """
    x = np.asarray(x, dtype=float)
    v, pinv = _variance(fit, x)
    if pinv:
        warnings.warn(PINV_WARNING, RuntimeWarning, stacklevel=2)
    return float(v[0]) if x.ndim == 1 else v


def t_quantile(level: float, dof: int) -> float:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(stats.t.ppf(0.5 + level / 2.0, dof))


def _check_compatible(fit: FitResult, design: TransformedDesign) -> None:
    if fit.J != design.J or list(fit.column_names[: fit.J]) != design.input_names:
        raise InputError(
            f"fit inputs {fit.column_names[: fit.J]} do not match design inputs {design.input_names}"
        )


def _held_point(design: TransformedDesign) -> np.ndarray:
    if design.has_constant:
        return design.input_means
    return np.zeros(design.J)


def default_grid(design: TransformedDesign, varied: int, points: int = 101) -> np.ndarray:
    """Evenly spaced grid over the 1st to 99th percentile of a transformed input."""
    lo, hi = np.percentile(design.inputs[:, varied], [1.0, 99.0])
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, points)


def _curve(fit, points, grid, level, **kw) -> MarginalCurve:
    fitted = np.asarray(fit.predict(points), dtype=float)
    var, pinv = _variance(fit, points)
    half = t_quantile(level, fit.n - fit.df) * np.sqrt(var)
    return MarginalCurve(
        grid=np.asarray(grid, dtype=float),
        points=points,
        fitted=fitted,
        lower=fitted - half,
        upper=fitted + half,
        level=level,
        warnings=[PINV_WARNING] if pinv else [],
        **kw,
    )


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise InputError("grid must be nonempty")
    if np.any(np.diff(grid) <= 0):
        raise InputError("grid must be strictly increasing")
    return grid


def marginal_curve(
    fit: FitResult,
    design: TransformedDesign,
    varied: int,
    grid: Sequence[float] | None = None,
    level: float = 0.95,
) -> MarginalCurve:
    """Marginal effect at the mean of input `varied` with pointwise intervals."""
    _check_compatible(fit, design)
    if not 0 <= varied < design.J:
        raise InputError(f"varied index {varied} outside 0..{design.J - 1}")
    grid = default_grid(design, varied) if grid is None else _check_grid(grid)
    points = np.tile(_held_point(design), (grid.size, 1))
    points[:, varied] = grid
    return _curve(fit, points, grid, level, varied=varied, label=design.input_names[varied])


def interaction_curve(
    fit: FitResult,
    design: TransformedDesign,
    direction: Sequence[float],
    grid: Sequence[float] | None = None,
    level: float = 0.95,
) -> MarginalCurve:
    """Fitted response along a line through the mean in direction `d`.

    The grid value s is the coordinate along `d`: points are
    ``mean + (s - s0) * d`` with ``s0 = mean.d / d.d``, so a unit vector on
    input j reproduces :func:`marginal_curve` for j.
    """
    _check_compatible(fit, design)
    d = np.asarray(direction, dtype=float)
    if d.shape != (design.J,):
        raise InputError(f"direction must have length J={design.J}")
    if not np.any(d):
        raise InputError("direction must be nonzero")
    base = _held_point(design)
    s0 = base @ d / (d @ d)
    if grid is None:
        s = design.inputs @ d / (d @ d)
        lo, hi = np.percentile(s, [1.0, 99.0])
        grid = np.linspace(lo, hi if hi > lo else lo + 1.0, 101)
    grid = _check_grid(grid)
    points = base + (grid[:, None] - s0) * d
    return _curve(fit, points, grid, level, direction=d, label="direction " + ",".join(f"{v:g}" for v in d))


def contour_grid(
    fit: FitResult,
    design: TransformedDesign,
    inputs: tuple[int, int],
    grid_i: Sequence[float],
    grid_j: Sequence[float],
) -> np.ndarray:
    """Fitted values on the Cartesian grid of inputs (i, j); entry [a, b] is at
    ``(grid_i[a], grid_j[b])`` with every other input held at its mean."""
    _check_compatible(fit, design)
    i, j = inputs
    if i == j:
        raise InputError("contour inputs must differ")
    gi = np.asarray(grid_i, dtype=float).ravel()
    gj = np.asarray(grid_j, dtype=float).ravel()
    points = np.tile(_held_point(design), (gi.size * gj.size, 1))
    points[:, i] = np.repeat(gi, gj.size)
    points[:, j] = np.tile(gj, gi.size)
    return np.asarray(fit.predict(points), dtype=float).reshape(gi.size, gj.size)


def location_curve(
    fit: FitResult,
    design: TransformedDesign,
    region: RegionMeta,
    varied: int,
    grid: Sequence[float] | None = None,
    level: float = 0.95,
) -> MarginalCurve:
    """Marginal curve with the coordinate inputs pinned to a region's centroid."""
    _check_compatible(fit, design)
    loc = design.location_index
    if loc is None or not fit.fe_spec.include_location_inputs:
        raise InputError("fit was estimated without location inputs")
    if varied in loc:
        raise InputError("the varied input must be a moment, not a coordinate")
    if not 0 <= varied < design.J:
        raise InputError(f"varied index {varied} outside 0..{design.J - 1}")
    raw = design.raw_X.mean(axis=0)
    raw[list(loc)] = (region.latitude, region.longitude)
    held = _held_point(design)
    held[list(loc)] = design.transform_inputs(raw)[list(loc)]
    grid = default_grid(design, varied) if grid is None else _check_grid(grid)
    points = np.tile(held, (grid.size, 1))
    points[:, varied] = grid
    return _curve(fit, points, grid, level, varied=varied, label=f"{design.input_names[varied]} at {region.region_id}")


def scenario_uniform_shift(
    fit: FitResult,
    design: TransformedDesign,
    shift: Sequence[float],
    features=None,
) -> ScenarioResult:
    """Per-region mean change in the fitted response when every moment input
    moves by `shift`.

    The shift is added in the transformed input space (coordinates are left
    untouched), so a uniform change is not absorbed by year demeaning.
    Regions are listed in sorted order.
    """
    _check_compatible(fit, design)
    shift = np.asarray(shift, dtype=float).ravel()
    if shift.size != design.K:
        raise InputError(f"shift has {shift.size} entries, the model has K={design.K} moment inputs")
    if features is not None and features and features[0].K != design.K:
        raise InputError("features K differs from the fitted design")
    full = np.zeros(design.J)
    full[: design.K] = shift
    X = design.inputs
    base = np.asarray(fit.predict(X), dtype=float)
    moved = np.asarray(fit.predict(X + full), dtype=float)

    regions, idx = np.unique(design.region_ids.astype(str), return_inverse=True)
    counts = np.bincount(idx)
    return ScenarioResult(
        region_ids=[str(r) for r in regions],
        baseline=np.bincount(idx, weights=base) / counts,
        scenario=np.bincount(idx, weights=moved) / counts,
        shift=shift,
    )


def write_curve_csv(curve: MarginalCurve, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_value", "fit", "lower", "upper"])
        for row in zip(curve.grid, curve.fitted, curve.lower, curve.upper):
            w.writerow([repr(float(v)) for v in row])


def write_contour_csv(values: np.ndarray, grid_i, grid_j, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_i", "x_j", "fit"])
        for a, xi in enumerate(grid_i):
            for b, xj in enumerate(grid_j):
                w.writerow([repr(float(xi)), repr(float(xj)), repr(float(values[a, b]))])


def write_curve_svg(curve: MarginalCurve, path, xlabel: str | None = None, ylabel: str = "fitted response") -> None:
    """Line plot of a curve and its band in a fixed 800x600 viewBox."""
    W, H, m = 800, 600, 70
    x = curve.grid
    ys = np.concatenate([curve.lower, curve.upper, curve.fitted])
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return m + (v - x0) / (x1 - x0) * (W - 2 * m)

    def py(v):
        return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

    def path_of(yv):
        return " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, yv))

    xlabel = xlabel or curve.label or "input"
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{m}" y1="{H - m}" x2="{W - m}" y2="{H - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{H - m}" stroke="black"/>',
        f'<polyline points="{path_of(curve.lower)}" fill="none" stroke="grey" stroke-dasharray="6,4"/>',
        f'<polyline points="{path_of(curve.upper)}" fill="none" stroke="grey" stroke-dasharray="6,4"/>',
        f'<polyline points="{path_of(curve.fitted)}" fill="none" stroke="black" stroke-width="2"/>',
        f'<text x="{W / 2}" y="{H - 20}" text-anchor="middle">{_escape(xlabel)}</text>',
        f'<text x="20" y="{H / 2}" text-anchor="middle" transform="rotate(-90 20 {H / 2})">{_escape(ylabel)}</text>',
        f'<text x="{m}" y="{H - m + 18}" text-anchor="middle">{x0:.3g}</text>',
        f'<text x="{W - m}" y="{H - m + 18}" text-anchor="middle">{x1:.3g}</text>',
        f'<text x="{m - 6}" y="{H - m}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{m - 6}" y="{m}" text-anchor="end">{y1:.3g}</text>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(svg) + "\n")


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
