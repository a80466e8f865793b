"""
A nonlinear temperature response
================================

Synthetic regions get a year of daily temperatures each; growth depends on
the annual mean and variance through a small network. We rebuild the
moments, pick the number of hidden units by BIC and trace the fitted
response with pointwise 95% bands.
"""

import tempfile
from pathlib import Path

import numpy as np

from momentann import FitOptions, FESpec, apply_filters, assemble_design, build_features, within_transform
from momentann import marginal_curve, scenario_uniform_shift, select_model
from momentann.inference import write_curve_svg
from momentann.panel import load_panel
from momentann.synth import make_fixture, truth_response

fx = make_fixture("slfn", R=40, T=12, seed=1, noise=0.3, effects="time")

# daily series -> (region, year) moments
features, report = build_features(fx["temps"], K=2)
print(f"{report.groups} region-years, {len(report.partial_years)} partial")

panel, filt = apply_filters(load_panel(fx["gva"], fx["regions"]))
spec = FESpec("time")
design = within_transform(assemble_design(panel, features, spec), spec)
print(f"n = {design.n}, R = {design.R}, T = {design.T}")

# candidate networks; failed fits stay in the table but are never chosen
best, table = select_model(design, [1, 2, 3, 4], "bic", FitOptions(restarts=10))
for c in table:
    print(f"H={c.H}  df={c.fit.df}  bic={c.fit.bic:9.2f}  sigma={c.fit.sigma_hat:.3f}")
fit = next(c.fit for c in table if c.H == best)
print("BIC picks H =", best)

# held inputs sit at zero, i.e. at their (demeaned) average
curve = marginal_curve(fit, design, 0)
i = np.argmin(np.abs(curve.grid))
print(f"at the mean: {curve.fitted[i]:.3f} [{curve.lower[i]:.3f}, {curve.upper[i]:.3f}]")

out = Path(tempfile.mkdtemp())
write_curve_svg(curve, out / "m1.svg", xlabel="m1 (deviation from mean)")
print("plot written to", out / "m1.svg")

# one degree warmer everywhere, compared with the generator
res = scenario_uniform_shift(fit, design, [1.0, 0.0])
m = np.array([f.m for f in features])
truth = truth_response(fx["truth"], m + [1.0, 0.0]) - truth_response(fx["truth"], m)
print(f"mean effect of +1 degree: fitted {res.delta.mean():.3f}, generator {truth.mean():.3f}")
