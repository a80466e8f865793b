"""Synthetic panels with known ground truth.

Daily temperatures follow a seasonal cycle whose level and amplitude vary
with latitude and from year to year; growth is a known function of the
annual moments plus optional region/year effects and Gaussian noise.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from pathlib import Path

import numpy as np

from .moments import moment_vector
from .slfn import SlfnParams, forward

__all__ = ["GENERATORS", "Fixture", "make_fixture", "truth_response", "write_fixture"]

GENERATORS = ("linear", "slfn")
EFFECTS = ("none", "region", "time", "twoway")

# ground-truth network on standardized moments (pooled form, with hidden biases)
_SLFN_THETA0 = [[-1.2, 0.8, 0.3], [0.9, 1.1, -0.4]]
_SLFN_THETA1 = [-3.0, 2.5]


class Fixture(dict):
    """Plain dict with keys ``regions``, ``gva``, ``temps`` (lists of CSV
    records) and ``truth`` (JSON-serialisable ground truth)."""


def truth_response(truth: dict, m) -> np.ndarray:
    """Noise-free, effect-free generator response at raw moment vectors `m`."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if truth["kind"] == "linear":
        return truth["intercept"] + m @ np.asarray(truth["beta"])
    p = SlfnParams.from_dict(truth["params"])
    z = (m - np.asarray(truth["center"])) / np.asarray(truth["scale"])
    return forward(p, z)


def make_fixture(
    kind: str = "linear",
    R: int = 12,
    T: int = 8,
    seed: int = 0,
    noise: float = 0.5,
    effects: str = "twoway",
    first_year: int = 2000,
) -> Fixture:
    if kind not in GENERATORS:
        raise ValueError(f"kind must be one of {GENERATORS}")
    if effects not in EFFECTS:
        raise ValueError(f"effects must be one of {EFFECTS}")
    rng = np.random.default_rng(seed)
    ids = [f"R{r:03d}" for r in range(R)]
    lat = rng.uniform(36.0, 66.0, R)
    lon = rng.uniform(-10.0, 30.0, R)
    level = 22.0 - 0.45 * (lat - 36.0) + rng.normal(0.0, 1.0, R)
    amp = 5.0 + 0.15 * (lat - 36.0) + 0.05 * np.abs(lon) + rng.normal(0.0, 0.5, R)

    temps, m = [], np.empty((R, T, 2))
    for t in range(T):
        year = first_year + t
        start = dt.date(year, 1, 1)
        days = (dt.date(year + 1, 1, 1) - start).days
        season = -np.cos(2.0 * np.pi * (np.arange(days) - 15.0) / days)
        year_shift = rng.normal(0.0, 0.6)
        for r in range(R):
            a = level[r] + year_shift + rng.normal(0.0, 0.7)
            b = amp[r] * (1.0 + rng.normal(0.0, 0.12))
            x = np.round(a + b * season + rng.normal(0.0, 2.0, days), 2)
            m[r, t] = moment_vector(x, 2)
            temps.extend(
                {"region_id": ids[r], "date": (start + dt.timedelta(days=d)).isoformat(), "tmean": f"{x[d]:.2f}"}
                for d in range(days)
            )

    flat = m.reshape(-1, 2)
    if kind == "linear":
        beta = np.array([-0.35, 0.03])
        truth = {"kind": "linear", "beta": beta.tolist(), "intercept": float(-flat.mean(axis=0) @ beta)}
    else:
        center, scale = flat.mean(axis=0), flat.std(axis=0)
        params = SlfnParams(np.array(_SLFN_THETA0), np.array(_SLFN_THETA1), hidden_bias=True)
        truth = {"kind": "slfn", "params": params.to_dict(), "center": center.tolist(), "scale": scale.tolist()}
    f = truth_response(truth, flat).reshape(R, T)

    alpha = rng.normal(0.0, 0.8, R) if effects in ("region", "twoway") else np.zeros(R)
    mu = rng.normal(0.0, 1.0, T) if effects in ("time", "twoway") else np.zeros(T)
    y = f + alpha[:, None] + mu[None, :] + rng.normal(0.0, noise, (R, T))
    truth.update(effects=effects, noise=noise, alpha=alpha.tolist(), mu=mu.tolist(), seed=seed)

    gva = [
        {"region_id": ids[r], "year": first_year + t, "growth": repr(float(y[r, t]))}
        for r in range(R)
        for t in range(T)
    ]
    regions = [
        {"region_id": ids[r], "lat": repr(round(float(lat[r]), 4)), "lon": repr(round(float(lon[r]), 4))}
        for r in range(R)
    ]
    return Fixture(regions=regions, gva=gva, temps=temps, truth=truth)


def write_fixture(fixture: Fixture, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "regions": out / "regions.csv",
        "gva": out / "gva.csv",
        "temps": out / "temps.csv",
        "truth": out / "truth.json",
    }
    for key, header in (
        ("regions", ["region_id", "lat", "lon"]),
        ("gva", ["region_id", "year", "growth"]),
        ("temps", ["region_id", "date", "tmean"]),
    ):
        with paths[key].open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
            w.writeheader()
            w.writerows(fixture[key])
    paths["truth"].write_text(json.dumps(fixture["truth"], indent=2) + "\n")
    return paths
