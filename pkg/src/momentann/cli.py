"""Batch command line: ``momentann {synth,ingest,fit,select,margins,scenario}``.

Settings are resolved in increasing precedence from built-in defaults, a
JSON file given by ``--config``, ``MOMENTANN_<FIELD>`` environment
variables and command-line flags. Exit codes: 0 success, 1 numerical
failure, 2 input or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import InputError, NumericalError
from .estimator import FitOptions, FitResult, fit_linear, fit_slfn, load_fit, select_model, write_selection_csv
from .inference import (
    contour_grid,
    default_grid,
    interaction_curve,
    location_curve,
    marginal_curve,
    scenario_uniform_shift,
    write_contour_csv,
    write_curve_csv,
    write_curve_svg,
)
from .moments import MomentFeatures, build_features, read_features_csv, read_temps_csv, write_features_csv
from .panel import apply_filters, read_panel_csv
from .synth import make_fixture, write_fixture
from .within import FESpec, assemble_design, residual_sum_diagnostics, within_transform, write_design_csv

ENV_PREFIX = "MOMENTANN_"


@dataclass
class RunConfig:
    # inputs
    gva: str | None = None
    regions: str | None = None
    temps: str | None = None
    features: str | None = None
    fit: str | None = None
    # ingestion
    max_abs_growth: float = 10.0
    min_periods: int = 5
    min_days: int = 300
    # model
    model: str = "slfn"
    fe: str = "time"
    K: int = 2
    location: bool = False
    H: int = 3
    H_list: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    criterion: str = "bic"
    twoway_method: str = "iterate"
    # fit options
    restarts: int = 20
    seed: int = 0
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-8
    function_tolerance: float = 1e-8
    init_scale: float = 1.0
    hessian_mode: str = "gauss_newton"
    # margins / scenario
    margin_inputs: list = field(default_factory=list)
    direction: list = field(default_factory=list)
    contour: list = field(default_factory=list)
    location_regions: list = field(default_factory=list)
    grid_points: int = 101
    level: float = 0.95
    svg: bool = False
    shift: list = field(default_factory=list)
    export_design: bool = False
    # synth
    synth_kind: str = "linear"
    synth_regions: int = 12
    synth_years: int = 8
    synth_noise: float = 0.5
    synth_effects: str = "twoway"
    # output
    out: str = "out"

    def fit_options(self) -> FitOptions:
        return FitOptions(
            restarts=self.restarts,
            seed=self.seed,
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            step_tolerance=self.step_tolerance,
            function_tolerance=self.function_tolerance,
            init_scale=self.init_scale,
            hessian_mode=self.hessian_mode,
        )


FIELD_HELP = {
    "gva": "growth CSV (region_id,year,growth)",
    "regions": "region CSV (region_id,lat,lon)",
    "temps": "daily temperature CSV (region_id,date,tmean)",
    "features": "moment features CSV (region_id,year,m1..mK)",
    "fit": "fit.json produced by `fit` or `select`",
    "max_abs_growth": "drop observations with |growth| >= this",
    "min_periods": "drop regions with fewer surviving observations",
    "min_days": "minimum daily values for a (region, year) group",
    "model": "linear or slfn",
    "fe": "pooled, region, time or twoway",
    "K": "number of moments",
    "location": "add centroid lat/lon inputs (pooled or time only)",
    "H": "hidden units for `fit`",
    "H_list": "candidate hidden-unit counts for `select`, comma separated",
    "criterion": "aic or bic",
    "twoway_method": "iterate or single_pass",
    "restarts": "random restarts per network fit",
    "max_iterations": "Levenberg-Marquardt iteration cap",
    "hessian_mode": "gauss_newton or finite_difference",
    "margin_inputs": "input names for marginal curves, comma separated (default: all moments)",
    "direction": "interaction direction over all inputs, comma separated",
    "contour": "two input names for a contour grid, comma separated",
    "location_regions": "region ids for location-specific curves",
    "grid_points": "points per curve",
    "level": "confidence level",
    "svg": "also write SVG plots",
    "shift": "scenario shift over the K moments, e.g. 2,0",
    "export_design": "write the transformed design as CSV",
}


def _coerce(name: str, value):
    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, list):
        items = value if isinstance(value, list) else [v for v in str(value).split(",") if v.strip()]
        try:
            if name == "H_list":
                return [int(v) for v in items]
            if name in ("direction", "shift"):
                return [float(v) for v in items]
        except ValueError:
            raise InputError(f"bad value for {name}: {value!r}") from None
        return [str(v).strip() for v in items]
    if value is None:
        return None
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise InputError(f"bad value for {name}: {value!r}") from None
    return str(value)


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = asdict(RunConfig())
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"missing input: config file {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path.name} is not valid JSON: {exc}") from None
        unknown = set(raw) - set(values)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        base = path.parent
        for k, v in raw.items():
            values[k] = _coerce(k, v)
            if k in ("gva", "regions", "temps", "features", "fit", "out") and v is not None:
                values[k] = str((base / v) if not Path(v).is_absolute() else Path(v))
    for name in values:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _coerce(name, env)
    for name in values:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = _coerce(name, v)
    cfg = RunConfig(**values)
    try:
        FESpec(cfg.fe, cfg.location)
        if cfg.model not in ("linear", "slfn"):
            raise InputError("model must be 'linear' or 'slfn'")
        if cfg.criterion not in ("aic", "bic"):
            raise InputError("criterion must be 'aic' or 'bic'")
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return cfg


# -- helpers --


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: RunConfig, command: str, inputs: list, outputs: list, out: Path) -> None:
    cfg_json = json.dumps(asdict(cfg), sort_keys=True)
    _write_json(
        out / f"manifest_{command}.json",
        {
            "command": command,
            "config": asdict(cfg),
            "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
            "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).exists()},
            "outputs": sorted(str(Path(p).name) for p in outputs),
            "versions": {
                "momentann": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        },
    )


def _need(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if not value:
            raise InputError(f"missing input: --{name.replace('_', '-')} not given")
        if not Path(value).exists():
            raise InputError(f"missing input: {value}")


def _features(cfg: RunConfig):
    if cfg.features:
        _need(cfg, "features")
        feats = read_features_csv(cfg.features)
        if feats[0].K < cfg.K:
            raise InputError(f"features file has K={feats[0].K} < requested K={cfg.K}")
        if feats[0].K > cfg.K:
            feats = [MomentFeatures(f.region_id, f.year, f.m[: cfg.K]) for f in feats]
        return feats, [cfg.features]
    if cfg.temps:
        _need(cfg, "temps")
        feats, _ = build_features(read_temps_csv(cfg.temps), cfg.K, cfg.min_days)
        return feats, [cfg.temps]
    raise InputError("missing input: give --features or --temps")


def _pipeline_settings(cfg: RunConfig) -> dict:
    return {
        "max_abs_growth": cfg.max_abs_growth,
        "min_periods": cfg.min_periods,
        "min_days": cfg.min_days,
        "fe": cfg.fe,
        "K": cfg.K,
        "location": cfg.location,
        "twoway_method": cfg.twoway_method,
    }


def _build_design(cfg: RunConfig):
    _need(cfg, "gva", "regions")
    panel = read_panel_csv(cfg.gva, cfg.regions)
    panel, filt = apply_filters(panel, cfg.max_abs_growth, cfg.min_periods)
    feats, feat_inputs = _features(cfg)
    spec = FESpec(cfg.fe, cfg.location)
    raw = assemble_design(panel, feats, spec)
    design = within_transform(raw, spec, twoway_method=cfg.twoway_method)
    info = {"filter_report": filt.to_dict(), "design_report": raw.report, "sweeps": design.sweeps}
    return panel, design, info, [cfg.gva, cfg.regions] + feat_inputs


def _apply_fit_pipeline(cfg: RunConfig, fit: FitResult) -> RunConfig:
    settings = fit.diagnostics.get("pipeline", {})
    for k, v in settings.items():
        setattr(cfg, k, v)
    return cfg


def _finish_fit(fit: FitResult, design, cfg: RunConfig, info: dict) -> dict:
    resid = design.y - np.asarray(fit.predict(design.inputs))
    diag = residual_sum_diagnostics(resid, design.region_ids, design.years, design.fe_spec)
    fit.diagnostics.update(pipeline=_pipeline_settings(cfg), residual_sums=diag, R=design.R, T=design.T)
    return {**info, "residual_sums": diag, "warnings": list(fit.warnings), "R": design.R, "T": design.T, "n": design.n}


# -- commands --


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    fx = make_fixture(cfg.synth_kind, cfg.synth_regions, cfg.synth_years, cfg.seed, cfg.synth_noise, cfg.synth_effects)
    paths = write_fixture(fx, out)
    _manifest(cfg, "synth", [], list(paths.values()), out)
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    _need(cfg, "temps")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    feats, report = build_features(read_temps_csv(cfg.temps), cfg.K, cfg.min_days)
    write_features_csv(feats, out / "features.csv")
    report.to_json(out / "ingest_report.json")
    _manifest(cfg, "ingest", [cfg.temps], [out / "features.csv", out / "ingest_report.json"], out)
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    _, design, info, inputs = _build_design(cfg)
    out.mkdir(parents=True, exist_ok=True)
    fit = fit_linear(design) if cfg.model == "linear" else fit_slfn(design, cfg.H, cfg.fit_options())
    diagnostics = _finish_fit(fit, design, cfg, info)
    fit.save(out / "fit.json")
    _write_json(out / "diagnostics.json", diagnostics)
    outputs = [out / "fit.json", out / "diagnostics.json"]
    if cfg.export_design:
        write_design_csv(design, out / "design.csv")
        outputs.append(out / "design.csv")
    _manifest(cfg, "fit", inputs, outputs, out)
    return 0


def cmd_select(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if not cfg.H_list:
        raise InputError("H_list must be nonempty")
    _, design, info, inputs = _build_design(cfg)
    out.mkdir(parents=True, exist_ok=True)
    best, table = select_model(design, cfg.H_list, cfg.criterion, cfg.fit_options())
    write_selection_csv(table, out / "selection.csv")
    fit = next(c.fit for c in table if c.H == best)
    diagnostics = _finish_fit(fit, design, cfg, info)
    diagnostics["selection"] = {"criterion": cfg.criterion, "best_H": best,
                                "failed": {c.H: c.error for c in table if c.fit is None}}
    fit.save(out / "fit.json")
    _write_json(out / "diagnostics.json", diagnostics)
    _manifest(cfg, "select", inputs, [out / "selection.csv", out / "fit.json", out / "diagnostics.json"], out)
    return 0


def _load_fit_and_design(cfg: RunConfig):
    _need(cfg, "fit")
    fit = load_fit(cfg.fit)
    cfg = _apply_fit_pipeline(cfg, fit)
    panel, design, _, inputs = _build_design(cfg)
    if design.J != fit.J or design.input_names != fit.column_names[: fit.J]:
        raise InputError(f"fit/config mismatch: fit has J={fit.J} {fit.column_names[: fit.J]}, data give J={design.J}")
    return fit, panel, design, inputs + [cfg.fit]


def _input_index(design, name: str) -> int:
    if name not in design.input_names:
        raise InputError(f"unknown input {name!r}; available: {design.input_names}")
    return design.input_names.index(name)


def cmd_margins(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    fit, panel, design, inputs = _load_fit_and_design(cfg)
    out.mkdir(parents=True, exist_ok=True)
    outputs, warn = [], set()
    names = cfg.margin_inputs or design.input_names[: design.K]
    for name in names:
        j = _input_index(design, name)
        curve = marginal_curve(fit, design, j, default_grid(design, j, cfg.grid_points), cfg.level)
        warn.update(curve.warnings)
        path = out / f"margins_{name}.csv"
        write_curve_csv(curve, path)
        outputs.append(path)
        if cfg.svg:
            write_curve_svg(curve, out / f"margins_{name}.svg", xlabel=f"{name} (deviation from mean)")
            outputs.append(out / f"margins_{name}.svg")
    if cfg.direction:
        if len(cfg.direction) != design.J:
            raise InputError(f"direction needs {design.J} entries")
        curve = interaction_curve(fit, design, cfg.direction, None, cfg.level)
        warn.update(curve.warnings)
        write_curve_csv(curve, out / "margins_interaction.csv")
        outputs.append(out / "margins_interaction.csv")
        if cfg.svg:
            write_curve_svg(curve, out / "margins_interaction.svg", xlabel="step along direction")
            outputs.append(out / "margins_interaction.svg")
    if cfg.contour:
        if len(cfg.contour) != 2:
            raise InputError("contour needs exactly two input names")
        i, j = (_input_index(design, c) for c in cfg.contour)
        gi = default_grid(design, i, cfg.grid_points)
        gj = default_grid(design, j, cfg.grid_points)
        write_contour_csv(contour_grid(fit, design, (i, j), gi, gj), gi, gj, out / "contour.csv")
        outputs.append(out / "contour.csv")
    for rid in cfg.location_regions:
        try:
            region = panel.region(rid)
        except KeyError:
            raise InputError(f"unknown region {rid!r}") from None
        for name in names:
            j = _input_index(design, name)
            curve = location_curve(fit, design, region, j, default_grid(design, j, cfg.grid_points), cfg.level)
            warn.update(curve.warnings)
            path = out / f"margins_{name}_{rid}.csv"
            write_curve_csv(curve, path)
            outputs.append(path)
    _write_json(out / "margins_report.json", {"level": cfg.level, "warnings": sorted(warn),
                                              "files": [p.name for p in outputs]})
    outputs.append(out / "margins_report.json")
    _manifest(cfg, "margins", inputs, outputs, out)
    return 0


def cmd_scenario(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    fit, _, design, inputs = _load_fit_and_design(cfg)
    if not cfg.shift:
        raise InputError("scenario needs --shift")
    result = scenario_uniform_shift(fit, design, cfg.shift)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "scenario.csv")
    _manifest(cfg, "scenario", inputs, [out / "scenario.csv"], out)
    return 0


COMMANDS = {
    "synth": (cmd_synth, "write a synthetic fixture with known ground truth"),
    "ingest": (cmd_ingest, "daily temperatures -> annual moment features"),
    "fit": (cmd_fit, "fit one linear or network model"),
    "select": (cmd_select, "fit several H and keep the AIC/BIC optimum"),
    "margins": (cmd_margins, "marginal-effect curves with pointwise intervals"),
    "scenario": (cmd_scenario, "per-region effect of a uniform moment shift"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="momentann",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = RunConfig()
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        for f in fields(RunConfig):
            default = getattr(defaults, f.name)
            flag = "--" + f.name.replace("_", "-")
            kw = {"dest": f.name, "default": None, "help": FIELD_HELP.get(f.name, f.name.replace("_", " "))}
            if isinstance(default, bool):
                kw["help"] += " (default: off)"
                p.add_argument(flag, action="store_const", const=True, **kw)
            else:
                kw["help"] += f" (default: {','.join(map(str, default)) if isinstance(default, list) else default})"
                p.add_argument(flag, **kw)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command][0](cfg)
    except InputError as exc:
        print(json.dumps({"error": str(exc), "type": "input"}), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(json.dumps({"error": str(exc), "type": "numerical"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
