"""Least-squares estimation of linear and network regression functions on a
within-transformed design, with df bookkeeping and information criteria."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lm import levenberg_marquardt
from .errors import ConvergenceError, InputError, NumericalError, RankDeficiencyError
from .slfn import (
    SlfnParams,
    SlfnSpec,
    check_fully_connected,
    forward,
    grad_input,
    grad_params,
    hidden_activations,
    jacobian_from_hidden,
)
from .within import FESpec, TransformedDesign, fe_param_count

__all__ = [
    "FitOptions",
    "FitResult",
    "Candidate",
    "model_df",
    "information_criteria",
    "fit_linear",
    "fit_slfn",
    "hessian",
    "select_model",
    "best_candidate",
    "write_selection_csv",
    "load_fit",
]

HESSIAN_MODES = ("gauss_newton", "finite_difference")
# min/max eigenvalue ratio below which the Hessian is treated as singular
SINGULAR_RCOND = 1e-12


@dataclass
class FitOptions:
    restarts: int = 20
    seed: int = 0
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-8
    function_tolerance: float = 1e-8
    init_scale: float = 1.0
    hessian_mode: str = "gauss_newton"
    fully_connected_tol: float = 1e-8

    def __post_init__(self):
        if self.restarts < 1:
            raise InputError("restarts must be >= 1")
        if min(self.gradient_tolerance, self.step_tolerance, self.function_tolerance) <= 0:
            raise InputError("tolerances must be positive")
        if self.hessian_mode not in HESSIAN_MODES:
            raise InputError(f"hessian_mode must be one of {HESSIAN_MODES}")


def model_df(kind: str, fe_kind: str, J: int, H: int = 0, R: int = 0, T: int = 0) -> int:
    """Mean-function parameter count including the fixed effects.

    Linear models count J slopes (+1 intercept when pooled). Networks count
    (J+1)H weights, or (J+2)H when pooled because every hidden unit then
    carries a bias.
    """
    fe = fe_param_count(fe_kind, R, T)
    pooled = fe_kind == "pooled"
    if kind == "linear":
        return J + fe + int(pooled)
    if kind == "slfn":
        if H < 1:
            raise ValueError("H must be >= 1 for a network")
        return SlfnSpec(J, H, hidden_bias=pooled).n_params + fe
    raise ValueError(f"unknown model kind {kind!r}")


def information_criteria(sse: float, n: int, df: int) -> tuple[float, float]:
    """Gaussian AIC and BIC with the error variance profiled out.

    ``-2 loglik = n * ln(2*pi*SSE/n) + n``; the penalty counts `df`
    mean-function parameters. A zero SSE leaves the criteria undefined and
    returns ``(-inf, -inf)`` with a warning.
    """
    if not n > df >= 1:
        raise ValueError(f"need n > df >= 1, got n={n}, df={df}")
    if sse < 0:
        raise ValueError("SSE must be non-negative")
    if sse == 0:
        warnings.warn("SSE is zero; information criteria are undefined", RuntimeWarning, stacklevel=2)
        return -math.inf, -math.inf
    base = n * math.log(2.0 * math.pi * sse / n) + n
    return base + 2.0 * df, base + math.log(n) * df


@dataclass
class FitResult:
    model: str
    fe_spec: FESpec
    column_names: list[str]
    J: int
    H: int | None
    params: np.ndarray | SlfnParams
    center: np.ndarray
    scale: np.ndarray
    sse: float
    n: int
    df: int
    sigma_hat: float
    aic: float
    bic: float
    hessian: np.ndarray
    hessian_mode: str = "gauss_newton"
    converged: bool = True
    ic_defined: bool = True
    restarts: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    # -- evaluation in the transformed (unstandardized) input space --

    @property
    def has_constant(self) -> bool:
        return self.fe_spec.kind == "pooled"

    @property
    def n_params(self) -> int:
        return self.hessian.shape[0]

    def _rows(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.J:
            raise InputError(f"input has {X.shape[1]} columns, fit expects J={self.J}")
        return X, single

    def _design_rows(self, X: np.ndarray) -> np.ndarray:
        if self.has_constant:
            return np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def predict(self, x):
        X, single = self._rows(x)
        if self.model == "linear":
            out = self._design_rows(X) @ self.params
        else:
            out = forward(self.params, self.standardize(X))
        return float(out[0]) if single else out

    def param_gradient(self, x) -> np.ndarray:
        X, single = self._rows(x)
        if self.model == "linear":
            G = self._design_rows(X)
        else:
            G = grad_params(self.params, self.standardize(X))
        return G[0] if single else G

    def input_gradient(self, x) -> np.ndarray:
        X, single = self._rows(x)
        if self.model == "linear":
            G = np.tile(self.params[: self.J], (X.shape[0], 1))
        else:
            G = grad_input(self.params, self.standardize(X)) / self.scale
        return G[0] if single else G

    @property
    def flat_params(self) -> np.ndarray:
        return self.params if self.model == "linear" else self.params.flat

    def hessian_singular(self) -> bool:
        ev = np.linalg.eigvalsh(self.hessian)
        return not (ev[-1] > 0 and ev[0] > SINGULAR_RCOND * ev[-1])

    def hessian_inverse(self) -> tuple[np.ndarray, bool]:
        """Inverse Hessian, or its Moore-Penrose pseudo-inverse (flag True) when singular."""
        cached = self.__dict__.get("_hinv")
        if cached is None:
            if self.hessian_singular():
                cached = (np.linalg.pinv(self.hessian, hermitian=True), True)
            else:
                cached = (np.linalg.inv(self.hessian), False)
            self.__dict__["_hinv"] = cached
        return cached

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fe_spec": self.fe_spec.to_dict(),
            "column_names": list(self.column_names),
            "J": self.J,
            "H": self.H,
            "params": self.params.tolist() if self.model == "linear" else self.params.to_dict(),
            "standardization": {"center": self.center.tolist(), "scale": self.scale.tolist()},
            "sse": self.sse,
            "n": self.n,
            "df": self.df,
            "sigma_hat": self.sigma_hat,
            "aic": self.aic if self.ic_defined else None,
            "bic": self.bic if self.ic_defined else None,
            "ic_defined": self.ic_defined,
            "hessian_mode": self.hessian_mode,
            "hessian": self.hessian.tolist(),
            "converged": self.converged,
            "restart_summaries": self.restarts,
            "warnings": list(self.warnings),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        model = d["model"]
        params = np.array(d["params"], dtype=float) if model == "linear" else SlfnParams.from_dict(d["params"])
        ic = bool(d.get("ic_defined", True))
        return cls(
            model=model,
            fe_spec=FESpec(**d["fe_spec"]),
            column_names=list(d["column_names"]),
            J=int(d["J"]),
            H=d["H"],
            params=params,
            center=np.array(d["standardization"]["center"], dtype=float),
            scale=np.array(d["standardization"]["scale"], dtype=float),
            sse=float(d["sse"]),
            n=int(d["n"]),
            df=int(d["df"]),
            sigma_hat=float(d["sigma_hat"]),
            aic=float(d["aic"]) if ic else -math.inf,
            bic=float(d["bic"]) if ic else -math.inf,
            hessian=np.array(d["hessian"], dtype=float),
            hessian_mode=d.get("hessian_mode", "gauss_newton"),
            converged=bool(d["converged"]),
            ic_defined=ic,
            restarts=list(d.get("restart_summaries", [])),
            warnings=list(d.get("warnings", [])),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_fit(path) -> FitResult:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input: {path}")
    try:
        return FitResult.from_dict(json.loads(path.read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path.name}: not a valid fit file ({exc})") from None


def _summary_stats(sse: float, n: int, df: int) -> tuple[float, float, float, bool]:
    if n <= df:
        raise InputError(f"need more observations than parameters (n={n}, df={df})")
    sigma = math.sqrt(sse / (n - df))
    if sse == 0:
        return sigma, -math.inf, -math.inf, False
    aic, bic = information_criteria(sse, n, df)
    return sigma, aic, bic, True


def fit_linear(design: TransformedDesign) -> FitResult:
    """OLS on the transformed design; the Hessian is ``X'X``."""
    X, y = design.X, design.y
    df = model_df("linear", design.fe_spec.kind, design.J, R=design.R, T=design.T)
    if design.n <= df:
        raise InputError(f"need n > df (n={design.n}, df={df})")
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficiencyError(f"design has rank {rank} < {X.shape[1]} columns")
    resid = y - X @ beta
    sse = float(resid @ resid)
    sigma, aic, bic, ok = _summary_stats(sse, design.n, df)
    J = design.J
    return FitResult(
        model="linear",
        fe_spec=design.fe_spec,
        column_names=list(design.column_names),
        J=J,
        H=None,
        params=beta,
        center=np.zeros(J),
        scale=np.ones(J),
        sse=sse,
        n=design.n,
        df=df,
        sigma_hat=sigma,
        aic=aic,
        bic=bic,
        hessian=X.T @ X,
        ic_defined=ok,
        warnings=[] if ok else ["SSE is zero; information criteria undefined"],
    )


def _standardization(design: TransformedDesign) -> tuple[np.ndarray, np.ndarray]:
    Z = design.inputs
    if design.has_constant:
        center = Z.mean(axis=0)
    else:
        # demeaned columns already have mean zero; keep the network bias-free
        center = np.zeros(design.J)
    scale = np.sqrt(np.mean((Z - center) ** 2, axis=0))
    scale[scale == 0] = 1.0
    return center, scale


def _initial_params(spec: SlfnSpec, rng: np.random.Generator, init_scale: float) -> np.ndarray:
    w = rng.uniform(-init_scale, init_scale, size=(spec.H, spec.n_inputs_per_unit)) / math.sqrt(spec.n_inputs_per_unit)
    v = rng.uniform(-1.0, 1.0, size=spec.H) / math.sqrt(spec.H)
    return np.concatenate([w.ravel(), v])


def _run_restart(spec, Z, y, theta0, opts: FitOptions) -> dict:
    cache: dict = {}

    def resid(theta):
        p = SlfnParams.from_flat(spec, theta)
        phi = hidden_activations(p, Z)
        cache.update(theta=theta, params=p, phi=phi)
        return phi @ p.theta1 - y

    def jac(theta):
        if cache.get("theta") is theta:
            return jacobian_from_hidden(cache["params"], Z, cache["phi"])
        return grad_params(SlfnParams.from_flat(spec, theta), Z)

    start_sse = float(np.sum(resid(theta0) ** 2))
    with np.errstate(over="raise", invalid="raise"):
        try:
            sol = levenberg_marquardt(
                resid,
                jac,
                theta0,
                gtol=opts.gradient_tolerance,
                xtol=opts.step_tolerance,
                ftol=opts.function_tolerance,
                max_iter=opts.max_iterations,
            )
        except FloatingPointError as exc:
            return {"theta": None, "sse": math.inf, "start_sse": start_sse, "status": -1,
                    "iterations": 0, "converged": False, "message": f"numerical failure: {exc}"}
    ok = bool(sol.converged and np.all(np.isfinite(sol.x)) and math.isfinite(sol.sse))
    return {"theta": sol.x, "sse": sol.sse, "start_sse": start_sse, "status": sol.status,
            "iterations": sol.iterations, "converged": ok}


def fit_slfn(design: TransformedDesign, H: int, opts: FitOptions | None = None) -> FitResult:
    """Multi-start Levenberg-Marquardt fit of a network with H hidden units.

    Restart i is initialised from child i of ``SeedSequence(opts.seed)``, so
    adding restarts never changes the earlier ones. The best converged restart
    wins; ties on SSE go to the lowest restart index.
    """
    opts = opts or FitOptions()
    if H < 1:
        raise InputError("H must be >= 1")
    spec = SlfnSpec(design.J, H, hidden_bias=design.has_constant)
    df = model_df("slfn", design.fe_spec.kind, design.J, H, design.R, design.T)
    if design.n <= df:
        raise InputError(f"need n > df (n={design.n}, df={df})")

    center, scale = _standardization(design)
    Z = (design.inputs - center) / scale
    y = design.y

    summaries, best_i, best = [], None, None
    for i, child in enumerate(np.random.SeedSequence(opts.seed).spawn(opts.restarts)):
        rng = np.random.default_rng(child)
        out = _run_restart(spec, Z, y, _initial_params(spec, rng, opts.init_scale), opts)
        summaries.append({k: out[k] for k in ("sse", "start_sse", "status", "iterations", "converged")})
        if out["converged"] and (best is None or out["sse"] < best["sse"]):
            best_i, best = i, out
    if best is None:
        raise ConvergenceError(f"all {opts.restarts} restarts failed to converge (H={H})")

    params = SlfnParams.from_flat(spec, best["theta"])
    sse = best["sse"]
    sigma, aic, bic, ok = _summary_stats(sse, design.n, df)
    fit = FitResult(
        model="slfn",
        fe_spec=design.fe_spec,
        column_names=list(design.column_names),
        J=design.J,
        H=H,
        params=params,
        center=center,
        scale=scale,
        sse=sse,
        n=design.n,
        df=df,
        sigma_hat=sigma,
        aic=aic,
        bic=bic,
        hessian=np.zeros((spec.n_params, spec.n_params)),
        converged=True,
        ic_defined=ok,
        restarts=summaries,
        diagnostics={"best_restart": best_i},
    )
    if not ok:
        fit.warnings.append("SSE is zero; information criteria undefined")
    weak = check_fully_connected(params, opts.fully_connected_tol)
    if weak:
        fit.warnings.append(f"hidden units {weak} have |theta1| < {opts.fully_connected_tol}")
    fit.hessian = hessian(fit, design, opts.hessian_mode)
    fit.hessian_mode = opts.hessian_mode
    if fit.hessian_singular():
        fit.warnings.append("Hessian is numerically singular; inference uses the pseudo-inverse")
    return fit


def _half_sse_gradient(fit: FitResult, design: TransformedDesign, flat: np.ndarray) -> np.ndarray:
    if fit.model == "linear":
        return design.X.T @ (design.X @ flat - design.y)
    spec = fit.params.spec
    p = SlfnParams.from_flat(spec, flat)
    Z = fit.standardize(design.inputs)
    return grad_params(p, Z).T @ (forward(p, Z) - design.y)


def hessian(fit: FitResult, design: TransformedDesign, mode: str = "gauss_newton", step: float = 1e-5) -> np.ndarray:
    """Curvature of SSE/2 at the fitted parameters.

    ``gauss_newton`` is ``J'J`` for the residual Jacobian J (``X'X`` for
    linear models). ``finite_difference`` differences the analytic gradient
    of SSE/2 centrally and symmetrises the result.
    """
    if mode == "gauss_newton":
        G = design.X if fit.model == "linear" else fit.param_gradient(design.inputs)
        Hm = G.T @ G
    elif mode == "finite_difference":
        theta = np.array(fit.flat_params, dtype=float)
        P = theta.size
        Hm = np.empty((P, P))
        for p in range(P):
            h = step * max(1.0, abs(theta[p]))
            up, dn = theta.copy(), theta.copy()
            up[p] += h
            dn[p] -= h
            Hm[:, p] = (_half_sse_gradient(fit, design, up) - _half_sse_gradient(fit, design, dn)) / (2 * h)
    else:
        raise ValueError(f"unknown hessian mode {mode!r}")
    Hm = 0.5 * (Hm + Hm.T)
    if not np.all(np.isfinite(Hm)):
        raise NumericalError("non-finite Hessian")
    return Hm


@dataclass
class Candidate:
    H: int
    fit: FitResult | None = None
    error: str | None = None

    @property
    def usable(self) -> bool:
        return self.fit is not None and self.fit.converged and self.fit.ic_defined


def best_candidate(table: Sequence[Candidate], criterion: str = "bic") -> int:
    if criterion not in ("aic", "bic"):
        raise ValueError("criterion must be 'aic' or 'bic'")
    usable = [c for c in table if c.usable]
    if not usable:
        raise ConvergenceError("all candidate fits failed")
    return min(usable, key=lambda c: (getattr(c.fit, criterion), c.H)).H


def select_model(
    design: TransformedDesign,
    H_candidates: Sequence[int],
    criterion: str = "bic",
    opts: FitOptions | None = None,
) -> tuple[int, list[Candidate]]:
    """Fit every candidate H and return the criterion minimiser with the full table.

    Failed candidates are kept in the table with their error message and are
    never selected.
    """
    if not H_candidates:
        raise InputError("H_candidates must be nonempty")
    table = []
    for H in H_candidates:
        try:
            table.append(Candidate(H, fit_slfn(design, H, opts)))
        except (NumericalError, InputError) as exc:
            table.append(Candidate(H, error=str(exc)))
    return best_candidate(table, criterion), table


def write_selection_csv(table: Sequence[Candidate], path) -> None:
    lines = ["H,df,aic,bic,sigma_hat,converged"]
    for c in table:
        if c.fit is None:
            lines.append(f"{c.H},,,,,false")
        else:
            f = c.fit
            lines.append(f"{c.H},{f.df},{f.aic!r},{f.bic!r},{f.sigma_hat!r},{str(f.converged).lower()}")
    Path(path).write_text("\n".join(lines) + "\n")
