"""Single-hidden-layer feedforward network with logistic hidden units and a
linear output neuron without bias.

    f(x) = sum_h theta1[h] * logistic(sum_j theta0[h, j] * x[j] (+ theta0[h, J]))

The optional trailing column of ``theta0`` is a hidden-unit bias (pooled
models only). The flat parameter vector is ``theta0`` in row-major (h-major)
order followed by ``theta1``; this layout is public so that Hessians and
serialized fits are portable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SlfnSpec",
    "SlfnParams",
    "logistic",
    "forward",
    "grad_params",
    "hidden_activations",
    "jacobian_from_hidden",
    "grad_input",
    "check_fully_connected",
]


def logistic(z):
    """Logistic function via ``(1 + tanh(z/2)) / 2``, which cannot overflow."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class SlfnSpec:
    J: int
    H: int
    hidden_bias: bool = False

    def __post_init__(self):
        if self.J < 1 or self.H < 1:
            raise ValueError("J and H must be >= 1")

    @property
    def n_inputs_per_unit(self) -> int:
        return self.J + int(self.hidden_bias)

    @property
    def n_params(self) -> int:
        return (self.n_inputs_per_unit + 1) * self.H


@dataclass
class SlfnParams:
    theta0: np.ndarray  # (H, J) or (H, J + 1) with the bias last
    theta1: np.ndarray  # (H,)
    hidden_bias: bool = False

    def __post_init__(self):
        self.theta0 = np.atleast_2d(np.asarray(self.theta0, dtype=float))
        self.theta1 = np.asarray(self.theta1, dtype=float).reshape(-1)
        if self.theta0.shape[0] != self.theta1.shape[0]:
            raise ValueError("theta0 rows must match len(theta1)")
        if self.hidden_bias and self.theta0.shape[1] < 2:
            raise ValueError("theta0 needs at least one weight plus the bias column")

    @property
    def spec(self) -> SlfnSpec:
        return SlfnSpec(self.theta0.shape[1] - int(self.hidden_bias), self.theta0.shape[0], self.hidden_bias)

    @property
    def J(self) -> int:
        return self.spec.J

    @property
    def H(self) -> int:
        return self.theta1.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.theta0[:, : self.J]

    @property
    def bias(self) -> np.ndarray:
        if self.hidden_bias:
            return self.theta0[:, -1]
        return np.zeros(self.H)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta0.ravel(), self.theta1])

    @classmethod
    def from_flat(cls, spec: SlfnSpec, flat) -> "SlfnParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got {flat.shape}")
        k = spec.H * spec.n_inputs_per_unit
        return cls(flat[:k].reshape(spec.H, spec.n_inputs_per_unit), flat[k:].copy(), spec.hidden_bias)

    @classmethod
    def zeros(cls, spec: SlfnSpec) -> "SlfnParams":
        return cls.from_flat(spec, np.zeros(spec.n_params))

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "H": self.H,
            "hidden_bias": self.hidden_bias,
            "theta0": self.theta0.tolist(),
            "theta1": self.theta1.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlfnParams":
        p = cls(np.array(d["theta0"], dtype=float), np.array(d["theta1"], dtype=float), bool(d["hidden_bias"]))
        if p.J != d["J"] or p.H != d["H"]:
            raise ValueError("serialized J/H disagree with the weight arrays")
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SlfnParams":
        return cls.from_dict(json.loads(text))


def _as_rows(params: SlfnParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.J:
        raise ValueError(f"input dimension {X.shape[-1]} does not match J={params.J}")
    return X, single


def _hidden(params: SlfnParams, X: np.ndarray) -> np.ndarray:
    return logistic(X @ params.weights.T + params.bias)


def forward(params: SlfnParams, x):
    """Network output for one input vector (scalar) or an (n, J) batch."""
    X, single = _as_rows(params, x)
    out = _hidden(params, X) @ params.theta1
    return float(out[0]) if single else out


def grad_params(params: SlfnParams, x) -> np.ndarray:
    """Gradient of the output with respect to the flat parameter vector.

    For a batch this is the (n, P) Jacobian, one row per input.
    """
    X, single = _as_rows(params, x)
    G = _jacobian(params, X, _hidden(params, X))
    return G[0] if single else G


def _jacobian(params: SlfnParams, X: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # filled parameter-major so every write is contiguous; returned as an (n, P) view
    n, H = phi.shape
    J, width = params.J, params.theta0.shape[1]
    GT = np.empty((H * width + H, n))
    deltaT = (phi * (1.0 - phi) * params.theta1).T
    block = GT[: H * width].reshape(H, width, n)
    np.multiply(deltaT[:, None, :], X.T[None, :, :], out=block[:, :J, :])
    if params.hidden_bias:
        block[:, J, :] = deltaT
    GT[H * width :] = phi.T
    return GT.T


def hidden_activations(params: SlfnParams, X: np.ndarray) -> np.ndarray:
    """Hidden-layer outputs for an (n, J) batch, shape (n, H)."""
    X, _ = _as_rows(params, X)
    return _hidden(params, X)


def jacobian_from_hidden(params: SlfnParams, X: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """(n, P) parameter Jacobian reusing hidden activations from :func:`hidden_activations`."""
    return _jacobian(params, X, phi)


def grad_input(params: SlfnParams, x) -> np.ndarray:
    """Gradient of the output with respect to the inputs, shape (J,) or (n, J)."""
    X, single = _as_rows(params, x)
    phi = _hidden(params, X)
    G = (phi * (1.0 - phi) * params.theta1) @ params.weights
    return G[0] if single else G


def check_fully_connected(params: SlfnParams, tol: float = 1e-8) -> list[int]:
    """Zero-based indices of hidden units whose output weight satisfies ``|theta1| < tol``."""
    return [int(h) for h in np.flatnonzero(np.abs(params.theta1) < tol)]
