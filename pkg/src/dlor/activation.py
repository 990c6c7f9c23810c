"""Activation catalog with the expansion-point data used by the h-scaled constructions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoExpansionPoint, NonDifferentiablePoint

NAMES = ("softplus", "relu", "sigmoid", "tanh", "heaviside")
RELU_KINK_TOL = 1e-15


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, z) / (1.0 + z)


def _value(name, x):
    x = np.asarray(x, dtype=float)
    if name == "softplus":
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "heaviside":
        return np.where(x >= 0, 1.0, 0.0)
    raise ValueError(f"unknown activation {name!r}")


def _slope(name, x):
    x = np.asarray(x, dtype=float)
    if name == "softplus":
        return _sigmoid(x)
    if name == "sigmoid":
        s = _sigmoid(x)
        return s * (1.0 - s)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if name in ("relu", "heaviside"):
        if np.any(np.abs(x) <= RELU_KINK_TOL):
            raise NonDifferentiablePoint(f"{name} is not differentiable at 0")
        return np.where(x > 0, 1.0 if name == "relu" else 0.0, 0.0)
    raise ValueError(f"unknown activation {name!r}")


def default_expansion_point(name) -> float:
    if name in ("softplus", "sigmoid", "tanh"):
        return 0.5
    if name == "relu":
        # any c > 0 sits in the linear regime
        return 1.0
    if name == "heaviside":
        raise NoExpansionPoint("heaviside has no point with nonzero derivative")
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class ActivationSpec:
    name: str
    c: float
    rho_c: float
    drho_c: float
    differentiable_at_c: bool
    mean_periodic: bool = False

    def __call__(self, x):
        return eval_vec(self, x)

    def to_json(self) -> dict:
        return {"name": self.name, "c": self.c}

    @classmethod
    def from_json(cls, obj) -> "ActivationSpec":
        # rho_c / drho_c are always recomputed
        return make_activation(obj["name"], obj.get("c"))


def make_activation(name, c=None) -> ActivationSpec:
    if name not in NAMES:
        raise ValueError(f"unknown activation {name!r}; choose from {NAMES}")
    if name == "heaviside":
        c = 0.0 if c is None else float(c)
        return ActivationSpec(name, c, float(_value(name, c)), 0.0, False)
    c = default_expansion_point(name) if c is None else float(c)
    rho_c = float(_value(name, c))
    try:
        drho_c = float(_slope(name, c))
    except NonDifferentiablePoint:
        return ActivationSpec(name, c, rho_c, 0.0, False)
    return ActivationSpec(name, c, rho_c, drho_c, drho_c != 0.0)


def eval(spec: ActivationSpec, x: float) -> float:  # noqa: A001 - mirrors the public op name
    return float(_value(spec.name, x))


def eval_vec(spec: ActivationSpec, v):
    return _value(spec.name, v)


def deriv(spec: ActivationSpec, x):
    d = _slope(spec.name, x)
    return float(d) if np.ndim(d) == 0 else d


def require_expansion(spec: ActivationSpec) -> None:
    """Reject activations that cannot drive an h-scaled identity block."""
    if not spec.differentiable_at_c or spec.drho_c == 0.0:
        raise NoExpansionPoint(f"{spec.name} is not differentiable with nonzero slope at c={spec.c}")


def slope_vec(spec: ActivationSpec, x):
    """Elementwise derivative for backpropagation; kinks take the one-sided value 0."""
    x = np.asarray(x, dtype=float)
    if spec.name == "relu":
        return (x > 0).astype(float)
    if spec.name == "heaviside":
        return np.zeros_like(x)
    return _slope(spec.name, x)


def slope_from_output(spec: ActivationSpec, y):
    """Derivative expressed through the activation output ``y = rho(x)`` (saves a transcendental)."""
    if spec.name == "softplus":
        return -np.expm1(-y)
    if spec.name == "sigmoid":
        return y * (1.0 - y)
    if spec.name == "tanh":
        return 1.0 - y * y
    if spec.name == "relu":
        return (y > 0).astype(float)
    return np.zeros_like(y)
