"""Rank-1 hidden layer networks: exact scalar interpolation and its failure modes.

A rank-1 net reads its input only through one projection ``v1 . x``; every
hidden unit sees ``u1_i * (v1 . x) + b1_i``.  With distinct projections a
thermometer (Heaviside) or evaluation-matrix (continuous activation) readout
reproduces any scalar targets, but multi-dimensional outputs of a rank-1
outer layer always sit on one affine line and every direction orthogonal to
``v1`` is invisible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import linalg as la
from .activation import ActivationSpec, make_activation
from .errors import EvaluationMatrixSingular, ProjectionDegenerate, SingularMatrix

MAX_RETRIES = 64
COND_LIMIT = 1e10
INTERP_RTOL = 1e-6


@dataclass(frozen=True)
class Rank1Net:
    v1: np.ndarray
    u1: np.ndarray
    b1: np.ndarray
    v2: np.ndarray
    b2: float
    activation: ActivationSpec

    @property
    def width(self) -> int:
        return self.u1.shape[0]

    def hidden(self, x_cols):
        x_cols = np.asarray(x_cols, dtype=float)
        proj = self.v1 @ x_cols
        return self.activation(np.multiply.outer(self.u1, proj) + self.b1.reshape(-1, *([1] * np.ndim(proj))))

    def forward(self, x):
        """Scalar output for a single input (d,) or one output per column of (d, M)."""
        return self.v2 @ self.hidden(x) + self.b2

    __call__ = forward

    def to_json(self) -> dict:
        return {
            "v1": self.v1.tolist(), "u1": self.u1.tolist(), "b1": self.b1.tolist(),
            "v2": self.v2.tolist(), "b2": float(self.b2), "activation": self.activation.to_json(),
        }

    @classmethod
    def from_json(cls, obj) -> "Rank1Net":
        return cls(
            v1=la.as_vector(obj["v1"]), u1=la.as_vector(obj["u1"]), b1=la.as_vector(obj["b1"]),
            v2=la.as_vector(obj["v2"]), b2=float(obj["b2"]),
            activation=ActivationSpec.from_json(obj["activation"]),
        )


@dataclass(frozen=True)
class FullOuterNet:
    """Rank-1 hidden layer followed by an unconstrained k x N readout."""

    v1: np.ndarray
    u1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: ActivationSpec

    def forward(self, x_cols):
        x_cols = np.asarray(x_cols, dtype=float)
        pre = np.outer(self.u1, self.v1 @ x_cols) + self.b1[:, None]
        return self.w2 @ self.activation(pre) + self.b2[:, None]

    __call__ = forward


def _check_distinct_columns(x_cols):
    m = x_cols.shape[1]
    for i in range(m):
        same = np.all(x_cols[:, i + 1:] == x_cols[:, [i]], axis=0)
        if np.any(same):
            j = i + 1 + int(np.argmax(same))
            raise ProjectionDegenerate(f"input columns {i} and {j} are identical")


def _min_gap(y):
    if y.size < 2:
        return np.inf
    return float(np.min(np.diff(np.sort(y))))


def distinct_projection(x_cols, seed) -> np.ndarray:
    """Random unit vector whose projections of the input columns are pairwise distinct."""
    x_cols = la.as_matrix(x_cols)
    _check_distinct_columns(x_cols)
    d = x_cols.shape[0]
    rng = la.make_rng(seed)
    for _ in range(MAX_RETRIES):
        v1 = rng.standard_normal(d)
        v1 /= np.linalg.norm(v1)
        y = v1 @ x_cols
        spread = float(y.max() - y.min())
        if y.size == 1 or _min_gap(y) > 1e-10 * spread:
            return v1
    raise ProjectionDegenerate(f"no separating projection after {MAX_RETRIES} draws")


def _thermometer_thresholds(y_sorted):
    spread = float(y_sorted[-1] - y_sorted[0])
    delta = max(1e-6, 1e-3 * spread)
    t = np.empty_like(y_sorted)
    t[0] = y_sorted[0] - delta
    t[1:] = 0.5 * (y_sorted[:-1] + y_sorted[1:])
    return t


def thermometer_interpolate(x_cols, z, seed=0) -> Rank1Net:
    """Heaviside rank-1 net with a thermometer hidden code and telescoping readout."""
    x_cols = la.as_matrix(x_cols)
    z = la.as_vector(z)
    if z.size != x_cols.shape[1]:
        raise ValueError("need one target per input column")
    v1 = distinct_projection(x_cols, seed)
    y = v1 @ x_cols
    order = np.argsort(y, kind="stable")
    t = _thermometer_thresholds(y[order])
    zs = z[order]
    w = np.empty_like(zs)
    w[0] = zs[0]
    w[1:] = np.diff(zs)
    m = z.size
    return Rank1Net(v1=v1, u1=np.ones(m), b1=-t, v2=w, b2=0.0, activation=make_activation("heaviside"))


def _evaluation_candidates(y, rng):
    """Bias vectors for the evaluation matrix: midpoints first, then jittered."""
    y_sorted = np.sort(y)
    gap = _min_gap(y_sorted)
    gap = 1.0 if not np.isfinite(gap) else gap
    base = np.empty_like(y_sorted)
    base[0] = y_sorted[0] - 0.5 * gap
    base[1:] = 0.5 * (y_sorted[:-1] + y_sorted[1:])
    yield base
    local = np.empty_like(y_sorted)
    local[0] = gap
    local[1:] = np.diff(y_sorted)
    for _ in range(MAX_RETRIES - 1):
        yield base + rng.uniform(-0.25, 0.25, size=base.shape) * local


def _solve_readout(x_cols, z_rows, activation, seed):
    """Shared search for (v1, thresholds, readout) with an invertible evaluation matrix.

    ``z_rows`` is (k, M).  Returns v1, u1, b1, w2 with ``w2 @ H = z_rows``.
    """
    v1 = distinct_projection(x_cols, seed)
    y = v1 @ x_cols
    if y.size > 1:
        # unit spacing keeps translated activations well separated
        s = 1.0 / _min_gap(y)
        v1, y = v1 * s, y * s
    rng = la.make_rng(seed + 1)
    scale = max(1.0, float(np.max(np.abs(z_rows))))
    best = np.inf
    for t in _evaluation_candidates(y, rng):
        h = activation(y[None, :] - t[:, None])
        c = la.cond1(h)
        best = min(best, c)
        if c > COND_LIMIT:
            continue
        try:
            w2 = la.lu_solve(h.T, z_rows.T).T
        except SingularMatrix:
            continue
        if np.max(np.abs(w2 @ h - z_rows)) <= INTERP_RTOL * scale:
            return v1, np.ones(y.size), -t, w2
    raise EvaluationMatrixSingular(best)


def scalar_interpolate(x_cols, z, activation: ActivationSpec, seed=0) -> Rank1Net:
    """Rank-1 net with a continuous, non-mean-periodic activation hitting every target."""
    if activation.name == "heaviside":
        raise ValueError("heaviside is discontinuous; use thermometer_interpolate")
    if activation.mean_periodic:
        raise ValueError(f"{activation.name} is mean-periodic; translates may be dependent")
    x_cols = la.as_matrix(x_cols)
    z = la.as_vector(z)
    if z.size != x_cols.shape[1]:
        raise ValueError("need one target per input column")
    v1, u1, b1, w2 = _solve_readout(x_cols, z[None, :], activation, seed)
    return Rank1Net(v1=v1, u1=u1, b1=b1, v2=w2[0], b2=0.0, activation=activation)


def full_outer_memorize(x_cols, z_matrix, activation: ActivationSpec, seed=0) -> FullOuterNet:
    """Rank-1 hidden layer plus dense readout memorizing k-dimensional targets."""
    x_cols = la.as_matrix(x_cols)
    z_matrix = la.as_matrix(z_matrix)
    k, m = z_matrix.shape
    if m != x_cols.shape[1]:
        raise ValueError("need one target column per input column")
    b2 = np.zeros(k)
    if activation.name == "heaviside":
        # thresholds t_1 < y_1 < t_2 < y_2 < ... give a triangular H, so the
        # readout is the columnwise telescoping difference of the sorted targets
        v1 = distinct_projection(x_cols, seed)
        y = v1 @ x_cols
        order = np.argsort(y, kind="stable")
        t = _thermometer_thresholds(y[order])
        zs = z_matrix[:, order] - b2[:, None]
        w2 = np.concatenate([zs[:, :1], np.diff(zs, axis=1)], axis=1)
        return FullOuterNet(v1=v1, u1=np.ones(m), b1=-t, w2=w2, b2=b2, activation=activation)
    v1, u1, b1, w2 = _solve_readout(x_cols, z_matrix - b2[:, None], activation, seed)
    return FullOuterNet(v1=v1, u1=u1, b1=b1, w2=w2, b2=b2, activation=activation)


@dataclass(frozen=True)
class CollapseWitness:
    collinear: bool
    max_line_distance: float
    residual_std: float
    direction: np.ndarray
    centroid: np.ndarray


def affine_collapse_witness(z_matrix) -> CollapseWitness:
    """Least-squares line through the target columns and how far the targets stray from it.

    ``residual_std`` is the RMS orthogonal residual with an (M - 1) denominator.
    A positive ``max_line_distance`` (beyond round-off) certifies that no
    network with a rank-1 outer layer can reproduce the targets.
    """
    z_matrix = la.as_matrix(z_matrix)
    k, m = z_matrix.shape
    if k < 2:
        raise ValueError("affine collapse needs targets of dimension >= 2")
    centroid = z_matrix.mean(axis=1)
    centered = z_matrix - centroid[:, None]
    diffs = z_matrix[:, :, None] - z_matrix[:, None, :]
    spread = float(np.sqrt(np.max(np.sum(diffs ** 2, axis=0))))
    if spread == 0.0:
        return CollapseWitness(True, 0.0, 0.0, np.eye(k)[:, 0], centroid)
    direction = la.svd(centered).u[:, 0]
    resid = centered - np.outer(direction, direction @ centered)
    dist = np.linalg.norm(resid, axis=0)
    max_dist = float(dist.max())
    std = float(np.sqrt(np.sum(dist ** 2) / (m - 1))) if m > 1 else 0.0
    collinear = m <= 2 or max_dist <= 1e-9 * spread
    return CollapseWitness(collinear, max_dist, std, direction, centroid)


@dataclass(frozen=True)
class BlindnessResult:
    x_perp: np.ndarray
    delta: float


def blindness_check(net, x, seed, v1=None, orthogonalize=True) -> BlindnessResult:
    """Perturb ``x`` along a random direction in the null space of ``v1`` and measure the output change.

    ``net`` is a Rank1Net or any callable ``f`` of the form ``g(v1 . x)``; in the
    latter case pass ``v1``.  ``orthogonalize=False`` skips the projection and
    serves as a negative control.
    """
    f: Callable = net.forward if isinstance(net, Rank1Net) else net
    v1 = net.v1 if v1 is None else la.as_vector(v1)
    x = la.as_vector(x)
    if x.size < 2:
        raise ValueError("orthogonal blindness needs input dimension >= 2")
    rng = la.make_rng(seed)
    x_perp = rng.standard_normal(x.size)
    if orthogonalize:
        unit = v1 / np.linalg.norm(v1)
        for _ in range(2):
            x_perp -= (unit @ x_perp) * unit
    delta = float(abs(np.asarray(f(x + x_perp)) - np.asarray(f(x))))
    return BlindnessResult(x_perp=x_perp, delta=delta)


def parallel_part(v1, x):
    """Orthogonal projection of ``x`` onto span(v1)."""
    v1 = la.as_vector(v1)
    return v1 * (v1 @ x) / (v1 @ v1)
