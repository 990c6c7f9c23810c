"""Small dense linear algebra kernel.

Matrices are plain float64 ``numpy`` arrays; every function here returns new
arrays and never writes into its inputs.  The SVD is a one-sided (Hestenes)
Jacobi iteration with a round-robin pair ordering so that each round rotates
n/2 disjoint column pairs at once.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, SingularMatrix

EPS = np.finfo(float).eps
PIVOT_RTOL = 1e-12
MAX_SWEEPS = 80


def as_matrix(a) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a nonempty 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def as_vector(v) -> np.ndarray:
    x = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _round_robin(n):
    """Pair schedule covering every (p, q) once per sweep, n even."""
    idx = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(idx[:half]), np.array(idx[half:][::-1])))
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


def _complete_orthonormal(u, missing):
    """Replace the columns listed in ``missing`` by an orthonormal completion."""
    u = u.copy()
    m = u.shape[0]
    missing_set = set(missing)
    basis = u[:, [j for j in range(u.shape[1]) if j not in missing_set]]
    for j in missing:
        resid = np.eye(m)
        for _ in range(2):
            resid -= basis @ (basis.T @ resid)
        norms = np.linalg.norm(resid, axis=0)
        i = int(np.argmax(norms))
        col = resid[:, i] / norms[i]
        u[:, j] = col
        basis = np.hstack([basis, col[:, None]])
    return u


def svd(a) -> SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with ``sigma`` nonincreasing.

    Raises ConvergenceError if the Jacobi sweeps do not settle.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        r = svd(a.T)
        return SvdResult(u=r.vt.T, sigma=r.sigma, vt=r.u.T)
    return _jacobi(a, want_v=True)


def _jacobi(a, want_v):
    m, n = a.shape

    # rows of `x` are [column of a | column of v]; rotations act on row pairs
    n_even = n + (n % 2)
    x = np.zeros((n_even, m + n_even if want_v else m))
    x[:n, :m] = a.T
    if want_v:
        x[:, m:] = np.eye(n_even)
    rounds = _round_robin(n_even) if n_even > 1 else []

    tol = EPS * 4
    negligible = (max(m, n) * EPS * frob_norm(a)) ** 2
    for _ in range(MAX_SWEEPS):
        worst = 0.0
        for p, q in rounds:
            xp, xq = x[p], x[q]
            ap, aq = xp[:, :m], xq[:, :m]
            alpha = np.einsum("ij,ij->i", ap, ap)
            beta = np.einsum("ij,ij->i", aq, aq)
            gamma = np.einsum("ij,ij->i", ap, aq)
            scale = np.sqrt(alpha * beta)
            active = (np.abs(gamma) > tol * scale) & (np.minimum(alpha, beta) > negligible)
            if not active.any():
                continue
            worst = max(worst, float(np.max(np.abs(gamma[active]) / scale[active])))
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[:, None]
            s = np.where(active, t, 0.0)[:, None] * c
            x[p] = c * xp - s * xq
            x[q] = s * xp + c * xq
        if worst <= tol:
            break
    else:
        raise ConvergenceError(MAX_SWEEPS, worst)

    work = x[:n, :m].T
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    if not want_v:
        return sigma
    work, v = work[:, order], x[:n, m:m + n].T[:, order]

    # columns this small were never rotated against each other; their
    # directions are noise, so U gets an orthonormal completion there
    floor = max(m, n) * EPS * frob_norm(a)
    missing = [j for j in range(n) if sigma[j] <= floor]
    u = np.zeros((m, n))
    good = sigma > floor
    u[:, good] = work[:, good] / sigma[good]
    if missing:
        u = _complete_orthonormal(u, missing)
    return SvdResult(u=u, sigma=sigma, vt=v.T)


def singular_values(a) -> np.ndarray:
    a = as_matrix(a)
    return _jacobi(a if a.shape[0] >= a.shape[1] else a.T, want_v=False)


def numerical_rank(a, rtol=1e-9) -> int:
    s = singular_values(a)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * max(1.0, s[0])))


def inf_norm(a) -> float:
    return float(np.max(np.sum(np.abs(a), axis=1)))


def lu_factor(a):
    """Partial-pivot LU.  Returns (lu, perm, sign, min_pivot).

    Raises SingularMatrix when a pivot falls below 1e-12 * ||a||_inf.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"LU needs a square matrix, got {a.shape}")
    lu = a.copy()
    perm = np.arange(n)
    sign = 1.0
    threshold = PIVOT_RTOL * inf_norm(a)
    min_pivot = np.inf
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        piv = abs(lu[p, k])
        min_pivot = min(min_pivot, piv)
        if piv <= threshold:
            raise SingularMatrix(piv, threshold)
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            sign = -sign
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm, sign, float(min_pivot)


def _lu_apply(lu, perm, b):
    n = lu.shape[0]
    x = b[perm].copy()
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x


def lu_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b``; ``b`` may be a vector or a matrix of right-hand sides."""
    lu, perm, _, _ = lu_factor(a)
    b_arr = np.array(b, dtype=float)
    vec = b_arr.ndim == 1
    rhs = b_arr.reshape(lu.shape[0], -1)
    x = _lu_apply(lu, perm, rhs)
    return x.reshape(-1) if vec else x


def inverse(a) -> np.ndarray:
    a = as_matrix(a)
    return lu_solve(a, np.eye(a.shape[0]))


def det(a) -> float:
    try:
        lu, _, sign, _ = lu_factor(a)
    except SingularMatrix:
        return 0.0
    return float(sign * np.prod(np.diag(lu)))


def is_invertible(a) -> bool:
    try:
        lu_factor(a)
    except SingularMatrix:
        return False
    return True


def cond(a) -> float:
    """2-norm condition number; inf for a zero smallest singular value."""
    s = singular_values(a)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def cond1(a) -> float:
    """1-norm condition number via an explicit inverse (cheap for small n)."""
    try:
        inv = inverse(a)
    except SingularMatrix:
        return np.inf
    return float(np.abs(a).sum(axis=0).max() * np.abs(inv).sum(axis=0).max())


def frob_norm(a) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


def mat_mul(a, b):
    return np.asarray(a, dtype=float) @ np.asarray(b, dtype=float)


def add(a, b):
    return np.asarray(a, dtype=float) + np.asarray(b, dtype=float)


def sub(a, b):
    return np.asarray(a, dtype=float) - np.asarray(b, dtype=float)


def scale(a, s):
    return float(s) * np.asarray(a, dtype=float)


def transpose(a):
    return np.array(a, dtype=float).T.copy()


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))


def spawn_seeds(seed, n) -> list[int]:
    """Independent child seeds, one per task, derived from a parent seed."""
    children = np.random.SeedSequence(int(seed) & (2**64 - 1)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def random_matrix(rows, cols, seed, distribution="uniform") -> np.ndarray:
    rng = make_rng(seed)
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, size=(rows, cols))
    if distribution == "gaussian":
        return rng.standard_normal(size=(rows, cols))
    raise ValueError(f"unknown distribution {distribution!r}")


def matrix_to_json(a) -> dict:
    a = as_matrix(a)
    return {"rows": a.shape[0], "cols": a.shape[1], "data": [float(x) for x in a.reshape(-1)]}


def matrix_from_json(obj) -> np.ndarray:
    rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    if len(data) != rows * cols:
        raise ValueError(f"matrix JSON has {len(data)} entries, expected {rows * cols}")
    return as_matrix(np.array(data, dtype=float).reshape(rows, cols))


def dumps_matrix(a) -> str:
    return json.dumps(matrix_to_json(a))


def matrix_to_csv(a) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in as_matrix(a):
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def orthogonal_complement(a, rtol=1e-9) -> np.ndarray:
    """Orthonormal basis (as columns) of the complement of the column space of ``a``."""
    a = as_matrix(a)
    m = a.shape[0]
    r = svd(a)
    keep = r.sigma > rtol * max(1.0, float(r.sigma[0]))
    basis = r.u[:, keep]
    k = basis.shape[1]
    full = _complete_orthonormal(np.hstack([basis, np.zeros((m, m - k))]), list(range(k, m)))
    return full[:, k:]
