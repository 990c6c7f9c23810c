"""Additive and multiplicative reconstruction of dense matrices from DLoR pieces.

A DLoR component is ``alpha * I + U @ V.T`` with U, V of shape (N, r).  A dense
matrix can be rebuilt either as a sum of low-rank pieces (one per parallel
branch) or, when invertible, as an ordered product ``M_L @ ... @ M_1`` of
``ceil(N / r)`` DLoR components sharing one alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .errors import (
    BasisSearchFailed,
    BetaDegenerate,
    PartialProductSingular,
    SingularInput,
    SingularMatrix,
)

DEFAULT_ALPHA = 0.8
BASIS_COND_LIMIT = 1e8
MAX_BASIS_ATTEMPTS = 64
RESIDUAL_TOL = 1e-8
PAD_EPS = 1e-6
SHAPE_RTOL = 1e-9


@dataclass(frozen=True)
class DlorComponent:
    alpha: float
    u: np.ndarray
    v: np.ndarray

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def dense(self) -> np.ndarray:
        return self.alpha * np.eye(self.n) + self.u @ self.v.T

    def apply(self, x):
        return self.alpha * x + self.u @ (self.v.T @ x)

    def param_count(self) -> int:
        return 1 + 2 * self.n * self.rank

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "u": la.matrix_to_json(self.u), "v": la.matrix_to_json(self.v)}


def dlor_shape_ok(dense, alpha, rank, rtol=SHAPE_RTOL) -> bool:
    """True when ``dense - alpha*I`` has no singular value beyond index ``rank`` above rtol * max(1, sigma_1)."""
    dense = la.as_matrix(dense)
    s = la.singular_values(dense - alpha * np.eye(dense.shape[0]))
    if rank >= s.size:
        return True
    return bool(np.all(s[rank:] <= rtol * max(1.0, float(s[0]))))


@dataclass(frozen=True)
class AdditiveSplit:
    summands: list
    betas: np.ndarray | None
    groups: list = field(default_factory=list)
    components: list = field(default_factory=list)

    def total(self) -> np.ndarray:
        return np.sum(self.summands, axis=0)


def zero_sum_betas(num_parts) -> np.ndarray:
    """(1, ..., 1, -(L-1)); the last entry is the negated sum so the total is exactly zero."""
    if num_parts < 2:
        raise BetaDegenerate("zero-sum weights need at least two parts (beta_1 = 0 is forbidden)")
    betas = np.ones(num_parts)
    betas[-1] = -np.sum(betas[:-1])
    return betas


def additive_split(w, num_parts) -> AdditiveSplit:
    """Split ``w`` into ``num_parts`` summands by dealing singular triplets round-robin."""
    w = la.as_matrix(w)
    if num_parts < 1:
        raise ValueError("num_parts must be >= 1")
    r = la.svd(w)
    groups = [list(range(l, r.sigma.size, num_parts)) for l in range(num_parts)]
    summands, components = [], []
    for g in groups:
        u = r.u[:, g] * r.sigma[g]
        v = r.vt[g, :].T
        summands.append(u @ v.T)
        components.append(DlorComponent(0.0, u, v))
    betas = zero_sum_betas(num_parts) if num_parts >= 2 else None
    return AdditiveSplit(summands=summands, betas=betas, groups=groups, components=components)


@dataclass(frozen=True)
class MultiplicativeFactorization:
    """``W = M_L @ ... @ M_1``; ``components[0]`` is applied first."""

    components: list
    alpha: float
    basis_z: np.ndarray
    residual: float
    block_widths: list

    @property
    def depth(self) -> int:
        return len(self.components)

    def product(self) -> np.ndarray:
        n = self.components[0].n
        out = np.eye(n)
        for comp in self.components:
            out = comp.dense() @ out
        return out

    def partial_products(self) -> list:
        """P_0 = I, P_k = M_k @ P_{k-1}."""
        n = self.components[0].n
        out = [np.eye(n)]
        for comp in self.components:
            out.append(comp.dense() @ out[-1])
        return out

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "components": [{"u": la.matrix_to_json(c.u), "v": la.matrix_to_json(c.v)} for c in self.components],
            "order": "left-applied-last",
            "residual": self.residual,
            "basis_z": la.matrix_to_json(self.basis_z),
        }

    @classmethod
    def from_json(cls, obj) -> "MultiplicativeFactorization":
        alpha = float(obj["alpha"])
        comps = [DlorComponent(alpha, la.matrix_from_json(c["u"]), la.matrix_from_json(c["v"]))
                 for c in obj["components"]]
        basis = la.matrix_from_json(obj["basis_z"]) if "basis_z" in obj else np.eye(comps[0].n)
        return cls(comps, alpha, basis, float(obj["residual"]), [c.rank for c in comps])


def block_widths(n, rank_cap) -> list:
    depth = math.ceil(n / rank_cap)
    return [rank_cap] * (depth - 1) + [n - (depth - 1) * rank_cap]


def mixed_block(w, z, cols):
    """First ``cols`` columns from ``w @ z``, the rest from ``z``."""
    out = z.copy()
    out[:, :cols] = (w @ z)[:, :cols]
    return out


def _factor_with_basis(w, z, alpha, widths):
    # The partial product P_{k-1} equals alpha^(k-1-L) [W Z_:K | alpha^L Z_K:] Z^-1,
    # so V_k = P_{k-1}^-T D_k collapses to a row block of the mixed-block inverse.
    # Working from the mixed blocks avoids ever forming the badly scaled P_k.
    n = w.shape[0]
    depth = len(widths)
    ez = (w - alpha ** depth * np.eye(n)) @ z
    offsets = np.concatenate([[0], np.cumsum(widths)])
    comps = []
    for k in range(1, depth + 1):
        lo, hi = int(offsets[k - 1]), int(offsets[k])
        try:
            inv = la.inverse(mixed_block(w, z, lo))
        except SingularMatrix as exc:
            raise PartialProductSingular(k - 1) from exc
        u_k = alpha ** (k - depth) * ez[:, lo:hi]
        v_k = alpha ** (1 - k) * inv[lo:hi, :].T
        comps.append(DlorComponent(alpha, u_k, v_k))
    return comps


def multiplicative_factorize(w, rank_cap, alpha=DEFAULT_ALPHA, seed=0) -> MultiplicativeFactorization:
    """Exact factorization of an invertible ``w`` into ceil(N/r) DLoR components.

    A random Gaussian change of basis Z is accepted when every mixed block
    matrix [W Z[:, :k r] | Z[:, k r:]] has 1-norm condition at most
    1e8 * max(1, cond1(W)), which keeps every partial product invertible.
    Bases are redrawn (up to 64 draws) until the residual reaches 1e-8; the
    best draw is returned and its residual recorded.
    """
    w = la.as_matrix(w)
    n, m = w.shape
    if n != m:
        raise ValueError(f"multiplicative factorization needs a square matrix, got {w.shape}")
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    if not 1 <= rank_cap <= n:
        raise ValueError(f"rank_cap must lie in [1, {n}]")
    if not la.is_invertible(w):
        raise SingularInput("input matrix is singular to pivot tolerance; see perturb_to_invertible")
    widths = block_widths(n, rank_cap)
    offsets = np.cumsum(widths)
    # the last mixed blocks are mostly W Z, so the bound scales with W's own conditioning
    limit = BASIS_COND_LIMIT * max(1.0, la.cond1(w))
    rng = la.make_rng(seed)
    worst_k, worst_conds = 0, []
    best = None
    for _ in range(MAX_BASIS_ATTEMPTS):
        z = rng.standard_normal((n, n))
        conds = [la.cond1(z)] + [la.cond1(mixed_block(w, z, int(offsets[k - 1]))) for k in range(1, len(widths))]
        if max(conds) > limit:
            worst_k, worst_conds = int(np.argmax(conds)), conds
            continue
        try:
            comps = _factor_with_basis(w, z, float(alpha), widths)
        except PartialProductSingular:
            continue
        residual = product_residual(comps, w)
        if best is None or residual < best.residual:
            best = MultiplicativeFactorization(comps, float(alpha), z, residual, widths)
        if residual <= RESIDUAL_TOL:
            break
    if best is None:
        raise BasisSearchFailed(worst_k, [float(c) for c in worst_conds])
    return best


def product_residual(components, w) -> float:
    """Relative Frobenius residual of M_L ... M_1 against ``w``, accumulated in extended precision.

    Small alpha with many factors makes the product itself ill-conditioned
    (entries of size alpha^(1-L) cancel down to O(1)), so a float64 product
    would measure its own rounding rather than the factors.
    """
    ext = np.longdouble
    n = w.shape[0]
    acc = np.eye(n, dtype=ext)
    for c in components:
        acc = ext(c.alpha) * acc + c.u.astype(ext) @ (c.v.T.astype(ext) @ acc)
    diff = (acc - w.astype(ext)).astype(float)
    return la.frob_norm(diff) / la.frob_norm(w)


@dataclass(frozen=True)
class PadSpec:
    in_dim: int
    out_dim: int
    size: int

    @property
    def trivial(self) -> bool:
        return self.in_dim == self.size and self.out_dim == self.size

    def pad_input(self, x):
        x = np.asarray(x, dtype=float)
        pad = [(0, self.size - self.in_dim)] + [(0, 0)] * (x.ndim - 1)
        return np.pad(x, pad)

    def truncate_output(self, y):
        return np.asarray(y)[: self.out_dim]

    def to_json(self) -> dict:
        return {"in_dim": self.in_dim, "out_dim": self.out_dim, "size": self.size}


def embed_rectangular(w, pad_eps=PAD_EPS):
    """Place an m x n ``w`` in the upper-left of a D x D matrix, D = max(m, n).

    The extra columns (tall case) or rows (wide case) are ``pad_eps`` times an
    orthonormal basis of the complement of the column / row space of ``w``, so
    the square matrix is invertible whenever ``w`` has full rank.  Inputs are
    zero-padded, so the padding never touches the embedded map.
    """
    w = la.as_matrix(w)
    m, n = w.shape
    d = max(m, n)
    spec = PadSpec(in_dim=n, out_dim=m, size=d)
    if m == n:
        return w.copy(), spec
    out = np.zeros((d, d))
    out[:m, :n] = w
    if m > n:
        out[:, n:] = pad_eps * la.orthogonal_complement(w)[:, : d - n]
    else:
        out[m:, :] = pad_eps * la.orthogonal_complement(w.T)[:, : d - m].T
    return out, spec


def perturb_to_invertible(w, epsilon=1e-8) -> np.ndarray:
    """Return ``w`` if invertible, else ``w + eps*I`` with eps grown tenfold until it is."""
    w = la.as_matrix(w)
    if w.shape[0] != w.shape[1]:
        raise ValueError("perturb_to_invertible needs a square matrix")
    if la.is_invertible(w):
        return w.copy()
    eps = float(epsilon)
    eye = np.eye(w.shape[0])
    while True:
        cand = w + eps * eye
        if la.is_invertible(cand):
            return cand
        eps *= 10.0
