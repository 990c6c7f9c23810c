"""h-scaled network surgery: simulate dense layers with DLoR-shaped layers.

Every construction rests on the identity block ``psi_h(rho(phi_h(x)))`` with
``phi_h(x) = h x + c`` and ``psi_h(y) = (y - rho(c)) / (h rho'(c))``.  Folding
``psi_h`` of one layer into the affine map of the next lets an activation
layer pass a (scaled) linear signal through almost unchanged, so a product or
sum of DLoR factors reproduces ``rho(W x + b)`` up to O(h).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .activation import ActivationSpec, make_activation, require_expansion
from .decompose import (
    DEFAULT_ALPHA,
    MultiplicativeFactorization,
    PadSpec,
    additive_split,
    dlor_shape_ok,
    embed_rectangular,
    multiplicative_factorize,
    perturb_to_invertible,
    zero_sum_betas,
)


@dataclass(frozen=True)
class AffineLayer:
    w: np.ndarray
    b: np.ndarray
    apply_activation: bool = True

    def __post_init__(self):
        if self.w.shape[0] != self.b.shape[0]:
            raise ValueError(f"bias length {self.b.shape[0]} does not match {self.w.shape[0]} rows")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer has non-finite entries")

    def __call__(self, x, activation):
        b = self.b if x.ndim == 1 else self.b[:, None]
        a = self.w @ x + b
        return activation(a) if self.apply_activation else a

    def to_json(self) -> dict:
        return {"w": la.matrix_to_json(self.w), "b": self.b.tolist(), "activation": self.apply_activation}

    @classmethod
    def from_json(cls, obj) -> "AffineLayer":
        return cls(la.matrix_from_json(obj["w"]), la.as_vector(obj["b"]), bool(obj.get("activation", True)))


def _check_h(h):
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")


def identity_block(x, h, activation: ActivationSpec):
    """psi_h(rho(h x + c)), which tends to x as h -> 0."""
    _check_h(h)
    require_expansion(activation)
    x = np.asarray(x, dtype=float)
    c, rho_c, d = activation.c, activation.rho_c, activation.drho_c
    return (activation(h * x + c) - rho_c) / (h * d)


@dataclass(frozen=True)
class DeepBlockPlan:
    layers: list
    h: float
    activation: ActivationSpec
    source_w: np.ndarray | None = None
    source_b: np.ndarray | None = None
    pad: PadSpec | None = None
    meta: dict = field(default_factory=dict)

    kind = "deep"

    @property
    def final_activation(self) -> bool:
        return bool(self.layers[-1].apply_activation) if self.layers else False


@dataclass(frozen=True)
class WideBlockPlan:
    stacked_w: np.ndarray
    stacked_b: np.ndarray
    readout: np.ndarray
    target_bias: np.ndarray
    h: float
    activation: ActivationSpec
    betas: np.ndarray
    source_w: np.ndarray | None = None
    final_activation: bool = True
    meta: dict = field(default_factory=dict)

    kind = "wide"

    @property
    def source_b(self):
        return self.target_bias

    @property
    def pad(self):
        return None

    @property
    def layers(self) -> list:
        return [
            AffineLayer(self.stacked_w, self.stacked_b, True),
            AffineLayer(self.readout, self.target_bias, self.final_activation),
        ]

    def pre_activation(self, x):
        """Readout pre-activation, evaluated on branch outputs centred at rho(c).

        Since the betas sum to zero the readout annihilates the constant
        rho(c) vector, so centring leaves the affine map unchanged while keeping
        the O(1/h) readout weights away from the cancelling constants.
        """
        col = x.ndim > 1
        z = self.activation(self.stacked_w @ x + (self.stacked_b[:, None] if col else self.stacked_b))
        offset = self.activation(self.stacked_b)
        centred = z - (offset[:, None] if col else offset)
        return self.readout @ centred + (self.target_bias[:, None] if col else self.target_bias)


@dataclass(frozen=True)
class AugmentedBlockPlan:
    layers: list
    rank1_terms: list
    h: float
    activation: ActivationSpec
    source_w: np.ndarray | None = None
    source_b: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    kind = "augmented"
    final_activation = True

    @property
    def n(self) -> int:
        return self.layers[0].w.shape[0] // 2

    @property
    def pad(self):
        return None


def _scaled_chain(mats, b, h, activation, final_activation=True):
    """Affine layers realizing rho(M_L ... M_1 x + b) through identity blocks."""
    require_expansion(activation)
    c, rho_c, d = activation.c, activation.rho_c, activation.drho_c
    n = mats[0].shape[0]
    ones = np.ones(n)
    layers = [AffineLayer(h * mats[0], c * ones, True)]
    for m in mats[1:-1]:
        layers.append(AffineLayer(m / d, c * ones - (rho_c / d) * (m @ ones), True))
    last = mats[-1] if len(mats) > 1 else np.eye(n)
    layers.append(AffineLayer(last / (h * d), b - (rho_c / (h * d)) * (last @ ones), final_activation))
    return layers


def _chain_scalars(alpha, depth, h, d):
    if depth == 1:
        return [h * alpha, 1.0 / (h * d)]
    return [h * alpha] + [alpha / d] * (depth - 2) + [alpha / (h * d)]


def build_deep_block(w, b, rank_cap, alpha=DEFAULT_ALPHA, h=1e-4, activation=None, seed=0,
                     final_activation=True, factorization: MultiplicativeFactorization | None = None,
                     pad: PadSpec | None = None) -> DeepBlockPlan:
    """Deep simulation of ``rho(W x + b)`` (or ``W x + b`` when ``final_activation`` is off).

    The factors of ``W = M_L ... M_1`` become consecutive activation layers;
    with a single factor an extra ``I / (h rho'(c))`` layer closes the block.
    """
    _check_h(h)
    activation = activation or make_activation("softplus")
    w = la.as_matrix(w)
    b = la.as_vector(b)
    if w.shape[0] != w.shape[1]:
        raise ValueError("deep blocks need a square matrix; see embed_rectangular")
    if factorization is None:
        target = perturb_to_invertible(w)
        factorization = multiplicative_factorize(target, rank_cap, alpha, seed)
    mats = [comp.dense() for comp in factorization.components]
    layers = _scaled_chain(mats, b, h, activation, final_activation)
    meta = {"alpha": factorization.alpha, "rank": rank_cap, "residual": factorization.residual,
            "depth": factorization.depth,
            "layer_scalars": _chain_scalars(factorization.alpha, len(mats), h, activation.drho_c)}
    return DeepBlockPlan(layers, float(h), activation, w, b, pad, meta)


def build_wide_block(w, b, num_parts, h=1e-3, activation=None, final_activation=True) -> WideBlockPlan:
    """Parallel simulation of ``rho(W x + b)`` with ``num_parts`` low-rank branches.

    Branch l computes ``rho(h / beta_l * S_l x + c)``; the readout weights
    ``beta_l / (h rho'(c))`` recover each ``S_l x`` and, since the betas sum
    to zero, the constant ``rho(c)`` terms cancel.  ``w`` may be rectangular.
    """
    _check_h(h)
    activation = activation or make_activation("softplus")
    require_expansion(activation)
    w = la.as_matrix(w)
    b = la.as_vector(b)
    m, n = w.shape
    betas = zero_sum_betas(num_parts)
    split = additive_split(w, num_parts)
    d = activation.drho_c
    stacked_w = np.vstack([(h / beta) * s for beta, s in zip(betas, split.summands)])
    stacked_b = np.full(num_parts * m, activation.c)
    readout = np.hstack([(beta / (h * d)) * np.eye(m) for beta in betas])
    meta = {"rank": max(len(g) for g in split.groups), "parts": num_parts, "residual": 0.0}
    return WideBlockPlan(stacked_w, stacked_b, readout, b.copy(), float(h), activation, betas, w,
                         final_activation, meta)


def build_augmented_block(w, b, h=1e-4, activation=None, rtol=1e-9) -> AugmentedBlockPlan:
    """Width-2N simulation that carries x in the top half and builds W x in the bottom half.

    One rank-1 update ``I + [0; u_i][v_i; 0]^T`` per singular triplet, so the
    block has ``k + 1`` layers for a rank-k ``w``.
    """
    _check_h(h)
    activation = activation or make_activation("softplus")
    require_expansion(activation)
    w = la.as_matrix(w)
    b = la.as_vector(b)
    n = w.shape[0]
    if w.shape[1] != n:
        raise ValueError("augmented blocks need a square matrix")
    c, rho_c, d = activation.c, activation.rho_c, activation.drho_c
    big = 2 * n
    ones = np.ones(big)
    b_tilde = np.concatenate([np.zeros(n), b])
    r = la.svd(w)
    k = 0 if r.sigma[0] == 0 else int(np.sum(r.sigma > rtol * max(1.0, r.sigma[0])))
    terms = [(r.sigma[i] * r.u[:, i], r.vt[i].copy()) for i in range(k)]
    if k == 0:
        # nothing to build: the bottom half is b and the top half passes x through
        layers = [AffineLayer(np.eye(big), b_tilde, True)]
        return AugmentedBlockPlan(layers, [], float(h), activation, w, b, {"rank": 0, "layer_scalars": [1.0]})
    mats = []
    for u, v in terms:
        m = np.eye(big)
        m[n:, :n] += np.outer(u, v)
        mats.append(m)
    layers = [AffineLayer(h * mats[0], c * ones, True)]
    for m in mats[1:]:
        layers.append(AffineLayer(m / d, c * ones - (rho_c / d) * (m @ ones), True))
    layers.append(AffineLayer(np.eye(big) / (h * d), b_tilde - (rho_c / (h * d)) * ones, True))
    scalars = [h] + [1.0 / d] * (k - 1) + [1.0 / (h * d)]
    return AugmentedBlockPlan(layers, terms, float(h), activation, w, b, {"rank": k, "layer_scalars": scalars})


def reset_swap_matrix(n, epsilon=0.0) -> np.ndarray:
    """[[0, I], [0, 0]] + eps I on dimension 2n: moves the bottom half up and clears it."""
    s = np.zeros((2 * n, 2 * n))
    s[:n, n:] = np.eye(n)
    return s + epsilon * np.eye(2 * n)


def build_reset_swap(n, epsilon, rank_cap, alpha=DEFAULT_ALPHA, h=1e-4, activation=None, seed=0) -> DeepBlockPlan:
    """Deep block for the linear map ``S + eps I``; its last layer skips the activation."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive so that the swap matrix is invertible")
    s_eps = reset_swap_matrix(n, epsilon)
    plan = build_deep_block(s_eps, np.zeros(2 * n), rank_cap, alpha, h, activation, seed, final_activation=False)
    plan.meta["epsilon"] = float(epsilon)
    return plan


def transfer_network(dense, activation=None, rank_cap=6, alpha=DEFAULT_ALPHA, h=1e-4, seed=0,
                     mode="deep", num_parts=3, pad_eps=1e-6) -> list:
    """Replace every layer of a dense network by a DLoR block.

    ``dense`` is a sequence of ``{"w", "b"}`` dicts; an optional boolean
    ``"activation"`` entry (default true) marks layers without a nonlinearity,
    such as a linear readout.  Deep mode embeds rectangular layers in a square
    matrix; wide mode splits them directly.
    """
    activation = activation or make_activation("softplus")
    seeds = la.spawn_seeds(seed, len(dense))
    plans = []
    for spec, s in zip(dense, seeds):
        w = la.as_matrix(spec["w"])
        b = la.as_vector(spec["b"])
        act = bool(spec.get("activation", True))
        if mode == "wide":
            plans.append(build_wide_block(w, b, num_parts, h, activation, final_activation=act))
            continue
        if mode != "deep":
            raise ValueError(f"unknown transfer mode {mode!r}")
        sq, pad = embed_rectangular(w, pad_eps)
        b_sq = np.zeros(pad.size)
        b_sq[: b.size] = b
        r = min(rank_cap, pad.size)
        plans.append(build_deep_block(sq, b_sq, r, alpha, h, activation, s, final_activation=act, pad=pad))
    return plans


def _forward_layers(layers, activation, x):
    for layer in layers:
        x = layer(x, activation)
    return x


def simulate(plan, x):
    """Forward pass of a plan (or a list of plans, applied in order) on a vector or on columns."""
    x = np.asarray(x, dtype=float)
    if isinstance(plan, (list, tuple)):
        for p in plan:
            x = simulate(p, x)
        return x
    if isinstance(plan, AugmentedBlockPlan) and x.shape[0] == plan.n:
        x = np.concatenate([x, np.zeros((plan.n,) + x.shape[1:])])
    pad = plan.pad
    if pad is not None:
        x = pad.pad_input(x)
    expected = plan.layers[0].w.shape[1] if plan.layers else x.shape[0]
    if x.shape[0] != expected:
        raise ValueError(f"input has dimension {x.shape[0]}, plan expects {expected}")
    if isinstance(plan, WideBlockPlan):
        pre = plan.pre_activation(x)
        return plan.activation(pre) if plan.final_activation else pre
    y = _forward_layers(plan.layers, plan.activation, x)
    return pad.truncate_output(y) if pad is not None else y


def reference(plan, x):
    """The map a plan is meant to reproduce: rho(W x + b), or W x + b for linear blocks."""
    x = np.asarray(x, dtype=float)
    if isinstance(plan, (list, tuple)):
        for p in plan:
            x = reference(p, x)
        return x
    w, b = plan.source_w, plan.source_b
    if isinstance(plan, AugmentedBlockPlan):
        x = x[: plan.n]
    elif plan.pad is not None:
        w = w[: plan.pad.out_dim, : plan.pad.in_dim]
        b = b[: plan.pad.out_dim]
    pre = w @ x + (b if x.ndim == 1 else b[:, None])
    return plan.activation(pre) if plan.final_activation else pre


def sup_error(plan, grid_cols):
    """Largest absolute deviation between simulate and reference over the grid columns."""
    grid_cols = np.asarray(grid_cols, dtype=float)
    out = simulate(plan, grid_cols)
    if isinstance(plan, AugmentedBlockPlan):
        out = out[plan.n:]
    return float(np.max(np.abs(out - reference(plan, grid_cols))))


def shape_checks(plan, rank) -> list:
    """DLoR shape check (scalar * I + rank <= ``rank``) for every layer weight."""
    scalars = plan.meta.get("layer_scalars")
    if scalars is None:
        raise ValueError("plan carries no per-layer scalars")
    return [dlor_shape_ok(layer.w, s, rank) for layer, s in zip(plan.layers, scalars)]


def dlor_param_count(n, r) -> int:
    if n < 1 or r < 1:
        raise ValueError("n and r must be >= 1")
    return 2 * n * r + 1


def dense_layer_sim_count(n) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n * (2 * n + 1)


def plan_to_json(plan) -> dict:
    obj = {
        "kind": plan.kind,
        "h": plan.h,
        "activation": plan.activation.to_json(),
        "layers": [layer.to_json() for layer in plan.layers],
        "meta": dict(plan.meta),
    }
    if plan.source_w is not None:
        obj["meta"]["source"] = {"w": la.matrix_to_json(plan.source_w), "b": np.asarray(plan.source_b).tolist()}
    if plan.pad is not None:
        obj["meta"]["pad"] = plan.pad.to_json()
    if isinstance(plan, WideBlockPlan):
        obj["meta"]["betas"] = plan.betas.tolist()
    return obj


def plan_from_json(obj):
    activation = ActivationSpec.from_json(obj["activation"])
    layers = [AffineLayer.from_json(l) for l in obj["layers"]]
    meta = dict(obj.get("meta", {}))
    src = meta.pop("source", None)
    w = la.matrix_from_json(src["w"]) if src else None
    b = la.as_vector(src["b"]) if src else None
    h = float(obj["h"])
    kind = obj["kind"]
    if kind == "deep":
        pad = meta.pop("pad", None)
        pad = PadSpec(**pad) if pad else None
        return DeepBlockPlan(layers, h, activation, w, b, pad, meta)
    if kind == "wide":
        betas = np.asarray(meta.pop("betas"), dtype=float)
        first, second = layers
        return WideBlockPlan(first.w, first.b, second.w, second.b, h, activation, betas, w,
                             second.apply_activation, meta)
    if kind == "augmented":
        return AugmentedBlockPlan(layers, [], h, activation, w, b, meta)
    raise ValueError(f"unknown plan kind {kind!r}")
