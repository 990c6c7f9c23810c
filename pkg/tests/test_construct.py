import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlor import linalg as la
from dlor.activation import make_activation
from dlor.construct import (
    AffineLayer,
    AugmentedBlockPlan,
    DeepBlockPlan,
    build_augmented_block,
    build_deep_block,
    build_reset_swap,
    build_wide_block,
    dense_layer_sim_count,
    dlor_param_count,
    identity_block,
    plan_from_json,
    plan_to_json,
    reference,
    reset_swap_matrix,
    shape_checks,
    simulate,
    sup_error,
    transfer_network,
)
from dlor.errors import BetaDegenerate, NoExpansionPoint

SP = make_activation("softplus")
GRID = np.random.default_rng(99).uniform(-1, 1, size=(16, 200))


def test_identity_block_zero_input():
    for h in (1e-1, 1e-3, 1e-6):
        assert identity_block(0.0, h, SP) == 0.0


def test_identity_block_converges():
    errs = [abs(identity_block(1.0, h, SP) - 1.0) for h in (1e-1, 1e-2, 1e-3)]
    assert errs[2] < errs[1] < errs[0]


def test_identity_block_relu_exact():
    relu = make_activation("relu")
    x = np.linspace(-2, 2, 9)
    assert np.allclose(identity_block(x, 0.25, relu), x, rtol=0, atol=1e-15)


def test_identity_block_rejects():
    with pytest.raises(NoExpansionPoint):
        identity_block(1.0, 0.1, make_activation("heaviside"))
    with pytest.raises(ValueError):
        identity_block(1.0, 0.0, SP)


def test_deep_block_identity_weights():
    plan = build_deep_block(np.eye(3), np.zeros(3), 1, alpha=1.0, h=1e-5)
    for layer in plan.layers[:-1]:
        assert np.allclose(layer.w / layer.w[0, 0], np.eye(3))
    x = np.random.default_rng(0).uniform(-1, 1, (3, 20))
    assert np.max(np.abs(simulate(plan, x) - SP(x))) < 1e-4


def test_deep_block_sweep_decreases_to_floor():
    w = la.random_matrix(16, 16, 1, "gaussian") / 4
    b = np.random.default_rng(2).uniform(-1, 1, 16)
    errs = [sup_error(build_deep_block(w, b, 6, 0.8, h, SP, seed=0), GRID) for h in (1e-2, 1e-3, 1e-4, 1e-5)]
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    tail = [sup_error(build_deep_block(w, b, 6, 0.8, h, SP, seed=0), GRID) for h in (1e-7, 1e-8)]
    assert min(tail) < 1e-3


def test_deep_block_shapes():
    w = la.random_matrix(8, 8, 3)
    plan = build_deep_block(w, np.zeros(8), 3, 0.8, 1e-3, SP)
    assert plan.meta["depth"] == 3
    assert len(plan.layers) == 3
    assert all(shape_checks(plan, 3))


def test_deep_block_single_factor_adds_closing_layer():
    plan = build_deep_block(2 * np.eye(4), np.zeros(4), 4, 0.8, 1e-4, SP)
    assert len(plan.layers) == 2
    assert all(shape_checks(plan, 4))


def test_deep_block_matches_hand_unrolled():
    w = la.random_matrix(6, 6, 4)
    b = np.linspace(-0.5, 0.5, 6)
    plan = build_deep_block(w, b, 2, 0.8, 1e-3, SP, seed=1)
    x = np.random.default_rng(5).standard_normal(6)
    y = x
    for layer in plan.layers:
        pre = layer.w @ y + layer.b
        y = SP(pre) if layer.apply_activation else pre
    assert np.array_equal(simulate(plan, x), y)


def test_empty_plan_is_identity():
    plan = DeepBlockPlan([], 1e-3, SP)
    x = np.arange(3.0)
    assert np.array_equal(simulate(plan, x), x)


def test_single_linear_layer():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([0.5, -0.5])
    plan = DeepBlockPlan([AffineLayer(w, b, False)], 1e-3, SP)
    x = np.array([1.0, -1.0])
    assert np.array_equal(simulate(plan, x), w @ x + b)


def test_wide_zero_weights_exact():
    b = np.random.default_rng(0).uniform(-1, 1, 5)
    x = np.random.default_rng(1).standard_normal((5, 7))
    for parts in (2, 3, 5):
        for h in (1e-1, 1e-3, 1e-6):
            plan = build_wide_block(np.zeros((5, 5)), b, parts, h, SP)
            assert np.max(np.abs(plan.pre_activation(x) - b[:, None])) <= 1e-12
            assert np.array_equal(plan.pre_activation(x[:, 0]), b)
            assert np.allclose(simulate(plan, x), SP(b)[:, None], atol=1e-12)


def test_wide_centred_readout_is_same_affine_map():
    w = la.random_matrix(4, 4, 8)
    b = np.linspace(-1, 1, 4)
    plan = build_wide_block(w, b, 3, 1e-2, SP)
    x = GRID[:4]
    first, second = plan.layers
    plain = second.w @ SP(first.w @ x + first.b[:, None]) + second.b[:, None]
    assert np.allclose(plan.pre_activation(x), plain, atol=1e-10)


def test_wide_sweep_decreases():
    w = la.random_matrix(16, 16, 1, "gaussian") / 4
    b = np.zeros(16)
    errs = [sup_error(build_wide_block(w, b, 3, h, SP), GRID) for h in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))


def test_wide_first_order_ratio():
    rng = np.random.default_rng(3)
    w = np.outer(rng.standard_normal(6), rng.standard_normal(6))
    plan_h = build_wide_block(w, np.zeros(6), 2, 1e-2, SP)
    plan_h2 = build_wide_block(w, np.zeros(6), 2, 5e-3, SP)
    assert plan_h.betas.tolist() == [1.0, -1.0]
    g = GRID[:6]
    assert sup_error(plan_h2, g) <= 0.75 * sup_error(plan_h, g)


def test_wide_rectangular_and_one_part():
    w = la.random_matrix(3, 5, 2)
    plan = build_wide_block(w, np.zeros(3), 2, 1e-4, SP)
    assert sup_error(plan, GRID[:5]) < 1e-3
    with pytest.raises(BetaDegenerate):
        build_wide_block(w, np.zeros(3), 1, 1e-3, SP)


def test_augmented_zero():
    b = np.array([0.2, -0.3])
    plan = build_augmented_block(np.zeros((2, 2)), b, 1e-4, SP)
    assert len(plan.layers) == 1
    out = simulate(plan, np.array([0.5, 0.1]))
    assert np.allclose(out[2:], SP(b))


def test_augmented_rank1_layer_count():
    rng = np.random.default_rng(0)
    w = np.outer(rng.standard_normal(8), rng.standard_normal(8))
    plan = build_augmented_block(w, np.zeros(8), 1e-4, SP)
    assert len(plan.layers) == 2
    assert all(layer.w.shape == (16, 16) for layer in plan.layers)


def test_augmented_h_decreases():
    w = la.random_matrix(8, 8, 4)
    b = np.random.default_rng(4).uniform(-0.5, 0.5, 8)
    g = GRID[:8]
    e4 = sup_error(build_augmented_block(w, b, 1e-4, SP), g)
    e5 = sup_error(build_augmented_block(w, b, 1e-5, SP), g)
    assert e5 < e4
    assert isinstance(build_augmented_block(w, b, 1e-4, SP), AugmentedBlockPlan)


def test_reset_swap_exact_and_simulated():
    a, b = np.array([1.0, 2.0]), np.array([-3.0, 4.0])
    assert np.array_equal(reset_swap_matrix(2) @ np.concatenate([a, b]), [-3.0, 4.0, 0.0, 0.0])
    plan = build_reset_swap(3, 1e-4, 3, h=1e-5)
    x = np.random.default_rng(0).uniform(-1, 1, 6)
    out = simulate(plan, x)
    assert np.max(np.abs(out[:3] - x[3:])) <= 1e-3
    assert not plan.final_activation


def test_transfer_single_layer_matches_deep_block():
    w = la.random_matrix(5, 5, 1)
    b = np.zeros(5)
    plans = transfer_network([{"w": w, "b": b}], SP, rank_cap=2, h=1e-4, seed=3)
    seed = la.spawn_seeds(3, 1)[0]
    direct = build_deep_block(w, b, 2, 0.8, 1e-4, SP, seed)
    x = GRID[:5]
    assert np.array_equal(simulate(plans, x), simulate(direct, x))


def test_transfer_rectangular_chain():
    rng = np.random.default_rng(0)
    dense = [{"w": rng.standard_normal((4, 2)) / 2, "b": rng.standard_normal(4) / 2},
             {"w": rng.standard_normal((1, 4)) / 2, "b": np.zeros(1), "activation": False}]
    x = rng.uniform(-1, 1, (2, 30))
    for mode, h in (("deep", 1e-5), ("wide", 1e-4)):
        plans = transfer_network(dense, SP, rank_cap=2, h=h, mode=mode)
        assert np.max(np.abs(simulate(plans, x) - reference(plans, x))) < 1e-2


def test_param_counts():
    assert dlor_param_count(16, 1) == 33
    assert dense_layer_sim_count(16) == 528
    assert dlor_param_count(16, 6) == 193


@pytest.mark.parametrize("kind", ["deep", "wide", "augmented"])
def test_plan_json_round_trip(kind):
    w = la.random_matrix(4, 4, 0)
    b = np.linspace(0, 1, 4)
    plan = {"deep": lambda: build_deep_block(w, b, 2, 0.8, 1e-3, SP),
            "wide": lambda: build_wide_block(w, b, 3, 1e-3, SP),
            "augmented": lambda: build_augmented_block(w, b, 1e-3, SP)}[kind]()
    again = plan_from_json(plan_to_json(plan))
    x = GRID[:4]
    assert np.array_equal(simulate(again, x), simulate(plan, x))
    assert sup_error(again, x) == sup_error(plan, x)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 8), st.integers(0, 1000))
def test_deep_block_layers_pass_shape_check(n, seed):
    r = max(1, n // 3)
    w = np.random.default_rng(seed).standard_normal((n, n))
    plan = build_deep_block(w, np.zeros(n), r, 0.8, 1e-3, SP, seed=seed)
    assert all(shape_checks(plan, r))
