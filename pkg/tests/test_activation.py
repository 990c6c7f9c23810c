import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlor.activation import (
    ActivationSpec,
    default_expansion_point,
    deriv,
    make_activation,
    require_expansion,
    slope_from_output,
    slope_vec,
)
from dlor.errors import NoExpansionPoint, NonDifferentiablePoint

SMOOTH = ("softplus", "sigmoid", "tanh")


def test_default_points():
    assert default_expansion_point("softplus") == 0.5
    spec = make_activation("relu")
    assert spec.c == 1.0 and spec.drho_c == 1.0
    with pytest.raises(NoExpansionPoint):
        default_expansion_point("heaviside")


def test_heaviside_has_no_expansion():
    with pytest.raises(NoExpansionPoint):
        require_expansion(make_activation("heaviside"))


def test_unknown_name():
    with pytest.raises(ValueError):
        make_activation("swish")


def test_softplus_is_stable_for_large_inputs():
    sp = make_activation("softplus")
    x = np.array([-800.0, -40.0, 0.0, 40.0, 800.0])
    y = sp(x)
    assert np.all(np.isfinite(y))
    assert y[-1] == 800.0 and y[0] == 0.0
    assert y[2] == pytest.approx(np.log(2.0))


def test_values_match_reference_formulas():
    x = np.linspace(-5, 5, 41)
    assert np.allclose(make_activation("softplus")(x), np.log1p(np.exp(x)))
    assert np.allclose(make_activation("sigmoid")(x), 1 / (1 + np.exp(-x)))
    assert np.allclose(make_activation("tanh")(x), np.tanh(x))
    assert np.array_equal(make_activation("relu")(x), np.maximum(x, 0))
    assert np.array_equal(make_activation("heaviside")(x), (x >= 0).astype(float))
    assert make_activation("heaviside")(-0.5) == 0.0


@pytest.mark.parametrize("name", SMOOTH)
def test_derivative_matches_central_difference(name):
    spec = make_activation(name)
    x = np.linspace(-4, 4, 17)
    step = 1e-6
    fd = (spec(x + step) - spec(x - step)) / (2 * step)
    assert np.allclose(deriv(spec, x), fd, atol=1e-8)
    assert np.allclose(slope_vec(spec, x), fd, atol=1e-8)


@pytest.mark.parametrize("name", SMOOTH + ("relu",))
def test_slope_from_output_agrees(name):
    spec = make_activation(name)
    x = np.linspace(-4, 4, 16)  # avoids 0 exactly
    assert np.allclose(slope_from_output(spec, spec(x)), slope_vec(spec, x), atol=1e-12)


def test_relu_kink_raises_on_pointwise_derivative():
    with pytest.raises(NonDifferentiablePoint):
        deriv(make_activation("relu"), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(SMOOTH + ("relu",)), st.floats(-3, 3))
def test_spec_json_round_trip(name, c):
    if name == "relu" and c <= 0:
        c = 1.0
    spec = make_activation(name, c)
    again = ActivationSpec.from_json(spec.to_json())
    assert again == spec
