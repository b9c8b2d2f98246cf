import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carleman_verify.errors import ExpressionError, InvalidInput
from carleman_verify.expressions import parse_expression


@pytest.mark.parametrize(
    "text, point, expected",
    [
        ("1 + 2*3", (0.0, 0.0), 7.0),
        ("2^3^2", (0.0, 0.0), 512.0),
        ("-x1^2", (3.0, 0.0), -9.0),
        ("sin(pi*x1)*cos(x2)", (0.5, 0.0), 1.0),
        ("exp(x1 - x2) / 2", (1.0, 1.0), 0.5),
        ("1.5e-1 * x2", (0.0, 2.0), 0.3),
    ],
)
def test_values(text, point, expected):
    e = parse_expression(text, 2)
    assert e(np.array(point)) == pytest.approx(expected, rel=1e-14)


def test_broadcast_shapes():
    e = parse_expression("x1*x2 + 1", 2)
    pts = np.zeros((4, 5, 2))
    assert e(pts).shape == (4, 5)
    assert e.grad(pts).shape == (4, 5, 2)
    assert e.hess(pts).shape == (4, 5, 2, 2)
    # constants still broadcast
    assert np.all(parse_expression("3", 2)(pts) == 3.0)


def test_derivatives_sin_sin():
    e = parse_expression("sin(x1)*sin(x2)", 2)
    x = np.array([0.3, -0.7])
    assert np.allclose(e.grad(x), [math.cos(0.3) * math.sin(-0.7), math.sin(0.3) * math.cos(-0.7)])
    lap = np.trace(e.hess(x))
    assert lap == pytest.approx(-2 * math.sin(0.3) * math.sin(-0.7))
    assert e.diff(0)(x) == pytest.approx(e.grad(x)[0])


@pytest.mark.parametrize(
    "text, column",
    [("x1 + ", 4), ("x1 $ 2", 3), ("foo(x1)", 0), ("x3", 0), ("(x1", 3), ("sin x1", 4)],
)
def test_errors_carry_column(text, column):
    with pytest.raises(ExpressionError) as info:
        parse_expression(text, 2)
    assert info.value.position == column
    assert f"column {column + 1}" in str(info.value)  # messages count from 1
    assert isinstance(info.value, InvalidInput)


def test_empty_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("   ", 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_gradient_matches_central_difference(a, b):
    e = parse_expression("exp(x1/2)*cos(x2) + x1*x2^2", 2)
    x = np.array([a, b])
    h = 1e-6
    fd = [(e(x + h * d) - e(x - h * d)) / (2 * h) for d in np.eye(2)]
    assert np.allclose(e.grad(x), fd, rtol=1e-6, atol=1e-6)
