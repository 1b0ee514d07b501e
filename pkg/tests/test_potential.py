import numpy as np
import pytest
from hypothesis import given, strategies as st

from glx.potential import (PotentialError, cosine_perturbed, evaluate, from_config, quadratic,
                           reference_stiffness, user_table)


@given(st.floats(-0.99, 0.99), st.floats(-20, 20))
def test_cosine_derivatives_and_bounds(kappa, x):
    p = cosine_perturbed(kappa)
    v, d1, d2 = evaluate(p, x)
    h = 1e-5
    assert abs(d1 - (evaluate(p, x + h)[0] - evaluate(p, x - h)[0]) / (2 * h)) < 1e-5 * (1 + abs(x))
    assert p.c_minus - 1e-12 <= d2 <= p.c_plus + 1e-12
    assert evaluate(p, -x)[0] == pytest.approx(v)


def test_cosine_rejects_nonconvex():
    with pytest.raises(PotentialError):
        cosine_perturbed(1.0)
    with pytest.raises(PotentialError):
        from_config("cosine-perturbed", [])
    with pytest.raises(PotentialError):
        from_config("mystery", [])


def test_quadratic():
    assert evaluate(quadratic(), 3.0) == (4.5, 3.0, 1.0)
    assert reference_stiffness(quadratic()) == 1.0


def test_user_table_reproduces_quadratic():
    x = np.linspace(0, 4, 9)
    p = user_table(x, 0.75 * x**2)
    xs = np.linspace(-6, 6, 101)
    v, d1, d2 = evaluate(p, xs)
    assert np.allclose(v, 0.75 * xs**2, atol=1e-10)
    assert np.allclose(d2, 1.5, atol=1e-9)
    assert p.c_minus == pytest.approx(1.5) and p.c_plus == pytest.approx(1.5)


def test_user_table_bounds_are_attained_on_knots():
    x = np.linspace(0, 3, 13)
    p = user_table(x, x**2 / 2 + 0.2 * (1 - np.cos(x)))
    d2 = evaluate(p, np.linspace(-3, 3, 2001))[2]
    assert d2.min() >= p.c_minus - 1e-9 and d2.max() <= p.c_plus + 1e-9


def test_user_table_rejects_concave():
    x = np.linspace(0, 3, 7)
    with pytest.raises(PotentialError):
        user_table(x, -x**2)
    with pytest.raises(PotentialError):
        user_table([0, 2, 1], [0, 1, 2])


def test_reference_stiffness_between_bounds():
    p = cosine_perturbed(0.3)
    c = reference_stiffness(p)
    assert p.c_minus < c < p.c_plus
    # fixed point: E V''(sd Z) with sd = 1/sqrt(4c)
    z = np.random.default_rng(0).standard_normal(400_000)
    assert abs(evaluate(p, z / np.sqrt(4 * c))[2].mean() - c) < 3e-3
