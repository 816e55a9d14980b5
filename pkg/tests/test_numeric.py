import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgetrain.numeric import (
    PrecisionError,
    PrecisionPolicy,
    Scheme,
    VariableGroup,
    apply_policy,
    cast,
    elementwise,
    matmul,
    matrix,
    width_of,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = a.dtype.type(0)
            for k in range(a.shape[1]):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_identity_product():
    m = matrix([[1.5, -2.0], [0.25, 3.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_hand_product():
    assert matmul(matrix([[1, 2], [3, 4]]), matrix([[1], [1]])).tolist() == [[3.0], [7.0]]


@pytest.mark.parametrize("width", [32, 64])
def test_matmul_matches_triple_loop(width):
    # entries on a 1/8 grid keep every partial sum exact, so summation order cannot matter
    rng = np.random.default_rng(3)
    a = cast(rng.integers(-16, 16, (5, 7)) / 8, width)
    b = cast(rng.integers(-16, 16, (7, 3)) / 8, width)
    got = matmul(a, b)
    assert got.dtype == a.dtype
    assert np.array_equal(got, triple_loop(a, b))


def test_matmul_random_close_to_triple_loop():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=1e-14, atol=1e-15)


def test_matmul_errors():
    with pytest.raises(PrecisionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(PrecisionError):
        matmul(np.ones((2, 2)), np.ones((2, 2), dtype=np.float32))


def test_matmul_associates():
    rng = np.random.default_rng(5)
    a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right) / np.abs(right)) <= 1e-12


def test_cast_examples():
    assert cast(matrix([[0.5]]), 32)[0, 0] == np.float32(0.5)
    round_trip = cast(cast(matrix([[0.1]]), 32), 64)[0, 0]
    assert round_trip == 0.10000000149011612
    m = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal(cast(cast(m, 32), 32), cast(m, 32))


def test_cast_overflow_gives_inf():
    assert np.isinf(cast(matrix([[1e300]]), 32)[0, 0])


def test_policy_tables():
    double, mixed, flt = (PrecisionPolicy.from_scheme(s) for s in ("double", "mixed", "float"))
    assert set(double.widths.values()) == {64}
    assert set(flt.widths.values()) == {32}
    assert {g for g, w in mixed.widths.items() if w == 32} == {VariableGroup.INPUT_DATA, VariableGroup.ACTIVATIONS}


def test_policy_overrides():
    p = PrecisionPolicy(Scheme.MIXED, {VariableGroup.GRADIENTS: 32})
    assert p.width(VariableGroup.GRADIENTS) == 32
    assert p.width(VariableGroup.PARAMETERS) == 64
    with pytest.raises(ValueError):
        PrecisionPolicy(Scheme.DOUBLE, {VariableGroup.GRADIENTS: 16})


def test_apply_policy_examples():
    m = np.arange(6.0).reshape(2, 3)
    mixed = PrecisionPolicy.from_scheme("mixed")
    assert apply_policy(VariableGroup.PARAMETERS, mixed, m) is m
    act = apply_policy(VariableGroup.ACTIVATIONS, mixed, m)
    assert act.dtype == np.float32 and act is not m
    for g in VariableGroup:
        assert apply_policy(g, PrecisionPolicy.from_scheme("float"), m).dtype == np.float32


@settings(max_examples=50)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)),
    st.sampled_from(list(Scheme)),
    st.sampled_from(list(VariableGroup)),
)
def test_apply_policy_idempotent(m, scheme, group):
    p = PrecisionPolicy.from_scheme(scheme)
    once = apply_policy(group, p, m)
    twice = apply_policy(group, p, once)
    assert once.dtype == twice.dtype and np.array_equal(once, twice)
    if scheme is Scheme.DOUBLE:
        assert once.tobytes() == m.tobytes()


def test_elementwise_values():
    zero = matrix([[0.0]])
    assert elementwise("sigmoid", zero)[0, 0] == 0.5
    assert elementwise("tanh", zero)[0, 0] == 0.0
    assert elementwise("sigmoid", matrix([[1.0]]))[0, 0] == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)
    assert elementwise("sigmoid", matrix([[1.0]]))[0, 0] == pytest.approx(0.7310586, abs=5e-8)


def test_elementwise_derivatives_match_finite_differences():
    x = np.linspace(-3, 3, 13).reshape(1, -1)
    d = 1e-6
    for f, df in (("sigmoid", "dsigmoid"), ("tanh", "dtanh")):
        fd = (elementwise(f, x + d) - elementwise(f, x - d)) / (2 * d)
        np.testing.assert_allclose(elementwise(df, x), fd, rtol=1e-8)


def test_sigmoid_saturates_without_warnings():
    with np.errstate(all="raise"):
        s = elementwise("sigmoid", matrix([[-1000.0, 1000.0]], 32))
    assert s.tolist() == [[0.0, 1.0]]


@pytest.mark.parametrize("width", [32, 64])
@pytest.mark.parametrize("op", ["add", "sub", "hadamard", "sigmoid", "tanh", "dsigmoid", "dtanh"])
def test_no_silent_promotion(op, width):
    a = cast(np.full((2, 2), 0.3), width)
    out = elementwise(op, a, a) if op in ("add", "sub", "hadamard") else elementwise(op, a)
    assert width_of(out) == width


def test_elementwise_errors():
    with pytest.raises(PrecisionError):
        elementwise("add", np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(PrecisionError):
        elementwise("hadamard", np.ones((2, 2)), np.ones((2, 2), np.float32))
    with pytest.raises(ValueError):
        elementwise("relu", np.ones((2, 2)))
