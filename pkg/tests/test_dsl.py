import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ftla.bench import SYSTEMS, make_system
from ftla.dsl import (
    Binary,
    Const,
    DimensionError,
    DSLSyntaxError,
    EvaluationError,
    Unary,
    UnknownIdentifierError,
    Var,
    eval_field,
    eval_jacobian,
    linear_field,
    load_field,
    parse_expression,
    parse_field,
    parse_field_file,
    to_source,
)

from conftest import sample_points

DS_SRC = "-x1 ; -g*x2 + ((g-1)*x1 + g*x1^2)/(1+x1)^2"


def test_ds_field_value():
    vf = parse_field(DS_SRC, 2, {"g": 3.0})
    np.testing.assert_allclose(eval_field(vf, [1.0, 0.5]), [-1.0, -0.25], rtol=0, atol=1e-15)


def test_equilibrium_is_zero():
    vf = parse_field(DS_SRC, 2, {"g": 3.0})
    assert np.all(eval_field(vf, [0.0, 0.0]) == 0.0)


def test_sys3d_value():
    vf = make_system("sys3d").field
    np.testing.assert_allclose(vf([1.0, -2.0, -2.0]), [-0.2, 0.8, 0.8], atol=1e-14)


def test_ds_jacobian():
    vf = parse_field(DS_SRC, 2, {"g": 3.0})
    np.testing.assert_allclose(eval_jacobian(vf, [1.0, 0.3]), [[-1, 0], [0.75, -3]], atol=1e-15)


def test_linear_jacobian_is_constant():
    A = np.array([[1.0, 2.0], [-3.0, 0.5]])
    vf = linear_field(A)
    for x in ([0, 0], [5, -1], [1e3, 2]):
        np.testing.assert_array_equal(vf.jacobian(x), A)


def test_arity_mismatch():
    with pytest.raises(DimensionError):
        parse_field("-x1 ; x2", 1)
    with pytest.raises(DimensionError):
        parse_field("-x1 ; x2", 3)


def test_syntax_error_position():
    with pytest.raises(DSLSyntaxError) as info:
        parse_field("x1 + * x2 ; x1", 2)
    assert info.value.line == 1
    assert info.value.column == 6


def test_state_beyond_dimension():
    with pytest.raises(DimensionError):
        parse_field("x3 ; x1", 2)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse_field("k*x1 ; x2", 2)
    assert info.value.name == "k"


@pytest.mark.parametrize("src", ["2 x1", "x1 x2", "(x1)(x2)", "x1 (x2)"])
def test_juxtaposition_rejected(src):
    # "x1 (x2)" reads as a call of an unknown function
    with pytest.raises((DSLSyntaxError, UnknownIdentifierError)):
        parse_expression(src, 2)


@pytest.mark.parametrize(
    "src,expected",
    [
        ("2^3^2", 512.0),
        ("-2^2", -4.0),
        ("(-2)^2", 4.0),
        ("1 - 2 - 3", -4.0),
        ("8 / 4 / 2", 1.0),
        ("2 + 3*4", 14.0),
        ("2*3^2", 18.0),
        ("exp(ln(2))", 2.0),
        ("sqrt(16) + sin(0) + cos(0)", 5.0),
        ("1.5e1", 15.0),
    ],
)
def test_precedence(src, expected):
    vf = parse_field(f"{src} ; x1", 2)
    assert vf([0.0, 0.0])[0] == pytest.approx(expected, abs=1e-14)


def test_power_is_right_associative_tree():
    e = parse_expression("x1^x2^2", 2)
    assert isinstance(e, Binary) and e.op == "^"
    assert e.left == Var(1)
    assert isinstance(e.right, Binary) and e.right.left == Var(2)


def test_unary_minus_binds_looser_than_power():
    e = parse_expression("-x1^2", 1 + 1)
    assert isinstance(e, Unary) and e.op == "neg"


def test_eval_rejects_nonfinite():
    vf = parse_field("1/x1 ; x2", 2)
    with pytest.raises(EvaluationError):
        eval_field(vf, [0.0, 1.0])


def test_with_params_shares_parse():
    vf = parse_field(DS_SRC, 2, {"g": 3.0})
    vf10 = vf.with_params(g=10.0)
    assert vf10.components is vf.components
    assert vf10([1.0, 0.0])[1] == pytest.approx((9 + 10) / 4)
    assert vf([1.0, 0.0])[1] == pytest.approx((2 + 3) / 4)
    with pytest.raises(UnknownIdentifierError):
        vf.with_params(h=1.0)


def test_batch_evaluation():
    vf = parse_field(DS_SRC, 2, {"g": 3.0})
    X = np.array([[1.0, 0.5], [0.0, 0.0], [2.0, 1.0]])
    np.testing.assert_array_equal(vf(X), np.array([vf(x) for x in X]))
    J = vf.jacobian(X)
    assert J.shape == (3, 2, 2)
    np.testing.assert_array_equal(J[2], vf.jacobian(X[2]))


def test_file_format(tmp_path):
    text = """# damped oscillator
params:
  k = 2.0   # stiffness
  c = 0.5
field:
  x2
  -k*x1 - c*x2
"""
    p = tmp_path / "osc.fld"
    p.write_text(text)
    vf = load_field(p)
    assert vf.n == 2 and vf.name == "osc"
    np.testing.assert_allclose(vf([1.0, 1.0]), [1.0, -2.5])


def test_file_errors_report_lines():
    with pytest.raises(DSLSyntaxError) as info:
        parse_field_file("params:\n  k = abc\nfield:\n x2\n x1\n")
    assert info.value.line == 2
    with pytest.raises(DSLSyntaxError) as info:
        parse_field_file("field:\n x2\n x1 + * 2\n")
    assert info.value.line == 3
    with pytest.raises(DSLSyntaxError):
        parse_field_file("params:\n k = 1\n")


def test_pickle_roundtrip():
    vf = make_system("msd4d").field
    vf2 = pickle.loads(pickle.dumps(vf))
    x = np.array([3.0, -2.0, 7.5, 2.0])
    np.testing.assert_array_equal(vf(x), vf2(x))
    np.testing.assert_array_equal(vf.jacobian(x), vf2.jacobian(x))


def _central_fd(vf, x, h=1e-6):
    n = len(x)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(x[j]))
        J[:, j] = (vf(x + e) - vf(x - e)) / (2 * e[j])
    return J


@pytest.mark.parametrize("name", SYSTEMS)
def test_ad_matches_finite_differences(name):
    system = make_system(name)
    vf = system.field
    for x in sample_points(system, 100, seed=1):
        J = vf.jacobian(x)
        Jfd = _central_fd(vf, x)
        assert np.all(np.abs(J - Jfd) <= np.maximum(1e-6, 1e-6 * np.abs(J)))


def test_msd4d_jacobian_hand_coded():
    system = make_system("msd4d")
    p = system.params
    m, k1, k2, c = p["m"], p["k1"], p["k2"], p["c"]
    for x in system.fixtures.values():
        x1, x2, l1, l2 = x
        J = np.array(
            [
                [0, 1, 0, 0],
                [-(k1 + 3 * k2 * x1**2) / m, -c / m, 0, -1 / m**2],
                [6 * k2 * x1 * l2 / m, 0, 0, (k1 + 3 * k2 * x1**2) / m],
                [0, 0, -1, c / m],
            ]
        )
        np.testing.assert_allclose(system.field.jacobian(x), J, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", SYSTEMS)
def test_field_and_jacobian_are_pure(name):
    system = make_system(name)
    x = sample_points(system, 1, seed=3)[0]
    a, b = system.field(x), system.field(x.copy())
    assert np.array_equal(a, b)
    assert np.array_equal(system.field.jacobian(x), system.field.jacobian(x))


# random expression trees for the print/parse round trip
_leaves = st.one_of(
    st.floats(0.0, 50.0, allow_nan=False).map(lambda v: Const(round(v, 3))),
    st.integers(1, 3).map(Var),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from(["+", "-", "*", "/", "^"]), children, children).map(lambda t: Binary(*t)),
        st.tuples(st.sampled_from(["neg", "sin", "cos", "exp"]), children).map(lambda t: Unary(*t)),
    )


_exprs = st.recursive(_leaves, _extend, max_leaves=8)


@given(_exprs)
def test_print_parse_roundtrip(expr):
    src = to_source(expr)
    again = parse_expression(src, 3)
    vf1 = parse_field(f"{src} ; x1 ; x2", 3)
    vf2 = parse_field(f"{to_source(again)} ; x1 ; x2", 3)
    pts = np.random.default_rng(0).uniform(-2, 2, size=(100, 3))
    with np.errstate(all="ignore"):
        a, b = vf1(pts)[:, 0], vf2(pts)[:, 0]
    assert np.array_equal(a, b, equal_nan=True)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_ds_closure_matches_field(x1, x2):
    system = make_system("ds")
    if abs(1 + x1) < 1e-3:
        return
    x = np.array([x1, x2])
    np.testing.assert_allclose(system.field(x), system.closure(x, system.params), rtol=1e-13, atol=1e-12)


def test_ds_jacobian_formula():
    # entry (2,1) of the D-S Jacobian: ((g-1) + (g+1) x1) / (1+x1)^3
    g = 3.0
    vf = parse_field(DS_SRC, 2, {"g": g})
    for x1 in (0.0, 0.5, 1.0, 2.0):
        assert vf.jacobian([x1, 0.0])[1, 0] == pytest.approx(((g - 1) + (g + 1) * x1) / (1 + x1) ** 3, rel=1e-14)
    assert math.isclose(vf.jacobian([1.0, 0.0])[1, 0], 0.75)
