import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ftla.bench import LINEAR7D_MATRIX, SYSTEMS, make_system
from ftla.dsl import linear_field
from ftla.integrate import flow, transition_chain
from ftla.lyap import (
    LyapunovError,
    SplittingError,
    Subspace,
    build_splitting,
    compute_ftle,
    ftle_curves,
    ftle_from_chain,
    lyapunov_subspace,
    orthonormalize,
    principal_angles,
    subspace_distance,
    subspace_ftle_limit,
    subspace_ftles,
)

from conftest import sample_points

# singular-value exponents of expm(A T) for the 7D benchmark, 60-digit
# reference computation (frozen)
L7_FWD = {
    2.0: [-6.5093022676238193, -4.9636607872284293, -0.71045070620895776, -0.1, 1.072963054852248, 3.2798290658899684, 5.730621640318989],
    6.0: [-5.8894270846154639, -5.001564803473177, -0.43682431644010368, -0.1, 0.49099188808864045, 3.7072096112137804, 5.0296147052263229],
}


def _angle(u, v):
    c = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.acos(min(1.0, c))


@pytest.fixture(scope="module")
def l7():
    return linear_field(LINEAR7D_MATRIX)


# singular-value exponents of expm(J T) for the D-S Jacobian at the origin
# (an equilibrium, so this is the exact finite-time spectrum); frozen
# 50-digit reference values
DS_ORIGIN = {4.0: (-3.086601468, -0.9133985317), 8.0: (-3.043321692, -0.9566783082)}


@pytest.mark.parametrize("T", [4.0, 8.0])
def test_ds_origin_against_reference(T):
    vf = make_system("ds").field
    f = compute_ftle(vf, [0.0, 0.0], T, +1)
    b = compute_ftle(vf, [0.0, 0.0], T, -1)
    np.testing.assert_allclose(f.exponents, DS_ORIGIN[T], atol=1e-8)
    np.testing.assert_allclose(b.exponents, -np.array(DS_ORIGIN[T]), atol=1e-8)


@pytest.mark.parametrize("x", [[0.0, 0.0], [1.0, 0.5], [2.0, 1.0], [0.0, 1.0]])
def test_ds_exponents_approach_limits(x):
    vf = make_system("ds").field
    errs = []
    for T in (2.0, 4.0, 8.0):
        f = compute_ftle(vf, x, T, +1)
        errs.append(np.max(np.abs(f.exponents - [-3, -1])))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.05


@pytest.mark.parametrize("T", [2.0, 6.0])
def test_linear7d_against_reference(l7, T):
    f = compute_ftle(l7, np.zeros(7), T, +1)
    b = compute_ftle(l7, np.zeros(7), T, -1)
    np.testing.assert_allclose(f.exponents, L7_FWD[T], rtol=0, atol=1e-8)
    np.testing.assert_allclose(b.exponents, -np.array(L7_FWD[T]), rtol=0, atol=1e-8)


def test_linear7d_qr_pass_gives_diagonal(l7):
    # upper-triangular segments: the unrefined QR recursion accumulates the diagonal
    f = compute_ftle(l7, np.zeros(7), 6.0, +1, method="qr", refine=False)
    np.testing.assert_allclose(f.exponents, np.sort(np.diag(LINEAR7D_MATRIX)), atol=0.05)


def test_unstable_limit_linear7d(l7):
    f = compute_ftle(l7, np.zeros(7), 6.0, +1)
    b = compute_ftle(l7, np.zeros(7), 6.0, -1)
    sp = build_splitting(f, b, 2, 3, 2)
    np.testing.assert_allclose(subspace_ftle_limit(l7, np.zeros(7), sp.Eu, -1), [-2.5, -6.1], atol=0.05)


def test_single_segment_definition():
    vf = make_system("ds").field
    x = np.array([1.0, 0.5])
    ch = transition_chain(vf, x, 0.1, 0.1)
    s = np.linalg.svd(ch.segments[0], compute_uv=False)
    np.testing.assert_allclose(ftle_from_chain(ch).exponents, np.sort(np.log(s) / 0.1), rtol=1e-12)


def test_full_forward_subspace():
    vf = make_system("ds").field
    f = compute_ftle(vf, [1.0, 0.5], 2.0)
    S = lyapunov_subspace(f, 2)
    assert S.dim == 2
    np.testing.assert_allclose(S.projector(), np.eye(2), atol=1e-12)
    with pytest.raises(IndexError):
        lyapunov_subspace(f, 3)


def test_ds_forward_first_vector():
    vf = make_system("ds").field
    f = compute_ftle(vf, [1.0, 0.5], 4.0, +1)
    assert principal_angles(lyapunov_subspace(f, 1), np.array([0.0, 1.0]))[0] < 1e-2


def test_ds_backward_second_vector():
    vf = make_system("ds").field
    b = compute_ftle(vf, [1.0, 0.5], 4.0, -1)
    assert principal_angles(lyapunov_subspace(b, 2), np.array([4.0, 1.0]))[0] < 1e-2


def test_distance_examples():
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert subspace_distance(e1, e1) == 0.0
    assert subspace_distance(e1, e2) == pytest.approx(1.0)
    d = subspace_distance(e1, [math.cos(math.pi / 6), math.sin(math.pi / 6)])
    assert d == pytest.approx(0.5, abs=1e-15)


def test_distance_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        subspace_distance(np.eye(3)[:, :1], np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        subspace_distance(np.eye(3)[:, :1], np.eye(2)[:, :1])


def _subspace(seed, n, k):
    return np.random.default_rng(seed).standard_normal((n, k))


@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.data())
def test_distance_metric_axioms(seed, n, data):
    k = data.draw(st.integers(1, n - 1))
    A, B, C = (_subspace(seed + i, n, k) for i in range(3))
    dAB, dBA = subspace_distance(A, B), subspace_distance(B, A)
    assert 0.0 <= dAB <= 1.0
    assert abs(dAB - dBA) <= 1e-12
    assert subspace_distance(A, A @ np.random.default_rng(seed).standard_normal((k, k))) <= 1e-8
    assert subspace_distance(A, C) <= dAB + subspace_distance(B, C) + 1e-12


def test_triangle_inequality_100_triples():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, n))
        A, B, C = (rng.standard_normal((n, k)) for _ in range(3))
        assert subspace_distance(A, C) <= subspace_distance(A, B) + subspace_distance(B, C) + 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_distance_is_sine_of_largest_angle(seed, n):
    A, B = _subspace(seed, n, 1), _subspace(seed + 1, n, 1)
    assert subspace_distance(A, B) == pytest.approx(math.sin(principal_angles(A, B).max()), abs=1e-12)


def test_subspace_complement():
    S = Subspace(np.zeros(3), np.array([[1.0, 0, 0], [0, 1, 0]]).T)
    C = S.complement()
    assert C.shape == (3, 1)
    assert abs(abs(C[2, 0]) - 1.0) < 1e-14


@pytest.mark.parametrize("name", SYSTEMS)
def test_ftlv_orthonormal(name):
    system = make_system(name)
    x = system.fixtures.get("x1", sample_points(system, 1, seed=2)[0])
    T = 0.5 if name == "msd4d" else 2.0
    for d in (+1, -1):
        data = compute_ftle(system.field, x, T, d)
        n = system.n
        assert np.max(np.abs(data.L.T @ data.L - np.eye(n))) < 1e-10
        assert np.max(np.abs(data.N.T @ data.N - np.eye(n))) < 1e-10


@pytest.mark.parametrize("name", SYSTEMS)
def test_svd_and_qr_agree(name):
    system = make_system(name)
    x = system.fixtures.get("x1", sample_points(system, 1, seed=4)[0])
    ch = transition_chain(system.field, x, 2.0, 0.1)
    a = ftle_from_chain(ch, "svd").exponents
    b = ftle_from_chain(ch, "qr").exponents
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)


def _match_columns(A, B):
    s = np.sign(np.sum(A * B, axis=0))
    return np.max(np.abs(A - B * s))


@pytest.mark.parametrize("name", SYSTEMS)
def test_forward_backward_duality(name):
    system = make_system(name)
    x = system.fixtures.get("x1", sample_points(system, 1, seed=6)[0])
    T = 0.5 if name == "msd4d" else 2.0
    f = compute_ftle(system.field, x, T, +1)
    b = compute_ftle(system.field, f.end, T, -1)
    # forward ascending vs backward descending: same column order
    assert _match_columns(f.L, b.N) < 1e-6
    np.testing.assert_allclose(f.exponents, -b.exponents, atol=1e-8)


def test_qr_vectors_match_svd_left_vectors():
    vf = make_system("ds").field
    ch = transition_chain(vf, np.array([1.0, 0.5]), 3.0, 0.1)
    a = ftle_from_chain(ch, "svd")
    b = ftle_from_chain(ch, "qr")
    assert _match_columns(a.N, b.N) < 1e-4


@pytest.mark.parametrize("name", SYSTEMS)
def test_exponent_sum_is_log_det(name):
    system = make_system(name)
    x = system.fixtures.get("x1", sample_points(system, 1, seed=8)[0])
    T = 0.5 if name == "msd4d" else 2.0
    ch = transition_chain(system.field, x, T, 0.1)
    d = ftle_from_chain(ch)
    sign, logdet = np.linalg.slogdet(ch.product())
    assert sign != 0
    assert np.sum(d.exponents) * T == pytest.approx(logdet, abs=1e-6 * max(1.0, abs(logdet)))


def test_hamiltonian_spectrum_symmetric():
    system = make_system("msd4d")
    for x in system.fixtures.values():
        e = compute_ftle(system.field, x, 0.5, +1).exponents
        np.testing.assert_allclose(e, -e[::-1], atol=0.02)


def test_ftle_curves_match_truncation():
    vf = make_system("ds").field
    ch = transition_chain(vf, np.array([1.0, 0.5]), 1.0, 0.1)
    T, E = ftle_curves(ch, [2, 5, 10])
    np.testing.assert_allclose(T, [0.2, 0.5, 1.0])
    np.testing.assert_allclose(E[1], ftle_from_chain(ch.truncated(5)).exponents)


def test_unknown_method():
    vf = make_system("ds").field
    ch = transition_chain(vf, np.array([1.0, 0.5]), 1.0, 0.1)
    with pytest.raises(ValueError):
        ftle_from_chain(ch, "lu")


def test_orthonormalize_keeps_span():
    B = np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    Q = orthonormalize(B)
    np.testing.assert_allclose(Q.T @ Q, np.eye(2), atol=1e-15)
    assert subspace_distance(Q, B) < 1e-14


# ---------------------------------------------------------------------------
# splitting


def test_splitting_validation():
    vf = make_system("ds").field
    f = compute_ftle(vf, [1.0, 0.5], 2.0, +1)
    b = compute_ftle(vf, [1.0, 0.5], 2.0, -1)
    with pytest.raises(SplittingError):
        build_splitting(b, f, 1, 1, 0)
    with pytest.raises(SplittingError):
        build_splitting(f, b, 1, 2, 0)
    with pytest.raises(SplittingError):
        build_splitting(f, b, 0, 2, 0)
    b2 = compute_ftle(vf, [1.0, 0.6], 2.0, -1)
    with pytest.raises(SplittingError):
        build_splitting(f, b2, 1, 1, 0)
    assert issubclass(SplittingError, LyapunovError)


def test_normal_linear_system_eigenspaces():
    vf = linear_field(np.diag([-4.0, -0.1, 0.2, 5.0]))
    x = np.zeros(4)
    sp = build_splitting(compute_ftle(vf, x, 3.0, +1), compute_ftle(vf, x, 3.0, -1), 1, 2, 1)
    I = np.eye(4)
    assert subspace_distance(sp.Es, I[:, :1]) < 1e-12
    assert subspace_distance(sp.Ec, I[:, 1:3]) < 1e-12
    assert subspace_distance(sp.Eu, I[:, 3:]) < 1e-12


def test_msd4d_complement_vectors():
    system = make_system("msd4d")
    x = system.fixtures["x1"]
    sp = build_splitting(compute_ftle(system.field, x, 0.5, +1), compute_ftle(system.field, x, 0.5, -1), 1, 2, 1)
    l4p = np.array([-0.01, 0.00, -0.16, 0.99])
    assert _angle(sp.W[:, 1], l4p) < 0.02


def test_sys3d_center_tangent_to_flow():
    system = make_system("sys3d")
    x1 = 2.0
    x = np.array([x1, -2 * x1**2, -2 * x1**2])
    sp = build_splitting(compute_ftle(system.field, x, 3.0, +1), compute_ftle(system.field, x, 3.0, -1), 1, 1, 1)
    assert _angle(sp.Ec[:, 0], system.field(x)) < 0.01


def test_eigenline_subspace_exponent():
    A = np.array([[-1.0, 2.0], [0.0, 0.5]])
    vf = linear_field(A)
    x = np.zeros(2)
    sp = build_splitting(compute_ftle(vf, x, 4.0, +1), compute_ftle(vf, x, 4.0, -1), 1, 1, 0)
    # direct propagation of the stable eigenline
    from ftla.lyap import Splitting

    e = np.array([[1.0], [0.0]])
    probe = Splitting(4.0, x, 1, 1, 0, e, sp.Ec, np.zeros((2, 0)), sp.W)
    cv = subspace_ftles(vf, x, probe, [0.5, 1.0, 2.0, 4.0], 0.1)
    np.testing.assert_allclose(cv.get("s", 1)[:, 0], -1.0, atol=1e-9)
    np.testing.assert_allclose(cv.get("s", -1)[:, 0], 1.0, atol=1e-9)


def test_dual_route_matches_direct_propagation():
    # the end-point route for E^s forward must agree with explicit propagation
    # where the latter is still accurate (short T)
    system = make_system("ds")
    vf = system.field
    x = np.array([1.0, 0.5])
    f, b = compute_ftle(vf, x, 1.0, +1), compute_ftle(vf, x, 1.0, -1)
    sp = build_splitting(f, b, 1, 1, 0)
    dual = subspace_ftles(vf, x, sp, [0.2, 0.5, 1.0], 0.1)
    from ftla.lyap import Splitting

    plain = Splitting(sp.T_bar, x, 1, 1, 0, sp.Es, sp.Ec, sp.Eu, sp.W)
    direct = subspace_ftles(vf, x, plain, [0.2, 0.5, 1.0], 0.1)
    np.testing.assert_allclose(dual.get("s", 1), direct.get("s", 1), atol=1e-6)
    np.testing.assert_allclose(dual.get("c", 1), direct.get("c", 1), atol=1e-12)


def test_ftle_end_point():
    vf = make_system("ds").field
    f = compute_ftle(vf, [1.0, 0.5], 1.0)
    np.testing.assert_allclose(f.end, flow(vf, [1.0, 0.5], 1.0), atol=1e-9)
