import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ftla.bench import make_system, reference_manifold
from ftla.diagnose import Region, splitting_at
from ftla.dsl import linear_field
from ftla.manifold import (
    ManifoldError,
    Parametrization,
    SingularJacobianError,
    SolverSchedule,
    choose_parametrization,
    ftla_estimator,
    invariance_percent,
    newton,
    orthogonality_residual,
    planar_error_model,
    solve_manifold,
    solve_manifold_point,
)

DS_PARAM = Parametrization((0,), (1,))
S3_PARAM = Parametrization((0,), (1, 2))


@pytest.fixture(scope="module")
def ds():
    return make_system("ds")


@pytest.fixture(scope="module")
def s3():
    return make_system("sys3d")


# ---------------------------------------------------------------------------
# parametrization


def test_parametrization_assemble_split():
    p = Parametrization.from_independent([2, 0], 4)
    assert p.independent == (0, 2) and p.dependent == (1, 3)
    x = p.assemble([1.0, 3.0], [2.0, 4.0])
    np.testing.assert_array_equal(x, [1, 2, 3, 4])
    ind, dep = p.split(x)
    np.testing.assert_array_equal(ind, [1, 3])
    np.testing.assert_array_equal(dep, [2, 4])


@pytest.mark.parametrize("ind, dep", [((0, 1), (1, 2)), ((0,), (2,)), ((), (0, 1)), ((0, 1), ())])
def test_parametrization_rejects_bad_indices(ind, dep):
    with pytest.raises(ValueError):
        Parametrization(ind, dep)


def test_choose_parametrization_axis_aligned():
    W = np.eye(3)[:, 1:]
    assert choose_parametrization(W) == Parametrization((0,), (1, 2))
    assert choose_parametrization(np.array([0.0, 0.0, 1.0])).dependent == (2,)


def test_choose_parametrization_benchmarks(ds):
    sp = splitting_at(ds.field, [1.0, 0.5], 2.0, (1, 1, 0))
    assert choose_parametrization(sp) == DS_PARAM
    h = make_system("msd4d")
    sp = splitting_at(h.field, h.fixtures["x1"], 0.5, (1, 2, 1))
    assert choose_parametrization(sp) == Parametrization((0, 2), (1, 3))


def test_choose_parametrization_errors():
    with pytest.raises(ManifoldError):
        choose_parametrization(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        choose_parametrization(np.eye(3))


# ---------------------------------------------------------------------------
# orthogonality conditions


def test_orthogonality_residual_examples(ds):
    # on the manifold f is tangent to it, so only the true normal gives zero;
    # against [0, 1] the residual is the slow drift x2' = -1/(1+x1)^2
    assert orthogonality_residual(ds.field, [1.0, 0.5], [0.0, 1.0]) == pytest.approx([-0.25], abs=1e-15)
    normal = np.array([-0.25, 1.0]) / math.hypot(0.25, 1.0)
    assert orthogonality_residual(ds.field, [1.0, 0.5], normal) == pytest.approx([0.0], abs=1e-15)
    assert orthogonality_residual(ds.field, [1.0, 0.6], [0.0, 1.0]) == pytest.approx([-0.55], abs=1e-14)
    np.testing.assert_array_equal(orthogonality_residual(ds.field, [0.0, 0.0], np.eye(2)), [0.0, 0.0])


def test_newton_solves_and_reports():
    d, it = newton(lambda d: np.array([d[0] ** 2 - 2.0, d[1] - d[0]]), [1.0, 0.0])
    np.testing.assert_allclose(d, [math.sqrt(2)] * 2, rtol=1e-12)
    assert 1 <= it < 20
    with pytest.raises(SingularJacobianError):
        newton(lambda d: np.array([0.0 * d[0] + 1.0]), [0.0])
    with pytest.raises(ManifoldError):
        newton(lambda d: np.array([d[0] ** 2 + 1.0]), [0.3], max_iter=5)


# ---------------------------------------------------------------------------
# planar error model


def test_planar_error_model_examples():
    assert planar_error_model(0.0, 0.7, 2.0, -3.0) == 0.0
    assert planar_error_model(0.01, math.pi / 2 - 0.01, 1.0, 1.0) == pytest.approx(-math.sin(0.01), rel=1e-12)
    with pytest.raises(ZeroDivisionError):
        planar_error_model(0.1, -0.1, 1.0, 1.0)
    with pytest.raises(ZeroDivisionError):
        planar_error_model(0.1, 0.3, 1.0, 0.0)


@given(st.floats(1e-3, 0.2), st.floats(0.01, 1.3), st.floats(0.01, 1.3))
def test_planar_error_grows_as_delta_shrinks(eps, d1, d2):
    lo, hi = sorted((d1, d2))
    if hi - lo < 1e-9:
        return
    assert abs(planar_error_model(eps, lo, 1.0, 1.0)) > abs(planar_error_model(eps, hi, 1.0, 1.0))


# ---------------------------------------------------------------------------
# nested solver


def test_schedule_validation():
    assert SolverSchedule(T_fwd=0.7).T_bwd == 0.7
    assert not SolverSchedule.fixed(2.0).adaptive
    assert SolverSchedule().adaptive
    for kw in ({"T_fwd": 0.0}, {"dT_fwd": -0.1}, {"max_inner": 0}):
        with pytest.raises(ValueError):
            SolverSchedule(**kw)


def test_ds_point(ds):
    p = solve_manifold_point(ds.field, [1.0], [0.3], (1, 1, 0), DS_PARAM, SolverSchedule.fixed(2.0))
    assert p.converged and p.outer_iterations == 1
    assert abs(p.x[1] - 0.5) < 1e-3
    np.testing.assert_array_equal(p.independent, [1.0])


def test_ds_grid_keeps_input_order(ds):
    vals = [2.0, 0.25, 1.0, 0.5, 1.5]
    pts = solve_manifold(ds.field, vals, [0.3], (1, 1, 0), DS_PARAM, SolverSchedule.fixed(2.0))
    got = np.array([p.x for p in pts])
    np.testing.assert_array_equal(got[:, 0], vals)
    np.testing.assert_allclose(got[:, 1], reference_manifold(ds, np.array(vals))[:, 0], atol=1e-3)


def test_sys3d_point(s3):
    p = solve_manifold_point(s3.field, [2.0], [0.0, 0.0], (1, 1, 1), S3_PARAM, SolverSchedule.fixed(3.0))
    np.testing.assert_allclose(p.dependent, [-8.0, -8.0], atol=1e-2)


def test_sys3d_error_decreases_with_averaging_time(s3):
    x1 = [-10.0, -5.0, 2.0, 5.0, 10.0]
    errs = []
    for T in (1.0, 2.0, 3.0):
        pts = solve_manifold(s3.field, x1, [0.0, 0.0], (1, 1, 1), S3_PARAM, SolverSchedule.fixed(T))
        errs.append([np.linalg.norm(p.dependent - s3.manifold(p.x[0])) for p in pts])
    errs = np.array(errs)
    assert np.all(errs[0] > errs[1]) and np.all(errs[1] > errs[2])


@pytest.mark.parametrize(
    "name, param, dims, ind, guess, schedule",
    [
        ("ds", DS_PARAM, (1, 1, 0), [0.7], [0.3], SolverSchedule(T_fwd=0.5)),
        ("ds", DS_PARAM, (1, 1, 0), [1.7], [0.3], SolverSchedule.fixed(2.0)),
        ("sys3d", S3_PARAM, (1, 1, 1), [1.5], [0.0, 0.0], SolverSchedule.fixed(3.0)),
        ("sys3d", S3_PARAM, (1, 1, 1), [-7.0], [0.0, 0.0], SolverSchedule.fixed(2.0, 1.0)),
    ],
)
def test_audit_fields_meet_stopping_criteria(name, param, dims, ind, guess, schedule):
    vf = make_system(name).field
    p = solve_manifold_point(vf, ind, guess, dims, param, schedule)
    assert p.converged
    fx = np.linalg.norm(vf(p.x))
    assert np.all(np.abs(p.residuals) / max(1.0, fx) < schedule.tol_residual)
    assert p.theta < schedule.tol_theta
    assert p.max_change < schedule.tol_change
    assert len(p.inner_iterations) == p.outer_iterations
    if schedule.adaptive:
        assert p.outer_change < schedule.tol_outer
        assert p.T_fwd > schedule.T_fwd and p.T_bwd > schedule.T_bwd
    else:
        assert (p.T_fwd, p.T_bwd) == (schedule.T_fwd, schedule.T_bwd)


def test_adaptive_schedule_can_run_out_of_passes(s3):
    sch = SolverSchedule(T_fwd=0.5, max_outer=3)
    p = solve_manifold_point(s3.field, [1.5], [0.0, 0.0], (1, 1, 1), S3_PARAM, sch)
    assert p.status == "max_outer" and p.flagged
    assert p.outer_iterations == 3
    assert p.T_fwd == pytest.approx(0.5 + 2 * sch.dT_fwd)


@pytest.mark.parametrize("schedule", [SolverSchedule.fixed(2.0), SolverSchedule(T_fwd=0.5)])
def test_ds_idempotence(ds, schedule):
    p = solve_manifold_point(ds.field, [1.3], [0.3], (1, 1, 0), DS_PARAM, schedule)
    q = solve_manifold_point(ds.field, [1.3], p.dependent, (1, 1, 0), DS_PARAM, schedule)
    assert np.max(np.abs(q.x - p.x)) < schedule.tol_outer


def test_escape_freezes_one_direction(ds):
    sch = SolverSchedule(T_fwd=0.5)
    p = solve_manifold_point(ds.field, [1.0], [0.3], (1, 1, 0), DS_PARAM, sch, Region(((0.9, 1.1), (0.4, 0.6))))
    assert "backward escape" in p.halt_reason
    # the forward time kept growing after the backward one was frozen
    assert p.T_fwd > p.T_bwd + 1.0
    assert abs(p.x[1] - 0.5) < 1e-3


def test_escape_at_initial_times_raises(ds):
    with pytest.raises(ManifoldError, match="initial averaging times"):
        solve_manifold_point(
            ds.field, [1.0], [0.3], (1, 1, 0), DS_PARAM, SolverSchedule(T_fwd=0.5), Region(((0.999, 1.0), (0.5, 0.5)))
        )


def test_solver_argument_checks(ds):
    with pytest.raises(ValueError):
        solve_manifold_point(ds.field, [1.0, 2.0], [0.3], (1, 1, 0), DS_PARAM)
    with pytest.raises(ValueError):
        solve_manifold_point(ds.field, [1.0], [0.3], (0, 1, 0), DS_PARAM)


def test_inner_loop_failure_is_reported(ds):
    with pytest.raises(ManifoldError, match="inner loop"):
        solve_manifold_point(ds.field, [1.0], [0.3], (1, 1, 0), DS_PARAM, SolverSchedule.fixed(2.0, max_inner=1))


# ---------------------------------------------------------------------------
# invariance percent


def test_invariance_zero_time_is_zero(ds):
    p = solve_manifold_point(ds.field, [1.0], [0.3], (1, 1, 0), DS_PARAM, SolverSchedule.fixed(2.0))
    est = ftla_estimator(ds.field, (1, 1, 0), DS_PARAM, SolverSchedule.fixed(2.0))
    rep = invariance_percent(ds.field, p, 0.0, 0.0, est)
    assert rep.values == {(1, 1): 0.0, (1, -1): 0.0}


def test_invariance_on_the_exact_manifold(ds):
    def exact(ind, guess):
        return np.array([ind[0], ind[0] / (1 + ind[0])])

    rep = invariance_percent(ds.field, [1.0, 0.5], 1.0, -0.5, exact, DS_PARAM)
    assert rep.max() < 1e-6
    # an off-manifold point shows up in both directions
    rep = invariance_percent(ds.field, [1.0, 0.55], 1.0, -0.5, exact, DS_PARAM)
    assert rep.get(1, 1) > 0.5 and rep.get(1, -1) > 0.5
    assert all(v >= 0 for v in rep.values.values())


def test_invariance_ftla_ds(ds):
    sch = SolverSchedule.fixed(2.0)
    p = solve_manifold_point(ds.field, [1.0], [0.3], (1, 1, 0), DS_PARAM, sch)
    rep = invariance_percent(ds.field, p, 1.0, -0.5, ftla_estimator(ds.field, (1, 1, 0), DS_PARAM, sch))
    assert rep.max() < 0.5


def test_invariance_argument_checks(ds):
    def est(ind, guess):
        return np.array([ind[0], guess[0]])

    with pytest.raises(ValueError):
        invariance_percent(ds.field, [1.0, 0.5], -1.0, -0.5, est, DS_PARAM)
    with pytest.raises(ValueError):
        invariance_percent(ds.field, [1.0, 0.5], 1.0, -0.5, est)
    with pytest.raises(ValueError):
        invariance_percent(ds.field, [1.0, 0.5], 1.0, -0.5, None, DS_PARAM)

    def broken(ind, guess):
        raise RuntimeError("no root")

    with pytest.raises(ManifoldError, match="re-estimation failed"):
        invariance_percent(ds.field, [1.0, 0.5], 1.0, -0.5, broken, DS_PARAM)
