"""Center-manifold points from the orthogonality conditions.

A point lies on the finite-time center manifold when the vector field has
no component along the complement of the center subspace, i.e. when
``W.T @ f(x) = 0`` for the complement basis ``W`` of the splitting.  The
conditions are solved for the dependent coordinates with the independent
ones held fixed.  The averaging times are raised between outer passes,
while the inner passes refresh the vectors at each new iterate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .diagnose import Region
from .dsl import VectorField
from .integrate import DEFAULT_DT, EscapeError, flow
from .lyap import DegenerateSpectrumWarning, Splitting, build_splitting, compute_ftle

__all__ = [
    "ManifoldError",
    "SingularJacobianError",
    "Parametrization",
    "SolverSchedule",
    "ManifoldPoint",
    "IPReport",
    "choose_parametrization",
    "orthogonality_residual",
    "newton",
    "solve_manifold_point",
    "solve_manifold",
    "ftla_estimator",
    "invariance_percent",
    "planar_error_model",
]


class ManifoldError(RuntimeError):
    """Manifold-point iteration failed."""


class SingularJacobianError(ManifoldError):
    pass


class _InnerStall(ManifoldError):
    pass


# ---------------------------------------------------------------------------
# parametrization


@dataclass(frozen=True)
class Parametrization:
    """Split of the coordinates into independent and dependent (0-based)."""

    independent: tuple[int, ...]
    dependent: tuple[int, ...]

    def __post_init__(self):
        ind = tuple(int(i) for i in self.independent)
        dep = tuple(int(i) for i in self.dependent)
        object.__setattr__(self, "independent", ind)
        object.__setattr__(self, "dependent", dep)
        if set(ind) & set(dep):
            raise ValueError("independent and dependent indices overlap")
        if sorted(ind + dep) != list(range(len(ind) + len(dep))):
            raise ValueError("indices must cover 0..n-1 exactly once")
        if not ind or not dep:
            raise ValueError("need at least one independent and one dependent coordinate")

    @classmethod
    def from_independent(cls, independent, n: int) -> "Parametrization":
        ind = tuple(sorted(int(i) for i in independent))
        return cls(ind, tuple(i for i in range(n) if i not in ind))

    @property
    def n(self) -> int:
        return len(self.independent) + len(self.dependent)

    def assemble(self, indep, dep) -> np.ndarray:
        x = np.empty(self.n)
        x[list(self.independent)] = indep
        x[list(self.dependent)] = dep
        return x

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return x[list(self.independent)].copy(), x[list(self.dependent)].copy()


def choose_parametrization(splitting, rank_tol: float = 1e-8) -> Parametrization:
    """Pick the dependent coordinates as the highest-leverage rows of the
    complement basis (column-pivoted QR of its transpose).

    ``splitting`` is a :class:`Splitting` or an ``(n, m)`` complement basis.
    """
    W = splitting.W if isinstance(splitting, Splitting) else np.asarray(splitting, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    n, m = W.shape
    if not 1 <= m < n:
        raise ValueError("complement basis must have between 1 and n-1 columns")
    _, R, piv = scipy.linalg.qr(W.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d[-1] <= rank_tol * max(d[0], 1e-300):
        raise ManifoldError("complement basis is rank-deficient")
    dep = tuple(sorted(int(i) for i in piv[:m]))
    return Parametrization(tuple(i for i in range(n) if i not in dep), dep)


def orthogonality_residual(vf: VectorField, x, W) -> np.ndarray:
    """Inner products of f(x) with the complement-basis columns."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    return W.T @ vf(np.asarray(x, dtype=float))


def _center_angle(fx, W) -> float:
    """Angle between ``fx`` and its orthogonal projection onto null(W.T)."""
    nf = np.linalg.norm(fx)
    if nf == 0:
        return 0.0
    Q, _ = np.linalg.qr(W)
    perp = Q @ (Q.T @ fx)
    return float(math.atan2(np.linalg.norm(perp), np.linalg.norm(fx - perp)))


# ---------------------------------------------------------------------------
# damped Newton


def newton(
    fun: Callable[[np.ndarray], np.ndarray],
    d0,
    ftol: float = 1e-13,
    xtol: float = 1e-14,
    max_iter: int = 50,
    fd_step: float = 1e-7,
) -> tuple[np.ndarray, int]:
    """Damped Newton with a forward-difference Jacobian.

    The step is halved while the residual norm increases.  Returns the
    solution and the number of iterations.
    """
    d = np.array(d0, dtype=float)
    r = np.asarray(fun(d), dtype=float)
    rn = np.linalg.norm(r)
    for it in range(1, max_iter + 1):
        if rn <= ftol:
            return d, it - 1
        J = np.empty((len(r), len(d)))
        for j in range(len(d)):
            h = fd_step * max(1.0, abs(d[j]))
            e = d.copy()
            e[j] += h
            J[:, j] = (fun(e) - r) / h
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            raise SingularJacobianError("residual Jacobian is singular")
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while True:
            trial = d + lam * step
            rt = np.asarray(fun(trial), dtype=float)
            rtn = np.linalg.norm(rt) if np.all(np.isfinite(rt)) else np.inf
            if rtn <= rn or lam < 1e-3:
                break
            lam /= 2
        if not np.isfinite(rtn):
            raise ManifoldError("residual became non-finite")
        small = np.linalg.norm(lam * step) <= xtol * (1.0 + np.linalg.norm(d))
        d, r, rn = trial, rt, rtn
        if small:
            return d, it
    if rn <= ftol:
        return d, max_iter
    raise ManifoldError(f"Newton did not converge in {max_iter} iterations (|r|={rn:.3g})")


# ---------------------------------------------------------------------------
# nested solver


@dataclass(frozen=True)
class SolverSchedule:
    """Averaging times, increments and tolerances of the nested iteration.

    With both increments zero the averaging times stay fixed and a single
    outer pass is made.
    """

    T_fwd: float = 0.5
    T_bwd: float | None = None
    dT_fwd: float = 0.3
    dT_bwd: float = 0.1
    max_inner: int = 50
    max_outer: int = 30
    tol_change: float = 1e-5
    tol_theta: float = 1e-5
    tol_residual: float = 1e-5
    tol_outer: float = 1e-6
    change_floor: float = 1e-6
    escape_factor: float = 10.0
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if self.T_bwd is None:
            object.__setattr__(self, "T_bwd", self.T_fwd)
        if not (self.T_fwd > 0 and self.T_bwd > 0):
            raise ValueError("averaging times must be positive")
        if self.dT_fwd < 0 or self.dT_bwd < 0:
            raise ValueError("averaging-time increments must be non-negative")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration limits must be positive")

    @classmethod
    def fixed(cls, T: float, T_bwd: float | None = None, **kw) -> "SolverSchedule":
        return cls(T_fwd=T, T_bwd=T_bwd, dT_fwd=0.0, dT_bwd=0.0, **kw)

    @property
    def adaptive(self) -> bool:
        return self.dT_fwd > 0 or self.dT_bwd > 0


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """Result of the nested iteration with its audit trail.

    ``status`` is ``"converged"`` (outer criterion met, or fixed times),
    ``"escaped"`` (a trajectory left the extended region in both
    directions), ``"stalled"`` (the inner loop stopped converging at raised
    averaging times) or ``"max_outer"``.  In the last three cases the
    estimate from the last completed outer pass is returned.
    """

    x: np.ndarray
    parametrization: Parametrization
    residuals: np.ndarray
    theta: float
    T_fwd: float
    T_bwd: float
    inner_iterations: tuple[int, ...]
    outer_iterations: int
    status: str
    outer_change: float
    max_change: float
    W: np.ndarray = field(repr=False)
    halt_reason: str | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def flagged(self) -> bool:
        return self.status != "converged"

    @property
    def independent(self) -> np.ndarray:
        return self.x[list(self.parametrization.independent)]

    @property
    def dependent(self) -> np.ndarray:
        return self.x[list(self.parametrization.dependent)]


def _guard(region: Region | None, factor: float):
    if region is None:
        return None
    limit = factor * max(region.diameter, 1e-12)

    def ok(y):
        return bool(np.all(np.isfinite(y)) and np.all(region.distance(y) <= limit))

    return ok


def _splitting(vf, x, Tf, Tb, dims, dt, tol, guard) -> Splitting:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        fb = []
        for sign, T in ((+1, Tf), (-1, Tb)):
            try:
                fb.append(compute_ftle(vf, x, T, sign, dt=dt, tol=tol, guard=guard))
            except EscapeError as exc:
                exc.direction = sign
                raise
        f, b = fb
    return build_splitting(f, b, *dims)


def _inner_loop(vf, param, indep, dep, dims, Tf, Tb, sch, tol, guard):
    """Inner iterations at fixed averaging times; returns the final iterate,
    its frozen complement basis, angle, iteration count and last change."""
    x = param.assemble(indep, dep)
    for i in range(1, sch.max_inner + 1):
        W = _splitting(vf, x, Tf, Tb, dims, sch.dt, tol, guard).W
        dep_new = _inner_solve(vf, param, indep, dep, W)
        rel = np.abs(dep_new - dep) / np.maximum(np.abs(dep), sch.change_floor)
        x = param.assemble(indep, dep_new)
        theta = _center_angle(vf(x), W)
        dep = dep_new
        if np.max(rel) < sch.tol_change and theta < sch.tol_theta:
            return x, W, theta, i, float(np.max(rel))
    raise _InnerStall(
        f"inner loop did not converge in {sch.max_inner} iterations (T_fwd={Tf:.3g}, T_bwd={Tb:.3g})"
    )


def _inner_solve(vf, param, indep, dep, W):
    """Dependents zeroing the conditions for a frozen complement basis."""

    def res(d):
        return W.T @ vf(param.assemble(indep, d))

    d, _ = newton(res, dep)
    return d


def solve_manifold_point(
    vf: VectorField,
    indep,
    guess,
    dims,
    parametrization: Parametrization,
    schedule: SolverSchedule | None = None,
    region: Region | None = None,
    tol=None,
) -> ManifoldPoint:
    """Locate a center-manifold point with the independent coordinates fixed.

    Inner loop: with the vectors frozen at the current iterate, solve the
    orthogonality conditions for the dependents; repeat until the relative
    change of every dependent and the angle between f and the center
    subspace fall below tolerance.  Outer loop: raise the averaging times
    until successive inner results agree to ``tol_outer``.

    Parameters
    ----------
    indep, guess : array_like
        Independent coordinate values and the initial dependent values,
        in the order of ``parametrization``.
    dims : tuple
        ``(n_s, n_c, n_u)``.
    region : Region, optional
        Enables the escape guard: trajectories further than
        ``escape_factor`` region diameters from the box stop the
        averaging-time increase.
    """
    sch = schedule or SolverSchedule()
    param = parametrization
    indep = np.atleast_1d(np.asarray(indep, dtype=float))
    dep = np.atleast_1d(np.asarray(guess, dtype=float)).copy()
    if len(indep) != len(param.independent) or len(dep) != len(param.dependent):
        raise ValueError("independent/dependent values do not match the parametrization")
    if len(param.dependent) != dims[0] + dims[2]:
        raise ValueError("number of dependent coordinates must equal n_s + n_u")
    guard = _guard(region, sch.escape_factor)

    Tf, Tb = float(sch.T_fwd), float(sch.T_bwd)
    step = {+1: sch.dT_fwd, -1: sch.dT_bwd}
    frozen = {+1: False, -1: False}
    x_prev = param.assemble(indep, dep)
    inner_counts: list[int] = []
    last = None  # (x, W, theta, Tf, Tb)
    status = "max_outer"
    halts: list[str] = []
    change = math.inf
    max_change = math.inf
    n_outer = sch.max_outer if sch.adaptive else 1
    while len(inner_counts) < n_outer:
        try:
            x, W, theta, n_inner, max_change = _inner_loop(vf, param, indep, dep, dims, Tf, Tb, sch, tol, guard)
        except _InnerStall as exc:
            if last is None:
                raise ManifoldError(str(exc)) from None
            # the raised averaging times no longer give a convergent inner loop
            halts.append(str(exc))
            status = "stalled"
            break
        except EscapeError as exc:
            d = getattr(exc, "direction", 0)
            halts.append(f"{'forward' if d > 0 else 'backward'} escape at |t|={exc.t:.4g} (T_fwd={Tf:.4g}, T_bwd={Tb:.4g})")
            if last is None:
                raise ManifoldError("trajectory left the extended region at the initial averaging times") from exc
            if frozen.get(d, True):
                status = "escaped"
                break
            # keep the other direction going from the last valid estimate
            frozen[d] = True
            Tf, Tb = (last[3], Tb) if d > 0 else (Tf, last[4])
            dep = param.split(last[0])[1]
            if all(frozen[s] or step[s] == 0 for s in (+1, -1)):
                status = "escaped"
                break
            continue
        dep = param.split(x)[1]
        inner_counts.append(n_inner)
        last = (x.copy(), W, theta, Tf, Tb)
        change = float(np.linalg.norm(x - x_prev))
        x_prev = x.copy()
        if not sch.adaptive or change < sch.tol_outer:
            status = "converged"
            break
        if all(frozen[s] or step[s] == 0 for s in (+1, -1)):
            status = "escaped"
            break
        if not frozen[+1]:
            Tf += sch.dT_fwd
        if not frozen[-1]:
            Tb += sch.dT_bwd

    x, W, theta, Tf_used, Tb_used = last
    return ManifoldPoint(
        x=x,
        parametrization=param,
        residuals=W.T @ vf(x),
        theta=theta,
        T_fwd=Tf_used,
        T_bwd=Tb_used,
        inner_iterations=tuple(inner_counts),
        outer_iterations=len(inner_counts),
        status=status,
        outer_change=change,
        max_change=max_change,
        W=W,
        halt_reason="; ".join(halts) or None,
    )


def solve_manifold(
    vf: VectorField,
    indep_values,
    guess,
    dims,
    parametrization: Parametrization,
    schedule: SolverSchedule | None = None,
    region: Region | None = None,
    warm_start: bool = True,
    tol=None,
) -> list[ManifoldPoint]:
    """Solve a sequence of independent-coordinate values.

    Values are visited in lexicographic order; with ``warm_start`` each
    solve starts from the previous solution's dependents.  Results are
    returned in the input order.
    """
    vals = np.atleast_2d(np.asarray(indep_values, dtype=float))
    if vals.shape[0] == 1 and len(parametrization.independent) == 1 and vals.shape[1] != 1:
        vals = vals.T
    order = np.lexsort(vals.T[::-1])
    out: list[ManifoldPoint | None] = [None] * len(vals)
    g = np.atleast_1d(np.asarray(guess, dtype=float))
    for idx in order:
        p = solve_manifold_point(vf, vals[idx], g, dims, parametrization, schedule, region, tol)
        out[idx] = p
        if warm_start:
            g = p.dependent
    return out


def ftla_estimator(
    vf: VectorField,
    dims,
    parametrization: Parametrization,
    schedule: SolverSchedule | None = None,
    region: Region | None = None,
    tol=None,
) -> Callable:
    """Re-estimator ``(indep, guess) -> x`` built on the nested solver."""

    def estimate(indep, guess):
        return solve_manifold_point(vf, indep, guess, dims, parametrization, schedule, region, tol).x

    return estimate


# ---------------------------------------------------------------------------
# invariance check


@dataclass(frozen=True)
class IPReport:
    """Invariance error percent per (dependent coordinate, direction).

    ``values[(i, s)]`` uses the 0-based coordinate index ``i`` and
    ``s = +1`` for forward, ``-1`` for backward propagation.
    """

    x: np.ndarray
    t_plus: float
    t_minus: float
    values: dict
    endpoints: dict
    estimates: dict

    def get(self, coord: int, sign: int) -> float:
        return self.values[(coord, sign)]

    def max(self, sign: int | None = None) -> float:
        return max(v for (i, s), v in self.values.items() if sign is None or s == sign)


def invariance_percent(
    vf: VectorField,
    point,
    t_plus: float = 1.5,
    t_minus: float = -1.0,
    estimator: Callable | None = None,
    parametrization: Parametrization | None = None,
) -> IPReport:
    """Relative mismatch, in percent, between the propagated point and a
    fresh manifold estimate at the propagated independent coordinates.

    ``point`` is a :class:`ManifoldPoint` or a state (then pass
    ``parametrization``); ``estimator(indep, guess) -> x`` re-solves the
    dependents, e.g. :func:`ftla_estimator` or the ILDM counterpart.
    """
    if isinstance(point, ManifoldPoint):
        x = point.x
        param = parametrization or point.parametrization
    else:
        x = np.asarray(point, dtype=float)
        param = parametrization
        if param is None:
            raise ValueError("a parametrization is required for raw states")
    if t_plus < 0 or t_minus > 0:
        raise ValueError("need t_plus >= 0 and t_minus <= 0")
    if estimator is None:
        raise ValueError("an estimator is required")
    values, ends, ests = {}, {}, {}
    for sign, t in ((+1, t_plus), (-1, t_minus)):
        y = flow(vf, x, t)
        if t == 0:
            est = y.copy()
        else:
            ind, dep = param.split(y)
            try:
                est = np.asarray(estimator(ind, dep), dtype=float)
            except Exception as exc:
                raise ManifoldError(f"re-estimation failed at t={t:g}: {exc}") from exc
        ends[sign], ests[sign] = y, est
        for i in param.dependent:
            denom = abs(est[i])
            diff = abs(est[i] - y[i])
            values[(i, sign)] = 100.0 * diff / denom if denom > 0 else (0.0 if diff == 0 else math.inf)
    return IPReport(x.copy(), t_plus, t_minus, values, ends, ests)


# ---------------------------------------------------------------------------
# planar error model


def planar_error_model(eps: float, delta: float, g: float, dh_dx2: float) -> float:
    """Dependent-coordinate error of a planar point located with a normal
    direction tilted by ``eps``; ``delta`` is the angle between the
    manifold and the fast direction, ``g`` the tangential field magnitude
    and ``dh_dx2`` the sensitivity of the normal field component.
    """
    s = math.sin(delta + eps)
    if abs(s) < 1e-15:
        raise ZeroDivisionError("delta + eps is a multiple of pi")
    if dh_dx2 == 0:
        raise ZeroDivisionError("dh_dx2 must be non-zero")
    return -math.sin(eps) / s * g / dh_dx2
