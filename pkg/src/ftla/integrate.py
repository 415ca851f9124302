"""State and variational-equation propagation.

All integration goes through one batched Dormand-Prince 5(4) stepper, so a
whole chain of segment variational problems advances in lock-step as a
single ``(N, n + n*n)`` array.  Backward time is handled by integrating the
negated field over positive time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dsl import VectorField

__all__ = [
    "IntegrationError",
    "SingularSegmentError",
    "EscapeError",
    "Tolerance",
    "Trajectory",
    "TransitionChain",
    "dopri5",
    "flow",
    "trajectory",
    "transition_chain",
    "single_shot_transition",
    "DEFAULT_TOL",
    "DEFAULT_DT",
]


class IntegrationError(RuntimeError):
    """Step-size underflow or non-finite state during integration."""


class SingularSegmentError(IntegrationError):
    pass


class EscapeError(IntegrationError):
    """The trajectory left the admissible set given by a guard."""

    def __init__(self, t: float, state):
        super().__init__(f"trajectory left the admissible set at t={t:.6g}")
        self.t = t
        self.state = np.array(state)


@dataclass(frozen=True)
class Tolerance:
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")

    @classmethod
    def coerce(cls, tol) -> "Tolerance":
        if tol is None:
            return cls()
        if isinstance(tol, Tolerance):
            return tol
        rtol, atol = tol
        return cls(float(rtol), float(atol))

    def tightened(self, factor: float = 10.0) -> "Tolerance":
        return Tolerance(self.rtol / factor, self.atol / factor)


DEFAULT_TOL = Tolerance()
DEFAULT_DT = 0.1
MAX_SEGMENT_NORM = 1e6
MAX_SEGMENT_COND = 1e12

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [
        71 / 57600,
        0.0,
        -71 / 16695,
        71 / 1920,
        -17253 / 339200,
        22 / 525,
        -1 / 40,
    ]
)


def _err_norm(err, y0, y1, tol: Tolerance) -> float:
    scale = tol.atol + tol.rtol * np.maximum(np.abs(y0), np.abs(y1))
    # RMS per batch member, worst member controls the step
    return float(np.max(np.sqrt(np.mean((err / scale) ** 2, axis=-1))))


def dopri5(
    fun: Callable[[np.ndarray], np.ndarray],
    y0,
    t_out: Sequence[float],
    tol=None,
    max_steps: int = 1_000_000,
    guard: Callable[[np.ndarray], bool] | None = None,
) -> np.ndarray:
    """Integrate the autonomous system ``y' = fun(y)`` from t=0.

    ``y0`` may be ``(d,)`` or a batch ``(B, d)``; ``fun`` must accept the
    same shape.  ``t_out`` are non-negative, non-decreasing output times.
    Returns an array of shape ``(len(t_out),) + y0.shape``.  If ``guard``
    is given it is called on every accepted state and a False return raises
    :class:`EscapeError`.
    """
    tol = Tolerance.coerce(tol)
    y = np.array(y0, dtype=float)
    t_out = np.asarray(t_out, dtype=float)
    if np.any(t_out < 0) or np.any(np.diff(t_out) < 0):
        raise ValueError("output times must be non-negative and non-decreasing")
    out = np.empty((len(t_out),) + y.shape)
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite initial state")

    t = 0.0
    k1 = fun(y)
    h = _initial_step(fun, y, k1, tol, t_out[-1] if len(t_out) else 0.0)
    steps = 0
    for idx, target in enumerate(t_out):
        while t < target:
            if target - t <= 4 * np.finfo(float).eps * max(1.0, abs(target)):
                t = target
                break
            h_try = min(h, target - t)
            clipped = h_try < h
            y_new, k7, err = _step(fun, y, k1, h_try)
            en = _err_norm(err, y, y_new, tol) if np.all(np.isfinite(y_new)) else np.inf
            if en <= 1.0:
                t = target if clipped else t + h_try
                y, k1 = y_new, k7
                if guard is not None and not guard(y):
                    raise EscapeError(t, y)
                fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en**-0.2))
                if not clipped:
                    h = h_try * fac
                else:
                    h = max(h, h_try * fac)
            else:
                fac = max(0.2, 0.9 * en**-0.2) if np.isfinite(en) else 0.2
                h = h_try * fac
            steps += 1
            if h < 1e-14 * max(1.0, abs(t)):
                raise IntegrationError(f"step size underflow at t={t:.6g}")
            if steps > max_steps:
                raise IntegrationError("maximum number of steps exceeded")
        out[idx] = y
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state")
    return out


def _step(fun, y, k1, h):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        ks.append(fun(yi))
    y_new = y + h * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
    err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    return y_new, ks[6], err


def _initial_step(fun, y, f0, tol: Tolerance, span: float) -> float:
    if span <= 0:
        return 1e-3
    scale = tol.atol + tol.rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = fun(y + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if not np.isfinite(d2):
        return h0 * 1e-3
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return float(min(100 * h0, h1, span))


def _sign(direction) -> float:
    if direction in (1, "+", "forward", "fwd"):
        return 1.0
    if direction in (-1, "-", "−", "backward", "bwd"):
        return -1.0
    raise ValueError(f"direction must be + or -, got {direction!r}")


def flow(vf: VectorField, x, t: float, tol=None) -> np.ndarray:
    """phi(t, x); negative ``t`` integrates the time-reversed field."""
    x = np.asarray(x, dtype=float)
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    if t == 0:
        return x.copy()
    s = 1.0 if t > 0 else -1.0
    return dopri5(lambda y: s * vf(y), x, [abs(t)], tol)[0]


@dataclass(frozen=True)
class Trajectory:
    x: np.ndarray
    times: np.ndarray  # signed
    states: np.ndarray

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def trajectory(vf: VectorField, x, times, tol=None, guard=None) -> Trajectory:
    """Sample phi(t, x) at signed times sharing one sign (0 first)."""
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    s = -1.0 if np.any(times < 0) else 1.0
    if np.any(s * times < 0):
        raise ValueError("sample times must share one sign")
    states = dopri5(lambda y: s * vf(y), x, s * times, tol, guard=guard)
    return Trajectory(x.copy(), times.copy(), states)


def _variational_rhs(vf: VectorField, s: float):
    n = vf.n

    def rhs(z):
        xs = z[:, :n]
        phi = z[:, n:].reshape(-1, n, n)
        dx = s * vf(xs)
        dphi = s * (vf.jacobian(xs) @ phi)
        return np.concatenate([dx, dphi.reshape(len(z), -1)], axis=1)

    return rhs


def _segment_count(T: float, dt: float) -> int:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    N = int(round(T / dt))
    if N < 1 or abs(N * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return N


@dataclass(frozen=True)
class TransitionChain:
    """Per-segment transition matrices along one trajectory.

    ``segments[k]`` maps tangent vectors at the k-th sample to the
    (k+1)-th; for direction -1 the samples run backward in time.
    """

    direction: int
    dt: float
    segments: np.ndarray
    traj: Trajectory
    _product: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return len(self.segments)

    @property
    def T(self) -> float:
        return self.N * self.dt

    @property
    def x(self) -> np.ndarray:
        return self.traj.x

    @property
    def end(self) -> np.ndarray:
        return self.traj.end

    def product(self, upto: int | None = None) -> np.ndarray:
        """Phi_k ... Phi_1 for the first ``upto`` segments (all by default)."""
        k = self.N if upto is None else upto
        if k == self.N and self._product is not None:
            return self._product
        n = self.segments.shape[1]
        P = np.eye(n)
        for M in self.segments[:k]:
            P = M @ P
        if k == self.N:
            object.__setattr__(self, "_product", P)
        return P

    def partial_products(self) -> np.ndarray:
        """Phi(k dt) for k = 0..N, stacked."""
        n = self.segments.shape[1]
        out = np.empty((self.N + 1, n, n))
        out[0] = np.eye(n)
        for k, M in enumerate(self.segments):
            out[k + 1] = M @ out[k]
        return out

    def truncated(self, k: int) -> "TransitionChain":
        """Chain over the first ``k`` segments."""
        if not 1 <= k <= self.N:
            raise ValueError("segment count out of range")
        tr = Trajectory(self.traj.x, self.traj.times[: k + 1], self.traj.states[: k + 1])
        return TransitionChain(self.direction, self.dt, self.segments[:k], tr)


def transition_chain(
    vf: VectorField,
    x,
    T: float,
    dt: float = DEFAULT_DT,
    direction=+1,
    tol=None,
    auto_refine: bool = True,
    guard=None,
) -> TransitionChain:
    """Segmented transition matrices of the variational equations.

    The nonlinear trajectory is sampled at multiples of ``dt``; then every
    segment's variational problem restarts from the identity at its saved
    sample.  If any segment matrix has norm above 1e6 the step is halved
    (when ``auto_refine``), so the returned chain may have a smaller ``dt``.
    ``guard`` is applied to the base trajectory (see :func:`dopri5`).
    """
    s = _sign(direction)
    x = np.asarray(x, dtype=float)
    n = vf.n
    if x.shape != (n,):
        raise ValueError(f"base point must have shape ({n},)")
    N = _segment_count(T, dt)
    while True:
        times = s * dt * np.arange(N + 1)
        traj = trajectory(vf, x, times, tol, guard)
        starts = traj.states[:-1]
        z0 = np.concatenate([starts, np.tile(np.eye(n).ravel(), (N, 1))], axis=1)
        z1 = dopri5(_variational_rhs(vf, s), z0, [dt], tol)[0]
        segs = z1[:, n:].reshape(N, n, n)
        if auto_refine and np.max(np.linalg.norm(segs, ord=2, axis=(1, 2))) > MAX_SEGMENT_NORM:
            if dt < 1e-6:
                raise IntegrationError("segment refinement did not bound the segment norms")
            dt /= 2
            N *= 2
            continue
        break
    conds = np.linalg.cond(segs)
    if not np.all(np.isfinite(conds)) or np.any(conds > MAX_SEGMENT_COND):
        k = int(np.argmax(np.where(np.isfinite(conds), conds, np.inf)))
        raise SingularSegmentError(f"segment {k} is numerically singular (cond={conds[k]:.3g})")
    return TransitionChain(int(s), dt, segs, traj)


def single_shot_transition(vf: VectorField, x, T: float, direction=+1, tol=None) -> np.ndarray:
    """Phi(+-T, x) from one unsegmented variational integration."""
    s = _sign(direction)
    n = vf.n
    z0 = np.concatenate([np.asarray(x, dtype=float), np.eye(n).ravel()])[None, :]
    z1 = dopri5(_variational_rhs(vf, s), z0, [T], tol)[0, 0]
    return z1[n:].reshape(n, n)
