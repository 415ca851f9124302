"""Finite-time Lyapunov exponents, vectors, subspaces and splittings.

Conventions
-----------
Forward data (direction +1) lists exponents in ascending order, backward
data (direction -1) in descending order; the columns of ``L`` (vectors at
the base point) and ``N`` (vectors at the propagated point) follow the same
order.  Each column of ``L`` is signed so its largest-magnitude entry is
positive, and the matching column of ``N`` is flipped with it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dsl import VectorField
from .integrate import DEFAULT_DT, TransitionChain, transition_chain

__all__ = [
    "LyapunovError",
    "SplittingError",
    "DegenerateSpectrumWarning",
    "LyapunovData",
    "Subspace",
    "Splitting",
    "SubspaceCurves",
    "compute_ftle",
    "ftle_from_chain",
    "ftle_curves",
    "lyapunov_subspace",
    "subspace_distance",
    "principal_angles",
    "build_splitting",
    "subspace_ftles",
    "subspace_ftle_limit",
    "orthonormalize",
]

DEGENERACY_TOL = 1e-9
SVD_COND_LIMIT = 1e8


class LyapunovError(ValueError):
    pass


class SplittingError(LyapunovError):
    pass


class DegenerateSpectrumWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class LyapunovData:
    direction: int
    T: float
    x: np.ndarray
    exponents: np.ndarray
    L: np.ndarray
    N: np.ndarray
    log_sv: np.ndarray
    method: str = "svd"
    chain: TransitionChain | None = field(default=None, repr=False)

    @property
    def singular_values(self) -> np.ndarray:
        return np.exp(self.log_sv)

    @property
    def n(self) -> int:
        return len(self.exponents)

    @property
    def end(self) -> np.ndarray | None:
        return None if self.chain is None else self.chain.end


@dataclass(frozen=True, eq=False)
class Subspace:
    x: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def complement(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement."""
        return scipy.linalg.null_space(self.basis.T)


def orthonormalize(B) -> np.ndarray:
    """Orthonormal basis for the column span of ``B`` (same column count)."""
    Q, R = np.linalg.qr(np.asarray(B, dtype=float))
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


# ---------------------------------------------------------------------------
# factorization helpers


def _qr_pos(A):
    Q, R = np.linalg.qr(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s, (R.T * s).T


def _qr_pass(mats, Q):
    """QR recursion M_k Q_{k-1} = Q_k R_k; returns Q_N and sum log diag R."""
    logs = np.zeros(Q.shape[1])
    for M in mats:
        Q, R = _qr_pos(M @ Q)
        logs += np.log(np.abs(np.diag(R)))
    return Q, logs


def _qr_pass_inverse(mats, Q):
    """Same recursion through the inverses of ``mats`` taken in reverse order."""
    logs = np.zeros(Q.shape[1])
    for M in mats[::-1]:
        Q, R = _qr_pos(np.linalg.solve(M, Q))
        logs += np.log(np.abs(np.diag(R)))
    return Q, logs


def _qr_svd(segs, V0=None, max_sweeps: int = 60, tol: float = 1e-13):
    """SVD of the chain product by alternating forward/inverse QR sweeps.

    Forward sweeps apply the product, inverse sweeps its inverse with the
    column order reversed; together this is subspace iteration on
    ``(P^T P)`` that never forms the (possibly overflowing) product.
    Returns (V, U, log_sv) with singular values in descending order.
    """
    n = segs.shape[1]
    V = np.eye(n) if V0 is None else V0
    prev = None
    for _ in range(max_sweeps):
        U, logs = _qr_pass(segs, V)
        if prev is not None and np.max(np.abs(logs - prev)) < tol * max(1.0, np.max(np.abs(logs))):
            break
        prev = logs
        Vr, _ = _qr_pass_inverse(segs, U[:, ::-1])
        V = Vr[:, ::-1]
    return V, U, logs


def _two_sided_log_sv(segs, log_sv):
    """Replace the small singular values of the product by those of its inverse.

    Absolute SVD error is ~eps*s_max, so s_i is accurate relative to itself
    when s_i^2 > s_max*s_min; below that 1/s_i from the inverse is better.
    """
    n = segs.shape[1]
    Pinv = np.eye(n)
    for M in segs:
        Pinv = Pinv @ np.linalg.inv(M)
    inv = -np.log(np.linalg.svd(Pinv, compute_uv=False))[::-1]
    use_inv = 2 * log_sv < log_sv[0] + inv[-1]
    return np.where(use_inv, inv, log_sv)


def _fix_signs(L, N):
    idx = np.argmax(np.abs(L), axis=0)
    s = np.sign(L[idx, np.arange(L.shape[1])])
    s[s == 0] = 1.0
    return L * s, N * s


def _check_degenerate(exps):
    gaps = np.abs(np.diff(np.sort(exps)))
    if np.any(gaps < DEGENERACY_TOL):
        warnings.warn(
            "degenerate Lyapunov spectrum: Lyapunov vectors are not unique",
            DegenerateSpectrumWarning,
            stacklevel=3,
        )


def ftle_from_chain(chain: TransitionChain, method: str = "auto", refine: bool = True) -> LyapunovData:
    """FTLEs/FTLVs from a precomputed transition chain.

    ``method``:

    ``"svd"``
        SVD of the explicit product.  Singular values far below the
        largest are taken from the SVD of the inverse product instead,
        where they are the large ones and keep full relative accuracy.
    ``"qr"``
        QR recursion from the identity.  With ``refine=False`` this is a
        single forward pass (exponents from the accumulated diagonals,
        ``L`` from a single backward pass at the end point).  With
        ``refine=True`` forward/backward sweeps are repeated until the
        exponents settle, which yields the singular-value quantities.
    ``"auto"``
        SVD when the product condition number is below 1e8, otherwise
        refined QR warm-started from the SVD vectors.
    """
    segs = chain.segments
    T = chain.T
    if method == "auto":
        P = chain.product()
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(P)
        if np.isfinite(cond) and cond < SVD_COND_LIMIT:
            method_used = "svd"
            U, S, Vt = np.linalg.svd(P)
            V, log_sv = Vt.T, np.log(S)
        else:
            method_used = "qr"
            _, _, Vt = np.linalg.svd(P)
            V, U, log_sv = _qr_svd(segs, Vt.T)
    elif method == "svd":
        method_used = "svd"
        U, S, Vt = np.linalg.svd(chain.product())
        with np.errstate(divide="ignore"):
            log_sv = np.log(S)
        if not np.all(np.isfinite(log_sv)):
            raise LyapunovError("transition matrix is numerically singular; use method='qr'")
        V = Vt.T
        log_sv = _two_sided_log_sv(segs, log_sv)
    elif method == "qr":
        method_used = "qr"
        n = segs.shape[1]
        if refine:
            V, U, log_sv = _qr_svd(segs)
        else:
            U, log_sv = _qr_pass(segs, np.eye(n))
            # L from the backward recursion started at the end point
            Lb, _ = _qr_pass_inverse(segs, np.eye(n))
            V = Lb[:, ::-1]
            order = np.argsort(-log_sv, kind="stable")
            U, log_sv = U[:, order], log_sv[order]
    else:
        raise ValueError(f"unknown method {method!r}")

    # descending singular values -> forward ascending / backward descending
    if chain.direction > 0:
        V, U, log_sv = V[:, ::-1], U[:, ::-1], log_sv[::-1]
    exps = log_sv / T
    L, N = _fix_signs(V, U)
    _check_degenerate(exps)
    return LyapunovData(chain.direction, T, chain.x.copy(), exps, L, N, log_sv, method_used, chain)


def compute_ftle(
    vf: VectorField,
    x,
    T: float,
    direction=+1,
    method: str = "auto",
    dt: float = DEFAULT_DT,
    tol=None,
    refine: bool = True,
    guard=None,
) -> LyapunovData:
    """Forward or backward FTLEs and FTLVs at ``x`` for averaging time ``T``."""
    chain = transition_chain(vf, x, T, dt, direction, tol, guard=guard)
    return ftle_from_chain(chain, method, refine)


def ftle_curves(chain: TransitionChain, steps=None, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Exponent spectra at ``T = k*dt`` for each segment count ``k`` in ``steps``.

    Returns ``(T_values, exponents)`` with exponents of shape ``(len(steps), n)``.
    """
    if steps is None:
        steps = range(1, chain.N + 1)
    steps = list(steps)
    out = np.empty((len(steps), chain.segments.shape[1]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        for i, k in enumerate(steps):
            out[i] = ftle_from_chain(chain.truncated(k), method).exponents
    return np.array(steps) * chain.dt, out


def lyapunov_subspace(data: LyapunovData, j: int) -> Subspace:
    """Forward: span of the first ``j`` FTLVs.  Backward: span of FTLVs j..n."""
    n = data.n
    if not 1 <= j <= n:
        raise IndexError(f"subspace index {j} outside 1..{n}")
    cols = data.L[:, :j] if data.direction > 0 else data.L[:, j - 1 :]
    return Subspace(data.x, cols)


def _basis(S) -> np.ndarray:
    b = S.basis if isinstance(S, Subspace) else np.asarray(S, dtype=float)
    return b[:, None] if b.ndim == 1 else b


def subspace_distance(S1, S2) -> float:
    """Spectral norm of the difference of the orthogonal projectors."""
    B1 = orthonormalize(_basis(S1))
    B2 = orthonormalize(_basis(S2))
    if B1.shape[0] != B2.shape[0]:
        raise ValueError("subspaces live in different ambient dimensions")
    if B1.shape[1] != B2.shape[1]:
        raise ValueError("subspaces have different dimensions")
    d = np.linalg.norm(B1 @ B1.T - B2 @ B2.T, 2)
    return float(min(1.0, d))


def principal_angles(S1, S2) -> np.ndarray:
    return scipy.linalg.subspace_angles(_basis(S1), _basis(S2))


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True, eq=False)
class Splitting:
    """Stable/center/unstable bases at one point.

    ``W`` is the complement basis of the center subspace, ordered as the
    first ``ns`` backward vectors followed by the last ``nu`` forward vectors.
    """

    T_bar: float
    x: np.ndarray
    ns: int
    nc: int
    nu: int
    Es: np.ndarray
    Ec: np.ndarray
    Eu: np.ndarray
    W: np.ndarray
    fwd: LyapunovData | None = field(default=None, repr=False)
    bwd: LyapunovData | None = field(default=None, repr=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.ns, self.nc, self.nu

    def subspace(self, name: str) -> Subspace:
        return Subspace(self.x, {"s": self.Es, "c": self.Ec, "u": self.Eu}[name])

    @property
    def stacked_condition(self) -> float:
        M = np.hstack([self.Es, self.Ec, self.Eu])
        return float(np.linalg.cond(M))

    @property
    def complement_condition(self) -> float:
        return float(np.linalg.cond(self.W))


def build_splitting(fwd: LyapunovData, bwd: LyapunovData, ns: int, nc: int, nu: int) -> Splitting:
    """Assemble the splitting from forward and backward FTLVs at one point.

    The averaging times of ``fwd`` and ``bwd`` may differ (mixed-time
    splittings); ``T_bar`` records the forward time.
    """
    n = fwd.n
    if fwd.direction <= 0 or bwd.direction >= 0:
        raise SplittingError("need forward data first and backward data second")
    if bwd.n != n or not np.allclose(fwd.x, bwd.x, rtol=0, atol=1e-12):
        raise SplittingError("forward and backward data refer to different points")
    if min(ns, nc, nu) < 0 or ns + nc + nu != n:
        raise SplittingError(f"dimensions ({ns},{nc},{nu}) do not sum to n={n}")
    if nc < 1:
        raise SplittingError("the center subspace must be at least one-dimensional")
    if ns == 0 and nu == 0:
        raise SplittingError("at least one of the stable/unstable subspaces must be non-trivial")
    Es = fwd.L[:, :ns]
    Eu = bwd.L[:, n - nu :]
    W = np.hstack([bwd.L[:, :ns], fwd.L[:, ns + nc :]])
    sv = np.linalg.svd(W, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > 1e8:
        raise SplittingError(
            "center complement is rank-deficient: forward and backward subspaces are nearly tangent"
        )
    Ec = scipy.linalg.null_space(W.T, rcond=1e-10)
    if Ec.shape[1] != nc:
        raise SplittingError("center subspace has the wrong dimension")
    Ec, _ = _fix_signs(Ec, Ec)
    return Splitting(fwd.T, fwd.x.copy(), ns, nc, nu, Es, Ec, Eu, W, fwd, bwd)


# ---------------------------------------------------------------------------
# subspace exponents


@dataclass(frozen=True, eq=False)
class SubspaceCurves:
    """Exponents of propagated splitting subspaces on a grid of T values.

    ``curves[(name, sign)]`` has shape ``(len(T), dim)``; forward exponents
    are ascending, backward descending.
    """

    x: np.ndarray
    T: np.ndarray
    curves: dict

    def get(self, name: str, sign: int) -> np.ndarray | None:
        return self.curves.get((name, sign))

    def window(self, lo: float, hi: float) -> "SubspaceCurves":
        """Samples with ``lo < T <= hi`` (small slack for round-off)."""
        eps = 1e-9
        mask = (self.T > lo + eps) & (self.T <= hi + eps)
        return SubspaceCurves(self.x, self.T[mask], {k: v[mask] for k, v in self.curves.items()})


def _propagated_logs(segs, E, steps):
    """log singular values of (M_k ... M_1) E for k in ``steps``."""
    Q = orthonormalize(E)
    R_acc = np.linalg.qr(E)[1]
    scale = 0.0
    out = {}
    want = set(steps)
    for k, M in enumerate(segs, start=1):
        Q, R = _qr_pos(M @ Q)
        R_acc = R @ R_acc
        m = np.max(np.abs(R_acc))
        R_acc /= m
        scale += np.log(m)
        if k in want:
            out[k] = np.log(np.linalg.svd(R_acc, compute_uv=False)) + scale
    return out


def _dual_logs(segs, N_cols, log_s, steps):
    """log sv of P_k E where E spans the most contracted directions of P_K.

    Uses P_k E = (M_K ... M_{k+1})^{-1} N_E S_E with the end-point left
    singular vectors ``N_cols`` and log singular values ``log_s``; the
    inverse propagation expands these directions, so it is well conditioned.
    """
    K = len(segs)
    Q = N_cols.copy()
    R_acc = np.diag(np.ones(Q.shape[1]))
    scale = 0.0
    out = {}
    want = set(steps)
    s_scale = np.max(log_s)
    S = np.diag(np.exp(log_s - s_scale))
    if K in want:
        out[K] = np.sort(log_s)[::-1]
    for k in range(K, 0, -1):
        Q, R = _qr_pos(np.linalg.solve(segs[k - 1], Q))
        R_acc = R @ R_acc
        m = np.max(np.abs(R_acc))
        R_acc /= m
        scale += np.log(m)
        if k - 1 in want:
            out[k - 1] = np.log(np.linalg.svd(R_acc @ S, compute_uv=False)) + scale + s_scale
    return out


def _order(logs, T, sign):
    e = np.sort(logs / T)
    return e if sign > 0 else e[::-1]


def subspace_ftles(
    vf: VectorField,
    x,
    splitting: Splitting,
    T_grid=None,
    dt: float | None = None,
    tol=None,
) -> SubspaceCurves:
    """Exponents of Phi(+-T, x) E^j for j in s, c, u on a grid of T.

    ``T_grid`` defaults to every multiple of ``dt`` up to ``T_bar``.  The
    stable subspace forward and the unstable subspace backward are the
    directions every rounding error swamps, so when ``T <= T_bar`` and the
    splitting carries its Lyapunov data, those curves are computed through
    the end-point singular factors instead of by direct propagation.
    """
    x = np.asarray(x, dtype=float)
    T_bar = splitting.T_bar
    if dt is None:
        dt = splitting.fwd.chain.dt if splitting.fwd is not None and splitting.fwd.chain else DEFAULT_DT
    if T_grid is None:
        T_grid = dt * np.arange(1, int(round(T_bar / dt)) + 1)
    T_grid = np.asarray(T_grid, dtype=float)
    steps_all = np.rint(T_grid / dt).astype(int)
    if np.any(steps_all < 1) or np.any(np.abs(steps_all * dt - T_grid) > 1e-9 * np.maximum(1, T_grid)):
        raise ValueError("T grid must consist of positive multiples of dt")
    K = int(steps_all.max())

    curves = {}
    for sign, data, dual_name in ((+1, splitting.fwd, "s"), (-1, splitting.bwd, "u")):
        chain = None
        if data is not None and data.chain is not None and np.isclose(data.chain.dt, dt):
            if data.chain.N >= K:
                chain = data.chain
        if chain is None:
            chain = transition_chain(vf, x, K * dt, dt, sign, tol)
        dt_eff = chain.dt
        steps = [int(round(T / dt_eff)) for T in T_grid]
        segs = chain.segments
        for name, E in (("s", splitting.Es), ("c", splitting.Ec), ("u", splitting.Eu)):
            if E.shape[1] == 0:
                continue
            use_dual = (
                name == dual_name
                and data is not None
                and data.chain is not None
                and np.isclose(data.T, data.chain.T)
            )
            if use_dual:
                Kd = data.chain.N
                nd = E.shape[1]
                if sign > 0:  # first ns forward vectors = most contracted
                    Ncols, logs_e = data.N[:, :nd], data.log_sv[:nd]
                else:  # last nu backward vectors
                    Ncols, logs_e = data.N[:, -nd:], data.log_sv[-nd:]
                inside = [k for k in steps if k <= Kd]
                got = _dual_logs(data.chain.segments, Ncols, logs_e, inside)
                rest = [k for k in steps if k > Kd]
                if rest:
                    got.update(_propagated_logs(segs, E, rest))
            else:
                got = _propagated_logs(segs, E, steps)
            curves[(name, sign)] = np.array([_order(got[k], k * dt_eff, sign) for k in steps])
    return SubspaceCurves(x, T_grid, curves)


def subspace_ftle_limit(vf: VectorField, x, E, direction=+1) -> np.ndarray:
    """T -> 0 limit of the subspace exponents of span(E).

    For small T the singular values of Phi(+-T) E are those of
    E^T (I +- T (Df + Df^T)) E to first order, so the limiting exponents are
    the eigenvalues of +-E^T sym(Df) E (forward ascending, backward descending).
    """
    E = orthonormalize(E)
    J = vf.jacobian(np.asarray(x, dtype=float))
    s = 1.0 if direction in (1, "+") else -1.0
    ev = np.linalg.eigvalsh(s * E.T @ (0.5 * (J + J.T)) @ E)
    return ev if s > 0 else ev[::-1]
