"""Eigenvector-based baseline for center-manifold points.

The center subspace is approximated by the span of the Jacobian
eigenvectors whose eigenvalues sit in the middle of the spectrum (by real
part); points satisfy ``<f(x), w> = 0`` for the orthogonal complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dsl import VectorField
from .manifold import Parametrization, newton

__all__ = ["IldmError", "IldmBasis", "ildm_complement", "ildm_point", "ildm_estimator"]


class IldmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IldmBasis:
    x: np.ndarray
    eigenvalues: np.ndarray
    center: np.ndarray
    complement: np.ndarray
    dims: tuple[int, int, int]


def ildm_complement(vf: VectorField, x, ns: int, nc: int, nu: int, imag_tol: float = 1e-9) -> IldmBasis:
    """Center eigenvector block of Df(x) and an orthonormal complement."""
    x = np.asarray(x, dtype=float)
    n = vf.n
    if min(ns, nc, nu) < 0 or ns + nc + nu != n or nc < 1:
        raise ValueError(f"invalid dimensions ({ns},{nc},{nu}) for n={n}")
    w, V = np.linalg.eig(vf.jacobian(x))
    if np.any(np.abs(w.imag) > imag_tol * np.maximum(1.0, np.abs(w))):
        raise IldmError(f"Jacobian has complex eigenvalues at x={x}: {w}")
    order = np.argsort(w.real, kind="stable")
    lam, V = w.real[order], V.real[:, order]
    gap_tol = 1e-12 * max(1.0, np.max(np.abs(lam)))
    if ns > 0 and lam[ns] - lam[ns - 1] <= gap_tol:
        raise IldmError("no eigenvalue gap between the stable and center blocks")
    if nu > 0 and lam[ns + nc] - lam[ns + nc - 1] <= gap_tol:
        raise IldmError("no eigenvalue gap between the center and unstable blocks")
    C = V[:, ns : ns + nc]
    C = C / np.linalg.norm(C, axis=0)
    idx = np.argmax(np.abs(C), axis=0)
    C = C * np.sign(C[idx, np.arange(nc)])
    comp = scipy.linalg.null_space(C.T)
    if comp.shape[1] != n - nc:
        raise IldmError("center eigenvectors are linearly dependent")
    return IldmBasis(x.copy(), lam, C, comp, (ns, nc, nu))


def ildm_point(
    vf: VectorField,
    indep,
    guess,
    dims,
    parametrization: Parametrization,
    ftol: float = 1e-13,
    max_iter: int = 50,
) -> np.ndarray:
    """Solve the eigenvector orthogonality conditions for the dependents.

    The eigenvectors are re-evaluated at every residual evaluation, so the
    conditions are the full nonlinear ones.
    """
    param = parametrization
    indep = np.atleast_1d(np.asarray(indep, dtype=float))

    d0 = np.atleast_1d(np.asarray(guess, dtype=float))
    # test directions fixed at the initial point; the residual is the
    # component of f outside the current eigenvector span, which is smooth in
    # x even when the complement basis itself is only defined up to rotation
    W0 = ildm_complement(vf, param.assemble(indep, d0), *dims).complement

    def res(d):
        x = param.assemble(indep, d)
        C = ildm_complement(vf, x, *dims).center
        Q, _ = np.linalg.qr(C)
        fx = vf(x)
        return W0.T @ (fx - Q @ (Q.T @ fx))

    d, _ = newton(res, d0, ftol=ftol, max_iter=max_iter)
    return param.assemble(indep, d)


def ildm_estimator(vf: VectorField, dims, parametrization: Parametrization):
    """Re-estimator ``(indep, guess) -> x`` for invariance checks."""

    def estimate(indep, guess):
        return ildm_point(vf, indep, guess, dims, parametrization)

    return estimate
