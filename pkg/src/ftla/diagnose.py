"""Two-timescale diagnosis from finite-time Lyapunov spectra.

The pipeline is: spectra on a region grid -> uniform spectral gap and
start time -> splitting at the available averaging time -> subspace
exponents -> cut-off time -> exponential bounds -> verdict.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .dsl import VectorField
from .integrate import DEFAULT_DT, IntegrationError, transition_chain
from .lyap import (
    DegenerateSpectrumWarning,
    LyapunovData,
    LyapunovError,
    Splitting,
    SubspaceCurves,
    build_splitting,
    ftle_curves,
    ftle_from_chain,
    lyapunov_subspace,
    subspace_distance,
    subspace_ftles,
)

__all__ = [
    "Region",
    "SpectralGap",
    "BoundsReport",
    "DiagnosisOptions",
    "TwoTimescaleDiagnosis",
    "PointSpectra",
    "ConeReport",
    "ConvergenceFit",
    "AlignmentFit",
    "vector_alignment",
    "spectral_gap_scan",
    "exponential_bounds",
    "select_cutoff",
    "check_two_timescale",
    "cone_invariance_check",
    "convergence_rate",
    "point_spectra",
    "splitting_at",
    "time_grid",
]


# ---------------------------------------------------------------------------
# region


@dataclass(frozen=True)
class Region:
    """Axis-aligned box with a tensor grid, or an explicit point list."""

    bounds: tuple
    counts: tuple | None = None
    points: np.ndarray | None = None

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not all(math.isfinite(lo) and math.isfinite(hi) and lo <= hi for lo, hi in b):
            raise ValueError("region bounds must be finite with lo <= hi")
        object.__setattr__(self, "bounds", b)
        if self.points is not None:
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            if pts.shape[1] != len(b) or len(pts) == 0:
                raise ValueError("explicit points must match the region dimension")
            object.__setattr__(self, "points", pts)
        else:
            counts = tuple(self.counts) if self.counts is not None else (5,) * len(b)
            if len(counts) != len(b) or min(counts) < 1:
                raise ValueError("grid counts must be positive, one per coordinate")
            object.__setattr__(self, "counts", tuple(int(c) for c in counts))

    @classmethod
    def from_points(cls, points) -> "Region":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bounds = tuple(zip(pts.min(axis=0), pts.max(axis=0)))
        return cls(bounds, points=pts)

    @property
    def n(self) -> int:
        return len(self.bounds)

    def grid(self) -> np.ndarray:
        if self.points is not None:
            return self.points.copy()
        axes = [
            np.linspace(lo, hi, c) if c > 1 else np.array([0.5 * (lo + hi)])
            for (lo, hi), c in zip(self.bounds, self.counts)
        ]
        return np.array(list(itertools.product(*axes)))

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def distance(self, x) -> np.ndarray:
        """Euclidean distance of point(s) to the box (0 inside)."""
        x = np.asarray(x, dtype=float)
        d = np.maximum(self.lower - x, 0) + np.maximum(x - self.upper, 0)
        return np.linalg.norm(d, axis=-1)


# ---------------------------------------------------------------------------
# gap scan


@dataclass(frozen=True)
class SpectralGap:
    ns: int
    nc: int
    nu: int
    alpha: float
    beta: float
    t_s: float
    T_bar: float

    @property
    def delta_mu(self) -> float:
        return self.beta - self.alpha

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.ns, self.nc, self.nu

    @property
    def resolvability(self) -> float:
        return self.delta_mu * (self.T_bar - self.t_s)


def _gap_bounds(fwd, bwd, ns, nc, nu):
    """Per-sample slow magnitude and fast magnitude for one dimension split.

    ``fwd`` is ascending and ``bwd`` descending along the last axis.
    """
    c0, c1 = ns, ns + nc - 1
    slow = np.maximum.reduce([-fwd[..., c0], fwd[..., c1], bwd[..., c0], -bwd[..., c1]])
    fast_terms = []
    if ns:
        fast_terms += [-fwd[..., ns - 1], bwd[..., ns - 1]]
    if nu:
        fast_terms += [fwd[..., ns + nc], -bwd[..., ns + nc]]
    fast = np.minimum.reduce(fast_terms)
    return slow, fast


def spectral_gap_scan(T, fwd, bwd, T_bar: float | None = None, min_delta: float = 0.0) -> list[SpectralGap]:
    """Uniform spectral-gap candidates from sampled spectra.

    Parameters
    ----------
    T : (m,) array
        Averaging times of the samples (ascending).
    fwd, bwd : (P, m, n) arrays
        Forward (ascending) and backward (descending) exponents at P points.
    T_bar : float, optional
        Available averaging time; defaults to ``T[-1]``.
    min_delta : float
        Candidates with a smaller gap are dropped.

    Returns
    -------
    list of SpectralGap
        One entry per admissible dimension split with a positive gap,
        sorted by gap width (largest first).  For each split the start time
        is chosen among ``0`` and the sample times to maximize
        ``delta_mu * (T_bar - t_s)``; ``alpha`` and ``beta`` are the tightest
        bounds on the slow and fast exponent magnitudes.
    """
    T = np.asarray(T, dtype=float)
    fwd = np.asarray(fwd, dtype=float)
    bwd = np.asarray(bwd, dtype=float)
    if fwd.ndim == 2:
        fwd, bwd = fwd[None], bwd[None]
    T_bar = float(T[-1]) if T_bar is None else float(T_bar)
    n = fwd.shape[-1]
    starts = np.concatenate([[0.0], T[:-1]])
    out = []
    for nc in range(1, n):
        for ns in range(0, n - nc + 1):
            nu = n - ns - nc
            if ns == 0 and nu == 0:
                continue
            slow, fast = _gap_bounds(fwd, bwd, ns, nc, nu)
            best = None
            for t_s in starts:
                mask = T > t_s + 1e-12
                if not mask.any():
                    continue
                alpha = float(np.max(slow[:, mask]))
                beta = float(np.min(fast[:, mask]))
                alpha = max(alpha, np.finfo(float).tiny)
                delta = beta - alpha
                if delta <= max(min_delta, 0.0):
                    continue
                score = delta * (T_bar - t_s)
                if best is None or score > best[0] + 1e-12:
                    best = (score, SpectralGap(ns, nc, nu, alpha, beta, float(t_s), T_bar))
            if best is not None:
                out.append(best[1])
    out.sort(key=lambda g: (-g.delta_mu, g.t_s))
    return out


# ---------------------------------------------------------------------------
# bounds and cut-off


_EXTREMAL_KEYS = (
    "sup_s_fwd",
    "inf_u_fwd",
    "inf_s_bwd",
    "sup_u_bwd",
    "inf_c_fwd",
    "sup_c_fwd",
    "sup_c_bwd",
    "inf_c_bwd",
)


@dataclass(frozen=True)
class BoundsReport:
    nu: float
    sigma: float
    t_s: float
    t_c: float
    extremals: dict

    @property
    def two_timescale(self) -> bool:
        return self.nu > self.sigma > 0


def _as_list(curves) -> list[SubspaceCurves]:
    return [curves] if isinstance(curves, SubspaceCurves) else list(curves)


def exponential_bounds(curves, t_s: float, t_c: float) -> BoundsReport:
    """Fast and slow rate constants from subspace exponents on (t_s, t_c].

    ``nu`` is the smallest of the four fast-subspace margins and ``sigma``
    the largest center-exponent magnitude, with extrema over all sampled
    times in the window and all points.
    """
    curves = _as_list(curves)
    acc = {k: [] for k in _EXTREMAL_KEYS}
    for cv in curves:
        w = cv.window(t_s, t_c)
        if len(w.T) == 0:
            continue
        s_f, s_b = w.get("s", 1), w.get("s", -1)
        u_f, u_b = w.get("u", 1), w.get("u", -1)
        c_f, c_b = w.get("c", 1), w.get("c", -1)
        if s_f is not None:
            acc["sup_s_fwd"].append(np.max(s_f[:, -1]))
            acc["inf_s_bwd"].append(np.min(s_b[:, -1]))
        if u_f is not None:
            acc["inf_u_fwd"].append(np.min(u_f[:, 0]))
            acc["sup_u_bwd"].append(np.max(u_b[:, 0]))
        acc["inf_c_fwd"].append(np.min(c_f[:, 0]))
        acc["sup_c_fwd"].append(np.max(c_f[:, -1]))
        acc["sup_c_bwd"].append(np.max(c_b[:, 0]))
        acc["inf_c_bwd"].append(np.min(c_b[:, -1]))
    if not acc["inf_c_fwd"]:
        raise ValueError(f"no samples in the window ({t_s}, {t_c}]")
    ext = {}
    for k, vals in acc.items():
        if not vals:
            ext[k] = None
        elif k.startswith("sup"):
            ext[k] = float(np.max(vals))
        else:
            ext[k] = float(np.min(vals))
    fast = []
    if ext["sup_s_fwd"] is not None:
        fast += [-ext["sup_s_fwd"], ext["inf_s_bwd"]]
    if ext["inf_u_fwd"] is not None:
        fast += [ext["inf_u_fwd"], -ext["sup_u_bwd"]]
    nu = float(min(fast)) if fast else math.inf
    sigma = float(max(abs(ext[k]) for k in ("inf_c_fwd", "sup_c_fwd", "sup_c_bwd", "inf_c_bwd")))
    return BoundsReport(nu, sigma, float(t_s), float(t_c), ext)


def select_cutoff(
    curves,
    T_bar: float | None = None,
    fraction: float = 0.1,
    floor: float = 0.1,
    reference: str = "median",
) -> float:
    """Start of the final transient in the subspace exponents.

    Each exponent curve is compared with a reference built from its samples
    in the trailing half ``(T_bar/2, T_bar]``: the plain median by default,
    or the Theil-Sen (median-slope) line with ``reference="trend"``, which
    tolerates curves that are still drifting slowly.  A
    sample deviates when it is farther than ``fraction * max(|ref|, floor)``
    from the reference.  If the last sample of any curve deviates, the
    cut-off is the sample time just before the contiguous run of deviating
    samples that ends at ``T_bar``; otherwise ``T_bar`` is returned.  With
    several points the earliest cut-off wins.
    """
    if reference not in ("trend", "median"):
        raise ValueError("reference must be 'trend' or 'median'")
    curves = _as_list(curves)
    t_c = math.inf
    for cv in curves:
        T = cv.T
        Tb = float(T[-1]) if T_bar is None else float(T_bar)
        upto = T <= Tb + 1e-9
        T = T[upto]
        trail = T > Tb / 2 + 1e-12
        flagged = np.zeros(len(T), dtype=bool)
        for arr in cv.curves.values():
            arr = arr[upto]
            for col in arr.T:
                ref = _reference_line(T[trail], col[trail], T, reference)
                thresh = fraction * np.maximum(np.abs(ref), floor)
                flagged |= np.abs(col - ref) > thresh
        if not flagged[-1]:
            t_c = min(t_c, Tb)
            continue
        k = len(T) - 1
        while k >= 0 and flagged[k]:
            k -= 1
        t_c = min(t_c, float(T[k]) if k >= 0 else 0.0)
    return float(t_c)


def _reference_line(Tw, yw, T, kind):
    if kind == "median" or len(Tw) < 3:
        return np.full_like(T, np.median(yw))
    slope, intercept, _, _ = scipy.stats.theilslopes(yw, Tw)
    return intercept + slope * T


# ---------------------------------------------------------------------------
# per-point spectra


def time_grid(T_bar: float, n_T: int, dt: float) -> tuple[np.ndarray, float]:
    """``n_T`` equally spaced averaging times up to ``T_bar`` and a chain step
    that divides the spacing and does not exceed ``dt``."""
    spacing = T_bar / n_T
    sub = max(1, math.ceil(spacing / dt - 1e-9))
    return spacing * np.arange(1, n_T + 1), spacing / sub


@dataclass(frozen=True, eq=False)
class PointSpectra:
    x: np.ndarray
    T: np.ndarray
    fwd: np.ndarray
    bwd: np.ndarray
    fwd_data: LyapunovData
    bwd_data: LyapunovData
    visited_lo: np.ndarray
    visited_hi: np.ndarray


def point_spectra(vf: VectorField, x, T_grid, dt: float, tol=None) -> PointSpectra:
    """Forward/backward spectra at one point on a grid of averaging times."""
    x = np.asarray(x, dtype=float)
    T_grid = np.asarray(T_grid, dtype=float)
    T_bar = float(T_grid[-1])
    out = {}
    states = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        for sign in (+1, -1):
            chain = transition_chain(vf, x, T_bar, dt, sign, tol)
            steps = [int(round(T / chain.dt)) for T in T_grid]
            _, spec = ftle_curves(chain, steps)
            out[sign] = (spec, ftle_from_chain(chain))
            states.append(chain.traj.states)
    states = np.vstack(states)
    return PointSpectra(
        x, T_grid, out[1][0], out[-1][0], out[1][1], out[-1][1], states.min(axis=0), states.max(axis=0)
    )


def splitting_at(vf: VectorField, x, T_bar: float, dims, dt: float = DEFAULT_DT, tol=None, T_bwd=None) -> Splitting:
    """Splitting at ``x`` from fresh forward/backward FTLVs."""
    from .lyap import compute_ftle

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        f = compute_ftle(vf, x, T_bar, +1, dt=dt, tol=tol)
        b = compute_ftle(vf, x, T_bar if T_bwd is None else T_bwd, -1, dt=dt, tol=tol)
    return build_splitting(f, b, *dims)


def _map(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


class _SpectraTask:
    def __init__(self, vf, T_grid, dt, tol):
        self.vf, self.T_grid, self.dt, self.tol = vf, T_grid, dt, tol

    def __call__(self, x):
        try:
            return point_spectra(self.vf, x, self.T_grid, self.dt, self.tol)
        except (IntegrationError, LyapunovError, np.linalg.LinAlgError) as exc:
            return exc


class _CurvesTask:
    def __init__(self, vf, T_grid, dt, dims, tol):
        self.vf, self.T_grid, self.dt, self.dims, self.tol = vf, T_grid, dt, dims, tol

    def __call__(self, ps: PointSpectra):
        try:
            sp = build_splitting(ps.fwd_data, ps.bwd_data, *self.dims)
            curves = subspace_ftles(self.vf, ps.x, sp, self.T_grid, sp.fwd.chain.dt, self.tol)
            return sp.stacked_condition, curves
        except (IntegrationError, LyapunovError, np.linalg.LinAlgError) as exc:
            return exc


# ---------------------------------------------------------------------------
# full diagnosis


@dataclass(frozen=True)
class DiagnosisOptions:
    """Knobs for :func:`check_two_timescale`.

    ``dims``/``t_s``/``t_c`` force the corresponding choice instead of
    detecting it.
    """

    n_T: int = 20
    min_resolvability: float = 3.0
    cond_limit: float = 1e8
    cutoff_fraction: float = 0.1
    cutoff_floor: float = 0.1
    cutoff_reference: str = "median"
    min_delta: float = 0.0
    dims: tuple | None = None
    t_s: float | None = None
    t_c: float | None = None
    workers: int = 1
    tol: tuple | None = None


@dataclass(eq=False)
class TwoTimescaleDiagnosis:
    verdict: bool
    gap: SpectralGap | None
    bounds: BoundsReport | None
    T_bar: float
    resolvability: float | None
    cond_max: float | None
    cond_median: float | None
    failure_reasons: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    extended_lo: np.ndarray | None = None
    extended_hi: np.ndarray | None = None
    spectra: list = field(default_factory=list, repr=False)
    curves: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        g, b = self.gap, self.bounds
        return {
            "n_s": g.ns if g else None,
            "n_c": g.nc if g else None,
            "n_u": g.nu if g else None,
            "alpha": g.alpha if g else None,
            "beta": g.beta if g else None,
            "delta_mu": g.delta_mu if g else None,
            "sigma": b.sigma if b else None,
            "nu": b.nu if b else None,
            "t_s": g.t_s if g else None,
            "t_c": b.t_c if b else None,
            "T_bar": self.T_bar,
            "resolvability": self.resolvability,
            "verdict": bool(self.verdict),
            "failure_reasons": list(self.failure_reasons),
        }


def check_two_timescale(
    vf: VectorField,
    region: Region,
    T_bar: float,
    dt: float = DEFAULT_DT,
    options: DiagnosisOptions | None = None,
) -> TwoTimescaleDiagnosis:
    """Run the full two-timescale diagnosis on a region grid.

    Never raises for a failing stage; each failure is appended to
    ``failure_reasons`` and the verdict is false.
    """
    opt = options or DiagnosisOptions()
    reasons: list[str] = []
    T_grid, dt_chain = time_grid(T_bar, opt.n_T, dt)
    pts = region.grid()

    results = _map(_SpectraTask(vf, T_grid, dt_chain, opt.tol), list(pts), opt.workers)
    spectra = [r for r in results if isinstance(r, PointSpectra)]
    for x, r in zip(pts, results):
        if not isinstance(r, PointSpectra):
            reasons.append(f"spectrum computation failed at x={x.tolist()}: {r}")
    diag = TwoTimescaleDiagnosis(False, None, None, float(T_bar), None, None, None, reasons)
    if not spectra:
        return diag
    diag.spectra = spectra
    diag.extended_lo = np.min([s.visited_lo for s in spectra], axis=0)
    diag.extended_hi = np.max([s.visited_hi for s in spectra], axis=0)

    fwd = np.stack([s.fwd for s in spectra])
    bwd = np.stack([s.bwd for s in spectra])
    cands = spectral_gap_scan(T_grid, fwd, bwd, T_bar, opt.min_delta)
    diag.candidates = cands
    if opt.dims is not None:
        cands = [c for c in cands if c.dims == tuple(opt.dims)]
    if not cands:
        reasons.append("no uniform spectral gap")
        return diag
    gap = cands[0]
    if opt.t_s is not None:
        t_s = float(opt.t_s)
        mask = T_grid > t_s + 1e-12
        slow, fast = _gap_bounds(fwd[:, mask], bwd[:, mask], *gap.dims)
        gap = SpectralGap(*gap.dims, float(np.max(slow)), float(np.min(fast)), t_s, float(T_bar))
        if gap.delta_mu <= 0:
            reasons.append("no uniform spectral gap after the forced start time")
            diag.gap = gap
            return diag
    diag.gap = gap
    diag.resolvability = gap.delta_mu * (T_bar - gap.t_s)

    got = _map(_CurvesTask(vf, T_grid, dt_chain, gap.dims, opt.tol), spectra, opt.workers)
    conds, curves = [], []
    for s, r in zip(spectra, got):
        if isinstance(r, Exception):
            reasons.append(f"splitting failed at x={s.x.tolist()}: {r}")
        else:
            conds.append(r[0])
            curves.append(r[1])
    if conds:
        diag.cond_max = float(np.max(conds))
        diag.cond_median = float(np.median(conds))
        if diag.cond_max >= opt.cond_limit:
            reasons.append(f"splitting not transverse (condition number {diag.cond_max:.3g})")
    diag.curves = curves
    if not curves:
        return diag

    t_c = select_cutoff(curves, T_bar, opt.cutoff_fraction, opt.cutoff_floor, opt.cutoff_reference) if opt.t_c is None else float(opt.t_c)
    if t_c <= gap.t_s:
        reasons.append(f"cut-off time {t_c:g} does not exceed the start time {gap.t_s:g}")
        diag.bounds = BoundsReport(math.nan, math.nan, gap.t_s, t_c, {})
        return diag
    bounds = exponential_bounds(curves, gap.t_s, t_c)
    diag.bounds = bounds
    if not bounds.nu > bounds.sigma:
        reasons.append(f"no timescale separation (nu={bounds.nu:.4g} <= sigma={bounds.sigma:.4g})")
    if diag.resolvability < opt.min_resolvability:
        reasons.append(
            f"resolvability {diag.resolvability:.4g} below the required {opt.min_resolvability:g}"
        )
    diag.verdict = not reasons
    return diag


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True)
class ConeReport:
    psi: float
    checked: int
    violations: list
    failures: list

    @property
    def ok(self) -> bool:
        return not self.violations and not self.failures

    @property
    def max_angle(self) -> float:
        return max((v["angle"] for v in self.violations), default=float("nan"))


_CONES = (("s", -1), ("u", +1), ("cs", -1), ("cu", +1))


def _cone_basis(sp: Splitting, name: str) -> np.ndarray:
    parts = {"s": [sp.Es], "u": [sp.Eu], "cs": [sp.Ec, sp.Es], "cu": [sp.Ec, sp.Eu]}[name]
    B = np.hstack(parts)
    return np.linalg.qr(B)[0] if B.shape[1] else B


def _boundary_vectors(B, psi, samples, rng):
    n, k = B.shape
    C = np.linalg.svd(B, full_matrices=True)[0][:, k:]
    vecs = []
    for i in range(k):
        for j in range(n - k):
            for sgn in (1.0, -1.0):
                vecs.append(math.cos(psi) * B[:, i] + sgn * math.sin(psi) * C[:, j])
    for _ in range(samples):
        b = B @ rng.standard_normal(k)
        c = C @ rng.standard_normal(n - k)
        vecs.append(math.cos(psi) * b / np.linalg.norm(b) + math.sin(psi) * c / np.linalg.norm(c))
    return np.array(vecs)


def _angle_to(B, v) -> float:
    v = v / np.linalg.norm(v)
    proj = np.linalg.norm(B.T @ v)
    return float(math.acos(min(1.0, proj)))


def cone_invariance_check(
    vf: VectorField,
    x,
    splitting: Splitting,
    psi: float,
    times,
    samples: int = 32,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    splitting_fn=None,
) -> ConeReport:
    """Check the four cone inclusions for sampled boundary vectors.

    Vectors on the boundary of each cone (angle exactly ``psi`` from its
    center subspace) are propagated with the tangent dynamics in the
    inclusion direction; a violation is any propagated vector farther than
    ``psi`` from the cone center at the propagated point.  ``splitting_fn``
    maps a point to its splitting; by default it is recomputed with the
    same averaging time and dimensions.
    """
    if not 0 < psi < math.pi / 2:
        raise ValueError("cone angle must lie in (0, pi/2)")
    x = np.asarray(x, dtype=float)
    times = sorted(float(t) for t in times)
    rng = np.random.default_rng(seed)
    if splitting_fn is None:

        def splitting_fn(y):
            return splitting_at(vf, y, splitting.T_bar, splitting.dims, dt)

    violations, failures = [], []
    checked = 0
    cache: dict = {}
    for name, sign in _CONES:
        B = _cone_basis(splitting, name)
        if B.shape[1] == 0 or B.shape[1] == vf.n:
            continue
        vecs = _boundary_vectors(B, psi, samples, rng)
        T_max = times[-1]
        chain = transition_chain(vf, x, T_max, _common_step(times, dt), sign)
        for t in times:
            k = int(round(t / chain.dt))
            P = chain.product(k)
            y = chain.traj.states[k]
            key = (sign, k)
            if key not in cache:
                try:
                    cache[key] = splitting_fn(y)
                except (IntegrationError, LyapunovError, np.linalg.LinAlgError) as exc:
                    cache[key] = exc
            sp_t = cache[key]
            if isinstance(sp_t, Exception):
                failures.append({"cone": name, "t": t, "reason": str(sp_t)})
                continue
            Bt = _cone_basis(sp_t, name)
            for v in vecs:
                checked += 1
                ang = _angle_to(Bt, P @ v)
                if ang > psi + 1e-9:
                    violations.append({"cone": name, "t": t, "angle": ang})
    return ConeReport(psi, checked, violations, failures)


def _common_step(times, dt):
    """Largest step <= dt that divides every time in ``times``."""
    for sub in range(1, 100000):
        h = dt / sub
        if all(abs(t / h - round(t / h)) < 1e-7 for t in times):
            return h
    raise ValueError("times are not commensurate with the step")


# ---------------------------------------------------------------------------
# subspace convergence


@dataclass(frozen=True)
class ConvergenceFit:
    T: np.ndarray
    distances: np.ndarray
    rate: float | None
    delta_mu: float
    identifiable: bool


def convergence_rate(
    vf: VectorField,
    x,
    j: int,
    direction,
    T_grid,
    dt: float = DEFAULT_DT,
    t_s: float = 0.0,
    floor: float = 1e-12,
) -> ConvergenceFit:
    """Fit the exponential rate at which a Lyapunov subspace settles.

    Distances between the subspace at consecutive grid times are fitted by
    least squares in log scale; the empirical gap is the smallest sampled
    separation between the neighboring exponents for ``T > t_s``.
    """
    x = np.asarray(x, dtype=float)
    T_grid = np.asarray(sorted(T_grid), dtype=float)
    sign = +1 if direction in (1, "+") else -1
    h = _common_step(list(T_grid), dt)
    chain = transition_chain(vf, x, T_grid[-1], h, sign)
    subs, gaps = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        for T in T_grid:
            d = ftle_from_chain(chain.truncated(int(round(T / chain.dt))))
            subs.append(lyapunov_subspace(d, j))
            e = d.exponents
            if T > t_s:
                gaps.append(e[j] - e[j - 1] if sign > 0 else e[j - 2] - e[j - 1])
    dist = np.array([subspace_distance(a, b) for a, b in zip(subs[:-1], subs[1:])])
    Tm = T_grid[:-1]
    ok = dist > floor
    rate = None
    if ok.sum() >= 2:
        slope = np.polyfit(Tm[ok], np.log(dist[ok]), 1)[0]
        rate = float(-slope)
    delta = float(min(gaps)) if gaps else math.nan
    return ConvergenceFit(Tm, dist, rate, delta, rate is not None)


@dataclass(frozen=True)
class AlignmentFit:
    T: np.ndarray
    angles: np.ndarray
    rate: float | None


def vector_alignment(
    vf: VectorField,
    x,
    reference,
    direction,
    index: int,
    T_grid,
    dt: float = 0.05,
    fit_window: tuple[float, float] | None = None,
    floor: float = 1e-12,
) -> AlignmentFit:
    """Angles between one FTLV and a fixed reference direction versus T.

    ``index`` is the 0-based column of ``L`` (forward ascending, backward
    descending order).  The decay rate is the negated slope of a
    least-squares line through log(angle) for T inside ``fit_window``.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(reference, dtype=float)
    ref = ref / np.linalg.norm(ref)
    T_grid = np.asarray(sorted(T_grid), dtype=float)
    sign = +1 if direction in (1, "+") else -1
    h = _common_step(list(T_grid), dt)
    chain = transition_chain(vf, x, T_grid[-1], h, sign)
    angles = np.empty(len(T_grid))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        for i, T in enumerate(T_grid):
            v = ftle_from_chain(chain.truncated(int(round(T / chain.dt)))).L[:, index]
            angles[i] = math.acos(min(1.0, abs(float(v @ ref))))
    lo, hi = fit_window if fit_window is not None else (T_grid[0], T_grid[-1])
    m = (T_grid >= lo - 1e-9) & (T_grid <= hi + 1e-9) & (angles > floor)
    rate = None
    if m.sum() >= 2:
        rate = float(-np.polyfit(T_grid[m], np.log(angles[m]), 1)[0])
    return AlignmentFit(T_grid, angles, rate)
