"""Command-line front end.

``ftla <command> --config <path.json> [--out DIR] [--workers N] [--seed S]``

Commands: spectrum, diagnose, manifold, ildm, verify, converge.  Every
output file starts with a header block holding the tool version, the
command, the seed and a SHA-256 of the canonical config.  Exit status is 0
on success, 2 when ``diagnose`` ran but the verdict is false, 1 on error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bench import SYSTEMS, make_system
from .diagnose import (
    DiagnosisOptions,
    Region,
    _common_step,
    check_two_timescale,
    cone_invariance_check,
    convergence_rate,
    point_spectra,
    time_grid,
    vector_alignment,
)
from .dsl import FieldError, load_field
from .ildm import ildm_complement, ildm_estimator, ildm_point
from .integrate import DEFAULT_DT
from .lyap import DegenerateSpectrumWarning, build_splitting
from .manifold import (
    Parametrization,
    SolverSchedule,
    ftla_estimator,
    invariance_percent,
    orthogonality_residual,
    solve_manifold,
    solve_manifold_point,
)

__all__ = ["ConfigError", "RunConfig", "load_config", "run", "main", "COMMANDS", "bundled_configs"]

log = logging.getLogger("ftla")

COMMANDS = ("spectrum", "diagnose", "manifold", "ildm", "verify", "converge")


class ConfigError(ValueError):
    """Invalid run configuration; ``where`` locates the offending entry."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


# ---------------------------------------------------------------------------
# config


_SECTIONS = ("spectrum", "diagnosis", "manifold", "ildm", "verify", "converge")
_SCHEDULE_KEYS = {f.name for f in fields(SolverSchedule)} | {"fixed"}
_DIAG_KEYS = ({f.name for f in fields(DiagnosisOptions)} - {"workers"}) | {"cones"}


@dataclass
class RunConfig:
    """Parsed run configuration.

    ``system`` is ``{"name": ..., "params": {...}}`` for a built-in or
    ``{"file": ..., "dims": [ns, nc, nu]}`` for a DSL file (relative paths
    resolve against ``base_dir``).  The per-command sections are kept as
    plain dicts and validated when the command runs.
    """

    system: dict
    region: dict | None = None
    T_bar: float | None = None
    n_T: int = 20
    dt: float = DEFAULT_DT
    dims: list | None = None
    diagnosis: dict = field(default_factory=dict)
    spectrum: dict = field(default_factory=dict)
    manifold: dict = field(default_factory=dict)
    ildm: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    converge: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0
    base_dir: str = field(default=".", compare=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("top level must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown key {extra[0]!r}", extra[0])
        if "system" not in data:
            raise ConfigError("missing required key", "system")
        cfg = cls(**data, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def validate(self) -> None:
        s = self.system
        if not isinstance(s, dict):
            raise ConfigError("must be an object", "system")
        if ("name" in s) == ("file" in s):
            raise ConfigError("give exactly one of 'name' or 'file'", "system")
        if "name" in s and s["name"] not in SYSTEMS:
            raise ConfigError(f"unknown system {s['name']!r}; choose from {', '.join(SYSTEMS)}", "system.name")
        if "file" in s:
            p = self.resolve(s["file"])
            if not p.is_file():
                raise ConfigError(f"file not found: {p}", "system.file")
            if self.dims is None:
                raise ConfigError("required for DSL-file systems", "dims")
        if not isinstance(s.get("params", {}), dict):
            raise ConfigError("must be an object", "system.params")
        for key in ("T_bar", "dt"):
            v = getattr(self, key)
            if v is not None and not (_is_num(v) and v > 0):
                raise ConfigError("must be a positive number", key)
        if not (isinstance(self.n_T, int) and self.n_T >= 1):
            raise ConfigError("must be a positive integer", "n_T")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("must be an integer", "seed")
        if self.dims is not None:
            if not (isinstance(self.dims, list) and len(self.dims) == 3 and all(isinstance(k, int) and k >= 0 for k in self.dims)):
                raise ConfigError("must be three non-negative integers", "dims")
        for sec in _SECTIONS:
            if not isinstance(getattr(self, sec), dict):
                raise ConfigError("must be an object", sec)
        bad = sorted(set(self.diagnosis) - _DIAG_KEYS)
        if bad:
            raise ConfigError("unknown option", f"diagnosis.{bad[0]}")
        if "min_resolvability" in self.diagnosis and not self.diagnosis["min_resolvability"] >= 0:
            raise ConfigError("must be non-negative", "diagnosis.min_resolvability")
        for sec in ("manifold", "verify"):
            sch = getattr(self, sec).get("schedule", {})
            bad = sorted(set(sch) - _SCHEDULE_KEYS)
            if bad:
                raise ConfigError("unknown option", f"{sec}.schedule.{bad[0]}")
        if self.region is not None:
            r = self.region
            if not isinstance(r, dict) or not ({"bounds", "points"} & set(r)):
                raise ConfigError("needs 'bounds' and/or 'points'", "region")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def bundled_configs() -> dict[str, Path]:
    root = resources.files("ftla") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def load_config(path: str | Path) -> RunConfig:
    """Read a JSON config; a bare bundled name (e.g. ``ds``) also works."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_configs()
        if str(path) in bundled:
            p = bundled[str(path)]
        else:
            raise ConfigError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{exc.msg}", f"{p}:{exc.lineno}:{exc.colno}") from None
    return RunConfig.from_dict(data, base_dir=p.parent)


# ---------------------------------------------------------------------------
# context


@dataclass
class _Context:
    cfg: RunConfig
    vf: object
    system: object
    dims: tuple
    region: Region | None
    T_bar: float


def _context(cfg: RunConfig) -> _Context:
    s = cfg.system
    if "name" in s:
        try:
            system = make_system(s["name"], **s.get("params", {}))
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc), "system.params") from None
        vf = system.field
        dims = tuple(cfg.dims) if cfg.dims is not None else system.dims
        T_bar = cfg.T_bar if cfg.T_bar is not None else system.T_bar
        default_region = Region(system.bounds, system.grid)
    else:
        try:
            vf = load_field(cfg.resolve(s["file"]))
        except FieldError as exc:
            raise ConfigError(str(exc), "system.file") from None
        if s.get("params"):
            vf = vf.with_params(**s["params"])
        system = None
        dims = tuple(cfg.dims)
        if cfg.T_bar is None:
            raise ConfigError("required for DSL-file systems", "T_bar")
        T_bar = cfg.T_bar
        default_region = None
    if sum(dims) != vf.n:
        raise ConfigError(f"dimensions {dims} do not add up to n={vf.n}", "dims")
    region = _region(cfg.region, vf.n) if cfg.region is not None else default_region
    return _Context(cfg, vf, system, dims, region, float(T_bar))


def _region(r: dict, n: int) -> Region:
    try:
        pts = r.get("points")
        if "bounds" in r:
            reg = Region(tuple(tuple(b) for b in r["bounds"]), r.get("counts"), pts)
        else:
            reg = Region.from_points(pts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "region") from None
    if reg.n != n:
        raise ConfigError(f"region has dimension {reg.n}, system has {n}", "region")
    return reg


def _need_region(ctx: _Context, where: str) -> Region:
    if ctx.region is None:
        raise ConfigError("a region is required", where)
    return ctx.region


def _points(sec: dict, ctx: _Context, where: str) -> np.ndarray:
    if "points" in sec:
        pts = np.atleast_2d(np.asarray(sec["points"], dtype=float))
    elif "fixtures" in sec:
        fx = ctx.system.fixtures if ctx.system is not None else {}
        try:
            pts = np.array([fx[k] for k in sec["fixtures"]])
        except KeyError as exc:
            raise ConfigError(f"unknown fixture {exc.args[0]!r}", f"{where}.fixtures") from None
    else:
        pts = _need_region(ctx, where).grid()
    if pts.shape[1] != ctx.vf.n:
        raise ConfigError(f"points must have length {ctx.vf.n}", f"{where}.points")
    return pts


def _schedule(sec: dict, where: str) -> SolverSchedule:
    sch = dict(sec.get("schedule", {}))
    try:
        if sch.pop("fixed", False):
            T = sch.pop("T_fwd")
            return SolverSchedule.fixed(T, sch.pop("T_bwd", None), **sch)
        return SolverSchedule(**sch)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), f"{where}.schedule") from None


def _param(sec: dict, ctx: _Context, where: str) -> Parametrization:
    indep = sec.get("independent")
    if indep is None and ctx.system is not None:
        indep = ctx.system.independent
    if indep is None:
        raise ConfigError("required for DSL-file systems", f"{where}.independent")
    try:
        return Parametrization.from_independent(indep, ctx.vf.n)
    except ValueError as exc:
        raise ConfigError(str(exc), f"{where}.independent") from None


def _indep_values(sec: dict, param: Parametrization, where: str) -> np.ndarray:
    vals = sec.get("values")
    if vals is None:
        raise ConfigError("required unless 'points' is given", f"{where}.values")
    vals = np.asarray(vals, dtype=float)
    k = len(param.independent)
    if vals.ndim == 1:
        vals = vals.reshape(-1, 1) if k == 1 else vals.reshape(1, -1)
    if vals.shape[1] != k:
        raise ConfigError(f"each value needs {k} entries", f"{where}.values")
    return vals


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return "" if v is None else str(v)


def _header(ctx: _Context, command: str) -> list[str]:
    return [
        f"ftla {__version__}",
        f"command {command}",
        f"config_sha256 {ctx.cfg.digest}",
        f"seed {ctx.cfg.seed}",
    ]


def write_csv(path: Path, header: list[str], columns: list[str], rows) -> Path:
    buf = io.StringIO(newline="")
    for line in header:
        buf.write(f"# {line}\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Header lines and data rows (as dicts of strings) of an output CSV."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    header = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return header, list(csv.DictReader(body))


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt(v)
    return v


def write_json(path: Path, header: list[str], payload: dict) -> Path:
    meta = dict(line.split(" ", 1) for line in header)
    meta = {"tool": "ftla", "version": meta.pop("ftla"), **meta}
    meta["seed"] = int(meta["seed"])
    doc = {"header": meta, **{k: _json_value(v) for k, v in payload.items()}}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands


def _pool_map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def cmd_spectrum(ctx: _Context, out: Path, workers: int) -> tuple[int, list[Path]]:
    sec = ctx.cfg.spectrum
    pts = _points(sec, ctx, "spectrum")
    dt = float(sec.get("dt", ctx.cfg.dt))
    if "T" in sec:
        T_grid = np.asarray(sorted(np.atleast_1d(sec["T"])), dtype=float)
        if not np.all(T_grid > 0):
            raise ConfigError("averaging times must be positive", "spectrum.T")
        h = _common_step(list(T_grid), dt)
    else:
        T_grid, h = time_grid(float(sec.get("T_bar", ctx.T_bar)), int(sec.get("n_T", ctx.cfg.n_T)), dt)
    specs = _pool_map(_SpectrumTask(ctx.vf, T_grid, h), list(pts), workers)
    n = ctx.vf.n
    rows = []
    for pid, (x, sp) in enumerate(zip(pts, specs)):
        for direction, data in (("+", sp.fwd), ("-", sp.bwd)):
            for T, ex in zip(T_grid, data):
                for i, e in enumerate(ex):
                    rows.append([pid, direction, T, i + 1, e, *x])
    cols = ["x_id", "direction", "T", "index", "exponent"] + [f"x{i + 1}" for i in range(n)]
    return 0, [write_csv(out / "spectrum.csv", _header(ctx, "spectrum"), cols, rows)]


class _SpectrumTask:
    def __init__(self, vf, T_grid, dt):
        self.vf, self.T_grid, self.dt = vf, T_grid, dt

    def __call__(self, x):
        return point_spectra(self.vf, x, self.T_grid, self.dt)


def cmd_diagnose(ctx: _Context, out: Path, workers: int) -> tuple[int, list[Path]]:
    sec = dict(ctx.cfg.diagnosis)
    cones = sec.pop("cones", None)
    for key in ("dims", "tol"):
        if sec.get(key) is not None:
            sec[key] = tuple(sec[key])
    sec.setdefault("n_T", ctx.cfg.n_T)
    opts = DiagnosisOptions(**sec, workers=workers)
    diag = check_two_timescale(ctx.vf, _need_region(ctx, "region"), ctx.T_bar, ctx.cfg.dt, opts)
    for r in diag.failure_reasons:
        log.info("diagnosis: %s", r)
    payload = diag.to_dict()
    if cones is not None and diag.gap is not None:
        payload["cones"] = _cone_summary(ctx, diag, cones)
    path = write_json(out / "diagnosis.json", _header(ctx, "diagnose"), payload)
    return (0 if diag.verdict else 2), [path]


def _cone_summary(ctx: _Context, diag, cones: dict) -> dict:
    """Cone-inclusion check at every grid point; reported, not part of the verdict."""
    psi = float(cones.get("psi", 0.3))
    times = cones.get("times", [ctx.T_bar / 2])
    samples = int(cones.get("samples", 16))
    checked = violations = failures = 0
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        for k, ps in enumerate(diag.spectra):
            sp = build_splitting(ps.fwd_data, ps.bwd_data, *diag.gap.dims)
            rep = cone_invariance_check(
                ctx.vf, ps.x, sp, psi, times, samples, seed=ctx.cfg.seed + k, dt=ctx.cfg.dt
            )
            checked += rep.checked
            violations += len(rep.violations)
            failures += len(rep.failures)
            if rep.violations:
                worst = max(worst, rep.max_angle)
    return {
        "psi": psi,
        "times": [float(t) for t in times],
        "checked": checked,
        "violations": violations,
        "failures": failures,
        "max_violation_angle": worst if violations else None,
        "ok": violations == 0 and failures == 0,
    }


def _manifold_rows(ctx, pts, param):
    n = ctx.vf.n
    rows = []
    for pid, p in enumerate(pts):
        rows.append(
            [pid, *p.x, *p.residuals, p.theta, p.T_fwd, p.T_bwd, sum(p.inner_iterations), p.outer_iterations, p.status]
        )
    cols = (
        ["point_id"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"residual{k + 1}" for k in range(n - ctx.dims[1])]
        + ["theta", "T_fwd", "T_bwd", "inner_iterations", "outer_iterations", "status"]
    )
    return cols, rows


class _SolveTask:
    def __init__(self, vf, dims, param, schedule, region):
        self.vf, self.dims, self.param, self.schedule, self.region = vf, dims, param, schedule, region

    def __call__(self, x):
        ind, dep = self.param.split(x)
        return solve_manifold_point(self.vf, ind, dep, self.dims, self.param, self.schedule, self.region)


def cmd_manifold(ctx: _Context, out: Path, workers: int) -> tuple[int, list[Path]]:
    sec = ctx.cfg.manifold
    param = _param(sec, ctx, "manifold")
    sch = _schedule(sec, "manifold")
    guard = ctx.region if sec.get("guard", sch.adaptive) else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        if "points" in sec or "fixtures" in sec:
            starts = _points(sec, ctx, "manifold")
            pts = _pool_map(_SolveTask(ctx.vf, ctx.dims, param, sch, guard), list(starts), workers)
        else:
            vals = _indep_values(sec, param, "manifold")
            guess = sec.get("guess", [0.0] * len(param.dependent))
            pts = solve_manifold(ctx.vf, vals, guess, ctx.dims, param, sch, guard, sec.get("warm_start", True))
    for i, p in enumerate(pts):
        if p.flagged:
            log.info("manifold point %d: %s (%s)", i, p.status, p.halt_reason)
    cols, rows = _manifold_rows(ctx, pts, param)
    return 0, [write_csv(out / "manifold.csv", _header(ctx, "manifold"), cols, rows)]


def cmd_ildm(ctx: _Context, out: Path, workers: int) -> tuple[int, list[Path]]:
    sec = ctx.cfg.ildm
    param = _param(sec, ctx, "ildm")
    if "points" in sec or "fixtures" in sec:
        starts = [param.split(x) for x in _points(sec, ctx, "ildm")]
    else:
        vals = _indep_values(sec, param, "ildm")
        guess = np.asarray(sec.get("guess", [0.0] * len(param.dependent)), dtype=float)
        starts = [(v, guess) for v in vals]
    n = ctx.vf.n
    rows = []
    prev = None
    for pid, (ind, dep) in enumerate(starts):
        if prev is not None and sec.get("warm_start", True) and "values" in sec:
            dep = prev
        x = ildm_point(ctx.vf, ind, dep, ctx.dims, param)
        prev = x[list(param.dependent)]
        basis = ildm_complement(ctx.vf, x, *ctx.dims)
        res = orthogonality_residual(ctx.vf, x, basis.complement)
        rows.append([pid, *x, *res, *basis.eigenvalues])
    cols = (
        ["point_id"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"residual{k + 1}" for k in range(n - ctx.dims[1])]
        + [f"eigenvalue{i + 1}" for i in range(n)]
    )
    return 0, [write_csv(out / "ildm.csv", _header(ctx, "ildm"), cols, rows)]


class _VerifyTask:
    def __init__(self, vf, dims, param, schedule, region, methods, t_plus, t_minus):
        self.vf, self.dims, self.param = vf, dims, param
        self.schedule, self.region, self.methods = schedule, region, methods
        self.t_plus, self.t_minus = t_plus, t_minus

    def __call__(self, x):
        ind, dep = self.param.split(x)
        out = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            if "ftla" in self.methods:
                p = solve_manifold_point(self.vf, ind, dep, self.dims, self.param, self.schedule, self.region)
                est = ftla_estimator(self.vf, self.dims, self.param, self.schedule, self.region)
                out["ftla"] = (p.x, p.status, invariance_percent(self.vf, p, self.t_plus, self.t_minus, est))
            if "ildm" in self.methods:
                xi = ildm_point(self.vf, ind, dep, self.dims, self.param)
                est = ildm_estimator(self.vf, self.dims, self.param)
                rep = invariance_percent(self.vf, xi, self.t_plus, self.t_minus, est, self.param)
                out["ildm"] = (xi, "converged", rep)
        return out


def cmd_verify(ctx: _Context, out: Path, workers: int) -> tuple[int, list[Path]]:
    sec = ctx.cfg.verify
    param = _param(sec, ctx, "verify")
    sch = _schedule(sec, "verify")
    methods = tuple(sec.get("methods", ("ftla", "ildm")))
    bad = set(methods) - {"ftla", "ildm"}
    if bad:
        raise ConfigError(f"unknown method {sorted(bad)[0]!r}", "verify.methods")
    t_plus, t_minus = float(sec.get("t_plus", 1.5)), float(sec.get("t_minus", -1.0))
    guard = ctx.region if sec.get("guard", sch.adaptive) else None
    starts = _points(sec, ctx, "verify")
    task = _VerifyTask(ctx.vf, ctx.dims, param, sch, guard, methods, t_plus, t_minus)
    results = _pool_map(task, list(starts), workers)
    names = list(sec.get("fixtures", [])) or [str(i) for i in range(len(starts))]
    n = ctx.vf.n
    rows = []
    for name, res in zip(names, results):
        for method in methods:
            x, status, rep = res[method]
            for (coord, sign), ip in sorted(rep.values.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
                t = t_plus if sign > 0 else t_minus
                rows.append([name, method, f"x{coord + 1}", "+" if sign > 0 else "-", t, ip, status, *x])
    cols = ["point", "method", "coordinate", "direction", "t", "ip_percent", "status"] + [f"x{i + 1}" for i in range(n)]
    return 0, [write_csv(out / "verify.csv", _header(ctx, "verify"), cols, rows)]


def cmd_converge(ctx: _Context, out: Path, workers: int) -> tuple[int, list[Path]]:
    sec = ctx.cfg.converge
    pts = _points(sec, ctx, "converge")
    if "T" not in sec:
        raise ConfigError("required", "converge.T")
    T_grid = np.asarray(sec["T"], dtype=float)
    dt = float(sec.get("dt", ctx.cfg.dt))
    window = tuple(sec["fit_window"]) if "fit_window" in sec else None
    targets = sec.get("vectors")
    rows, fits = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        for pid, x in enumerate(pts):
            if targets:
                for k, tgt in enumerate(targets):
                    ref = tgt.get("reference")
                    if ref is None:
                        if ctx.system is None or ctx.system.normals is None:
                            raise ConfigError("no analytic normals for this system", f"converge.vectors[{k}]")
                        ref = ctx.system.normals(x)[int(tgt["normal"])]
                    fit = vector_alignment(ctx.vf, x, ref, tgt["direction"], int(tgt["index"]), T_grid, dt, window)
                    label = tgt.get("label", f"vector{k + 1}")
                    rows += [[pid, label, "angle", T, a] for T, a in zip(fit.T, fit.angles)]
                    fits.append([pid, label, fit.rate])
            else:
                j, direction = int(sec.get("j", ctx.dims[0])), sec.get("direction", 1)
                fit = convergence_rate(ctx.vf, x, j, direction, T_grid, dt)
                label = f"E{j}{'+' if direction in (1, '+') else '-'}"
                rows += [[pid, label, "distance", T, d] for T, d in zip(fit.T, fit.distances)]
                fits.append([pid, label, fit.rate])
    head = _header(ctx, "converge")
    p1 = write_csv(out / "converge.csv", head, ["x_id", "target", "kind", "T", "value"], rows)
    p2 = write_csv(out / "converge_fit.csv", head, ["x_id", "target", "rate"], fits)
    return 0, [p1, p2]


_COMMANDS = {
    "spectrum": cmd_spectrum,
    "diagnose": cmd_diagnose,
    "manifold": cmd_manifold,
    "ildm": cmd_ildm,
    "verify": cmd_verify,
    "converge": cmd_converge,
}


def run(config: RunConfig, command: str, out: str | Path | None = None, workers: int | None = None) -> tuple[int, list[Path]]:
    """Execute one command; returns the exit status and the written files."""
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    ctx = _context(config)
    out_dir = Path(out if out is not None else (config.resolve(config.out) if config.out else "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    w = workers if workers is not None else (os.cpu_count() or 1)
    np.random.seed(config.seed % 2**32)
    return _COMMANDS[command](ctx, out_dir, max(1, int(w)))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ftla", description="Finite-time two-timescale analysis.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON config path or a bundled name (ds, sys3d, msd4d, linear7d)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--workers", type=int, default=None, help="parallel workers (default: CPU count)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        status, paths = run(cfg, args.command, args.out, args.workers)
    except ConfigError as exc:
        print(f"ftla: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface the originating module's message
        print(f"ftla: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return status


if __name__ == "__main__":
    sys.exit(main())
