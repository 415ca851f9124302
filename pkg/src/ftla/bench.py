"""Built-in benchmark systems and their analytic reference objects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dsl import VectorField, linear_field, parse_field

__all__ = [
    "BenchmarkSystem",
    "Unavailable",
    "SYSTEMS",
    "make_system",
    "reference_manifold",
    "LINEAR7D_MATRIX",
    "MSD4D_POINTS",
]


class Unavailable(LookupError):
    """Raised when a benchmark has no analytic reference manifold."""


LINEAR7D_MATRIX = np.array(
    [
        [-5.4, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, -5.2, 0.0, 0.0, 30.0, 0.0, 0.0],
        [0.0, 0.0, -0.3, 0.0, 0.0, 0.0, 10.0],
        [0.0, 0.0, 0.0, -0.1, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 8.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.6],
    ]
)

# representative points of the mass-spring-damper region, (x1, x2, lambda1, lambda2)
MSD4D_POINTS = {
    "x1": np.array([3.00, -2.0, 7.5, 2.0]),
    "x2": np.array([2.85, -2.0, 9.3, 2.0]),
    "x3": np.array([2.70, -2.0, 11.0, 2.0]),
    "x4": np.array([2.55, -2.0, 12.8, 2.0]),
    "x5": np.array([2.40, -2.0, 14.5, 2.0]),
}


@dataclass(frozen=True, eq=False)
class BenchmarkSystem:
    """A named system with its default analysis settings.

    ``constants`` holds the published diagnosis constants for comparison;
    ``independent`` are the 0-based coordinates used to parametrize the
    center manifold.
    """

    name: str
    field: VectorField
    dims: tuple[int, int, int]
    bounds: tuple
    grid: tuple
    T_bar: float
    independent: tuple[int, ...]
    constants: dict = field(default_factory=dict)
    manifold: Callable | None = None
    ildm_curve: Callable | None = None
    ildm_error: Callable | None = None
    fixtures: dict = field(default_factory=dict)
    closure: Callable | None = None
    normals: Callable | None = None

    @property
    def params(self) -> dict:
        return dict(self.field.params)

    @property
    def n(self) -> int:
        return self.field.n


def _ds(gamma: float = 3.0) -> BenchmarkSystem:
    if not gamma > 1:
        raise ValueError("ds requires gamma > 1")
    vf = parse_field(
        "-x1 ; -g*x2 + ((g-1)*x1 + g*x1^2)/(1+x1)^2", 2, {"g": gamma}, name="ds"
    )

    def manifold(x1):
        x1 = np.asarray(x1, dtype=float)
        return np.stack([x1 / (1 + x1)], axis=-1)

    def ildm(x1):
        x1 = np.asarray(x1, dtype=float)
        g = vf.params["g"]
        x2 = x1 / (1 + x1) + 2 * x1**2 / g**2 / ((1 - 1 / g) * (1 + x1) ** 3)
        return np.stack([x2], axis=-1)

    def closure(x, p):
        g = p["g"]
        return np.array([-x[0], -g * x[1] + ((g - 1) * x[0] + g * x[0] ** 2) / (1 + x[0]) ** 2])

    return BenchmarkSystem(
        "ds",
        vf,
        dims=(1, 1, 0),
        bounds=((0.0, 2.0), (0.0, 1.0)),
        grid=(3, 3),
        T_bar=2.0,
        independent=(0,),
        constants={"alpha": 1.0, "beta": 3.0, "delta_mu": 2.0, "sigma": 1.0, "nu": 3.0, "t_s": 0.0},
        manifold=manifold,
        ildm_curve=ildm,
        closure=closure,
    )


def _sys3d(a: float = -0.2, b: float = -3.0, c: float = 3.0, gamma: float = 2.0) -> BenchmarkSystem:
    params = {"a": a, "b": b, "c": c, "g": gamma}
    vf = parse_field(
        "a*x1 ; b*x2 + g*(b - 2*a)*x1^2 ; c*x3 + g*(c - 2*a)*x1^2", 3, params, name="sys3d"
    )

    def manifold(x1):
        x1 = np.asarray(x1, dtype=float)
        v = -gamma * x1**2
        return np.stack([v, v], axis=-1)

    def ildm_error(x1):
        """Exact minus eigenvector-estimate dependent coordinates (x2, x3)."""
        x1 = np.asarray(x1, dtype=float)
        e2 = 2 * gamma * x1**2 * a**2 / ((a - b) * b)
        e3 = 2 * gamma * x1**2 * a**2 / ((a - c) * c)
        return np.stack([e2, e3], axis=-1)

    def normals(x):
        """Normals at a manifold point: to the center-unstable manifold
        (pairs with the leading backward vector) and to the center-stable
        manifold (pairs with the trailing forward vector)."""
        x1 = float(np.asarray(x, dtype=float)[0])
        return np.array([2 * gamma * x1, 1.0, 0.0]), np.array([2 * gamma * x1, 0.0, 1.0])

    def closure(x, p):
        return np.array(
            [
                p["a"] * x[0],
                p["b"] * x[1] + p["g"] * (p["b"] - 2 * p["a"]) * x[0] ** 2,
                p["c"] * x[2] + p["g"] * (p["c"] - 2 * p["a"]) * x[0] ** 2,
            ]
        )

    return BenchmarkSystem(
        "sys3d",
        vf,
        dims=(1, 1, 1),
        bounds=((-10.0, 10.0),) * 3,
        grid=(3, 3, 4),
        T_bar=3.0,
        independent=(0,),
        constants={"alpha": 0.8, "beta": 3.0, "delta_mu": 2.2, "sigma": 0.5, "nu": 3.0, "t_s": 0.0},
        manifold=manifold,
        ildm_error=ildm_error,
        closure=closure,
        normals=normals,
    )


def _msd4d(m: float = 0.5, k1: float = 1.0, k2: float = 0.01, c: float | None = None) -> BenchmarkSystem:
    if c is None:
        c = 4 * math.sqrt(k1 * m)
    if m <= 0:
        raise ValueError("msd4d requires m > 0")
    params = {"m": m, "k1": k1, "k2": k2, "c": c}
    vf = parse_field(
        """
        x2
        -(c*x2 + k1*x1 + k2*x1^3 + x4/m)/m
        (x4/m)*(k1 + 3*k2*x1^2)
        -x3 + c*x4/m
        """,
        4,
        params,
        name="msd4d",
    )

    def closure(x, p):
        m, k1, k2, c = p["m"], p["k1"], p["k2"], p["c"]
        x1, x2, l1, l2 = x
        return np.array(
            [
                x2,
                -(c * x2 + k1 * x1 + k2 * x1**3 + l2 / m) / m,
                l2 / m * (k1 + 3 * k2 * x1**2),
                -l1 + c * l2 / m,
            ]
        )

    return BenchmarkSystem(
        "msd4d",
        vf,
        dims=(1, 2, 1),
        bounds=((-1.0, 6.0), (-5.0, -1.9), (7.0, 15.0), (0.8, 5.0)),
        grid=(1, 1, 1, 1),
        T_bar=0.5,
        independent=(0, 2),
        constants={
            "alpha": 0.52,
            "beta": 5.64,
            "delta_mu": 5.12,
            "sigma": 0.66,
            "nu": 5.19,
            "t_s": 0.0,
            "resolvability": 2.6,
        },
        fixtures={k: v.copy() for k, v in MSD4D_POINTS.items()},
        closure=closure,
    )


def _linear7d(**overrides) -> BenchmarkSystem:
    A = LINEAR7D_MATRIX.copy()
    vf = linear_field(A, name="linear7d")
    if overrides:
        vf = vf.with_params(**overrides)
    return BenchmarkSystem(
        "linear7d",
        vf,
        dims=(2, 3, 2),
        bounds=((0.0, 0.0),) * 7,
        grid=(1,) * 7,
        T_bar=6.0,
        independent=(2, 3, 4),
        constants={"sigma": 0.31, "nu": 3.29, "t_s": 2.05, "t_c": 5.5},
        fixtures={"x_e": np.zeros(7)},
        closure=lambda x, p: A @ x,
    )


_PARAM_NAMES = {
    "ds": {"gamma": "gamma", "g": "gamma"},
    "sys3d": {"a": "a", "b": "b", "c": "c", "gamma": "gamma", "g": "gamma"},
    "msd4d": {"m": "m", "k1": "k1", "k2": "k2", "c": "c"},
}

SYSTEMS = ("ds", "sys3d", "msd4d", "linear7d")


def make_system(name: str, **overrides: float) -> BenchmarkSystem:
    """Build a benchmark by name with optional parameter overrides."""
    if name not in SYSTEMS:
        raise KeyError(f"unknown system {name!r}; choose from {', '.join(SYSTEMS)}")
    if name == "linear7d":
        return _linear7d(**overrides)
    names = _PARAM_NAMES[name]
    kwargs = {}
    for key, val in overrides.items():
        if key not in names:
            raise ValueError(f"{name} has no parameter {key!r}")
        kwargs[names[key]] = float(val)
    builder = {"ds": _ds, "sys3d": _sys3d, "msd4d": _msd4d}[name]
    return builder(**kwargs)


def reference_manifold(system: BenchmarkSystem, indep) -> np.ndarray:
    """Exact dependent coordinates of the center manifold for given independents."""
    if system.manifold is None:
        raise Unavailable(f"no analytic center manifold is known for {system.name}")
    return system.manifold(indep)
