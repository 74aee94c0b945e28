"""Finite representations of L^p([a,b], R^m) elements.

Elements are carried as step functions (value per cell) or piecewise-linear
functions (value per knot) on arbitrary strictly increasing time grids.  Step
functions admit exact quadrature, exact subdivision and exact common
refinements, which keeps the downstream property checks free of quadrature
error.  The piecewise-linear mode exists mainly to serve as an independent
oracle representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "GridError",
    "DimensionMismatchError",
    "TimeGrid",
    "LpSample",
    "Seminorm",
    "euclidean",
    "sup_norm",
    "weighted",
    "lp_seminorm",
    "ess_sup_seminorm",
    "weak_integral",
    "subdivide",
    "samples_equal",
]


class GridError(ValueError):
    """Malformed time grid or incompatible grid pair."""


class DimensionMismatchError(ValueError):
    """Value dimensions of two objects do not agree."""


# 16-point Gauss-Legendre rule, used only for the piecewise-linear mode.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing knots a = s_0 < ... < s_M = b."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise GridError("grid needs at least two knots")
        if not np.all(np.diff(knots) > 0):
            raise GridError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    @property
    def a(self) -> float:
        return float(self.knots[0])

    @property
    def b(self) -> float:
        return float(self.knots[-1])

    @property
    def ncells(self) -> int:
        return self.knots.size - 1

    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.knots[:-1] + self.knots[1:])

    def cell_of(self, t: float) -> int:
        """Index of the cell containing t (right-closed at b)."""
        if t < self.a or t > self.b:
            raise GridError(f"time {t} outside [{self.a}, {self.b}]")
        i = int(np.searchsorted(self.knots, t, side="right")) - 1
        return min(max(i, 0), self.ncells - 1)

    def refine(self, other: "TimeGrid") -> "TimeGrid":
        """Common refinement (union of knots); endpoints must agree."""
        if self.a != other.a or self.b != other.b:
            raise GridError("grids live on different intervals")
        return TimeGrid(np.union1d(self.knots, other.knots))

    def with_times(self, times) -> "TimeGrid":
        extra = np.asarray(times, dtype=float)
        if extra.size and (extra.min() < self.a or extra.max() > self.b):
            raise GridError("extra knots outside interval")
        return TimeGrid(np.union1d(self.knots, extra))

    @staticmethod
    def uniform(a: float, b: float, ncells: int) -> "TimeGrid":
        return TimeGrid(np.linspace(a, b, ncells + 1))


@dataclass(frozen=True)
class Seminorm:
    """Continuous seminorm on R^m, evaluated on batches of values.

    ``fn`` maps an (N, m) array to an (N,) array of nonnegative reals and must
    be absolutely homogeneous and subadditive.
    """

    tag: str
    fn: Callable[[np.ndarray], np.ndarray]
    dim: int | None = None

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.dim is not None and values.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"seminorm expects dimension {self.dim}, got {values.shape[1]}"
            )
        out = np.asarray(self.fn(values), dtype=float)
        return out


def euclidean(dim: int | None = None) -> Seminorm:
    return Seminorm("euclidean", lambda v: np.linalg.norm(v, axis=1), dim)


def sup_norm(dim: int | None = None) -> Seminorm:
    return Seminorm("sup", lambda v: np.max(np.abs(v), axis=1), dim)


def weighted(w) -> Seminorm:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return Seminorm("weighted", lambda v: np.abs(v) @ w, w.size)


@dataclass(frozen=True)
class LpSample:
    """A representative of a class in L^p([a,b], R^m).

    mode "constant": one value per cell.  mode "linear": one value per knot,
    interpreted piecewise-linearly.
    """

    grid: TimeGrid
    values: np.ndarray
    p: float = 1.0
    mode: str = "constant"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatchError("values must be (cells_or_knots, m)")
        expected = self.grid.ncells if self.mode == "constant" else self.grid.ncells + 1
        if self.mode not in ("constant", "linear"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if values.shape[0] != expected:
            raise DimensionMismatchError(
                f"{self.mode} mode expects {expected} rows, got {values.shape[0]}"
            )
        if not (self.p >= 1.0):
            raise ValueError("exponent p must be >= 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def eval(self, t: float) -> np.ndarray:
        if self.mode == "constant":
            return self.values[self.grid.cell_of(t)].copy()
        out = np.empty(self.dim)
        for j in range(self.dim):
            out[j] = np.interp(t, self.grid.knots, self.values[:, j])
        return out

    def eval_many(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.mode == "constant":
            idx = np.clip(
                np.searchsorted(self.grid.knots, times, side="right") - 1,
                0,
                self.grid.ncells - 1,
            )
            return self.values[idx]
        cols = [np.interp(times, self.grid.knots, self.values[:, j]) for j in range(self.dim)]
        return np.stack(cols, axis=1)

    def on_refinement(self, grid: TimeGrid) -> "LpSample":
        """Same function represented on a refining grid (exact)."""
        if not np.all(np.isin(self.grid.knots, grid.knots)):
            raise GridError("target grid does not refine the sample grid")
        if self.mode == "constant":
            vals = self.eval_many(grid.midpoints())
        else:
            vals = self.eval_many(grid.knots)
        return LpSample(grid, vals, self.p, self.mode)

    def _binary(self, other: "LpSample", op) -> "LpSample":
        if self.mode != other.mode:
            raise ValueError("mixed-mode arithmetic is not supported")
        if self.dim != other.dim:
            raise DimensionMismatchError("value dimensions differ")
        grid = self.grid.refine(other.grid)
        a = self.on_refinement(grid)
        b = other.on_refinement(grid)
        return LpSample(grid, op(a.values, b.values), self.p, self.mode)

    def __add__(self, other: "LpSample") -> "LpSample":
        return self._binary(other, np.add)

    def __sub__(self, other: "LpSample") -> "LpSample":
        return self._binary(other, np.subtract)

    def scaled(self, s: float) -> "LpSample":
        return LpSample(self.grid, s * self.values, self.p, self.mode)

    def to_json(self) -> dict:
        return {
            "a": self.grid.a,
            "b": self.grid.b,
            "p": None if np.isinf(self.p) else self.p,
            "mode": self.mode,
            "knots": self.grid.knots.tolist(),
            "values": self.values.tolist(),
        }

    @staticmethod
    def from_json(obj: dict) -> "LpSample":
        p = np.inf if obj.get("p") is None else float(obj["p"])
        return LpSample(TimeGrid(np.asarray(obj["knots"])), np.asarray(obj["values"]), p, obj["mode"])

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @staticmethod
    def loads(s: str) -> "LpSample":
        return LpSample.from_json(json.loads(s))


def lp_seminorm(f: LpSample, q: Seminorm, p: float | None = None) -> float:
    """(integral of q(f)^p)^(1/p); exact for step functions, Gauss quadrature
    for the piecewise-linear mode.  p = inf falls back to the essential sup."""
    p = f.p if p is None else p
    if np.isinf(p):
        return ess_sup_seminorm(f, q)
    w = f.grid.widths()
    if f.mode == "constant":
        qv = q(f.values)
        return float(np.sum(w * qv**p) ** (1.0 / p))
    total = 0.0
    for i in range(f.grid.ncells):
        t0, t1 = f.grid.knots[i], f.grid.knots[i + 1]
        ts = 0.5 * (t1 - t0) * (_GL_NODES + 1.0) + t0
        qv = q(f.eval_many(ts))
        total += 0.5 * (t1 - t0) * float(np.sum(_GL_WEIGHTS * qv**p))
    return total ** (1.0 / p)


def ess_sup_seminorm(f: LpSample, q: Seminorm) -> float:
    """Essential sup of q(f); max over cells (constant) or knots (linear)."""
    return float(np.max(q(f.values)))


def weak_integral(f: LpSample, t0: float, t1: float) -> np.ndarray:
    """Exact integral of the piecewise representation over [t0, t1]."""
    if t0 > t1:
        raise GridError("t0 must not exceed t1")
    if t0 < f.grid.a or t1 > f.grid.b:
        raise GridError("integration limits outside the sample interval")
    if f.mode == "constant":
        lo = np.clip(f.grid.knots[:-1], t0, t1)
        hi = np.clip(f.grid.knots[1:], t0, t1)
        return (hi - lo) @ f.values
    # linear mode: trapezoid rule on the knots clipped to [t0, t1] is exact
    knots = np.union1d(np.clip(f.grid.knots, t0, t1), [t0, t1])
    vals = f.eval_many(knots)
    w = np.diff(knots)
    return 0.5 * (w @ (vals[:-1] + vals[1:]))


def subdivide(f: LpSample, n: int, k: int) -> LpSample:
    """The rescaled restriction t -> f((k+t)/n)/n on [0,1].

    Exact for step functions: the new knots are the preimages of f's knots
    inside [k/n, (k+1)/n], mapped affinely back to [0,1].
    """
    if f.grid.a != 0.0 or f.grid.b != 1.0:
        raise GridError("subdivision requires the domain [0,1]")
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= k < n:
        raise ValueError(f"k={k} out of range for n={n}")
    lo, hi = k / n, (k + 1) / n
    inner = f.grid.knots[(f.grid.knots > lo) & (f.grid.knots < hi)]
    knots = np.union1d(inner * n - k, [0.0, 1.0])
    grid = TimeGrid(knots)
    if f.mode == "constant":
        vals = f.eval_many((grid.midpoints() + k) / n) / n
    else:
        vals = f.eval_many((grid.knots + k) / n) / n
    return LpSample(grid, vals, f.p, f.mode)


def samples_equal(f: LpSample, g: LpSample, tol: float = 0.0) -> bool:
    """Equality as L^p classes: agreement of common-refinement cell values."""
    if f.mode != g.mode or f.dim != g.dim:
        return False
    try:
        grid = f.grid.refine(g.grid)
    except GridError:
        return False
    a = f.on_refinement(grid)
    b = g.on_refinement(grid)
    return bool(np.max(np.abs(a.values - b.values)) <= tol)
