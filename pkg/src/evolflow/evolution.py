"""Evolution of time-dependent spline vector fields into group paths.

The central solver turns a piecewise-constant-in-time velocity curve into the
absolutely continuous path of diffeomorphisms it generates.  Inside the
contraction ball the path is the Banach fixed point of the integral operator

    T(gamma, x, zeta)(t) = x + integral_0^t gamma(s)(zeta(s)) ds,

iterated simultaneously for every node of the displacement grid.  Velocities
with a large contraction budget are split into n rescaled segments, each
solved locally and glued by right translation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ac_path import AcPath, ContinuousTrace
from .diff_group import GroupPath, d_rho, group_path_distance, identity_like, star
from .lp_space import GridError, LpSample, TimeGrid
from .vector_field import _SplineField, load_field, resampling_estimate, save_field
from ._parallel import ordered_thread_map

__all__ = [
    "TimeVelocity",
    "PicardDiagnostics",
    "EvolutionResult",
    "apply_along",
    "apply_T",
    "contraction_bound",
    "contraction_bounds",
    "picard_point",
    "picard_points",
    "rk4_oracle",
    "rk4_points",
    "local_evolve",
    "evolve",
    "flow_point",
    "residual",
    "continuity_probe",
]

DEFAULT_L_MAX = 0.5
DEFAULT_MAX_DT = 1.0 / 256.0
SUBDIVISION_LIMIT = 1 << 16


@dataclass
class TimeVelocity:
    """Piecewise-constant-in-time curve of vector fields on [0,1]."""

    grid: TimeGrid
    fields: list
    p: float = 1.0

    def __post_init__(self):
        if self.grid.a != 0.0 or self.grid.b != 1.0:
            raise GridError("velocity curves live on [0,1]")
        if len(self.fields) != self.grid.ncells:
            raise ValueError("one field per time cell required")
        for f in self.fields[1:]:
            self.fields[0]._check_geometry(f)

    @property
    def proto(self) -> _SplineField:
        return self.fields[0]

    @property
    def dimension(self) -> int:
        return self.proto.dimension

    def alpha_values(self) -> np.ndarray:
        return np.array([f.alpha() for f in self.fields])

    def alpha_sample(self) -> LpSample:
        return LpSample(self.grid, self.alpha_values()[:, None], self.p)

    def field_at(self, t: float) -> _SplineField:
        return self.fields[self.grid.cell_of(t)]

    def subdivide(self, n: int, k: int) -> "TimeVelocity":
        """The rescaled restriction gamma_{n,k}(t) = gamma((k+t)/n)/n."""
        if not 0 <= k < n:
            raise ValueError(f"k={k} out of range for n={n}")
        lo, hi = k / n, (k + 1) / n
        inner = self.grid.knots[(self.grid.knots > lo) & (self.grid.knots < hi)]
        grid = TimeGrid(np.union1d(inner * n - k, [0.0, 1.0]))
        scaled_cache: dict[int, _SplineField] = {}
        fields = []
        for m in grid.midpoints():
            ci = self.grid.cell_of((m + k) / n)
            if ci not in scaled_cache:
                scaled_cache[ci] = self.fields[ci].scaled(1.0 / n)
            fields.append(scaled_cache[ci])
        return TimeVelocity(grid, fields, self.p)

    def refined(self, max_dt: float) -> tuple[TimeGrid, np.ndarray]:
        """Uniformly split cells to width <= max_dt; returns grid + cell map."""
        knots = [self.grid.knots[0]]
        cellmap = []
        for i in range(self.grid.ncells):
            t0, t1 = self.grid.knots[i], self.grid.knots[i + 1]
            m = max(1, int(np.ceil((t1 - t0) / max_dt - 1e-12)))
            knots.extend(np.linspace(t0, t1, m + 1)[1:])
            cellmap.extend([i] * m)
        return TimeGrid(np.array(knots)), np.array(cellmap)

    def __add__(self, other: "TimeVelocity") -> "TimeVelocity":
        grid = self.grid.refine(other.grid)
        fields = [
            self.field_at(m) + other.field_at(m) for m in grid.midpoints()
        ]
        return TimeVelocity(grid, fields, self.p)

    def scaled(self, s: float) -> "TimeVelocity":
        return TimeVelocity(self.grid, [f.scaled(s) for f in self.fields], self.p)

    # -- manifest ----------------------------------------------------------
    def save(self, directory: str | Path, name: str = "velocity") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, f in enumerate(self.fields):
            fname = f"{name}_cell{i:04d}.cfld"
            save_field(f, directory / fname)
            files.append(fname)
        manifest = {
            "p": None if np.isinf(self.p) else self.p,
            "knots": self.grid.knots.tolist(),
            "field_files": files,
        }
        path = directory / f"{name}.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @staticmethod
    def load(manifest_path: str | Path) -> "TimeVelocity":
        manifest_path = Path(manifest_path)
        obj = json.loads(manifest_path.read_text())
        p = np.inf if obj.get("p") is None else float(obj["p"])
        fields = [load_field(manifest_path.parent / f) for f in obj["field_files"]]
        return TimeVelocity(TimeGrid(np.asarray(obj["knots"])), fields, p)


@dataclass
class PicardDiagnostics:
    iterations: int
    last_change: float
    contraction: float
    residual_bound: float
    resample_estimate: float = 0.0


@dataclass
class EvolutionResult:
    """Solved group path plus per-segment solver diagnostics."""

    path: GroupPath
    n: int
    segments: list
    residual: float


# -- operator building blocks ----------------------------------------------

def apply_along(gamma: TimeVelocity, zeta: ContinuousTrace) -> LpSample:
    """The step sample t -> gamma(t)(zeta(t)), midpoint-sampled per cell of
    the common refinement of the two grids."""
    grid = gamma.grid.refine(zeta.grid)
    mids = grid.midpoints()
    pts = zeta.eval_many(mids)
    vals = np.empty((grid.ncells, gamma.dimension))
    for i, m in enumerate(mids):
        vals[i] = gamma.field_at(m).eval(pts[i][None])[0]
    return LpSample(grid, vals, gamma.p)


def apply_T(gamma: TimeVelocity, x, zeta: ContinuousTrace) -> ContinuousTrace:
    """One application of the integral operator T(gamma, x, .)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sample = apply_along(gamma, zeta)
    incr = sample.grid.widths()[:, None] * sample.values
    vals = np.concatenate([x[None], x[None] + np.cumsum(incr, axis=0)])
    return ContinuousTrace(sample.grid, vals)


def contraction_bound(gamma: TimeVelocity) -> float:
    """The L^1 budget: sum of cell width times alpha of the cell field."""
    return float(np.sum(gamma.grid.widths() * gamma.alpha_values()))


def contraction_bounds(gamma: TimeVelocity) -> dict:
    from .lp_space import lp_seminorm, euclidean

    sample = gamma.alpha_sample()
    q = euclidean()
    return {
        "l1": lp_seminorm(sample, q, p=1.0),
        "lp": lp_seminorm(sample, q, p=gamma.p),
    }


# -- point solver ----------------------------------------------------------

def _picard_sweep(gamma, grid, cellmap, anchors, offsets, tol, max_iter):
    """Shared fixed-point loop.

    ``anchors`` (S, d) are the integration starting values; ``offsets``
    (S, d) are added before field evaluation (zero for point trajectories,
    the grid nodes for field-valued sweeps working in displacements).
    """
    w = grid.widths()
    T = grid.ncells
    S, d = anchors.shape
    zeta = np.broadcast_to(anchors, (T + 1, S, d)).copy()
    g = np.zeros((T, S, d))
    change = np.inf
    for it in range(1, max_iter + 1):
        mids = 0.5 * (zeta[:-1] + zeta[1:])
        for ci in np.unique(cellmap):
            rows = np.where(cellmap == ci)[0]
            pts = (mids[rows] + offsets[None]).reshape(-1, d)
            g[rows] = gamma.fields[ci].eval(pts).reshape(len(rows), S, d)
        new = np.empty_like(zeta)
        new[0] = anchors
        new[1:] = anchors[None] + np.cumsum(w[:, None, None] * g, axis=0)
        change = float(np.max(np.abs(new - zeta)))
        zeta = new
        if change < tol:
            return zeta, g, it, change
    raise RuntimeError(
        f"Picard iteration did not reach tol={tol} in {max_iter} sweeps "
        f"(last change {change:.3g})"
    )


def picard_points(
    gamma: TimeVelocity,
    xs: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 200,
    max_dt: float = DEFAULT_MAX_DT,
):
    """Batched fixed-point trajectories for several start points.

    Returns (grid, knot values (T+1, S, d), densities (T, S, d), diag).
    """
    L = contraction_bound(gamma)
    if L >= 1.0:
        raise ValueError(f"contraction bound {L:.4g} >= 1; subdivide first")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    grid, cellmap = gamma.refined(max_dt)
    offsets = np.zeros(xs.shape[1])
    zeta, g, iters, change = _picard_sweep(gamma, grid, cellmap, xs, offsets, tol, max_iter)
    bound = tol / (1.0 - L)
    diag = PicardDiagnostics(iters, change, L, bound)
    return grid, zeta, g, diag


def picard_point(
    gamma: TimeVelocity,
    x,
    tol: float = 1e-12,
    max_iter: int = 200,
    max_dt: float = DEFAULT_MAX_DT,
) -> tuple[AcPath, PicardDiagnostics]:
    """Trajectory of a single point as an absolutely continuous path."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid, zeta, g, diag = picard_points(gamma, x[None], tol, max_iter, max_dt)
    traj = AcPath(x, LpSample(grid, g[:, 0, :], gamma.p))
    return traj, diag


# -- reference integrator --------------------------------------------------

def rk4_points(gamma: TimeVelocity, xs: np.ndarray, steps: int) -> np.ndarray:
    """Classical RK4 trajectories, freezing gamma per its own time cells.

    Returns knot values of shape (steps+1, S, d).  Test oracle only.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    dt = 1.0 / steps
    mids = (np.arange(steps) + 0.5) * dt
    cells = np.clip(
        np.searchsorted(gamma.grid.knots, mids, side="right") - 1, 0, gamma.grid.ncells - 1
    )
    traj = np.empty((steps + 1,) + xs.shape)
    y = xs.copy()
    traj[0] = y
    for j in range(steps):
        F = gamma.fields[cells[j]]
        k1 = F.eval(y)
        k2 = F.eval(y + 0.5 * dt * k1)
        k3 = F.eval(y + 0.5 * dt * k2)
        k4 = F.eval(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[j + 1] = y
    return traj


def rk4_oracle(gamma: TimeVelocity, x, steps: int) -> AcPath:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    traj = rk4_points(gamma, x[None], steps)[:, 0, :]
    grid = TimeGrid(np.linspace(0.0, 1.0, steps + 1))
    density = np.diff(traj, axis=0) * steps
    return AcPath(x, LpSample(grid, density, gamma.p))


# -- field-valued solver ---------------------------------------------------

def local_evolve(
    gamma: TimeVelocity,
    L_max: float = DEFAULT_L_MAX,
    tol: float = 1e-11,
    max_iter: int = 200,
    max_dt: float = DEFAULT_MAX_DT,
) -> EvolutionResult:
    """Evolution inside the contraction ball: one Picard solve for every
    node of the displacement grid simultaneously."""
    L = contraction_bound(gamma)
    if L >= L_max:
        raise ValueError(f"contraction bound {L:.4g} >= L_max={L_max}; use evolve()")
    proto = gamma.proto
    nodes = proto.nodes()
    grid, cellmap = gamma.refined(max_dt)
    anchors = np.zeros_like(nodes)
    if all(not np.any(f.coeffs) for f in gamma.fields):
        path = GroupPath.neutral(proto, grid)
        diag = PicardDiagnostics(0, 0.0, 0.0, 0.0)
        return EvolutionResult(path, 1, [diag], 0.0)
    psi, g, iters, change = _picard_sweep(gamma, grid, cellmap, anchors, nodes, tol, max_iter)
    shape = proto.shape + (proto.ncomp,)
    density = [proto.with_values(g[c].reshape(shape)) for c in range(grid.ncells)]
    path = GroupPath(grid, density)
    res_est = max(resampling_estimate(g[c].reshape(shape), proto.h) for c in range(grid.ncells))
    diag = PicardDiagnostics(iters, change, L, tol / (1.0 - L), res_est)
    return EvolutionResult(path, 1, [diag], residual(gamma, path))


def _window_budget_max(gamma: TimeVelocity, n: int) -> float:
    """max_k integral over [k/n,(k+1)/n] of alpha(gamma(s)) ds, exact."""
    knots = gamma.grid.knots
    alphas = gamma.alpha_values()
    best = 0.0
    for k in range(n):
        lo_c = np.clip(knots[:-1], k / n, (k + 1) / n)
        hi_c = np.clip(knots[1:], k / n, (k + 1) / n)
        best = max(best, float(np.sum((hi_c - lo_c) * alphas)))
    return best


def choose_subdivision(gamma: TimeVelocity, L_max: float = DEFAULT_L_MAX) -> int:
    """Smallest doubling count n with every segment budget below L_max."""
    n = 1
    while _window_budget_max(gamma, n) >= L_max:
        n *= 2
        if n > SUBDIVISION_LIMIT:
            raise RuntimeError("subdivision refinement limit exceeded")
    return n


def evolve(
    gamma: TimeVelocity,
    L_max: float = DEFAULT_L_MAX,
    forced_n: int | None = None,
    tol: float = 1e-11,
    max_iter: int = 200,
    max_dt: float = DEFAULT_MAX_DT,
) -> EvolutionResult:
    """Global evolution: subdivide, solve each segment locally, glue by
    right translation."""
    n = forced_n if forced_n is not None else choose_subdivision(gamma, L_max)
    if n == 1:
        res = local_evolve(gamma, L_max, tol, max_iter, max_dt)
        return res
    proto = gamma.proto
    A = identity_like(proto)
    knots = [0.0]
    density: list[_SplineField] = []
    segments = []
    for k in range(n):
        seg = local_evolve(gamma.subdivide(n, k), L_max, tol, max_iter, max_dt * n)
        segments.append(seg.segments[0])
        seg_knots = (seg.path.grid.knots + k) / n
        knots.extend(seg_knots[1:].tolist())
        for D in seg.path.density:
            composed = D if k == 0 else d_rho(A, D)
            density.append(composed.scaled(float(n)))
        A = star(seg.path.end(), A)
    path = GroupPath(TimeGrid(np.asarray(knots)), density)
    return EvolutionResult(path, n, segments, residual(gamma, path))


def flow_point(result: EvolutionResult, t: float, x) -> np.ndarray:
    """(id + eta(t))(x)."""
    x = np.asarray(x, dtype=float)
    elem = result.path.element_at(t)
    if x.ndim == 1:
        return elem.apply(x[None])[0]
    return elem.apply(x)


def residual(gamma: TimeVelocity, path: GroupPath) -> float:
    """Sup over knots and grid nodes of the integral-equation defect."""
    grid = gamma.grid.refine(path.grid)
    mids = grid.midpoints()
    w = grid.widths()
    proto = path.density[0]
    nodes = proto.nodes()
    P, d = nodes.shape
    # node values of every density cell in one sweep, via a stacked field
    stacked = proto.with_coeffs(np.concatenate([f.coeffs for f in path.density], axis=-1))
    dens_vals = stacked.eval(nodes).reshape(P, path.grid.ncells, d)
    start_vals = path.start.eval(nodes)
    steps = dens_vals * path.grid.widths()[None, :, None]
    path_knot_vals = np.concatenate(
        [start_vals[:, None, :], start_vals[:, None, :] + np.cumsum(steps, axis=1)], axis=1
    )  # (P, path knots, d)
    knot_vals = np.empty((grid.knots.size, P, d))
    for i, t in enumerate(grid.knots):
        ci = path.grid.cell_of(t)
        partial = t - path.grid.knots[ci]
        knot_vals[i] = path_knot_vals[:, ci, :] + partial * dens_vals[:, ci, :]
    eta_mid = 0.5 * (knot_vals[:-1] + knot_vals[1:])
    integrand = np.empty_like(eta_mid)
    cell_idx = np.array([gamma.grid.cell_of(m) for m in mids])
    for ci in np.unique(cell_idx):
        rows = np.where(cell_idx == ci)[0]
        pts = (nodes[None] + eta_mid[rows]).reshape(-1, d)
        integrand[rows] = gamma.fields[ci].eval(pts).reshape(len(rows), P, d)
    cum = np.cumsum(w[:, None, None] * integrand, axis=0)
    worst = float(np.max(np.abs(knot_vals[0])))
    return max(worst, float(np.max(np.abs(knot_vals[1:] - cum))))


def continuity_probe(
    gamma: TimeVelocity,
    delta: TimeVelocity,
    levels: int,
    threads: int = 1,
    **evolve_kwargs,
) -> list[tuple[float, float]]:
    """Distances of evolve(gamma + 2^-k delta) to evolve(gamma), k < levels."""
    if levels < 2:
        raise ValueError("need at least two levels")
    base = evolve(gamma, **evolve_kwargs)

    def one(k: int) -> tuple[float, float]:
        scale = 2.0 ** (-k)
        pert = evolve(gamma + delta.scaled(scale), **evolve_kwargs)
        return scale, group_path_distance(pert.path, base.path, p=gamma.p)

    return ordered_thread_map(one, range(levels), threads)
