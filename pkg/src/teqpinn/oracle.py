"""Reference solutions for heat problems.

Closed forms cover sine-mode initial data with zero boundary values; anything
else goes through the method of lines (second-order central Laplacian,
Dirichlet nodes held out of the ODE state) integrated with the
Dormand-Prince 5(4) embedded pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprgraph as eg
from .pde import HeatProblem, SolutionGrid

# Dormand-Prince 5(4) tableau
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
DP_E = DP_B5 - DP_B4


class SolverError(RuntimeError):
    pass


def _check_closed_form(problem: HeatProblem) -> None:
    if problem.ic.tag != "sine-mode" or problem.bc.tag != "zero" or problem.source.tag != "zero":
        raise ValueError("closed form needs a sine-mode initial field, zero boundary data and no source")


def analytic_solution(problem: HeatProblem, point: Sequence[float]) -> float:
    return float(analytic_values(problem, np.asarray([point], dtype=np.float64))[0])


def analytic_values(problem: HeatProblem, points: np.ndarray) -> np.ndarray:
    """Closed-form field at points of shape (N, dim + 1)."""
    _check_closed_form(problem)
    points = np.atleast_2d(points)
    freqs = problem.ic.frequencies
    rate = problem.kappa * math.pi**2 * sum(k * k for k in freqs)
    return problem.ic.values(points[:, : problem.dim]) * np.exp(-rate * points[:, -1])


def analytic_graph(problem: HeatProblem) -> eg.Node:
    """Closed-form solution as a graph over the coordinate variables."""
    _check_closed_form(problem)
    coords = [eg.var(c) for c in problem.coords]
    rate = problem.kappa * math.pi**2 * sum(k * k for k in problem.ic.frequencies)
    return eg.mul(problem.ic.node(coords[:-1]), eg.exp(eg.mul(-rate, coords[-1])))


@dataclass(frozen=True)
class Rk45Config:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    initial_dt: float | None = None
    max_dt: float | None = None
    safety: float = 0.9
    min_scale: float = 0.2
    max_scale: float = 5.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class Rk45Stats:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    # (t, dt, error norm) for every accepted step
    trace: list[tuple[float, float, float]] = field(default_factory=list)


class MethodOfLines:
    """Interior-node ODE system for a problem discretised with nx points per dimension."""

    def __init__(self, problem: HeatProblem, nx: int):
        if nx < 3:
            raise ValueError("need at least 3 grid points per dimension")
        self.problem = problem
        self.nx = nx
        self.axes = [np.linspace(lo, hi, nx) for lo, hi in problem.space_bounds]
        self.h = [a[1] - a[0] for a in self.axes]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.space = np.stack([m.ravel() for m in mesh], axis=1)
        self.shape = (nx,) * problem.dim

    def full_field(self, interior: np.ndarray, t: float) -> np.ndarray:
        """Grid field with Dirichlet boundary values filled in."""
        u = np.empty(self.shape)
        pts = np.column_stack([self.space, np.full(len(self.space), t)])
        u[...] = self.problem.boundary_values(pts).reshape(self.shape)
        u[(slice(1, -1),) * self.problem.dim] = interior
        return u

    def rhs(self, t: float, interior: np.ndarray) -> np.ndarray:
        u = self.full_field(interior, t)
        return mol_rhs(self.problem, u, self.h, t, self.space)

    def initial(self) -> np.ndarray:
        pts = np.column_stack([self.space, np.zeros(len(self.space))])
        u0 = self.problem.initial_values(pts).reshape(self.shape)
        return u0[(slice(1, -1),) * self.problem.dim].copy()


def mol_rhs(problem: HeatProblem, values: np.ndarray, spacing: Sequence[float] | float | None = None,
            t: float = 0.0, space: np.ndarray | None = None) -> np.ndarray:
    """kappa * central Laplacian (+ source) at interior nodes of a full grid field.

    ``values`` has one axis per spatial dimension including boundary nodes;
    the result covers the interior nodes only.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != problem.dim or min(values.shape) < 3:
        raise ValueError("grid must have at least 3 points per dimension")
    if spacing is None:
        spacing = [(hi - lo) / (n - 1) for (lo, hi), n in zip(problem.space_bounds, values.shape)]
    elif np.ndim(spacing) == 0:
        spacing = [float(spacing)] * problem.dim
    inner = (slice(1, -1),) * problem.dim
    lap = np.zeros(tuple(n - 2 for n in values.shape))
    for d, h in enumerate(spacing):
        fwd = list(inner)
        bwd = list(inner)
        fwd[d] = slice(2, None)
        bwd[d] = slice(None, -2)
        lap += (values[tuple(fwd)] - 2 * values[inner] + values[tuple(bwd)]) / (h * h)
    out = problem.kappa * lap
    if problem.source.tag != "zero":
        out = out + problem.source.value
    return out


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, cfg: Rk45Config) -> float:
    if err.size == 0:
        return 0.0
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def dopri5(fun, t0: float, y0: np.ndarray, output_times: Sequence[float], cfg: Rk45Config = Rk45Config(),
           stats: Rk45Stats | None = None) -> list[np.ndarray]:
    """Integrate y' = fun(t, y) and return y at each output time.

    Steps are truncated so that every output time is hit exactly.
    """
    stats = stats if stats is not None else Rk45Stats()
    times = [float(t) for t in output_times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < t0):
        raise ValueError("output times must be sorted and not precede t0")
    t_end = times[-1] if times else t0
    span = max(t_end - t0, 1e-300)
    max_dt = cfg.max_dt if cfg.max_dt is not None else span
    y = np.array(y0, dtype=np.float64)
    t = t0
    f = fun(t, y)
    stats.rhs_evals += 1
    if cfg.initial_dt is not None:
        dt = cfg.initial_dt
    else:
        # Hairer-Norsett-Wanner starting step heuristic
        scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2)) if y.size else 0.0
        d1 = np.sqrt(np.mean((f / scale) ** 2)) if y.size else 0.0
        dt = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    dt = min(dt, max_dt)
    out: list[np.ndarray] = []
    k = np.empty((7,) + y.shape)
    for target in times:
        while t < target:
            h = min(dt, target - t)
            landing = h >= target - t
            if h < 1e-14 * span:
                raise SolverError(f"step size underflow at t={t:.6g} (dt={h:.3g})")
            k[0] = f
            for s in range(1, 7):
                ys = y + h * np.tensordot(DP_A[s], k[:s], axes=1)
                k[s] = fun(t + DP_C[s] * h, ys)
            stats.rhs_evals += 6
            y_new = y + h * np.tensordot(DP_B5, k, axes=1)
            err = _error_norm(h * np.tensordot(DP_E, k, axes=1), y, y_new, cfg)
            if err <= 1.0:
                t = target if landing else t + h
                y = y_new
                f = k[6]  # first-same-as-last
                stats.accepted += 1
                stats.trace.append((t, h, err))
                factor = cfg.max_scale if err == 0 else min(cfg.max_scale, max(cfg.min_scale, cfg.safety * err ** -0.2))
                if not landing:
                    dt = min(h * factor, max_dt)
                else:
                    dt = min(max(dt, h * factor), max_dt)
            else:
                stats.rejected += 1
                dt = h * max(cfg.min_scale, cfg.safety * err ** -0.2)
        out.append(y.copy())
    return out


def rk45_solve(problem: HeatProblem, nx: int, output_times: Sequence[float], config: Rk45Config = Rk45Config(),
               stats: Rk45Stats | None = None) -> SolutionGrid:
    times = np.asarray(output_times, dtype=np.float64)
    if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > problem.t_max * (1 + 1e-12):
        raise ValueError("output times must be strictly increasing within [0, t_max]")
    mol = MethodOfLines(problem, nx)
    snaps = dopri5(lambda t, y: mol.rhs(t, y.reshape(tuple(n - 2 for n in mol.shape))).ravel(),
                   0.0, mol.initial().ravel(), times, config, stats)
    inner_shape = tuple(n - 2 for n in mol.shape)
    fields = [mol.full_field(s.reshape(inner_shape), t) for s, t in zip(snaps, times)]
    values = np.stack(fields, axis=-1)
    return SolutionGrid([*mol.axes, times], values)
