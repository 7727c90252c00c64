"""Heat-equation problems, residual graphs and collocation sets.

The PDE is u_t = kappa * (sum of second spatial derivatives) + q on a box
domain with Dirichlet data b on the spatial boundary and initial field u0.
Coordinates are named ``x`` (and ``y`` in 2D) plus ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import exprgraph as eg

SPACE_NAMES = ("x", "y")
ON_FACE_TOL = 1e-12


@dataclass(frozen=True)
class FieldFunction:
    """A scalar function of space (and optionally time) named by a tag.

    Tags:
      ``zero``; ``constant`` (value);
      ``sine-mode`` (amplitude, frequencies): A * prod_d sin(k_d pi x_d);
      ``gaussian-bump`` (amplitude, center, width): A * exp(-|x - c|^2 / (2 w^2));
      ``custom-table`` (axes, values): multilinear interpolation on a grid.
    """

    tag: str = "zero"
    amplitude: float = 1.0
    frequencies: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    width: float = 1.0
    value: float = 0.0
    table_axes: tuple[tuple[float, ...], ...] = ()
    table_values: tuple = ()

    def __post_init__(self):
        if self.tag not in ("zero", "constant", "sine-mode", "gaussian-bump", "custom-table"):
            raise ValueError(f"unknown function tag {self.tag!r}")
        if self.tag == "gaussian-bump" and not self.width > 0:
            raise ValueError("gaussian-bump width must be positive")

    def values(self, space: np.ndarray) -> np.ndarray:
        """Evaluate at spatial points, shape (N, dim)."""
        space = np.atleast_2d(np.asarray(space, dtype=np.float64))
        if self.tag == "zero":
            return np.zeros(len(space))
        if self.tag == "constant":
            return np.full(len(space), float(self.value))
        if self.tag == "sine-mode":
            out = np.full(len(space), float(self.amplitude))
            for d, k in enumerate(self._freqs(space.shape[1])):
                out = out * np.sin(k * math.pi * space[:, d])
            return out
        if self.tag == "gaussian-bump":
            c = np.asarray(self.center, dtype=np.float64)
            r2 = np.sum((space - c) ** 2, axis=1)
            return self.amplitude * np.exp(-r2 / (2 * self.width**2))
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(
            [np.asarray(a) for a in self.table_axes], np.asarray(self.table_values, dtype=np.float64)
        )
        return interp(space)

    def node(self, space_nodes: Sequence[eg.Node]) -> eg.Node:
        """The same function as a graph; custom tables are not differentiable."""
        if self.tag == "zero":
            return eg.ZERO
        if self.tag == "constant":
            return eg.const(self.value)
        if self.tag == "sine-mode":
            out = eg.const(self.amplitude)
            for v, k in zip(space_nodes, self._freqs(len(space_nodes))):
                out = eg.mul(out, eg.sin(eg.mul(k * math.pi, v)))
            return out
        if self.tag == "gaussian-bump":
            r2 = eg.add(*[eg.powi(eg.sub(v, c), 2) for v, c in zip(space_nodes, self.center)])
            return eg.mul(self.amplitude, eg.exp(eg.mul(-1.0 / (2 * self.width**2), r2)))
        raise ValueError("custom-table functions have no graph form")

    def _freqs(self, dim: int) -> tuple[float, ...]:
        if len(self.frequencies) != dim:
            raise ValueError(f"sine-mode needs {dim} frequencies, got {len(self.frequencies)}")
        return self.frequencies


@dataclass(frozen=True)
class HeatProblem:
    dim: int
    kappa: float
    space_bounds: tuple[tuple[float, float], ...]
    t_max: float
    ic: FieldFunction
    bc: FieldFunction = field(default_factory=FieldFunction)
    source: FieldFunction = field(default_factory=FieldFunction)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D problems are supported")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if len(self.space_bounds) != self.dim:
            raise ValueError("one (lo, hi) pair per spatial dimension is required")
        for lo, hi in self.space_bounds:
            if not hi > lo:
                raise ValueError(f"invalid bounds ({lo}, {hi})")
        if self.source.tag not in ("zero", "constant"):
            raise ValueError("source must be 'zero' or 'constant'")

    @property
    def coords(self) -> list[str]:
        return [*SPACE_NAMES[: self.dim], "t"]

    @property
    def input_bounds(self) -> tuple[tuple[float, float], ...]:
        return (*self.space_bounds, (0.0, self.t_max))

    def boundary_values(self, points: np.ndarray) -> np.ndarray:
        return self.bc.values(np.asarray(points)[:, : self.dim])

    def initial_values(self, points: np.ndarray) -> np.ndarray:
        return self.ic.values(np.asarray(points)[:, : self.dim])

    def source_values(self, points: np.ndarray) -> np.ndarray:
        return self.source.values(np.asarray(points)[:, : self.dim])


def default_problem_1d() -> HeatProblem:
    return HeatProblem(
        dim=1,
        kappa=0.01 / math.pi,
        space_bounds=((-1.0, 1.0),),
        t_max=1.0,
        ic=FieldFunction("sine-mode", amplitude=-1.0, frequencies=(1.0,)),
    )


def default_problem_2d() -> HeatProblem:
    return HeatProblem(
        dim=2,
        kappa=2.0 / math.pi,
        space_bounds=((0.0, 1.0), (0.0, 1.0)),
        t_max=0.1,
        ic=FieldFunction("sine-mode", amplitude=1.0, frequencies=(1.0, 1.0)),
    )


def residual_pde(u: eg.Node, input_vars: Sequence[str | eg.Node], problem: HeatProblem) -> eg.Node:
    """u_t - kappa * Laplacian(u) - q as a graph over the input variables."""
    names = [v.payload if isinstance(v, eg.Node) else str(v) for v in input_vars]
    missing = [c for c in problem.coords if c not in names]
    if missing:
        raise ValueError(f"missing input variables {missing}")
    u_t = eg.differentiate(u, "t")
    lap = eg.add(*[eg.differentiate(eg.differentiate(u, c), c) for c in problem.coords[:-1]])
    q = problem.source.node([eg.var(c) for c in problem.coords[:-1]])
    return eg.sub(eg.sub(u_t, eg.mul(problem.kappa, lap)), q)


def _bind_point(u: eg.Node, problem: HeatProblem, point: Sequence[float]) -> eg.Node:
    if len(point) != problem.dim + 1:
        raise ValueError(f"point must have {problem.dim + 1} coordinates")
    return eg.substitute(u, dict(zip(problem.coords, map(float, point))))


def on_boundary(problem: HeatProblem, point: Sequence[float]) -> bool:
    return any(
        abs(point[d] - lo) <= ON_FACE_TOL or abs(point[d] - hi) <= ON_FACE_TOL
        for d, (lo, hi) in enumerate(problem.space_bounds)
    )


def residual_bc(u: eg.Node, problem: HeatProblem, point: Sequence[float]) -> eg.Node:
    point = tuple(map(float, point))
    if not on_boundary(problem, point) or not 0.0 < point[-1] <= problem.t_max:
        raise ValueError(f"{point} is not a boundary point in (0, t_max]")
    b = float(problem.boundary_values(np.array([point]))[0])
    return eg.sub(_bind_point(u, problem, point), b)


def residual_ic(u: eg.Node, problem: HeatProblem, point: Sequence[float]) -> eg.Node:
    point = tuple(map(float, point))
    if point[-1] != 0.0:
        raise ValueError(f"{point} is not at t = 0")
    u0 = float(problem.initial_values(np.array([point]))[0])
    return eg.sub(_bind_point(u, problem, point), u0)


@dataclass(frozen=True)
class CollocationSet:
    """Point sets as arrays of shape (N, dim + 1), columns (x[, y], t)."""

    interior: np.ndarray
    boundary: np.ndarray
    initial: np.ndarray

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.initial), len(self.boundary), len(self.interior)


def sample_collocation(problem: HeatProblem, nx: int, nt: int) -> CollocationSet:
    """Uniform tensor grid: nx points per space dimension, nt time levels including t = 0."""
    if nx < 3 or nt < 2:
        raise ValueError("need nx >= 3 and nt >= 2")
    axes = [np.linspace(lo, hi, nx) for lo, hi in problem.space_bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    space = np.stack([m.ravel() for m in mesh], axis=1)
    idx = np.meshgrid(*[np.arange(nx)] * problem.dim, indexing="ij")
    edge = np.zeros(space.shape[0], dtype=bool)
    for i in idx:
        edge |= (i.ravel() == 0) | (i.ravel() == nx - 1)
    times = np.linspace(0.0, problem.t_max, nt)

    def at(points, t):
        return np.column_stack([points, np.full(len(points), t)])

    initial = at(space, 0.0)
    boundary = np.concatenate([at(space[edge], t) for t in times[1:]])
    interior = np.concatenate([at(space[~edge], t) for t in times[1:]])
    return CollocationSet(interior=interior, boundary=boundary, initial=initial)


@dataclass
class SolutionGrid:
    """Field samples on a Cartesian grid; axes ordered (x[, y], t)."""

    axes: list[np.ndarray]
    values: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=np.float64) for a in self.axes]
        self.values = np.asarray(self.values, dtype=np.float64)
        if not self.names:
            self.names = [*SPACE_NAMES[: len(self.axes) - 1], "t"]
        shape = tuple(len(a) for a in self.axes)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match axes {shape}")
        for a in self.axes:
            if len(a) > 1 and not np.all(np.diff(a) > 0):
                raise ValueError("axes must be strictly increasing")

    def points(self) -> np.ndarray:
        """All grid points, (N, ndim), in C order of ``values``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def with_values(self, values: np.ndarray) -> "SolutionGrid":
        return SolutionGrid(self.axes, np.asarray(values).reshape(self.values.shape), list(self.names))


def grid_from_function(axes: Sequence[np.ndarray], fn) -> SolutionGrid:
    grid = SolutionGrid(list(axes), np.zeros(tuple(len(a) for a in axes)))
    return grid.with_values(fn(grid.points()))


def coordinate_bindings(problem: HeatProblem, points: np.ndarray) -> Mapping[str, np.ndarray]:
    points = np.asarray(points, dtype=np.float64)
    return {name: np.ascontiguousarray(points[:, i]) for i, name in enumerate(problem.coords)}
