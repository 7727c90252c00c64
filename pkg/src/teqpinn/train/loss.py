"""Physics-informed loss: squared PDE, boundary and initial residuals."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import exprgraph as eg
from ..pde import CollocationSet, coordinate_bindings, residual_bc, residual_ic, residual_pde
from .models import Model


@dataclass(frozen=True)
class LossWeights:
    lambda_bc: float = 1.0
    lambda_ic: float = 1.0

    def __post_init__(self):
        if self.lambda_bc < 0 or self.lambda_ic < 0:
            raise ValueError("loss weights must be non-negative")


def _check_reduction(reduction: str) -> None:
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")


def total_loss(model: Model, collocation: CollocationSet, weights: LossWeights = LossWeights(),
               reduction: str = "sum") -> eg.Node:
    """The whole loss as one graph over the model parameters.

    Builds one residual subgraph per point, so it is meant for small point
    sets; :class:`PinnObjective` evaluates the same quantity in batches.
    """
    _check_reduction(reduction)
    sets = (collocation.interior, collocation.boundary, collocation.initial)
    if all(len(s) == 0 for s in sets):
        raise ValueError("empty collocation set")
    problem = model.problem
    r_pde = residual_pde(model.u, problem.coords, problem)

    def reduce(terms, count):
        s = eg.add(*terms) if terms else eg.ZERO
        return eg.mul(1.0 / count, s) if reduction == "mean" and count else s

    pde_terms = [eg.powi(eg.substitute(r_pde, dict(zip(problem.coords, map(float, p)))), 2)
                 for p in collocation.interior]
    bc_terms = [eg.powi(residual_bc(model.u, problem, p), 2) for p in collocation.boundary]
    ic_terms = [eg.powi(residual_ic(model.u, problem, p), 2) for p in collocation.initial]
    return eg.add(
        reduce(pde_terms, len(pde_terms)),
        eg.mul(weights.lambda_bc, reduce(bc_terms, len(bc_terms))),
        eg.mul(weights.lambda_ic, reduce(ic_terms, len(ic_terms))),
    )


class PinnObjective:
    """Batched loss and exact gradient over a flat parameter vector.

    Points are processed in fixed-size chunks; per-chunk partial results are
    combined in chunk order, so results do not depend on ``threads``.
    """

    def __init__(self, model: Model, collocation: CollocationSet, weights: LossWeights = LossWeights(),
                 reduction: str = "sum", chunk_size: int = 1024, threads: int = 1):
        _check_reduction(reduction)
        problem = model.problem
        self.model = model
        self.weights = weights
        self.reduction = reduction
        self.chunk_size = int(chunk_size)
        self.threads = max(1, int(threads))
        names = model.param_names
        self._names = names
        r_pde = residual_pde(model.u, problem.coords, problem)
        self._pde_prog = eg.Program([r_pde], wrt=names)
        self._u_prog = eg.Program([model.u], wrt=names)
        self._sets = []
        for label, pts, prog, target, lam in (
            ("pde", collocation.interior, self._pde_prog, None, 1.0),
            ("bc", collocation.boundary, self._u_prog, problem.boundary_values, weights.lambda_bc),
            ("ic", collocation.initial, self._u_prog, problem.initial_values, weights.lambda_ic),
        ):
            pts = np.asarray(pts, dtype=np.float64).reshape(-1, problem.dim + 1)
            tgt = np.zeros(len(pts)) if target is None else target(pts)
            self._sets.append((label, pts, prog, tgt, lam))
        if sum(len(s[1]) for s in self._sets) == 0:
            raise ValueError("empty collocation set")
        self.n_evals = 0

    @property
    def graph_sizes(self) -> dict[str, int]:
        return {"pde": len(self._pde_prog), "u": len(self._u_prog)}

    def _chunk_job(self, prog, bindings_base, pts, tgt, scale, with_grad):
        b = dict(bindings_base)
        b.update(coordinate_bindings(self.model.problem, pts))
        vals = prog.forward(b)
        out = np.broadcast_to(prog.outputs_of(vals)[0], len(pts))
        r = out - tgt
        loss = float(np.sum(r * r))
        if not with_grad:
            return loss, None
        adj = prog.vjp(vals, [2.0 * scale * r])
        grad = np.array([np.sum(adj[n]) for n in self._names])
        return loss, grad

    def evaluate(self, theta: np.ndarray, with_grad: bool = True):
        """Return (total, gradient or None, {"pde": .., "bc": .., "ic": ..})."""
        base = self.model.bindings(theta)
        jobs = []
        for label, pts, prog, tgt, lam in self._sets:
            if len(pts) == 0:
                continue
            norm = 1.0 / len(pts) if self.reduction == "mean" else 1.0
            for s in range(0, len(pts), self.chunk_size):
                jobs.append((label, norm, lam, (prog, base, pts[s:s + self.chunk_size], tgt[s:s + self.chunk_size],
                                                lam * norm, with_grad)))
        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(lambda j: self._chunk_job(*j[3]), jobs))
        else:
            results = [self._chunk_job(*j[3]) for j in jobs]
        parts = {"pde": 0.0, "bc": 0.0, "ic": 0.0}
        grads = []
        for (label, norm, lam, _), (loss, grad) in zip(jobs, results):
            parts[label] += loss * norm
            if grad is not None:
                grads.append(grad)
        total = parts["pde"] + self.weights.lambda_bc * parts["bc"] + self.weights.lambda_ic * parts["ic"]
        self.n_evals += 1
        grad = np.sum(np.stack(grads), axis=0) if with_grad else None
        return total, grad, parts

    def __call__(self, theta: np.ndarray):
        return self.evaluate(theta)
