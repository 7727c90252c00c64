"""Accuracy of a trained model against a reference grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..pde import SolutionGrid
from .models import Model


@dataclass
class Metrics:
    l2_rel: float
    linf_rel: float
    abs_error_grid: SolutionGrid = field(repr=False)
    final_loss: float = float("nan")
    loss_pde: float = float("nan")
    loss_bc: float = float("nan")
    loss_ic: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "l2_rel": self.l2_rel,
            "linf_rel": self.linf_rel,
            "final_loss": self.final_loss,
            "loss_pde": self.loss_pde,
            "loss_bc": self.loss_bc,
            "loss_ic": self.loss_ic,
        }


def relative_errors(pred: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """(l2_rel, linf_rel); a zero reference falls back to absolute norms."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    diff = pred - ref
    l2_den = np.linalg.norm(ref)
    inf_den = np.max(np.abs(ref)) if ref.size else 0.0
    l2 = np.linalg.norm(diff) / l2_den if l2_den > 0 else np.linalg.norm(diff)
    linf = np.max(np.abs(diff)) / inf_den if inf_den > 0 else (np.max(np.abs(diff)) if diff.size else 0.0)
    return float(l2), float(linf)


def check_in_domain(model: Model, reference: SolutionGrid, slack: float = 1e-12) -> None:
    problem = model.problem
    bounds = [*problem.space_bounds, (0.0, problem.t_max)]
    if len(reference.axes) != len(bounds):
        raise ValueError(f"reference has {len(reference.axes)} axes, problem needs {len(bounds)}")
    for name, axis, (lo, hi) in zip(reference.names, reference.axes, bounds):
        tol = slack * max(1.0, abs(lo), abs(hi))
        if axis.size and (axis[0] < lo - tol or axis[-1] > hi + tol):
            raise ValueError(f"axis {name} leaves the domain [{lo}, {hi}]")


def evaluate(model: Model, params: np.ndarray, reference: SolutionGrid, losses: dict | None = None) -> Metrics:
    """Compare the model field with ``reference`` on the reference's own axes.

    ``losses`` may carry ``total``/``pde``/``bc``/``ic`` values to attach.
    """
    check_in_domain(model, reference)
    pred = model.predict(reference.points(), params)
    l2, linf = relative_errors(pred, reference.values)
    err = reference.with_values(np.abs(pred - reference.values.ravel()))
    losses = losses or {}
    return Metrics(
        l2_rel=l2,
        linf_rel=linf,
        abs_error_grid=err,
        final_loss=float(losses.get("total", np.nan)),
        loss_pde=float(losses.get("pde", np.nan)),
        loss_bc=float(losses.get("bc", np.nan)),
        loss_ic=float(losses.get("ic", np.nan)),
    )
