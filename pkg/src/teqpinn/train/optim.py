"""Full-batch optimisers: L-BFGS with a strong-Wolfe line search, and Adam.

Both accept either a scalar exprgraph Node (parameters are the variables
named in ``state.names``) or a callable ``theta -> (f, grad[, parts])``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import exprgraph as eg


class NumericalAbort(RuntimeError):
    """Loss or gradient is not finite at the current iterate."""

    def __init__(self, message: str, state: "TrainState | None" = None):
        super().__init__(message)
        self.state = state


@dataclass
class TrainState:
    params: np.ndarray
    names: list[str] = field(default_factory=list)
    iteration: int = 0
    history: list[dict] = field(default_factory=list)
    # lbfgs: {"s": [...], "y": [...]}; adam: {"m", "v", "t"}
    memory: dict = field(default_factory=dict)
    status: str = "running"
    # one entry per line search: accepted step, phi/dphi at 0 and alpha, kind
    audit: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.params = np.array(self.params, dtype=np.float64)

    @property
    def loss(self) -> float:
        return self.history[-1]["loss_total"] if self.history else math.nan


class _Objective:
    """Uniform (f, g, parts) interface over nodes and callables."""

    def __init__(self, loss, names):
        if isinstance(loss, eg.Node):
            names = list(names)
            prog = eg.Program([loss], wrt=names)

            def fn(theta):
                vals = prog.forward(dict(zip(names, map(float, theta))))
                adj = prog.vjp(vals, [1.0])
                return float(prog.outputs_of(vals)[0]), np.array([adj[n] for n in names])

            self.fn = fn
        elif callable(loss):
            self.fn = loss
        else:
            raise TypeError("loss must be an exprgraph Node or a callable")
        self.evals = 0

    def __call__(self, theta):
        self.evals += 1
        out = self.fn(theta)
        f, g = float(out[0]), np.asarray(out[1], dtype=np.float64)
        parts = dict(out[2]) if len(out) > 2 else {}
        return f, g, parts

    def safe(self, theta):
        """Like __call__ but reports non-finite results as f = inf."""
        try:
            f, g, parts = self(theta)
        except FloatingPointError:
            return math.inf, None, {}
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            return math.inf, None, {}
        return f, g, parts


def _record(state: TrainState, f, g, parts, step_len, t0, on_record):
    rec = {
        "iter": state.iteration,
        "loss_total": f,
        "loss_pde": parts.get("pde", f if not parts else 0.0),
        "loss_bc": parts.get("bc", 0.0),
        "loss_ic": parts.get("ic", 0.0),
        "grad_norm": float(np.linalg.norm(g)),
        "step_len": step_len,
    }
    state.history.append(rec)
    if on_record is not None:
        on_record(dict(rec), (time.perf_counter() - t0) * 1000.0)


def _check_finite(state, f, g):
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        state.status = "aborted"
        raise NumericalAbort(f"non-finite loss or gradient at iteration {state.iteration} (loss={f})", state)


def two_loop(g: np.ndarray, s_list, y_list) -> np.ndarray:
    """Return -H g for the L-BFGS inverse Hessian built from the stored pairs."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho))
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (a, rho) in zip(zip(s_list, y_list), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic through two points with slopes, or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(obj: _Objective, x, f0, g0, d, alpha0=1.0, c1=1e-4, c2=0.9, max_evals=25):
    """Bracketing + zoom line search (cubic interpolation, bisection safeguard).

    Returns (alpha, f, g, parts, evals) with alpha None on failure.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        return None, f0, g0, {}, 0
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g, parts = obj.safe(x + a * d)
        return f, g, (float(g @ d) if g is not None else math.nan), parts

    a_prev, f_prev, dp_prev = 0.0, f0, dphi0
    g_prev, parts_prev = g0, {}
    a = alpha0
    lo = hi = None
    while evals < max_evals:
        fa, ga, dpa, pa = phi(a)
        if not math.isfinite(fa):
            # overshoot into a non-finite region: shrink towards the last good point
            a = a_prev + 0.5 * (a - a_prev)
            if a - a_prev < 1e-16:
                return None, f0, g0, {}, evals
            continue
        if fa > f0 + c1 * a * dphi0 or (a_prev > 0 and fa >= f_prev):
            lo, hi = (a_prev, f_prev, dp_prev, g_prev, parts_prev), (a, fa, dpa, ga, pa)
            break
        if abs(dpa) <= -c2 * dphi0:
            return a, fa, ga, pa, evals
        if dpa >= 0:
            lo, hi = (a, fa, dpa, ga, pa), (a_prev, f_prev, dp_prev, g_prev, parts_prev)
            break
        a_prev, f_prev, dp_prev, g_prev, parts_prev = a, fa, dpa, ga, pa
        a = 2.0 * a
    else:
        return None, f0, g0, {}, evals
    if hi is None:
        return None, f0, g0, {}, evals
    # zoom
    while evals < max_evals:
        (al, fl, dl, _, _), (ah, fh, dh, _, _) = lo, hi
        lo_b, hi_b = min(al, ah), max(al, ah)
        width = hi_b - lo_b
        if width <= 1e-14 * max(1.0, hi_b):
            break
        aj = _cubic_min(al, fl, dl, ah, fh, dh) if math.isfinite(dh) else None
        if aj is None or not (lo_b + 0.1 * width <= aj <= hi_b - 0.1 * width):
            aj = 0.5 * (al + ah)
        fj, gj, dj, pj = phi(aj)
        if not math.isfinite(fj) or fj > f0 + c1 * aj * dphi0 or fj >= fl:
            hi = (aj, fj, dj, gj, pj)
            continue
        if abs(dj) <= -c2 * dphi0:
            return aj, fj, gj, pj, evals
        if dj * (ah - al) >= 0:
            hi = lo
        lo = (aj, fj, dj, gj, pj)
    return None, f0, g0, {}, evals


def backtracking(obj: _Objective, x, f0, g0, d, alpha0=1.0, c1=1e-4, shrink=0.5, max_evals=40):
    """Armijo backtracking; returns (alpha, f, g, parts) or alpha None."""
    dphi0 = float(g0 @ d)
    a = alpha0
    for _ in range(max_evals):
        f, g, parts = obj.safe(x + a * d)
        if math.isfinite(f) and f <= f0 + c1 * a * dphi0:
            return a, f, g, parts
        a *= shrink
    return None, f0, g0, {}


def lbfgs_minimize(loss, state: TrainState, max_iters: int, tolerance: float = 1e-12, history: int = 10,
                   c1: float = 1e-4, c2: float = 0.9, max_ls: int = 25,
                   on_record: Optional[Callable[[dict, float], None]] = None) -> TrainState:
    """Run up to ``max_iters`` outer L-BFGS iterations from ``state``.

    The starting point is logged as its own record, then one record per
    accepted iteration. ``state.status`` ends as ``converged``, ``max_iters``
    or ``line-search-failed``.
    """
    obj = _Objective(loss, state.names)
    t0 = time.perf_counter()
    x = state.params.copy()
    f, g, parts = obj(x)
    _check_finite(state, f, g)
    if not state.history:
        _record(state, f, g, parts, 0.0, t0, on_record)
    mem = state.memory
    s_list = mem.setdefault("s", [])
    y_list = mem.setdefault("y", [])
    state.status = "max_iters"
    for _ in range(max_iters):
        if np.linalg.norm(g) < tolerance:
            state.status = "converged"
            break
        if s_list:
            d = two_loop(g, s_list, y_list)
            alpha0 = 1.0
        else:
            d = -g
            alpha0 = min(1.0, 1.0 / float(np.sum(np.abs(g))))
        if float(g @ d) >= 0:
            s_list.clear()
            y_list.clear()
            d = -g
            alpha0 = min(1.0, 1.0 / float(np.sum(np.abs(g))))
        alpha, f_new, g_new, p_new, _ = strong_wolfe(obj, x, f, g, d, alpha0, c1, c2, max_ls)
        kind = "wolfe"
        if alpha is None:
            # steepest descent with backtracking before giving up
            s_list.clear()
            y_list.clear()
            d = -g
            alpha, f_new, g_new, p_new = backtracking(obj, x, f, g, d, min(1.0, 1.0 / float(np.sum(np.abs(g)))), c1)
            kind = "fallback"
            if alpha is None:
                state.status = "line-search-failed"
                break
        state.audit.append({
            "iter": state.iteration + 1, "kind": kind, "alpha": alpha, "phi0": f, "dphi0": float(g @ d),
            "phi": f_new, "dphi": float(g_new @ d), "c1": c1, "c2": c2,
        })
        x_new = x + alpha * d
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(y @ y):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > history:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g, parts = x_new, f_new, g_new, p_new
        state.params = x.copy()
        state.iteration += 1
        _check_finite(state, f, g)
        _record(state, f, g, parts, float(np.linalg.norm(s)), t0, on_record)
        if not np.any(s):
            state.status = "converged"
            break
    else:
        if np.linalg.norm(g) < tolerance:
            state.status = "converged"
    state.params = x.copy()
    return state


def adam_minimize(loss, state: TrainState, max_iters: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                  tolerance: float = 0.0, on_record: Optional[Callable[[dict, float], None]] = None) -> TrainState:
    """Bias-corrected Adam; one record per step after the initial one."""
    obj = _Objective(loss, state.names)
    t0 = time.perf_counter()
    b1, b2 = betas
    x = state.params.copy()
    mem = state.memory
    m = mem.setdefault("m", np.zeros_like(x))
    v = mem.setdefault("v", np.zeros_like(x))
    f, g, parts = obj(x)
    _check_finite(state, f, g)
    if not state.history:
        _record(state, f, g, parts, 0.0, t0, on_record)
    state.status = "max_iters"
    for _ in range(max_iters):
        if np.linalg.norm(g) <= tolerance:
            state.status = "converged"
            break
        t = mem.get("t", 0) + 1
        mem["t"] = t
        m[:] = b1 * m + (1 - b1) * g
        v[:] = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        step = -lr * m_hat / (np.sqrt(v_hat) + eps)
        x = x + step
        f, g, parts = obj(x)
        state.params = x.copy()
        state.iteration += 1
        _check_finite(state, f, g)
        _record(state, f, g, parts, float(np.linalg.norm(step)), t0, on_record)
    state.params = x.copy()
    return state
