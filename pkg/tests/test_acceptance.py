"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (printed immediately and again in
the terminal summary) before asserting, so a full run reports all nine.
"""

import math
import time

import numpy as np
import pytest

from teqpinn import exprgraph as eg
from teqpinn import oracle, pde, qsim
from teqpinn import qmodel as qm
from teqpinn.cli.commands import cmd_train
from teqpinn.config import ExperimentConfig, ModelBlock
from teqpinn.train.loss import LossWeights
from teqpinn.train.models import build_model
from teqpinn.train.optim import TrainState, lbfgs_minimize

from .conftest import ACCEPTANCE
from .dense_oracle import circuit_expectation, cnot_matrix, ry_matrix

KINDS = ["pinn", "fnn-te-qpinn", "qnn-te-qpinn"]


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# 1 -----------------------------------------------------------------------------

def test_simulator_correctness():
    rng = np.random.default_rng(2024)
    worst_norm = 0.0
    for _ in range(40):
        n = int(rng.integers(1, 11))
        state = qsim.zero_state(n)
        for _ in range(int(rng.integers(1, 201))):
            if n > 1 and rng.random() < 0.4:
                c, t = rng.choice(n, size=2, replace=False)
                state = qsim.apply_cnot(state, int(c), int(t))
            else:
                state = qsim.apply_ry(state, int(rng.integers(n)), float(rng.uniform(-2 * np.pi, 2 * np.pi)))
        worst_norm = max(worst_norm, abs(1.0 - float(np.sum(np.abs(state.amps) ** 2))))

    thetas = rng.uniform(-2 * np.pi, 2 * np.pi, 100)
    worst_cos = max(abs(qsim.expect_z(qsim.apply_ry(qsim.zero_state(1), 0, th), 0) - math.cos(th)) for th in thetas)

    worst_dense = 0.0
    for _ in range(60):
        n = int(rng.integers(1, 4))
        state = qsim.zero_state(n)
        dense = np.zeros(2**n)
        dense[0] = 1.0
        for _ in range(int(rng.integers(1, 30))):
            if n > 1 and rng.random() < 0.4:
                c, t = (int(v) for v in rng.choice(n, size=2, replace=False))
                state = qsim.apply_cnot(state, c, t)
                dense = cnot_matrix(n, c, t) @ dense
            else:
                q, th = int(rng.integers(n)), float(rng.uniform(-2 * np.pi, 2 * np.pi))
                state = qsim.apply_ry(state, q, th)
                dense = ry_matrix(n, q, th) @ dense
        worst_dense = max(worst_dense, float(np.max(np.abs(state.amps - dense))))
        layout = qm.CircuitLayout(n, int(rng.integers(0, 4)), str(rng.choice(["ring", "linear"])))
        gamma = rng.uniform(-np.pi, np.pi, n)
        theta = rng.uniform(-np.pi, np.pi, (layout.n_layers, n))
        ref = circuit_expectation(n, gamma, theta, layout.cnot_pairs())
        worst_dense = max(worst_dense, abs(qm.expectation(layout, gamma, theta) - ref))

    ok = worst_norm < 1e-12 and worst_cos <= 1e-12 and worst_dense <= 1e-12
    report(1, ok, f"norm drift {worst_norm:.1e}, |<Z>-cos| {worst_cos:.1e}, dense oracle {worst_dense:.1e} (tol 1e-12)")


# 2 -----------------------------------------------------------------------------

def _expect_flat(layout, flat):
    n = layout.n_qubits
    return qm.expectation(layout, flat[:n], flat[n:])


def _address(layout, i):
    n = layout.n_qubits
    return ("phi", i) if i < n else ("theta", (i - n) // n, (i - n) % n)


def test_shift_rule_exactness():
    rng = np.random.default_rng(77)
    worst = {"first": 0.0, "second": 0.0, "mixed": 0.0}
    circuits = 0
    for c in range(60):
        n = 6 if c == 0 else int(rng.integers(1, 7))
        L = 10 if c == 0 else int(rng.integers(1, 11))
        layout = qm.CircuitLayout(n, L, str(rng.choice(["ring", "linear"])))
        gamma = rng.uniform(-np.pi, np.pi, n)
        theta = rng.uniform(-np.pi, np.pi, (L, n))
        flat = np.concatenate([gamma, theta.ravel()])
        f = lambda v: _expect_flat(layout, v)  # noqa: E731
        total = flat.size
        picks = rng.choice(total, size=min(3, total), replace=False)
        for i in picks:
            e = np.zeros(total)
            e[i] = 1.0
            a = _address(layout, int(i))
            h1, h2 = 1e-5, 1e-3
            fd1 = (f(flat + h1 * e) - f(flat - h1 * e)) / (2 * h1)
            fd2 = (f(flat + h2 * e) - 2 * f(flat) + f(flat - h2 * e)) / h2**2
            worst["first"] = max(worst["first"], abs(qm.shift_first(layout, gamma, theta, a) - fd1))
            worst["second"] = max(worst["second"], abs(qm.shift_second(layout, gamma, theta, a) - fd2))
        if total > 1:
            i, j = (int(v) for v in rng.choice(total, size=2, replace=False))
            ei, ej = np.eye(total)[i], np.eye(total)[j]
            h = 1e-3
            fdm = (f(flat + h * ei + h * ej) - f(flat + h * ei - h * ej)
                   - f(flat - h * ei + h * ej) + f(flat - h * ei - h * ej)) / (4 * h * h)
            got = qm.shift_mixed(layout, gamma, theta, _address(layout, i), _address(layout, j))
            worst["mixed"] = max(worst["mixed"], abs(got - fdm))
        circuits += 1
    ok = circuits >= 50 and all(v <= 1e-6 for v in worst.values())
    report(2, ok, f"{circuits} circuits up to 6q/10L, max |shift - FD|: "
           + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-6)")


# 3 -----------------------------------------------------------------------------

SMALL_POINTS = {
    1: np.array([[0.3, 0.4], [-0.6, 0.9], [0.05, 0.2]]),
    2: np.array([[0.3, 0.7, 0.04], [0.8, 0.2, 0.09], [0.5, 0.5, 0.01]]),
}


def _input_derivative_error(model):
    problem = model.problem
    coords = problem.coords
    theta = model.init_values(5)
    binds = model.bindings(theta)
    targets = [(coords[-1], 1)] + [(c, 2) for c in coords[:-1]]
    nodes = []
    for c, order in targets:
        d = eg.differentiate(model.u, c)
        nodes.append(d if order == 1 else eg.differentiate(d, c))
    prog = eg.Program([model.u, *nodes])
    widths = [hi - lo for lo, hi in problem.space_bounds] + [problem.t_max]
    worst = 0.0
    for p in SMALL_POINTS[problem.dim]:
        def u_at(q):
            vals = prog.forward({**binds, **dict(zip(coords, map(float, q)))})
            return float(prog.outputs_of(vals)[0])

        vals = prog.forward({**binds, **dict(zip(coords, map(float, p)))})
        got = [float(v) for v in prog.outputs_of(vals)[1:]]
        for (c, order), g in zip(targets, got):
            e = np.zeros(len(coords))
            e[coords.index(c)] = 1.0
            # fourth-order stencils with steps scaled to the domain: the quantum
            # models rescale inputs to a full turn, so high derivatives are large
            h = 5e-4 * widths[coords.index(c)]
            f = {s: u_at(p + s * h * e) for s in (-2, -1, 0, 1, 2)}
            if order == 1:
                fd = (-f[2] + 8 * f[1] - 8 * f[-1] + f[-2]) / (12 * h)
            else:
                fd = (-f[2] + 16 * f[1] - 30 * f[0] + 16 * f[-1] - f[-2]) / (12 * h * h)
            worst = max(worst, abs(g - fd) / max(1.0, abs(fd)))
    return worst


def _losses_for_many(model, col, thetas, weights=LossWeights()):
    """Loss for each row of ``thetas`` in one vectorised pass per residual kind."""
    problem = model.problem
    k = len(thetas)
    total = np.zeros(k)
    r_pde = pde.residual_pde(model.u, problem.coords, problem)
    for pts, node, target, lam in (
        (col.interior, r_pde, None, 1.0),
        (col.boundary, model.u, problem.boundary_values, weights.lambda_bc),
        (col.initial, model.u, problem.initial_values, weights.lambda_ic),
    ):
        if len(pts) == 0:
            continue
        prog = eg.Program([node])
        binds = {name: np.repeat(thetas[:, i], len(pts)) for i, name in enumerate(model.param_names)}
        tiled = np.tile(pts, (k, 1))
        binds.update(pde.coordinate_bindings(problem, tiled))
        out = np.broadcast_to(prog.outputs_of(prog.forward(binds))[0], len(tiled))
        tgt = np.zeros(len(tiled)) if target is None else target(tiled)
        total += lam * np.sum(((out - tgt) ** 2).reshape(k, len(pts)), axis=1)
    return total


def _gradient_error(model):
    from teqpinn.train.loss import PinnObjective

    col = pde.CollocationSet(np.array([[0.3, 0.4], [-0.6, 0.9]]), np.array([[1.0, 0.5]]),
                             np.array([[0.1, 0.0], [-0.7, 0.0]]))
    theta = model.init_values(4)
    f0, g, _ = PinnObjective(model, col).evaluate(theta)
    h = 1e-5
    worst = 0.0
    block = 256
    for s in range(0, model.n_params, block):
        idx = np.arange(s, min(s + block, model.n_params))
        plus = np.tile(theta, (len(idx), 1))
        minus = plus.copy()
        plus[np.arange(len(idx)), idx] += h
        minus[np.arange(len(idx)), idx] -= h
        fp = _losses_for_many(model, col, plus)
        fm = _losses_for_many(model, col, minus)
        fd = (fp - fm) / (2 * h)
        # relative error, floored at 1e-3 of the largest component so that
        # gradient entries at round-off level do not dominate
        scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(g)))
        worst = max(worst, float(np.max(np.abs(g[idx] - fd) / scale)))
    return worst


def test_nested_differentiation():
    details, ok = [], True
    for dim, problem in ((1, pde.default_problem_1d()), (2, pde.default_problem_2d())):
        for kind in KINDS:
            m = build_model(kind, ModelBlock(kind=kind), problem)
            err = _input_derivative_error(m)
            ok &= err <= 1e-5
            details.append(f"{kind}/{dim}D input-deriv {err:.1e}")
    p1 = pde.default_problem_1d()
    for kind in KINDS:
        m = build_model(kind, ModelBlock(kind=kind), p1)
        err = _gradient_error(m)
        ok &= err <= 1e-4
        details.append(f"{kind} grad rel {err:.1e} ({m.n_params} params)")
    report(3, ok, "; ".join(details) + " (tol 1e-5 on |d - FD|/max(1,|FD|); 1e-4 relative)")


# 4 -----------------------------------------------------------------------------

def _max_error(problem, nx, times):
    grid = oracle.rk45_solve(problem, nx, times)
    exact = oracle.analytic_values(problem, grid.points()).reshape(grid.values.shape)
    return float(np.max(np.abs(grid.values - exact)))


def test_oracle_accuracy():
    p1, p2 = pde.default_problem_1d(), pde.default_problem_2d()
    times1 = [0.25, 0.5, 0.75, 1.0]
    e1 = _max_error(p1, 201, times1)
    errs = [_max_error(p1, nx, times1) for nx in (21, 41, 81)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    e2 = _max_error(p2, 50, [0.039, 0.058, 0.097, 0.1])
    ok = e1 <= 1e-4 and all(abs(o - 2.0) <= 0.25 for o in orders) and e2 <= 2e-3
    report(4, ok, f"1D nx=201 max err {e1:.2e} (<=1e-4), orders {', '.join(f'{o:.3f}' for o in orders)} "
           f"(2 +- 0.25), 2D nx=50 max err {e2:.2e} (<=2e-3)")


# 5 -----------------------------------------------------------------------------

def test_optimizer_oracles():
    x, y = eg.var("x"), eg.var("y")
    rosen = eg.add(eg.mul(100.0, eg.powi(eg.sub(y, eg.powi(x, 2)), 2)), eg.powi(eg.sub(1.0, x), 2))
    st = lbfgs_minimize(rosen, TrainState([-1.2, 1.0], ["x", "y"]), 100, tolerance=1e-12)
    wolfe = [a for a in st.audit if a["kind"] == "wolfe"]
    bad = [a for a in st.audit
           if a["kind"] != "wolfe"
           or a["phi"] > a["phi0"] + a["c1"] * a["alpha"] * a["dphi0"]
           or abs(a["dphi"]) > -a["c2"] * a["dphi0"]]
    ok = st.loss < 1e-8 and st.iteration <= 100 and not bad and len(wolfe) == st.iteration
    report(5, ok, f"Rosenbrock loss {st.loss:.2e} after {st.iteration} iterations (<1e-8 in <=100), "
           f"{len(wolfe)} steps audited, {len(bad)} violate strong Wolfe")


# 6 -----------------------------------------------------------------------------

SEEDS = (7, 8, 9)


@pytest.fixture(scope="module")
def runs_1d(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk1d")
    out = {}
    t0 = time.perf_counter()
    for seed in SEEDS:
        for kind in KINDS:
            cfg = ExperimentConfig.model_validate({
                "model": {"kind": kind, "n_qubits": 4, "n_layers": 5},
                "training": {"epochs": 150, "seed": seed},
            })
            res = cmd_train(cfg, root / f"{kind}-{seed}")
            out[kind, seed] = (res["summary"], [r["loss_total"] for r in res["state"].history])
    return out, time.perf_counter() - t0


def test_desk_scale_1d(runs_1d):
    runs, wall = runs_1d
    fnn, _ = runs["fnn-te-qpinn", 7]
    pinn, _ = runs["pinn", 7]
    qnn, qnn_hist = runs["qnn-te-qpinn", 7]
    jumps = [b / a for a, b in zip(qnn_hist[20:], qnn_hist[21:]) if a > 0]
    checks = {
        "fnn loss": (fnn["final_loss"] <= 1e-4, f"{fnn['final_loss']:.2e}<=1e-4"),
        "fnn l2": (fnn["l2_rel"] <= 2e-2, f"{fnn['l2_rel']:.2e}<=2e-2"),
        "pinn l2": (pinn["l2_rel"] <= 2e-2, f"{pinn['l2_rel']:.2e}<=2e-2"),
        "qnn loss": (qnn["final_loss"] <= 1e-1, f"{qnn['final_loss']:.2e}<=1e-1"),
        "qnn steady": (max(jumps, default=0.0) <= 10.0, f"max ratio {max(jumps, default=0.0):.2f}<=10"),
        "runtime": (wall <= 1800, f"{wall:.0f}s<=1800s"),
    }
    order = []
    for seed in SEEDS:
        ranked = sorted(KINDS, key=lambda k: runs[k, seed][0]["l2_rel"])
        order.append(f"seed {seed}: " + " < ".join(f"{k} {runs[k, seed][0]['l2_rel']:.2e}" for k in ranked))
    print("l2_rel ordering (recorded, not asserted):\n  " + "\n  ".join(order))
    failed = [k for k, (ok, _) in checks.items() if not ok]
    detail = ", ".join(f"{k} {txt}{'' if ok else ' [x]'}" for k, (ok, txt) in checks.items())
    report(6, not failed, detail + " | ordering " + "; ".join(order))


# 7 -----------------------------------------------------------------------------

def test_desk_scale_2d(tmp_path):
    cfg = ExperimentConfig.model_validate({
        "problem": {"dim": 2, "kappa": "2/pi"},
        "model": {"kind": "fnn-te-qpinn", "n_qubits": 4, "n_layers": 5},
        "collocation": {"nx": 20, "nt": 20},
        "training": {"epochs": 50, "seed": 7},
        "output": {"eval_nx": 21, "eval_nt": 5},
    })
    t0 = time.perf_counter()
    res = cmd_train(cfg, tmp_path)
    wall = time.perf_counter() - t0
    hist = [r["loss_total"] for r in res["state"].history]
    pts = np.random.default_rng(0).uniform([0, 0, 0], [1, 1, 0.1], (2000, 3))
    u = res["model"].predict(pts, res["state"].params)
    drop = hist[0] / hist[-1]
    ok = drop >= 100 and np.all(np.abs(u) <= 1.0) and wall <= 1800
    report(7, ok, f"loss {hist[0]:.3e} -> {hist[-1]:.3e} (drop {drop:.1f}x, need >=100x), "
           f"max |u| {np.max(np.abs(u)):.3f} (<=1), {wall:.0f}s")


# 8 -----------------------------------------------------------------------------

def test_collocation_counts():
    col = pde.sample_collocation(pde.default_problem_2d(), 50, 50)
    counts = (len(col.initial), len(col.boundary), len(col.interior))
    report(8, counts == (2500, 9604, 112896), f"2D nx=nt=50 gives {counts}, expected (2500, 9604, 112896)")


# 9 -----------------------------------------------------------------------------

def test_reproducibility(tmp_path):
    cfg = ExperimentConfig.model_validate({"training": {"epochs": 5, "seed": 7}})
    cmd_train(cfg, tmp_path / "a", threads=1)
    cmd_train(cfg, tmp_path / "b", threads=1)
    cmd_train(cfg, tmp_path / "c", threads=3)
    same = {}
    for name in ("metrics.jsonl", "checkpoint.bin"):
        ref = (tmp_path / "a" / name).read_bytes()
        same[name] = all((tmp_path / d / name).read_bytes() == ref for d in ("b", "c"))
    report(9, all(same.values()), ", ".join(f"{k} identical across 3 runs (threads 1, 1, 3): {v}"
                                             for k, v in same.items()))
