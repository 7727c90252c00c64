"""Implementations behind the command-line subcommands.

Each function takes plain arguments, writes its files, and returns a small
dict describing what it did, so tests can drive them without a subprocess.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import exprgraph as eg
from .. import oracle
from ..config import ExperimentConfig, load_config
from ..pde import HeatProblem, SolutionGrid, sample_collocation
from ..train import checkpoint
from ..train.loss import LossWeights, PinnObjective
from ..train.metrics import evaluate
from ..train.models import build_model, param_counts
from ..train.optim import NumericalAbort, TrainState, adam_minimize, lbfgs_minimize
from .gridio import read_csv, slice_for_plot, write_csv, write_ppm

log = logging.getLogger("teqpinn")


class ConfigError(ValueError):
    """Bad or inconsistent user input (exit code 2)."""


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def apply_overrides(cfg: ExperimentConfig, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    data = cfg.resolved()
    if seed is not None:
        data["training"]["seed"] = int(seed)
    if out_dir is not None:
        data["output"]["directory"] = str(out_dir)
    return ExperimentConfig.model_validate(data)


def has_closed_form(problem: HeatProblem) -> bool:
    return problem.ic.tag == "sine-mode" and problem.bc.tag == "zero" and problem.source.tag == "zero"


def reference_grid(cfg: ExperimentConfig, problem: HeatProblem, kind: str | None = None) -> tuple[SolutionGrid, str]:
    """Reference field on the configured evaluation grid."""
    kind = kind or cfg.output.reference
    if kind == "auto":
        kind = "analytic" if has_closed_form(problem) else "rk45"
    times = cfg.eval_times()
    if kind == "analytic":
        axes = [np.linspace(lo, hi, cfg.output.eval_nx) for lo, hi in problem.space_bounds]
        grid = SolutionGrid([*axes, np.asarray(times)], np.zeros((cfg.output.eval_nx,) * problem.dim + (len(times),)))
        return grid.with_values(oracle.analytic_values(problem, grid.points())), kind
    nx = cfg.output.oracle_nx or cfg.output.eval_nx
    return oracle.rk45_solve(problem, nx, times), kind


def cmd_train(config: ExperimentConfig | str | Path, out_dir: str | Path | None = None, seed: int | None = None,
              threads: int = 1, dump_graph: bool = False) -> dict:
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    cfg = apply_overrides(cfg, seed, None if out_dir is None else str(out_dir))
    run = Path(cfg.output.directory)
    run.mkdir(parents=True, exist_ok=True)
    # the run location is not an input: leave it out so relocated runs stay byte-identical
    portable = cfg.resolved()
    portable["output"].pop("directory")
    canonical = json.dumps(portable, sort_keys=True, separators=(",", ":")).encode()
    _dump(run / "config.resolved.json", cfg.resolved())
    (run / "inputs.hash").write_text(git_blob_hash(canonical) + "\n")

    t_start = time.perf_counter()
    problem = cfg.problem.to_problem()
    model = build_model(cfg.model.kind, cfg.model, problem)
    if dump_graph:
        (run / "model.dot").write_text(eg.to_dot(model.u, "u"))
    tr = cfg.training
    collocation = sample_collocation(problem, cfg.collocation.nx, cfg.collocation.nt)
    objective = PinnObjective(model, collocation, LossWeights(tr.lambda_bc, tr.lambda_ic), tr.reduction,
                              tr.chunk_size, threads)
    state = TrainState(model.init_values(tr.seed), model.param_names)
    metrics_path = run / "metrics.jsonl"
    timing_path = run / "timing.jsonl"
    ckpt_path = run / "checkpoint.bin"
    header = {"config": portable, "inputs_hash": git_blob_hash(canonical)}
    with open(metrics_path, "w") as mf, open(timing_path, "w") as tf:
        def on_record(rec, wall_ms):
            mf.write(json.dumps(rec) + "\n")
            mf.flush()
            tf.write(json.dumps({"iter": rec["iter"], "wall_ms": wall_ms}) + "\n")
            if rec["iter"] % 10 == 0:
                log.info("iter %d loss %.6e", rec["iter"], rec["loss_total"])

        try:
            if tr.optimizer == "lbfgs":
                lbfgs_minimize(objective, state, tr.epochs, tr.tolerance, tr.history, on_record=on_record)
            else:
                adam_minimize(objective, state, tr.epochs, tr.lr, on_record=on_record)
        except NumericalAbort as exc:
            checkpoint.save(ckpt_path, state.params, model, header["config"], {"status": "aborted"})
            _dump(run / "error.json", {"error": "numerical-abort", "message": str(exc), "iteration": state.iteration})
            raise

    checkpoint.save(ckpt_path, state.params, model, header["config"], {"inputs_hash": header["inputs_hash"]})
    final = state.history[-1]
    ref, ref_kind = reference_grid(cfg, problem)
    m = evaluate(model, state.params, ref, {"total": final["loss_total"], "pde": final["loss_pde"],
                                              "bc": final["loss_bc"], "ic": final["loss_ic"]})
    pred = ref.with_values(model.predict(ref.points(), state.params))
    if "csv" in cfg.output.formats:
        write_csv(run / "prediction.csv", pred)
        write_csv(run / "error.csv", m.abs_error_grid)
    if "ppm" in cfg.output.formats:
        field, _ = slice_for_plot(pred)
        write_ppm(run / "prediction.ppm", field)
    summary = {
        "final_loss": final["loss_total"],
        "l2_rel": m.l2_rel,
        "linf_rel": m.linf_rel,
        "param_count": model.n_params,
        "wall_time": time.perf_counter() - t_start,
        "status": state.status,
        "iterations": state.iteration,
        "kind": model.kind,
        "reference": ref_kind,
        "param_counts": param_counts(model),
        "loss_components": {k: final[f"loss_{k}"] for k in ("pde", "bc", "ic")},
        "reduction": tr.reduction,
        "metadata": model.metadata,
        "inputs_hash": header["inputs_hash"],
    }
    _dump(run / "summary.json", summary)
    return {"run_dir": str(run), "summary": summary, "state": state, "model": model}


def cmd_oracle(config: ExperimentConfig | str | Path, out_dir: str | Path | None = None,
               formats: Sequence[str] | None = None) -> dict:
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    problem = cfg.problem.to_problem()
    nx = cfg.output.oracle_nx or (201 if problem.dim == 1 else 50)
    times = cfg.output.oracle_times if cfg.output.oracle_times is not None else cfg.eval_times()
    stats = oracle.Rk45Stats()
    grid = oracle.rk45_solve(problem, nx, times, stats=stats)
    run = Path(out_dir or cfg.output.directory)
    run.mkdir(parents=True, exist_ok=True)
    write_csv(run / "oracle.csv", grid)
    formats = list(formats if formats is not None else cfg.output.formats)
    if "ppm" in formats:
        if problem.dim == 1:
            write_ppm(run / "oracle.ppm", grid.values)
        else:
            for i, t in enumerate(grid.axes[-1]):
                write_ppm(run / f"oracle_t{i:03d}.ppm", grid.values[..., i])
    info = {"nx": nx, "times": [float(t) for t in times], "accepted": stats.accepted,
            "rejected": stats.rejected, "rhs_evals": stats.rhs_evals}
    _dump(run / "oracle.json", info)
    return {"grid": grid, **info}


def _model_from_checkpoint(ckpt_path, config=None):
    ckpt = checkpoint.load(ckpt_path)
    if config is None:
        if not ckpt.header.get("config"):
            raise ConfigError("checkpoint carries no config; pass --config")
        cfg = ExperimentConfig.model_validate(ckpt.header["config"])
    else:
        cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    problem = cfg.problem.to_problem()
    model = build_model(cfg.model.kind, cfg.model, problem)
    try:
        checkpoint.load(ckpt_path, model)
    except checkpoint.CheckpointError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, problem, model, ckpt.params


def cmd_infer(ckpt_path: str | Path, out_dir: str | Path, config=None, nx: int | None = None,
              times: Sequence[float] | None = None, reference: str | None = None) -> dict:
    """Predict on a grid; with a reference ("analytic", "rk45" or a CSV path) also write error maps."""
    cfg, problem, model, params = _model_from_checkpoint(ckpt_path, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = None
    ref_kind = None
    if reference is not None and reference not in ("analytic", "rk45"):
        ref = read_csv(reference)
        ref_kind = "file"
        axes = ref.axes
    else:
        upd = {}
        if nx is not None:
            upd["eval_nx"] = nx
        if times is not None:
            upd["eval_times"] = list(times)
        if upd:
            cfg = ExperimentConfig.model_validate({**cfg.resolved(), "output": {**cfg.resolved()["output"], **upd}})
        if reference is not None:
            ref, ref_kind = reference_grid(cfg, problem, reference)
            axes = ref.axes
        else:
            axes = [np.linspace(lo, hi, cfg.output.eval_nx) for lo, hi in problem.space_bounds]
            axes.append(np.asarray(cfg.eval_times()))
    shape = tuple(len(a) for a in axes)
    template = SolutionGrid(axes, np.zeros(shape))
    if len(axes) != problem.dim + 1:
        raise ConfigError("grid dimensionality does not match the problem")
    pred = template.with_values(model.predict(template.points(), params))
    write_csv(out / "prediction.csv", pred)
    result = {"prediction": pred}
    if ref is not None:
        m = evaluate(model, params, ref)
        write_csv(out / "error.csv", m.abs_error_grid)
        summary = {"l2_rel": m.l2_rel, "linf_rel": m.linf_rel, "reference": ref_kind}
        _dump(out / "summary.json", summary)
        result.update(summary, error=m.abs_error_grid)
    return result


COMPARE_COLUMNS = ["run", "kind", "status", "final_loss", "l2_rel", "linf_rel", "param_count", "wall_time"]


def cmd_compare(run_dirs: Sequence[str | Path], out_dir: str | Path | None = None) -> dict:
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    rows = []
    problem_block = None
    for d in run_dirs:
        d = Path(d)
        cfg_path = d / "config.resolved.json"
        if not cfg_path.exists():
            raise ConfigError(f"{d} is not a run directory (no config.resolved.json)")
        cfg = json.loads(cfg_path.read_text())
        if problem_block is None:
            problem_block = cfg["problem"]
        elif cfg["problem"] != problem_block:
            raise ConfigError(f"{d} solves a different problem")
        row = {"run": str(d), "kind": cfg["model"]["kind"]}
        sp = d / "summary.json"
        if sp.exists():
            s = json.loads(sp.read_text())
            row.update({k: s.get(k) for k in COMPARE_COLUMNS[3:]}, status=s.get("status", "complete"))
        else:
            row.update({k: None for k in COMPARE_COLUMNS[3:]}, status="incomplete")
        rows.append(row)
    rows.sort(key=lambda r: (r["l2_rel"] is None, r["l2_rel"] if r["l2_rel"] is not None else 0.0))
    text = format_table(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in COMPARE_COLUMNS])
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "comparison.csv").write_text(buf.getvalue())
        (Path(out_dir) / "comparison.txt").write_text(text)
    return {"rows": rows, "text": text, "csv": buf.getvalue()}


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4e}" if v != 0 and (abs(v) < 1e-2 or abs(v) >= 1e4) else f"{v:.4f}"
    return str(v)


def format_table(rows: list[dict]) -> str:
    cells = [COMPARE_COLUMNS] + [[_cell(r[c]) for c in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(COMPARE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def cmd_plot(csv_path: str | Path, out_path: str | Path, lo: float | None = None, hi: float | None = None,
             t: float | None = None) -> dict:
    grid = read_csv(csv_path)
    field, t_used = slice_for_plot(grid, t)
    if lo is not None and hi is not None and not hi > lo:
        raise ConfigError("colour range needs hi > lo")
    write_ppm(out_path, field, lo, hi)
    return {"shape": field.shape, "t": t_used}
