"""Experiment configuration (strict JSON schema, unknown keys rejected)."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .pde import FieldFunction, HeatProblem

_PI_FRACTION = re.compile(r"^\s*([0-9eE.+-]+)\s*(?:/\s*pi|\*\s*pi)\s*$")


def parse_kappa(value: Union[str, float]) -> float:
    """Accept numbers, decimal strings, or expressions in pi like ``"0.01/pi"``."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower()
    m = _PI_FRACTION.match(text)
    if m:
        num = float(m.group(1))
        return num / math.pi if "/" in text else num * math.pi
    return float(text)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FunctionBlock(Strict):
    tag: Literal["zero", "constant", "sine-mode", "gaussian-bump", "custom-table"] = "zero"
    amplitude: float = 1.0
    frequencies: list[float] = Field(default_factory=list)
    center: list[float] = Field(default_factory=list)
    width: float = 1.0
    value: float = 0.0
    table_axes: list[list[float]] = Field(default_factory=list)
    table_values: list = Field(default_factory=list)

    def to_function(self) -> FieldFunction:
        return FieldFunction(
            tag=self.tag,
            amplitude=self.amplitude,
            frequencies=tuple(self.frequencies),
            center=tuple(self.center),
            width=self.width,
            value=self.value,
            table_axes=tuple(tuple(a) for a in self.table_axes),
            table_values=_freeze(self.table_values),
        )


def _freeze(x):
    return tuple(_freeze(v) for v in x) if isinstance(x, list) else x


class ProblemBlock(Strict):
    dim: Literal[1, 2] = 1
    kappa: Union[float, str] = "0.01/pi"
    space_bounds: Optional[list[tuple[float, float]]] = None
    t_max: Optional[float] = None
    ic: Optional[FunctionBlock] = None
    bc: FunctionBlock = Field(default_factory=FunctionBlock)
    source: FunctionBlock = Field(default_factory=FunctionBlock)

    @field_validator("kappa")
    @classmethod
    def _kappa_ok(cls, v):
        if parse_kappa(v) <= 0:
            raise ValueError("kappa must be positive")
        return v

    @model_validator(mode="after")
    def _defaults(self):
        if self.space_bounds is None:
            self.space_bounds = [(-1.0, 1.0)] if self.dim == 1 else [(0.0, 1.0), (0.0, 1.0)]
        if self.t_max is None:
            self.t_max = 1.0 if self.dim == 1 else 0.1
        if self.ic is None:
            self.ic = (
                FunctionBlock(tag="sine-mode", amplitude=-1.0, frequencies=[1.0])
                if self.dim == 1
                else FunctionBlock(tag="sine-mode", amplitude=1.0, frequencies=[1.0, 1.0])
            )
        return self

    def to_problem(self) -> HeatProblem:
        return HeatProblem(
            dim=self.dim,
            kappa=parse_kappa(self.kappa),
            space_bounds=tuple(tuple(b) for b in self.space_bounds),
            t_max=float(self.t_max),
            ic=self.ic.to_function(),
            bc=self.bc.to_function(),
            source=self.source.to_function(),
        )


class ModelBlock(Strict):
    kind: Literal["pinn", "fnn-te-qpinn", "qnn-te-qpinn"] = "fnn-te-qpinn"
    n_qubits: int = Field(4, ge=1, le=24)
    n_layers: int = Field(5, ge=1)
    entangler: Literal["ring", "linear"] = "ring"
    fnn_hidden: list[int] = Field(default_factory=lambda: [10, 10])
    mlp_hidden: list[int] = Field(default_factory=lambda: [50, 50, 50, 50])
    aux_layers: Optional[int] = Field(None, ge=1)


class CollocationBlock(Strict):
    nx: int = Field(50, ge=3)
    nt: int = Field(50, ge=2)


class TrainingBlock(Strict):
    optimizer: Literal["lbfgs", "adam"] = "lbfgs"
    epochs: int = Field(150, ge=0)
    lambda_bc: float = Field(1.0, ge=0)
    lambda_ic: float = Field(1.0, ge=0)
    reduction: Literal["sum", "mean"] = "sum"
    seed: int = 7
    tolerance: float = Field(1e-12, ge=0)
    history: int = Field(10, ge=1)
    lr: float = Field(1e-3, gt=0)
    chunk_size: int = Field(1024, ge=1)


class OutputBlock(Strict):
    directory: str = "runs/default"
    eval_nx: int = Field(101, ge=2)
    eval_nt: int = Field(101, ge=2)
    eval_times: Optional[list[float]] = None
    reference: Literal["auto", "analytic", "rk45"] = "auto"
    oracle_nx: Optional[int] = Field(None, ge=3)
    oracle_times: Optional[list[float]] = None
    formats: list[Literal["csv", "ppm"]] = Field(default_factory=lambda: ["csv"])


class ExperimentConfig(Strict):
    problem: ProblemBlock = Field(default_factory=ProblemBlock)
    model: ModelBlock = Field(default_factory=ModelBlock)
    collocation: CollocationBlock = Field(default_factory=CollocationBlock)
    training: TrainingBlock = Field(default_factory=TrainingBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def resolved(self) -> dict:
        return json.loads(self.model_dump_json())

    def eval_times(self) -> list[float]:
        if self.output.eval_times is not None:
            return list(self.output.eval_times)
        t_max = float(self.problem.t_max)
        n = self.output.eval_nt
        return [t_max * i / (n - 1) for i in range(n)]


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    return ExperimentConfig.model_validate(data)
