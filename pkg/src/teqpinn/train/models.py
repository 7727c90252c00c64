"""The three interchangeable field models as exprgraph outputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import exprgraph as eg
from ..embeddings import (
    AffineScaler,
    DenseNet,
    FnnEmbedding,
    QnnEmbedding,
    fnn_forward,
    init_params,
    qnn_forward,
)
from ..pde import HeatProblem, coordinate_bindings
from ..qmodel import CircuitLayout, expectation_node

KINDS = ("pinn", "fnn-te-qpinn", "qnn-te-qpinn")
QUANTUM_KINDS = ("fnn-te-qpinn", "qnn-te-qpinn")


@dataclass
class Model:
    kind: str
    problem: HeatProblem
    u: eg.Node
    params: list[eg.Node]
    # name -> (start, stop) into the flat parameter vector
    blocks: dict[str, tuple[int, int]]
    components: list = field(repr=False)
    layout: CircuitLayout | None = None
    metadata: dict = field(default_factory=dict)
    _program: eg.Program | None = field(default=None, init=False, repr=False)

    @property
    def param_names(self) -> list[str]:
        return [p.payload for p in self.params]

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def inputs(self) -> list[eg.Node]:
        return [eg.var(c) for c in self.problem.coords]

    def init_values(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return np.concatenate([init_params(c, rng) for c in self.components])

    def bindings(self, theta: np.ndarray) -> dict[str, float]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        return {name: float(v) for name, v in zip(self.param_names, theta)}

    def predict(self, points: np.ndarray, theta: np.ndarray, chunk_size: int = 4096) -> np.ndarray:
        """Model output at points of shape (N, dim + 1)."""
        if self._program is None:
            self._program = eg.Program([self.u])
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        b = self.bindings(theta)
        out = np.empty(len(points))
        for s in range(0, len(points), chunk_size):
            chunk = points[s:s + chunk_size]
            b.update(coordinate_bindings(self.problem, chunk))
            out[s:s + len(chunk)] = np.broadcast_to(self._program.run(b)[0], len(chunk))
        return out

    def shape_signature(self) -> str:
        """Stable description of the parameter layout, used to match checkpoints."""
        parts = [self.kind, ",".join(self.problem.coords)]
        parts += [f"{k}:{a}-{b}" for k, (a, b) in self.blocks.items()]
        parts.append(str(self.n_params))
        return "|".join(parts)


def build_model(kind: str, config, problem: HeatProblem) -> Model:
    """Build a model from a model config block (see :class:`teqpinn.config.ModelBlock`)."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    inputs = [eg.var(c) for c in problem.coords]
    d_in = len(inputs)
    if kind == "pinn":
        net = DenseNet([d_in, *config.mlp_hidden, 1], "mlp", "linear")
        u = net.forward(inputs)[0]
        params = net.params
        return Model(kind, problem, u, params, {"mlp": (0, len(params))}, [net],
                     metadata={"mlp_layers": [d_in, *config.mlp_hidden, 1]})

    layout = CircuitLayout(config.n_qubits, config.n_layers, config.entangler)
    theta_var = [[eg.var(f"var.theta.{l}.{k}") for k in range(layout.n_qubits)] for l in range(layout.n_layers)]
    var_params = [t for row in theta_var for t in row]
    if kind == "fnn-te-qpinn":
        emb = FnnEmbedding(d_in, layout.n_qubits, tuple(config.fnn_hidden))
        gamma = fnn_forward(emb, inputs)
        meta = {"embedding": "fnn", "fnn_layers": emb.net.layer_sizes}
    else:
        aux_layers = config.aux_layers if config.aux_layers is not None else layout.n_layers
        aux = CircuitLayout(layout.n_qubits, aux_layers, config.entangler)
        emb = QnnEmbedding(aux, AffineScaler(problem.input_bounds))
        gamma = qnn_forward(emb, inputs)
        meta = {"embedding": "qnn", "aux_layout": aux.to_dict()}
    u = expectation_node(layout, gamma, theta_var)
    params = var_params + emb.params
    blocks = {"var": (0, len(var_params)), "emb": (len(var_params), len(params))}
    meta["layout"] = layout.to_dict()
    return Model(kind, problem, u, params, blocks, [layout, emb], layout=layout, metadata=meta)


def param_counts(model: Model) -> dict[str, int]:
    return {k: b - a for k, (a, b) in model.blocks.items()} | {"total": model.n_params}


def split(model: Model, theta: Sequence[float]) -> dict[str, np.ndarray]:
    theta = np.asarray(theta)
    return {k: theta[a:b] for k, (a, b) in model.blocks.items()}
