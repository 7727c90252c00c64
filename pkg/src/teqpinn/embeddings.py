"""Maps from coordinates (x[, y], t) to the encoding angle vector.

All maps are built from exprgraph nodes, so input derivatives (for the PDE
residual) and parameter derivatives (for training) come from the same graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprgraph as eg
from .qmodel import CircuitLayout, expectation_node

PI = math.pi


@dataclass(frozen=True)
class AffineScaler:
    """v -> pi * (2 (v - lo) / (hi - lo) - 1), one (lo, hi) per input dimension."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ValueError(f"invalid bounds ({lo}, {hi})")

    def forward(self, input_nodes: Sequence[eg.Node]) -> list[eg.Node]:
        if len(input_nodes) != len(self.bounds):
            raise ValueError(f"expected {len(self.bounds)} inputs, got {len(input_nodes)}")
        out = []
        for v, (lo, hi) in zip(input_nodes, self.bounds):
            a = 2 * PI / (hi - lo)
            out.append(eg.add(eg.mul(a, v), -PI - a * lo))
        return out


@dataclass
class DenseNet:
    """Fully connected tanh network over scalar graph nodes.

    Parameter variables are named ``{prefix}.W{l}.{i}.{j}`` (row i = output
    unit) and ``{prefix}.b{l}.{i}``.
    """

    layer_sizes: list[int]
    prefix: str
    output_activation: str = "linear"  # "linear" or "tanh"
    output_scale: float = 1.0
    weights: list[list[list[eg.Node]]] = field(init=False)
    biases: list[list[eg.Node]] = field(init=False)

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        self.weights, self.biases = [], []
        for l, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            self.weights.append(
                [[eg.var(f"{self.prefix}.W{l}.{i}.{j}") for j in range(fan_in)] for i in range(fan_out)]
            )
            self.biases.append([eg.var(f"{self.prefix}.b{l}.{i}") for i in range(fan_out)])

    @property
    def params(self) -> list[eg.Node]:
        out = []
        for w, b in zip(self.weights, self.biases):
            for row in w:
                out.extend(row)
            out.extend(b)
        return out

    def forward(self, input_nodes: Sequence[eg.Node]) -> list[eg.Node]:
        if len(input_nodes) != self.layer_sizes[0]:
            raise ValueError(f"expected {self.layer_sizes[0]} inputs, got {len(input_nodes)}")
        h = list(input_nodes)
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = [eg.add(b[i], *[eg.mul(w[i][j], h[j]) for j in range(len(h))]) for i in range(len(w))]
            if l < last or self.output_activation == "tanh":
                z = [eg.tanh(zi) for zi in z]
            h = z
        if self.output_scale != 1.0:
            h = [eg.mul(self.output_scale, hi) for hi in h]
        return h

    def init_values(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform weights, zero biases, in :attr:`params` order."""
        chunks = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)


@dataclass
class FnnEmbedding:
    d_in: int
    n_qubits: int
    hidden: tuple[int, ...] = (10, 10)
    prefix: str = "emb"
    net: DenseNet = field(init=False)

    def __post_init__(self):
        self.net = DenseNet([self.d_in, *self.hidden, self.n_qubits], self.prefix, "tanh", PI)

    @property
    def params(self) -> list[eg.Node]:
        return self.net.params


@dataclass
class QnnEmbedding:
    aux_layout: CircuitLayout
    input_map: AffineScaler
    prefix: str = "emb"
    theta: list[list[eg.Node]] = field(init=False)

    def __post_init__(self):
        L, n = self.aux_layout.n_layers, self.aux_layout.n_qubits
        self.theta = [[eg.var(f"{self.prefix}.theta.{l}.{k}") for k in range(n)] for l in range(L)]

    @property
    def params(self) -> list[eg.Node]:
        return [t for row in self.theta for t in row]


def fnn_forward(emb: FnnEmbedding, input_nodes: Sequence[eg.Node]) -> list[eg.Node]:
    return emb.net.forward(input_nodes)


def qnn_forward(emb: QnnEmbedding, input_nodes: Sequence[eg.Node]) -> list[eg.Node]:
    d_in = len(emb.input_map.bounds)
    if len(input_nodes) != d_in:
        raise ValueError(f"expected {d_in} inputs, got {len(input_nodes)}")
    scaled = emb.input_map.forward(input_nodes)
    n = emb.aux_layout.n_qubits
    gamma = [scaled[k % d_in] for k in range(n)]
    return [eg.mul(PI, expectation_node(emb.aux_layout, gamma, emb.theta, observable=k)) for k in range(n)]


def direct_forward(scaler: AffineScaler, input_nodes: Sequence[eg.Node], n_qubits: int | None = None) -> list[eg.Node]:
    d_in = len(scaler.bounds)
    n = d_in if n_qubits is None else n_qubits
    if n < d_in:
        raise ValueError("need at least one qubit per input dimension")
    scaled = scaler.forward(input_nodes)
    return [scaled[k % d_in] for k in range(n)]


def init_angles(count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-PI / 4, PI / 4, size=count)


def init_params(component, seed: int | np.random.Generator) -> np.ndarray:
    """Seeded initial values for an embedding, dense net or circuit layout."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(component, FnnEmbedding):
        return component.net.init_values(rng)
    if isinstance(component, DenseNet):
        return component.init_values(rng)
    if isinstance(component, QnnEmbedding):
        return init_angles(component.aux_layout.n_params, rng)
    if isinstance(component, CircuitLayout):
        return init_angles(component.n_params, rng)
    raise TypeError(f"cannot initialise {type(component).__name__}")
