"""Encoding, layered ansatz and Z-observable readout of the quantum model.

Circuit: ``|0..0>`` -> RY(phi_k) on every qubit k -> L layers of
[RY(theta[l, k]) on every qubit, then a CNOT entangler] -> measure.

Every angle drives exactly one RY gate, so the expectation is a
single-frequency trigonometric function of each angle,
``E(a) = A + B cos a + C sin a``. That gives exact shift rules:

    dE/da   = (E(a + pi/2) - E(a - pi/2)) / 2
    d2E/da2 = -(B cos a + C sin a) = (E(a + pi) - E(a)) / 2

and mixed second partials from the four-point product of first-order rules.
The second-order identity follows from ``E(a + pi) = A - B cos a - C sin a``.

:func:`expectation_node` wraps the circuit as an exprgraph primitive whose
partial-derivative rule is the first-order shift rule, expressed as two new
primitive nodes with the argument offset by +-pi/2. Offsets are stored as
integer quarter turns modulo 4 (RY(a + 2pi) = -RY(a) leaves expectations
unchanged), so nested derivatives reuse identical nodes and the nested second
derivative collapses to the two-point rule above.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from . import exprgraph as eg
from .qsim import (
    StateVector,
    cnot_kernel,
    expect_z,
    expect_z_all,
    parity_diagonal,
    ry_kernel,
    z_diagonal,
    zero_state,
)

HALF_PI = np.pi / 2

# observable tag: "all" for Z⊗n, or an int k for Z on qubit k
Observable = Union[str, int]


@dataclass(frozen=True)
class CircuitLayout:
    n_qubits: int
    n_layers: int
    entangler: str = "ring"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        # n_layers == 0 is an encode-only circuit, used by tests and ablations
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.entangler not in ("ring", "linear"):
            raise ValueError(f"unknown entangler {self.entangler!r}")

    @property
    def n_params(self) -> int:
        return self.n_qubits * self.n_layers

    def cnot_pairs(self) -> list[tuple[int, int]]:
        n = self.n_qubits
        if n == 1:
            return []
        if self.entangler == "linear" or n == 2:
            return [(k, k + 1) for k in range(n - 1)]
        return [(k, (k + 1) % n) for k in range(n)]

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "n_layers": self.n_layers, "entangler": self.entangler}


@dataclass(frozen=True)
class VarParams:
    theta: np.ndarray  # (n_layers, n_qubits)

    @classmethod
    def of(cls, layout: CircuitLayout, theta) -> "VarParams":
        arr = np.asarray(theta, dtype=np.float64).reshape(layout.n_layers, layout.n_qubits)
        if not np.all(np.isfinite(arr)):
            raise ValueError("theta must be finite")
        return cls(arr)


def _check_shapes(layout: CircuitLayout, gamma, theta) -> tuple[np.ndarray, np.ndarray]:
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (layout.n_qubits,):
        raise ValueError(f"gamma has shape {gamma.shape}, expected ({layout.n_qubits},)")
    theta = np.asarray(theta.theta if isinstance(theta, VarParams) else theta, dtype=np.float64)
    if theta.size != layout.n_params:
        raise ValueError(f"theta has {theta.size} entries, expected {layout.n_params}")
    return gamma, theta.reshape(layout.n_layers, layout.n_qubits)


def encode(layout: CircuitLayout, gamma) -> StateVector:
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (layout.n_qubits,):
        raise ValueError(f"gamma has shape {gamma.shape}, expected ({layout.n_qubits},)")
    amps = zero_state(layout.n_qubits).amps.real.copy()
    for k, phi in enumerate(gamma):
        amps = ry_kernel(amps, layout.n_qubits, k, phi)
    return StateVector(layout.n_qubits, amps.astype(np.complex128))


def ansatz_kernel(amps: np.ndarray, layout: CircuitLayout, theta) -> np.ndarray:
    """Apply the layered ansatz to amplitudes of shape (..., 2**n)."""
    n = layout.n_qubits
    pairs = layout.cnot_pairs()
    for layer in range(layout.n_layers):
        for k in range(n):
            amps = ry_kernel(amps, n, k, theta[layer][k])
        for c, t in pairs:
            amps = cnot_kernel(amps, n, c, t)
    return amps


def ansatz(state: StateVector, layout: CircuitLayout, params: VarParams | np.ndarray) -> StateVector:
    if state.n != layout.n_qubits:
        raise ValueError("state and layout qubit counts differ")
    theta = np.asarray(params.theta if isinstance(params, VarParams) else params, dtype=np.float64)
    if theta.size != layout.n_params:
        raise ValueError(f"theta has {theta.size} entries, expected {layout.n_params}")
    theta = theta.reshape(layout.n_layers, layout.n_qubits)
    return StateVector(state.n, ansatz_kernel(state.amps, layout, theta))


def expectation(layout: CircuitLayout, gamma, params, observable: Observable = "all") -> float:
    gamma, theta = _check_shapes(layout, gamma, params)
    psi = ansatz(encode(layout, gamma), layout, theta)
    if observable == "all":
        return expect_z_all(psi)
    return expect_z(psi, int(observable))


# Angle addresses: ("phi", k) or ("theta", layer, k).
Address = tuple


def _flat_index(layout: CircuitLayout, which: Address) -> int:
    if not isinstance(which, tuple) or not which:
        raise ValueError(f"invalid angle address {which!r}")
    if which[0] == "phi" and len(which) == 2:
        k = which[1]
        if 0 <= k < layout.n_qubits:
            return k
    elif which[0] == "theta" and len(which) == 3:
        layer, k = which[1], which[2]
        if 0 <= layer < layout.n_layers and 0 <= k < layout.n_qubits:
            return layout.n_qubits + layer * layout.n_qubits + k
    raise ValueError(f"invalid angle address {which!r}")


def _shifted(layout, gamma, theta, shifts: dict[int, float], observable) -> float:
    flat = np.concatenate([gamma, theta.ravel()])
    for i, s in shifts.items():
        flat[i] += s
    n = layout.n_qubits
    return expectation(layout, flat[:n], flat[n:], observable)


def shift_first(layout, gamma, params, which: Address, observable: Observable = "all") -> float:
    gamma, theta = _check_shapes(layout, gamma, params)
    i = _flat_index(layout, which)
    plus = _shifted(layout, gamma, theta, {i: HALF_PI}, observable)
    minus = _shifted(layout, gamma, theta, {i: -HALF_PI}, observable)
    return (plus - minus) / 2


def shift_second(layout, gamma, params, which: Address, observable: Observable = "all") -> float:
    gamma, theta = _check_shapes(layout, gamma, params)
    i = _flat_index(layout, which)
    return (_shifted(layout, gamma, theta, {i: np.pi}, observable) - _shifted(layout, gamma, theta, {}, observable)) / 2


def shift_second_nested(layout, gamma, params, which: Address, observable: Observable = "all") -> float:
    """Second partial from two nested first-order rules (four evaluations)."""
    gamma, theta = _check_shapes(layout, gamma, params)
    i = _flat_index(layout, which)
    e = lambda s: _shifted(layout, gamma, theta, {i: s}, observable)  # noqa: E731
    return (e(np.pi) - 2 * e(0.0) + e(-np.pi)) / 4


def shift_mixed(layout, gamma, params, which_a: Address, which_b: Address, observable: Observable = "all") -> float:
    gamma, theta = _check_shapes(layout, gamma, params)
    i = _flat_index(layout, which_a)
    j = _flat_index(layout, which_b)
    if i == j:
        raise ValueError("identical addresses; use shift_second")
    total = 0.0
    for si, sj, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        total += sign * _shifted(layout, gamma, theta, {i: si * HALF_PI, j: sj * HALF_PI}, observable)
    return total / 4


# --- batched evaluation used by the graph primitive ---------------------------------

# Below this register size the ansatz is folded into a dense observable
# M = U^T O U once per parameter setting and shared by the whole batch.
OPERATOR_MAX_QUBITS = 8


def _diagonal(n: int, observable: Observable) -> np.ndarray:
    return parity_diagonal(n) if observable == "all" else z_diagonal(n, int(observable))


@lru_cache(maxsize=4096)
def _heisenberg_operator(layout: CircuitLayout, observable: Observable, theta: tuple) -> np.ndarray:
    n = layout.n_qubits
    u = ansatz_kernel(np.eye(2**n), layout, np.asarray(theta).reshape(layout.n_layers, n))
    # rows of u are U|e_i>, so U = u.T
    m = (u * _diagonal(n, observable)) @ u.T
    m = (m + m.T) / 2
    m.setflags(write=False)
    return m


def product_state(angles: Sequence) -> np.ndarray:
    """Amplitudes of ⊗_k RY(angle_k)|0>, broadcast over batch shape."""
    angles = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in angles])
    amps = np.ones(angles[0].shape + (1,))
    for a in angles:
        q = np.stack([np.cos(a / 2), np.sin(a / 2)], axis=-1)
        amps = (q[..., :, None] * amps[..., None, :]).reshape(a.shape + (-1,))
    return amps


def batch_expectation(layout: CircuitLayout, phis: Sequence, thetas: Sequence, observable: Observable = "all"):
    """Expectation for a batch: phis/thetas are per-angle scalars or arrays of a common batch shape."""
    n = layout.n_qubits
    scalar_thetas = all(np.ndim(t) == 0 for t in thetas)
    if scalar_thetas and n <= OPERATOR_MAX_QUBITS:
        psi = product_state(phis)
        m = _heisenberg_operator(layout, observable, tuple(float(t) for t in thetas))
        val = np.einsum("...i,...i->...", psi @ m, psi)
    else:
        # per-row angles (or a register too large for the dense operator)
        psi = product_state(phis)
        layers = [list(thetas[l * n:(l + 1) * n]) for l in range(layout.n_layers)]
        psi = ansatz_kernel(psi, layout, layers)
        val = (psi * psi) @ _diagonal(n, observable)
    val = np.clip(val, -1.0, 1.0)
    return float(val) if np.ndim(val) == 0 else val


_PRIMITIVES: dict[tuple, eg.Primitive] = {}


def _expectation_primitive(layout: CircuitLayout, observable: Observable) -> eg.Primitive:
    key = (layout, observable)
    prim = _PRIMITIVES.get(key)
    if prim is not None:
        return prim
    n = layout.n_qubits
    arity = n + layout.n_params

    def value_fn(values, offsets):
        if offsets is not None:
            values = [v + q * HALF_PI if q else v for v, q in zip(values, offsets)]
        return batch_expectation(layout, values[:n], values[n:], observable)

    def partial_rule(i, children, offsets):
        base = list(offsets) if offsets is not None else [0] * arity
        plus, minus = list(base), list(base)
        plus[i] = (plus[i] + 1) % 4
        minus[i] = (minus[i] - 1) % 4
        e_plus = prim(*children, state=_canon(plus))
        e_minus = prim(*children, state=_canon(minus))
        return eg.mul(0.5, eg.sub(e_plus, e_minus))

    def vjp(values, offsets, g):
        if offsets is not None:
            values = [v + q * HALF_PI if q else v for v, q in zip(values, offsets)]
        phis, thetas = values[:n], values[n:]
        if n > OPERATOR_MAX_QUBITS or any(np.ndim(t) for t in thetas):
            return _vjp_by_shifts(layout, observable, values, g)
        return _vjp_operator(layout, observable, phis, [float(t) for t in thetas], g)

    obs_name = "Z^n" if observable == "all" else f"Z{observable}"
    prim = eg.register_primitive(f"expect[{n}q{layout.n_layers}L,{obs_name}]", arity, value_fn, partial_rule, vjp)
    _PRIMITIVES[key] = prim
    return prim


def _vjp_by_shifts(layout, observable, values, g):
    n = layout.n_qubits
    out = []
    for i in range(len(values)):
        plus, minus = list(values), list(values)
        plus[i] = plus[i] + HALF_PI
        minus[i] = minus[i] - HALF_PI
        d = batch_expectation(layout, plus[:n], plus[n:], observable) - batch_expectation(
            layout, minus[:n], minus[n:], observable)
        out.append(0.5 * g * d)
    return out


def _vjp_operator(layout, observable, phis, thetas, g):
    """Adjoints through the dense-operator form E = psi^T M(theta) psi.

    Encoding angles use the exact single-qubit derivative of the product
    state; each variational angle uses the two-term shift of M itself, so
    the batch is contracted once into G = Psi^T diag(g) Psi.
    """
    n = layout.n_qubits
    phis = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in phis])
    shape = phis[0].shape
    psi = product_state(phis).reshape(-1, 2**n)
    gv = np.broadcast_to(np.asarray(g, dtype=np.float64), shape).reshape(-1)
    m = _heisenberg_operator(layout, observable, tuple(thetas))
    mpsi = psi @ m
    out = []
    for k in range(n):
        # d psi / d phi_k is half the product state with phi_k advanced by pi
        moved = list(phis)
        moved[k] = phis[k] + np.pi
        dpsi = product_state(moved).reshape(-1, 2**n)
        out.append((gv * np.einsum("bi,bi->b", mpsi, dpsi)).reshape(shape) if shape else
                   float(gv[0] * np.dot(mpsi[0], dpsi[0])))
    big_g = psi.T @ (gv[:, None] * psi)
    for j in range(len(thetas)):
        plus, minus = list(thetas), list(thetas)
        plus[j] += HALF_PI
        minus[j] -= HALF_PI
        dm = _heisenberg_operator(layout, observable, tuple(plus)) - _heisenberg_operator(
            layout, observable, tuple(minus))
        out.append(0.5 * float(np.sum(dm * big_g)))
    return out


def _canon(offsets: list[int]):
    return None if not any(offsets) else tuple(offsets)


def expectation_node(layout: CircuitLayout, gamma_nodes: Sequence, theta_nodes, observable: Observable = "all") -> eg.Node:
    """Graph node for the circuit expectation, differentiable to any order."""
    if len(gamma_nodes) != layout.n_qubits:
        raise ValueError(f"expected {layout.n_qubits} encoding angles, got {len(gamma_nodes)}")
    flat = [t for row in theta_nodes for t in (row if isinstance(row, (list, tuple)) else [row])]
    if len(flat) != layout.n_params:
        raise ValueError(f"expected {layout.n_params} variational angles, got {len(flat)}")
    prim = _expectation_primitive(layout, observable)
    return prim(*gamma_nodes, *flat)
