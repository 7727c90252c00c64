"""Dense statevector simulation with RY, CNOT and Pauli-Z readout.

Basis index convention: bit ``i`` of the index is the state of qubit ``i``,
so qubit 0 is the least significant bit.

The ``*_kernel`` functions act on raw amplitude arrays of shape
``(..., 2**n)`` and broadcast over leading batch axes; angles may be scalars
or arrays matching the batch shape. :class:`StateVector` wraps them for
single-state use.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_QUBITS = 24


@dataclass(frozen=True, eq=False)
class StateVector:
    n: int
    amps: np.ndarray

    def __post_init__(self):
        self.amps.setflags(write=False)

    @property
    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2))


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")


def _check_qubit(n: int, q: int) -> None:
    if not 0 <= q < n:
        raise IndexError(f"qubit {q} out of range for {n}-qubit register")


def zero_state(n: int) -> StateVector:
    _check_n(n)
    amps = np.zeros(2**n, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n, amps)


def ry_kernel(amps: np.ndarray, n: int, qubit: int, angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=np.float64)
    c = np.cos(angle / 2)[..., None, None]
    s = np.sin(angle / 2)[..., None, None]
    shape = amps.shape
    x = amps.reshape(shape[:-1] + (2 ** (n - 1 - qubit), 2, 2**qubit))
    a0 = x[..., 0, :]
    a1 = x[..., 1, :]
    out = np.empty(np.broadcast_shapes(x.shape, c.shape[:-2] + (1, 1, 1)), dtype=np.result_type(amps, c))
    out[..., 0, :] = c * a0 - s * a1
    out[..., 1, :] = s * a0 + c * a1
    return out.reshape(out.shape[:-3] + (2**n,))


@lru_cache(maxsize=None)
def cnot_permutation(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n)
    flip = ((idx >> control) & 1).astype(bool)
    perm = idx.copy()
    perm[flip] ^= 1 << target
    perm.setflags(write=False)
    return perm


def cnot_kernel(amps: np.ndarray, n: int, control: int, target: int) -> np.ndarray:
    return amps[..., cnot_permutation(n, control, target)]


@lru_cache(maxsize=None)
def parity_diagonal(n: int) -> np.ndarray:
    """Eigenvalues of Z⊗...⊗Z on the computational basis."""
    idx = np.arange(2**n)
    pop = np.zeros(2**n, dtype=np.int64)
    for i in range(n):
        pop += (idx >> i) & 1
    d = np.where(pop % 2 == 0, 1.0, -1.0)
    d.setflags(write=False)
    return d


@lru_cache(maxsize=None)
def z_diagonal(n: int, qubit: int) -> np.ndarray:
    idx = np.arange(2**n)
    d = np.where((idx >> qubit) & 1, -1.0, 1.0)
    d.setflags(write=False)
    return d


def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    _check_qubit(state.n, qubit)
    return StateVector(state.n, ry_kernel(state.amps, state.n, qubit, angle).astype(np.complex128))


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    _check_qubit(state.n, control)
    _check_qubit(state.n, target)
    if control == target:
        raise ValueError("control and target must differ")
    return StateVector(state.n, cnot_kernel(state.amps, state.n, control, target))


def _probabilities(amps: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(amps):
        return amps.real**2 + amps.imag**2
    return amps * amps


def expect_z_all(state: StateVector) -> float:
    return float(np.clip(_probabilities(state.amps) @ parity_diagonal(state.n), -1.0, 1.0))


def expect_z(state: StateVector, qubit: int) -> float:
    _check_qubit(state.n, qubit)
    return float(np.clip(_probabilities(state.amps) @ z_diagonal(state.n, qubit), -1.0, 1.0))
