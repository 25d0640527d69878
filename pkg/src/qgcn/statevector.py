"""Dense statevector kernels.

Qubit ``q`` is bit ``q`` of the basis index (qubit 0 is the least significant
bit).  Amplitude arrays are shaped ``(2**n, *batch)``: the basis index is the
first axis and any trailing axes index independent samples.  Keeping the batch
innermost makes every gate slice a contiguous run of memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import _kernels

DTYPE = np.complex128

ROTATIONS = frozenset({"RX", "RY", "RZ"})
KINDS = ROTATIONS | {"CNOT", "SWAP"}

_IMPOSSIBLE_BRANCH = 1e-15


class UnresolvedAngleError(ValueError):
    """A symbolic angle reached a kernel without a bound value."""


class ImpossibleBranchError(ValueError):
    """Requested measurement branch has (numerically) zero probability."""


@dataclass(frozen=True)
class ParamRef:
    """Symbolic angle: ``scale * values[bindings[name]]``."""

    name: str
    scale: float = 1.0

    def __neg__(self) -> ParamRef:
        return ParamRef(self.name, -self.scale)


Angle = Union[float, ParamRef]


@dataclass(frozen=True)
class GateInstance:
    """One gate occurrence.

    CNOT keeps its control in ``controls[0]``; any further controls (edge
    qubits) follow it.  SWAP has two targets.
    """

    kind: str
    targets: tuple[int, ...]
    controls: tuple[int, ...] = ()
    angle: Angle | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        n_targets = 2 if self.kind == "SWAP" else 1
        if len(self.targets) != n_targets:
            raise ValueError(f"{self.kind} takes {n_targets} target(s), got {self.targets}")
        if self.kind == "CNOT" and not self.controls:
            raise ValueError("CNOT needs a control qubit")
        wires = self.targets + self.controls
        if len(set(wires)) != len(wires):
            raise ValueError(f"{self.kind}: targets and controls collide: {wires}")
        if any(q < 0 for q in wires):
            raise ValueError(f"{self.kind}: negative qubit index in {wires}")
        if (self.kind in ROTATIONS) != (self.angle is not None):
            raise ValueError(f"{self.kind}: rotations carry exactly one angle, other gates none")

    @property
    def wires(self) -> tuple[int, ...]:
        return self.targets + self.controls

    @property
    def parametrized(self) -> bool:
        return isinstance(self.angle, ParamRef)


def cnot(control: int, target: int, extra_controls: Sequence[int] = ()) -> GateInstance:
    return GateInstance("CNOT", (target,), (control, *extra_controls))


def rotation(kind: str, qubit: int, angle: Angle, controls: Sequence[int] = ()) -> GateInstance:
    return GateInstance(kind, (qubit,), tuple(controls), angle)


def rx_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=DTYPE)


def ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=DTYPE)


def rz_matrix(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=DTYPE)


ROTATION_MATRIX = {"RX": rx_matrix, "RY": ry_matrix, "RZ": rz_matrix}


@dataclass
class StateVector:
    """``2**n_qubits`` amplitudes along axis 0, optionally with trailing batch axes."""

    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=DTYPE)
        if amps.ndim == 0 or amps.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"expected first axis of length {2**self.n_qubits}, got shape {amps.shape}"
            )
        self.amplitudes = amps

    @classmethod
    def zero(cls, n_qubits: int, batch_shape: tuple[int, ...] = ()) -> StateVector:
        return cls.basis(n_qubits, 0, batch_shape)

    @classmethod
    def basis(cls, n_qubits: int, index: int, batch_shape: tuple[int, ...] = ()) -> StateVector:
        amps = np.zeros((2**n_qubits,) + batch_shape, dtype=DTYPE)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.amplitudes.shape[1:]

    def norm(self) -> np.ndarray | float:
        return np.linalg.norm(self.amplitudes, axis=0)

    def copy(self) -> StateVector:
        return StateVector(self.n_qubits, self.amplitudes.copy())


def _check_qubits(n: int, qubits: Sequence[int]) -> None:
    for q in qubits:
        if not 0 <= q < n:
            raise IndexError(f"qubit {q} out of range for a {n}-qubit state")


def _as_2d(amps: np.ndarray, n: int) -> np.ndarray:
    # Contiguous reshape is a view, so kernels write through to ``amps``.
    if not amps.flags.c_contiguous:
        raise ValueError("amplitude array must be C-contiguous")
    return amps.reshape(2**n, -1)


def _mask(qubits: Sequence[int]) -> int:
    m = 0
    for q in qubits:
        m |= 1 << q
    return m


def apply_matrix(
    amps: np.ndarray, n: int, matrix: np.ndarray, target: int, controls: Sequence[int] = ()
) -> None:
    """Apply a 2x2 matrix to ``target`` on the all-controls-set subspace, in place."""
    m = np.asarray(matrix, dtype=DTYPE)
    state = _as_2d(amps, n)
    if m[0, 1] == 0 and m[1, 0] == 0:
        _kernels.diag1(state, m[0, 0], m[1, 1], target, _mask(controls))
    else:
        _kernels.mat1(state, m, target, _mask(controls))


def apply_gate_inplace(
    amps: np.ndarray, n: int, gate: GateInstance, angle: float | None = None
) -> None:
    """Kernel entry point on a raw contiguous amplitude array."""
    if gate.kind in ROTATIONS:
        apply_matrix(amps, n, ROTATION_MATRIX[gate.kind](angle), gate.targets[0], gate.controls)
    elif gate.kind == "CNOT":
        _kernels.flip1(_as_2d(amps, n), gate.targets[0], _mask(gate.controls))
    else:
        p, q = gate.targets
        _kernels.swap2(_as_2d(amps, n), p, q, _mask(gate.controls))


def resolve_angle(gate: GateInstance, angle_value: float | None = None) -> float | None:
    if gate.angle is None:
        return None
    if isinstance(gate.angle, ParamRef):
        if angle_value is None:
            raise UnresolvedAngleError(f"{gate.kind} on {gate.targets}: slot {gate.angle.name!r} unbound")
        return float(angle_value)
    return float(gate.angle)


def apply_gate(state: StateVector, gate: GateInstance, angle_value: float | None = None) -> StateVector:
    """Apply ``gate`` to ``state`` in place and return it.

    ``angle_value`` is required when the gate's angle is symbolic; it is the
    final radian value (any ``ParamRef.scale`` already applied).
    """
    _check_qubits(state.n_qubits, gate.wires)
    apply_gate_inplace(state.amplitudes, state.n_qubits, gate, resolve_angle(gate, angle_value))
    return state


def probability_one(state: StateVector, qubit: int) -> np.ndarray | float:
    _check_qubits(state.n_qubits, [qubit])
    probs = np.abs(state.amplitudes) ** 2
    probs = probs.reshape((-1, 2, 2**qubit) + state.batch_shape)
    return probs[:, 1].sum(axis=(0, 1))


def expectation_z(state: StateVector, qubit: int) -> np.ndarray | float:
    """Exact ``<psi|Z_qubit|psi>`` (p0 - p1), one value per batch element."""
    _check_qubits(state.n_qubits, [qubit])
    probs = np.abs(state.amplitudes) ** 2
    probs = probs.reshape((-1, 2, 2**qubit) + state.batch_shape)
    return probs[:, 0].sum(axis=(0, 1)) - probs[:, 1].sum(axis=(0, 1))


def collapse(state: StateVector, qubit: int, outcome: int) -> tuple[float, StateVector]:
    """Project an unbatched state onto ``qubit == outcome``.

    Returns the branch probability and the renormalized post-measurement state.
    """
    if state.batch_shape:
        raise ValueError("collapse works on a single state, not a batch")
    _check_qubits(state.n_qubits, [qubit])
    amps = state.amplitudes.reshape(-1, 2, 2**qubit).copy()
    amps[:, 1 - outcome, :] = 0.0
    prob = float(np.sum(np.abs(amps) ** 2))
    if prob < _IMPOSSIBLE_BRANCH:
        raise ImpossibleBranchError(f"qubit {qubit} outcome {outcome} has probability {prob:.3e}")
    return prob, StateVector(state.n_qubits, amps.reshape(-1) / np.sqrt(prob))


def measure_and_collapse(
    state: StateVector, qubit: int, rng: np.random.Generator
) -> tuple[int, StateVector]:
    """Sample a Z measurement of ``qubit`` with Born probabilities."""
    p1 = float(probability_one(state, qubit)) / float(np.sum(np.abs(state.amplitudes) ** 2))
    outcome = int(rng.random() < p1)
    _, collapsed = collapse(state, qubit, outcome)
    return outcome, collapsed


def tensor_product(a: StateVector, b: StateVector) -> StateVector:
    """``a ⊗ b``; ``a`` occupies the high qubits ``n_b .. n_b + n_a - 1``."""
    if a.batch_shape or b.batch_shape:
        amps = np.einsum("i...,j...->ij...", a.amplitudes, b.amplitudes)
        amps = amps.reshape((-1,) + amps.shape[2:])
    else:
        amps = np.kron(a.amplitudes, b.amplitudes)
    return StateVector(a.n_qubits + b.n_qubits, amps)


def apply_dense(amps: np.ndarray, n: int, matrix: np.ndarray, wires: Sequence[int]) -> np.ndarray:
    """Apply a ``2**k`` square matrix on ``wires``; returns a new array.

    Bit ``j`` of the matrix's row/column index is qubit ``wires[j]``.
    """
    out = np.empty_like(amps)
    _kernels.dense(
        _as_2d(amps, n),
        np.ascontiguousarray(matrix, dtype=DTYPE),
        np.asarray(wires, dtype=np.int64),
        _as_2d(out, n),
    )
    return out


def block_matrix(gates: Sequence[GateInstance], angles: Sequence[float | None], wires: Sequence[int]) -> np.ndarray:
    """Dense matrix of a gate sequence restricted to ``wires`` (same bit order as :func:`apply_dense`)."""
    local = {q: j for j, q in enumerate(wires)}
    k = len(wires)
    cols = np.eye(2**k, dtype=DTYPE)
    for g, a in zip(gates, angles):
        lg = GateInstance(g.kind, tuple(local[q] for q in g.targets), tuple(local[q] for q in g.controls), g.angle)
        apply_gate_inplace(cols, k, lg, a)
    return cols
