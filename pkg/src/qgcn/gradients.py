"""Loss and gradients of the readout expectation.

All three gradient routes share one calling convention: a circuit, its
parameter table, a (batched) input state and optional ±1 labels.  With
labels the result is the gradient of the mean squared loss; without them it
is the gradient of the mean readout ``<Z>``.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .model import Circuit, ParamTable, evolve
from .statevector import ROTATIONS, StateVector, _as_2d, _mask, apply_gate_inplace, expectation_z

_PAULI_CODE = {"RX": 0, "RY": 1, "RZ": 2}

# Four-term rule for controlled rotations (generator spectrum {0, ±1/2}).
_SHIFT_A = np.pi / 2
_SHIFT_B = 3 * np.pi / 2
_COEF_A = (np.sqrt(2) + 1) / (4 * np.sqrt(2))
_COEF_B = (np.sqrt(2) - 1) / (4 * np.sqrt(2))


class NonRotationParameterError(TypeError):
    """A symbolic angle sits on a gate that is not a Pauli rotation."""


def squared_loss(predictions, labels) -> float:
    """Mean of ``(prediction - label)**2``."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("squared loss of an empty batch")
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    return float(np.mean((p - y) ** 2))


def _batch_amps(circuit: Circuit, states: StateVector) -> np.ndarray:
    if states.n_qubits != circuit.n_qubits:
        raise ValueError(f"circuit has {circuit.n_qubits} qubits, input has {states.n_qubits}")
    return _as_2d(states.amplitudes, states.n_qubits)


def _check_rotations(circuit: Circuit, index: np.ndarray) -> None:
    for k in np.flatnonzero(index >= 0):
        if circuit.gates[k].kind not in ROTATIONS:
            raise NonRotationParameterError(f"gate {k} ({circuit.gates[k].kind}) carries a parameter")


def _readout(circuit: Circuit, amps: np.ndarray) -> np.ndarray:
    return expectation_z(StateVector(circuit.n_qubits, amps), circuit.readout)


def _objective(f: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Objective value and its derivative with respect to each sample's ``<Z>``."""
    if labels is None:
        return float(np.mean(f)), np.full(f.shape, 1.0 / f.size)
    y = np.asarray(labels, dtype=float).ravel()
    if y.shape != f.shape:
        raise ValueError(f"{f.size} samples but {y.size} labels")
    return squared_loss(f, y), 2.0 * (f - y) / f.size


def value_and_grad_adjoint(
    circuit: Circuit, params: ParamTable, states: StateVector, labels=None
) -> tuple[float, np.ndarray]:
    """Objective and gradient from one forward and one reverse sweep."""
    index, scale = circuit.slot_map(params)
    _check_rotations(circuit, index)
    angles = circuit.angles(params)
    n = circuit.n_qubits
    psi = evolve(circuit, angles, _batch_amps(circuit, states))
    f = _readout(circuit, psi)
    value, weights = _objective(f, labels)

    grad = np.zeros(len(params))
    if not len(params):
        return value, grad
    lam = psi.copy()
    lam.reshape(-1, 2, 2**circuit.readout, psi.shape[1])[:, 1] *= -1
    lam *= weights[None, :]
    for k in range(len(circuit.gates) - 1, -1, -1):
        gate = circuit.gates[k]
        if index[k] >= 0:
            inner = _kernels.pauli_inner(lam, psi, _PAULI_CODE[gate.kind], gate.targets[0], _mask(gate.controls))
            grad[index[k]] += scale[k] * inner.imag
        undo = -angles[k] if angles[k] is not None else None
        apply_gate_inplace(psi, n, gate, undo)
        apply_gate_inplace(lam, n, gate, undo)
    return value, grad


def gradient_adjoint(circuit: Circuit, params: ParamTable, states: StateVector, labels=None) -> np.ndarray:
    return value_and_grad_adjoint(circuit, params, states, labels)[1]


def gradient_parameter_shift(
    circuit: Circuit, params: ParamTable, states: StateVector, labels=None, fused: bool = True
) -> np.ndarray:
    """Shift-rule gradient, one shifted pair (or two for controlled gates) per gate occurrence.

    Occurrences that share a slot add up; a negative ``ParamRef.scale``
    flips the sign of that occurrence's contribution.
    """
    index, scale = circuit.slot_map(params)
    _check_rotations(circuit, index)
    angles = circuit.angles(params)
    amps = _batch_amps(circuit, states)
    f = _readout(circuit, evolve(circuit, angles, amps, fused))
    _, weights = _objective(f, labels)

    def shifted(k: int, delta: float) -> np.ndarray:
        a = list(angles)
        a[k] = angles[k] + delta
        return _readout(circuit, evolve(circuit, a, amps, fused))

    grad = np.zeros(len(params))
    for k in np.flatnonzero(index >= 0):
        if circuit.gates[k].controls:
            df = _COEF_A * (shifted(k, _SHIFT_A) - shifted(k, -_SHIFT_A)) - _COEF_B * (
                shifted(k, _SHIFT_B) - shifted(k, -_SHIFT_B)
            )
        else:
            df = 0.5 * (shifted(k, np.pi / 2) - shifted(k, -np.pi / 2))
        grad[index[k]] += scale[k] * float(np.dot(weights, df))
    return grad


def objective(circuit: Circuit, params: ParamTable, states: StateVector, labels=None, fused: bool = True) -> float:
    f = _readout(circuit, evolve(circuit, circuit.angles(params), _batch_amps(circuit, states), fused))
    return _objective(f, labels)[0]


def gradient_finite_diff(
    circuit: Circuit, params: ParamTable, states: StateVector, labels=None, h: float = 1e-4
) -> np.ndarray:
    """Central differences on each slot, using the unfused gate-by-gate path."""
    grad = np.zeros(len(params))
    for p in range(len(params)):
        up = params.values.copy()
        up[p] += h
        down = params.values.copy()
        down[p] -= h
        f_up = objective(circuit, params.with_values(up), states, labels, fused=False)
        f_down = objective(circuit, params.with_values(down), states, labels, fused=False)
        grad[p] = (f_up - f_down) / (2 * h)
    return grad


GRADIENTS = {
    "adjoint": gradient_adjoint,
    "parameter-shift": gradient_parameter_shift,
    "finite-diff": gradient_finite_diff,
}
