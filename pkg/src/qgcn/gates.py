"""Parameterized composite blocks built from RY, RZ and CNOT.

Every block returns a plain list of :class:`GateInstance` in application
order.  Angles may be literal radians or :class:`ParamRef` slots, which is
how weight sharing is expressed by the model builder.
"""

from __future__ import annotations

from typing import Sequence

from .statevector import Angle, GateInstance, ParamRef, cnot, rotation

CONV_PARAMS = 15
POOL_PARAMS = 6


def _check_disjoint(*qubits: int, controls: Sequence[int] = ()) -> None:
    wires = (*qubits, *controls)
    if len(set(wires)) != len(wires):
        raise ValueError(f"qubit index collision among {wires}")


def single_qubit_universal(
    alpha: Angle, beta: Angle, gamma: Angle, qubit: int, controls: Sequence[int] = ()
) -> list[GateInstance]:
    """``Rz(alpha) Ry(beta) Rz(gamma)``; the rightmost factor is applied first."""
    return [
        rotation("RZ", qubit, gamma, controls),
        rotation("RY", qubit, beta, controls),
        rotation("RZ", qubit, alpha, controls),
    ]


def inverse(gates: Sequence[GateInstance]) -> list[GateInstance]:
    """Adjoint of a gate sequence: reversed order, rotation angles negated."""
    out = []
    for g in reversed(gates):
        if g.angle is None:
            out.append(g)
        else:
            out.append(GateInstance(g.kind, g.targets, g.controls, -g.angle))
    return out


def conv_unit(
    params: Sequence[Angle], q_a: int, q_b: int, controls: Sequence[int] = ()
) -> list[GateInstance]:
    """Two-qubit convolution block: 3 CNOTs and 15 single-qubit rotations.

    ``params`` are laid out as a (0-2) on ``q_a``, b (3-5) on ``q_b``, the
    entangling core (6-8), then c (9-11) on ``q_a`` and d (12-14) on ``q_b``.
    Passing ``controls`` makes every emitted gate conditional on them.
    """
    if len(params) != CONV_PARAMS:
        raise ValueError(f"conv_unit takes {CONV_PARAMS} angles, got {len(params)}")
    _check_disjoint(q_a, q_b, controls=controls)
    t = list(params)
    ctl = tuple(controls)
    return [
        *single_qubit_universal(t[0], t[1], t[2], q_a, ctl),
        *single_qubit_universal(t[3], t[4], t[5], q_b, ctl),
        cnot(q_b, q_a, ctl),
        rotation("RZ", q_a, t[6], ctl),
        rotation("RY", q_b, t[7], ctl),
        cnot(q_a, q_b, ctl),
        rotation("RY", q_b, t[8], ctl),
        cnot(q_b, q_a, ctl),
        *single_qubit_universal(t[9], t[10], t[11], q_a, ctl),
        *single_qubit_universal(t[12], t[13], t[14], q_b, ctl),
    ]


def pool_unit(params: Sequence[Angle], q_src: int, q_tgt: int) -> list[GateInstance]:
    """Deferred-measurement pooling from ``q_src`` into ``q_tgt``.

    Equivalent to rotating ``q_src``, measuring it, and applying ``T^† X T``
    to ``q_tgt`` on outcome 1 (``T`` is the target rotation block).  The
    source qubit must not be read out afterwards.
    """
    if len(params) != POOL_PARAMS:
        raise ValueError(f"pool_unit takes {POOL_PARAMS} angles, got {len(params)}")
    _check_disjoint(q_src, q_tgt)
    t = list(params)
    src_block = [rotation("RZ", q_src, t[0]), rotation("RY", q_src, t[1]), rotation("RZ", q_src, t[2])]
    tgt_block = [rotation("RZ", q_tgt, t[3]), rotation("RY", q_tgt, t[4]), rotation("RZ", q_tgt, t[5])]
    return [*src_block, *tgt_block, cnot(q_src, q_tgt), *inverse(tgt_block)]


def slot_refs(prefix: str, count: int) -> list[ParamRef]:
    return [ParamRef(f"{prefix}[{j}]") for j in range(count)]
