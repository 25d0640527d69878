"""Amplitude encoding of node features and edge flags into an input state."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .statevector import DTYPE, StateVector, tensor_product


class UnencodableInputError(ValueError):
    """Vector cannot be amplitude encoded (all zeros, or not finite)."""


Pair = tuple[int, int]


def register_size(dim: int) -> int:
    """Qubits needed to hold a ``dim``-long vector after zero padding."""
    if dim < 2:
        raise ValueError(f"feature vectors need at least 2 entries, got {dim}")
    return math.ceil(math.log2(dim))


def canonical_pair(u: int, v: int) -> Pair:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class EncodedRegisterPlan:
    """Qubit layout: node registers first, in node order, then edge qubits."""

    node_registers: tuple[range, ...]
    edge_qubits: tuple[tuple[Pair, int], ...] = ()

    def __post_init__(self):
        used = [q for r in self.node_registers for q in r] + [q for _, q in self.edge_qubits]
        if sorted(used) != list(range(len(used))):
            raise ValueError("registers and edge qubits must tile 0..total_qubits-1 exactly")

    @classmethod
    def build(cls, n_nodes: int, qubits_per_node: int, pairs: Sequence[Pair] = ()) -> EncodedRegisterPlan:
        regs = tuple(range(i * qubits_per_node, (i + 1) * qubits_per_node) for i in range(n_nodes))
        base = n_nodes * qubits_per_node
        edges = tuple((canonical_pair(*p), base + j) for j, p in enumerate(pairs))
        return cls(regs, edges)

    @property
    def total_qubits(self) -> int:
        return sum(len(r) for r in self.node_registers) + len(self.edge_qubits)

    def edge_qubit(self, u: int, v: int) -> int:
        pair = canonical_pair(u, v)
        for p, q in self.edge_qubits:
            if p == pair:
                return q
        raise KeyError(f"pair {pair} not in plan")


def amplitude_encode(x: Sequence[float], slack: float | None = None) -> StateVector:
    """Normalize ``x`` to unit length and zero pad to a power of two.

    ``slack`` appends one extra coordinate before normalizing, which keeps
    the vector's overall scale recoverable from the amplitudes.
    """
    x = np.asarray(x, dtype=float).ravel()
    if slack is not None:
        x = np.append(x, slack)
    if not np.all(np.isfinite(x)):
        raise UnencodableInputError("vector has non-finite entries")
    norm = np.linalg.norm(x)
    if norm == 0:
        raise UnencodableInputError("cannot amplitude encode the zero vector")
    n = register_size(len(x)) if len(x) > 1 else 1
    amps = np.zeros(2**n, dtype=DTYPE)
    amps[: len(x)] = x / norm
    return StateVector(n, amps)


def encode_batch(features: np.ndarray) -> np.ndarray:
    """Vectorized amplitude encoding of ``(..., dim)`` real rows."""
    features = np.asarray(features, dtype=float)
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise UnencodableInputError("cannot amplitude encode the zero vector")
    n = register_size(features.shape[-1])
    out = np.zeros(features.shape[:-1] + (2**n,), dtype=DTYPE)
    out[..., : features.shape[-1]] = features / norms
    return out


def encode_graph_input(
    features: Sequence[Sequence[float]] | np.ndarray,
    plan: EncodedRegisterPlan,
    edges: Sequence[Pair] = (),
) -> StateVector:
    """Product state of encoded node registers and edge flags.

    ``features`` is ``(n_nodes, dim)`` for one graph or ``(batch, n_nodes,
    dim)`` for a batch sharing the same edge set.  Each edge qubit is ``|1>``
    exactly when its pair is in ``edges``.
    """
    feats = np.asarray(features, dtype=float)
    if feats.ndim not in (2, 3):
        raise ValueError(f"features must be 2-D or 3-D, got shape {feats.shape}")
    if feats.shape[-2] != len(plan.node_registers):
        raise ValueError(f"plan has {len(plan.node_registers)} nodes, features have {feats.shape[-2]}")
    edge_set = {canonical_pair(*e) for e in edges}
    known = {p for p, _ in plan.edge_qubits}
    if plan.edge_qubits and not edge_set <= known:
        raise ValueError(f"edges {sorted(edge_set - known)} not in the plan's pair universe")

    regs = encode_batch(feats)
    batch = feats.shape[:-2]
    state = None
    for i, reg in enumerate(plan.node_registers):
        amps = np.moveaxis(regs[..., i, :], -1, 0)
        if amps.shape[0] != 2 ** len(reg):
            raise ValueError(f"node {i}: {amps.shape[0]} amplitudes for a {len(reg)}-qubit register")
        node = StateVector(len(reg), amps)
        state = node if state is None else tensor_product(node, state)
    for pair, _ in plan.edge_qubits:
        bit = StateVector.basis(1, int(pair in edge_set), batch)
        state = tensor_product(bit, state)
    return state
