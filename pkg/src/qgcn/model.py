"""QGCN circuit construction, forward pass and readout."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoding import EncodedRegisterPlan, Pair, canonical_pair, encode_graph_input, register_size
from .gates import CONV_PARAMS, POOL_PARAMS, conv_unit, pool_unit, slot_refs
from .statevector import (
    GateInstance,
    ParamRef,
    StateVector,
    apply_dense,
    apply_gate_inplace,
    block_matrix,
    expectation_z,
)

MODES = ("compiled", "edge-register")


class UnboundSlotError(LookupError):
    """A gate references a parameter slot the table does not bind."""


@dataclass(frozen=True)
class Graph:
    node_features: np.ndarray
    edges: tuple[Pair, ...]
    node_ids: tuple[int, ...] = ()

    def __post_init__(self):
        feats = np.asarray(self.node_features, dtype=float)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError(f"node_features must be (n_nodes, dim), got {feats.shape}")
        n = feats.shape[0]
        canon = []
        for u, v in self.edges:
            if u == v or not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"bad edge ({u}, {v}) for {n} nodes")
            canon.append(canonical_pair(u, v))
        if len(set(canon)) != len(canon):
            raise ValueError(f"duplicate edges in {self.edges}")
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        object.__setattr__(self, "node_ids", tuple(self.node_ids) or tuple(range(n)))

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def degree(self, node: int) -> int:
        return sum(node in e for e in self.edges)

    def root(self) -> int:
        """Highest-degree node, lowest index on ties."""
        return max(range(self.n_nodes), key=lambda i: (self.degree(i), -i))


@dataclass(frozen=True)
class ModelSpec:
    n_conv_layers: int = 1
    n_pool_layers: int = 1
    mode: str = "compiled"
    readout: tuple[int, int] | None = None  # (node index, qubit offset); None = root, offset 0

    def __post_init__(self):
        if self.n_conv_layers < 1:
            raise ValueError("need at least one convolution layer")
        if self.n_pool_layers < 0:
            raise ValueError("pool layer count cannot be negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def n_params(self) -> int:
        return CONV_PARAMS * self.n_conv_layers + POOL_PARAMS * self.n_pool_layers

    def to_dict(self) -> dict:
        return {
            "n_conv_layers": self.n_conv_layers,
            "n_pool_layers": self.n_pool_layers,
            "mode": self.mode,
            "readout": list(self.readout) if self.readout is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        readout = d.get("readout")
        return cls(
            int(d["n_conv_layers"]),
            int(d["n_pool_layers"]),
            d.get("mode", "compiled"),
            tuple(readout) if readout is not None else None,
        )


@dataclass
class ParamTable:
    values: np.ndarray
    bindings: dict[str, int]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if any(not 0 <= i < len(self.values) for i in self.bindings.values()):
            raise ValueError("binding points outside the value vector")

    def __len__(self) -> int:
        return len(self.values)

    def with_values(self, values) -> ParamTable:
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ValueError(f"expected {self.values.shape} values, got {values.shape}")
        return ParamTable(values.copy(), self.bindings)


@dataclass
class Circuit:
    n_qubits: int
    gates: list[GateInstance]
    readout: int
    pooled: tuple[int, ...] = ()
    extras: dict = field(default_factory=dict)

    def slot_map(self, params: ParamTable) -> tuple[np.ndarray, np.ndarray]:
        """Per-gate value index (-1 when not symbolic) and angle scale."""
        index = np.full(len(self.gates), -1, dtype=int)
        scale = np.zeros(len(self.gates))
        for k, g in enumerate(self.gates):
            if isinstance(g.angle, ParamRef):
                try:
                    index[k] = params.bindings[g.angle.name]
                except KeyError:
                    raise UnboundSlotError(f"gate {k} ({g.kind}) uses unbound slot {g.angle.name!r}") from None
                scale[k] = g.angle.scale
        return index, scale

    def angles(self, params: ParamTable) -> list[float | None]:
        index, scale = self.slot_map(params)
        out: list[float | None] = []
        for g, i, s in zip(self.gates, index, scale):
            if i >= 0:
                out.append(float(params.values[i] * s))
            elif g.angle is not None:
                out.append(float(g.angle))
            else:
                out.append(None)
        return out


def _fold(live: list[int]) -> tuple[list[tuple[int, int]], list[int]]:
    keep = (len(live) + 1) // 2
    return list(zip(live[keep:], live[: len(live) - keep])), live[:keep]


def _root_folds(root_reg: range, n_extra: int) -> tuple[list[list[tuple[int, int]]], list[tuple[int, int]]]:
    """Root-internal pool pairs: one halving per extra layer, then the rest of the way to offset 0.

    Returns the per-extra-layer pairs and the tail that finishes the last layer.
    """
    live = list(root_reg)
    layers = []
    for _ in range(n_extra):
        if len(live) < 2:
            raise ValueError("too many pool layers: nothing left to pool")
        pairs, live = _fold(live)
        layers.append(pairs)
    tail = []
    while len(live) > 1:
        pairs, live = _fold(live)
        tail += pairs
    return layers, tail


def build_circuit(graph: Graph, spec: ModelSpec) -> tuple[Circuit, ParamTable, EncodedRegisterPlan]:
    """Lay out conv and pool layers over ``graph`` with per-layer weight sharing."""
    n = graph.n_nodes
    width = register_size(graph.node_features.shape[1])
    if spec.n_pool_layers and n == 1:
        raise ValueError("pooling needs at least two nodes")
    if spec.mode == "edge-register":
        pairs = list(itertools.combinations(range(n), 2))
        plan = EncodedRegisterPlan.build(n, width, pairs)
    else:
        pairs = list(graph.edges)
        plan = EncodedRegisterPlan.build(n, width)
    regs = plan.node_registers

    bindings: dict[str, int] = {}
    conv_refs = []
    for layer in range(spec.n_conv_layers):
        refs = slot_refs(f"conv{layer}", CONV_PARAMS)
        conv_refs.append(refs)
        for r in refs:
            bindings[r.name] = len(bindings)
    pool_refs = []
    for layer in range(spec.n_pool_layers):
        refs = slot_refs(f"pool{layer}", POOL_PARAMS)
        pool_refs.append(refs)
        for r in refs:
            bindings[r.name] = len(bindings)

    gates: list[GateInstance] = []
    for refs in conv_refs:
        for u, v in pairs:
            controls = (plan.edge_qubit(u, v),) if spec.mode == "edge-register" else ()
            for k in range(width):
                gates += conv_unit(refs, regs[u][k], regs[v][k], controls)

    root = graph.root()
    pooled: list[int] = []
    if spec.n_pool_layers:
        others = [w for w in range(n) if w != root]
        first = [(regs[w][k], regs[root][k]) for w in others for k in range(width)]
        extra, tail = _root_folds(regs[root], spec.n_pool_layers - 1)
        schedule = [first] + extra
        schedule[-1] = schedule[-1] + tail
        for refs, layer_pairs in zip(pool_refs, schedule):
            for src, tgt in layer_pairs:
                gates += pool_unit(refs, src, tgt)
                pooled.append(src)

    node, offset = spec.readout if spec.readout is not None else (root, 0)
    if not (0 <= node < n and 0 <= offset < width):
        raise ValueError(f"readout {(node, offset)} outside the registers")
    readout = regs[node][offset]
    if readout in pooled:
        raise ValueError(f"readout qubit {readout} is consumed by pooling")

    circuit = Circuit(plan.total_qubits, gates, readout, tuple(pooled), {"root": root, "pairs": pairs})
    params = ParamTable(np.zeros(len(bindings)), bindings)
    return circuit, params, plan


def fuse(gates: Sequence[GateInstance], angles: Sequence[float | None], max_wires: int = 3):
    """Greedily merge consecutive gates into dense blocks on at most ``max_wires`` qubits.

    Yields ``(wires, matrix)`` pairs in application order.
    """
    run_gates: list[GateInstance] = []
    run_angles: list[float | None] = []
    wires: set[int] = set()
    for g, a in zip(gates, angles):
        merged = wires | set(g.wires)
        if run_gates and len(merged) > max_wires:
            w = sorted(wires)
            yield w, block_matrix(run_gates, run_angles, w)
            run_gates, run_angles, merged = [], [], set(g.wires)
        run_gates.append(g)
        run_angles.append(a)
        wires = merged
    if run_gates:
        w = sorted(wires)
        yield w, block_matrix(run_gates, run_angles, w)


def evolve(circuit: Circuit, angles: Sequence[float | None], amplitudes: np.ndarray, fused: bool = True) -> np.ndarray:
    """Evolve a copy of ``amplitudes`` (any batch shape) with explicit per-gate angles.

    ``fused=False`` applies gate by gate; the fused path contracts small dense
    blocks and is the fast route for large batches.
    """
    amps = np.array(amplitudes, dtype=complex, order="C", copy=True)
    if not fused:
        for gate, angle in zip(circuit.gates, angles):
            apply_gate_inplace(amps, circuit.n_qubits, gate, angle)
        return amps
    for wires, matrix in fuse(circuit.gates, angles):
        amps = apply_dense(amps, circuit.n_qubits, matrix, wires)
    return amps


def run(circuit: Circuit, params: ParamTable, amplitudes: np.ndarray, fused: bool = True) -> np.ndarray:
    return evolve(circuit, circuit.angles(params), amplitudes, fused)


def forward(circuit: Circuit, params: ParamTable, input: StateVector, fused: bool = True) -> np.ndarray | float:
    """Exact readout expectation ``<Z>`` for one state or a batch of states."""
    if input.n_qubits != circuit.n_qubits:
        raise ValueError(f"circuit has {circuit.n_qubits} qubits, input has {input.n_qubits}")
    out = StateVector(circuit.n_qubits, run(circuit, params, input.amplitudes, fused))
    return expectation_z(out, circuit.readout)


def classify(expectation):
    """Sign readout: ``<Z> >= 0`` is the positive class."""
    e = np.asarray(expectation)
    labels = np.where(e >= 0, 1, -1)
    return int(labels) if labels.ndim == 0 else labels


def encode_inputs(
    features: np.ndarray, edges: Sequence[Pair], plan: EncodedRegisterPlan
) -> StateVector:
    """Batch-encode node features ``(batch, n_nodes, dim)`` for a shared topology."""
    return encode_graph_input(features, plan, edges if plan.edge_qubits else ())


@dataclass
class QGCN:
    """A built circuit plus the layout needed to encode samples for it."""

    spec: ModelSpec
    circuit: Circuit
    template: ParamTable
    plan: EncodedRegisterPlan
    edges: tuple[Pair, ...]

    @classmethod
    def for_graph(cls, graph: Graph, spec: ModelSpec) -> QGCN:
        circuit, params, plan = build_circuit(graph, spec)
        return cls(spec, circuit, params, plan, graph.edges)

    @property
    def n_params(self) -> int:
        return len(self.template)

    def encode(self, features: np.ndarray) -> StateVector:
        """``(batch, n_nodes, dim)`` features to a batched input state."""
        return encode_inputs(features, self.edges, self.plan)

    def expectations(self, values, states: StateVector) -> np.ndarray:
        return np.atleast_1d(forward(self.circuit, self.template.with_values(values), states))
