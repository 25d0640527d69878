"""Statevector simulation and a quantum graph convolutional network (QGCN)."""

from .model import QGCN, Graph, ModelSpec, ParamTable, build_circuit, classify, forward
from .statevector import GateInstance, ParamRef, StateVector, apply_gate, expectation_z, tensor_product
from .training import TrainConfig, train

__all__ = [
    "QGCN",
    "Graph",
    "GateInstance",
    "ModelSpec",
    "ParamRef",
    "ParamTable",
    "StateVector",
    "TrainConfig",
    "apply_gate",
    "build_circuit",
    "classify",
    "expectation_z",
    "forward",
    "tensor_product",
    "train",
]
