"""Mini-batch training loop and metrics."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .gradients import gradient_finite_diff, gradient_parameter_shift, squared_loss, value_and_grad_adjoint
from .model import QGCN, classify
from .statevector import StateVector

log = logging.getLogger(__name__)

GRADIENT_MODES = ("adjoint", "parameter-shift", "finite-diff")
OPTIMIZERS = ("adam", "sgd")
DIVERGENCE_LOSS = 1e3


class DivergenceError(RuntimeError):
    """Training loss blew past the guard threshold."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 16
    learning_rate: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    gradient_mode: str = "adjoint"
    eval_every: int = 10
    workers: int = 1
    init_scale: float = 0.1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations cannot be negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.eval_every < 1 or self.workers < 1:
            raise ValueError("eval_every and workers must be at least 1")


@dataclass
class MetricsRecord:
    """One row of the training log.

    Row 0 holds the loss over the full training set at the initial
    parameters; later rows hold the loss of that step's mini-batch, taken
    before the update.  Accuracies are filled on evaluation rows only.
    """

    iteration: int
    train_loss: float
    train_accuracy: float | None
    test_accuracy: float | None
    wall_time: float

    def __post_init__(self):
        if self.train_loss < 0:
            raise ValueError("loss cannot be negative")
        for acc in (self.train_accuracy, self.test_accuracy):
            if acc is not None and not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return x - self.lr * grad


def _subset(states: StateVector, idx) -> StateVector:
    return StateVector(states.n_qubits, states.amplitudes[:, idx])


def _chunks(n: int, parts: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n), min(parts, n)) if len(c)]


class Evaluator:
    """Fans circuit evaluations out over a thread pool (the kernels release the GIL)."""

    def __init__(self, model: QGCN, workers: int = 1):
        self.model = model
        self.workers = workers
        self._pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def _map(self, fn, parts):
        if self._pool is None:
            return [fn(p) for p in parts]
        return list(self._pool.map(fn, parts))

    def expectations(self, values: np.ndarray, states: StateVector) -> np.ndarray:
        parts = _chunks(states.batch_shape[0], self.workers)
        outs = self._map(lambda idx: self.model.expectations(values, _subset(states, idx)), parts)
        return np.concatenate(outs)

    def loss_and_grad(self, values: np.ndarray, states: StateVector, labels: np.ndarray, mode: str):
        params = self.model.template.with_values(values)
        circuit = self.model.circuit
        batch = len(labels)

        def one(idx):
            sub, y = _subset(states, idx), labels[idx]
            if mode == "adjoint":
                return value_and_grad_adjoint(circuit, params, sub, y)
            f = self.model.expectations(values, sub)
            grad_fn = gradient_parameter_shift if mode == "parameter-shift" else gradient_finite_diff
            return squared_loss(f, y), grad_fn(circuit, params, sub, y)

        parts = _chunks(batch, self.workers)
        loss, grad = 0.0, np.zeros(len(values))
        for idx, (l_c, g_c) in zip(parts, self._map(one, parts)):
            w = len(idx) / batch
            loss += w * l_c
            grad += w * g_c
        return loss, grad


def accuracy(expectations: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(classify(expectations) == np.asarray(labels)))


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless index batches; reshuffled each epoch, no replacement within one."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[start : start + batch_size]


def init_params(n: int, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-config.init_scale, config.init_scale, n)


def train(
    model: QGCN,
    train_states: StateVector,
    train_labels,
    config: TrainConfig,
    test_states: StateVector | None = None,
    test_labels=None,
    initial=None,
):
    """Run ``config.iterations`` optimizer steps; returns final ParamTable and metrics.

    Everything random (initial angles, batch order) comes from one generator
    seeded with ``config.seed``.
    """
    y_train = np.asarray(train_labels, dtype=float)
    if len(y_train) == 0:
        raise ValueError("empty training set")
    if not np.all(np.isin(y_train, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    y_test = None if test_labels is None else np.asarray(test_labels, dtype=float)

    rng = np.random.default_rng(config.seed)
    values = init_params(model.n_params, config, rng) if initial is None else np.array(initial, dtype=float)
    opt = Adam(config.learning_rate) if config.optimizer == "adam" else SGD(config.learning_rate)
    ev = Evaluator(model, config.workers)
    start = time.perf_counter()
    records: list[MetricsRecord] = []

    def evaluate(it: int, batch_loss: float | None) -> MetricsRecord:
        f_train = ev.expectations(values, train_states)
        loss = squared_loss(f_train, y_train) if batch_loss is None else batch_loss
        test_acc = None
        if test_states is not None and y_test is not None and len(y_test):
            test_acc = accuracy(ev.expectations(values, test_states), y_test)
        return MetricsRecord(it, loss, accuracy(f_train, y_train), test_acc, time.perf_counter() - start)

    try:
        records.append(evaluate(0, None))
        stream = batches(len(y_train), min(config.batch_size, len(y_train)), rng)
        for it in range(1, config.iterations + 1):
            idx = next(stream)
            loss, grad = ev.loss_and_grad(values, _subset(train_states, idx), y_train[idx], config.gradient_mode)
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS or not np.all(np.isfinite(grad)):
                raise DivergenceError(f"iteration {it}: loss {loss!r} crossed the divergence guard")
            values = opt.step(values, grad)
            if it % config.eval_every == 0 or it == config.iterations:
                records.append(evaluate(it, loss))
                log.info("iter %d loss %.4f train_acc %.3f", it, loss, records[-1].train_accuracy)
            else:
                records.append(MetricsRecord(it, loss, None, None, time.perf_counter() - start))
    finally:
        ev.close()
    return model.template.with_values(values), records
