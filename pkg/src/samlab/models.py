"""Small fully-connected models over the flat-parameter engine.

Activations: GeLU (tanh form, constants pinned below) and ReLU. GeLU is
smooth, so spectral and SDE probes default to it; ReLU is not three times
differentiable and is meant for optimizer-level runs only.

Loss heads: softmax cross-entropy over integer labels, and mean squared
error ``sum((pred - target)^2) / (2 n)`` over vector targets (integer labels
are one-hot encoded for the MSE head).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eng
from .oracle import CallCounter, LossOracle, ParamVector
from .rng import STREAM_INIT, stream

# tanh-form GeLU constants
GELU_C0 = 0.7978845608028654   # sqrt(2 / pi)
GELU_C1 = 0.044715

ACTIVATIONS = ("gelu", "relu")
HEADS = ("ce", "mse")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input, hidden..., output), activation, and loss head."""

    layers: tuple
    activation: str = "gelu"
    head: str = "ce"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(w) for w in self.layers))
        if len(self.layers) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.layers):
            raise ValueError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown loss head {self.head!r}")

    @property
    def layout(self) -> tuple:
        entries = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            entries.append((f"w{i}", (fan_in, fan_out), offset))
            offset += fan_in * fan_out
            entries.append((f"b{i}", (fan_out,), offset))
            offset += fan_out
        return tuple(entries)

    @property
    def dim(self) -> int:
        return sum(int(np.prod(shape)) for _, shape, _ in self.layout)


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases, drawn from the init stream."""
    rng = stream(seed, STREAM_INIT)
    values = np.zeros(spec.dim)
    for name, shape, offset in spec.layout:
        n = int(np.prod(shape))
        if name.startswith("w"):
            fan_in, fan_out = shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            values[offset:offset + n] = rng.uniform(-a, a, size=n)
    return ParamVector(values, spec.layout)


def gelu(x: eng.Tensor) -> eng.Tensor:
    inner = eng.scale(eng.add(x, eng.scale(eng.pow_int(x, 3), GELU_C1)), GELU_C0)
    return eng.scale(eng.mul(x, eng.add(eng.tanh(inner), 1.0)), 0.5)


def _forward_logits(tape: eng.Tape, x: eng.Tensor, spec: MlpSpec,
                    inputs: np.ndarray) -> eng.Tensor:
    h = tape.const(inputs)
    n_layers = len(spec.layers) - 1
    for i, (name_w, shape, offset) in enumerate(spec.layout[::2]):
        fan_in, fan_out = shape
        w = eng.reshape(eng.slice1d(x, offset, offset + fan_in * fan_out), shape)
        b_off = offset + fan_in * fan_out
        b = eng.slice1d(x, b_off, b_off + fan_out)
        h = eng.add(eng.matmul(h, w), b)
        if i < n_layers - 1:
            h = gelu(h) if spec.activation == "gelu" else eng.relu(h)
    return h


def _ce_loss(tape: eng.Tape, logits: eng.Tensor, labels: np.ndarray) -> eng.Tensor:
    # Stable log-sum-exp with a constant row shift taken from the primal.
    m = logits.value.max(axis=1, keepdims=True)
    shifted = eng.sub(logits, tape.const(m))
    lse = eng.add(eng.log(eng.sum_axis(eng.exp(shifted), 1)), tape.const(m[:, 0]))
    return eng.mean_all(eng.sub(lse, eng.pick_rows(logits, labels)))


def _mse_loss(tape: eng.Tape, logits: eng.Tensor, targets: np.ndarray) -> eng.Tensor:
    diff = eng.sub(logits, tape.const(targets))
    return eng.scale(eng.sum_all(eng.mul(diff, diff)), 0.5 / targets.shape[0])


def mlp_builder(spec: MlpSpec, inputs: np.ndarray, labels: np.ndarray):
    """Loss-graph builder over a data batch, for use in a LossOracle."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[1] != spec.layers[0]:
        raise ValueError("input width does not match the model spec")
    if spec.head == "ce":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= spec.layers[-1]:
            raise ValueError("labels out of range for the output layer")

        def build(tape, x):
            return _ce_loss(tape, _forward_logits(tape, x, spec, inputs), labels)
    else:
        targets = np.asarray(labels, dtype=np.float64)
        if targets.ndim == 1:
            targets = np.eye(spec.layers[-1])[targets.astype(np.int64)]

        def build(tape, x):
            return _mse_loss(tape, _forward_logits(tape, x, spec, inputs), targets)

    return build


def mlp_oracle(spec: MlpSpec, inputs: np.ndarray, labels: np.ndarray,
               mode: str = "exact", counter: CallCounter | None = None) -> LossOracle:
    return LossOracle(mlp_builder(spec, inputs, labels), spec.dim,
                      layout=spec.layout, mode=mode, counter=counter)


def predict_logits(spec: MlpSpec, x: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Plain forward pass for metrics; no tape kept."""
    tape = eng.Tape(degree=0)
    leaf = tape.leaf(x.values)
    return _forward_logits(tape, leaf, spec, np.asarray(inputs, dtype=np.float64)).value


def accuracy(spec: MlpSpec, x: ParamVector, inputs: np.ndarray,
             labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        return float("nan")
    logits = predict_logits(spec, x, inputs)
    return float(np.mean(np.argmax(logits, axis=1) == labels))
