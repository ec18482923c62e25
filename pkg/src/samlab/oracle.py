"""Loss oracles: scalar losses with gradient, HVP, and third-order queries.

A :class:`LossOracle` bundles a loss graph builder with a derivative mode.
Exact mode differentiates the recorded tape (tangent-carrying forward pass,
then a backward sweep). Finite-difference mode computes second- and
third-order quantities by central differences of exact gradients with step
``eps0 * (1 + ||x||)``. Repeated queries at the same point are bit-identical
in both modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine as eng
from .errors import DimensionTooLarge, NonFiniteLoss, ZeroDirection

# Dense third-order output is restricted to small parameter counts; larger
# problems must use the directional form.
DENSE_THIRD_LIMIT = 512

EPS0_FIRST = 1e-5   # FD step scale for first differences (HVP mode)
EPS0_THIRD = 1e-4   # FD step scale for the third-order map


@dataclass(frozen=True)
class ParamVector:
    """Flat, ordered view of all parameters.

    ``layout`` lists (name, shape, offset) triples partitioning [0, d).
    """

    values: np.ndarray
    layout: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64).ravel())
        if self.layout:
            off = 0
            for name, shape, offset in self.layout:
                if offset != off:
                    raise ValueError(f"layout gap or overlap at {name}")
                off += int(np.prod(shape))
            if off != self.values.size:
                raise ValueError("layout does not cover the value vector")

    @property
    def dim(self) -> int:
        return self.values.size

    def like(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def unflatten(self) -> dict:
        out = {}
        for name, shape, offset in self.layout:
            n = int(np.prod(shape))
            out[name] = self.values[offset:offset + n].reshape(shape)
        return out

    @staticmethod
    def flatten(named: dict, layout: tuple) -> "ParamVector":
        parts = [np.asarray(named[name]).ravel() for name, _, _ in layout]
        return ParamVector(np.concatenate(parts), layout)


class CallCounter:
    """Mutable counters shared across the oracles of one experiment run."""

    def __init__(self):
        self.hvp = 0
        self.third = 0


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteLoss("non-finite value in loss or derivative")


class LossOracle:
    """Scalar loss over a flat parameter vector, with derivative queries.

    ``builder(tape, x_node)`` must construct the loss graph and return the
    scalar output node. The builder closes over its data batch; the oracle is
    a pure function of the query point.
    """

    def __init__(self, builder: Callable, dim: int, layout: tuple = (),
                 mode: str = "exact", eps0: float = EPS0_FIRST,
                 eps0_third: float = EPS0_THIRD, counter: CallCounter | None = None):
        if mode not in ("exact", "fd"):
            raise ValueError(f"unknown derivative mode {mode!r}")
        self.builder = builder
        self.dim = dim
        self.layout = layout
        self.mode = mode
        self.eps0 = eps0
        self.eps0_third = eps0_third
        self.counter = counter

    # -- helpers ------------------------------------------------------------

    def _as_array(self, x) -> np.ndarray:
        v = x.values if isinstance(x, ParamVector) else np.asarray(x, dtype=np.float64)
        if v.size != self.dim:
            raise ValueError(f"parameter vector has size {v.size}, expected {self.dim}")
        return v

    def _run(self, x: np.ndarray, degree: int, tangent=None):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tape = eng.Tape(degree=degree)
            leaf = tape.leaf(x, tangent=tangent)
            out = self.builder(tape, leaf)
            return tape, leaf, out

    # -- queries ------------------------------------------------------------

    def loss(self, x) -> float:
        x = self._as_array(x)
        _, _, out = self._run(x, 0)
        _check_finite(out.value)
        return float(out.value)

    def grad(self, x) -> np.ndarray:
        x = self._as_array(x)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tape, leaf, out = self._run(x, 0)
            g = eng.backward(out, [leaf])[0][0]
        _check_finite(out.value, g)
        return g

    def hvp(self, x, v) -> np.ndarray:
        x = self._as_array(x)
        v = self._as_array(v)
        if self.counter is not None:
            self.counter.hvp += 1
        if self.mode == "fd":
            nv = np.linalg.norm(v)
            if nv == 0.0:
                raise ZeroDirection("FD hvp needs a nonzero direction")
            h = self.eps0 * (1.0 + np.linalg.norm(x))
            vbar = v / nv
            out = (self.grad(x + h * vbar) - self.grad(x - h * vbar)) / (2.0 * h) * nv
            _check_finite(out)
            return out
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tape, leaf, out = self._run(x, 1, tangent=v)
            g = eng.backward(out, [leaf])[0]
        _check_finite(out.value, g[1])
        return g[1]

    def third_directional(self, x, u) -> np.ndarray:
        """Full vector w with w_i = d/dx_i (u^T H(x) u), dense mode (d <= 512)."""
        x = self._as_array(x)
        u = self._as_array(u)
        if self.dim > DENSE_THIRD_LIMIT:
            raise DimensionTooLarge(
                f"dense third-order output needs d <= {DENSE_THIRD_LIMIT}, got {self.dim}")
        if np.linalg.norm(u) == 0.0:
            raise ZeroDirection("third_directional needs a nonzero direction")
        if self.counter is not None:
            self.counter.third += 1
        if self.mode == "fd":
            return self._third_fd_dense(x, u)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tape, leaf, out = self._run(x, 2, tangent=u)
            g = eng.backward(out, [leaf])[0]
        w = 2.0 * g[2]
        _check_finite(out.value, w)
        return w

    def third_directional_along(self, x, u, w) -> float:
        """w^T third(u, u) without materializing the dense vector (any d)."""
        x = self._as_array(x)
        u = self._as_array(u)
        w = self._as_array(w)
        if np.linalg.norm(u) == 0.0:
            raise ZeroDirection("third_directional_along needs a nonzero direction")
        if self.counter is not None:
            self.counter.third += 1
        if self.mode == "fd":
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0
            h = self.eps0_third * (1.0 + np.linalg.norm(x))
            wbar = w / nw
            s_plus = float(u @ self.hvp(x + h * wbar, u))
            s_minus = float(u @ self.hvp(x - h * wbar, u))
            out = (s_plus - s_minus) / (2.0 * h) * nw
            _check_finite(np.asarray(out))
            return out
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tape, leaf, out = self._run(x, 2, tangent=u)
            g = eng.backward(out, [leaf])[0]
        vec = 2.0 * g[2]
        _check_finite(vec)
        return float(w @ vec)

    def _third_fd_dense(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        # Central difference of s(x) = u^T hvp(x, u) along every coordinate.
        h = self.eps0_third * (1.0 + np.linalg.norm(x))
        out = np.zeros(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            s_plus = float(u @ self.hvp(x + e, u))
            s_minus = float(u @ self.hvp(x - e, u))
            out[i] = (s_plus - s_minus) / (2.0 * h)
        _check_finite(out)
        return out


# ---------------------------------------------------------------------------
# module-level op surface over ParamVector
# ---------------------------------------------------------------------------

def loss(oracle: LossOracle, x: ParamVector) -> float:
    return oracle.loss(x)


def grad(oracle: LossOracle, x: ParamVector) -> ParamVector:
    return ParamVector(oracle.grad(x), oracle.layout)


def hvp(oracle: LossOracle, x: ParamVector, v: ParamVector) -> ParamVector:
    return ParamVector(oracle.hvp(x, v), oracle.layout)


def third_directional(oracle: LossOracle, x: ParamVector, u: ParamVector) -> ParamVector:
    return ParamVector(oracle.third_directional(x, u), oracle.layout)


# ---------------------------------------------------------------------------
# analytic oracles used by probes and tests
# ---------------------------------------------------------------------------

def quadratic_oracle(a: np.ndarray, b: np.ndarray | None = None,
                     mode: str = "exact", counter: CallCounter | None = None) -> LossOracle:
    """f(x) = 0.5 x^T A x + b^T x for a fixed symmetric matrix A."""
    a = np.asarray(a, dtype=np.float64)
    d = a.shape[0]
    b = np.zeros(d) if b is None else np.asarray(b, dtype=np.float64)

    def build(tape, x):
        ax = eng.matvec(tape.const(a), x)
        out = eng.scale(eng.dot(x, ax), 0.5)
        return eng.add(out, eng.dot(tape.const(b), x))

    return LossOracle(build, d, mode=mode, counter=counter)


def polynomial_oracle_1d(coeffs: list[float], mode: str = "exact",
                         counter: CallCounter | None = None) -> LossOracle:
    """f(x) = sum_p coeffs[p] * x^p for a single scalar parameter."""

    def build(tape, x):
        x0 = eng.slice1d(x, 0, 1)
        out = eng.scale(eng.sum_all(x0), 0.0)
        for p, c in enumerate(coeffs):
            if c == 0.0:
                continue
            if p == 0:
                out = eng.add(out, tape.const(np.asarray(float(c))))
            else:
                out = eng.add(out, eng.scale(eng.sum_all(eng.pow_int(x0, p)), float(c)))
        return out

    return LossOracle(build, 1, mode=mode, counter=counter)


def analytic_oracle(builder: Callable, dim: int, mode: str = "exact",
                    counter: CallCounter | None = None) -> LossOracle:
    """Oracle over a custom graph builder (tape, x_node) -> scalar node."""
    return LossOracle(builder, dim, mode=mode, counter=counter)
