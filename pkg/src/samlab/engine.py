"""Reverse-mode differentiation on dense float64 tensors with Taylor jets.

Every value on the tape is a *jet*: a tuple of ``degree + 1`` numpy arrays
holding the coefficients of a truncated Taylor expansion in one scalar
parameter. Degree 0 is ordinary evaluation, degree 1 carries a tangent
(forward-over-reverse: the backward sweep then yields Hessian-vector
products), and degree 2 carries a second-order tangent whose backward sweep
yields third-order directional derivatives. The backward rules are written in
jet arithmetic over saved forward jets, so higher-order correctness needs no
extra derivative formulas per op.

Shapes are static per tape, reductions run in numpy's fixed index order, and
no randomness is involved, so repeated evaluation is bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_DEGREE = 2

Jet = tuple  # tuple[np.ndarray, ...], length degree + 1


# ---------------------------------------------------------------------------
# jet arithmetic
# ---------------------------------------------------------------------------

def jet_const(value, degree: int) -> Jet:
    v = np.asarray(value, dtype=np.float64)
    return (v,) + tuple(np.zeros_like(v) for _ in range(degree))


def jadd(a: Jet, b: Jet) -> Jet:
    return tuple(x + y for x, y in zip(a, b))


def jsub(a: Jet, b: Jet) -> Jet:
    return tuple(x - y for x, y in zip(a, b))


def jneg(a: Jet) -> Jet:
    return tuple(-x for x in a)


def jscale(a: Jet, c: float) -> Jet:
    return tuple(c * x for x in a)


def jmul(a: Jet, b: Jet) -> Jet:
    """Truncated product: coefficient m is sum of a_i * b_j over i + j = m."""
    k = len(a) - 1
    out = []
    for m in range(k + 1):
        acc = a[0] * b[m]
        for i in range(1, m + 1):
            acc = acc + a[i] * b[m - i]
        out.append(acc)
    return tuple(out)


def jmatmul(a: Jet, b: Jet) -> Jet:
    k = len(a) - 1
    out = []
    for m in range(k + 1):
        acc = a[0] @ b[m]
        for i in range(1, m + 1):
            acc = acc + a[i] @ b[m - i]
        out.append(acc)
    return tuple(out)


def jdiv(a: Jet, b: Jet) -> Jet:
    c0 = a[0] / b[0]
    out = [c0]
    if len(a) > 1:
        c1 = (a[1] - c0 * b[1]) / b[0]
        out.append(c1)
    if len(a) > 2:
        out.append((a[2] - c0 * b[2] - out[1] * b[1]) / b[0])
    return tuple(out)


def jtanh(a: Jet) -> Jet:
    t = np.tanh(a[0])
    out = [t]
    if len(a) > 1:
        u = 1.0 - t * t
        out.append(u * a[1])
    if len(a) > 2:
        out.append(u * a[2] - t * u * a[1] * a[1])
    return tuple(out)


def jexp(a: Jet) -> Jet:
    e = np.exp(a[0])
    out = [e]
    if len(a) > 1:
        out.append(e * a[1])
    if len(a) > 2:
        out.append(e * (a[2] + 0.5 * a[1] * a[1]))
    return tuple(out)


def jlog(a: Jet) -> Jet:
    out = [np.log(a[0])]
    if len(a) > 1:
        r = a[1] / a[0]
        out.append(r)
    if len(a) > 2:
        out.append(a[2] / a[0] - 0.5 * r * r)
    return tuple(out)


def jpow_int(a: Jet, p: int) -> Jet:
    if p < 1:
        raise ValueError("pow_int requires integer power >= 1")
    out = a
    for _ in range(p - 1):
        out = jmul(out, a)
    return out


def _reduce_to(arr: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast result back down to the given operand shape."""
    if arr.shape == shape:
        return arr
    extra = arr.ndim - len(shape)
    if extra > 0:
        arr = arr.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and arr.shape[i] != 1)
    if axes:
        arr = arr.sum(axis=axes, keepdims=True)
    return arr


def jreduce_to(a: Jet, shape: tuple) -> Jet:
    return tuple(_reduce_to(x, shape) for x in a)


# ---------------------------------------------------------------------------
# tape and nodes
# ---------------------------------------------------------------------------

class Tensor:
    """One node on a tape: a jet value plus links for the backward sweep."""

    __slots__ = ("tape", "idx", "op", "jet", "parents", "vjps", "requires_grad")

    def __init__(self, tape, op, jet, parents, vjps, requires_grad):
        self.tape = tape
        self.op = op
        self.jet = jet
        self.parents = parents
        self.vjps = vjps
        self.requires_grad = requires_grad
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def value(self) -> np.ndarray:
        return self.jet[0]

    @property
    def shape(self) -> tuple:
        return self.jet[0].shape


class Tape:
    """Ordered record of operations; creation order is topological order."""

    def __init__(self, degree: int = 0):
        if not 0 <= degree <= MAX_DEGREE:
            raise ValueError(f"degree must be in [0, {MAX_DEGREE}]")
        self.degree = degree
        self.nodes: list[Tensor] = []

    def leaf(self, value, tangent=None, tangent2=None) -> Tensor:
        """Differentiable input. Tangents seed the jet's higher coefficients."""
        v = np.asarray(value, dtype=np.float64)
        coeffs = [v]
        for t in (tangent, tangent2)[: self.degree]:
            coeffs.append(np.zeros_like(v) if t is None
                          else np.asarray(t, dtype=np.float64))
        return Tensor(self, "leaf", tuple(coeffs), (), (), True)

    def const(self, value) -> Tensor:
        return Tensor(self, "const", jet_const(value, self.degree), (), (), False)

    def fingerprint(self) -> str:
        """SHA-256 over op kinds and all jet coefficient bytes (replay check)."""
        h = hashlib.sha256()
        for node in self.nodes:
            h.update(node.op.encode())
            for c in node.jet:
                h.update(np.ascontiguousarray(c).tobytes())
        return h.hexdigest()


def _make(tape, op, jet, parents, vjps) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(tape, op, jet, tuple(parents), tuple(vjps), rg)


def _wrap(tape, x):
    return x if isinstance(x, Tensor) else tape.const(x)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _wrap(a.tape, b)
    sa, sb = a.shape, b.shape
    return _make(a.tape, "add", jadd(a.jet, b.jet), (a, b),
                 (lambda g: jreduce_to(g, sa), lambda g: jreduce_to(g, sb)))


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(a.tape, b)
    sa, sb = a.shape, b.shape
    return _make(a.tape, "sub", jsub(a.jet, b.jet), (a, b),
                 (lambda g: jreduce_to(g, sa),
                  lambda g: jreduce_to(jneg(g), sb)))


def neg(a: Tensor) -> Tensor:
    return _make(a.tape, "neg", jneg(a.jet), (a,), (jneg,))


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(a.tape, b)
    sa, sb = a.shape, b.shape
    aj, bj = a.jet, b.jet
    return _make(a.tape, "mul", jmul(aj, bj), (a, b),
                 (lambda g: jreduce_to(jmul(g, bj), sa),
                  lambda g: jreduce_to(jmul(g, aj), sb)))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.tape, "scale", jscale(a.jet, c), (a,),
                 (lambda g: jscale(g, c),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D matrix product."""
    aj, bj = a.jet, b.jet
    ajT = tuple(c.T for c in aj)
    bjT = tuple(c.T for c in bj)
    return _make(a.tape, "matmul", jmatmul(aj, bj), (a, b),
                 (lambda g: jmatmul(g, bjT), lambda g: jmatmul(ajT, g)))


def matvec(a: Tensor, x: Tensor) -> Tensor:
    """2-D @ 1-D product."""
    aj, xj = a.jet, x.jet
    ajT = tuple(c.T for c in aj)

    def vjp_a(g):
        k = len(g) - 1
        out = []
        for m in range(k + 1):
            acc = np.outer(g[0], xj[m])
            for i in range(1, m + 1):
                acc = acc + np.outer(g[i], xj[m - i])
            out.append(acc)
        return tuple(out)

    return _make(a.tape, "matvec", jmatmul(aj, xj), (a, x),
                 (vjp_a, lambda g: jmatmul(ajT, g)))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """1-D . 1-D inner product, producing a scalar (0-d) node."""
    aj, bj = a.jet, b.jet
    return _make(a.tape, "dot", jmatmul(aj, bj), (a, b),
                 (lambda g: jmul(g, bj), lambda g: jmul(g, aj)))


def tanh(a: Tensor) -> Tensor:
    out_jet = jtanh(a.jet)

    def vjp(g):
        one = jet_const(1.0, len(g) - 1)
        return jmul(g, jsub(one, jmul(out_jet, out_jet)))

    return _make(a.tape, "tanh", out_jet, (a,), (vjp,))


def exp(a: Tensor) -> Tensor:
    out_jet = jexp(a.jet)
    return _make(a.tape, "exp", out_jet, (a,), (lambda g: jmul(g, out_jet),))


def log(a: Tensor) -> Tensor:
    aj = a.jet
    return _make(a.tape, "log", jlog(aj), (a,), (lambda g: jdiv(g, aj),))


def relu(a: Tensor) -> Tensor:
    # The active set is fixed by the primal coefficient, so all jet
    # coefficients share one mask. Not C^3 at the kink; see module docs.
    mask = (a.jet[0] > 0.0).astype(np.float64)
    return _make(a.tape, "relu", tuple(c * mask for c in a.jet), (a,),
                 (lambda g: tuple(c * mask for c in g),))


def pow_int(a: Tensor, p: int) -> Tensor:
    aj = a.jet

    def vjp(g):
        if p == 1:
            return g
        return jmul(g, jscale(jpow_int(aj, p - 1), float(p)))

    return _make(a.tape, f"pow{p}", jpow_int(aj, p), (a,), (vjp,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(a.tape, "sum", tuple(np.asarray(c.sum()) for c in a.jet), (a,),
                 (lambda g: tuple(np.broadcast_to(c, shape).copy() for c in g),))


def mean_all(a: Tensor) -> Tensor:
    n = a.jet[0].size
    shape = a.shape
    return _make(a.tape, "mean", tuple(np.asarray(c.sum() / n) for c in a.jet),
                 (a,),
                 (lambda g: tuple(np.broadcast_to(c / n, shape).copy() for c in g),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    shape = a.shape

    def vjp(g):
        return tuple(np.broadcast_to(np.expand_dims(c, axis), shape).copy()
                     for c in g)

    return _make(a.tape, "sum_axis", tuple(c.sum(axis=axis) for c in a.jet),
                 (a,), (vjp,))


def pick_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select one column per row: out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    rows = np.arange(n)
    shape = a.shape

    def vjp(g):
        out = []
        for c in g:
            z = np.zeros(shape)
            z[rows, idx] = c
            out.append(z)
        return tuple(out)

    return _make(a.tape, "pick", tuple(c[rows, idx] for c in a.jet), (a,), (vjp,))


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    size = a.shape[0]

    def vjp(g):
        out = []
        for c in g:
            z = np.zeros(size)
            z[start:stop] = c
            out.append(z)
        return tuple(out)

    return _make(a.tape, "slice", tuple(c[start:stop] for c in a.jet), (a,), (vjp,))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _make(a.tape, "reshape", tuple(c.reshape(shape) for c in a.jet), (a,),
                 (lambda g: tuple(c.reshape(old) for c in g),))


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def backward(output: Tensor, wrt: list[Tensor]) -> list[Jet]:
    """Adjoint jets of a scalar output with respect to the given leaves.

    Coefficient i of the returned jet for leaf x is (1/i!) d^i/de^i of the
    gradient map evaluated along the tangents seeded into x. Degree 1 thus
    yields (grad, H v); degree 2 yields (grad, H u, third(u, u) / 2).
    """
    if output.value.shape != ():
        raise ValueError("backward expects a scalar output node")
    tape = output.tape
    adj: list[Jet | None] = [None] * len(tape.nodes)
    adj[output.idx] = jet_const(1.0, tape.degree)
    for node in reversed(tape.nodes):
        g = adj[node.idx]
        if g is None or not node.requires_grad:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            if adj[parent.idx] is None:
                adj[parent.idx] = contrib
            else:
                adj[parent.idx] = jadd(adj[parent.idx], contrib)
    out = []
    for leaf in wrt:
        g = adj[leaf.idx]
        out.append(g if g is not None else jet_const(np.zeros(leaf.shape), tape.degree))
    return out
