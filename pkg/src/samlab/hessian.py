"""Spectral probes of the loss Hessian, accessed only through HVPs.

Power iteration converges to the eigenpair largest in magnitude; for a
largest *algebraic* eigenvalue in the presence of strong negative curvature,
use the optional shift (iterate on H + c I) and record that c in run
metadata. The deflated spectrum projects out found eigenvectors every
iteration; a pair whose residual stays large is reported with its
``converged`` flag set False rather than silently wrong (equal-magnitude
opposite-sign pairs are the classic failure).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector, ZeroIterate
from .oracle import LossOracle, ParamVector
from .rng import STREAM_HUTCH, STREAM_POWER, stream

ALIGN_FLOOR = 1e-12
CONVERGED_RTOL = 1e-6


@dataclass(frozen=True)
class EigenEstimate:
    """Rayleigh-quotient estimate: value, unit vector, residual ||Hv - lam v||."""

    value: float
    vector: np.ndarray
    residual: float
    iterations: int
    hvp_calls: int
    shift: float = 0.0

    @property
    def converged(self) -> bool:
        return self.residual <= CONVERGED_RTOL * max(1.0, abs(self.value))


@dataclass(frozen=True)
class AlignmentReport:
    """1 - min_s ||eps/||eps|| - s v||, its minimizing sign, and |cos|."""

    value: float
    s_star: int
    omega: float


@dataclass(frozen=True)
class SpectrumReport:
    values: np.ndarray          # descending by magnitude
    vectors: np.ndarray         # one row per eigenpair
    residuals: np.ndarray
    converged: np.ndarray       # bool per pair
    trace_estimate: float
    trace_stderr: float
    hvp_calls: int


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, ParamVector) else np.asarray(x, dtype=np.float64)


def _unit_start(dim: int, seed: int, substream: int, v0) -> np.ndarray:
    if v0 is not None:
        v0 = _as_array(v0)
        n = np.linalg.norm(v0)
        if n == 0.0:
            raise DegenerateVector("start vector must be nonzero")
        return v0 / n
    v = stream(seed, STREAM_POWER, substream).standard_normal(dim)
    return v / np.linalg.norm(v)


def power_iteration(oracle: LossOracle, x, q: int, seed: int,
                    v0: np.ndarray | None = None, shift: float = 0.0,
                    substream: int = 0) -> EigenEstimate:
    """q rounds of v <- Hv/||Hv|| from a seeded random unit start.

    Uses exactly q + 2 HVPs: q iterations, one for the Rayleigh quotient,
    and one more for the residual.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    x = _as_array(x)
    v = _unit_start(oracle.dim, seed, substream, v0)

    def apply(vec):
        hv = oracle.hvp(x, vec)
        return hv + shift * vec if shift != 0.0 else hv

    for _ in range(q):
        w = apply(v)
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            raise ZeroIterate("numerically zero curvature along the iterate")
        v = w / norm
    lam_shifted = float(v @ apply(v))
    lam = lam_shifted - shift
    residual = float(np.linalg.norm(apply(v) - lam_shifted * v))
    return EigenEstimate(lam, v, residual, iterations=q, hvp_calls=q + 2,
                         shift=shift)


def align(eps, v, floor: float = ALIGN_FLOOR) -> AlignmentReport:
    """Alignment of a perturbation with a unit eigenvector, sign-resolved."""
    eps = _as_array(eps)
    v = _as_array(v)
    n = np.linalg.norm(eps)
    if n < floor:
        raise DegenerateVector("perturbation norm below the floor")
    if abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise DegenerateVector("eigenvector argument must be unit length")
    inner = float(eps @ v) / n
    s_star = 1 if inner >= 0.0 else -1
    omega = abs(inner)
    value = 1.0 - np.sqrt(max(2.0 - 2.0 * omega, 0.0))
    return AlignmentReport(value=float(value), s_star=s_star, omega=float(omega))


def spectrum_deflated(oracle: LossOracle, x, k: int, q: int, seed: int,
                      m_trace: int = 64) -> SpectrumReport:
    """Top-k eigenpairs by repeated power iteration with per-iterate deflation."""
    if not 1 <= k <= 64:
        raise ValueError("k must be in [1, 64]")
    x = _as_array(x)
    dim = oracle.dim
    basis: list[np.ndarray] = []
    values, residuals, flags = [], [], []
    calls = 0

    def project_out(vec):
        for b in basis:
            vec = vec - (b @ vec) * b
        return vec

    for j in range(k):
        v = _unit_start(dim, seed, j, None)
        v = project_out(v)
        norm = np.linalg.norm(v)
        if norm < 1e-300:
            raise ZeroIterate("deflated start vector vanished")
        v = v / norm
        for _ in range(q):
            w = project_out(oracle.hvp(x, v))
            calls += 1
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                raise ZeroIterate("numerically zero curvature in deflated stage")
            v = w / norm
        hv = oracle.hvp(x, v)
        calls += 1
        lam = float(v @ hv)
        residual = float(np.linalg.norm(hv - lam * v))
        basis.append(v)
        values.append(lam)
        residuals.append(residual)
        flags.append(residual <= CONVERGED_RTOL * max(1.0, abs(lam)))

    order = np.argsort(-np.abs(values), kind="stable")
    trace, trace_se = (float("nan"), float("nan"))
    if m_trace >= 2:
        trace, trace_se = hutchinson_trace(oracle, x, m_trace, seed)
        calls += m_trace
    return SpectrumReport(values=np.asarray(values)[order],
                          vectors=np.asarray(basis)[order],
                          residuals=np.asarray(residuals)[order],
                          converged=np.asarray(flags)[order],
                          trace_estimate=trace, trace_stderr=trace_se,
                          hvp_calls=calls)


def hutchinson_trace(oracle: LossOracle, x, m: int, seed: int) -> tuple:
    """Mean and standard error of z^T H z over m Rademacher probes."""
    if m < 2:
        raise ValueError("m must be >= 2")
    x = _as_array(x)
    rng = stream(seed, STREAM_HUTCH)
    samples = np.empty(m)
    for i in range(m):
        z = rng.integers(0, 2, size=oracle.dim).astype(np.float64) * 2.0 - 1.0
        samples[i] = z @ oracle.hvp(x, z)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(m))


def sharpness_proxy(lam1: float, rho: float) -> float:
    """Curvature-based sharpness at radius rho: rho^2 * lam1 / 2."""
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    return 0.5 * rho * rho * lam1
