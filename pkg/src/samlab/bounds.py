"""Closed-form evaluators: generalization bound, admissible alignment
strengths, and the explicit convergence bound.

The generalization bound's O(1) constant is pinned to K = 1 + 2 ln(pi^2 / 6)
so every report is reproducible; the constant is exported and echoed in CLI
output. The convergence evaluator uses the explicit pre-asymptotic
inequality, not the O(.) form, because only the former is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

PINNED_CONSTANT = 1.0 + 2.0 * math.log(math.pi ** 2 / 6.0)


@dataclass(frozen=True)
class BoundInputs:
    empirical_loss: float     # f_S
    lam1: float               # top Hessian eigenvalue at x
    x_norm: float             # ||x||
    d: int                    # parameter count
    n: int                    # sample count
    sigma: float              # posterior standard deviation
    loss_bound: float         # L
    third_bound: float        # C
    delta: float              # confidence level

    def validate(self) -> None:
        if self.n < 1 or self.d < 1:
            raise_domain("n and d must be >= 1")
        if self.sigma <= 0 or self.loss_bound <= 0:
            raise_domain("sigma and the loss bound must be positive")
        if self.third_bound < 0:
            raise_domain("the third-derivative bound must be nonnegative")
        if not 0.0 < self.delta < 1.0:
            raise_domain("delta must lie in (0, 1)")


@dataclass(frozen=True)
class ConvergenceInputs:
    beta: float               # smoothness
    gap: float                # Delta = f(x0) - f*
    batch_var: float          # sigma^2
    steps: int                # T
    rho: float
    alpha: float

    def validate(self) -> None:
        if self.beta <= 0:
            raise_domain("beta must be positive")
        if self.gap < 0 or self.batch_var < 0 or self.rho < 0 or self.alpha < 0:
            raise_domain("gap, batch variance, rho and alpha must be nonnegative")
        if self.steps < 1:
            raise_domain("the step count must be >= 1")


def raise_domain(msg: str):
    from .errors import DomainError
    raise DomainError(msg)


def pac_bayes_bound(inputs: BoundInputs) -> float:
    """Generalization bound from empirical loss, curvature, and capacity.

    f_S + (d sigma^2 / 2) lam1 + C d^3 sigma^3 / 6
        + (L / (2 sqrt(n))) * sqrt(d ln(1 + ||x||^2 / (d sigma^2)) + K
                                   + 2 ln(1/delta) + 4 ln(n + d))
    """
    inputs.validate()
    b = inputs
    curvature = 0.5 * b.d * b.sigma ** 2 * b.lam1
    cubic = b.third_bound * b.d ** 3 * b.sigma ** 3 / 6.0
    inside = (b.d * math.log(1.0 + b.x_norm ** 2 / (b.d * b.sigma ** 2))
              + PINNED_CONSTANT
              + 2.0 * math.log(1.0 / b.delta)
              + 4.0 * math.log(b.n + b.d))
    complexity = b.loss_bound / (2.0 * math.sqrt(b.n)) * math.sqrt(inside)
    return b.empirical_loss + curvature + cubic + complexity


def alpha_admissible_range(omega: float) -> tuple:
    """Open interval of alignment strengths guaranteed to improve alignment.

    (0, 2 w sqrt(1 - w^2) / (2 w^2 - 1)) for w > sqrt(2)/2, else (0, inf).
    """
    if not 0.0 < omega < 1.0:
        raise_domain("omega must lie in (0, 1)")
    if omega <= math.sqrt(0.5):
        return (0.0, math.inf)
    upper = 2.0 * omega * math.sqrt(1.0 - omega ** 2) / (2.0 * omega ** 2 - 1.0)
    return (0.0, upper)


def convergence_bound(inputs: ConvergenceInputs) -> tuple:
    """Recommended step size and the explicit stationarity bound.

    eta = min(1 / (2 beta), sqrt(gap) / sqrt(beta sigma^2 T)), the second arm
    skipped when sigma^2 = 0; the bound is
    2 gap / (eta T) + beta^2 (rho^2 + alpha^2) + 2 beta sigma^2 eta.
    """
    inputs.validate()
    c = inputs
    eta = 1.0 / (2.0 * c.beta)
    if c.batch_var > 0.0 and c.gap > 0.0:
        eta = min(eta, math.sqrt(c.gap) / math.sqrt(c.beta * c.batch_var * c.steps))
    bound = (2.0 * c.gap / (eta * c.steps)
             + c.beta ** 2 * (c.rho ** 2 + c.alpha ** 2)
             + 2.0 * c.beta * c.batch_var * eta)
    return eta, bound
