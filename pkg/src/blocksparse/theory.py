"""Closed-form recovery bounds and the chi-distribution moment generating functions
they are built from.

Notation follows the usual one for this bound: ``eps`` is the covering-sphere
radius, ``eta`` the covering density, ``c`` the polytope inflation constant,
``delta`` the Chernoff parameter, and

    b = sqrt(1 - eps^2 + c^2 eps^2),   f = c eps,   g = sqrt(1 - eps^2) - c eps

are the per-component standard deviations of the three Gaussian block
families appearing in the union bound. ``H`` is the *negative* entropy
``beta ln beta + (1 - beta) ln(1 - beta)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special

from .core import as_seed


class InvalidCoveringParamsError(ValueError):
    pass


class EpsilonTooLargeError(ValueError):
    pass


class DegenerateThresholdError(ValueError):
    pass


class InvalidSpecError(ValueError):
    pass


def covering_constant_c(eta: float, D: int) -> float:
    """Upper bound on the inflation constant ``c`` for ``eta**(D-1)`` covering points.

    ``D`` is the dimension of the covered space; the ``eta >= sqrt(2)`` branch
    does not depend on it.
    """
    if not eta > 1:
        raise InvalidCoveringParamsError("eta must exceed 1")
    if eta >= math.sqrt(2):
        return 1.0 / (1.0 - (1.0 + 1.0 / eta**2) / (2.0 * eta**2))
    if D < 3:
        raise InvalidCoveringParamsError("the eta < sqrt(2) branch needs D >= 3")
    inner = 2.0 * math.log(eta) - math.log(D - 1) / (D - 1)
    if inner <= 0:
        raise InvalidCoveringParamsError(
            f"2 ln(eta) - ln(D-1)/(D-1) = {inner:.3g} <= 0; the bound is vacuous"
        )
    return 1.0 / ((1.0 - math.log(eta)) * math.sqrt(inner))


@dataclass(frozen=True)
class ThresholdParams:
    epsilon: float
    delta: float
    eta: float
    c: float
    b: float
    f: float
    g: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if not self.eta > 1:
            raise ValueError("eta must exceed 1")
        if not self.g > 0:
            raise EpsilonTooLargeError(
                f"g = sqrt(1 - eps^2) - c eps = {self.g:.3g} <= 0"
            )

    @classmethod
    def from_inputs(cls, epsilon: float, eta: float = 3.0, delta: float = 0.05,
                    D: int = 10**6) -> "ThresholdParams":
        return derived_constants(epsilon, eta, D, delta)

    def linear_coefficient(self, beta: float) -> float:
        """``beta b + (1 - beta)(f - g)``, the coefficient of ``d delta`` in the bound."""
        return beta * self.b + (1.0 - beta) * (self.f - self.g)


def derived_constants(epsilon: float, eta: float, D: int, delta: float = 0.05) -> ThresholdParams:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    c = covering_constant_c(eta, D)
    f = c * epsilon
    g = math.sqrt(1.0 - epsilon**2) - f
    if g <= 0:
        raise EpsilonTooLargeError(f"c*eps = {f:.6g} >= sqrt(1 - eps^2)")
    b = math.sqrt(1.0 - epsilon**2 + (c * epsilon) ** 2)
    return ThresholdParams(epsilon, delta, eta, c, b, f, g)


def beta_opt(params: ThresholdParams) -> float:
    """Largest block-sparsity ratio for which the linear coefficient is negative."""
    if params.g <= params.f:
        raise DegenerateThresholdError("need g > f")
    return (params.g - params.f) / (params.g + params.b - params.f)


def entropy_H(beta: float) -> float:
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    return float(special.xlogy(beta, beta) + special.xlogy(1 - beta, 1 - beta))


def ln_xi(alpha: float, beta: float, d: int, params: ThresholdParams) -> float:
    """Log of the per-block exponential rate of the failure-probability bound,
    with the large-``d`` MGF forms substituted."""
    p = params
    db, df, dg = p.delta * p.b, p.delta * p.f, p.delta * p.g
    return (
        d * (1 - alpha) * math.log(p.eta / p.epsilon)
        - entropy_H(beta)
        + d * beta * (db**2 + db)
        + d * (1 - beta) * (df**2 + df)
        + d * (1 - beta) * (dg**2 - dg)
    )


def condition_26_holds(alpha: float, beta: float, d: int, params: ThresholdParams) -> bool:
    """Whether ``ln_xi < 0`` written as the explicit linear-plus-variance inequality."""
    p = params
    lhs = (
        d * (1 - alpha) * math.log(p.eta / p.epsilon)
        + d * p.delta * (beta * p.b + (1 - beta) * p.f - (1 - beta) * p.g)
        + d * p.delta**2 * (beta * p.b**2 + (1 - beta) * p.f**2 + (1 - beta) * p.g**2)
    )
    return lhs < entropy_H(beta)


def min_block_length_bound(beta: float, params: ThresholdParams) -> float:
    """Real lower bound on ``d`` (the first inequality of the sufficient pair)."""
    coef = params.delta * params.linear_coefficient(beta)
    if coef >= 0:
        return math.inf
    return (entropy_H(beta) - math.log(params.eta / params.epsilon)) / coef


def min_block_length(alpha: float, beta: float, params: ThresholdParams) -> int | None:
    """Smallest integer ``d`` with ``d > bound(beta)`` and ``alpha > 1 - 1/d``.

    ``None`` when no such ``d`` exists, including every ``beta >= beta_opt``.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if params.delta <= 0 or beta >= beta_opt(params):
        return None
    lo = min_block_length_bound(beta, params)
    if not math.isfinite(lo):
        return None
    d = max(1, math.floor(lo) + 1)
    # alpha > 1 - 1/d  <=>  d (1 - alpha) < 1
    if d * (1 - alpha) < 1:
        return d
    return None


@dataclass(frozen=True)
class BoundReport:
    alpha: float
    beta: float
    d: int | None
    ln_xi: float | None
    condition_26_holds: bool | None
    d_min: int | None
    beta_opt: float

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(alpha, beta, params: ThresholdParams, d: int | None = None) -> BoundReport:
    return BoundReport(
        alpha=alpha,
        beta=beta,
        d=d,
        ln_xi=None if d is None else ln_xi(alpha, beta, d, params),
        condition_26_holds=None if d is None else condition_26_holds(alpha, beta, d, params),
        d_min=min_block_length(alpha, beta, params),
        beta_opt=beta_opt(params),
    )


# --- moment generating functions of scaled chi variables -------------------

@dataclass(frozen=True)
class MgfSpec:
    """``E exp(sign * mu * ||V||)`` with ``V`` of ``d`` i.i.d. N(0, scale^2)
    components and ``mu = sqrt(2d - 1) * delta * sqrt(2)``."""

    d: int
    delta: float
    scale: float
    sign: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise InvalidSpecError("d must be >= 1")
        if self.sign not in (1, -1):
            raise InvalidSpecError("sign must be +1 or -1")
        for name in ("delta", "scale"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidSpecError(f"{name} must be finite")
        if not self.scale > 0:
            raise InvalidSpecError("scale must be positive")
        if self.delta < 0:
            raise InvalidSpecError("delta must be nonnegative")

    @property
    def mu(self) -> float:
        return math.sqrt(2 * self.d - 1) * self.delta * math.sqrt(2)

    @property
    def rate(self) -> float:
        """Signed coefficient of the standard chi radius in the exponent."""
        return self.sign * self.mu * self.scale


def chi_mean(d: int) -> float:
    """Mean of a chi variable with ``d`` degrees of freedom."""
    return math.sqrt(2) * math.exp(special.gammaln((d + 1) / 2) - special.gammaln(d / 2))


def log_mgf_quadrature(spec: MgfSpec, rtol: float = 1e-12) -> float:
    a = spec.rate
    if a == 0:
        return 0.0
    d = spec.d
    log_norm = -((d / 2 - 1) * math.log(2) + special.gammaln(d / 2))
    # the log-integrand (d-1) ln r + a r - r^2/2 peaks at r0
    r0 = (a + math.sqrt(a * a + 4 * (d - 1))) / 2
    peak = (d - 1) * math.log(r0) + a * r0 - r0 * r0 / 2 if r0 > 0 else 0.0

    def integrand(r):
        if r <= 0:
            return 0.0 if d > 1 else math.exp(-peak)
        return math.exp((d - 1) * math.log(r) + a * r - r * r / 2 - peak)

    # beyond R the integrand is below exp(-200*ln10) relative to the peak
    R = math.sqrt(2 * d * math.log(10) * 20) + abs(a)
    R = max(R, r0 + 10.0)
    while integrand(R) > 1e-200:
        R *= 2
    width = 1.0 / math.sqrt(1 + (d - 1) / max(r0, 1e-12) ** 2) if r0 > 0 else 1.0
    pts = sorted({max(0.0, r0 - 8 * width), r0, min(R, r0 + 8 * width)} - {0.0, R})
    val, _ = integrate.quad(integrand, 0.0, R, points=pts or None, limit=400,
                            epsabs=0.0, epsrel=rtol)
    return math.log(val) + peak + log_norm


def mgf_quadrature(spec: MgfSpec) -> float:
    """Exact MGF via the one-dimensional radial integral against the chi density."""
    return math.exp(log_mgf_quadrature(spec))


def log_mgf_asymptotic(spec: MgfSpec) -> float:
    t = spec.delta * spec.scale
    return spec.d * (t * t + spec.sign * t)


def mgf_asymptotic(spec: MgfSpec) -> float:
    """Large-``d``, small-``delta * scale`` closed form ``exp(d((delta s)^2 +- delta s))``."""
    return math.exp(log_mgf_asymptotic(spec))


def mgf_monte_carlo(spec: MgfSpec, samples: int, seed, chunk: int = 1 << 16,
                    return_stderr: bool = False):
    """Sample-mean estimate of the MGF from ``samples`` Gaussian vectors."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if spec.rate == 0:
        return (1.0, 0.0) if return_stderr else 1.0
    rng = as_seed(seed).generator()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        r = np.linalg.norm(rng.standard_normal((c, spec.d)), axis=1)
        vals = np.exp(spec.rate * r)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += c
    mean = total / samples
    if not return_stderr:
        return mean
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)
