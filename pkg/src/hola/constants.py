"""Explicit constants of the Lipschitz-case theory.

Given strong convexity ``m`` and Lipschitz moduli ``L1`` (gradient), ``L2``
(Hessian) and ``L`` (third derivative) in dimension ``d``, this module
computes the contraction rate ``m_tilde``, the admissible step-size range,
the moment constants ``q1, q2``, the chain of constants ``c1..c14`` and the
resulting non-asymptotic Wasserstein-2 bounds and iteration counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "LipschitzConstants",
    "derive_constants",
    "wasserstein_bound",
    "gaussian_bound",
    "c_bar",
    "c_tilde",
    "mixing_time",
    "MixingPlan",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class LipschitzConstants:
    m: float
    L1: float
    L2: float
    L: float
    d: int
    m_tilde: float
    gamma_max: float
    q1: float
    q2: float
    c: dict = field(repr=False)

    def __getattr__(self, name):
        # c1 .. c14 as attributes
        if name.startswith("c") and name[1:].isdigit():
            try:
                return self.c[int(name[1:])]
            except KeyError:
                pass
        raise AttributeError(name)

    def check_gamma(self, gamma):
        if not 0.0 < gamma < self.gamma_max:
            raise ValueError(
                f"gamma={gamma} outside the admissible range (0, {self.gamma_max:.17g})"
            )
        return gamma


def derive_constants(m, L1, L2, L, d):
    """All explicit constants for the given moduli and dimension."""
    for name, v in (("m", m), ("L1", L1), ("L2", L2), ("L", L), ("d", d)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    m, L1, L2, L = float(m), float(L1), float(L2), float(L)
    d = int(d) if float(d).is_integer() else float(d)
    mt = m * L1 / (m + L1)
    gamma_max = min(1.0 / mt, 8.0 * mt**2 / (m * (2.0 * L1**2 + 7.0 * mt * L1)))
    d32 = d**1.5

    c = {}
    c[1] = 5.0 * L1**2 / 4.0 + L1**4 / 2.0
    c[2] = 1.5 * L2**2 * d**2 + 4.0 * L1**2 * d + 4.0 * d
    c[3] = 9.0 * (25.0 / 16.0 * L1**4 + L1**8 / 4.0)
    c[4] = 81.0 * L2**4 / 4.0 * d**4 + 416.0 * (L1**4 + 3.0) * d**2
    c[5] = 4.0 * c[1] * L1**2 * L2**2
    c[6] = 4.0 * (L1**2 * L2**2 * c[2] + L * c[1] * d32 + 2.0 * L2**2 * c[1] * d + 4.0 * L1**6)
    c[7] = 4.0 * (L * c[2] * d32 + 2.0 * L2**2 * c[2] * d + 4.0 * L1**2 * L2**2 * d**2 + 4.0 * L1**4 * d)
    c[8] = 2.0 * L1**4 + 4.0 * L1**2 * L2**2 * d + 2.0 * L2**2 * d
    c[9] = (4.0 * L2**2 * c[1] + 2.0 * L2**2 + 6.0 * L1**2 * L2**2 + 12.0 * L1**4 * L2**2) * d \
        + 6.0 * L1**4 + 12.0 * L1**6
    c[10] = (2.0 * L**2 * d**4 + 4.0 * L2**2 * c[2] * d + 12.0 * L2**4 * d**3
             + 32.0 * L1**2 * L2**2 * d**2 + 12.0 * L2**2 * d**2 + 16.0 * L1**4 * d)
    c[11] = 4.0 / m * L1**2 * L2**2 * c[1] + 2.0 * c[5]
    c[12] = (4.0 / m * (L1**2 * L2**2 * c[2] + 4.0 * L1**6 + d32 * L * c[1])
             + 2.0 * _SQRT2 * c[9] + 2.0 * c[6] + 2.0 * d * L2**2 * c[1])
    c[13] = 2.0 * _SQRT2 * c[8]
    c[14] = (4.0 / m * (4.0 * L1**2 * L2**2 * d + 4.0 * L1**4 * d + d32 * L * c[2])
             + 2.0 * _SQRT2 * c[10] + 2.0 * c[7] + 2.0 * L2**2 * d * c[2])

    a = L2**2 / (2.0 * mt) + 1.5 * L2**2
    q1 = a * d**2 + (4.0 * L1**2 + 4.0) * d
    # gamma-free form of the fourth-moment constant
    q2 = (2.0 + 8.0 / mt) * a**2 * d**4 + 32.0 * (1.0 + 42.0 / mt) * (L1**4 + 3.0) * d**2
    return LipschitzConstants(m, L1, L2, L, d, mt, gamma_max, q1, q2, c)


def c_bar(consts, x0_dist):
    """Constant of the gamma^3 term in the general Lipschitz bound."""
    k = consts
    r2 = float(x0_dist) ** 2
    return (math.exp(k.m) / k.m) * (
        k.c[14]
        + k.c[11] * (r2**2 + 8.0 * k.q2 / k.m_tilde)
        + k.c[12] * (r2 + k.q1 / k.m_tilde)
        + k.c[13] * (k.d / k.m + 2.0 * k.d)
    )


def c_tilde(consts, x0_dist):
    """Constant of the gamma^3 term when the target is Gaussian."""
    k = consts
    q1 = (4.0 * k.L1**2 + 4.0) * k.d
    return 16.0 * k.L1**4 * math.exp(k.m) / k.m**2 * (
        k.d + k.L1**2 * (float(x0_dist) ** 2 + q1 / k.m_tilde)
    )


def _bound(consts, x0_dist, n, gamma, const):
    consts.check_gamma(gamma)
    if n < 0:
        raise ValueError("n must be nonnegative")
    transient = math.exp(-consts.m * n * gamma) * (2.0 * float(x0_dist) ** 2 + 2.0 * consts.d / consts.m)
    return transient + const * gamma**3


def wasserstein_bound(consts, x0_dist, n, gamma):
    """Upper bound on W2^2 after ``n`` untamed steps from distance ``x0_dist`` of x*."""
    return _bound(consts, x0_dist, n, gamma, c_bar(consts, x0_dist))


def gaussian_bound(consts, x0_dist, n, gamma):
    """Same bound with the O(d) Gaussian-target constant."""
    return _bound(consts, x0_dist, n, gamma, c_tilde(consts, x0_dist))


@dataclass(frozen=True)
class MixingPlan:
    n: int
    gamma: float
    balanced: bool


def mixing_time(consts, x0_dist, epsilon):
    """Iterations (and step size) guaranteeing W2 <= epsilon.

    The balanced step ``gamma = (epsilon^2 / (2 C_bar))^{1/3}`` splits the
    budget evenly between the bias and transient terms; ``n`` is then the
    smallest integer with
    ``n >= ((2 C_bar)^{1/3} / (m epsilon^{2/3})) log(4 (r^2 + d/m) / epsilon^2)``.
    If the balanced step is not admissible, a step just inside the range is
    used instead and ``n`` solves the bound for that step directly.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    k = consts
    eps2 = float(epsilon) ** 2
    cb = c_bar(k, x0_dist)
    r2 = float(x0_dist) ** 2
    gamma = (eps2 / (2.0 * cb)) ** (1.0 / 3.0)
    balanced = gamma < k.gamma_max
    if balanced:
        log_arg = 4.0 * (r2 + k.d / k.m) / eps2
        if log_arg <= 1.0:
            return MixingPlan(0, gamma, True)
        n = (2.0 * cb) ** (1.0 / 3.0) / (k.m * eps2 ** (1.0 / 3.0)) * math.log(log_arg)
        return MixingPlan(int(math.ceil(n)), gamma, True)
    gamma = 0.99 * k.gamma_max
    slack = eps2 - cb * gamma**3
    if slack <= 0:
        raise ValueError("no admissible step size reaches this precision")
    log_arg = (2.0 * r2 + 2.0 * k.d / k.m) / slack
    if log_arg <= 1.0:
        return MixingPlan(0, gamma, False)
    return MixingPlan(int(math.ceil(math.log(log_arg) / (k.m * gamma))), gamma, False)
