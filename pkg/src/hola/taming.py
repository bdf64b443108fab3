"""Step-size dependent taming of the drift and diffusion coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potentials import spectral_norm, vector_norm

__all__ = ["TamedDrift", "TamingGap", "tame", "taming_gap", "taming_bounds", "check_gamma"]


def check_gamma(gamma):
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"step size must lie in (0, 1), got {gamma}")
    return gamma


@dataclass
class TamedDrift:
    grad_t: np.ndarray
    hess_t: np.ndarray
    hess_grad_t: np.ndarray
    vec_lap_t: np.ndarray
    gamma: float


@dataclass
class TamingGap:
    """Norms of (tamed - raw) for each coefficient."""

    grad: np.ndarray
    hess: np.ndarray
    hess_grad: np.ndarray
    vec_lap: np.ndarray


def _norms(stack, x):
    x = np.asarray(x, float)
    gnorm = vector_norm(stack.grad)
    hnorm = spectral_norm(stack.hess)
    xnorm = vector_norm(x)
    lnorm = vector_norm(stack.vec_lap_grad)
    return gnorm, hnorm, xnorm, lnorm


def tame(stack, x, gamma):
    """Tamed coefficients at ``x`` (batched over leading axes).

    grad_t      = grad / (1 + gamma^{3/2} |grad|^{3/2})^{2/3}
    hess_t      = H / (1 + gamma |H|)
    hess_grad_t = H grad / (1 + gamma |x| |H| |grad|)
    vec_lap_t   = lap / (1 + gamma^{1/2} |x| |lap|)
    """
    gamma = check_gamma(gamma)
    gnorm, hnorm, xnorm, lnorm = _norms(stack, x)
    f_grad = (1.0 + gamma**1.5 * gnorm**1.5) ** (-2.0 / 3.0)
    f_hess = 1.0 / (1.0 + gamma * hnorm)
    f_hg = 1.0 / (1.0 + gamma * xnorm * hnorm * gnorm)
    f_lap = 1.0 / (1.0 + np.sqrt(gamma) * xnorm * lnorm)
    return TamedDrift(
        grad_t=stack.grad * f_grad[..., None],
        hess_t=stack.hess * f_hess[..., None, None],
        hess_grad_t=stack.hess_grad * f_hg[..., None],
        vec_lap_t=stack.vec_lap_grad * f_lap[..., None],
        gamma=gamma,
    )


def taming_gap(stack, x, gamma):
    t = tame(stack, x, gamma)
    return TamingGap(
        grad=np.linalg.norm(t.grad_t - stack.grad, axis=-1),
        hess=spectral_norm(t.hess_t - stack.hess),
        hess_grad=np.linalg.norm(t.hess_grad_t - stack.hess_grad, axis=-1),
        vec_lap=np.linalg.norm(t.vec_lap_t - stack.vec_lap_grad, axis=-1),
    )


def taming_bounds(tamed, x, constants=None, rtol=1e-12):
    """Evaluate the a-priori bounds on tamed coefficients.

    Returns a dict mapping bound name to a boolean array (True = holds).
    The two constant-bearing bounds are only included when ``constants``
    declares (rho, K, K1, K2); the ``|x| >= 1`` forms are always checked.
    ``rtol`` absorbs last-bit rounding in the quotients.
    """
    g = tamed.gamma
    x = np.asarray(x, float)
    d = x.shape[-1]
    slack = 1.0 + rtol
    xnorm = np.linalg.norm(x, axis=-1)
    grad = np.linalg.norm(tamed.grad_t, axis=-1)
    hess = spectral_norm(tamed.hess_t)
    hg = np.linalg.norm(tamed.hess_grad_t, axis=-1)
    lap = np.linalg.norm(tamed.vec_lap_t, axis=-1)
    far = xnorm >= 1.0
    out = {
        "grad": grad <= slack * 2.0 ** (1.0 / 3.0) / g,
        "hess": hess <= slack / g,
        "hess_grad_far": ~far | (hg <= slack / g),
        "vec_lap_far": ~far | (lap <= slack / np.sqrt(g)),
    }
    if constants is not None and constants.has_growth:
        rho, K, K1, K2 = constants.rho, constants.K, constants.K1, constants.K2
        out["hess_grad"] = hg <= slack * (1.0 + 2.0 ** (2 * rho + 1) * d * K1 * K2) / g
        out["vec_lap"] = lap <= slack * (1.0 + 3.0 ** (rho - 1) * d * K) / np.sqrt(g)
    return out
