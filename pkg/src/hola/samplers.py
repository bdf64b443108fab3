"""One-step kernels and chain drivers for HOLA, its untamed Lipschitz form,
ULA and TULA.

The update maps are written for a batch of points ``x`` of shape ``(n, d)``
(or a single point of shape ``(d,)``) and a matching array of standard
normals, so many independent chains can advance together. Each chain owns
the random stream ``(seed, stream_id = chain index)``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .potentials import evaluate, vector_norm
from .rng import RandomStream, standard_normal_streams
from .taming import check_gamma, tame

__all__ = [
    "SCHEMES",
    "NOISE_MODES",
    "DivergenceError",
    "PreconditionError",
    "SamplerConfig",
    "ChainState",
    "ChainOutput",
    "normals_per_step",
    "sigma_squared",
    "matrix_sqrt_spd",
    "noise_two",
    "correlated_pair",
    "hola_update",
    "ula_update",
    "tula_update",
    "hola_step",
    "hola_lipschitz_step",
    "ula_step",
    "tula_step",
    "admissible_gamma",
    "run_chain",
    "run_chains",
    "DIVERGENCE_RADIUS",
]

SCHEMES = ("hola", "hola_lipschitz", "ula", "tula")
NOISE_MODES = ("two_noise", "matrix_sqrt", "correlated_pair")
DIVERGENCE_RADIUS = 1e12
_SQRT3_6 = math.sqrt(3.0) / 6.0
_INV_2SQRT3 = 1.0 / (2.0 * math.sqrt(3.0))


class DivergenceError(ArithmeticError):
    """Raised when an iterate leaves the finite region."""

    def __init__(self, step_index):
        super().__init__(f"chain diverged at step {step_index}")
        self.step_index = step_index


class PreconditionError(ValueError):
    """A numerical precondition (e.g. positive definite sigma^2) failed."""


@dataclass(frozen=True)
class SamplerConfig:
    scheme: str = "hola"
    gamma: float = 0.01
    n_steps: int = 1000
    burn_in: int = 0
    seed: int = 0
    noise_mode: str = "two_noise"
    initial_point: tuple = (0.0,)
    thin: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}; choose from {NOISE_MODES}")
        check_gamma(self.gamma)
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be positive")
        if not 0 <= int(self.burn_in) < int(self.n_steps):
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_steps")
        if int(self.thin) < 1:
            raise ValueError("thin must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        x0 = np.atleast_1d(np.asarray(self.initial_point, dtype=float))
        if x0.ndim != 1 or not np.all(np.isfinite(x0)):
            raise ValueError("initial_point must be a finite vector")
        object.__setattr__(self, "initial_point", tuple(float(v) for v in x0))

    @property
    def x0(self):
        return np.array(self.initial_point)

    def retained_steps(self):
        return np.arange(self.burn_in + 1, self.n_steps + 1, self.thin)


@dataclass
class ChainState:
    x: np.ndarray
    step_index: int = 0
    rng: RandomStream = field(default_factory=RandomStream)


@dataclass
class ChainOutput:
    """Retained iterates of one chain ``(n, d)`` or of a batch ``(chains, n, d)``."""

    samples: np.ndarray
    steps: np.ndarray
    diverged: bool = False
    divergence_step: int | None = None
    elapsed: float = 0.0
    config: SamplerConfig | None = None


def admissible_gamma(m, L1):
    """Upper end of the step-size range where the Lipschitz theory applies."""
    mt = m * L1 / (m + L1)
    return min(1.0 / mt, 8.0 * mt**2 / (m * (2.0 * L1**2 + 7.0 * mt * L1)))


def normals_per_step(scheme, noise_mode, d):
    if scheme in ("hola", "hola_lipschitz") and noise_mode in ("two_noise", "correlated_pair"):
        return 2 * d
    return d


def sigma_squared(hess_t, gamma):
    """I - gamma H + (gamma^2 / 3) H^2, batched over leading axes."""
    H = np.asarray(hess_t, float)
    if not np.all(np.isfinite(H)):
        raise PreconditionError("Hessian has non-finite entries; sigma^2 is undefined")
    eye = np.eye(H.shape[-1])
    return eye - gamma * H + (gamma**2 / 3.0) * (H @ H)


def matrix_sqrt_spd(M):
    """Symmetric square root of a symmetric positive definite matrix."""
    M = np.asarray(M, float)
    evals, evecs = np.linalg.eigh(M)
    if np.any(evals <= 0):
        raise ValueError(f"matrix is not positive definite (min eigenvalue {evals.min():.3g})")
    return (evecs * np.sqrt(evals)[..., None, :]) @ np.swapaxes(evecs, -1, -2)


def _noise_two(H, gamma, xi, xi_t):
    # one matrix-vector product: H (-xi/2 + (sqrt(3)/6) xi~)
    mix = _SQRT3_6 * xi_t - 0.5 * xi
    return xi + gamma * np.einsum("...ij,...j->...i", H, mix)


def noise_two(hess_t, gamma, rng, size=None):
    """(I - gamma H / 2) xi + (sqrt(3)/6) gamma H xi~ for fresh xi, xi~.

    With ``size`` given, returns ``(size, d)`` independent draws; each row
    consumes ``2d`` consecutive normals, in the same order as repeated
    single draws.
    """
    H = np.asarray(hess_t, float)
    d = H.shape[-1]
    if size is None:
        z = rng.standard_normal(2 * d)
    else:
        z = rng.standard_normal(2 * d * int(size)).reshape(int(size), 2 * d)
    return _noise_two(H, gamma, z[..., :d], z[..., d:])


def _pair(gamma, zbar, w):
    return zbar, gamma**1.5 * (0.5 * zbar + _INV_2SQRT3 * w)


def correlated_pair(gamma, rng, d=1, size=None):
    """(Zbar, Z~) with Cov(Z~) = gamma^3/3 I and E[sqrt(gamma) Zbar Z~^T] = gamma^2/2 I.

    With ``size`` given, both arrays have shape ``(size, d)``.
    """
    check_gamma(gamma)
    if size is None:
        z = rng.standard_normal(2 * d)
    else:
        z = rng.standard_normal(2 * d * int(size)).reshape(int(size), 2 * d)
    return _pair(gamma, z[..., :d], z[..., d:])


def _coefficients(model, x, gamma, tamed):
    stack = model.derivatives(x)
    if tamed:
        t = tame(stack, x, gamma)
        return t.grad_t, t.hess_t, t.hess_grad_t, t.vec_lap_t
    return stack.grad, stack.hess, stack.hess_grad, stack.vec_lap_grad


def _pair_update(x, gamma, grad, hess, hess_grad, lap, zbar, ztilde):
    return (
        x
        - gamma * grad
        + 0.5 * gamma**2 * (hess_grad - lap)
        + math.sqrt(2.0 * gamma) * zbar
        - math.sqrt(2.0) * np.einsum("...ij,...j->...i", hess, ztilde)
    )


def hola_update(model, x, gamma, noise_mode, z, tamed=True):
    """One HOLA move from ``x`` given standard normals ``z``.

    ``z`` has ``normals_per_step`` entries along its last axis. ``tamed=False``
    gives the untamed Lipschitz form.
    """
    x = np.asarray(x, float)
    d = x.shape[-1]
    grad, hess, hess_grad, lap = _coefficients(model, x, gamma, tamed)
    if noise_mode == "correlated_pair":
        zbar, ztilde = _pair(gamma, z[..., :d], z[..., d : 2 * d])
        return _pair_update(x, gamma, grad, hess, hess_grad, lap, zbar, ztilde)
    drift = -grad + 0.5 * gamma * (hess_grad - lap)
    if noise_mode == "two_noise":
        noise = _noise_two(hess, gamma, z[..., :d], z[..., d : 2 * d])
    elif noise_mode == "matrix_sqrt":
        sig = matrix_sqrt_spd(_checked_sigma2(hess, gamma))
        noise = np.einsum("...ij,...j->...i", sig, z[..., :d])
    else:
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    return x + gamma * drift + math.sqrt(2.0 * gamma) * noise


def _checked_sigma2(hess, gamma):
    s2 = sigma_squared(hess, gamma)
    lam = np.linalg.eigvalsh(s2)
    if np.any(lam <= 0):
        raise PreconditionError(
            f"sigma^2 is not positive definite at step size {gamma}; "
            "reduce gamma below the admissible bound"
        )
    return s2


def ula_update(model, x, gamma, z):
    grad = model.derivatives(x).grad
    return x - gamma * grad + math.sqrt(2.0 * gamma) * z


def tula_update(model, x, gamma, z):
    grad = model.derivatives(x).grad
    gnorm = vector_norm(grad)[..., None]
    return x - gamma * grad / (1.0 + gamma * gnorm) + math.sqrt(2.0 * gamma) * z


def _diverged(x):
    # NaN fails the comparison, so non-finite iterates count as diverged
    with np.errstate(invalid="ignore", over="ignore"):
        return ~(vector_norm(x) <= DIVERGENCE_RADIUS)


def _advance(scheme, model, x, gamma, noise_mode, z):
    if scheme == "hola":
        return hola_update(model, x, gamma, noise_mode, z, tamed=True)
    if scheme == "hola_lipschitz":
        return hola_update(model, x, gamma, noise_mode, z, tamed=False)
    if scheme == "ula":
        return ula_update(model, x, gamma, z)
    return tula_update(model, x, gamma, z)


def _step(scheme, state, model, gamma, noise_mode, rng):
    gamma = check_gamma(gamma)
    rng = rng if rng is not None else state.rng
    x = evaluate_point(model, state.x)
    z = rng.standard_normal(normals_per_step(scheme, noise_mode, model.dim))
    with np.errstate(all="ignore"):
        x_new = _advance(scheme, model, x, gamma, noise_mode, z)
    if _diverged(x_new):
        raise DivergenceError(state.step_index + 1)
    return ChainState(x=x_new, step_index=state.step_index + 1, rng=rng)


def evaluate_point(model, x):
    x = np.asarray(x, float)
    evaluate(model, x)  # argument checks only
    return x


def hola_step(state, model, gamma, noise_mode="two_noise", rng=None):
    return _step("hola", state, model, gamma, noise_mode, rng)


def hola_lipschitz_step(state, model, gamma, noise_mode="two_noise", rng=None):
    return _step("hola_lipschitz", state, model, gamma, noise_mode, rng)


def ula_step(state, model, gamma, rng=None):
    return _step("ula", state, model, gamma, "two_noise", rng)


def tula_step(state, model, gamma, rng=None):
    return _step("tula", state, model, gamma, "two_noise", rng)


def _warn_step_range(config, model):
    c = model.constants
    if config.scheme == "hola_lipschitz" and c.lipschitz:
        gmax = admissible_gamma(c.m, c.L1)
        if config.gamma >= gmax:
            warnings.warn(
                f"gamma={config.gamma} is outside the admissible range (0, {gmax:.6g}) "
                "of the Lipschitz theory",
                RuntimeWarning,
                stacklevel=3,
            )


def run_chains(config, model, n_chains=1, initial_points=None, first_stream=0, block_values=2_000_000):
    """Run ``n_chains`` independent chains in lock-step.

    Chain ``i`` draws from stream ``first_stream + i``. Initial points default
    to ``config.initial_point`` for every chain. The run stops at the first
    step where any chain diverges (non-finite or norm above 1e12).

    Returns a :class:`ChainOutput` with ``samples`` of shape
    ``(n_chains, n_retained, d)``.
    """
    t0 = time.perf_counter()
    d = model.dim
    if initial_points is None:
        x = np.tile(config.x0, (n_chains, 1))
    else:
        x = np.array(initial_points, dtype=float).reshape(n_chains, d)
    if x.shape[1] != d:
        raise ValueError(f"initial point has dimension {x.shape[1]}, model has {d}")
    _warn_step_range(config, model)

    k = normals_per_step(config.scheme, config.noise_mode, d)
    per_step = 2 * ((k + 1) // 2)
    streams = np.arange(first_stream, first_stream + n_chains, dtype=np.uint64)
    counters = np.zeros(n_chains, dtype=np.uint64)
    block = max(1, min(config.n_steps, block_values // max(1, n_chains * per_step)))

    keep = config.retained_steps()
    samples = np.full((n_chains, keep.size, d), np.nan)
    slot = 0
    diverged_at = None
    step = 0
    with np.errstate(all="ignore"):
        while step < config.n_steps and diverged_at is None:
            nb = min(block, config.n_steps - step)
            z, counters = standard_normal_streams(config.seed, streams, counters, nb * per_step)
            z = z.reshape(n_chains, nb, per_step)[:, :, :k]
            for j in range(nb):
                x = _advance(config.scheme, model, x, config.gamma, config.noise_mode, z[:, j])
                step += 1
                if _diverged(x).any():
                    diverged_at = step
                    break
                if slot < keep.size and keep[slot] == step:
                    samples[:, slot] = x
                    slot += 1
    if diverged_at is not None:
        samples = samples[:, :slot]
        keep = keep[:slot]
    return ChainOutput(
        samples=samples,
        steps=keep,
        diverged=diverged_at is not None,
        divergence_step=diverged_at,
        elapsed=time.perf_counter() - t0,
        config=config,
    )


def run_chain(config, model):
    """Single chain on stream 0; samples have shape ``(n_retained, d)``."""
    out = run_chains(config, model, n_chains=1)
    return replace(out, samples=out.samples[0])


def with_seed(config, seed):
    return replace(config, seed=int(seed))
