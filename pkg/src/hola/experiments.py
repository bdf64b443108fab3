"""Step-size sweeps: stationary bias against exact oracles or reference laws.

Three kinds of sweep are provided.

* Oracle sweeps use closed-form stationary moments of linear chains on
  Gaussian targets and carry no sampling noise.
* Sampling sweeps run an ensemble of chains per step size and compare the
  pooled retained iterates with a 1-D reference law (W2 through quantiles,
  or binned TV). Standard errors are leave-one-block-out jackknife over 20
  groups of chains.
* Coupled sweeps drive every coarse chain with the Brownian path of a fine
  reference chain (untamed scheme at step ``gamma / refine``) and estimate
  W2 between the two pooled laws. The shared path cancels most of the
  Monte Carlo fluctuation, so biases far below the plain sampling floor are
  resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import (
    block_labels,
    fit_rate,
    gaussian_w2,
    jackknife_se,
    stationary_covariance_oracle,
    stationary_variance_oracle,
)
from .rng import standard_normal_streams
from .samplers import (
    DivergenceError,
    SamplerConfig,
    _advance,
    _diverged,
    hola_update,
    run_chains,
)

__all__ = [
    "SweepPoint",
    "Sweep",
    "stratified_start",
    "oracle_variance_sweep",
    "oracle_w2_sweep",
    "simulate_ensemble",
    "QuantileCache",
    "pooled_w2",
    "pooled_tv",
    "coupled_run",
    "coupled_w2",
    "sampling_sweep",
    "coupled_sweep",
]

_INV_2SQRT3 = 1.0 / (2.0 * math.sqrt(3.0))


@dataclass
class SweepPoint:
    gamma: float
    error: float
    stderr: float
    n_samples: int = 0


@dataclass
class Sweep:
    scheme: str
    metric: str
    points: list = field(default_factory=list)

    @property
    def gammas(self):
        return [p.gamma for p in self.points]

    @property
    def errors(self):
        return [p.error for p in self.points]

    def fit(self):
        return fit_rate([(p.gamma, p.error) for p in self.points])

    def strictly_decreasing(self):
        """True when the error decreases strictly as the step size shrinks."""
        pts = sorted(self.points, key=lambda p: p.gamma)
        return all(a.error < b.error for a, b in zip(pts, pts[1:]))


def stratified_start(reference, n_chains):
    """One start per chain at the reference quantiles (k + 1/2) / n_chains."""
    u = (np.arange(n_chains) + 0.5) / n_chains
    return reference.quantile(u)[:, None]


def oracle_variance_sweep(scheme, gammas, a=1.0):
    """|Sigma_gamma - 1/a| on the 1-D Gaussian target with curvature ``a``."""
    sw = Sweep(scheme, "variance_bias")
    for g in gammas:
        err = abs(stationary_variance_oracle(a, g, scheme) - 1.0 / a)
        sw.points.append(SweepPoint(float(g), err, 0.0))
    return sw


def oracle_w2_sweep(scheme, gammas, mean, precision):
    """Exact W2 between the stationary Gaussian of the chain and the target."""
    mean = np.atleast_1d(np.asarray(mean, float))
    A = np.atleast_2d(np.asarray(precision, float))
    target_cov = np.linalg.inv(A)
    sw = Sweep(scheme, "w2_gaussian")
    for g in gammas:
        S = stationary_covariance_oracle(A, g, scheme)
        sw.points.append(SweepPoint(float(g), gaussian_w2(mean, S, mean, target_cov), 0.0))
    return sw


def simulate_ensemble(model, scheme, gamma, n_chains, n_steps, burn_in, seed,
                      starts=None, noise_mode="two_noise", thin=1):
    """Retained iterates ``(n_chains, n_retained, d)``; raises on divergence."""
    x0 = tuple(np.zeros(model.dim)) if starts is None else tuple(np.asarray(starts)[0])
    cfg = SamplerConfig(scheme=scheme, gamma=gamma, n_steps=burn_in + n_steps, burn_in=burn_in,
                        seed=seed, noise_mode=noise_mode, initial_point=x0, thin=thin)
    out = run_chains(cfg, model, n_chains=n_chains, initial_points=starts)
    if out.diverged:
        raise DivergenceError(out.divergence_step)
    return out.samples


class QuantileCache:
    """Reference quantiles at (k - 1/2)/N, memoised by N."""

    def __init__(self, reference):
        self.reference = reference
        self._store = {}

    def __call__(self, n):
        if n not in self._store:
            self._store[n] = self.reference.quantile((np.arange(n) + 0.5) / n)
        return self._store[n]


def _sorted_with_labels(samples, n_blocks):
    s = np.asarray(samples, float)
    c = s.shape[0]
    flat = s.reshape(c, -1)
    labels = np.broadcast_to(block_labels(c, n_blocks)[:, None], flat.shape).reshape(-1)
    flat = flat.reshape(-1)
    order = np.argsort(flat, kind="stable")
    return flat[order], labels[order]


def pooled_w2(samples, quantiles, n_blocks=20):
    """W2 of pooled 1-D samples against reference quantiles, with jackknife s.e.

    ``samples`` has shape ``(chains, n)`` or ``(chains, n, 1)``;
    ``quantiles`` is a :class:`QuantileCache`.
    """
    xs, lab = _sorted_with_labels(samples, n_blocks)
    n = xs.size
    full = math.sqrt(float(np.mean((xs - quantiles(n)) ** 2)))
    n_loo = n - n // n_blocks
    q_loo = quantiles(n_loo)
    loo = [math.sqrt(float(np.mean((xs[lab != g] - q_loo) ** 2))) for g in range(n_blocks)]
    return full, float(jackknife_se(loo))


def pooled_tv(samples, reference, n_bins, bounds, n_blocks=20):
    """Binned TV of pooled 1-D samples against the reference CDF, with jackknife s.e."""
    s = np.asarray(samples, float)
    c = s.shape[0]
    flat = s.reshape(c, -1)
    lo, hi = float(bounds[0]), float(bounds[1])
    edges = np.linspace(lo, hi, n_bins + 1)
    F = reference.cdf(edges)
    tgt = np.concatenate(([F[0]], np.diff(F), [1.0 - F[-1]]))
    idx = np.clip(np.searchsorted(edges, flat, side="right"), 0, n_bins + 1)
    # overflow cells 0 and n_bins + 1; the right edge belongs to the last bin
    idx[flat == hi] = n_bins
    labels = block_labels(c, n_blocks)
    counts = np.zeros((n_blocks, n_bins + 2))
    for g in range(n_blocks):
        counts[g] = np.bincount(idx[labels == g].reshape(-1), minlength=n_bins + 2)
    total = counts.sum(axis=0)

    def tv(cnt):
        return 0.5 * float(np.sum(np.abs(cnt / cnt.sum() - tgt)))

    full = tv(total)
    loo = [tv(total - counts[g]) for g in range(n_blocks)]
    return full, float(jackknife_se(loo))


def coupled_run(model, schemes, gamma, refine, n_chains, n_steps, burn_in, seed,
                starts, block_steps=64):
    """Run coarse chains of several schemes on the Brownian path of a fine chain.

    The fine chain is the untamed order-1.5 scheme with step ``h = gamma/refine``
    in its correlated-pair form; fine step ``j`` consumes the normals
    ``(xi_j, w_j)``, with Brownian increment ``sqrt(h) xi_j`` and time
    integral ``h^{3/2}(xi_j/2 + w_j/(2 sqrt 3))``. A coarse step receives the
    aggregated increment ``dW = sum_j sqrt(h) xi_j`` and time integral
    ``sum_j [(W_j - W_0) h + h^{3/2}(xi_j/2 + w_j/(2 sqrt 3))]``.

    Returns ``(fine, coarse)`` where ``fine`` has shape ``(n_chains, n_steps, d)``
    and ``coarse`` maps scheme to an array of the same shape.
    """
    d = model.dim
    h = gamma / refine
    sqrt_h = math.sqrt(h)
    y = np.array(starts, float).reshape(n_chains, d)
    xs = {s: y.copy() for s in schemes}
    fine = np.empty((n_chains, n_steps, d))
    coarse = {s: np.empty((n_chains, n_steps, d)) for s in schemes}
    streams = np.arange(n_chains, dtype=np.uint64)
    counters = np.zeros(n_chains, dtype=np.uint64)
    per_coarse = 2 * refine * d
    total = burn_in + n_steps
    step = 0
    with np.errstate(all="ignore"):
        while step < total:
            nb = min(block_steps, total - step)
            z, counters = standard_normal_streams(seed, streams, counters, nb * per_coarse)
            z = z.reshape(n_chains, nb, refine, 2, d)
            for b in range(nb):
                w_acc = np.zeros((n_chains, d))
                integral = np.zeros((n_chains, d))
                for j in range(refine):
                    xi = z[:, b, j, 0]
                    w = z[:, b, j, 1]
                    integral += w_acc * h + h**1.5 * (0.5 * xi + _INV_2SQRT3 * w)
                    y = hola_update(model, y, h, "correlated_pair", z[:, b, j].reshape(n_chains, 2 * d),
                                    tamed=False)
                    w_acc += sqrt_h * xi
                zbar = w_acc / math.sqrt(gamma)
                wc = (integral / gamma**1.5 - 0.5 * zbar) / _INV_2SQRT3
                pair = np.concatenate([zbar, wc], axis=-1)
                step += 1
                if _diverged(y).any():
                    raise DivergenceError(step)
                for s in schemes:
                    if s in ("hola", "hola_lipschitz"):
                        xs[s] = hola_update(model, xs[s], gamma, "correlated_pair", pair,
                                            tamed=(s == "hola"))
                    else:
                        xs[s] = _advance(s, model, xs[s], gamma, "two_noise", zbar)
                    if _diverged(xs[s]).any():
                        raise DivergenceError(step)
                if step > burn_in:
                    k = step - burn_in - 1
                    fine[:, k] = y
                    for s in schemes:
                        coarse[s][:, k] = xs[s]
    return fine, coarse


def coupled_w2(coarse, fine, n_blocks=20):
    """W2 between the pooled coarse and pooled fine laws, with jackknife s.e."""
    xs, xl = _sorted_with_labels(coarse, n_blocks)
    ys, yl = _sorted_with_labels(fine, n_blocks)
    full = math.sqrt(float(np.mean((xs - ys) ** 2)))
    loo = [
        math.sqrt(float(np.mean((xs[xl != g] - ys[yl != g]) ** 2)))
        for g in range(n_blocks)
    ]
    return full, float(jackknife_se(loo))


def _burn_steps(gamma, burn_time):
    return int(math.ceil(burn_time / gamma))


def sampling_sweep(model, reference, scheme, gammas, metric, steps_per_point, n_chains, seed,
                   burn_time=8.0, n_bins=100, tv_range=None, quantiles=None, equal_time=False,
                   thin_time=None):
    """Stationary bias per step size from plain ensemble sampling.

    Chains start at stratified reference quantiles and discard
    ``burn_time / gamma`` steps. With ``equal_time`` the step budget at each
    gamma scales as ``1/gamma`` so every point covers the same simulated time,
    ``steps_per_point`` being the budget at the largest step size.
    ``thin_time`` keeps one iterate per that much simulated time.
    """
    starts = stratified_start(reference, n_chains)
    quantiles = quantiles or QuantileCache(reference)
    gmax = max(gammas)
    sw = Sweep(scheme, metric)
    for i, g in enumerate(sorted(gammas)):
        budget = steps_per_point * (gmax / g if equal_time else 1.0)
        per_chain = int(math.ceil(budget / n_chains))
        thin = max(1, int(round(thin_time / g))) if thin_time else 1
        samples = simulate_ensemble(model, scheme, g, n_chains, per_chain, _burn_steps(g, burn_time),
                                    seed + i, starts=starts, thin=thin)[..., 0]
        if metric == "w2_1d":
            err, se = pooled_w2(samples, quantiles)
        elif metric == "tv_1d":
            err, se = pooled_tv(samples, reference, n_bins, tv_range)
        else:
            raise ValueError(f"unknown metric {metric!r}")
        sw.points.append(SweepPoint(float(g), err, se, samples.size))
    return sw


def coupled_sweep(model, reference, schemes, gammas, steps_per_point, n_chains, seed,
                  refine=8, burn_time=8.0):
    """Coupled W2 bias per step size for several schemes sharing one fine path."""
    starts = stratified_start(reference, n_chains)
    sweeps = {s: Sweep(s, "w2_coupled") for s in schemes}
    for i, g in enumerate(sorted(gammas)):
        per_chain = int(math.ceil(steps_per_point / n_chains))
        fine, coarse = coupled_run(model, schemes, g, refine, n_chains, per_chain,
                                   _burn_steps(g, burn_time), seed + i, starts)
        for s in schemes:
            err, se = coupled_w2(coarse[s][..., 0], fine[..., 0])
            sweeps[s].points.append(SweepPoint(float(g), err, se, fine[..., 0].size))
    return sweeps
