"""Distances, closed-form oracles, moment envelopes and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

__all__ = [
    "gaussian_w2",
    "w2_1d",
    "w2_two_sample_1d",
    "tv_1d",
    "QuadratureReference",
    "adaptive_simpson",
    "stationary_variance_oracle",
    "stationary_covariance_oracle",
    "MomentEnvelope",
    "moment_envelope",
    "RateFit",
    "fit_rate",
    "jackknife_se",
    "block_labels",
]


def _psd_sqrt(S):
    evals, evecs = np.linalg.eigh(S)
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def _check_psd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=1e-10, atol=1e-14):
        raise ValueError(f"{name} must be a symmetric matrix")
    scale = max(1.0, float(np.abs(S).max()))
    if np.linalg.eigvalsh(S)[0] < -1e-12 * scale:
        raise ValueError(f"{name} must be positive semidefinite")
    return S


def gaussian_w2(m1, S1, m2, S2):
    """Wasserstein-2 distance between N(m1, S1) and N(m2, S2)."""
    S1 = _check_psd(S1, "S1")
    S2 = _check_psd(S2, "S2")
    m1 = np.atleast_1d(np.asarray(m1, float))
    m2 = np.atleast_1d(np.asarray(m2, float))
    r2 = _psd_sqrt(S2)
    cross = _psd_sqrt(r2 @ S1 @ r2)
    val = float(np.sum((m1 - m2) ** 2) + np.trace(S1 + S2 - 2.0 * cross))
    return math.sqrt(max(val, 0.0))


def w2_1d(samples, target_quantile):
    """W2 between an empirical 1-D law and a target given by its quantile function.

    Uses the monotone coupling sample_(k) <-> Q((k - 1/2) / N).
    """
    x = np.sort(np.asarray(samples, float).reshape(-1))
    n = x.size
    q = np.asarray(target_quantile((np.arange(n) + 0.5) / n), float)
    return math.sqrt(float(np.mean((x - q) ** 2)))


def w2_two_sample_1d(a, b):
    """W2 between two empirical 1-D laws with the same number of atoms."""
    a = np.sort(np.asarray(a, float).reshape(-1))
    b = np.sort(np.asarray(b, float).reshape(-1))
    if a.size != b.size:
        raise ValueError("samples must have equal size")
    return math.sqrt(float(np.mean((a - b) ** 2)))


def tv_1d(samples, target_cdf, n_bins, range):
    """Histogram plug-in total variation against a 1-D target CDF.

    Mass outside ``range`` is compared in two overflow cells so that the
    result is the TV distance between the two binned laws.
    """
    if n_bins < 10:
        raise ValueError("n_bins must be at least 10")
    lo, hi = float(range[0]), float(range[1])
    edges = np.linspace(lo, hi, n_bins + 1)
    x = np.asarray(samples, float).reshape(-1)
    counts = np.histogram(x, bins=edges)[0]
    emp = np.concatenate(([np.sum(x < lo)], counts, [np.sum(x > hi)])) / x.size
    F = np.asarray(target_cdf(edges), float)
    tgt = np.concatenate(([F[0]], np.diff(F), [1.0 - F[-1]]))
    return float(0.5 * np.sum(np.abs(emp - tgt)))


def adaptive_simpson(f, a, b, tol=1e-13, max_depth=50):
    """Integrate a scalar function on [a, b] by adaptive Simpson quadrature."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth + 1) + recurse(
            m, b, fm, frm, fb, right, tol / 2, depth + 1
        )

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class QuadratureReference:
    """CDF, density and quantiles of a 1-D law proportional to exp(-U).

    The unnormalised density is integrated panel by panel with adaptive
    Simpson quadrature; partial panels use 8-point Gauss-Legendre.
    Quantiles are refined by Newton steps on the CDF (or on the survival
    function in the upper half, to keep tail precision).
    """

    def __init__(self, energy, lo=None, hi=None, n_panels=4000, cutoff=60.0, rtol=1e-10):
        self._energy = energy
        if lo is None or hi is None:
            lo, hi = self._support(cutoff)
        self.lo, self.hi = float(lo), float(hi)
        grid = np.linspace(self.lo, self.hi, 20001)
        self._shift = float(np.min(energy(grid[:, None])))
        self.nodes = np.linspace(self.lo, self.hi, n_panels + 1)
        f = self._unnorm_scalar
        panel = np.array([
            adaptive_simpson(f, a, b, tol=1e-16)
            for a, b in zip(self.nodes[:-1], self.nodes[1:])
        ])
        self.norm = float(panel.sum())
        left = np.concatenate(([0.0], np.cumsum(panel)))
        right = np.concatenate((np.cumsum(panel[::-1])[::-1], [0.0]))
        self._cdf_nodes = left / self.norm
        self._sf_nodes = right / self.norm
        self.rtol = rtol

    def _support(self, cutoff):
        grid = np.linspace(-50.0, 50.0, 100001)
        u = self._energy(grid[:, None])
        inside = grid[u - u.min() <= cutoff]
        return inside[0] - 0.5, inside[-1] + 0.5

    def _unnorm(self, x):
        x = np.asarray(x, float)
        return np.exp(-(self._energy(x[..., None]) - self._shift))

    def _unnorm_scalar(self, x):
        return float(self._unnorm(np.array(x)))

    def pdf(self, x):
        return self._unnorm(x) / self.norm

    def _partial(self, x, from_left=True):
        x = np.clip(np.asarray(x, float), self.lo, self.hi)
        h = self.nodes[1] - self.nodes[0]
        k = np.clip(((x - self.lo) // h).astype(int), 0, self.nodes.size - 2)
        a = self.nodes[k]
        b = self.nodes[k + 1]
        if from_left:
            lo, hi = a, x
        else:
            lo, hi = x, b
        half = 0.5 * (hi - lo)
        pts = (0.5 * (hi + lo))[..., None] + half[..., None] * _GL_NODES
        integ = half * (self._unnorm(pts) @ _GL_WEIGHTS) / self.norm
        if from_left:
            return self._cdf_nodes[k] + integ
        return self._sf_nodes[k + 1] + integ

    def cdf(self, x):
        x = np.asarray(x, float)
        out = self._partial(x, True)
        return np.where(x <= self.lo, 0.0, np.where(x >= self.hi, 1.0, out))

    def sf(self, x):
        x = np.asarray(x, float)
        out = self._partial(x, False)
        return np.where(x <= self.lo, 1.0, np.where(x >= self.hi, 0.0, out))

    def quantile(self, u, newton_steps=3, chunk=1 << 17):
        u = np.asarray(u, float)
        if u.size > chunk:
            flat = u.reshape(-1)
            out = np.concatenate([
                self._quantile(flat[i : i + chunk], newton_steps)
                for i in range(0, flat.size, chunk)
            ])
            return out.reshape(u.shape)
        return self._quantile(u, newton_steps)

    def _quantile(self, u, newton_steps):
        x = np.empty_like(u)
        for upper in (False, True):
            sel = (u > 0.5) if upper else (u <= 0.5)
            if not sel.any():
                continue
            if upper:
                target = 1.0 - u[sel]
                xs = np.interp(-target, -self._sf_nodes, self.nodes)
            else:
                target = u[sel]
                xs = np.interp(target, self._cdf_nodes, self.nodes)
            for _ in range(newton_steps):
                mass = self._partial(xs, not upper)
                dens = self.pdf(xs)
                resid = mass - target
                # survival decreases in x, the CDF increases
                step = np.where(dens > 0, resid / np.where(dens > 0, dens, 1.0), 0.0)
                xs = np.clip(xs + step if upper else xs - step, self.lo, self.hi)
            x[sel] = xs
        return x

    def moment(self, k):
        xs = np.linspace(self.lo, self.hi, 200001)
        w = self.pdf(xs) * xs**k
        return float(np.trapezoid(w, xs))


def _lyapunov_coefficients(a, gamma, scheme):
    if scheme == "hola_lipschitz":
        return 1.0 - gamma * a + 0.5 * (gamma * a) ** 2, 1.0 - gamma * a + (gamma * a) ** 2 / 3.0
    if scheme == "ula":
        return 1.0 - gamma * a, 1.0
    raise ValueError(f"no linear oracle for scheme {scheme!r}")


def stationary_variance_oracle(a, gamma, scheme):
    """Stationary variance of a scheme on the 1-D target U = a x^2 / 2.

    The chain is linear, y' = B y + sqrt(2 gamma) sigma Z, so the variance is
    the fixed point Sigma = B^2 Sigma + 2 gamma sigma^2.
    """
    if not a > 0:
        raise ValueError("curvature must be positive")
    B, s2 = _lyapunov_coefficients(a, gamma, scheme)
    if abs(B) >= 1.0:
        raise ValueError(f"step size {gamma} makes the linear recursion unstable (|B| = {abs(B):.6g})")
    return 2.0 * gamma * s2 / (1.0 - B * B)


def stationary_covariance_oracle(precision, gamma, scheme):
    """Stationary covariance on a Gaussian target with the given precision."""
    A = np.atleast_2d(np.asarray(precision, float))
    eye = np.eye(A.shape[0])
    if scheme == "hola_lipschitz":
        B = eye - gamma * A + 0.5 * gamma**2 * A @ A
        Q = 2.0 * gamma * (eye - gamma * A + gamma**2 / 3.0 * A @ A)
    elif scheme == "ula":
        B = eye - gamma * A
        Q = 2.0 * gamma * eye
    else:
        raise ValueError(f"no linear oracle for scheme {scheme!r}")
    if np.max(np.abs(np.linalg.eigvals(B))) >= 1.0:
        raise ValueError(f"step size {gamma} makes the linear recursion unstable")
    S = linalg.solve_discrete_lyapunov(B, Q)
    return 0.5 * (S + S.T)


def block_labels(n_chains, n_blocks=20):
    """Assign chains to ``n_blocks`` equal contiguous groups."""
    if n_chains % n_blocks:
        raise ValueError(f"{n_chains} chains do not split into {n_blocks} equal blocks")
    return np.repeat(np.arange(n_blocks), n_chains // n_blocks)


def jackknife_se(leave_one_out):
    """Standard error from leave-one-block-out replicates."""
    r = np.asarray(leave_one_out, float)
    g = r.shape[0]
    return np.sqrt((g - 1) / g * np.sum((r - r.mean(axis=0)) ** 2, axis=0))


@dataclass
class MomentEnvelope:
    n_grid: np.ndarray
    empirical_m2: np.ndarray
    empirical_m4: np.ndarray
    bound_m2: np.ndarray
    bound_m4: np.ndarray
    se_m2: np.ndarray
    se_m4: np.ndarray

    @property
    def violations(self):
        return int(np.sum(self.empirical_m2 > self.bound_m2) + np.sum(self.empirical_m4 > self.bound_m4))


def moment_envelope(samples, steps, consts, gamma, x_star, x0, n_blocks=20, running=False):
    """Second and fourth moments of |X_n - x*| against their envelopes.

    ``samples`` has shape ``(chains, len(steps), d)``; every chain starts at
    ``x0``. Envelopes are (1 - m~ gamma)^(n+1) |x0 - x*|^2 + q1/m~ and
    (1 - m~ gamma/8)^(n+1) |x0 - x*|^4 + 8 q2/m~.

    With ``running=True`` the empirical moment at ``n`` is the running mean
    over all logged iterates up to ``n`` (and over chains). Standard errors
    are jackknife over ``n_blocks`` groups of chains and are NaN when there
    are fewer chains than blocks.
    """
    consts.check_gamma(gamma)
    x_star = np.asarray(x_star, float)
    r = np.linalg.norm(np.asarray(samples, float) - x_star, axis=-1)
    r2, r4 = r**2, r**4
    if running:
        count = np.arange(1, r.shape[1] + 1)
        r2 = np.cumsum(r2, axis=1) / count
        r4 = np.cumsum(r4, axis=1) / count
    n = np.asarray(steps)
    mt = consts.m_tilde
    d0 = float(np.linalg.norm(np.asarray(x0, float) - x_star))
    bound_m2 = (1.0 - mt * gamma) ** (n + 1) * d0**2 + consts.q1 / mt
    bound_m4 = (1.0 - mt * gamma / 8.0) ** (n + 1) * d0**4 + 8.0 * consts.q2 / mt
    if r.shape[0] >= n_blocks and r.shape[0] % n_blocks == 0:
        labels = block_labels(r.shape[0], n_blocks)
        se_m2 = jackknife_se([r2[labels != g].mean(axis=0) for g in range(n_blocks)])
        se_m4 = jackknife_se([r4[labels != g].mean(axis=0) for g in range(n_blocks)])
    else:
        se_m2 = se_m4 = np.full(n.shape, np.nan)
    return MomentEnvelope(
        n_grid=n,
        empirical_m2=r2.mean(axis=0),
        empirical_m4=r4.mean(axis=0),
        bound_m2=bound_m2,
        bound_m4=bound_m4,
        se_m2=se_m2,
        se_m4=se_m4,
    )


@dataclass
class RateFit:
    points: list
    slope: float
    intercept: float
    r2: float


def fit_rate(points):
    """Least-squares line through (log gamma, log error)."""
    pts = [(float(g), float(e)) for g, e in points]
    if len(pts) < 3:
        raise ValueError("need at least three (gamma, error) points")
    g = np.array([p[0] for p in pts])
    e = np.array([p[1] for p in pts])
    if np.any(g <= 0) or len(set(g)) != len(g):
        raise ValueError("step sizes must be positive and distinct")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be positive and finite")
    lx, ly = np.log(g), np.log(e)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(pts, float(slope), float(intercept), r2)
