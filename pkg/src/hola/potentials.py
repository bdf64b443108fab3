"""Target densities proportional to exp(-U) with analytic derivative stacks.

Every model evaluates on a single point of shape ``(d,)`` or on a batch of
shape ``(n, d)``; batching is what lets many chains advance in lock-step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DerivativeStack",
    "ModelConstants",
    "TargetModel",
    "GaussianModel",
    "LogisticModel",
    "DoubleWellModel",
    "LogCoshModel",
    "LogisticDataset",
    "LipschitzEstimate",
    "DerivReport",
    "evaluate",
    "gaussian_model",
    "logistic_model",
    "double_well_model",
    "logcosh_model",
    "finite_diff_check",
    "lipschitz_estimates",
    "load_logistic_csv",
    "spectral_norm",
]


def vector_norm(v):
    """Euclidean norm along the last axis (leaner than np.linalg.norm on tiny arrays)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 1:
        return np.abs(v[..., 0])
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def spectral_norm(mat):
    """Spectral norm of symmetric matrices, batched over leading axes."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape[-1] == 1:
        return np.abs(mat[..., 0, 0])
    return np.abs(np.linalg.eigvalsh(mat)).max(axis=-1)


@dataclass
class DerivativeStack:
    """U and its derivatives at one point (or a batch of points).

    ``energy`` is either the value of U or a zero-argument callable that
    returns it; the callable is evaluated on first access of ``u`` so that
    drift-only consumers never pay for the energy.
    """

    grad: np.ndarray
    hess: np.ndarray
    hess_grad: np.ndarray
    vec_lap_grad: np.ndarray
    energy: object = None

    @property
    def u(self):
        if callable(self.energy):
            self.energy = self.energy()
        return self.energy


@dataclass(frozen=True)
class ModelConstants:
    """Structural constants a model can declare.

    ``m, L1, L2, L`` are the strong-convexity and Lipschitz moduli of the
    Lipschitz theory; ``rho, beta, K, K1, K2`` are the polynomial-growth
    constants of the super-linear theory. Anything unknown stays ``None``.
    """

    m: float | None = None
    L1: float | None = None
    L2: float | None = None
    L: float | None = None
    rho: float | None = None
    beta: float | None = None
    K: float | None = None
    K1: float | None = None
    K2: float | None = None

    @property
    def lipschitz(self):
        return self.m is not None and self.L1 is not None and self.m > 0

    @property
    def has_growth(self):
        return None not in (self.rho, self.K, self.K1, self.K2)


class TargetModel:
    """Base class: subclasses implement ``energy`` and ``derivatives``."""

    name = "model"

    def __init__(self, dim, minimizer_hint=None, constants=None):
        if int(dim) < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)
        self.minimizer_hint = None if minimizer_hint is None else np.asarray(minimizer_hint, float)
        self.constants = constants or ModelConstants()

    def energy(self, x):
        raise NotImplementedError

    def derivatives(self, x):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


def _check_point(model, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != model.dim:
        raise ValueError(f"expected points of dimension {model.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point has non-finite coordinates")
    return x


def evaluate(model, x):
    """Full derivative stack of ``model`` at ``x`` after argument checks."""
    return model.derivatives(_check_point(model, x))


class GaussianModel(TargetModel):
    name = "gaussian"

    def __init__(self, mean, precision):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        precision = np.atleast_2d(np.asarray(precision, dtype=float))
        d = mean.shape[0]
        if precision.shape != (d, d):
            raise ValueError(f"precision must be {d}x{d}")
        if not np.allclose(precision, precision.T, rtol=1e-12, atol=0.0):
            raise ValueError("precision must be symmetric")
        evals = np.linalg.eigvalsh(precision)
        if evals[0] <= 0:
            raise ValueError("precision must be positive definite")
        self.mean = mean
        self.precision = precision
        self._prec2 = precision @ precision
        lam_max = float(evals[-1])
        # polynomial-growth constants: third derivatives vanish, rows of A bound the rest
        k1 = max(float(np.linalg.norm(precision, axis=1).max()), 1e-300)
        k2 = max(k1, float(np.abs(precision @ mean).max()))
        consts = ModelConstants(m=float(evals[0]), L1=lam_max, rho=2.0, beta=1.0, K=k1, K1=k1, K2=k2)
        super().__init__(d, minimizer_hint=mean.copy(), constants=consts)

    def energy(self, x):
        y = np.asarray(x, float) - self.mean
        return 0.5 * np.einsum("...i,ij,...j->...", y, self.precision, y)

    def derivatives(self, x):
        x = np.asarray(x, float)
        y = x - self.mean
        grad = y @ self.precision
        hess = np.broadcast_to(self.precision, x.shape[:-1] + self.precision.shape).copy()
        return DerivativeStack(
            energy=lambda: 0.5 * np.einsum("...i,...i->...", y, grad),
            grad=grad,
            hess=hess,
            hess_grad=y @ self._prec2,
            vec_lap_grad=np.zeros_like(x),
        )


def gaussian_model(mean, precision):
    """U(x) = (x - mean)^T precision (x - mean) / 2."""
    return GaussianModel(mean, precision)


class DoubleWellModel(TargetModel):
    name = "double_well"

    def __init__(self, dim=1):
        # third-derivative tensor 2(d_jk x_i + d_ik x_j + d_ij x_k) has norm <= 6|x|
        consts = ModelConstants(rho=2.0, beta=1.0, K=6.0, K1=6.0, K2=6.0)
        super().__init__(dim, constants=consts)

    def energy(self, x):
        r2 = np.sum(np.square(x), axis=-1)
        return 0.25 * r2 * r2 - 0.5 * r2

    def derivatives(self, x):
        x = np.asarray(x, float)
        d = self.dim
        r2 = np.sum(x * x, axis=-1)[..., None]
        grad = (r2 - 1.0) * x
        hess = (r2[..., None] - 1.0) * np.eye(d) + 2.0 * x[..., :, None] * x[..., None, :]
        return DerivativeStack(
            energy=lambda: self.energy(x),
            grad=grad,
            hess=hess,
            hess_grad=(r2 - 1.0) * (3.0 * r2 - 1.0) * x,
            vec_lap_grad=(2.0 * d + 4.0) * x,
        )


def double_well_model(dim=1):
    """U(x) = |x|^4/4 - |x|^2/2: super-linear gradient, not convex."""
    return DoubleWellModel(dim)


def _sech_tanh(x):
    e = np.exp(-2.0 * np.abs(x))
    sech2 = 4.0 * e / (1.0 + e) ** 2
    return sech2, np.tanh(x)


class LogCoshModel(TargetModel):
    name = "logcosh"

    def __init__(self):
        # |U'''| peaks at 2 sech^2 tanh = 4/(3 sqrt 3); |U''''| peaks at 2 (x = 0)
        consts = ModelConstants(
            m=1.0, L1=2.0, L2=4.0 / (3.0 * math.sqrt(3.0)), L=2.0,
            rho=2.0, beta=1.0, K=2.0, K1=2.0, K2=2.0,
        )
        super().__init__(1, minimizer_hint=np.zeros(1), constants=consts)

    def energy(self, x):
        x = np.asarray(x, float)[..., 0]
        a = np.abs(x)
        return 0.5 * x * x + a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)

    def derivatives(self, x):
        x = np.asarray(x, float)
        sech2, tanh = _sech_tanh(x)
        grad = x + tanh
        h = 1.0 + sech2
        return DerivativeStack(
            energy=lambda: self.energy(x),
            grad=grad,
            hess=h[..., None],
            hess_grad=h * grad,
            vec_lap_grad=-2.0 * sech2 * tanh,
        )


def logcosh_model():
    """U(x) = x^2/2 + log cosh x on the real line (m = 1, L1 = 2)."""
    return LogCoshModel()


@dataclass
class LogisticDataset:
    """Features, 0/1 labels and the prior scale ``c`` of a logistic posterior."""

    features: np.ndarray
    labels: np.ndarray
    prior_scale: float = 1.0

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        n = self.features.shape[0]
        if self.labels.shape[0] != n:
            raise ValueError("features and labels disagree on the number of rows")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise ValueError("labels must be exactly 0 or 1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if not self.prior_scale > 0:
            raise ValueError("prior_scale must be positive")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def second_moment(self):
        """Sigma_X = (1/n) sum x_i x_i^T."""
        X = self.features
        return X.T @ X / self.n


def load_logistic_csv(path, prior_scale=1.0):
    """Read ``y,x1,...,xd`` rows into a :class:`LogisticDataset`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if not header or header[0] != "y" or len(header) < 2:
            raise ValueError("header must be 'y,x1,...,xd'")
        expected = ["y"] + [f"x{i}" for i in range(1, len(header))]
        if header != expected:
            raise ValueError(f"header must be {','.join(expected)}")
        ys, xs = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields")
            label = row[0].strip()
            if label not in ("0", "1"):
                raise ValueError(f"line {lineno}: label must be 0 or 1, got {label!r}")
            ys.append(int(label))
            xs.append([float(v) for v in row[1:]])
    if not ys:
        raise ValueError("dataset has no rows")
    return LogisticDataset(np.array(xs), np.array(ys, dtype=float), prior_scale)


def _sigmoid_parts(t):
    # e = exp(-|t|) never overflows; both branches of the sigmoid reuse it
    e = np.exp(-np.abs(t))
    s = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    ds = e / (1.0 + e) ** 2
    d2s = -ds * np.sign(t) * (1.0 - e) / (1.0 + e)
    return s, ds, d2s


@dataclass
class LipschitzEstimate:
    """Moduli (m, L1, L2, L, d) for a logistic posterior."""

    m: float
    L1: float
    L2: float
    L: float
    d: int
    strongly_convex: bool = field(default=True)

    def derive(self):
        """Full constant set; needs ``m > 0``."""
        from .constants import derive_constants

        if not self.strongly_convex:
            raise ValueError("not strongly convex: m = 0")
        return derive_constants(self.m, self.L1, self.L2, self.L, self.d)


def lipschitz_estimates(data):
    """Closed-form m, L1, L2, L bounds for the logistic posterior."""
    X = data.features
    n = data.n
    c = data.prior_scale
    norms = np.linalg.norm(X, axis=1)
    outer = norms**2  # spectral norm of the rank-one x x^T
    L1 = (c + n) * float(outer.max())
    L2 = 3.0 * n * float((norms * outer).max())
    L = 13.0 * n * float((np.abs(X).max(axis=1) * norms * outer).max())
    lam_min = float(np.linalg.eigvalsh(data.second_moment)[0])
    if lam_min <= 0:
        return LipschitzEstimate(0.0, L1, L2, L, data.dim, strongly_convex=False)
    return LipschitzEstimate(c * lam_min, L1, L2, L, data.dim)


class LogisticModel(TargetModel):
    name = "logistic"

    def __init__(self, data):
        self.data = data
        self._sigma = data.second_moment
        self._sq = np.sum(data.features**2, axis=1)
        est = lipschitz_estimates(data)
        consts = ModelConstants(
            m=est.m if est.strongly_convex else None, L1=est.L1, L2=est.L2, L=est.L
        )
        super().__init__(data.dim, constants=consts)

    def energy(self, theta):
        theta = np.asarray(theta, float)
        X, y, c = self.data.features, self.data.labels, self.data.prior_scale
        t = theta @ X.T
        prior = 0.5 * c * np.einsum("...i,ij,...j->...", theta, self._sigma, theta)
        return prior + np.sum(np.logaddexp(0.0, t) - y * t, axis=-1)

    def derivatives(self, theta):
        theta = np.asarray(theta, float)
        X, y, c = self.data.features, self.data.labels, self.data.prior_scale
        t = theta @ X.T
        s, ds, d2s = _sigmoid_parts(t)
        grad = c * theta @ self._sigma + (s - y) @ X
        hess = c * self._sigma + np.einsum("...n,ni,nj->...ij", ds, X, X)
        return DerivativeStack(
            energy=lambda: self.energy(theta),
            grad=grad,
            hess=hess,
            hess_grad=np.einsum("...ij,...j->...i", hess, grad),
            vec_lap_grad=(d2s * self._sq) @ X,
        )


def logistic_model(data):
    """Posterior of logistic regression under a N(0, (c Sigma_X)^-1) prior."""
    return LogisticModel(data)


@dataclass
class DerivReport:
    """Relative discrepancies |numeric - analytic| / (1 + |analytic|)."""

    grad: float
    hess: float
    vec_lap_grad: float
    hess_grad: float
    tol: float = 1e-4

    @property
    def passed(self):
        errs = (self.grad, self.hess, self.vec_lap_grad, self.hess_grad)
        return all(np.isfinite(e) and e <= self.tol for e in errs)


def _rel(num, ana):
    num = np.asarray(num, float)
    ana = np.asarray(ana, float)
    if not (np.all(np.isfinite(num)) and np.all(np.isfinite(ana))):
        return math.inf
    return float(np.max(np.abs(num - ana)) / (1.0 + np.max(np.abs(ana))))


def finite_diff_check(model, x, h=None, tol=1e-4):
    """Certify the analytic stack at ``x`` against central differences.

    The gradient is differenced from U, the Hessian from the analytic
    gradient and the vector Laplacian from the analytic Hessian, so each
    level is checked against the level below it.
    """
    x = _check_point(model, x).reshape(-1)
    d = model.dim
    if h is None:
        h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
    elif not 0 < h <= 1e-2:
        raise ValueError("step h must lie in (0, 1e-2]")
    stack = model.derivatives(x)
    eye = np.eye(d) * h
    plus = x + eye
    minus = x - eye
    grad_fd = (model.energy(plus) - model.energy(minus)) / (2 * h)
    sp = model.derivatives(plus)
    sm = model.derivatives(minus)
    hess_fd = ((sp.grad - sm.grad) / (2 * h)).T
    # d/dx_u of H[u, i], summed over u
    vl_fd = np.einsum("uui->i", (sp.hess - sm.hess) / (2 * h))
    return DerivReport(
        grad=_rel(grad_fd, stack.grad),
        hess=_rel(hess_fd, stack.hess),
        vec_lap_grad=_rel(vl_fd, stack.vec_lap_grad),
        hess_grad=_rel(stack.hess @ stack.grad, stack.hess_grad),
        tol=tol,
    )
