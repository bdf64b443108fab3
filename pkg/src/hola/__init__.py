"""Tamed order-1.5 Langevin sampling with exact bias diagnostics.

Modules
-------
potentials   target energies with gradient, Hessian and third-order terms
taming       step-size dependent coefficient taming
samplers     one-step kernels and chain drivers (hola, hola_lipschitz, ula, tula)
diagnostics  W2/TV estimators, Lyapunov oracles, moment envelopes, rate fits
experiments  step-size sweeps, including the coupled fine/coarse estimator
constants    explicit constants, step-size range and mixing-time plans
rng          counter-based reproducible normal streams
cli          command line runner
"""

from .constants import derive_constants, mixing_time, wasserstein_bound
from .diagnostics import fit_rate, gaussian_w2, stationary_variance_oracle, tv_1d, w2_1d
from .potentials import double_well_model, gaussian_model, logcosh_model, logistic_model
from .rng import RandomStream
from .samplers import (
    ChainState,
    DivergenceError,
    PreconditionError,
    SamplerConfig,
    hola_lipschitz_step,
    hola_step,
    run_chain,
    run_chains,
    tula_step,
    ula_step,
)

__version__ = "0.1.0"
