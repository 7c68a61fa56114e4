"""Latent mediator trajectory model.

The mediator follows a linear mixed model on natural cubic spline
bases:

    M(t) = (beta0 + r0) + beta1'x + beta2'w
           + sum_k (alpha_k + psi_k'x) B_k(t) + sum_k r_k Br_k(t)

with x the treatment/confounder design (A, I(U=1), I(U=2), A*I(U=1),
A*I(U=2)), w the baseline-covariate design, and r a 4-dimensional
zero-mean Gaussian random effect whose first coordinate doubles as the
hazard frailty. Observations are the trajectory plus N(0, sigma^2)
noise. Trajectories are materialized as piecewise cubics on the merged
knot grid of the two bases so downstream integrals are exact.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import core
from .basis import SplineBasis, make_population_basis, make_random_effect_basis
from .errors import InvalidInput

X_DIM = 5
R_DIM = 4
POP_DIM = 4
RAN_DIM = 3

LOG_2PI = float(np.log(2.0 * np.pi))


def _vec(name, value, length=None):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise InvalidInput(f"{name} must be a vector")
    if length is not None and len(arr) != length:
        raise InvalidInput(f"{name} must have length {length}, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class MediatorParams:
    beta0: float
    beta1: np.ndarray  # (5,) over the x design
    beta2: np.ndarray  # (|W|,) over the baseline-covariate design
    alpha: np.ndarray  # (4,) population spline coefficients
    psi: np.ndarray  # (4, 5) spline-by-x interactions
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "beta1", _vec("beta1", self.beta1, X_DIM))
        object.__setattr__(self, "beta2", _vec("beta2", self.beta2))
        object.__setattr__(self, "alpha", _vec("alpha", self.alpha, POP_DIM))
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != (POP_DIM, X_DIM):
            raise InvalidInput(f"psi must be {POP_DIM}x{X_DIM}, got {psi.shape}")
        if not np.all(np.isfinite(psi)):
            raise InvalidInput("psi must be finite")
        object.__setattr__(self, "psi", psi)
        if not np.isfinite(self.beta0):
            raise InvalidInput("beta0 must be finite")
        # sigma == 0 is allowed for noise-free simulation; the likelihood
        # itself requires a proper density and rejects it
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidInput("sigma must be nonnegative")


@dataclass(frozen=True)
class RandomEffects:
    r: np.ndarray  # (4,)

    def __post_init__(self):
        object.__setattr__(self, "r", _vec("r", self.r, R_DIM))


@dataclass(frozen=True)
class RandomEffectsLaw:
    covariance: np.ndarray  # (4, 4) symmetric positive definite
    cholesky: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (R_DIM, R_DIM) or not np.all(np.isfinite(cov)):
            raise InvalidInput("covariance must be a finite 4x4 matrix")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise InvalidInput("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InvalidInput("covariance must be positive definite") from None
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "cholesky", chol)


@dataclass(frozen=True)
class LongitudinalRecord:
    subject_id: str
    t: float
    m_obs: float

    def __post_init__(self):
        if not (np.isfinite(self.t) and self.t >= 0):
            raise InvalidInput("record time must be finite and nonnegative")
        if not np.isfinite(self.m_obs):
            raise InvalidInput("record measurement must be finite")


def x_design(a, u_level):
    """The x vector for treatment arm ``a`` and confounder level ``u_level``."""
    if a not in (0, 1):
        raise InvalidInput(f"arm must be 0 or 1, got {a!r}")
    if u_level not in (0, 1, 2):
        raise InvalidInput(f"confounder level must be 0, 1 or 2, got {u_level!r}")
    u1 = 1.0 if u_level == 1 else 0.0
    u2 = 1.0 if u_level == 2 else 0.0
    return np.array([float(a), u1, u2, a * u1, a * u2])


def _shift_cubic(c, d):
    """Re-center cubic coefficients from expansion point x0 to x0 + d."""
    return np.array(
        [
            c[0] + d * (c[1] + d * (c[2] + d * c[3])),
            c[1] + d * (2.0 * c[2] + d * 3.0 * c[3]),
            c[2] + d * 3.0 * c[3],
            c[3],
        ]
    )


def _resample_pp(src_breaks, src_coefs, new_breaks):
    """Express a pp family on a refined break grid (exact for piecewise cubics)."""
    nb = src_coefs.shape[0]
    out = np.zeros((nb, len(new_breaks) - 1, 4))
    for p in range(len(new_breaks) - 1):
        a = new_breaks[p]
        mid = 0.5 * (a + new_breaks[p + 1])
        sp = int(np.clip(np.searchsorted(src_breaks, mid, side="right") - 1, 0, len(src_breaks) - 2))
        d = a - src_breaks[sp]
        for k in range(nb):
            out[k, p] = _shift_cubic(src_coefs[k, sp], d)
    return out


@dataclass(frozen=True)
class TrajectoryFamily:
    """Both spline bases re-expressed on one shared break grid."""

    population: SplineBasis
    random: SplineBasis
    breaks: np.ndarray = field(repr=False, compare=False)
    pop_coefs: np.ndarray = field(repr=False, compare=False)  # (4, P, 4)
    ran_coefs: np.ndarray = field(repr=False, compare=False)  # (3, P, 4)


def make_family(population=None, random=None):
    pop = population if population is not None else make_population_basis()
    ran = random if random is not None else make_random_effect_basis()
    breaks = np.unique(np.concatenate([pop.breaks, ran.breaks]))
    return TrajectoryFamily(
        population=pop,
        random=ran,
        breaks=breaks,
        pop_coefs=_resample_pp(pop.breaks, pop.coefs, breaks),
        ran_coefs=_resample_pp(ran.breaks, ran.coefs, breaks),
    )


@lru_cache(maxsize=1)
def default_family():
    return make_family()


@dataclass(frozen=True)
class Trajectory:
    """A realized mediator path M(t), stored as a piecewise cubic."""

    breaks: np.ndarray
    coefs: np.ndarray  # (P, 4)

    def __call__(self, t):
        return core.ppoly_eval(self.breaks, self.coefs, t)

    @property
    def baseline_value(self):
        return float(self(0.0))

    def delta_coefs(self):
        """pp coefficients of M(t) - M(0) on the same breaks."""
        c = self.coefs.copy()
        c[:, 0] -= self.baseline_value
        return c


def spline_coefficients(p: MediatorParams, x):
    """Population spline coefficients alpha_k + psi_k'x for a given x."""
    x = _vec("x", x, X_DIM)
    return p.alpha + p.psi @ x


def make_trajectory(p: MediatorParams, x, w, r, family=None) -> Trajectory:
    fam = family if family is not None else default_family()
    x = _vec("x", x, X_DIM)
    w = _vec("w", w, len(p.beta2)) if len(p.beta2) else np.zeros(0)
    rr = r.r if isinstance(r, RandomEffects) else _vec("r", r, R_DIM)
    coefs = np.einsum("k,kpc->pc", spline_coefficients(p, x), fam.pop_coefs)
    coefs += np.einsum("k,kpc->pc", rr[1:], fam.ran_coefs)
    const = p.beta0 + rr[0] + float(p.beta1 @ x)
    if len(p.beta2):
        const += float(p.beta2 @ w)
    coefs[:, 0] += const
    return Trajectory(breaks=fam.breaks, coefs=coefs)


def trajectory_value(p: MediatorParams, x, w, r, t):
    """M(t) for one subject; deterministic in all arguments."""
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InvalidInput("trajectory time must be finite and nonnegative")
    return float(make_trajectory(p, x, w, r)(t))


def longitudinal_loglik(p: MediatorParams, x, w, r, records):
    """Gaussian log likelihood of the observed measurements."""
    if not records:
        return 0.0
    if p.sigma == 0.0:
        raise InvalidInput("sigma must be positive to evaluate a likelihood")
    traj = make_trajectory(p, x, w, r)
    t = np.array([rec.t for rec in records])
    m = np.array([rec.m_obs for rec in records])
    resid = m - traj(t)
    n = len(records)
    return float(-0.5 * n * LOG_2PI - n * np.log(p.sigma) - 0.5 * np.sum(resid**2) / p.sigma**2)


def sample_random_effects(law: RandomEffectsLaw, seed) -> RandomEffects:
    """One multinormal draw via the Cholesky factor; deterministic per seed."""
    rng = np.random.default_rng(seed)
    return RandomEffects(r=law.cholesky @ rng.standard_normal(R_DIM))


def sample_random_effects_batch(law: RandomEffectsLaw, n, seed, antithetic=False):
    """(n, 4) matrix of draws; with antithetic pairing rows 2j, 2j+1 are z, -z."""
    rng = np.random.default_rng(seed)
    if antithetic:
        half = (n + 1) // 2
        z = rng.standard_normal((half, R_DIM))
        z = np.stack([z, -z], axis=1).reshape(2 * half, R_DIM)[:n]
    else:
        z = rng.standard_normal((n, R_DIM))
    return z @ law.cholesky.T
