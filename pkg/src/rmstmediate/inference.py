"""Bayesian estimation of the joint longitudinal-survival model.

The posterior factorizes per subject into a longitudinal Gaussian term,
a survival term and a random-effects density, times priors.  Sampling
is adaptive random-walk Metropolis-within-Gibbs: scalar parameters are
updated one coordinate at a time with per-coordinate proposal scales
tuned during burn-in (Robbins-Monro toward the target acceptance rate,
frozen afterwards), and the per-subject random-effect vectors are
updated in one vectorized pass since their full conditionals are
independent across subjects.

Unconstrained internal parameterization: log for the residual SD, the
hazard levels and the random-effect SDs; the random-effect correlation
factor through canonical partial correlations on the atanh scale.  All
change-of-variable Jacobians are included, so ``log_posterior`` is a
density over the unconstrained coordinates exposed by
``ParameterLayout``.

The confounder model shares no parameters with the joint model and is
estimated separately by the same sampler family.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import core
from .basis import eval_basis
from .confounder import ConfounderParams, MarginalPair, confounder_probs, p11_bounds
from .effects import (
    COMPONENTS,
    ModelParams,
    decompose,
    delta_coefs_batch,
    legacy_basis_weights,
)
from .errors import (
    InfeasibleStratum,
    InvalidInput,
    MonotonicityInfeasible,
    OrphanRecord,
)
from .mediator import (
    MediatorParams,
    RandomEffectsLaw,
    default_family,
    x_design,
)
from .survival import THREE_YEAR_LEGACY, PiecewiseHazard, SurvivalParams

LAYOUT_VERSION = 1
R_DIM = 4
X_DIM = 5
POP_DIM = 4
_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_SETTINGS = {
    "chains": 4,
    "burn_in": 2000,
    "samples": 2000,
    "thin": 1,
    "seed": 0,
    "target_accept": 0.30,
    "init_jitter": 0.05,
    "store_re": True,
}


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the default prior family."""

    regression_sd: float = 5.0
    baseline_shape: float = 0.5
    baseline_rate: float = 0.5
    scale_cauchy: float = 10.0
    lkj_eta: float = 1.0

    def __post_init__(self):
        for name in (
            "regression_sd",
            "baseline_shape",
            "baseline_rate",
            "scale_cauchy",
            "lkj_eta",
        ):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidInput(f"{name} must be positive")


class Dataset:
    """Cohort data in columnar form for vectorized likelihood work.

    ``subjects`` is any sequence of records exposing subject_id, arm,
    u_level, w, exit_time and event; ``records`` are longitudinal
    measurements keyed by subject_id.  ``n_w`` is only needed when the
    subject list is empty (prior-only runs).
    """

    def __init__(self, subjects, records=(), n_w=None, family=None):
        fam = family if family is not None else default_family()
        subjects = list(subjects)
        self.ids = tuple(s.subject_id for s in subjects)
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInput("duplicate subject ids")
        self.n = len(subjects)
        if self.n:
            widths = {len(s.w) for s in subjects}
            if len(widths) != 1:
                raise InvalidInput("inconsistent covariate widths")
            self.n_w = widths.pop()
            if n_w is not None and int(n_w) != self.n_w:
                raise InvalidInput("n_w does not match the subject records")
        else:
            self.n_w = int(n_w) if n_w is not None else 0
        self.arm = np.array([s.arm for s in subjects], dtype=np.int64)
        self.u = np.array([s.u_level for s in subjects], dtype=np.int64)
        w = np.array([s.w for s in subjects], dtype=float) if self.n else np.zeros((0, self.n_w))
        self.w = w.reshape(self.n, self.n_w)
        self.t_exit = np.array([s.exit_time for s in subjects], dtype=float)
        self.event = np.array([s.event for s in subjects], dtype=bool)
        self.x = (
            np.stack([x_design(int(a), int(u)) for a, u in zip(self.arm, self.u)])
            if self.n
            else np.zeros((0, X_DIM))
        )
        self.u_ind = self.x[:, 1:3]

        index = {sid: i for i, sid in enumerate(self.ids)}
        triples = []
        for rec in records:
            if rec.subject_id not in index:
                raise OrphanRecord(
                    f"longitudinal record for unknown subject {rec.subject_id!r}"
                )
            triples.append((index[rec.subject_id], float(rec.t), float(rec.m_obs)))
        triples.sort(key=lambda tr: (tr[0], tr[1]))
        self.n_rec = len(triples)
        self.rec_subj = np.array([tr[0] for tr in triples], dtype=np.int64)
        self.rec_t = np.array([tr[1] for tr in triples], dtype=float)
        self.rec_m = np.array([tr[2] for tr in triples], dtype=float)
        self.bpop = eval_basis(fam.population, self.rec_t) if self.n_rec else np.zeros((0, POP_DIM))
        self.bran = eval_basis(fam.random, self.rec_t) if self.n_rec else np.zeros((0, R_DIM - 1))
        self.rec_count = np.bincount(self.rec_subj, minlength=self.n).astype(float)
        self.family = fam
        self.w_pop, self.w_ran = legacy_basis_weights(fam)


@dataclass(frozen=True, eq=False)
class FitState:
    """One point of the joint-model parameter space plus random effects."""

    mediator: MediatorParams
    survival: SurvivalParams
    re_law: RandomEffectsLaw
    r: np.ndarray  # (n, 4)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2 or r.shape[1] != R_DIM:
            raise InvalidInput("random effects must be an (n, 4) matrix")
        object.__setattr__(self, "r", r)


# ---------------------------------------------------------------------------
# correlation parameterization: canonical partial correlations


def _chol_from_z(z):
    L = np.zeros((R_DIM, R_DIM))
    L[0, 0] = 1.0
    idx = 0
    for i in range(1, R_DIM):
        rem = 1.0
        for j in range(i):
            L[i, j] = z[idx] * math.sqrt(rem)
            rem *= 1.0 - z[idx] * z[idx]
            idx += 1
        L[i, i] = math.sqrt(rem)
    return L


def _z_from_chol(L):
    z = []
    for i in range(1, R_DIM):
        rem = 1.0
        for j in range(i):
            z_ij = L[i, j] / math.sqrt(rem)
            z_ij = min(max(z_ij, -1.0 + 1e-12), 1.0 - 1e-12)
            z.append(z_ij)
            rem *= 1.0 - z_ij * z_ij
    return np.array(z)


# 0-based column index of each packed lower-triangle entry
_Z_COLS = tuple(j for i in range(1, R_DIM) for j in range(i))


def _z_beta(j, eta):
    # shifted-Beta exponent of the partial correlation in column j
    return eta + 0.5 * (R_DIM - 2 - j)


def _lkj_z_logpdf(z, eta):
    # independent shifted-Beta marginals of the partial correlations;
    # the atanh-scale Jacobian raises each exponent by one
    lp = 0.0
    for z_ij, j in zip(z, _Z_COLS):
        beta = _z_beta(j, eta)
        one_m = 1.0 - z_ij * z_ij
        if one_m <= 0.0:
            return -math.inf
        const = (1.0 - 2.0 * beta) * math.log(2.0) - (
            2.0 * math.lgamma(beta) - math.lgamma(2.0 * beta)
        )
        lp += const + beta * math.log(one_m)
    return lp


# ---------------------------------------------------------------------------
# parameter layout


class ParameterLayout:
    """Fixed ordering of the scalar parameters with transform metadata.

    The unconstrained vector concatenates, in order: mediator fixed
    effects, spline coefficients, log residual SD, survival regression
    coefficients, log hazard levels for both arms, log random-effect
    SDs and atanh partial correlations.  The ordering is stable across
    releases and stamped with ``version``.
    """

    version = LAYOUT_VERSION

    def __init__(self, template: FitState):
        sp = template.survival
        med = template.mediator
        if not np.array_equal(sp.baseline_control.cut_points, sp.baseline_treated.cut_points):
            raise InvalidInput("fitting requires shared baseline cut points across arms")
        self.n_w = len(med.beta2)
        if len(sp.gamma3) != self.n_w:
            raise InvalidInput("gamma3 and beta2 must have matching covariate width")
        self.cuts = sp.baseline_control.cut_points.copy()
        self.n_pieces = len(self.cuts)
        self.functional_kind = sp.functional_kind
        self.t_max = sp.t_max
        names = ["beta0"]
        names += [f"beta1[{i}]" for i in range(X_DIM)]
        names += [f"beta2[{j}]" for j in range(self.n_w)]
        names += [f"alpha[{k}]" for k in range(POP_DIM)]
        names += [f"psi[{k},{li}]" for k in range(POP_DIM) for li in range(X_DIM)]
        names += ["log_sigma"]
        names += [f"gamma1[{i}]" for i in range(2)]
        names += [f"gamma2[{i}]" for i in range(2)]
        names += [f"gamma3[{j}]" for j in range(self.n_w)]
        names += [f"zeta[{i}]" for i in range(4)]
        names += ["xi"]
        names += [f"log_h_control[{p}]" for p in range(self.n_pieces)]
        names += [f"log_h_treated[{p}]" for p in range(self.n_pieces)]
        names += [f"log_sd[{k}]" for k in range(R_DIM)]
        names += [f"corr[{i},{j}]" for i in range(1, R_DIM) for j in range(i)]
        self.names = tuple(names)
        self.dim = len(names)
        self._slices = {}
        pos = 0
        for label, width in (
            ("beta0", 1),
            ("beta1", X_DIM),
            ("beta2", self.n_w),
            ("alpha", POP_DIM),
            ("psi", POP_DIM * X_DIM),
            ("log_sigma", 1),
            ("gamma1", 2),
            ("gamma2", 2),
            ("gamma3", self.n_w),
            ("zeta", 4),
            ("xi", 1),
            ("log_h_control", self.n_pieces),
            ("log_h_treated", self.n_pieces),
            ("log_sd", R_DIM),
            ("corr", R_DIM * (R_DIM - 1) // 2),
        ):
            self._slices[label] = slice(pos, pos + width)
            pos += width
        assert pos == self.dim

    def block(self, label):
        return self._slices[label]

    def pack(self, med, sp, law):
        if med.sigma <= 0:
            raise InvalidInput("sigma must be positive on the log scale")
        vec = np.empty(self.dim)
        s = self._slices
        vec[s["beta0"]] = med.beta0
        vec[s["beta1"]] = med.beta1
        vec[s["beta2"]] = med.beta2
        vec[s["alpha"]] = med.alpha
        vec[s["psi"]] = med.psi.reshape(-1)
        vec[s["log_sigma"]] = math.log(med.sigma)
        vec[s["gamma1"]] = sp.gamma1
        vec[s["gamma2"]] = sp.gamma2
        vec[s["gamma3"]] = sp.gamma3
        vec[s["zeta"]] = sp.zeta
        vec[s["xi"]] = sp.xi
        vec[s["log_h_control"]] = np.log(sp.baseline_control.levels)
        vec[s["log_h_treated"]] = np.log(sp.baseline_treated.levels)
        sd = np.sqrt(np.diag(law.covariance))
        vec[s["log_sd"]] = np.log(sd)
        corr_chol = law.cholesky / sd[:, None]
        vec[s["corr"]] = np.arctanh(_z_from_chol(corr_chol))
        return vec

    def unpack(self, vec):
        s = self._slices
        med = MediatorParams(
            beta0=float(vec[s["beta0"]][0]),
            beta1=vec[s["beta1"]].copy(),
            beta2=vec[s["beta2"]].copy(),
            alpha=vec[s["alpha"]].copy(),
            psi=vec[s["psi"]].reshape(POP_DIM, X_DIM).copy(),
            sigma=float(np.exp(vec[s["log_sigma"]][0])),
        )
        sp = SurvivalParams(
            baseline_control=PiecewiseHazard(self.cuts, np.exp(vec[s["log_h_control"]])),
            baseline_treated=PiecewiseHazard(self.cuts, np.exp(vec[s["log_h_treated"]])),
            gamma1=vec[s["gamma1"]].copy(),
            gamma2=vec[s["gamma2"]].copy(),
            gamma3=vec[s["gamma3"]].copy(),
            zeta=vec[s["zeta"]].copy(),
            xi=float(vec[s["xi"]][0]),
            functional_kind=self.functional_kind,
            t_max=self.t_max,
        )
        sd = np.exp(vec[s["log_sd"]])
        L = _chol_from_z(np.tanh(vec[s["corr"]]))
        a = sd[:, None] * L
        cov = a @ a.T
        cov = 0.5 * (cov + cov.T)
        law = RandomEffectsLaw(covariance=cov)
        return med, sp, law


def default_template(n_w=0, cuts=(0.0, 2.0, 5.0), functional_kind=THREE_YEAR_LEGACY, t_max=15.0):
    """A neutral starting state: zero coefficients, mild scales."""
    cuts = np.asarray(cuts, dtype=float)
    med = MediatorParams(
        beta0=0.0,
        beta1=np.zeros(X_DIM),
        beta2=np.zeros(int(n_w)),
        alpha=np.zeros(POP_DIM),
        psi=np.zeros((POP_DIM, X_DIM)),
        sigma=1.0,
    )
    sp = SurvivalParams(
        baseline_control=PiecewiseHazard(cuts, np.full(len(cuts), 0.1)),
        baseline_treated=PiecewiseHazard(cuts, np.full(len(cuts), 0.1)),
        gamma1=np.zeros(2),
        gamma2=np.zeros(2),
        gamma3=np.zeros(int(n_w)),
        zeta=np.zeros(4),
        xi=0.0,
        functional_kind=functional_kind,
        t_max=t_max,
    )
    law = RandomEffectsLaw(covariance=0.25 * np.eye(R_DIM))
    return FitState(mediator=med, survival=sp, re_law=law, r=np.zeros((0, R_DIM)))


# ---------------------------------------------------------------------------
# likelihood parts, each returned per subject


def _med_loglik_by_subject(med, data, r):
    if data.n == 0:
        return np.zeros(0)
    if med.sigma <= 0.0:
        return np.full(data.n, -np.inf)
    if data.n_rec == 0:
        return np.zeros(data.n)
    coef = med.alpha + data.x @ med.psi.T
    const = med.beta0 + data.x @ med.beta1 + r[:, 0]
    if data.n_w:
        const = const + data.w @ med.beta2
    pred = (
        const[data.rec_subj]
        + np.einsum("rk,rk->r", coef[data.rec_subj], data.bpop)
        + np.einsum("rk,rk->r", r[data.rec_subj, 1:], data.bran)
    )
    sq = np.bincount(data.rec_subj, weights=(data.rec_m - pred) ** 2, minlength=data.n)
    return -0.5 * sq / (med.sigma**2) - data.rec_count * (math.log(med.sigma) + 0.5 * _LOG_2PI)


def _surv_loglik_by_subject(med, sp, data, r):
    if data.n == 0:
        return np.zeros(0)
    eta0 = data.u_ind @ sp.gamma1 + data.arm * (data.u_ind @ sp.gamma2) + sp.xi * r[:, 0]
    if data.n_w:
        eta0 = eta0 + data.w @ sp.gamma3
    zc = sp.zeta[0] + data.u_ind @ sp.zeta[1:3] + sp.zeta[3] * data.arm
    cuts = sp.baseline_control.cut_points
    if sp.functional_kind == THREE_YEAR_LEGACY:
        coef = med.alpha + data.x @ med.psi.T
        g = coef @ data.w_pop + r[:, 1:] @ data.w_ran
        eta = eta0 + zc * g
        return core.pc_loglik(
            cuts,
            sp.baseline_control.levels,
            sp.baseline_treated.levels,
            data.arm,
            eta,
            data.t_exit,
            data.event,
        )
    # trajectory-dependent hazard: quadrature per subject (cold path),
    # grouping by design row so the pp coefficients batch per group
    fam = data.family
    out = np.empty(data.n)
    keys = data.arm * 3 + data.u
    for key in np.unique(keys):
        members = np.nonzero(keys == key)[0]
        x = data.x[members[0]]
        coefs = delta_coefs_batch(med, x, r[members], fam)
        levels = sp.baseline_treated.levels if key >= 3 else sp.baseline_control.levels
        for row, i in enumerate(members):
            t_i = float(data.t_exit[i])
            cum = core.cc_cumhaz(
                cuts, levels, float(eta0[i]), float(zc[i]), fam.breaks, coefs[row], t_i
            )
            val = -cum
            if data.event[i]:
                lev = float(core.pc_level(cuts, levels, np.array([t_i]))[0])
                dm = float(core.ppoly_eval(fam.breaks, coefs[row], np.array([t_i]))[0])
                val += math.log(lev) + float(eta0[i]) + float(zc[i]) * dm
            out[i] = val
    return out


def _re_loglik_by_subject(law, r):
    if r.shape[0] == 0:
        return np.zeros(0)
    L = law.cholesky
    # unrolled forward substitution, vectorized across subjects
    s0 = r[:, 0] / L[0, 0]
    s1 = (r[:, 1] - L[1, 0] * s0) / L[1, 1]
    s2 = (r[:, 2] - L[2, 0] * s0 - L[2, 1] * s1) / L[2, 2]
    s3 = (r[:, 3] - L[3, 0] * s0 - L[3, 1] * s1 - L[3, 2] * s2) / L[3, 3]
    quad = s0 * s0 + s1 * s1 + s2 * s2 + s3 * s3
    log_det_half = float(np.sum(np.log(np.diag(L))))
    return -0.5 * quad - log_det_half - 0.5 * R_DIM * _LOG_2PI


def _log_prior(med, sp, law, priors):
    reg = np.concatenate(
        [
            [med.beta0],
            med.beta1,
            med.beta2,
            med.alpha,
            med.psi.reshape(-1),
            sp.gamma1,
            sp.gamma2,
            sp.gamma3,
            sp.zeta,
            [sp.xi],
        ]
    )
    sd = priors.regression_sd
    lp = float(-0.5 * np.sum((reg / sd) ** 2) - len(reg) * (math.log(sd) + 0.5 * _LOG_2PI))
    a, b = priors.baseline_shape, priors.baseline_rate
    levels = np.concatenate([sp.baseline_control.levels, sp.baseline_treated.levels])
    # gamma density in the level, plus the log-scale Jacobian
    lp += float(
        len(levels) * (a * math.log(b) - math.lgamma(a))
        + a * np.sum(np.log(levels))
        - b * np.sum(levels)
    )
    if med.sigma <= 0:
        return -math.inf
    s = priors.scale_cauchy
    scales = np.concatenate([[med.sigma], np.sqrt(np.diag(law.covariance))])
    # half-Cauchy in the scale, plus the log-scale Jacobian
    lp += float(
        len(scales) * math.log(2.0 / (math.pi * s))
        - np.sum(np.log1p((scales / s) ** 2))
        + np.sum(np.log(scales))
    )
    sd_vec = np.sqrt(np.diag(law.covariance))
    corr_chol = law.cholesky / sd_vec[:, None]
    lp += _lkj_z_logpdf(_z_from_chol(corr_chol), priors.lkj_eta)
    return lp


def log_posterior(state: FitState, data: Dataset, priors: PriorSpec = None):
    """Unnormalized log posterior over the unconstrained coordinates.

    Out-of-support states give -inf; the function never raises for
    numerically extreme parameter values.  With no subjects the value
    reduces to the log prior.
    """
    priors = priors if priors is not None else PriorSpec()
    if state.r.shape[0] != data.n:
        raise InvalidInput("random-effect rows must match the number of subjects")
    try:
        med, sp, law = state.mediator, state.survival, state.re_law
        if med.sigma <= 0:
            return -math.inf
        total = _log_prior(med, sp, law, priors)
        if not np.isfinite(total):
            return -math.inf
        with np.errstate(over="ignore", invalid="ignore"):
            total += float(np.sum(_med_loglik_by_subject(med, data, state.r)))
            total += float(np.sum(_surv_loglik_by_subject(med, sp, data, state.r)))
            total += float(np.sum(_re_loglik_by_subject(law, state.r)))
    except (InvalidInput, FloatingPointError, ValueError, OverflowError):
        return -math.inf
    return total if np.isfinite(total) else -math.inf


# ---------------------------------------------------------------------------
# per-coordinate prior terms (constants cancel inside a delta)


_KIND_REGRESSION = 0
_KIND_LOG_SCALE = 1
_KIND_LOG_LEVEL = 2
_KIND_CORR = 3

_BLOCK_KINDS = {
    "beta0": _KIND_REGRESSION,
    "beta1": _KIND_REGRESSION,
    "beta2": _KIND_REGRESSION,
    "alpha": _KIND_REGRESSION,
    "psi": _KIND_REGRESSION,
    "log_sigma": _KIND_LOG_SCALE,
    "gamma1": _KIND_REGRESSION,
    "gamma2": _KIND_REGRESSION,
    "gamma3": _KIND_REGRESSION,
    "zeta": _KIND_REGRESSION,
    "xi": _KIND_REGRESSION,
    "log_h_control": _KIND_LOG_LEVEL,
    "log_h_treated": _KIND_LOG_LEVEL,
    "log_sd": _KIND_LOG_SCALE,
    "corr": _KIND_CORR,
}

# which likelihood parts each coordinate block touches
_BLOCK_PARTS = {
    "beta0": ("med",),
    "beta1": ("med",),
    "beta2": ("med",),
    "alpha": ("med", "surv"),
    "psi": ("med", "surv"),
    "log_sigma": ("med",),
    "gamma1": ("surv",),
    "gamma2": ("surv",),
    "gamma3": ("surv",),
    "zeta": ("surv",),
    "xi": ("surv",),
    "log_h_control": ("surv",),
    "log_h_treated": ("surv",),
    "log_sd": ("re",),
    "corr": ("re",),
}


def _coord_tables(layout):
    kinds = np.empty(layout.dim, dtype=np.int64)
    parts = [None] * layout.dim
    corr_col = np.full(layout.dim, -1, dtype=np.int64)
    for label, kind in _BLOCK_KINDS.items():
        sl = layout.block(label)
        for i in range(sl.start, sl.stop):
            kinds[i] = kind
            parts[i] = _BLOCK_PARTS[label]
            if kind == _KIND_CORR:
                corr_col[i] = _Z_COLS[i - sl.start]
    return kinds, parts, corr_col


def _prior_term(kind, y, priors, corr_col):
    if kind == _KIND_REGRESSION:
        return -0.5 * (y / priors.regression_sd) ** 2
    if kind == _KIND_LOG_SCALE:
        s = priors.scale_cauchy
        try:
            grown = math.exp(2.0 * y)
        except OverflowError:
            grown = math.inf
        return y - math.log1p(grown / (s * s))
    if kind == _KIND_LOG_LEVEL:
        try:
            level = math.exp(y)
        except OverflowError:
            return -math.inf
        return priors.baseline_shape * y - priors.baseline_rate * level
    z = math.tanh(y)
    one_m = 1.0 - z * z
    if one_m <= 0.0:
        return -math.inf
    return _z_beta(corr_col, priors.lkj_eta) * math.log(one_m)


# ---------------------------------------------------------------------------
# sampler


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained draws, one array per chain, plus layout and run metadata."""

    names: tuple
    chains: tuple  # per chain: (samples, dim) unconstrained coordinates
    re_chains: tuple  # per chain: (samples, n, 4), or None when not stored
    layout: ParameterLayout
    burn_in: int
    thin: int
    seed: int
    acceptance: tuple  # per chain: {name: post-burn-in acceptance rate}
    adaptation_failures: tuple
    version: int = LAYOUT_VERSION

    def pooled(self):
        return np.concatenate(self.chains, axis=0)

    def column(self, name):
        return self.pooled()[:, self.names.index(name)]

    def n_draws(self):
        return int(sum(c.shape[0] for c in self.chains))

    def states(self):
        """Yield (mediator, survival, re_law, r) per retained draw."""
        for c, chain in enumerate(self.chains):
            for s in range(chain.shape[0]):
                med, sp, law = self.layout.unpack(chain[s])
                r = self.re_chains[c][s] if self.re_chains is not None else None
                yield med, sp, law, r


def _mcmc_settings(settings):
    merged = dict(DEFAULT_SETTINGS)
    extra = dict(settings) if settings else {}
    unknown = set(extra) - set(merged)
    if unknown:
        raise InvalidInput(f"unknown MCMC settings: {sorted(unknown)}")
    merged.update(extra)
    for key in ("chains", "samples", "thin"):
        merged[key] = int(merged[key])
        if merged[key] < 1:
            raise InvalidInput(f"MCMC setting {key} must be at least 1")
    merged["burn_in"] = int(merged["burn_in"])
    if merged["burn_in"] < 0:
        raise InvalidInput("burn_in must be nonnegative")
    if not 0.0 < merged["target_accept"] < 1.0:
        raise InvalidInput("target_accept must lie in (0, 1)")
    return merged


def _part_loglik(part, med, sp, law, data, r):
    if part == "med":
        return _med_loglik_by_subject(med, data, r)
    if part == "surv":
        return _surv_loglik_by_subject(med, sp, data, r)
    return _re_loglik_by_subject(law, r)


class _GibbsDesigns:
    """Fixed design matrices for the conjugate full-fit block updates.

    The mediator mean is linear in its fixed effects, so given the
    random effects and the residual SD the blocks [beta0, beta1, beta2]
    and [alpha, psi] have Gaussian full conditionals up to the survival
    factor; the same holds per subject for the random-effect vectors.
    """

    def __init__(self, data, layout, priors):
        self.beta = slice(layout.block("beta0").start, layout.block("beta2").stop)
        self.ap = slice(layout.block("alpha").start, layout.block("psi").stop)
        ones = np.ones((data.n_rec, 1))
        xs = data.x[data.rec_subj]
        self.u_design = np.concatenate([ones, xs, data.w[data.rec_subj]], axis=1)
        inter = (data.bpop[:, :, None] * xs[:, None, :]).reshape(data.n_rec, -1)
        self.v_design = np.concatenate([data.bpop, inter], axis=1)
        self.utu = self.u_design.T @ self.u_design
        self.vtv = self.v_design.T @ self.v_design
        prior_prec = priors.regression_sd**-2
        self.prior_b = prior_prec * np.eye(self.utu.shape[0])
        self.prior_ap = prior_prec * np.eye(self.vtv.shape[0])
        self.z_design = np.concatenate([ones, data.bran], axis=1)
        ztz = np.empty((data.n, R_DIM, R_DIM))
        for i in range(R_DIM):
            for j in range(R_DIM):
                ztz[:, i, j] = np.bincount(
                    data.rec_subj,
                    weights=self.z_design[:, i] * self.z_design[:, j],
                    minlength=data.n,
                )
        self.ztz = ztz

    def z_transpose(self, data, resid):
        out = np.empty((data.n, R_DIM))
        for k in range(R_DIM):
            out[:, k] = np.bincount(
                data.rec_subj, weights=self.z_design[:, k] * resid, minlength=data.n
            )
        return out


def _gaussian_block_draw(prec, rhs, rng):
    """One draw from N(prec^-1 rhs, prec^-1)."""
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, rhs)
    return mean + np.linalg.solve(chol.T, rng.standard_normal(len(rhs)))


def run_mcmc(data: Dataset, priors=None, settings=None, init: FitState = None, free=None):
    """Adaptive blocked random-walk sampler; deterministic per seed.

    ``free`` restricts sampling to the named coordinates (reduced
    parameterization); the rest stay at their initial values.  Chains
    whose post-burn-in acceptance for some coordinate collapsed below
    1 percent are reported via ``adaptation_failures`` rather than by
    raising, so the caller can still inspect the run.
    """
    priors = priors if priors is not None else PriorSpec()
    cfg = _mcmc_settings(settings)
    template = init if init is not None else default_template(n_w=data.n_w)
    layout = ParameterLayout(template)
    if layout.n_w != data.n_w:
        raise InvalidInput("template covariate width does not match the data")
    vec0 = layout.pack(template.mediator, template.survival, template.re_law)
    if free is None:
        free_idx = np.arange(layout.dim)
    else:
        missing = [n for n in free if n not in layout.names]
        if missing:
            raise InvalidInput(f"unknown parameter names: {missing}")
        free_idx = np.array(sorted(layout.names.index(n) for n in set(free)), dtype=np.int64)
        if len(free_idx) == 0:
            raise InvalidInput("free parameter set must not be empty")
    kinds, parts_tab, corr_col = _coord_tables(layout)
    # conjugate block moves only apply to the full parameterization; with
    # a reduced free set the blocks would move frozen coordinates
    designs = _GibbsDesigns(data, layout, priors) if free is None and data.n else None

    n_keep = cfg["samples"]
    chains = []
    re_chains = []
    acceptance = []
    failures = set()
    for c in range(cfg["chains"]):
        rng = np.random.default_rng([int(cfg["seed"]), c])
        vec = vec0.copy()
        vec[free_idx] += cfg["init_jitter"] * rng.standard_normal(len(free_idx))
        if template.r.shape[0] == data.n and data.n:
            r = template.r.copy()
        else:
            r = np.zeros((data.n, R_DIM))
        if data.n:
            r += cfg["init_jitter"] * rng.standard_normal((data.n, R_DIM))
        med, sp, law = layout.unpack(vec)
        part_vals = {
            "med": _med_loglik_by_subject(med, data, r),
            "surv": _surv_loglik_by_subject(med, sp, data, r),
            "re": _re_loglik_by_subject(law, r),
        }
        scales = np.full(layout.dim, 0.2)
        r_scales = np.full(data.n, 0.3)
        kept = np.empty((n_keep, layout.dim))
        kept_re = np.empty((n_keep, data.n, R_DIM)) if cfg["store_re"] else None
        acc_count = np.zeros(layout.dim)
        prop_count = np.zeros(layout.dim)
        total_iters = cfg["burn_in"] + n_keep * cfg["thin"]
        k = 0
        for it in range(total_iters):
            adapting = it < cfg["burn_in"]
            gamma = (it + 1) ** -0.6
            for i in free_idx:
                old = vec[i]
                new_val = old + scales[i] * rng.standard_normal()
                vec[i] = new_val
                delta = _prior_term(kinds[i], new_val, priors, corr_col[i]) - _prior_term(
                    kinds[i], old, priors, corr_col[i]
                )
                cand = {}
                cand_params = None
                if np.isfinite(delta):
                    try:
                        with np.errstate(over="ignore", invalid="ignore"):
                            cand_params = layout.unpack(vec)
                            for part in parts_tab[i]:
                                arr = _part_loglik(part, *cand_params, data, r)
                                cand[part] = arr
                                delta += float(arr.sum()) - float(part_vals[part].sum())
                    except (InvalidInput, FloatingPointError, ValueError, OverflowError):
                        delta = -math.inf
                if math.isnan(delta):
                    delta = -math.inf
                alpha = math.exp(min(delta, 0.0))
                if cand_params is not None and rng.random() < alpha:
                    med, sp, law = cand_params
                    part_vals.update(cand)
                    if not adapting:
                        acc_count[i] += 1
                else:
                    vec[i] = old
                if adapting:
                    scales[i] = float(
                        np.clip(
                            scales[i] * math.exp(gamma * (alpha - cfg["target_accept"])),
                            1e-5,
                            50.0,
                        )
                    )
                else:
                    prop_count[i] += 1
            if designs is not None:
                # exact Gibbs for the intercept/arm/covariate block: it only
                # enters the Gaussian longitudinal likelihood
                s2 = med.sigma * med.sigma
                r_contrib = r[data.rec_subj, 0] + np.einsum(
                    "rk,rk->r", r[data.rec_subj, 1:], data.bran
                )
                try:
                    resid = data.rec_m - designs.v_design @ vec[designs.ap] - r_contrib
                    cand_vec = vec.copy()
                    cand_vec[designs.beta] = _gaussian_block_draw(
                        designs.utu / s2 + designs.prior_b,
                        designs.u_design.T @ resid / s2,
                        rng,
                    )
                    med, sp, law = layout.unpack(cand_vec)
                    vec = cand_vec
                    part_vals["med"] = _med_loglik_by_subject(med, data, r)
                except (np.linalg.LinAlgError, InvalidInput, FloatingPointError, ValueError):
                    pass
                # the spline block also drives the hazard functional, so the
                # Gaussian conditional serves as an independence proposal and
                # the survival term decides acceptance
                try:
                    resid = data.rec_m - designs.u_design @ vec[designs.beta] - r_contrib
                    cand_vec = vec.copy()
                    cand_vec[designs.ap] = _gaussian_block_draw(
                        designs.vtv / s2 + designs.prior_ap,
                        designs.v_design.T @ resid / s2,
                        rng,
                    )
                    cand_params = layout.unpack(cand_vec)
                    with np.errstate(over="ignore", invalid="ignore"):
                        surv_cand = _surv_loglik_by_subject(
                            cand_params[0], cand_params[1], data, r
                        )
                    delta = float(surv_cand.sum()) - float(part_vals["surv"].sum())
                    if math.isnan(delta):
                        delta = -math.inf
                    if rng.random() < math.exp(min(delta, 0.0)):
                        vec = cand_vec
                        med, sp, law = cand_params
                        part_vals["surv"] = surv_cand
                        part_vals["med"] = _med_loglik_by_subject(med, data, r)
                except (np.linalg.LinAlgError, InvalidInput, FloatingPointError, ValueError):
                    pass
            if data.n:
                prop = r + r_scales[:, None] * rng.standard_normal((data.n, R_DIM))
                with np.errstate(over="ignore", invalid="ignore"):
                    med_new = _med_loglik_by_subject(med, data, prop)
                    surv_new = _surv_loglik_by_subject(med, sp, data, prop)
                    re_new = _re_loglik_by_subject(law, prop)
                    delta_i = (
                        (med_new - part_vals["med"])
                        + (surv_new - part_vals["surv"])
                        + (re_new - part_vals["re"])
                    )
                alpha_i = np.exp(np.minimum(delta_i, 0.0))
                alpha_i = np.where(np.isnan(alpha_i), 0.0, alpha_i)
                take = rng.random(data.n) < alpha_i
                r[take] = prop[take]
                part_vals["med"] = np.where(take, med_new, part_vals["med"])
                part_vals["surv"] = np.where(take, surv_new, part_vals["surv"])
                part_vals["re"] = np.where(take, re_new, part_vals["re"])
                if adapting:
                    r_scales = np.clip(
                        r_scales * np.exp(gamma * (alpha_i - cfg["target_accept"])),
                        1e-5,
                        50.0,
                    )
            if designs is not None:
                # independence refresh of the random effects: per subject, the
                # longitudinal and prior terms give an exact Gaussian
                # conditional; the survival term decides acceptance
                try:
                    coef = med.alpha + data.x @ med.psi.T
                    const = med.beta0 + data.x @ med.beta1
                    if data.n_w:
                        const = const + data.w @ med.beta2
                    resid = data.rec_m - (
                        const[data.rec_subj]
                        + np.einsum("rk,rk->r", coef[data.rec_subj], data.bpop)
                    )
                    s2 = med.sigma * med.sigma
                    prec = designs.ztz / s2 + np.linalg.inv(law.covariance)
                    chol = np.linalg.cholesky(prec)
                    rhs = designs.z_transpose(data, resid) / s2
                    mean = np.linalg.solve(prec, rhs[:, :, None])
                    noise = rng.standard_normal((data.n, R_DIM))
                    prop = (
                        mean
                        + np.linalg.solve(np.transpose(chol, (0, 2, 1)), noise[:, :, None])
                    )[:, :, 0]
                    with np.errstate(over="ignore", invalid="ignore"):
                        med_new = _med_loglik_by_subject(med, data, prop)
                        surv_new = _surv_loglik_by_subject(med, sp, data, prop)
                        re_new = _re_loglik_by_subject(law, prop)
                        delta_i = surv_new - part_vals["surv"]
                    alpha_i = np.exp(np.minimum(delta_i, 0.0))
                    alpha_i = np.where(np.isnan(alpha_i), 0.0, alpha_i)
                    take = rng.random(data.n) < alpha_i
                    r[take] = prop[take]
                    part_vals["med"] = np.where(take, med_new, part_vals["med"])
                    part_vals["surv"] = np.where(take, surv_new, part_vals["surv"])
                    part_vals["re"] = np.where(take, re_new, part_vals["re"])
                except (np.linalg.LinAlgError, InvalidInput, FloatingPointError, ValueError):
                    pass
            if not adapting and (it - cfg["burn_in"]) % cfg["thin"] == 0 and k < n_keep:
                kept[k] = vec
                if kept_re is not None:
                    kept_re[k] = r
                k += 1
        rates = {}
        for i in free_idx:
            rate = float(acc_count[i] / prop_count[i]) if prop_count[i] else 0.0
            rates[layout.names[i]] = rate
            if rate < 0.01:
                failures.add(layout.names[i])
        chains.append(kept)
        re_chains.append(kept_re)
        acceptance.append(rates)
    return PosteriorDraws(
        names=layout.names,
        chains=tuple(chains),
        re_chains=tuple(re_chains) if cfg["store_re"] else None,
        layout=layout,
        burn_in=cfg["burn_in"],
        thin=cfg["thin"],
        seed=int(cfg["seed"]),
        acceptance=tuple(acceptance),
        adaptation_failures=tuple(sorted(failures)),
    )


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class RhatReport:
    """Split-chain scale-reduction values plus degeneracy flags."""

    values: dict
    degenerate: tuple

    def max(self):
        return max(self.values.values()) if self.values else float("nan")


def gelman_rubin(draws):
    """Split-chain potential scale reduction factor per parameter.

    Accepts anything exposing ``chains`` (per-chain sample arrays) and
    ``names``.  Parameters with no within-chain variance are reported
    as exactly 1 and flagged degenerate.
    """
    chains = [np.asarray(c, dtype=float) for c in draws.chains]
    duplicated = any(
        chains[a].shape == chains[b].shape and np.array_equal(chains[a], chains[b])
        for a in range(len(chains))
        for b in range(a + 1, len(chains))
    )
    halves = []
    for c in chains:
        s = c.shape[0]
        if s < 10:
            raise InvalidInput("chains too short for split diagnostics")
        half = s // 2
        halves.append(c[:half])
        halves.append(c[half : 2 * half])
    n = halves[0].shape[0]
    stacked = np.stack(halves)  # (m, n, dim)
    means = stacked.mean(axis=1)
    within = stacked.var(axis=1, ddof=1).mean(axis=0)
    between_over_n = means.var(axis=0, ddof=1)
    values = {}
    degenerate = []
    for j, name in enumerate(draws.names):
        if duplicated:
            # identical chains carry no replication information
            values[name] = 1.0
            degenerate.append(name)
            continue
        if within[j] <= 1e-300:
            if between_over_n[j] <= 1e-300:
                values[name] = 1.0
                degenerate.append(name)
            else:
                values[name] = math.inf
            continue
        var_plus = (n - 1) / n * within[j] + between_over_n[j]
        values[name] = float(np.sqrt(var_plus / within[j]))
    return RhatReport(values=values, degenerate=tuple(degenerate))


def pointwise_loglik_export(draws: PosteriorDraws, data: Dataset):
    """(draws, subjects) matrix of conditional data log likelihood.

    Each row holds, per subject, the longitudinal plus survival log
    likelihood at that draw's parameters and random effects; random
    effect and prior densities are excluded.
    """
    if draws.re_chains is None:
        raise InvalidInput("pointwise export requires stored random effects")
    rows = []
    for med, sp, law, r in draws.states():
        rows.append(
            _med_loglik_by_subject(med, data, r) + _surv_loglik_by_subject(med, sp, data, r)
        )
    return np.asarray(rows).reshape(draws.n_draws(), data.n)


# ---------------------------------------------------------------------------
# confounder model posterior (fitted separately)


@dataclass(frozen=True, eq=False)
class ConfounderDraws:
    """Posterior draws of the ordinal confounder model."""

    names: tuple
    chains: tuple  # per chain: (samples, dim)
    n_w: int
    seed: int

    def pooled(self):
        return np.concatenate(self.chains, axis=0)

    def n_draws(self):
        return int(sum(c.shape[0] for c in self.chains))

    def params(self, row):
        return ConfounderParams(phi0=row[0:2], phi1=row[2:4], phi2=row[4:].reshape(2, self.n_w))

    def states(self):
        for chain in self.chains:
            for s in range(chain.shape[0]):
                yield self.params(chain[s])


def confounder_names(n_w):
    names = [f"phi0[{i}]" for i in range(2)] + [f"phi1[{i}]" for i in range(2)]
    names += [f"phi2[{i},{j}]" for i in range(2) for j in range(n_w)]
    return tuple(names)


def _confounder_loglik(vec, arm, u, w):
    n_w = w.shape[1]
    logits = np.zeros((len(arm), 3))
    logits[:, 1:] = vec[0:2] + np.outer(arm, vec[2:4])
    if n_w:
        logits[:, 1:] += w @ vec[4:].reshape(2, n_w).T
    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    picked = np.take_along_axis(logits, u[:, None], axis=1)[:, 0]
    return float(picked.sum() - lse.sum())


def _confounder_laplace(data, sd):
    """Posterior mode and negative-Hessian of the confounder model.

    The multinomial-logit log likelihood plus the Gaussian prior is
    strictly concave, so damped Newton from zero always converges; the
    curvature at the mode drives an independence proposal.  Returns the
    mode and the precision matrix in the sampler's coordinate order.
    """
    d = 2 + data.n_w
    design = np.column_stack([np.ones(data.n), data.arm.astype(float), data.w])
    onehot = np.column_stack([data.u == 1, data.u == 2]).astype(float)
    # vec position of the level-k coefficient on design column j
    perm = np.empty(2 * d, dtype=np.int64)
    for k in range(2):
        perm[k * d] = k
        perm[k * d + 1] = 2 + k
        for j in range(data.n_w):
            perm[k * d + 2 + j] = 4 + k * data.n_w + j

    def probs(th):
        logits = np.zeros((data.n, 3))
        logits[:, 1:] = design @ th.T
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def objective(th):
        p = probs(th)
        picked = np.take_along_axis(p, data.u[:, None], axis=1)[:, 0]
        return float(np.sum(np.log(picked + 1e-300))) - 0.5 * float(
            np.sum(th * th)
        ) / (sd * sd), p

    theta = np.zeros((2, d))
    obj, p = objective(theta)
    hess = np.eye(2 * d)
    for _ in range(200):
        grad = (onehot - p[:, 1:]).T @ design - theta / (sd * sd)
        for kk in range(2):
            for ll in range(2):
                wgt = p[:, kk + 1] * ((kk == ll) - p[:, ll + 1])
                hess[kk * d : (kk + 1) * d, ll * d : (ll + 1) * d] = (
                    design * wgt[:, None]
                ).T @ design
        hess += np.eye(2 * d) / (sd * sd)
        step = np.linalg.solve(hess, grad.reshape(-1)).reshape(2, d)
        if float(np.abs(grad).max()) < 1e-9:
            break
        scale = 1.0
        for _ in range(40):
            cand = theta + scale * step
            cand_obj, cand_p = objective(cand)
            if cand_obj > obj - 1e-12 * (1.0 + abs(obj)):
                theta, obj, p = cand, cand_obj, cand_p
                break
            scale *= 0.5
        else:
            break
    mode = np.empty(2 * d)
    mode[perm] = theta.reshape(-1)
    prec = np.empty((2 * d, 2 * d))
    prec[np.ix_(perm, perm)] = hess
    return mode, prec


def run_confounder_mcmc(data: Dataset, priors=None, settings=None):
    """Separate multinomial-logit posterior for the confounder model."""
    priors = priors if priors is not None else PriorSpec()
    cfg = _mcmc_settings(settings)
    if data.n == 0:
        raise InvalidInput("confounder model needs observed subjects")
    names = confounder_names(data.n_w)
    dim = len(names)
    sd = priors.regression_sd

    def posterior(vec):
        return _confounder_loglik(vec, data.arm, data.u, data.w) - 0.5 * float(
            np.sum((vec / sd) ** 2)
        )

    # independence proposals from the curvature at the posterior mode mix
    # in a handful of iterations; fall back to the random walk if the
    # quadratic approximation cannot be formed
    mode = chol = None
    try:
        mode, prec = _confounder_laplace(data, sd)
        chol = np.linalg.cholesky(prec)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError):
        mode = chol = None

    chains = []
    for c in range(cfg["chains"]):
        rng = np.random.default_rng([int(cfg["seed"]), 7919, c])
        kept = np.empty((cfg["samples"], dim))
        k = 0
        total_iters = cfg["burn_in"] + cfg["samples"] * cfg["thin"]
        if chol is not None:

            def propose():
                z = rng.standard_normal(dim)
                return mode + np.linalg.solve(chol.T, z), -0.5 * float(z @ z)

            vec, cur_q = propose()
            cur = posterior(vec)
            for it in range(total_iters):
                cand, cand_q = propose()
                new = posterior(cand)
                log_alpha = (new - cur) - (cand_q - cur_q)
                if math.log(rng.random() + 1e-300) < log_alpha:
                    vec, cur, cur_q = cand, new, cand_q
                if it >= cfg["burn_in"] and (it - cfg["burn_in"]) % cfg["thin"] == 0 and k < cfg["samples"]:
                    kept[k] = vec
                    k += 1
            chains.append(kept)
            continue
        vec = cfg["init_jitter"] * rng.standard_normal(dim)
        cur = posterior(vec)
        scales = np.full(dim, 0.2)
        for it in range(total_iters):
            adapting = it < cfg["burn_in"]
            gamma = (it + 1) ** -0.6
            for i in range(dim):
                old = vec[i]
                vec[i] = old + scales[i] * rng.standard_normal()
                new = posterior(vec)
                alpha = math.exp(min(new - cur, 0.0))
                if rng.random() < alpha:
                    cur = new
                else:
                    vec[i] = old
                if adapting:
                    scales[i] = float(
                        np.clip(
                            scales[i] * math.exp(gamma * (alpha - cfg["target_accept"])),
                            1e-5,
                            50.0,
                        )
                    )
            if not adapting and (it - cfg["burn_in"]) % cfg["thin"] == 0 and k < cfg["samples"]:
                kept[k] = vec
                k += 1
        chains.append(kept)
    return ConfounderDraws(names=names, chains=tuple(chains), n_w=data.n_w, seed=int(cfg["seed"]))


# ---------------------------------------------------------------------------
# posterior effect decompositions


def check_monotonicity(conf_draws: ConfounderDraws, weights):
    """Per-stratum monotonicity diagnostics over confounder-model draws.

    For each stratum: the fraction of draws whose marginals admit no
    monotone joint table, and the feasible-draw p11 intervals.
    """
    report = {}
    for w_key, _ in weights.strata:
        w = np.asarray(w_key, dtype=float)
        fails = 0
        intervals = []
        total = 0
        for cp in conf_draws.states():
            total += 1
            pair = MarginalPair(mu=confounder_probs(cp, 1, w), phi=confounder_probs(cp, 0, w))
            try:
                intervals.append(p11_bounds(pair))
            except MonotonicityInfeasible:
                fails += 1
        report[w_key] = {
            "n_draws": total,
            "failure_proportion": fails / total if total else float("nan"),
            "p11_intervals": intervals,
        }
    return report


def posterior_effects(
    draws: PosteriorDraws,
    conf_draws: ConfounderDraws,
    weights,
    rho_policy,
    refs=None,
    mc=None,
    infeasible="skip-draw",
):
    """Effect decompositions over paired posterior draws.

    Joint-model and confounder draws are paired index by index in
    chain-concatenation order (extra draws on the longer side are
    dropped).  A draw whose confounder marginals are infeasible in some
    stratum is skipped and counted under the default policy; the
    `skip-and-reweight` policy instead renormalizes over the feasible
    strata within the draw.  Feasibility failures are always tallied
    per stratum.
    """
    if infeasible not in ("skip-draw", "skip-and-reweight"):
        raise InvalidInput(f"unknown infeasibility policy {infeasible!r}")
    joint_rows = list(draws.states())
    conf_rows = list(conf_draws.states())
    n = min(len(joint_rows), len(conf_rows))
    if n == 0:
        raise InvalidInput("no posterior draws supplied")
    stratum_fail = {w_key: 0 for w_key, _ in weights.strata}
    decs = []
    skipped = 0
    for idx in range(n):
        med, sp, law, _ = joint_rows[idx]
        cp = conf_rows[idx]
        any_bad = False
        for w_key, _ in weights.strata:
            w = np.asarray(w_key, dtype=float)
            pair = MarginalPair(mu=confounder_probs(cp, 1, w), phi=confounder_probs(cp, 0, w))
            try:
                p11_bounds(pair)
            except MonotonicityInfeasible:
                stratum_fail[w_key] += 1
                any_bad = True
        if any_bad and infeasible == "skip-draw":
            skipped += 1
            continue
        params = ModelParams(mediator=med, survival=sp, confounder=cp, re_law=law)
        try:
            dec = decompose(
                params, weights, rho_policy, refs=refs, mc=mc, infeasible="skip-and-reweight"
            )
        except InfeasibleStratum:
            skipped += 1
            continue
        decs.append(dec)
    summary = {}
    if decs:
        for name in COMPONENTS:
            vals = np.array([getattr(d, name) for d in decs])
            lo, hi = np.quantile(vals, [0.025, 0.975])
            summary[name] = {"mean": float(vals.mean()), "q2.5": float(lo), "q97.5": float(hi)}
    return {
        "decompositions": decs,
        "n_paired": n,
        "n_skipped": skipped,
        "failure_proportions": {w_key: stratum_fail[w_key] / n for w_key, _ in weights.strata},
        "summary": summary,
    }
