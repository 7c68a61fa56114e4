"""Direct and indirect restricted-mean effect decompositions.

The target contrasts compare treated (a=1) and control (a=0) worlds:

* total effect:      TE = E[T(1, M_1)] - E[T(0, M_0)]
* direct effect:     DE = E[T(1, M_0)] - E[T(0, M_0)]
* indirect effect:   IE = E[T(1, M_1)] - E[T(1, M_0)]

where T(a, M_a') is the restricted event-free time under arm a with the
mediator trajectory of arm a'.  Because the ordinal confounder responds
to treatment, E[T(1, M_0)] depends on the never-observed joint law of
(U_0, U_1); the decomposition splits DE and IE into identified parts
(de_r, ie_r, delta_de, delta_ie) and a single unidentified interaction
term delta computed from a joint table supplied through a sensitivity
policy.  The components satisfy, by construction,

    de = de_r - delta_de + delta,   ie = ie_r + delta_ie - delta,
    te = de + ie.

Expectations over the random effects are plain Monte Carlo with
antithetic pairing; one set of draws is shared by every term so that
the identities above hold draw by draw.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import core
from .basis import eval_basis
from .confounder import (
    ConfounderParams,
    MarginalPair,
    confounder_probs,
    joint_from_rho,
    optimize_linear_over_polytope,
)
from .errors import (
    AllDrawsDiscarded,
    InfeasibleStratum,
    InvalidInput,
    MonotonicityInfeasible,
)
from .mediator import (
    MediatorParams,
    RandomEffectsLaw,
    Trajectory,
    default_family,
    sample_random_effects_batch,
    spline_coefficients,
    x_design,
)
from .survival import (
    CURRENT_CHANGE,
    THREE_YEAR_LEGACY,
    SurvivalParams,
    _LEGACY_NODES,
    _LEGACY_WEIGHTS,
    baseline,
    eta_const,
    g_functional,
    rmst,
    zeta_comb,
)

N_LEVELS = 3
DEFAULT_MC_DRAWS = 2000
COMPONENTS = ("de", "ie", "te", "de_r", "ie_r", "delta_de", "delta_ie", "delta")

_ZERO_TRAJECTORY = Trajectory(breaks=np.array([0.0, 1.0]), coefs=np.zeros((1, 4)))


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the joint model plus the confounder model."""

    mediator: MediatorParams
    survival: SurvivalParams
    confounder: ConfounderParams
    re_law: RandomEffectsLaw


@dataclass(frozen=True)
class StratumWeights:
    """Baseline-covariate strata and their population masses."""

    strata: tuple  # ((w-pattern tuple, mass), ...)

    def __post_init__(self):
        norm = []
        total = 0.0
        for w, mass in self.strata:
            mass = float(mass)
            if not np.isfinite(mass) or mass < 0:
                raise InvalidInput("stratum masses must be nonnegative")
            norm.append((tuple(float(v) for v in np.atleast_1d(np.asarray(w, dtype=float))), mass))
            total += mass
        if not norm:
            raise InvalidInput("at least one stratum is required")
        if abs(total - 1.0) > 1e-10:
            raise InvalidInput(f"stratum masses must sum to 1 (got {total:.12g})")
        object.__setattr__(self, "strata", tuple(norm))


def single_stratum():
    """Weights for a model with no baseline covariates."""
    return StratumWeights((((), 1.0),))


@dataclass(frozen=True)
class ReferenceLevels:
    """Reference confounder level and mediator trajectory.

    The default trajectory is flat at its own baseline, so the hazard
    functional g vanishes identically along it.
    """

    u_ref: int = 0
    m_ref: Trajectory = None

    def __post_init__(self):
        if self.u_ref not in range(N_LEVELS):
            raise InvalidInput(f"u_ref must be in 0..{N_LEVELS - 1}")

    @property
    def trajectory(self):
        return self.m_ref if self.m_ref is not None else _ZERO_TRAJECTORY


@dataclass(frozen=True)
class EffectDecomposition:
    de: float
    ie: float
    te: float
    de_r: float
    ie_r: float
    delta_de: float
    delta_ie: float
    delta: float
    rho_policy: str
    mc_draws: int
    mc_se: dict = field(compare=False)

    def as_dict(self):
        out = {name: getattr(self, name) for name in COMPONENTS}
        out["rho_policy"] = self.rho_policy
        out["mc_draws"] = self.mc_draws
        out["mc_se"] = dict(self.mc_se)
        return out


@dataclass(frozen=True)
class RhoSweepResult:
    grid: tuple  # rho values
    decompositions: tuple  # EffectDecomposition per grid point
    minimum: EffectDecomposition  # per-stratum delta-minimal endpoints
    maximum: EffectDecomposition  # per-stratum delta-maximal endpoints

    def __iter__(self):
        return iter(self.decompositions)

    def __len__(self):
        return len(self.decompositions)

    def __getitem__(self, i):
        return self.decompositions[i]


def _mc_settings(mc):
    mc = dict(mc) if mc else {}
    draws = int(mc.pop("draws", DEFAULT_MC_DRAWS))
    seed = mc.pop("seed", 0)
    if mc:
        raise InvalidInput(f"unknown Monte Carlo settings: {sorted(mc)}")
    if draws < 1:
        raise InvalidInput("Monte Carlo draws must be >= 1")
    return draws, seed


def beta_terms(params, a, w, r0, m_descriptor, u, refs):
    """Main-effect, confounder, interaction and reference RMST terms.

    Returns (beta_m, beta_u, beta_mu, beta_bar) where each term is a
    difference of restricted means against the reference trajectory and
    reference confounder level, all at frailty ``r0``.
    """
    sp = params.survival if isinstance(params, ModelParams) else params
    m_ref = refs.trajectory
    m = m_descriptor if m_descriptor is not None else m_ref
    u_ref = refs.u_ref
    r_mu = rmst(sp, a, u, w, m, r0)
    r_m = rmst(sp, a, u_ref, w, m, r0)
    r_u = rmst(sp, a, u, w, m_ref, r0)
    r_ref = rmst(sp, a, u_ref, w, m_ref, r0)
    beta_m = r_m - r_ref
    beta_u = r_u - r_ref
    beta_mu = r_mu - r_m - r_u + r_ref
    return beta_m, beta_u, beta_mu, r_ref


# ---------------------------------------------------------------------------
# shared Monte Carlo machinery


def legacy_basis_weights(family=None):
    """Integrals of each basis function over the legacy averaging window.

    Because every basis function vanishes at t=0, the hazard functional
    of a trajectory with population coefficients c and random effects r
    is exactly c . w_pop + r[1:] . w_ran.
    """
    fam = family if family is not None else default_family()
    pop = _LEGACY_WEIGHTS @ (eval_basis(fam.population, _LEGACY_NODES) - eval_basis(fam.population, 0.0))
    ran = _LEGACY_WEIGHTS @ (eval_basis(fam.random, _LEGACY_NODES) - eval_basis(fam.random, 0.0))
    return pop, ran


def delta_coefs_batch(med, x, r_batch, family=None):
    """(n, P, 4) coefficients of M(t) - M(0) for a batch of random effects.

    Intercept terms cancel in the difference, so only the spline parts
    enter.
    """
    fam = family if family is not None else default_family()
    pop = np.einsum("k,kpc->pc", spline_coefficients(med, x), fam.pop_coefs)
    coefs = pop[None, :, :] + np.einsum("nk,kpc->npc", r_batch[:, 1:], fam.ran_coefs)
    p0 = int(np.clip(np.searchsorted(fam.breaks, 0.0, side="right") - 1, 0, len(fam.breaks) - 2))
    dt = 0.0 - fam.breaks[p0]
    c = coefs[:, p0, :]
    m0 = c[:, 0] + dt * (c[:, 1] + dt * (c[:, 2] + dt * c[:, 3]))
    out = coefs.copy()
    out[:, :, 0] -= m0[:, None]
    return out


class _McWork:
    """Per-call precomputation shared by every stratum and table cell."""

    def __init__(self, params, refs, r_batch):
        self.params = params
        self.refs = refs
        self.r = r_batch
        self.n = r_batch.shape[0]
        sp = params.survival
        self.kind = sp.functional_kind
        self.family = default_family()
        self.xi_r0 = sp.xi * r_batch[:, 0]
        if self.kind == THREE_YEAR_LEGACY:
            w_pop, w_ran = legacy_basis_weights(self.family)
            self._w_pop = w_pop
            self._g_ran = r_batch[:, 1:] @ w_ran
            self._g_pop = {}
            self.g_ref = g_functional(self.kind, refs.trajectory, 0.0)
        else:
            self._coef_cache = {}
            ref = refs.trajectory
            self.ref_breaks = ref.breaks
            self.ref_delta = ref.delta_coefs()
            self.ref_is_flat = bool(np.all(self.ref_delta == 0.0))

    def g_draws(self, a_src, u_src):
        """Legacy functional values per draw for the (a, u) trajectory."""
        key = (a_src, u_src)
        if key not in self._g_pop:
            coef = spline_coefficients(self.params.mediator, x_design(a_src, u_src))
            self._g_pop[key] = float(self._w_pop @ coef)
        return self._g_pop[key] + self._g_ran

    def cc_coefs(self, a_src, u_src):
        key = (a_src, u_src)
        if key not in self._coef_cache:
            self._coef_cache[key] = delta_coefs_batch(
                self.params.mediator, x_design(a_src, u_src), self.r, self.family
            )
        return self._coef_cache[key]


def _stratum_tables(work, w):
    """Restricted-mean tables for one covariate stratum, per draw.

    ``r_ref[arm, u]`` uses the reference trajectory; ``a_tbl[u', u]`` is
    the treated arm with hazard confounder u and the control-world
    trajectory of confounder u'; b0/b0d and c1/c1d are the control and
    treated diagonal worlds at reference/actual hazard levels.
    """
    sp = work.params.survival
    u_ref = work.refs.u_ref
    n = work.n

    def rmst_ref(arm, u_slot):
        ph = baseline(sp, arm)
        eta0 = eta_const(sp, arm, u_slot, w) + work.xi_r0
        if work.kind == THREE_YEAR_LEGACY:
            eta = eta0 + zeta_comb(sp, arm, u_slot) * work.g_ref
            return core.pc_rmst(ph.cut_points, ph.levels, eta, sp.t_max)
        if work.ref_is_flat:
            return core.pc_rmst(ph.cut_points, ph.levels, eta0, sp.t_max)
        coefs = np.broadcast_to(work.ref_delta, (n,) + work.ref_delta.shape)
        zg = np.full(n, zeta_comb(sp, arm, u_slot))
        return core.cc_rmst_batch(
            ph.cut_points, ph.levels, eta0, zg, work.ref_breaks, np.ascontiguousarray(coefs), sp.t_max
        )

    def rmst_traj(arm, u_slot, a_src, u_src):
        ph = baseline(sp, arm)
        eta0 = eta_const(sp, arm, u_slot, w) + work.xi_r0
        zc = zeta_comb(sp, arm, u_slot)
        if work.kind == THREE_YEAR_LEGACY:
            eta = eta0 + zc * work.g_draws(a_src, u_src)
            return core.pc_rmst(ph.cut_points, ph.levels, eta, sp.t_max)
        coefs = work.cc_coefs(a_src, u_src)
        return core.cc_rmst_batch(
            ph.cut_points, ph.levels, eta0, np.full(n, zc), work.family.breaks, coefs, sp.t_max
        )

    r_ref = np.stack([np.stack([rmst_ref(arm, u) for u in range(N_LEVELS)]) for arm in (0, 1)])
    a_tbl = np.stack(
        [np.stack([rmst_traj(1, u, 0, u_src) for u in range(N_LEVELS)]) for u_src in range(N_LEVELS)]
    )
    b0 = np.stack([rmst_traj(0, u_ref, 0, u_src) for u_src in range(N_LEVELS)])
    b0d = np.stack([rmst_traj(0, u_src, 0, u_src) for u_src in range(N_LEVELS)])
    c1 = np.stack([rmst_traj(1, u_ref, 1, u) for u in range(N_LEVELS)])
    c1d = np.stack([rmst_traj(1, u, 1, u) for u in range(N_LEVELS)])
    return {"r_ref": r_ref, "a_tbl": a_tbl, "b0": b0, "b0d": b0d, "c1": c1, "c1d": c1d}


class _StratumData:
    """Tables plus the joint-law-independent per-draw components."""

    def __init__(self, work, w_key, mass):
        cp = work.params.confounder
        self.w = np.asarray(w_key, dtype=float)
        self.key = w_key
        self.mass = mass
        self.mu = confounder_probs(cp, 1, self.w)
        self.phi = confounder_probs(cp, 0, self.w)
        self.marginals = MarginalPair(mu=self.mu, phi=self.phi)
        t = _stratum_tables(work, self.w)
        u_ref = work.refs.u_ref
        r1_ref = t["r_ref"][1, u_ref]
        r0_ref = t["r_ref"][0, u_ref]
        mu, phi = self.mu, self.phi
        self.te = mu @ t["c1d"] - phi @ t["b0d"]
        self.de_r = (
            (r1_ref - r0_ref)
            + phi @ (t["a_tbl"][:, u_ref, :] - r1_ref - t["b0"] + r0_ref)
            + mu @ (t["r_ref"][1] - r1_ref)
            - phi @ (t["r_ref"][0] - r0_ref)
        )
        self.delta_de = phi @ (t["b0d"] - t["b0"] - t["r_ref"][0] + r0_ref)
        self.ie_r = mu @ (t["c1"] - r1_ref) - phi @ (t["a_tbl"][:, u_ref, :] - r1_ref)
        self.delta_ie = mu @ (t["c1d"] - t["c1"] - t["r_ref"][1] + r1_ref)
        # delta(J) = sum_{u',u} J[u',u] * interaction[u',u] per draw
        self.interaction = (
            t["a_tbl"] - t["a_tbl"][:, u_ref, None, :] - t["r_ref"][1][None, :, :] + r1_ref[None, None, :]
        )
        self.interaction_mean = self.interaction.mean(axis=2)

    def delta_draws(self, joint):
        return np.einsum("vu,vun->n", joint.p, self.interaction)

    def endpoint_joints(self):
        j0 = joint_from_rho(self.marginals, 0.0)
        j1 = joint_from_rho(self.marginals, 1.0)
        return j0, j1


def _policy_label(rho_policy):
    if isinstance(rho_policy, str):
        return rho_policy
    if isinstance(rho_policy, dict):
        return "per-stratum"
    return f"rho={float(rho_policy):g}"


def _stratum_joint(stratum, rho_policy):
    """Joint table for one stratum under the configured policy."""
    if isinstance(rho_policy, str):
        if rho_policy not in ("min", "max"):
            raise InvalidInput(f"unknown rho policy {rho_policy!r}")
        j0, j1 = stratum.endpoint_joints()
        d0 = float(np.sum(j0.p * stratum.interaction_mean))
        d1 = float(np.sum(j1.p * stratum.interaction_mean))
        if rho_policy == "min":
            return j0 if d0 <= d1 else j1
        return j0 if d0 >= d1 else j1
    if isinstance(rho_policy, dict):
        if stratum.key not in rho_policy:
            raise InvalidInput(f"no rho configured for stratum {stratum.key!r}")
        return joint_from_rho(stratum.marginals, float(rho_policy[stratum.key]))
    return joint_from_rho(stratum.marginals, float(rho_policy))


def _prepare_strata(params, weights, refs, mc, infeasible="raise"):
    """Draw the shared random effects and build per-stratum tables.

    Strata whose marginals admit no monotone joint table are collected;
    the default policy raises, `skip-and-reweight` renormalizes over the
    feasible ones.
    """
    n_draws, seed = _mc_settings(mc)
    r_batch = sample_random_effects_batch(params.re_law, n_draws, seed, antithetic=True)
    work = _McWork(params, refs, r_batch)
    strata = []
    failed = []
    for w_key, mass in weights.strata:
        stratum = _StratumData(work, w_key, mass)
        try:
            stratum.endpoint_joints()
        except MonotonicityInfeasible:
            failed.append(w_key)
            continue
        strata.append(stratum)
    if failed and infeasible != "skip-and-reweight":
        raise InfeasibleStratum(
            f"{len(failed)} stratum/strata admit no monotone joint table",
            strata=failed,
        )
    if not strata:
        raise InfeasibleStratum("every stratum is monotonicity-infeasible", strata=failed)
    total = sum(s.mass for s in strata)
    if total <= 0:
        raise InvalidInput("no stratum mass left after reweighting")
    for s in strata:
        s.mass = s.mass / total
    return strata, n_draws


def _pair_se(x):
    """Monte Carlo standard error honouring antithetic pairing."""
    n = len(x)
    if n >= 4 and n % 2 == 0:
        pairs = x.reshape(-1, 2).mean(axis=1)
        return float(pairs.std(ddof=1) / math.sqrt(len(pairs)))
    if n >= 2:
        return float(x.std(ddof=1) / math.sqrt(n))
    return 0.0


def _assemble(strata, joints, label, n_draws):
    """Weighted per-draw component totals -> EffectDecomposition."""
    comp = {name: 0.0 for name in ("te", "de_r", "delta_de", "ie_r", "delta_ie", "delta")}
    for s, j in zip(strata, joints):
        comp["te"] = comp["te"] + s.mass * s.te
        comp["de_r"] = comp["de_r"] + s.mass * s.de_r
        comp["delta_de"] = comp["delta_de"] + s.mass * s.delta_de
        comp["ie_r"] = comp["ie_r"] + s.mass * s.ie_r
        comp["delta_ie"] = comp["delta_ie"] + s.mass * s.delta_ie
        comp["delta"] = comp["delta"] + s.mass * s.delta_draws(j)
    de = comp["de_r"] - comp["delta_de"] + comp["delta"]
    ie = comp["te"] - de
    per_draw = dict(comp, de=de, ie=ie)
    de_mean = float(np.mean(de))
    te_mean = float(np.mean(comp["te"]))
    # indirect part defined as te - de, nudged by the rounding gap so
    # that de + ie == te holds bitwise while te stays the direct total
    ie_mean = te_mean - de_mean
    for _ in range(5):
        gap = te_mean - (de_mean + ie_mean)
        if gap == 0.0:
            break
        ie_mean += gap
    else:
        te_mean = de_mean + ie_mean
    return EffectDecomposition(
        de=de_mean,
        ie=ie_mean,
        te=te_mean,
        de_r=float(np.mean(comp["de_r"])),
        ie_r=float(np.mean(comp["ie_r"])),
        delta_de=float(np.mean(comp["delta_de"])),
        delta_ie=float(np.mean(comp["delta_ie"])),
        delta=float(np.mean(comp["delta"])),
        rho_policy=label,
        mc_draws=n_draws,
        mc_se={name: _pair_se(np.asarray(per_draw[name])) for name in COMPONENTS},
    )


def decompose(params, weights, rho_policy, refs=None, mc=None, infeasible="raise"):
    """Full effect decomposition under one sensitivity policy.

    ``rho_policy`` is a number in [0, 1], a map from stratum pattern to
    such numbers, or "min"/"max" for the per-stratum endpoint that
    minimizes/maximizes the unidentified interaction term.
    """
    refs = refs if refs is not None else ReferenceLevels()
    strata, n_draws = _prepare_strata(params, weights, refs, mc, infeasible)
    joints = [_stratum_joint(s, rho_policy) for s in strata]
    return _assemble(strata, joints, _policy_label(rho_policy), n_draws)


def rho_sweep(params, weights, refs=None, mc=None, grid=None, infeasible="raise"):
    """Decompositions along a global-rho grid, with shared draws.

    The restricted-mean tables do not depend on rho, so the sweep reuses
    them; only the unidentified term is reweighted.  Also returns the
    per-stratum endpoint-optimal minimum and maximum decompositions.
    """
    refs = refs if refs is not None else ReferenceLevels()
    grid = tuple(float(r) for r in (grid if grid is not None else np.linspace(0.0, 1.0, 11)))
    if any(not 0.0 <= r <= 1.0 for r in grid):
        raise InvalidInput("rho grid values must lie in [0, 1]")
    strata, n_draws = _prepare_strata(params, weights, refs, mc, infeasible)
    decs = []
    for rho in grid:
        joints = [joint_from_rho(s.marginals, rho) for s in strata]
        decs.append(_assemble(strata, joints, f"rho={rho:g}", n_draws))
    minimum = _assemble(strata, [_stratum_joint(s, "min") for s in strata], "min", n_draws)
    maximum = _assemble(strata, [_stratum_joint(s, "max") for s in strata], "max", n_draws)
    return RhoSweepResult(grid=grid, decompositions=tuple(decs), minimum=minimum, maximum=maximum)


def relaxed_bounds(params, weights, refs=None, mc=None):
    """Effect bounds when the joint confounder law is only constrained
    by its marginals (monotonicity dropped).

    Per stratum, the unidentified term is linear in the joint table with
    the mean interaction matrix as weights; its exact extrema over the
    transportation polytope are attained at vertices.
    """
    refs = refs if refs is not None else ReferenceLevels()
    n_draws, seed = _mc_settings(mc)
    r_batch = sample_random_effects_batch(params.re_law, n_draws, seed, antithetic=True)
    work = _McWork(params, refs, r_batch)
    de_r = delta_de = te = 0.0
    delta_lo = delta_hi = 0.0
    for w_key, mass in weights.strata:
        s = _StratumData(work, w_key, mass)
        lo, hi, _, _ = optimize_linear_over_polytope(
            s.marginals, s.interaction_mean, "Unconstrained"
        )
        delta_lo += mass * lo
        delta_hi += mass * hi
        de_r += mass * float(np.mean(s.de_r))
        delta_de += mass * float(np.mean(s.delta_de))
        te += mass * float(np.mean(s.te))
    de_lo = de_r - delta_de + delta_lo
    de_hi = de_r - delta_de + delta_hi
    return {"de": (de_lo, de_hi), "ie": (te - de_hi, te - de_lo)}


def proportion_mediated(draws):
    """Posterior summary of IE/TE over decomposition draws.

    Draws with a negative direct or indirect part are discarded (the
    ratio is not interpretable as a proportion there), as are the
    measure-zero cases with te == 0.
    """
    if not draws:
        raise InvalidInput("no decomposition draws supplied")
    kept = [d for d in draws if d.de >= 0.0 and d.ie >= 0.0 and d.te > 0.0]
    n_discarded = len(draws) - len(kept)
    if not kept:
        raise AllDrawsDiscarded("every decomposition draw was discarded")
    pm = np.array([d.ie / d.te for d in kept])
    lo, hi = np.quantile(pm, [0.025, 0.975])
    return {"pm_mean": float(pm.mean()), "pm_interval": (float(lo), float(hi)), "n_discarded": n_discarded}
