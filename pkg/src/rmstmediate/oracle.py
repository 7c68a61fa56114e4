"""Structural counterfactual simulator and ground-truth effects.

Simulates complete potential-outcome worlds for every subject: both
counterfactual confounder levels, both mediator trajectories, and the
four restricted event times that the effect decomposition reasons
about.  Direct averaging of those potential times gives a ground truth
against which the model-based decomposition can be checked end to end.

Cross-world couplings are chosen for variance reduction, not substance:
one random-effect vector and one exponential threshold are shared by
all four worlds of a subject.  The estimands are means, so the coupling
does not change them.

The nested counterfactual T(a, M_a') uses the confounder level of the
realized arm a in the hazard and the trajectory of arm a'.
"""

from dataclasses import dataclass, field

import numpy as np

from . import core
from .effects import ModelParams, StratumWeights, delta_coefs_batch, legacy_basis_weights
from .errors import InvalidInput
from .mediator import default_family, spline_coefficients, x_design
from .survival import EVENT_HORIZON, THREE_YEAR_LEGACY, baseline
from .confounder import JointConfounderMatrix, MarginalPair, confounder_probs, joint_from_rho

N_LEVELS = 3


@dataclass(frozen=True)
class ScmConfig:
    params: ModelParams
    weights: StratumWeights
    joints: tuple  # JointConfounderMatrix per stratum, aligned with weights
    n: int
    admin_time: float = None  # administrative censoring, None = none
    censor_rate: float = None  # independent exponential censoring rate
    visit_times: tuple = ()
    dropout: float = 0.0  # per-visit dropout probability (scalar or per visit)

    def __post_init__(self):
        if len(self.joints) != len(self.weights.strata):
            raise InvalidInput("one joint confounder table per stratum is required")
        for j in self.joints:
            if not isinstance(j, JointConfounderMatrix) or j.k != N_LEVELS:
                raise InvalidInput("joint tables must be 3x3 JointConfounderMatrix")
        if self.n < 1:
            raise InvalidInput("cohort size must be >= 1")
        v = np.asarray(self.visit_times, dtype=float)
        if len(v) and (np.any(v < 0) or np.any(np.diff(v) <= 0)):
            raise InvalidInput("visit times must be nonnegative and increasing")
        object.__setattr__(self, "visit_times", tuple(float(t) for t in v))
        drop = np.atleast_1d(np.asarray(self.dropout, dtype=float))
        if len(drop) == 1:
            drop = np.full(max(len(v), 1), drop[0])
        if len(v) and len(drop) != len(v):
            raise InvalidInput("dropout must be scalar or one value per visit")
        if np.any((drop < 0) | (drop > 1)):
            raise InvalidInput("dropout probabilities must lie in [0, 1]")
        object.__setattr__(self, "dropout", tuple(float(p) for p in drop))
        for name in ("admin_time", "censor_rate"):
            val = getattr(self, name)
            if val is not None and not (np.isfinite(val) and val > 0):
                raise InvalidInput(f"{name} must be positive when given")


def scm_config_from_rho(params, weights, rho, n, **kwargs):
    """Config whose joint tables come from the model's own marginals."""
    joints = []
    for w_key, _ in weights.strata:
        w = np.asarray(w_key, dtype=float)
        m = MarginalPair(
            mu=confounder_probs(params.confounder, 1, w),
            phi=confounder_probs(params.confounder, 0, w),
        )
        joints.append(joint_from_rho(m, rho))
    return ScmConfig(params=params, weights=weights, joints=tuple(joints), n=n, **kwargs)


@dataclass(frozen=True, slots=True)
class ScmTruth:
    """One subject's complete potential-outcome record.

    The four times are restricted to (0, t_max]; ``raw_treated`` and
    ``raw_control`` keep the unrestricted realized-world event times for
    observational emission.  Trajectories are determined by
    (arm, confounder level, r, w); see :func:`potential_trajectory`.
    """

    subject_id: str
    w_index: int
    w: tuple
    r: np.ndarray = field(compare=False)
    u_astar: int
    u_a: int
    arm: int
    t_arm1_m1: float
    t_arm1_m0: float
    t_arm0_m0: float
    t_arm0_m1: float
    raw_treated: float
    raw_control: float


def potential_trajectory(cfg, truth, arm):
    """Materialize the potential mediator trajectory M_arm of a subject."""
    from .mediator import make_trajectory

    u = truth.u_a if arm == 1 else truth.u_astar
    return make_trajectory(cfg.params.mediator, x_design(arm, u), np.asarray(truth.w), truth.r)


def _eta_parts(sp, arm, u_vec, w_mat, xi_r0):
    g1 = np.array([0.0, sp.gamma1[0], sp.gamma1[1]])
    g2 = np.array([0.0, sp.gamma2[0], sp.gamma2[1]])
    out = g1[u_vec] + arm * g2[u_vec] + xi_r0
    if len(sp.gamma3):
        out = out + w_mat @ sp.gamma3
    return out


def _zeta_vec(sp, arm, u_vec):
    z1 = np.array([0.0, sp.zeta[1], sp.zeta[2]])
    return sp.zeta[0] + z1[u_vec] + sp.zeta[3] * arm


def _invert_worlds(cfg, r, e, w_mat, u_a, u_astar):
    """Raw event times of the four potential worlds, vectorized."""
    params = cfg.params
    sp = params.survival
    n = len(e)
    xi_r0 = sp.xi * r[:, 0]
    fam = default_family()
    worlds = {
        "t_arm1_m1": (1, u_a, 1, u_a),
        "t_arm1_m0": (1, u_a, 0, u_astar),
        "t_arm0_m0": (0, u_astar, 0, u_astar),
        "t_arm0_m1": (0, u_astar, 1, u_a),
    }
    out = {}
    if sp.functional_kind == THREE_YEAR_LEGACY:
        w_pop, w_ran = legacy_basis_weights(fam)
        g_ran = r[:, 1:] @ w_ran
        g_pop = np.array(
            [
                [float(w_pop @ spline_coefficients(params.mediator, x_design(a, u))) for u in range(N_LEVELS)]
                for a in (0, 1)
            ]
        )
        for name, (arm, u_slot, a_src, u_src) in worlds.items():
            ph = baseline(sp, arm)
            eta = _eta_parts(sp, arm, u_slot, w_mat, xi_r0) + _zeta_vec(sp, arm, u_slot) * (
                g_pop[a_src, u_src] + g_ran
            )
            out[name] = core.pc_invert(ph.cut_points, ph.levels, eta, e, EVENT_HORIZON)
        return out

    coef_cache = {}

    def coefs_for(a_src, u_src):
        key = a_src
        if key not in coef_cache:
            batch = np.empty((n, len(fam.breaks) - 1, 4))
            for u_val in range(N_LEVELS):
                sel = np.flatnonzero(u_src == u_val)
                if len(sel):
                    batch[sel] = delta_coefs_batch(
                        params.mediator, x_design(a_src, u_val), r[sel], fam
                    )
            coef_cache[key] = batch
        return coef_cache[key]

    for name, (arm, u_slot, a_src, u_src) in worlds.items():
        ph = baseline(sp, arm)
        eta0 = _eta_parts(sp, arm, u_slot, w_mat, xi_r0)
        zg = _zeta_vec(sp, arm, u_slot)
        coefs = coefs_for(a_src, u_a if a_src == 1 else u_astar)
        out[name] = core.cc_invert_batch(
            ph.cut_points, ph.levels, eta0, zg, fam.breaks, coefs, e, EVENT_HORIZON
        )
    return out


def simulate_truth(cfg, seed):
    """Draw a full cohort of counterfactual worlds; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = cfg.params
    n = cfg.n
    patterns = [np.asarray(w, dtype=float) for w, _ in cfg.weights.strata]
    masses = np.array([m for _, m in cfg.weights.strata])
    w_idx = rng.choice(len(patterns), size=n, p=masses)
    u_astar = np.empty(n, dtype=int)
    u_a = np.empty(n, dtype=int)
    for s, joint in enumerate(cfg.joints):
        sel = np.flatnonzero(w_idx == s)
        if not len(sel):
            continue
        flat = joint.p.reshape(-1)
        cells = rng.choice(N_LEVELS * N_LEVELS, size=len(sel), p=flat / flat.sum())
        u_astar[sel] = cells // N_LEVELS
        u_a[sel] = cells % N_LEVELS
    r = rng.standard_normal((n, 4)) @ params.re_law.cholesky.T
    e = rng.standard_exponential(n)
    arm = rng.integers(0, 2, size=n)
    w_mat = np.stack(patterns)[w_idx] if patterns[0].size else np.zeros((n, 0))

    raw = _invert_worlds(cfg, r, e, w_mat, u_a, u_astar)
    t_max = params.survival.t_max
    truths = []
    for i in range(n):
        truths.append(
            ScmTruth(
                subject_id=f"s{i + 1:06d}",
                w_index=int(w_idx[i]),
                w=tuple(float(v) for v in patterns[w_idx[i]]),
                r=r[i],
                u_astar=int(u_astar[i]),
                u_a=int(u_a[i]),
                arm=int(arm[i]),
                t_arm1_m1=min(float(raw["t_arm1_m1"][i]), t_max),
                t_arm1_m0=min(float(raw["t_arm1_m0"][i]), t_max),
                t_arm0_m0=min(float(raw["t_arm0_m0"][i]), t_max),
                t_arm0_m1=min(float(raw["t_arm0_m1"][i]), t_max),
                raw_treated=float(raw["t_arm1_m1"][i]),
                raw_control=float(raw["t_arm0_m0"][i]),
            )
        )
    return truths


@dataclass(frozen=True)
class OracleEffects:
    de: float
    ie: float
    te: float
    de_se: float
    ie_se: float
    te_se: float
    n: int


def oracle_effects(truths):
    """Plain averages of the potential-time contrasts with sampling SEs."""
    if not truths:
        raise InvalidInput("no simulated subjects")
    t11 = np.array([t.t_arm1_m1 for t in truths])
    t10 = np.array([t.t_arm1_m0 for t in truths])
    t00 = np.array([t.t_arm0_m0 for t in truths])
    n = len(truths)

    def mean_se(x):
        return float(x.mean()), float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    de, de_se = mean_se(t10 - t00)
    ie, ie_se = mean_se(t11 - t10)
    te_se = mean_se(t11 - t00)[1]
    # te defined as de + ie so the telescoping identity holds bitwise
    return OracleEffects(de=de, ie=ie, te=de + ie, de_se=de_se, ie_se=ie_se, te_se=te_se, n=n)


@dataclass(frozen=True)
class SubjectRecord:
    """One cohort member's baseline row as a study would observe it."""

    subject_id: str
    arm: int
    u_level: int
    w: tuple
    exit_time: float
    event: bool
    covariates: dict = None

    def __post_init__(self):
        if self.arm not in (0, 1):
            raise InvalidInput("arm must be 0 or 1")
        if self.u_level not in range(N_LEVELS):
            raise InvalidInput("u_level must be 0, 1 or 2")
        if not (np.isfinite(self.exit_time) and self.exit_time > 0):
            raise InvalidInput("exit_time must be positive")
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        object.__setattr__(self, "event", bool(self.event))


def emit_observational(cfg, truths, seed):
    """The dataset a randomized study would record for these subjects.

    The realized world follows the assigned arm; censoring is the
    earlier of the administrative end and an independent exponential
    time; mediator measurements follow the visit schedule with monotone
    dropout and Gaussian measurement noise.
    """
    from .mediator import LongitudinalRecord

    rng = np.random.default_rng(seed)
    params = cfg.params
    med = params.mediator
    n = len(truths)
    arm = np.array([t.arm for t in truths])
    u_obs = np.where(arm == 1, [t.u_a for t in truths], [t.u_astar for t in truths])
    t_raw = np.where(arm == 1, [t.raw_treated for t in truths], [t.raw_control for t in truths])

    censor = np.full(n, np.inf)
    if cfg.censor_rate is not None:
        censor = rng.exponential(scale=1.0 / cfg.censor_rate, size=n)
    if cfg.admin_time is not None:
        censor = np.minimum(censor, cfg.admin_time)
    exit_time = np.minimum(t_raw, censor)
    event = t_raw <= censor

    subjects = [
        SubjectRecord(
            subject_id=truths[i].subject_id,
            arm=int(arm[i]),
            u_level=int(u_obs[i]),
            w=truths[i].w,
            exit_time=float(exit_time[i]),
            event=bool(event[i]),
        )
        for i in range(n)
    ]

    records = []
    visits = np.asarray(cfg.visit_times, dtype=float)
    if len(visits):
        from .basis import eval_basis

        fam = default_family()
        b_pop = eval_basis(fam.population, visits)  # (V, 4)
        b_ran = eval_basis(fam.random, visits)  # (V, 3)
        r_mat = np.stack([t.r for t in truths])
        w_mat = np.stack([np.asarray(t.w) for t in truths]) if truths[0].w else np.zeros((n, 0))
        coefs = np.array(
            [[spline_coefficients(med, x_design(a, u)) for u in range(N_LEVELS)] for a in (0, 1)]
        )
        const = med.beta0 + r_mat[:, 0]
        xs = np.stack([x_design(int(arm[i]), int(u_obs[i])) for i in range(n)])
        const = const + xs @ med.beta1
        if len(med.beta2):
            const = const + w_mat @ med.beta2
        values = const[:, None] + np.einsum("nk,vk->nv", coefs[arm, u_obs], b_pop)
        values += r_mat[:, 1:] @ b_ran.T
        noise = rng.standard_normal((n, len(visits))) * med.sigma
        drop_u = rng.random((n, len(visits)))
        dropped = np.cumsum(drop_u < np.asarray(cfg.dropout)[None, :], axis=1) > 0
        for i in range(n):
            for v_idx, v in enumerate(visits):
                if v > exit_time[i] or dropped[i, v_idx]:
                    continue
                records.append(
                    LongitudinalRecord(
                        subject_id=truths[i].subject_id,
                        t=float(v),
                        m_obs=float(values[i, v_idx] + noise[i, v_idx]),
                    )
                )
    return subjects, records
