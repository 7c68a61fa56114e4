"""Proportional-hazards outcome model with trajectory functionals.

The hazard for arm ``a`` is

    h(t) = h_a(t) * exp{gamma1'U + gamma2'U*a + gamma3'w
                        + g(t) * (zeta1 + zeta2*I(U=1) + zeta3*I(U=2) + zeta4*a)
                        + xi * r0}

where h_a is a piecewise-constant baseline and g summarizes the
mediator trajectory: either the cumulative change over the first three
years (constant in t, hazard stays piecewise constant) or the current
change since baseline (hazard varies smoothly within baseline pieces).

RMST is the integral of the survival curve over [0, t_max]. With a
constant-in-t exponent both the cumulative hazard and the RMST have
closed piecewise-exponential forms; the trajectory-dependent case uses
the adaptive Gauss-Legendre kernels. Event times are drawn by inverting
the cumulative hazard at a unit-exponential threshold.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import core
from ._quad import GL_NODES, GL_WEIGHTS, MAX_LEVEL
from .errors import DegenerateRiskSet, InvalidInput
from .mediator import Trajectory, _vec

THREE_YEAR_LEGACY = "three-year-legacy"
CURRENT_CHANGE = "current-change"
FUNCTIONAL_KINDS = (THREE_YEAR_LEGACY, CURRENT_CHANGE)

DEFAULT_CUT_POINTS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 9.0, 11.0, 13.0)
DEFAULT_T_MAX = 15.0
EVENT_HORIZON = 500.0

# legacy window [0, 3] with a quadrature split at the year-1 knot; 8-point
# Gauss-Legendre per segment is exact for the piecewise-cubic trajectories
_LEGACY_END = 3.0
_LEGACY_SPLIT = 1.0
_LG8_NODES, _LG8_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _segment_nodes(a, b):
    half = 0.5 * (b - a)
    return a + half * (_LG8_NODES + 1.0), half * _LG8_WEIGHTS


_LEGACY_NODES = np.concatenate(
    [
        _segment_nodes(0.0, _LEGACY_SPLIT)[0],
        _segment_nodes(_LEGACY_SPLIT, _LEGACY_END)[0],
    ]
)
_LEGACY_WEIGHTS = np.concatenate(
    [
        _segment_nodes(0.0, _LEGACY_SPLIT)[1],
        _segment_nodes(_LEGACY_SPLIT, _LEGACY_END)[1],
    ]
)


@dataclass(frozen=True)
class PiecewiseHazard:
    cut_points: np.ndarray  # (P,), starts at 0, strictly increasing
    levels: np.ndarray  # (P,), strictly positive; last piece open-ended

    def __post_init__(self):
        cuts = _vec("cut_points", self.cut_points)
        levels = _vec("levels", self.levels)
        if len(cuts) != len(levels):
            raise InvalidInput("cut_points and levels must have equal length")
        if len(cuts) == 0 or cuts[0] != 0.0:
            raise InvalidInput("cut_points must start at 0")
        if np.any(np.diff(cuts) <= 0):
            raise InvalidInput("cut_points must be strictly increasing")
        if np.any(levels <= 0):
            raise InvalidInput("hazard levels must be strictly positive")
        object.__setattr__(self, "cut_points", cuts)
        object.__setattr__(self, "levels", levels)


@dataclass(frozen=True)
class SurvivalParams:
    baseline_control: PiecewiseHazard
    baseline_treated: PiecewiseHazard
    gamma1: np.ndarray  # (2,) confounder main effects
    gamma2: np.ndarray  # (2,) confounder-by-arm interactions
    gamma3: np.ndarray  # (|W|,)
    zeta: np.ndarray  # (4,) g main effect and interactions with U, A
    xi: float
    functional_kind: str = THREE_YEAR_LEGACY
    t_max: float = DEFAULT_T_MAX

    def __post_init__(self):
        object.__setattr__(self, "gamma1", _vec("gamma1", self.gamma1, 2))
        object.__setattr__(self, "gamma2", _vec("gamma2", self.gamma2, 2))
        object.__setattr__(self, "gamma3", _vec("gamma3", self.gamma3))
        object.__setattr__(self, "zeta", _vec("zeta", self.zeta, 4))
        if not np.isfinite(self.xi):
            raise InvalidInput("xi must be finite")
        if self.functional_kind not in FUNCTIONAL_KINDS:
            raise InvalidInput(f"unknown functional kind {self.functional_kind!r}")
        if not (np.isfinite(self.t_max) and self.t_max > 0):
            raise InvalidInput("t_max must be positive")


@dataclass(frozen=True)
class SurvivalOutcome:
    exit_time: float
    event: bool

    def __post_init__(self):
        if not (np.isfinite(self.exit_time) and self.exit_time > 0):
            raise InvalidInput("exit_time must be finite and positive")
        object.__setattr__(self, "event", bool(self.event))


def baseline(sp: SurvivalParams, a) -> PiecewiseHazard:
    if a not in (0, 1):
        raise InvalidInput(f"arm must be 0 or 1, got {a!r}")
    return sp.baseline_treated if a == 1 else sp.baseline_control


def eta_const(sp: SurvivalParams, a, u, w):
    """Exponent terms that do not involve g or the frailty."""
    if u not in (0, 1, 2):
        raise InvalidInput(f"confounder level must be 0, 1 or 2, got {u!r}")
    u_ind = np.array([1.0 if u == 1 else 0.0, 1.0 if u == 2 else 0.0])
    out = float(sp.gamma1 @ u_ind) + a * float(sp.gamma2 @ u_ind)
    if len(sp.gamma3):
        out += float(sp.gamma3 @ _vec("w", w, len(sp.gamma3)))
    return out


def zeta_comb(sp: SurvivalParams, a, u):
    """Coefficient multiplying g in the exponent for the given (a, u)."""
    return float(
        sp.zeta[0]
        + sp.zeta[1] * (1.0 if u == 1 else 0.0)
        + sp.zeta[2] * (1.0 if u == 2 else 0.0)
        + sp.zeta[3] * a
    )


def g_functional(kind, trajectory, t):
    """Trajectory summary driving the hazard at time ``t``."""
    if kind not in FUNCTIONAL_KINDS:
        raise InvalidInput(f"unknown functional kind {kind!r}")
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InvalidInput("functional time must be finite and nonnegative")
    m0 = float(trajectory(0.0))
    if kind == CURRENT_CHANGE:
        return float(trajectory(t)) - m0
    try:
        vals = np.asarray(trajectory(_LEGACY_NODES), dtype=float)
        if vals.shape != _LEGACY_NODES.shape:
            raise TypeError("scalar-only closure")
    except (TypeError, ValueError):  # closure not vectorized
        vals = np.array([float(trajectory(v)) for v in _LEGACY_NODES])
    return float(_LEGACY_WEIGHTS @ (vals - m0))


def _delta_pp(trajectory):
    """(breaks, coefs) of M(t) - M(0) when the trajectory is piecewise cubic."""
    if isinstance(trajectory, Trajectory):
        return trajectory.breaks, trajectory.delta_coefs()
    return None


def hazard(sp: SurvivalParams, a, u, w, trajectory, r0, t):
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InvalidInput("hazard time must be finite and nonnegative")
    ph = baseline(sp, a)
    g = g_functional(sp.functional_kind, trajectory, t)
    exponent = eta_const(sp, a, u, w) + zeta_comb(sp, a, u) * g + sp.xi * r0
    return float(core.pc_level(ph.cut_points, ph.levels, np.array([t]))[0] * math.exp(exponent))


# ---------------------------------------------------------------------------
# generic-callable quadrature (kernel-equivalent logic for closures that are
# not piecewise cubics; used only on cold paths)


def _callable_panel(fn, a, b, want_surv, h_acc, rtol=1e-9):
    prev = None
    cur = 0.0
    for lev in range(MAX_LEVEL + 1):
        m = 1 << lev
        edges = np.linspace(a, b, m + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        v = mid[:, None] + half[:, None] * GL_NODES[None, :]
        hv = np.array([[fn(x) for x in row] for row in v])
        if not want_surv:
            cur = float(np.sum(half[:, None] * GL_WEIGHTS[None, :] * hv))
        else:
            scale = 0.5 * (GL_NODES + 1.0)
            span = v - edges[:-1, None]
            u_nodes = edges[:-1, None, None] + span[:, :, None] * scale[None, None, :]
            hu = np.array([[[fn(x) for x in inner] for inner in row] for row in u_nodes])
            partial = 0.5 * span * (hu @ GL_WEIGHTS)
            dh_panel = half * (hv @ GL_WEIGHTS)
            h_start = h_acc + np.concatenate([[0.0], np.cumsum(dh_panel[:-1])])
            cur = float(
                np.sum(half[:, None] * GL_WEIGHTS[None, :] * np.exp(-(h_start[:, None] + partial)))
            )
        if prev is not None and abs(cur - prev) <= rtol * max(abs(cur), 1e-12):
            return cur
        prev = cur
    return cur


def _callable_hazard_fn(sp, a, u, w, trajectory, r0):
    ph = baseline(sp, a)
    e0 = eta_const(sp, a, u, w) + sp.xi * r0
    zc = zeta_comb(sp, a, u)
    m0 = float(trajectory(0.0))

    def fn(t):
        lev = float(core.pc_level(ph.cut_points, ph.levels, np.array([t]))[0])
        return lev * math.exp(e0 + zc * (float(trajectory(t)) - m0))

    return fn


def _callable_grid(ph, t_end):
    cuts = ph.cut_points
    pts = np.concatenate([[0.0, t_end], cuts[(cuts > 0) & (cuts < t_end)]])
    return np.unique(pts)


def cumulative_hazard(sp: SurvivalParams, a, u, w, trajectory, r0, t):
    """Integral of the hazard over [0, t]."""
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InvalidInput("time must be finite and nonnegative")
    if t == 0.0:
        return 0.0
    ph = baseline(sp, a)
    if sp.functional_kind == THREE_YEAR_LEGACY:
        g = g_functional(sp.functional_kind, trajectory, 0.0)
        exponent = eta_const(sp, a, u, w) + zeta_comb(sp, a, u) * g + sp.xi * r0
        return float(np.exp(exponent) * core.pc_cumhaz(ph.cut_points, ph.levels, np.array([t]))[0])
    pp = _delta_pp(trajectory)
    e0 = eta_const(sp, a, u, w) + sp.xi * r0
    zc = zeta_comb(sp, a, u)
    if pp is not None:
        return float(core.cc_cumhaz(ph.cut_points, ph.levels, e0, zc, pp[0], pp[1], t))
    fn = _callable_hazard_fn(sp, a, u, w, trajectory, r0)
    grid = _callable_grid(ph, t)
    return float(sum(_callable_panel(fn, aa, bb, False, 0.0) for aa, bb in zip(grid[:-1], grid[1:])))


def rmst(sp: SurvivalParams, a, u, w, trajectory, r0):
    """Restricted mean event-free time over [0, t_max]."""
    ph = baseline(sp, a)
    if sp.functional_kind == THREE_YEAR_LEGACY:
        g = g_functional(sp.functional_kind, trajectory, 0.0)
        exponent = eta_const(sp, a, u, w) + zeta_comb(sp, a, u) * g + sp.xi * r0
        return float(core.pc_rmst(ph.cut_points, ph.levels, np.array([exponent]), sp.t_max)[0])
    pp = _delta_pp(trajectory)
    e0 = eta_const(sp, a, u, w) + sp.xi * r0
    zc = zeta_comb(sp, a, u)
    if pp is not None:
        return float(core.cc_rmst(ph.cut_points, ph.levels, e0, zc, pp[0], pp[1], sp.t_max))
    fn = _callable_hazard_fn(sp, a, u, w, trajectory, r0)
    grid = _callable_grid(ph, sp.t_max)
    out = 0.0
    h_acc = 0.0
    for aa, bb in zip(grid[:-1], grid[1:]):
        out += _callable_panel(fn, aa, bb, True, h_acc)
        h_acc += _callable_panel(fn, aa, bb, False, 0.0)
    return float(out)


def survival_loglik(sp: SurvivalParams, a, u, w, trajectory, r0, outcome: SurvivalOutcome):
    """d * log h(exit) - H(exit)."""
    h_exit = cumulative_hazard(sp, a, u, w, trajectory, r0, outcome.exit_time)
    out = -h_exit
    if outcome.event:
        out += math.log(hazard(sp, a, u, w, trajectory, r0, outcome.exit_time))
    return float(out)


def event_time_from_threshold(sp: SurvivalParams, a, u, w, trajectory, r0, e):
    """Smallest t with H(t) >= e, capped at the simulation horizon.

    ``e`` may be a scalar or an array of thresholds; the constant-exponent
    case inverts the piecewise-linear cumulative hazard exactly.
    """
    ph = baseline(sp, a)
    e_arr = np.atleast_1d(np.asarray(e, dtype=float))
    scalar = np.isscalar(e) or np.ndim(e) == 0
    if sp.functional_kind == THREE_YEAR_LEGACY:
        g = g_functional(sp.functional_kind, trajectory, 0.0)
        exponent = eta_const(sp, a, u, w) + zeta_comb(sp, a, u) * g + sp.xi * r0
        t = core.pc_invert(ph.cut_points, ph.levels, np.full(len(e_arr), exponent), e_arr, EVENT_HORIZON)
        return float(t[0]) if scalar else t
    pp = _delta_pp(trajectory)
    e0 = eta_const(sp, a, u, w) + sp.xi * r0
    zc = zeta_comb(sp, a, u)
    if pp is not None:
        out = np.array(
            [core.cc_invert(ph.cut_points, ph.levels, e0, zc, pp[0], pp[1], ei, EVENT_HORIZON) for ei in e_arr]
        )
        return float(out[0]) if scalar else out
    fn = _callable_hazard_fn(sp, a, u, w, trajectory, r0)
    out = np.empty(len(e_arr))
    for i, ei in enumerate(e_arr):
        out[i] = _invert_callable(fn, ph, ei)
    return float(out[0]) if scalar else out


def _invert_callable(fn, ph, e, tol=1e-10):
    if e <= 0:
        return 0.0
    grid = _callable_grid(ph, EVENT_HORIZON)
    h_acc = 0.0
    for aa, bb in zip(grid[:-1], grid[1:]):
        dh = _callable_panel(fn, aa, bb, False, 0.0)
        if h_acc + dh >= e:
            lo, hi = aa, bb
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if h_acc + _callable_panel(fn, aa, mid, False, 0.0) < e:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        h_acc += dh
    return EVENT_HORIZON


def simulate_event_time(sp: SurvivalParams, a, u, w, trajectory, r0, seed):
    """Inverse-CDF draw of an (uncensored) event time."""
    rng = np.random.default_rng(seed)
    e = rng.standard_exponential()
    return float(event_time_from_threshold(sp, a, u, w, trajectory, r0, e))


def km_restricted_auc(outcomes, t_max):
    """Product-limit curve area on [0, t_max] with a Greenwood-type SE."""
    if not outcomes:
        raise InvalidInput("need at least one outcome")
    if not (np.isfinite(t_max) and t_max > 0):
        raise InvalidInput("t_max must be positive")
    times = np.array([o.exit_time for o in outcomes], dtype=float)
    events = np.array([o.event for o in outcomes], dtype=bool)
    if np.all(times <= 0.0):
        raise DegenerateRiskSet("risk set is empty at time zero")
    event_times = np.unique(times[events])
    # survival curve as step function: segments [seg_t[i], seg_t[i+1]) at seg_s[i]
    seg_t = [0.0]
    seg_s = [1.0]
    drops = []  # (time, n_j, d_j, s_after)
    s = 1.0
    for tj in event_times:
        n_j = int(np.sum(times >= tj))
        d_j = int(np.sum((times == tj) & events))
        s *= 1.0 - d_j / n_j
        seg_t.append(float(tj))
        seg_s.append(s)
        drops.append((float(tj), n_j, d_j, s))

    def area(from_t):
        total = 0.0
        bounds = seg_t + [np.inf]
        for i in range(len(seg_s)):
            lo = max(bounds[i], from_t)
            hi = min(bounds[i + 1], t_max)
            if hi > lo:
                total += seg_s[i] * (hi - lo)
        return total

    estimate = area(0.0)
    var = 0.0
    for tj, n_j, d_j, _ in drops:
        if tj > t_max or n_j == d_j:
            continue
        a_j = area(tj)
        var += a_j * a_j * d_j / (n_j * (n_j - d_j))
    return float(estimate), float(np.sqrt(var))
