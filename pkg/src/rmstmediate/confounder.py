"""Ordinal post-treatment confounder: observed model and counterfactual joints.

The observed confounder level U in {0, 1, 2} follows a multinomial
logistic model in treatment and baseline covariates.  The counterfactual
pair (U_astar, U_a) is never observed jointly; this module carries the
partial-identification machinery for its joint law:

* closed-form bounds on the single free cell of a 3x3 monotone table,
* a one-parameter bridge ``rho`` between those bounds,
* the two-band stepwise joint law available for any K,
* the necessary feasibility conditions for monotone tables of any K,
* exact linear optimization over the (optionally monotone) set of joint
  tables with fixed marginals, by vertex enumeration.

Convention: rows of a joint table index U_astar (marginal ``phi``),
columns index U_a (marginal ``mu``).  "Monotone" means no mass strictly
below the diagonal, i.e. U_a >= U_astar almost surely.
"""

from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

from .errors import (
    InvalidInput,
    MonotonicityInfeasible,
    NoConvergence,
    StepMonotonicityInconsistent,
    UnsupportedDimension,
)
from .mediator import _vec

N_LEVELS = 3
PROB_TOL = 1e-10
CLAMP_TOL = 1e-10
MAX_EXACT_K = 5

MLE_RIDGE = 1e-6
MLE_GRAD_TOL = 1e-8
MLE_MAX_ITER = 200


@dataclass(frozen=True)
class ConfounderParams:
    """Multinomial logistic coefficients for levels 1 and 2 (0 is reference)."""

    phi0: np.ndarray  # intercepts, length 2
    phi1: np.ndarray  # treatment coefficients, length 2
    phi2: np.ndarray  # baseline-covariate coefficients, 2 x |W|

    def __post_init__(self):
        object.__setattr__(self, "phi0", _vec("phi0", self.phi0, 2))
        object.__setattr__(self, "phi1", _vec("phi1", self.phi1, 2))
        phi2 = np.asarray(self.phi2, dtype=float)
        if phi2.ndim != 2 or phi2.shape[0] != 2 or not np.all(np.isfinite(phi2)):
            raise InvalidInput("phi2 must be a finite 2 x |W| matrix")
        object.__setattr__(self, "phi2", phi2)

    @property
    def n_covariates(self):
        return self.phi2.shape[1]


def _prob_vector(name, value):
    v = np.asarray(value, dtype=float)
    if v.ndim != 1 or len(v) < 2 or not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} must be a finite probability vector")
    if np.any(v < -PROB_TOL):
        raise InvalidInput(f"{name} has negative entries")
    if abs(v.sum() - 1.0) > PROB_TOL:
        raise InvalidInput(f"{name} must sum to 1 (got {v.sum():.12g})")
    return np.clip(v, 0.0, None)


@dataclass(frozen=True)
class MarginalPair:
    """Marginal laws of the counterfactual confounder pair.

    ``mu`` is the law of U_a (columns), ``phi`` the law of U_astar (rows).
    """

    mu: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        mu = _prob_vector("mu", self.mu)
        phi = _prob_vector("phi", self.phi)
        if len(mu) != len(phi):
            raise InvalidInput("mu and phi must have the same length")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi", phi)

    @property
    def k(self):
        return len(self.mu)


@dataclass(frozen=True)
class JointConfounderMatrix:
    """K x K joint law of (U_astar, U_a); rows U_astar, columns U_a."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or not np.all(np.isfinite(p)):
            raise InvalidInput("joint table must be a finite square matrix")
        if np.any(p < -CLAMP_TOL):
            raise InvalidInput("joint table has negative entries")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise InvalidInput("joint table must have total mass 1")
        object.__setattr__(self, "p", np.clip(p, 0.0, None))

    @property
    def k(self):
        return self.p.shape[0]

    @property
    def row_marginal(self):
        return self.p.sum(axis=1)

    @property
    def col_marginal(self):
        return self.p.sum(axis=0)

    def is_monotone(self, tol=CLAMP_TOL):
        return bool(np.all(self.p[np.tril_indices(self.k, k=-1)] <= tol))


def _design_row(a, w):
    w = np.asarray(w, dtype=float).reshape(-1)
    return np.concatenate([[1.0, float(a)], w])


def confounder_probs(cp, a, w):
    """Level probabilities (P(U=0), P(U=1), P(U=2)) given arm and covariates."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if len(w) != cp.n_covariates:
        raise InvalidInput(f"expected {cp.n_covariates} covariates, got {len(w)}")
    logits = np.zeros(N_LEVELS)
    logits[1:] = cp.phi0 + cp.phi1 * float(a) + cp.phi2 @ w
    logits -= logits.max()  # overflow safety
    e = np.exp(logits)
    return e / e.sum()


def p11_bounds(m):
    """Feasible interval for the central cell p_{11} of a 3x3 monotone table."""
    if m.k != N_LEVELS:
        raise UnsupportedDimension("closed-form bounds are specific to K=3")
    p_min = max(0.0, 1.0 - m.mu[2] - m.phi[0])
    p_max = min(m.mu[1], m.phi[1])
    if p_min > p_max + 1e-12:
        raise MonotonicityInfeasible(
            f"no monotone joint table matches the marginals "
            f"(p_min={p_min:.6g} > p_max={p_max:.6g})",
            p_min=p_min,
            p_max=p_max,
        )
    return p_min, p_max


def joint_from_rho(m, rho):
    """Monotone 3x3 joint table at sensitivity position ``rho`` in [0, 1]."""
    if not 0.0 <= rho <= 1.0:
        raise InvalidInput("rho must lie in [0, 1]")
    p_min, p_max = p11_bounds(m)
    p11 = p_min + rho * (p_max - p_min)
    p = np.zeros((3, 3))
    p[0, 0] = m.mu[0]
    p[2, 2] = m.phi[2]
    p[1, 1] = p11
    p[0, 1] = m.mu[1] - p11
    p[1, 2] = m.phi[1] - p11
    p[0, 2] = m.phi[0] - m.mu[0] - p[0, 1]
    if np.any(p < -CLAMP_TOL):
        raise MonotonicityInfeasible(
            "marginals admit no monotone joint table at this rho",
            p_min=p_min,
            p_max=p_max,
        )
    return JointConfounderMatrix(np.clip(p, 0.0, None))


def step_monotone_joint(m):
    """Two-band joint law: mass only on cells (i, i) and (i, i+1)."""
    k = m.k
    phi_cum = np.concatenate([[0.0], np.cumsum(m.phi)])
    mu_cum = np.concatenate([[0.0], np.cumsum(m.mu)])
    p = np.zeros((k, k))
    for i in range(k):
        # diagonal: 1 - sum(phi below i) - sum(mu above i)
        p[i, i] = 1.0 - phi_cum[i] - (1.0 - mu_cum[i + 1])
        if i + 1 < k:
            p[i, i + 1] = 1.0 - (1.0 - phi_cum[i + 1]) - mu_cum[i + 1]
    if np.any(p < -CLAMP_TOL):
        worst = float(p.min())
        raise StepMonotonicityInconsistent(
            f"marginals are inconsistent with the stepwise joint law "
            f"(most negative cell {worst:.6g})"
        )
    return JointConfounderMatrix(np.clip(p, 0.0, None))


def check_monotone_feasibility_K(m):
    """Violated (l, r) pairs of the necessary monotone-feasibility conditions.

    Pairs are 1-based with 1 < l <= r < K.  For each pair the mass forced
    into the central block by the outer marginals must not exceed what the
    central marginals can hold.  An empty list means the necessary
    condition holds everywhere (it is not sufficient in general).
    """
    k = m.k
    if k < 3:
        return []
    violated = []
    for left in range(2, k):
        for right in range(left, k):
            phi_l = m.phi[: left - 1].sum()
            mu_r = m.mu[right:].sum()
            phi_c = m.phi[left - 1 : right].sum()
            mu_c = m.mu[left - 1 : right].sum()
            forced = max(0.0, 1.0 - phi_l - mu_r)
            if forced > min(phi_c, mu_c) + 1e-12:
                violated.append((left, right))
    return violated


def _northwest_corner(row, col):
    """Greedy table with the given marginals, consuming cells in index order."""
    k = len(row)
    p = np.zeros((k, k))
    r = row.copy()
    c = col.copy()
    i = j = 0
    while i < k and j < k:
        m = min(r[i], c[j])
        p[i, j] = m
        r[i] -= m
        c[j] -= m
        if r[i] <= c[j]:
            i += 1
        else:
            j += 1
    return p


def _solve_tree(edges, phi, mu):
    """Unique table supported on a spanning tree of the bipartite graph.

    Returns None when the solution has a meaningfully negative cell.
    """
    k = len(phi)
    supply = np.concatenate([phi, mu]).astype(float)
    adj = {n: [] for n in range(2 * k)}
    for idx, (i, j) in enumerate(edges):
        adj[i].append((k + j, idx))
        adj[k + j].append((i, idx))
    deg = {n: len(a) for n, a in adj.items()}
    values = np.zeros(len(edges))
    used = [False] * len(edges)
    stack = [n for n in range(2 * k) if deg[n] == 1]
    while stack:
        n = stack.pop()
        live = [(other, idx) for other, idx in adj[n] if not used[idx]]
        if not live:
            continue
        other, idx = live[0]
        used[idx] = True
        values[idx] = supply[n]
        supply[other] -= supply[n]
        supply[n] = 0.0
        deg[other] -= 1
        if deg[other] == 1:
            stack.append(other)
    if np.any(values < -CLAMP_TOL):
        return None
    p = np.zeros((k, k))
    for idx, (i, j) in enumerate(edges):
        p[i, j] = max(values[idx], 0.0)
    return p


def _spanning_tree_vertices(phi, mu, allowed):
    """All vertex tables whose support lies within ``allowed`` cells."""
    k = len(phi)
    n_nodes = 2 * k
    out = []
    for subset in combinations(allowed, n_nodes - 1):
        # spanning tree: n-1 edges covering all nodes without a cycle
        parent = list(range(n_nodes))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        ok = True
        seen = set()
        for i, j in subset:
            seen.add(i)
            seen.add(k + j)
            ri, rj = find(i), find(k + j)
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if not ok or len(seen) != n_nodes:
            continue
        p = _solve_tree(list(subset), phi, mu)
        if p is not None:
            out.append(p)
    return out


def optimize_linear_over_polytope(m, weight, constraint):
    """Exact extrema of sum(weight * p) over joint tables with marginals ``m``.

    ``constraint`` selects the feasible set: "Unconstrained" is every
    nonnegative table with the given marginals; "Monotone" additionally
    forbids mass below the diagonal.  Optima are found by enumerating the
    vertices of the polytope, exact for K <= 5.
    """
    weight = np.asarray(weight, dtype=float)
    k = m.k
    if weight.shape != (k, k) or not np.all(np.isfinite(weight)):
        raise InvalidInput("weight must be a finite K x K matrix")
    if k > MAX_EXACT_K:
        raise UnsupportedDimension(f"exact enumeration is limited to K<={MAX_EXACT_K}")
    if constraint not in ("Unconstrained", "Monotone"):
        raise InvalidInput("constraint must be 'Unconstrained' or 'Monotone'")

    if constraint == "Unconstrained":
        # every vertex of the transportation polytope is a northwest-corner
        # table under some pair of row/column orderings
        vertices = []
        seen = set()
        for pr in permutations(range(k)):
            for pc in permutations(range(k)):
                p = np.zeros((k, k))
                sub = _northwest_corner(m.phi[list(pr)], m.mu[list(pc)])
                p[np.ix_(pr, pc)] = sub
                key = tuple(np.round(p.reshape(-1), 12))
                if key not in seen:
                    seen.add(key)
                    vertices.append(p)
    else:
        allowed = [(i, j) for i in range(k) for j in range(i, k)]
        vertices = _spanning_tree_vertices(m.phi, m.mu, allowed)
        if not vertices:
            raise MonotonicityInfeasible(
                "no monotone joint table matches the marginals"
            )

    values = [float(np.sum(weight * p)) for p in vertices]
    i_min = int(np.argmin(values))
    i_max = int(np.argmax(values))
    return (
        values[i_min],
        values[i_max],
        JointConfounderMatrix(vertices[i_min]),
        JointConfounderMatrix(vertices[i_max]),
    )


def _mle_design(records):
    rows = []
    ys = []
    for a, w, u in records:
        u = int(u)
        if u not in (0, 1, 2):
            raise InvalidInput(f"confounder level must be 0, 1 or 2 (got {u})")
        rows.append(_design_row(a, w))
        ys.append(u)
    x = np.asarray(rows)
    if not np.all(np.isfinite(x)):
        raise InvalidInput("non-finite covariate in confounder records")
    y = np.asarray(ys, dtype=int)
    # canonical record order makes the fit invariant to input permutation
    order = np.lexsort((y, *reversed(list(x.T))))
    return x[order], y[order]


def fit_confounder_mle(records):
    """Ridge-stabilized Newton fit of the multinomial confounder model."""
    if not records:
        raise InvalidInput("no confounder records")
    x, y = _mle_design(records)
    n, d = x.shape
    onehot = np.zeros((n, 2))
    for lvl in (1, 2):
        onehot[:, lvl - 1] = y == lvl

    theta = np.zeros((2, d))

    def probs(th):
        logits = np.zeros((n, N_LEVELS))
        logits[:, 1:] = x @ th.T
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def objective(th):
        p = probs(th)
        ll = float(np.sum(np.log(p[np.arange(n), y] + 1e-300)))
        return ll - MLE_RIDGE * float(np.sum(th * th)), p

    obj, p = objective(theta)
    for _ in range(MLE_MAX_ITER):
        grad = (onehot - p[:, 1:]).T @ x - 2.0 * MLE_RIDGE * theta  # (2, d)
        gnorm = float(np.abs(grad).max())
        if gnorm < MLE_GRAD_TOL:
            return ConfounderParams(theta[:, 0], theta[:, 1], theta[:, 2:])
        # blockwise negative Hessian of the penalized log likelihood
        hess = np.zeros((2 * d, 2 * d))
        for kk in range(2):
            for ll in range(2):
                wgt = p[:, kk + 1] * ((kk == ll) - p[:, ll + 1])
                hess[kk * d : (kk + 1) * d, ll * d : (ll + 1) * d] = (x * wgt[:, None]).T @ x
        hess += 2.0 * MLE_RIDGE * np.eye(2 * d)
        step = np.linalg.solve(hess, grad.reshape(-1)).reshape(2, d)
        scale = 1.0
        accepted = False
        for _ in range(40):
            cand = theta + scale * step
            cand_obj, cand_p = objective(cand)
            # allow non-decrease within roundoff so the final Newton steps
            # near the optimum are not rejected
            if cand_obj > obj - 1e-12 * (1.0 + abs(obj)):
                theta, obj, p = cand, cand_obj, cand_p
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
    grad = (onehot - p[:, 1:]).T @ x - 2.0 * MLE_RIDGE * theta
    raise NoConvergence(
        "confounder fit did not converge",
        last_iterate=ConfounderParams(theta[:, 0], theta[:, 1], theta[:, 2:]),
        grad_norm=float(np.abs(grad).max()),
    )
