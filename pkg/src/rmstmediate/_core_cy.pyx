# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled compute kernels.

Mirror of the pure backend's interface and algorithms with typed C
loops; see that module for the pp and baseline conventions.  Both
backends integrate with the same Gauss-Legendre rule and the same
panel-doubling refinement, so they agree to rounding error plus the
refinement tolerance.
"""

import numpy as np

from ._quad import DEFAULT_RTOL, GL_NODES, GL_ORDER, GL_WEIGHTS, MAX_LEVEL

from libc.math cimport exp, expm1, fabs, isnan, log, NAN

BACKEND_NAME = "compiled"

cdef int C_GL = GL_ORDER
cdef int C_MAXLEV = MAX_LEVEL
cdef double GLN[16]
cdef double GLW[16]


def _init_rule():
    nodes = np.ascontiguousarray(GL_NODES, dtype=np.float64)
    weights = np.ascontiguousarray(GL_WEIGHTS, dtype=np.float64)
    assert nodes.shape[0] == 16
    cdef Py_ssize_t k
    for k in range(16):
        GLN[k] = nodes[k]
        GLW[k] = weights[k]


_init_rule()


def _as1(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).ravel())


cdef inline Py_ssize_t _bisect_right(const double[::1] arr, double x) nogil:
    cdef Py_ssize_t lo = 0, hi = arr.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x < arr[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline Py_ssize_t _piece_index_c(const double[::1] breaks, double t) nogil:
    cdef Py_ssize_t idx = _bisect_right(breaks, t) - 1
    if idx < 0:
        idx = 0
    if idx > breaks.shape[0] - 2:
        idx = breaks.shape[0] - 2
    return idx


cdef inline Py_ssize_t _cut_index_c(const double[::1] cuts, double t) nogil:
    cdef Py_ssize_t idx = _bisect_right(cuts, t) - 1
    if idx < 0:
        idx = 0
    if idx > cuts.shape[0] - 1:
        idx = cuts.shape[0] - 1
    return idx


cdef inline double _horner(double c0, double c1, double c2, double c3, double dt) nogil:
    return c0 + dt * (c1 + dt * (c2 + dt * c3))


# ---------------------------------------------------------------------------
# piecewise polynomials


def ppoly_eval(breaks, coefs, t):
    """Evaluate one pp at times ``t``; returns an array shaped like ``t``."""
    t_arr = np.asarray(t, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(t_arr.ravel())
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, ::1] cv = np.ascontiguousarray(coefs, dtype=np.float64)
    out = np.empty(tv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i, p
    cdef double dt
    with nogil:
        for i in range(tv.shape[0]):
            p = _piece_index_c(bv, tv[i])
            dt = tv[i] - bv[p]
            ov[i] = _horner(cv[p, 0], cv[p, 1], cv[p, 2], cv[p, 3], dt)
    return out.reshape(t_arr.shape)


def ppoly_eval_multi(breaks, coefs, t):
    """Evaluate a family of pps sharing breaks; returns (len(t), nb)."""
    cdef const double[::1] tv = _as1(t)
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef Py_ssize_t n = tv.shape[0], nb = cv.shape[0]
    out = np.empty((n, nb))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, p
    cdef double dt
    with nogil:
        for i in range(n):
            p = _piece_index_c(bv, tv[i])
            dt = tv[i] - bv[p]
            for j in range(nb):
                ov[i, j] = _horner(cv[j, p, 0], cv[j, p, 1], cv[j, p, 2], cv[j, p, 3], dt)
    return out


# ---------------------------------------------------------------------------
# piecewise-constant hazards


def pc_level(cuts, levels, t):
    t_arr = np.asarray(t, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(t_arr.ravel())
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    out = np.empty(tv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(tv.shape[0]):
            ov[i] = lv[_cut_index_c(cv, tv[i])]
    return out.reshape(t_arr.shape)


cdef void _fill_prefix(const double[::1] cuts, const double[::1] levels, double[::1] prefix) nogil:
    cdef Py_ssize_t p
    prefix[0] = 0.0
    for p in range(1, cuts.shape[0]):
        prefix[p] = prefix[p - 1] + levels[p - 1] * (cuts[p] - cuts[p - 1])


def pc_cumhaz(cuts, levels, t):
    """Integral of the baseline level over [0, t] for t >= 0."""
    t_arr = np.asarray(t, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(t_arr.ravel())
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    prefix = np.empty(cv.shape[0])
    cdef double[::1] pv = prefix
    out = np.empty(tv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i, p
    with nogil:
        _fill_prefix(cv, lv, pv)
        for i in range(tv.shape[0]):
            p = _cut_index_c(cv, tv[i])
            ov[i] = pv[p] + lv[p] * (tv[i] - cv[p])
    return out.reshape(t_arr.shape)


def pc_rmst(cuts, levels, eta, t_max):
    """Restricted mean event-free time under hazard ``level(t) * exp(eta)``."""
    cdef const double[::1] ev = np.ascontiguousarray(
        np.atleast_1d(np.asarray(eta, dtype=np.float64))
    )
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef double tm = <double> t_max
    prefix = np.empty(cv.shape[0])
    cdef double[::1] pv = prefix
    # segment bounds clipped to the horizon
    cdef Py_ssize_t n_seg = 0, p
    for p in range(cv.shape[0]):
        if cv[p] < tm:
            n_seg += 1
    out = np.zeros(ev.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i, s
    cdef double rel, rate, width, upper, acc
    with nogil:
        _fill_prefix(cv, lv, pv)
        for i in range(ev.shape[0]):
            rel = exp(ev[i])
            acc = 0.0
            for s in range(n_seg):
                upper = cv[s + 1] if s + 1 < n_seg else tm
                width = upper - cv[s]
                rate = rel * lv[s]
                acc += exp(-rel * pv[s]) * (-expm1(-rate * width)) / rate
            ov[i] = acc
    return out


def pc_invert(cuts, levels, eta, e, horizon):
    """Exact solution of ``exp(eta) * H0(t) = e`` capped at ``horizon``."""
    eta_b, e_b = np.broadcast_arrays(
        np.atleast_1d(np.asarray(eta, dtype=np.float64)),
        np.atleast_1d(np.asarray(e, dtype=np.float64)),
    )
    cdef const double[::1] ev = np.ascontiguousarray(eta_b.ravel())
    cdef const double[::1] uv = np.ascontiguousarray(e_b.ravel())
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef double hz = <double> horizon
    prefix = np.empty(cv.shape[0])
    cdef double[::1] pv = prefix
    out = np.empty(uv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i, p
    cdef double target, t
    with nogil:
        _fill_prefix(cv, lv, pv)
        for i in range(uv.shape[0]):
            target = uv[i] * exp(-ev[i])
            p = _bisect_right(pv, target) - 1
            if p < 0:
                p = 0
            if p > cv.shape[0] - 1:
                p = cv.shape[0] - 1
            t = cv[p] + (target - pv[p]) / lv[p]
            ov[i] = t if t < hz else hz
    return out.reshape(eta_b.shape)


def pc_loglik(cuts, levels0, levels1, arm, eta, t_exit, event):
    """Per-subject log likelihood under arm-specific baselines."""
    arm_b, eta_b, t_b, ev_b = np.broadcast_arrays(
        np.asarray(arm, dtype=np.float64),
        np.asarray(eta, dtype=np.float64),
        np.asarray(t_exit, dtype=np.float64),
        np.asarray(event, dtype=np.float64),
    )
    cdef const double[::1] av = np.ascontiguousarray(arm_b.ravel())
    cdef const double[::1] hv = np.ascontiguousarray(eta_b.ravel())
    cdef const double[::1] tv = np.ascontiguousarray(t_b.ravel())
    cdef const double[::1] dv = np.ascontiguousarray(ev_b.ravel())
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] l0 = _as1(levels0)
    cdef const double[::1] l1 = _as1(levels1)
    prefix0 = np.empty(cv.shape[0])
    prefix1 = np.empty(cv.shape[0])
    cdef double[::1] p0 = prefix0
    cdef double[::1] p1 = prefix1
    out = np.empty(tv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i, p
    cdef double lev, cum
    with nogil:
        _fill_prefix(cv, l0, p0)
        _fill_prefix(cv, l1, p1)
        for i in range(tv.shape[0]):
            p = _cut_index_c(cv, tv[i])
            if av[i] == 1.0:
                lev = l1[p]
                cum = p1[p] + l1[p] * (tv[i] - cv[p])
            else:
                lev = l0[p]
                cum = p0[p] + l0[p] * (tv[i] - cv[p])
            ov[i] = dv[i] * (log(lev) + hv[i]) - exp(hv[i]) * cum
    return out.reshape(arm_b.shape)


# ---------------------------------------------------------------------------
# trajectory-dependent hazards


def _cc_grid(cuts, breaks, t_end):
    cuts = np.asarray(cuts, dtype=np.float64)
    breaks = np.asarray(breaks, dtype=np.float64)
    pts = np.concatenate(
        [
            [0.0, t_end],
            cuts[(cuts > 0.0) & (cuts < t_end)],
            breaks[(breaks > 0.0) & (breaks < t_end)],
        ]
    )
    return np.unique(pts)


cdef double _level_cumhaz(
    double lam, double eta0, double zg,
    double c0, double c1, double c2, double c3,
    double b_left, double a, double b, int m,
) nogil:
    """Composite 16-node rule on m equal panels of [a, b]."""
    cdef double total = 0.0, pa, pb, half, mid, s, x, dt
    cdef int p, k
    for p in range(m):
        pa = a + (b - a) * p / m
        pb = a + (b - a) * (p + 1) / m
        half = 0.5 * (pb - pa)
        mid = 0.5 * (pa + pb)
        s = 0.0
        for k in range(16):
            x = mid + half * GLN[k]
            dt = x - b_left
            s += GLW[k] * exp(eta0 + zg * _horner(c0, c1, c2, c3, dt))
        total += lam * half * s
    return total


cdef double _panel_cumhaz_c(
    double lam, double eta0, double zg,
    double c0, double c1, double c2, double c3,
    double b_left, double a, double b, double rtol,
) nogil:
    cdef double prev = NAN, cur = 0.0, tol
    cdef int lev
    for lev in range(C_MAXLEV + 1):
        cur = _level_cumhaz(lam, eta0, zg, c0, c1, c2, c3, b_left, a, b, 1 << lev)
        if not isnan(prev):
            tol = fabs(cur)
            if tol < 1e-12:
                tol = 1e-12
            if fabs(cur - prev) <= rtol * tol:
                return cur
        prev = cur
    return cur


cdef void _level_surv(
    double lam, double eta0, double zg,
    double c0, double c1, double c2, double c3,
    double b_left, double a, double b, int m, double h_acc,
    double* out_s, double* out_dh,
) nogil:
    """One refinement level of the survival integral over [a, b].

    Writes the integral of exp(-H(v)) (with H(a) = h_acc) and the
    hazard increment over [a, b] computed at the same level.
    """
    cdef double total = 0.0, h_start = h_acc
    cdef double pa, pb, half, mid, v, span, partial, dh_panel, s, u, dt
    cdef int p, j, k
    for p in range(m):
        pa = a + (b - a) * p / m
        pb = a + (b - a) * (p + 1) / m
        half = 0.5 * (pb - pa)
        mid = 0.5 * (pa + pb)
        s = 0.0
        dh_panel = 0.0
        for j in range(16):
            v = mid + half * GLN[j]
            span = v - pa
            partial = 0.0
            for k in range(16):
                u = pa + span * 0.5 * (GLN[k] + 1.0)
                dt = u - b_left
                partial += GLW[k] * exp(eta0 + zg * _horner(c0, c1, c2, c3, dt))
            partial *= lam * 0.5 * span
            s += GLW[j] * exp(-(h_start + partial))
            dt = v - b_left
            dh_panel += GLW[j] * exp(eta0 + zg * _horner(c0, c1, c2, c3, dt))
        total += half * s
        h_start += lam * half * dh_panel
    out_s[0] = total
    out_dh[0] = h_start - h_acc


cdef double _panel_surv_c(
    double lam, double eta0, double zg,
    double c0, double c1, double c2, double c3,
    double b_left, double a, double b, double h_acc, double rtol,
) nogil:
    cdef double prev = NAN, cur = 0.0, dh = 0.0, tol
    cdef int lev
    for lev in range(C_MAXLEV + 1):
        _level_surv(lam, eta0, zg, c0, c1, c2, c3, b_left, a, b, 1 << lev, h_acc, &cur, &dh)
        if not isnan(prev):
            tol = fabs(cur)
            if tol < 1e-12:
                tol = 1e-12
            if fabs(cur - prev) <= rtol * tol:
                return cur
        prev = cur
    return cur


def cc_cumhaz(cuts, levels, eta0, zg, breaks, coefs, t, rtol=DEFAULT_RTOL):
    """Cumulative hazard at ``t`` for a trajectory-dependent hazard."""
    if t <= 0.0:
        return 0.0
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, ::1] co = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef const double[::1] gv = _as1(_cc_grid(cuts, breaks, t))
    cdef double e0 = <double> eta0, z = <double> zg, rt = <double> rtol
    cdef double total = 0.0, mid, lam
    cdef Py_ssize_t g, pi
    with nogil:
        for g in range(gv.shape[0] - 1):
            mid = 0.5 * (gv[g] + gv[g + 1])
            lam = lv[_cut_index_c(cv, mid)]
            pi = _piece_index_c(bv, mid)
            total += _panel_cumhaz_c(
                lam, e0, z, co[pi, 0], co[pi, 1], co[pi, 2], co[pi, 3],
                bv[pi], gv[g], gv[g + 1], rt,
            )
    return total


def cc_rmst(cuts, levels, eta0, zg, breaks, coefs, t_max, rtol=DEFAULT_RTOL):
    """Restricted mean event-free time for a trajectory-dependent hazard."""
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, ::1] co = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef const double[::1] gv = _as1(_cc_grid(cuts, breaks, t_max))
    cdef double e0 = <double> eta0, z = <double> zg, rt = <double> rtol
    cdef double out = 0.0, h_acc = 0.0, mid, lam
    cdef Py_ssize_t g, pi
    with nogil:
        for g in range(gv.shape[0] - 1):
            mid = 0.5 * (gv[g] + gv[g + 1])
            lam = lv[_cut_index_c(cv, mid)]
            pi = _piece_index_c(bv, mid)
            out += _panel_surv_c(
                lam, e0, z, co[pi, 0], co[pi, 1], co[pi, 2], co[pi, 3],
                bv[pi], gv[g], gv[g + 1], h_acc, rt,
            )
            h_acc += _panel_cumhaz_c(
                lam, e0, z, co[pi, 0], co[pi, 1], co[pi, 2], co[pi, 3],
                bv[pi], gv[g], gv[g + 1], rt,
            )
    return out


cdef double _gl16_cumhaz_c(
    double lam, double eta0, double zg,
    double c0, double c1, double c2, double c3,
    double b_left, double a, double t,
) nogil:
    if t <= a:
        return 0.0
    cdef double half = 0.5 * (t - a), mid = 0.5 * (t + a), s = 0.0, x, dt
    cdef int k
    for k in range(16):
        x = mid + half * GLN[k]
        dt = x - b_left
        s += GLW[k] * exp(eta0 + zg * _horner(c0, c1, c2, c3, dt))
    return lam * half * s


def cc_invert(cuts, levels, eta0, zg, breaks, coefs, e, horizon, rtol=DEFAULT_RTOL):
    """Smallest t with cumulative hazard ``e``, capped at ``horizon``."""
    if e <= 0.0:
        return 0.0
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, ::1] co = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef double e0 = <double> eta0, z = <double> zg, rt = <double> rtol
    cdef double need = <double> e, hz = <double> horizon
    cdef double ray_start = cv[cv.shape[0] - 1]
    if bv[bv.shape[0] - 1] > ray_start:
        ray_start = bv[bv.shape[0] - 1]
    if ray_start < 0.0:
        ray_start = 0.0
    cdef double h_acc = 0.0, mid, lam, dh, lo, hi, t_mid, g_val
    cdef Py_ssize_t g, pi, it
    cdef const double[::1] gv
    if ray_start > 0.0:
        gv = _as1(_cc_grid(cuts, breaks, ray_start))
        for g in range(gv.shape[0] - 1):
            mid = 0.5 * (gv[g] + gv[g + 1])
            lam = lv[_cut_index_c(cv, mid)]
            pi = _piece_index_c(bv, mid)
            dh = _panel_cumhaz_c(
                lam, e0, z, co[pi, 0], co[pi, 1], co[pi, 2], co[pi, 3],
                bv[pi], gv[g], gv[g + 1], rt,
            )
            if h_acc + dh >= need:
                lo = gv[g]
                hi = gv[g + 1]
                for it in range(60):
                    t_mid = 0.5 * (lo + hi)
                    g_val = h_acc + _gl16_cumhaz_c(
                        lam, e0, z, co[pi, 0], co[pi, 1], co[pi, 2], co[pi, 3],
                        bv[pi], gv[g], t_mid,
                    )
                    if g_val < need:
                        lo = t_mid
                    else:
                        hi = t_mid
                t_mid = 0.5 * (lo + hi)
                return t_mid if t_mid < hz else hz
            h_acc += dh
    # closed-form ray: level constant, trajectory offset affine
    cdef double lam_r = lv[lv.shape[0] - 1]
    cdef Py_ssize_t last = co.shape[0] - 1
    cdef double dt0 = ray_start - bv[bv.shape[0] - 2]
    cdef double dm0 = _horner(co[last, 0], co[last, 1], co[last, 2], co[last, 3], dt0)
    cdef double slope = co[last, 1] + dt0 * (2.0 * co[last, 2] + dt0 * 3.0 * co[last, 3])
    cdef double rate0 = lam_r * exp(e0 + z * dm0)
    cdef double k1 = z * slope
    cdef double rest = need - h_acc, t_ray, arg
    if fabs(k1) < 1e-14:
        t_ray = ray_start + rest / rate0
    else:
        arg = 1.0 + k1 * rest / rate0
        if arg <= 0.0:
            return hz
        t_ray = ray_start + log(arg) / k1
    return t_ray if t_ray < hz else hz


def cc_invert_batch(cuts, levels, eta0, zg, breaks, coefs, e, horizon, rtol=DEFAULT_RTOL):
    """Batch hazard inversion for trajectories sharing one break vector.

    Same contract as ``cc_invert`` applied elementwise, with the
    refinement level of each base subinterval shared across the batch.
    """
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, :, ::1] co = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef const double[::1] e0v = _as1(eta0)
    cdef const double[::1] zgv = _as1(zg)
    cdef const double[::1] ev = _as1(e)
    cdef double hz = <double> horizon, rt = <double> rtol
    cdef Py_ssize_t n = ev.shape[0]

    out = np.full(n, np.nan)
    h_acc = np.zeros(n)
    dh = np.zeros(n)
    prev = np.zeros(n)
    br_lo = np.zeros(n)
    br_hi = np.zeros(n)
    br_lam = np.zeros(n)
    br_base = np.zeros(n)
    br_piece = np.zeros(n, dtype=np.intp)
    state = np.zeros(n, dtype=np.intp)  # 0 open, 1 bracketed, 2 done
    cdef double[::1] ov = out
    cdef double[::1] hv = h_acc
    cdef double[::1] dv = dh
    cdef double[::1] pv = prev
    cdef double[::1] blo = br_lo
    cdef double[::1] bhi = br_hi
    cdef double[::1] blam = br_lam
    cdef double[::1] bbase = br_base
    cdef Py_ssize_t[::1] bpi = br_piece
    cdef Py_ssize_t[::1] st = state

    cdef Py_ssize_t i, g, pi, it, lev
    cdef double mid, lam, err, rel, t_mid, g_val, lo, hi
    cdef bint any_active, have_prev
    cdef const double[::1] gv

    for i in range(n):
        if ev[i] <= 0.0:
            ov[i] = 0.0
            st[i] = 2

    cdef double ray_start = cv[cv.shape[0] - 1]
    if bv[bv.shape[0] - 1] > ray_start:
        ray_start = bv[bv.shape[0] - 1]
    if ray_start < 0.0:
        ray_start = 0.0

    if ray_start > 0.0:
        gv = _as1(_cc_grid(cuts, breaks, ray_start))
        for g in range(gv.shape[0] - 1):
            any_active = False
            for i in range(n):
                if st[i] == 0:
                    any_active = True
                    break
            if not any_active:
                break
            mid = 0.5 * (gv[g] + gv[g + 1])
            lam = lv[_cut_index_c(cv, mid)]
            pi = _piece_index_c(bv, mid)
            with nogil:
                # shared-level refinement over the whole batch
                have_prev = False
                for lev in range(C_MAXLEV + 1):
                    for i in range(n):
                        dv[i] = _level_cumhaz(
                            lam, e0v[i], zgv[i],
                            co[i, pi, 0], co[i, pi, 1], co[i, pi, 2], co[i, pi, 3],
                            bv[pi], gv[g], gv[g + 1], 1 << lev,
                        )
                    if have_prev:
                        err = 0.0
                        for i in range(n):
                            rel = fabs(dv[i])
                            if rel < 1e-12:
                                rel = 1e-12
                            rel = fabs(dv[i] - pv[i]) / rel
                            if rel > err:
                                err = rel
                        if err <= rt:
                            break
                    for i in range(n):
                        pv[i] = dv[i]
                    have_prev = True
                for i in range(n):
                    if st[i] == 0:
                        if hv[i] + dv[i] >= ev[i]:
                            blo[i] = gv[g]
                            bhi[i] = gv[g + 1]
                            blam[i] = lam
                            bpi[i] = pi
                            bbase[i] = hv[i]
                            st[i] = 1
                        else:
                            hv[i] += dv[i]

    with nogil:
        for i in range(n):
            if st[i] == 1:
                lo = blo[i]
                hi = bhi[i]
                pi = bpi[i]
                for it in range(60):
                    t_mid = 0.5 * (lo + hi)
                    g_val = bbase[i] + _gl16_cumhaz_c(
                        blam[i], e0v[i], zgv[i],
                        co[i, pi, 0], co[i, pi, 1], co[i, pi, 2], co[i, pi, 3],
                        bv[pi], blo[i], t_mid,
                    )
                    if g_val < ev[i]:
                        lo = t_mid
                    else:
                        hi = t_mid
                t_mid = 0.5 * (lo + hi)
                ov[i] = t_mid if t_mid < hz else hz
                st[i] = 2

    cdef double lam_r = lv[lv.shape[0] - 1]
    cdef Py_ssize_t last = co.shape[1] - 1
    cdef double dt0 = ray_start - bv[bv.shape[0] - 2]
    cdef double dm0, slope, rate0, k1, rest, t_ray, arg
    with nogil:
        for i in range(n):
            if st[i] == 0:
                dm0 = _horner(co[i, last, 0], co[i, last, 1], co[i, last, 2], co[i, last, 3], dt0)
                slope = co[i, last, 1] + dt0 * (2.0 * co[i, last, 2] + dt0 * 3.0 * co[i, last, 3])
                rate0 = lam_r * exp(e0v[i] + zgv[i] * dm0)
                k1 = zgv[i] * slope
                rest = ev[i] - hv[i]
                if fabs(k1) < 1e-14:
                    t_ray = ray_start + rest / rate0
                else:
                    arg = 1.0 + k1 * rest / rate0
                    if arg <= 0.0:
                        ov[i] = hz
                        continue
                    t_ray = ray_start + log(arg) / k1
                ov[i] = t_ray if t_ray < hz else hz
    return out


def cc_rmst_batch(cuts, levels, eta0, zg, breaks, coefs, t_max, rtol=DEFAULT_RTOL):
    """Batch of trajectory-dependent restricted means.

    ``eta0`` and ``zg`` have shape (N,); ``coefs`` has shape (N, P, 4)
    over a shared break vector; the refinement level of each base
    subinterval is shared across the batch.
    """
    cdef const double[::1] cv = _as1(cuts)
    cdef const double[::1] lv = _as1(levels)
    cdef const double[::1] bv = _as1(breaks)
    cdef const double[:, :, ::1] co = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef const double[::1] e0v = _as1(eta0)
    cdef const double[::1] zgv = _as1(zg)
    cdef double rt = <double> rtol
    cdef Py_ssize_t n = e0v.shape[0]

    out = np.zeros(n)
    h_acc = np.zeros(n)
    cur_s = np.zeros(n)
    cur_dh = np.zeros(n)
    prev_s = np.zeros(n)
    prev_dh = np.zeros(n)
    cdef double[::1] ov = out
    cdef double[::1] hv = h_acc
    cdef double[::1] sv = cur_s
    cdef double[::1] dv = cur_dh
    cdef double[::1] psv = prev_s
    cdef double[::1] pdv = prev_dh

    gv_arr = _as1(_cc_grid(cuts, breaks, t_max))
    cdef const double[::1] gv = gv_arr
    cdef Py_ssize_t g, i, lev, pi
    cdef double mid, lam, err, rel
    cdef bint have_prev

    with nogil:
        for g in range(gv.shape[0] - 1):
            mid = 0.5 * (gv[g] + gv[g + 1])
            lam = lv[_cut_index_c(cv, mid)]
            pi = _piece_index_c(bv, mid)
            have_prev = False
            for lev in range(C_MAXLEV + 1):
                for i in range(n):
                    _level_surv(
                        lam, e0v[i], zgv[i],
                        co[i, pi, 0], co[i, pi, 1], co[i, pi, 2], co[i, pi, 3],
                        bv[pi], gv[g], gv[g + 1], 1 << lev, hv[i], &sv[i], &dv[i],
                    )
                if have_prev:
                    err = 0.0
                    for i in range(n):
                        rel = fabs(sv[i])
                        if rel < 1e-12:
                            rel = 1e-12
                        rel = fabs(sv[i] - psv[i]) / rel
                        if rel > err:
                            err = rel
                        rel = fabs(dv[i])
                        if rel < 1e-12:
                            rel = 1e-12
                        rel = fabs(dv[i] - pdv[i]) / rel
                        if rel > err:
                            err = rel
                    if err <= rt:
                        break
                for i in range(n):
                    psv[i] = sv[i]
                    pdv[i] = dv[i]
                have_prev = True
            for i in range(n):
                ov[i] += sv[i]
                hv[i] += dv[i]
    return out
