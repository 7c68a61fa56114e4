"""Tests for the direct/indirect effect decomposition machinery."""

import numpy as np
import pytest

from rmstmediate import effects
from rmstmediate.confounder import (
    ConfounderParams,
    MarginalPair,
    confounder_probs,
    joint_from_rho,
    optimize_linear_over_polytope,
)
from rmstmediate.effects import (
    ModelParams,
    ReferenceLevels,
    StratumWeights,
    beta_terms,
    decompose,
    proportion_mediated,
    relaxed_bounds,
    rho_sweep,
    single_stratum,
)
from rmstmediate.errors import AllDrawsDiscarded, InfeasibleStratum, InvalidInput
from rmstmediate.mediator import (
    MediatorParams,
    RandomEffectsLaw,
    make_trajectory,
    sample_random_effects_batch,
    x_design,
)
from rmstmediate.survival import (
    CURRENT_CHANGE,
    THREE_YEAR_LEGACY,
    PiecewiseHazard,
    SurvivalParams,
    rmst,
)


def re_law():
    sd = np.array([0.35, 0.3, 0.25, 0.2])
    corr = np.array(
        [
            [1.0, 0.3, 0.1, 0.0],
            [0.3, 1.0, 0.2, 0.1],
            [0.1, 0.2, 1.0, 0.15],
            [0.0, 0.1, 0.15, 1.0],
        ]
    )
    return RandomEffectsLaw(covariance=corr * np.outer(sd, sd))


def mediator_params(n_w=1, treatment_free=False):
    psi = np.array(
        [
            [0.30, -0.20, 0.15, 0.10, -0.05],
            [-0.15, 0.10, -0.08, 0.05, 0.04],
            [0.08, -0.05, 0.04, -0.03, 0.02],
            [-0.04, 0.03, -0.02, 0.01, -0.01],
        ]
    )
    beta1 = np.array([0.5, -0.3, 0.2, 0.15, -0.1])
    if treatment_free:
        # zero out every column multiplied by a treatment indicator
        psi = psi.copy()
        psi[:, [0, 3, 4]] = 0.0
        beta1 = beta1.copy()
        beta1[[0, 3, 4]] = 0.0
    return MediatorParams(
        beta0=1.2,
        beta1=beta1,
        beta2=np.full(n_w, 0.25),
        alpha=np.array([0.6, -0.4, 0.25, -0.1]),
        psi=psi,
        sigma=0.3,
    )


def survival_params(
    kind=THREE_YEAR_LEGACY,
    n_w=1,
    zeta=(0.25, 0.15, -0.1, 0.1),
    gamma1=(0.3, -0.2),
    gamma2=(0.15, 0.1),
    same_baseline=False,
):
    base_c = PiecewiseHazard(
        cut_points=np.array([0.0, 2.0, 5.0]), levels=np.array([0.06, 0.09, 0.07])
    )
    base_t = (
        base_c
        if same_baseline
        else PiecewiseHazard(cut_points=np.array([0.0, 2.0, 5.0]), levels=np.array([0.05, 0.08, 0.06]))
    )
    return SurvivalParams(
        baseline_control=base_c,
        baseline_treated=base_t,
        gamma1=np.asarray(gamma1, dtype=float),
        gamma2=np.asarray(gamma2, dtype=float),
        gamma3=np.full(n_w, 0.2),
        zeta=np.asarray(zeta, dtype=float),
        xi=0.3,
        functional_kind=kind,
        t_max=15.0,
    )


def confounder_params(n_w=1, null_treatment=False):
    phi1 = np.zeros(2) if null_treatment else np.array([0.6, 0.9])
    phi2 = np.array([[0.3], [-0.1]])[:, :n_w]
    return ConfounderParams(phi0=np.array([0.2, -0.3]), phi1=phi1, phi2=phi2)


def model(kind=THREE_YEAR_LEGACY, n_w=1, **kw):
    null = kw.pop("null_treatment", False)
    surv_kw = {}
    if null:
        surv_kw = dict(gamma2=(0.0, 0.0), zeta=(0.25, 0.15, -0.1, 0.0), same_baseline=True)
    surv_kw.update(kw)
    return ModelParams(
        mediator=mediator_params(n_w, treatment_free=null),
        survival=survival_params(kind, n_w, **surv_kw),
        confounder=confounder_params(n_w, null_treatment=null),
        re_law=re_law(),
    )


TWO_STRATA = StratumWeights((((0.0,), 0.6), ((1.0,), 0.4)))
MC = {"draws": 400, "seed": 11}
MC_SMALL = {"draws": 8, "seed": 3}


def assert_identities(dec, tol=1e-10):
    assert dec.te == dec.de + dec.ie
    assert abs(dec.de - (dec.de_r - dec.delta_de + dec.delta)) <= tol
    assert abs(dec.ie - (dec.ie_r + dec.delta_ie - dec.delta)) <= tol


class TestSettingsAndTypes:
    def test_mc_defaults(self):
        assert effects._mc_settings(None) == (effects.DEFAULT_MC_DRAWS, 0)
        assert effects._mc_settings({"draws": 16, "seed": 7}) == (16, 7)

    def test_mc_rejects_unknown_keys(self):
        with pytest.raises(InvalidInput):
            effects._mc_settings({"draws": 16, "chains": 4})

    def test_mc_rejects_nonpositive_draws(self):
        with pytest.raises(InvalidInput):
            effects._mc_settings({"draws": 0})

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidInput):
            StratumWeights((((0.0,), 0.6), ((1.0,), 0.5)))

    def test_weights_reject_negative_mass(self):
        with pytest.raises(InvalidInput):
            StratumWeights((((0.0,), 1.2), ((1.0,), -0.2)))

    def test_reference_level_range(self):
        with pytest.raises(InvalidInput):
            ReferenceLevels(u_ref=3)

    def test_as_dict_round_trip(self):
        dec = decompose(model(), TWO_STRATA, 0.5, mc=MC_SMALL)
        d = dec.as_dict()
        for name in effects.COMPONENTS:
            assert d[name] == getattr(dec, name)
        assert d["rho_policy"] == "rho=0.5"
        assert d["mc_draws"] == 8
        assert set(d["mc_se"]) == set(effects.COMPONENTS)


class TestBetaTerms:
    def test_all_zero_at_references(self):
        params = model()
        refs = ReferenceLevels()
        w = np.array([1.0])
        bm, bu, bmu, bbar = beta_terms(params, 1, w, 0.2, None, refs.u_ref, refs)
        assert bm == 0.0 and bu == 0.0 and bmu == 0.0
        assert bbar == rmst(params.survival, 1, refs.u_ref, w, refs.trajectory, 0.2)

    def test_u_ref_swap_telescopes(self):
        params = model()
        w = np.array([0.0])
        m = make_trajectory(params.mediator, x_design(1, 2), w, np.array([0.1, -0.2, 0.05, 0.3]))
        diffs = []
        for u_ref in (0, 1):
            refs = ReferenceLevels(u_ref=u_ref)
            bu1 = beta_terms(params, 1, w, 0.1, m, 1, refs)[1]
            bu2 = beta_terms(params, 1, w, 0.1, m, 2, refs)[1]
            diffs.append(bu1 - bu2)
        assert diffs[0] == pytest.approx(diffs[1], abs=1e-12)

    def test_interaction_term_vanishes_without_confounder_hazard_terms(self):
        # the four-way contrast cancels exactly only when the hazard does
        # not distinguish confounder levels at all (additivity on the
        # hazard-exponent scale does not survive the nonlinear map to
        # restricted means otherwise)
        params = model(zeta=(0.25, 0.0, 0.0, 0.1), gamma1=(0.0, 0.0), gamma2=(0.0, 0.0))
        w = np.array([1.0])
        m = make_trajectory(params.mediator, x_design(0, 1), w, np.array([0.2, 0.1, -0.3, 0.0]))
        bm, bu, bmu, _ = beta_terms(params, 1, w, -0.1, m, 2, ReferenceLevels())
        assert bmu == 0.0
        assert bu == 0.0
        assert bm != 0.0

    def test_interaction_term_vanishes_without_mediator_hazard_terms(self):
        params = model(zeta=(0.0, 0.0, 0.0, 0.0))
        w = np.array([1.0])
        m = make_trajectory(params.mediator, x_design(1, 1), w, np.array([0.2, 0.1, -0.3, 0.0]))
        bm, bu, bmu, _ = beta_terms(params, 0, w, 0.4, m, 1, ReferenceLevels())
        assert bmu == 0.0
        assert bm == 0.0
        assert bu != 0.0


class TestDecomposeDirectFormula:
    """Cross-check the table assembly against per-draw scalar evaluation."""

    def direct_components(self, params, w, rho, r_batch):
        sp = params.survival
        med = params.mediator
        cp = params.confounder
        mu = confounder_probs(cp, 1, w)
        phi = confounder_probs(cp, 0, w)
        joint = joint_from_rho(MarginalPair(mu=mu, phi=phi), rho).p
        refs = ReferenceLevels()
        acc = {k: 0.0 for k in ("te", "de", "ie", "de_r", "ie_r", "delta_de", "delta_ie", "delta")}
        for r in r_batch:
            r0 = r[0]
            m0 = [make_trajectory(med, x_design(0, u), w, r) for u in range(3)]
            m1 = [make_trajectory(med, x_design(1, u), w, r) for u in range(3)]

            def R(a, u, m):
                return rmst(sp, a, u, w, m, r0)

            te = sum(mu[u] * R(1, u, m1[u]) for u in range(3)) - sum(
                phi[v] * R(0, v, m0[v]) for v in range(3)
            )
            de = sum(joint[v, u] * R(1, u, m0[v]) for v in range(3) for u in range(3)) - sum(
                phi[v] * R(0, v, m0[v]) for v in range(3)
            )
            b_m = lambda a, m, u: beta_terms(params, a, w, r0, m, u, refs)[0]
            b_u = lambda a, u: beta_terms(params, a, w, r0, None, u, refs)[1]
            b_mu = lambda a, m, u: beta_terms(params, a, w, r0, m, u, refs)[2]
            b_bar = lambda a: beta_terms(params, a, w, r0, None, refs.u_ref, refs)[3]
            de_r = (
                b_bar(1)
                - b_bar(0)
                + sum(phi[v] * (b_m(1, m0[v], refs.u_ref) - b_m(0, m0[v], refs.u_ref)) for v in range(3))
                + sum(mu[u] * b_u(1, u) for u in range(3))
                - sum(phi[v] * b_u(0, v) for v in range(3))
            )
            delta_de = sum(phi[v] * b_mu(0, m0[v], v) for v in range(3))
            ie_r = sum(mu[u] * b_m(1, m1[u], refs.u_ref) for u in range(3)) - sum(
                phi[v] * b_m(1, m0[v], refs.u_ref) for v in range(3)
            )
            delta_ie = sum(mu[u] * b_mu(1, m1[u], u) for u in range(3))
            delta = sum(joint[v, u] * b_mu(1, m0[v], u) for v in range(3) for u in range(3))
            for key, val in (
                ("te", te),
                ("de", de),
                ("ie", te - de),
                ("de_r", de_r),
                ("ie_r", ie_r),
                ("delta_de", delta_de),
                ("delta_ie", delta_ie),
                ("delta", delta),
            ):
                acc[key] += val / len(r_batch)
        return acc

    @pytest.mark.parametrize("kind", [THREE_YEAR_LEGACY, CURRENT_CHANGE])
    def test_matches_scalar_assembly(self, kind):
        params = model(kind=kind, n_w=0)
        w = np.array([])
        rho = 0.35
        r_batch = sample_random_effects_batch(params.re_law, 8, 3, antithetic=True)
        direct = self.direct_components(params, w, rho, r_batch)
        dec = decompose(params, single_stratum(), rho, mc=MC_SMALL)
        tol = 1e-9 if kind == THREE_YEAR_LEGACY else 5e-7
        for name in effects.COMPONENTS:
            assert getattr(dec, name) == pytest.approx(direct[name], abs=tol), name


class TestDecomposeInvariants:
    def test_component_identities_across_policies(self):
        params = model()
        for policy in (0.0, 0.5, 1.0, "min", "max", {(0.0,): 0.2, (1.0,): 0.8}):
            dec = decompose(params, TWO_STRATA, policy, mc=MC)
            assert_identities(dec)
            assert dec.mc_draws == 400
            for name in effects.COMPONENTS:
                assert np.isfinite(dec.mc_se[name]) and dec.mc_se[name] >= 0.0

    def test_policy_labels(self):
        params = model()
        assert decompose(params, TWO_STRATA, 0.25, mc=MC_SMALL).rho_policy == "rho=0.25"
        assert decompose(params, TWO_STRATA, "min", mc=MC_SMALL).rho_policy == "min"
        assert (
            decompose(params, TWO_STRATA, {(0.0,): 0.1, (1.0,): 0.9}, mc=MC_SMALL).rho_policy
            == "per-stratum"
        )

    def test_unknown_policy_rejected(self):
        with pytest.raises(InvalidInput):
            decompose(model(), TWO_STRATA, "median", mc=MC_SMALL)

    def test_dict_policy_requires_every_stratum(self):
        with pytest.raises(InvalidInput):
            decompose(model(), TWO_STRATA, {(0.0,): 0.5}, mc=MC_SMALL)

    def test_deterministic_per_seed(self):
        params = model()
        a = decompose(params, TWO_STRATA, 0.5, mc={"draws": 64, "seed": 9})
        b = decompose(params, TWO_STRATA, 0.5, mc={"draws": 64, "seed": 9})
        c = decompose(params, TWO_STRATA, 0.5, mc={"draws": 64, "seed": 10})
        assert a == b
        assert a.de != c.de

    def test_reference_invariance_of_totals(self):
        params = model()
        m_alt = make_trajectory(
            params.mediator, x_design(0, 1), np.array([0.5]), np.array([0.1, -0.2, 0.05, 0.0])
        )
        base = decompose(params, TWO_STRATA, 0.5, mc=MC)
        for refs in (ReferenceLevels(u_ref=2), ReferenceLevels(u_ref=1, m_ref=m_alt)):
            alt = decompose(params, TWO_STRATA, 0.5, refs=refs, mc=MC)
            assert alt.te == base.te
            assert alt.de == pytest.approx(base.de, abs=1e-9)
            assert alt.ie == pytest.approx(base.ie, abs=1e-9)
            # components themselves move with the reference choice
            assert abs(alt.de_r - base.de_r) > 1e-6

    def test_stratum_additivity(self):
        params = model()
        combined = decompose(params, TWO_STRATA, 0.4, mc=MC)
        parts = [
            decompose(params, StratumWeights(((w, 1.0),)), 0.4, mc=MC)
            for w, _ in TWO_STRATA.strata
        ]
        masses = [m for _, m in TWO_STRATA.strata]
        for name in effects.COMPONENTS:
            mixed = sum(m * getattr(p, name) for m, p in zip(masses, parts))
            assert combined.as_dict()[name] == pytest.approx(mixed, abs=1e-12), name

    def test_null_treatment_gives_zero_effects(self):
        params = model(null_treatment=True)
        dec = decompose(params, TWO_STRATA, 0.5, mc={"draws": 64, "seed": 2})
        assert abs(dec.te) <= 1e-12
        assert abs(dec.de) <= 1e-12
        assert abs(dec.ie) <= 1e-12

    @pytest.mark.parametrize("kind", [THREE_YEAR_LEGACY, CURRENT_CHANGE])
    def test_zero_interaction_kills_unidentified_terms(self, kind):
        # exact cancellation requires the hazard to be free of both the
        # confounder-by-mediator coefficients and the confounder main and
        # interaction effects
        params = model(
            kind=kind, zeta=(0.25, 0.0, 0.0, 0.1), gamma1=(0.0, 0.0), gamma2=(0.0, 0.0)
        )
        mc = MC_SMALL if kind == CURRENT_CHANGE else {"draws": 64, "seed": 2}
        dec = decompose(params, TWO_STRATA, 0.7, mc=mc)
        tol = 0.0 if kind == THREE_YEAR_LEGACY else 1e-8
        assert abs(dec.delta) <= tol
        assert abs(dec.delta_de) <= tol
        assert abs(dec.delta_ie) <= tol
        assert dec.de == pytest.approx(dec.de_r, abs=tol)
        # ie is defined as te - de on the means, so reassociation leaves
        # a few ulp even when the per-draw arrays match bitwise
        assert dec.ie == pytest.approx(dec.ie_r, abs=max(tol, 1e-12))

    def test_zero_mediator_coefficients_kill_indirect_effect(self):
        params = model(zeta=(0.0, 0.0, 0.0, 0.0))
        dec = decompose(params, TWO_STRATA, 0.3, mc={"draws": 64, "seed": 4})
        assert abs(dec.ie) <= 1e-12
        assert dec.mc_se["ie_r"] == 0.0
        assert dec.delta == 0.0 and dec.delta_de == 0.0 and dec.delta_ie == 0.0
        assert dec.te == pytest.approx(dec.de, abs=1e-12)


class TestRhoMachinery:
    def test_te_bitwise_constant_and_de_affine(self):
        params = model()
        grid = np.linspace(0.0, 1.0, 11)
        sweep = rho_sweep(params, TWO_STRATA, mc=MC, grid=grid)
        tes = {dec.te for dec in sweep}
        assert len(tes) == 1
        des = np.array([dec.de for dec in sweep])
        slope, intercept = np.polyfit(grid, des, 1)
        resid = des - (slope * grid + intercept)
        assert np.max(np.abs(resid)) <= 1e-10 * max(np.max(np.abs(des)), 1.0)
        assert abs(slope) > 1e-4  # the sweep actually moves

    def test_extremes_at_endpoints(self):
        params = model()
        sweep = rho_sweep(params, TWO_STRATA, mc=MC, grid=np.linspace(0.0, 1.0, 21))
        des = [dec.de for dec in sweep]
        assert min(des) == pytest.approx(min(des[0], des[-1]), abs=1e-12)
        assert max(des) == pytest.approx(max(des[0], des[-1]), abs=1e-12)
        # per-stratum endpoint optima bracket every global-rho value
        assert sweep.minimum.de <= min(des) + 1e-12
        assert sweep.maximum.de >= max(des) - 1e-12
        assert sweep.minimum.te == sweep.maximum.te == sweep[0].te

    def test_min_max_policies_bound_global_rho(self):
        params = model()
        lo = decompose(params, TWO_STRATA, "min", mc=MC)
        hi = decompose(params, TWO_STRATA, "max", mc=MC)
        assert lo.delta <= hi.delta
        for rho in (0.0, 0.25, 0.75, 1.0):
            mid = decompose(params, TWO_STRATA, rho, mc=MC)
            assert lo.delta - 1e-12 <= mid.delta <= hi.delta + 1e-12

    def test_endpoint_delta_matches_polytope_optima(self):
        params = model(n_w=0)
        weights = single_stratum()
        d0 = decompose(params, weights, 0.0, mc=MC)
        d1 = decompose(params, weights, 1.0, mc=MC)
        r_batch = sample_random_effects_batch(params.re_law, MC["draws"], MC["seed"], antithetic=True)
        work = effects._McWork(params, ReferenceLevels(), r_batch)
        stratum = effects._StratumData(work, (), 1.0)
        lo, hi, _, _ = optimize_linear_over_polytope(
            stratum.marginals, stratum.interaction_mean, "Monotone"
        )
        assert min(d0.delta, d1.delta) == pytest.approx(lo, abs=1e-9)
        assert max(d0.delta, d1.delta) == pytest.approx(hi, abs=1e-9)

    def test_grid_validation(self):
        with pytest.raises(InvalidInput):
            rho_sweep(model(), TWO_STRATA, mc=MC_SMALL, grid=[0.0, 1.5])

    def test_sweep_container_protocol(self):
        sweep = rho_sweep(model(), TWO_STRATA, mc=MC_SMALL, grid=[0.0, 0.5, 1.0])
        assert len(sweep) == 3
        assert sweep[1].rho_policy == "rho=0.5"
        assert [d.rho_policy for d in sweep] == ["rho=0", "rho=0.5", "rho=1"]


class TestInfeasibleStrata:
    def infeasible_model(self):
        # stratum (1,) violates marginal dominance at the top level while
        # stratum (0,) stays feasible
        params = model()
        cp = ConfounderParams(
            phi0=np.array([-2.0, 0.3]),
            phi1=np.array([1.2, 0.4]),
            phi2=np.array([[2.5], [0.0]]),
        )
        return ModelParams(params.mediator, params.survival, cp, params.re_law)

    def test_default_policy_raises_with_stratum_list(self):
        params = self.infeasible_model()
        with pytest.raises(InfeasibleStratum) as err:
            decompose(params, TWO_STRATA, 0.5, mc=MC_SMALL)
        assert err.value.strata == [(1.0,)]

    def test_skip_and_reweight_matches_feasible_substratum(self):
        params = self.infeasible_model()
        kept = decompose(
            params, TWO_STRATA, 0.5, mc=MC_SMALL, infeasible="skip-and-reweight"
        )
        alone = decompose(params, StratumWeights((((0.0,), 1.0),)), 0.5, mc=MC_SMALL)
        assert kept.de == alone.de
        assert kept.te == alone.te

    def test_all_infeasible_raises_even_when_skipping(self):
        params = self.infeasible_model()
        only_bad = StratumWeights((((1.0,), 1.0),))
        with pytest.raises(InfeasibleStratum):
            decompose(params, only_bad, 0.5, mc=MC_SMALL, infeasible="skip-and-reweight")


class TestRelaxedBounds:
    def test_contains_monotone_range_and_assembles_with_te(self):
        params = model()
        bounds = relaxed_bounds(params, TWO_STRATA, mc=MC)
        sweep = rho_sweep(params, TWO_STRATA, mc=MC, grid=[0.0, 0.5, 1.0])
        de_lo, de_hi = bounds["de"]
        ie_lo, ie_hi = bounds["ie"]
        assert de_lo < de_hi
        for dec in list(sweep) + [sweep.minimum, sweep.maximum]:
            assert de_lo - 1e-9 <= dec.de <= de_hi + 1e-9
            assert ie_lo - 1e-9 <= dec.ie <= ie_hi + 1e-9
        te = sweep[0].te
        assert ie_lo + de_hi == pytest.approx(te, abs=1e-10)
        assert ie_hi + de_lo == pytest.approx(te, abs=1e-10)

    def test_single_stratum_width_matches_polytope(self):
        params = model(n_w=0)
        bounds = relaxed_bounds(params, single_stratum(), mc=MC)
        r_batch = sample_random_effects_batch(params.re_law, MC["draws"], MC["seed"], antithetic=True)
        work = effects._McWork(params, ReferenceLevels(), r_batch)
        stratum = effects._StratumData(work, (), 1.0)
        lo, hi, arg_lo, arg_hi = optimize_linear_over_polytope(
            stratum.marginals, stratum.interaction_mean, "Unconstrained"
        )
        assert bounds["de"][1] - bounds["de"][0] == pytest.approx(hi - lo, abs=1e-10)
        # vertex maximizers are valid joint tables for the marginals
        for vertex in (arg_lo, arg_hi):
            assert np.all(vertex.p >= -1e-12)
            np.testing.assert_allclose(vertex.p.sum(axis=0), stratum.mu, atol=1e-10)
            np.testing.assert_allclose(vertex.p.sum(axis=1), stratum.phi, atol=1e-10)

    def test_bounds_collapse_without_interaction(self):
        params = model(zeta=(0.25, 0.0, 0.0, 0.1), gamma1=(0.0, 0.0), gamma2=(0.0, 0.0))
        bounds = relaxed_bounds(params, TWO_STRATA, mc={"draws": 64, "seed": 2})
        assert bounds["de"][0] == pytest.approx(bounds["de"][1], abs=1e-12)
        assert bounds["ie"][0] == pytest.approx(bounds["ie"][1], abs=1e-12)


class _FakeDraw:
    def __init__(self, de, ie):
        self.de = de
        self.ie = ie
        self.te = de + ie


class TestProportionMediated:
    def test_constant_ratio(self):
        out = proportion_mediated([_FakeDraw(1.0, 1.0)] * 5)
        assert out["pm_mean"] == 0.5
        assert out["n_discarded"] == 0
        assert out["pm_interval"] == (0.5, 0.5)

    def test_negative_draw_discarded(self):
        out = proportion_mediated([_FakeDraw(1.0, 1.0), _FakeDraw(-1.0, 2.0)])
        assert out["pm_mean"] == 0.5
        assert out["n_discarded"] == 1

    def test_all_discarded(self):
        with pytest.raises(AllDrawsDiscarded):
            proportion_mediated([_FakeDraw(-1.0, 2.0), _FakeDraw(2.0, -0.5)])

    def test_empty_rejected(self):
        with pytest.raises(InvalidInput):
            proportion_mediated([])

    def test_kept_ratios_lie_in_unit_interval(self):
        rng = np.random.default_rng(0)
        draws = [_FakeDraw(de, ie) for de, ie in rng.normal(0.5, 1.0, size=(200, 2))]
        out = proportion_mediated(draws)
        assert 0.0 <= out["pm_interval"][0] <= out["pm_mean"] <= out["pm_interval"][1] <= 1.0

    def test_real_decompositions_accepted(self):
        # beneficial treatment on both pathways so both parts are positive
        params = model(zeta=(-0.3, 0.05, -0.05, -0.05), gamma2=(-0.1, -0.1))
        decs = [decompose(params, TWO_STRATA, rho, mc=MC) for rho in (0.0, 0.5, 1.0)]
        out = proportion_mediated(decs)
        assert out["n_discarded"] == 0
        assert 0.0 < out["pm_mean"] < 1.0
