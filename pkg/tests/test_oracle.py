"""Tests for the counterfactual-world simulator and ground-truth effects."""

import dataclasses

import numpy as np
import pytest
from scipy import stats

from rmstmediate.confounder import MarginalPair, confounder_probs, joint_from_rho
from rmstmediate.effects import ModelParams, StratumWeights, decompose, single_stratum
from rmstmediate.errors import InvalidInput
from rmstmediate.mediator import trajectory_value, x_design
from rmstmediate.oracle import (
    OracleEffects,
    ScmConfig,
    ScmTruth,
    SubjectRecord,
    emit_observational,
    oracle_effects,
    potential_trajectory,
    scm_config_from_rho,
    simulate_truth,
)
from rmstmediate.survival import CURRENT_CHANGE, km_restricted_auc

from test_effects import (
    MC,
    TWO_STRATA,
    confounder_params,
    mediator_params,
    model,
    re_law,
    survival_params,
)


def config(params=None, n=1000, rho=0.5, weights=TWO_STRATA, **kwargs):
    return scm_config_from_rho(params if params is not None else model(), weights, rho, n, **kwargs)


class TestConfigValidation:
    def test_joint_count_must_match_strata(self):
        cfg = config(n=10)
        with pytest.raises(InvalidInput):
            ScmConfig(params=cfg.params, weights=cfg.weights, joints=cfg.joints[:1], n=10)

    def test_cohort_size_positive(self):
        with pytest.raises(InvalidInput):
            config(n=0)

    def test_visit_times_increasing(self):
        with pytest.raises(InvalidInput):
            config(n=5, visit_times=(0.0, 2.0, 1.0))

    def test_dropout_in_unit_interval(self):
        with pytest.raises(InvalidInput):
            config(n=5, visit_times=(0.0, 1.0), dropout=1.5)

    def test_dropout_length_matches_visits(self):
        with pytest.raises(InvalidInput):
            config(n=5, visit_times=(0.0, 1.0, 2.0), dropout=(0.1, 0.2))

    def test_censoring_descriptors_positive(self):
        with pytest.raises(InvalidInput):
            config(n=5, admin_time=-1.0)
        with pytest.raises(InvalidInput):
            config(n=5, censor_rate=0.0)

    def test_joints_follow_model_marginals(self):
        cfg = config(n=5, rho=0.3)
        for (w, _), joint in zip(TWO_STRATA.strata, cfg.joints):
            m = MarginalPair(
                mu=confounder_probs(cfg.params.confounder, 1, np.asarray(w)),
                phi=confounder_probs(cfg.params.confounder, 0, np.asarray(w)),
            )
            np.testing.assert_allclose(joint.p, joint_from_rho(m, 0.3).p, atol=1e-14)


class TestSimulateTruth:
    def test_deterministic_and_in_range(self):
        cfg = config(n=400)
        a = simulate_truth(cfg, seed=7)
        b = simulate_truth(cfg, seed=7)
        assert len(a) == 400
        t_max = cfg.params.survival.t_max
        for ta, tb in zip(a, b):
            assert ta == tb
            assert np.array_equal(ta.r, tb.r)
            for name in ("t_arm1_m1", "t_arm1_m0", "t_arm0_m0", "t_arm0_m1"):
                val = getattr(ta, name)
                assert 0.0 < val <= t_max

    def test_u_pair_marginals_match_joint(self):
        cfg = config(n=20000)
        truths = simulate_truth(cfg, seed=3)
        for s, (w, _) in enumerate(TWO_STRATA.strata):
            sub = [t for t in truths if t.w_index == s]
            n_s = len(sub)
            counts = np.zeros((3, 3))
            for t in sub:
                counts[t.u_astar, t.u_a] += 1
            freq = counts / n_s
            p = cfg.joints[s].p
            se = np.sqrt(np.maximum(p * (1 - p), 1e-12) / n_s)
            assert np.all(np.abs(freq - p) <= 3.5 * se + 1e-12)

    def test_randomization_balance(self):
        # fixed seed, thresholds sized for the 1% level at n=1e5
        cfg = config(n=100000)
        truths = simulate_truth(cfg, seed=101)
        arm = np.array([t.arm for t in truths])
        u_a = np.array([t.u_a for t in truths])
        w_idx = np.array([t.w_index for t in truths])
        r0 = np.array([t.r[0] for t in truths])
        for other in (u_a, w_idx):
            table = np.zeros((2, int(other.max()) + 1))
            for a_val, o_val in zip(arm, other):
                table[a_val, o_val] += 1
            assert stats.chi2_contingency(table).pvalue > 0.01
        assert abs(np.corrcoef(arm, r0)[0, 1]) < 3.3 / np.sqrt(len(arm))

    def test_inert_treatment_freezes_all_worlds(self):
        cfg = config(params=model(null_treatment=True), n=500)
        truths = simulate_truth(cfg, seed=5)
        for t in truths:
            assert t.t_arm1_m1 == t.t_arm1_m0 == t.t_arm0_m0 == t.t_arm0_m1
            assert t.u_a == t.u_astar

    def test_pure_indirect_world(self):
        # hazard ignores both the arm and the confounder level; the only
        # treatment pathway runs through the mediator trajectory
        params = model(
            same_baseline=True,
            gamma1=(0.0, 0.0),
            gamma2=(0.0, 0.0),
            zeta=(0.25, 0.0, 0.0, 0.0),
        )
        truths = simulate_truth(config(params=params, n=500), seed=9)
        eff = oracle_effects(truths)
        for t in truths:
            assert t.t_arm1_m0 == t.t_arm0_m0
            assert t.t_arm0_m1 == t.t_arm1_m1
        assert eff.de == 0.0
        assert eff.ie == eff.te != 0.0

    def test_pure_direct_world(self):
        # mediator and confounder ignore the arm; shared thresholds then
        # force the two same-arm worlds to coincide subject by subject
        params = ModelParams(
            mediator=mediator_params(1, treatment_free=True),
            survival=survival_params(),
            confounder=confounder_params(1, null_treatment=True),
            re_law=re_law(),
        )
        truths = simulate_truth(config(params=params, n=500), seed=11)
        eff = oracle_effects(truths)
        for t in truths:
            assert t.t_arm1_m1 == t.t_arm1_m0
            assert t.t_arm0_m0 == t.t_arm0_m1
        assert eff.ie == 0.0
        assert eff.te == eff.de != 0.0

    def test_potential_trajectory_matches_parameters(self):
        cfg = config(n=20)
        truths = simulate_truth(cfg, seed=1)
        med = cfg.params.mediator
        for t in truths[:5]:
            for arm in (0, 1):
                traj = potential_trajectory(cfg, t, arm)
                u = t.u_a if arm == 1 else t.u_astar
                for v in (0.0, 1.5, 4.0, 12.0):
                    direct = trajectory_value(med, x_design(arm, u), np.asarray(t.w), t.r, v)
                    assert traj(v) == pytest.approx(direct, abs=1e-10)


class TestOracleEffects:
    def test_identity_and_se_fields(self):
        truths = simulate_truth(config(n=2000), seed=2)
        eff = oracle_effects(truths)
        assert eff.te == eff.de + eff.ie
        assert eff.n == 2000
        for se in (eff.de_se, eff.ie_se, eff.te_se):
            assert np.isfinite(se) and se > 0.0

    def test_empty_rejected(self):
        with pytest.raises(InvalidInput):
            oracle_effects([])

    def test_inert_treatment_near_zero(self):
        truths = simulate_truth(config(params=model(null_treatment=True), n=2000), seed=4)
        eff = oracle_effects(truths)
        assert abs(eff.de) <= 3 * max(eff.de_se, 1e-12)
        assert abs(eff.ie) <= 3 * max(eff.ie_se, 1e-12)
        assert abs(eff.te) <= 3 * max(eff.te_se, 1e-12)

    @pytest.mark.parametrize("rho", [0.0, 0.5, 1.0])
    def test_matches_decompose(self, rho):
        params = model()
        truths = simulate_truth(config(params=params, n=30000, rho=rho), seed=13)
        eff = oracle_effects(truths)
        dec = decompose(params, TWO_STRATA, rho, mc={"draws": 4000, "seed": 17})
        for name in ("de", "ie", "te"):
            gap = abs(getattr(eff, name) - getattr(dec, name))
            combined = np.hypot(getattr(eff, f"{name}_se"), dec.mc_se[name])
            assert gap <= 3 * combined, (name, gap, combined)

    def test_matches_decompose_current_change(self):
        params = model(kind=CURRENT_CHANGE)
        truths = simulate_truth(config(params=params, n=4000, rho=0.5), seed=19)
        eff = oracle_effects(truths)
        dec = decompose(params, TWO_STRATA, 0.5, mc={"draws": 256, "seed": 23})
        for name in ("de", "ie", "te"):
            gap = abs(getattr(eff, name) - getattr(dec, name))
            combined = np.hypot(getattr(eff, f"{name}_se"), dec.mc_se[name])
            assert gap <= 3 * combined, (name, gap, combined)


class TestEmitObservational:
    def test_consistency_and_exact_measurements(self):
        params = model()
        params = ModelParams(
            mediator=dataclasses.replace(params.mediator, sigma=0.0),
            survival=params.survival,
            confounder=params.confounder,
            re_law=params.re_law,
        )
        cfg = config(params=params, n=300, visit_times=(0.0, 0.5, 1.0, 2.0, 4.0), dropout=0.0)
        truths = simulate_truth(cfg, seed=21)
        subjects, records = emit_observational(cfg, truths, seed=22)
        assert len(subjects) == 300
        by_id = {t.subject_id: t for t in truths}
        med = cfg.params.mediator
        for s in subjects:
            t = by_id[s.subject_id]
            assert s.arm == t.arm
            assert s.u_level == (t.u_a if t.arm == 1 else t.u_astar)
            assert s.event  # no censoring configured
            assert s.exit_time == (t.raw_treated if t.arm == 1 else t.raw_control)
        for rec in records:
            t = by_id[rec.subject_id]
            s_exit = t.raw_treated if t.arm == 1 else t.raw_control
            assert rec.t <= s_exit
            u = t.u_a if t.arm == 1 else t.u_astar
            expect = trajectory_value(med, x_design(t.arm, u), np.asarray(t.w), t.r, rec.t)
            assert rec.m_obs == pytest.approx(expect, abs=1e-10)

    def test_administrative_censoring(self):
        cfg = config(n=400, admin_time=6.0)
        truths = simulate_truth(cfg, seed=31)
        subjects, _ = emit_observational(cfg, truths, seed=32)
        for s, t in zip(subjects, truths):
            raw = t.raw_treated if t.arm == 1 else t.raw_control
            if raw <= 6.0:
                assert s.event and s.exit_time == raw
            else:
                assert not s.event and s.exit_time == 6.0

    def test_monotone_dropout_prefix(self):
        visits = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)
        cfg = config(n=500, visit_times=visits, dropout=0.35)
        truths = simulate_truth(cfg, seed=41)
        subjects, records = emit_observational(cfg, truths, seed=42)
        seen = {}
        for rec in records:
            seen.setdefault(rec.subject_id, []).append(rec.t)
        exits = {s.subject_id: s.exit_time for s in subjects}
        dropped_any = 0
        for sid, ts in seen.items():
            eligible = [v for v in visits if v <= exits[sid]]
            assert ts == eligible[: len(ts)]  # prefix, in schedule order
            dropped_any += len(ts) < len(eligible)
        assert dropped_any > 0

    def test_no_visits_no_records(self):
        cfg = config(n=50)
        truths = simulate_truth(cfg, seed=51)
        _, records = emit_observational(cfg, truths, seed=52)
        assert records == []

    def test_km_recovers_truth_under_censoring(self):
        cfg = config(n=20000, censor_rate=0.1)
        truths = simulate_truth(cfg, seed=61)
        subjects, _ = emit_observational(cfg, truths, seed=62)
        treated = [s for s in subjects if s.arm == 1]
        censored = np.mean([not s.event for s in subjects])
        assert 0.25 < censored < 0.75
        t_max = cfg.params.survival.t_max
        auc, km_se = km_restricted_auc(treated, t_max)
        pot = np.array([t.t_arm1_m1 for t in truths])
        truth_mean = pot.mean()
        truth_se = pot.std(ddof=1) / np.sqrt(len(pot))
        assert abs(auc - truth_mean) <= 3 * np.hypot(km_se, truth_se)

    def test_subject_record_validation(self):
        with pytest.raises(InvalidInput):
            SubjectRecord(subject_id="x", arm=2, u_level=0, w=(), exit_time=1.0, event=True)
        with pytest.raises(InvalidInput):
            SubjectRecord(subject_id="x", arm=1, u_level=5, w=(), exit_time=1.0, event=True)
        with pytest.raises(InvalidInput):
            SubjectRecord(subject_id="x", arm=1, u_level=0, w=(), exit_time=0.0, event=True)
