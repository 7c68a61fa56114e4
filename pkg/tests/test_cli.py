"""Tests for configuration, ingestion, artifact IO and the CLI workflow."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rmstmediate import cli
from rmstmediate.errors import OrphanRecord, SchemaViolation
from rmstmediate.inference import (
    ConfounderDraws,
    ParameterLayout,
    PosteriorDraws,
    confounder_names,
    default_template,
)
from rmstmediate.survival import THREE_YEAR_LEGACY


def base_config(tmp_path, **overrides):
    cfg = {
        "seed": 11,
        "t_max": 15.0,
        "cut_points": [0.0, 2.0, 5.0],
        "functional_kind": THREE_YEAR_LEGACY,
        "standardization": {"center": 25.0, "scale": 5.0},
        "covariates": [{"name": "risk", "levels": ["low", "high"]}],
        "subject_file": "subjects.csv",
        "longitudinal_file": "longitudinal.csv",
        "rho_policy": 0.5,
        "mc_draws": 120,
        "mcmc": {"chains": 2, "burn_in": 40, "samples": 25},
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


TRUTH = {
    "mediator": {
        "beta0": 0.1,
        "beta1": [0.4, -0.2, 0.3, 0.1, -0.1],
        "beta2": [0.25],
        "alpha": [0.5, -0.3, 0.2, 0.1],
        "psi": [
            [0.3, 0.1, -0.2, 0.05, 0.0],
            [0.1, -0.1, 0.2, 0.0, 0.1],
            [-0.2, 0.2, 0.1, 0.1, 0.0],
            [0.05, 0.0, -0.1, 0.2, 0.1],
        ],
        "sigma": 0.4,
    },
    "survival": {
        "baseline_control_levels": [0.05, 0.08, 0.06],
        "baseline_treated_levels": [0.04, 0.06, 0.05],
        "gamma1": [0.3, 0.5],
        "gamma2": [-0.1, 0.2],
        "gamma3": [0.2],
        "zeta": [0.15, 0.1, -0.05, 0.08],
        "xi": 0.1,
    },
    "confounder": {
        "phi0": [0.2, -0.3],
        "phi1": [0.4, 0.8],
        "phi2": [[0.3], [-0.2]],
    },
    "re_covariance": [
        [0.25, 0.02, 0.0, 0.0],
        [0.02, 0.16, 0.01, 0.0],
        [0.0, 0.01, 0.09, 0.0],
        [0.0, 0.0, 0.0, 0.04],
    ],
    "strata": [
        {"covariates": {"risk": "low"}, "mass": 0.6},
        {"covariates": {"risk": "high"}, "mass": 0.4},
    ],
    "rho": 0.5,
}


def write_cohort(tmp_path, subject_rows, long_rows, covariate_names=("risk",)):
    header = ["subject_id", "arm", "u_level", *covariate_names, "exit_time", "event"]
    (tmp_path / "subjects.csv").write_text(
        "\n".join([",".join(header)] + [",".join(r) for r in subject_rows]) + "\n"
    )
    (tmp_path / "longitudinal.csv").write_text(
        "\n".join(["subject_id,t,m_obs_raw"] + [",".join(r) for r in long_rows]) + "\n"
    )


def run_cli(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def point_mass_draws_file(path, n_w=1, copies=4, joint_vec=None, conf_vec=None):
    template = default_template(n_w=n_w, cuts=(0.0, 2.0, 5.0))
    layout = ParameterLayout(template)
    vec = (
        np.asarray(joint_vec, dtype=float)
        if joint_vec is not None
        else layout.pack(template.mediator, template.survival, template.re_law)
    )
    cv = (
        np.asarray(conf_vec, dtype=float)
        if conf_vec is not None
        else np.array([0.2, -0.3, 0.4, 0.8, 0.3, -0.2])
    )
    joint = PosteriorDraws(
        names=layout.names,
        chains=(np.tile(vec, (copies, 1)),),
        re_chains=None,
        layout=layout,
        burn_in=0,
        thin=1,
        seed=0,
        acceptance=(),
        adaptation_failures=(),
    )
    conf = ConfounderDraws(
        names=confounder_names(n_w), chains=(np.tile(cv, (copies, 1)),), n_w=n_w, seed=0
    )
    cli.write_draws_jsonl(str(path), joint, conf)
    return joint, conf


class TestCovariateSchema:
    def test_encode_decode_label_roundtrip(self):
        schema = cli.CovariateSchema(
            names=("risk", "site"),
            levels={"risk": ("low", "high"), "site": ("a", "b", "c")},
        )
        assert schema.width == 3
        w = schema.encode({"risk": "high", "site": "c"})
        assert w == (1.0, 0.0, 1.0)
        assert schema.decode(w) == {"risk": "high", "site": "c"}
        label = schema.stratum_label(w)
        assert label == "risk=high,site=c"
        assert schema.pattern_from_label(label) == w
        # reference levels encode to all-zero blocks
        assert schema.encode({"risk": "low", "site": "a"}) == (0.0, 0.0, 0.0)

    def test_unknown_level_rejected(self):
        schema = cli.CovariateSchema(names=("risk",), levels={"risk": ("low", "high")})
        with pytest.raises(SchemaViolation, match="risk"):
            schema.encode({"risk": "medium"}, where="row 7, ")

    def test_indicator_for_non_reference_category(self):
        # a dichotomized measurement: the elevated category carries 1.0
        schema = cli.CovariateSchema(names=("bmi",), levels={"bmi": ("under30", "30plus")})
        assert schema.encode({"bmi": "30plus"}) == (1.0,)
        assert schema.encode({"bmi": "under30"}) == (0.0,)

    def test_empty_schema(self):
        schema = cli.CovariateSchema(names=(), levels={})
        assert schema.width == 0
        assert schema.encode({}) == ()
        assert schema.stratum_label(()) == "(none)"
        assert schema.pattern_from_label("(none)") == ()

    def test_malformed_labels_rejected(self):
        schema = cli.CovariateSchema(names=("risk",), levels={"risk": ("low", "high")})
        with pytest.raises(SchemaViolation):
            schema.pattern_from_label("high")
        with pytest.raises(SchemaViolation):
            schema.pattern_from_label("site=a")


class TestLoadConfig:
    def test_valid_config_with_defaults(self, tmp_path):
        path, _ = base_config(tmp_path)
        config = cli.load_config(str(path))
        assert config.seed == 11
        assert config.u_reference == 0
        assert config.rhat_limit is None
        assert config.truth is None
        assert config.schema.names == ("risk",)
        assert config.cut_points == (0.0, 2.0, 5.0)
        # relative paths resolve against the config directory
        assert config.subject_file == str(tmp_path / "subjects.csv")
        assert len(config.sha256) == 64

    def test_unknown_and_missing_keys(self, tmp_path):
        path, _ = base_config(tmp_path, bogus=1)
        with pytest.raises(SchemaViolation, match="bogus"):
            cli.load_config(str(path))
        path2, cfg = base_config(tmp_path)
        del cfg["mc_draws"]
        path2.write_text(json.dumps(cfg))
        with pytest.raises(SchemaViolation, match="mc_draws"):
            cli.load_config(str(path2))

    def test_mcmc_seed_rejected(self, tmp_path):
        path, _ = base_config(tmp_path, mcmc={"chains": 2, "seed": 3})
        with pytest.raises(SchemaViolation, match="top-level seed"):
            cli.load_config(str(path))

    def test_bad_values_rejected(self, tmp_path):
        for override in (
            {"rho_policy": "median"},
            {"rho_policy": 1.5},
            {"functional_kind": "something-else"},
            {"cut_points": [1.0, 2.0]},
            {"standardization": {"center": 25.0, "scale": 0.0}},
            {"seed": -1},
            {"u_reference": 3},
            {"mc_draws": 0},
        ):
            path, _ = base_config(tmp_path, **override)
            with pytest.raises(SchemaViolation):
                cli.load_config(str(path))

    def test_not_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{nope")
        with pytest.raises(SchemaViolation, match="JSON"):
            cli.load_config(str(path))

    def test_truth_section_builds_params(self, tmp_path):
        path, _ = base_config(
            tmp_path,
            truth=TRUTH,
            simulate={"n_subjects": 50, "visit_times": [0.0, 1.0], "admin_time": 10.0},
        )
        config = cli.load_config(str(path))
        params, weights, rho = config.truth
        assert rho == 0.5
        assert weights.strata == (((0.0,), 0.6), ((1.0,), 0.4))
        assert params.survival.functional_kind == THREE_YEAR_LEGACY
        assert config.simulate["n_subjects"] == 50

    def test_truth_width_mismatch(self, tmp_path):
        bad = json.loads(json.dumps(TRUTH))
        bad["mediator"]["beta2"] = [0.25, 0.1]
        path, _ = base_config(tmp_path, truth=bad)
        with pytest.raises(SchemaViolation, match="beta2"):
            cli.load_config(str(path))


class TestIngest:
    def test_three_subject_weights(self, tmp_path):
        # two strata with counts 2 and 1 give empirical masses 2/3 and 1/3
        write_cohort(
            tmp_path,
            [
                ["s1", "1", "0", "low", "4.0", "1"],
                ["s2", "0", "1", "low", "6.0", "0"],
                ["s3", "1", "2", "high", "2.5", "1"],
            ],
            [["s1", "0.0", "25.0"], ["s1", "1.0", "30.0"], ["s2", "0.0", "20.0"]],
        )
        path, _ = base_config(tmp_path)
        result = cli.ingest(cli.load_config(str(path)))
        assert result.weights.strata == (((0.0,), 2 / 3), ((1.0,), 1 / 3))
        assert result.n_excluded == 0
        # standardization: (30 - 25) / 5 = 1.0
        assert result.records[1].m_obs == pytest.approx(1.0)
        assert result.raw_m == [25.0, 30.0, 20.0]

    def test_missing_covariate_excludes_subject(self, tmp_path):
        write_cohort(
            tmp_path,
            [
                ["s1", "1", "0", "low", "4.0", "1"],
                ["s2", "0", "1", "", "6.0", "0"],
                ["s3", "0", "1", "NA", "1.0", "1"],
                ["s4", "1", "2", "high", "2.5", "1"],
            ],
            [["s2", "0.0", "25.0"], ["s1", "0.0", "27.5"]],
        )
        path, _ = base_config(tmp_path)
        result = cli.ingest(cli.load_config(str(path)))
        assert result.n_excluded == 2
        assert [s.subject_id for s in result.subjects] == ["s1", "s4"]
        # records of excluded subjects are dropped, with a warning
        assert len(result.records) == 1
        assert any("excluded" in w for w in result.warnings)

    def test_unknown_category_names_row_and_column(self, tmp_path):
        write_cohort(
            tmp_path,
            [["s1", "1", "0", "medium", "4.0", "1"]],
            [],
        )
        path, _ = base_config(tmp_path)
        with pytest.raises(SchemaViolation, match="row 2.*'risk'.*'medium'"):
            cli.ingest(cli.load_config(str(path)))

    def test_orphan_longitudinal_record(self, tmp_path):
        write_cohort(
            tmp_path,
            [["s1", "1", "0", "low", "4.0", "1"]],
            [["ghost", "0.0", "25.0"]],
        )
        path, _ = base_config(tmp_path)
        with pytest.raises(OrphanRecord, match="ghost"):
            cli.ingest(cli.load_config(str(path)))

    def test_out_of_order_visits_sorted_with_warning(self, tmp_path):
        write_cohort(
            tmp_path,
            [["s1", "1", "0", "low", "4.0", "1"]],
            [["s1", "2.0", "30.0"], ["s1", "0.0", "25.0"]],
        )
        path, _ = base_config(tmp_path)
        result = cli.ingest(cli.load_config(str(path)))
        assert [r.t for r in result.records] == [0.0, 2.0]
        assert result.raw_m == [25.0, 30.0]
        assert any("sorted" in w for w in result.warnings)

    def test_schema_violations(self, tmp_path):
        cases = [
            ([["s1", "2", "0", "low", "4.0", "1"]], [], "arm"),
            ([["s1", "1", "5", "low", "4.0", "1"]], [], "u_level"),
            ([["s1", "1", "0", "low", "-1.0", "1"]], [], "exit_time"),
            ([["s1", "1", "0", "low", "4.0", "yes"]], [], "event"),
            (
                [["s1", "1", "0", "low", "4.0", "1"], ["s1", "0", "0", "low", "2.0", "0"]],
                [],
                "duplicate",
            ),
            ([["s1", "1", "0", "low", "4.0", "1"]], [["s1", "-0.5", "25.0"]], "'t'"),
        ]
        for subject_rows, long_rows, needle in cases:
            write_cohort(tmp_path, subject_rows, long_rows)
            path, _ = base_config(tmp_path)
            with pytest.raises(SchemaViolation, match=needle):
                cli.ingest(cli.load_config(str(path)))

    def test_wrong_header_rejected(self, tmp_path):
        write_cohort(tmp_path, [["s1", "1", "0", "low", "4.0", "1"]], [])
        (tmp_path / "subjects.csv").write_text("id,arm\n")
        path, _ = base_config(tmp_path)
        with pytest.raises(SchemaViolation, match="header"):
            cli.ingest(cli.load_config(str(path)))


class TestArtifactRoundTrips:
    def test_reemission_is_byte_identical(self, tmp_path):
        path, _ = base_config(
            tmp_path,
            truth=TRUTH,
            simulate={"n_subjects": 40, "visit_times": [0.0, 1.0, 3.0], "admin_time": 10.0},
        )
        out = tmp_path / "sim"
        assert cli.main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        _, cfg = base_config(
            tmp_path,
            subject_file=str(out / "subjects.csv"),
            longitudinal_file=str(out / "longitudinal.csv"),
        )
        path2 = tmp_path / "config2.json"
        path2.write_text(json.dumps(cfg))
        config = cli.load_config(str(path2))
        result = cli.ingest(config)
        cli.write_subjects_csv(str(tmp_path / "s2.csv"), result.subjects, config.schema)
        cli.write_longitudinal_csv(str(tmp_path / "l2.csv"), result.records, result.raw_m)
        assert (tmp_path / "s2.csv").read_bytes() == (out / "subjects.csv").read_bytes()
        assert (tmp_path / "l2.csv").read_bytes() == (out / "longitudinal.csv").read_bytes()

    def test_draws_roundtrip(self, tmp_path):
        path = tmp_path / "draws.jsonl"
        joint, conf = point_mass_draws_file(path, copies=3)
        loaded_joint, loaded_conf = cli.read_draws_jsonl(str(path))
        assert loaded_joint.names == joint.names
        assert np.array_equal(loaded_joint.chains[0], joint.chains[0])
        assert np.array_equal(loaded_conf.chains[0], conf.chains[0])
        assert loaded_joint.re_chains is None
        assert loaded_conf.n_w == 1

    def test_read_draws_rejects_bad_files(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("")
        with pytest.raises(SchemaViolation):
            cli.read_draws_jsonl(str(path))
        path.write_text('{"kind":"something"}\n')
        with pytest.raises(SchemaViolation, match="posterior-draws"):
            cli.read_draws_jsonl(str(path))


class TestKmCommand:
    def test_textbook_example(self, tmp_path, capsys):
        # treated events at 2, 4, 20 and control events at 1, 3, 5 with
        # horizon 15 give areas 7.0 and 3.0, so the contrast is 4.0
        write_cohort(
            tmp_path,
            [
                ["t1", "1", "0", "low", "2.0", "1"],
                ["t2", "1", "0", "low", "4.0", "1"],
                ["t3", "1", "0", "low", "20.0", "1"],
                ["c1", "0", "0", "low", "1.0", "1"],
                ["c2", "0", "0", "low", "3.0", "1"],
                ["c3", "0", "0", "low", "5.0", "1"],
            ],
            [],
        )
        path, _ = base_config(tmp_path)
        out = tmp_path / "km"
        code, _, _ = run_cli(["km", "--config", str(path), "--out", str(out)], capsys)
        assert code == 0
        report = json.loads((out / "km.json").read_text())
        assert report["treated"]["estimate"] == pytest.approx(7.0)
        assert report["control"]["estimate"] == pytest.approx(3.0)
        assert report["te"] == pytest.approx(4.0)
        assert (out / "manifest.json").exists()


class TestExitCodes:
    def test_validation_failure_is_exit_2_with_envelope(self, tmp_path, capsys):
        path, _ = base_config(tmp_path, bogus=1)
        code, _, err = run_cli(
            ["km", "--config", str(path), "--out", str(tmp_path / "o")], capsys
        )
        assert code == 2
        envelope = json.loads(err)
        assert envelope["error"] == "SchemaViolation"
        assert envelope["exit_code"] == 2
        assert "bogus" in envelope["message"]

    def test_usage_error_is_exit_2(self, tmp_path, capsys):
        code, _, err = run_cli(["km", "--config", str(tmp_path / "c.json")], capsys)
        assert code == 2
        assert json.loads(err)["error"] == "SchemaViolation"

    def test_missing_input_file_is_exit_2(self, tmp_path, capsys):
        path, _ = base_config(tmp_path)
        code, _, err = run_cli(
            ["km", "--config", str(path), "--out", str(tmp_path / "o")], capsys
        )
        assert code == 2
        assert "subjects.csv" in json.loads(err)["message"]

    def test_all_infeasible_draws_is_exit_3(self, tmp_path, capsys):
        write_cohort(tmp_path, [["s1", "1", "0", "low", "4.0", "1"]], [])
        path, _ = base_config(tmp_path)
        draws_path = tmp_path / "draws.jsonl"
        # treated confounder mass sits below control: no monotone coupling
        point_mass_draws_file(
            draws_path, conf_vec=np.array([2.5, -2.5, -5.0, -5.0, 0.0, 0.0])
        )
        code, _, err = run_cli(
            [
                "effects",
                "--config",
                str(path),
                "--draws",
                str(draws_path),
                "--out",
                str(tmp_path / "eff"),
            ],
            capsys,
        )
        assert code == 3
        assert json.loads(err)["error"] == "AllDrawsDiscarded"

    def test_invalid_thread_cap_is_exit_2(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("MEDIATE_THREADS", "zero")
        path, _ = base_config(tmp_path)
        code, _, err = run_cli(
            ["km", "--config", str(path), "--out", str(tmp_path / "o")], capsys
        )
        assert code == 2
        assert "MEDIATE_THREADS" in json.loads(err)["message"]


class TestEffectsCommand:
    def test_point_mass_zeta_zero_deltas_vanish(self, tmp_path, capsys):
        # the neutral template has no mediator-hazard or confounder-arm
        # coupling, so every confounding-gap column is exactly zero
        write_cohort(
            tmp_path,
            [
                ["s1", "1", "0", "low", "4.0", "1"],
                ["s2", "0", "1", "high", "6.0", "0"],
            ],
            [],
        )
        path, _ = base_config(tmp_path, mc_draws=60)
        draws_path = tmp_path / "draws.jsonl"
        point_mass_draws_file(draws_path, copies=2)
        out = tmp_path / "eff"
        code, _, _ = run_cli(
            [
                "effects",
                "--config",
                str(path),
                "--draws",
                str(draws_path),
                "--out",
                str(out),
            ],
            capsys,
        )
        assert code == 0
        report = json.loads((out / "effects.json").read_text())
        assert report["self_checks"]["pass"] is True
        for name in ("delta_de", "delta_ie", "delta"):
            assert abs(report["summary"][name]["mean"]) < 1e-10
        assert report["rho_policy"] == "rho=0.5"
        assert report["u_reference"] == 0
        rows = (out / "decompositions.csv").read_text().splitlines()
        assert rows[0] == "draw,de,ie,te,de_r,ie_r,delta_de,delta_ie,delta"
        assert len(rows) == 3

    def test_rho_flag_variants(self, tmp_path, capsys):
        write_cohort(
            tmp_path,
            [
                ["s1", "1", "0", "low", "4.0", "1"],
                ["s2", "0", "1", "high", "6.0", "0"],
            ],
            [],
        )
        path, _ = base_config(tmp_path, mc_draws=40)
        draws_path = tmp_path / "draws.jsonl"
        point_mass_draws_file(draws_path, copies=2)
        rho_file = tmp_path / "rho.json"
        rho_file.write_text(json.dumps({"risk=low": 0.2, "risk=high": 0.9}))
        for flag, expected in (
            ("min", "min"),
            ("0.25", "rho=0.25"),
            (str(rho_file), "per-stratum"),
        ):
            out = tmp_path / f"eff_{expected.replace('=', '_')}"
            code, _, _ = run_cli(
                [
                    "effects",
                    "--config",
                    str(path),
                    "--draws",
                    str(draws_path),
                    "--out",
                    str(out),
                    "--rho",
                    flag,
                ],
                capsys,
            )
            assert code == 0
            assert json.loads((out / "effects.json").read_text())["rho_policy"] == expected
        out = tmp_path / "eff_grid"
        code, _, _ = run_cli(
            [
                "effects",
                "--config",
                str(path),
                "--draws",
                str(draws_path),
                "--out",
                str(out),
                "--rho",
                "grid",
            ],
            capsys,
        )
        assert code == 0
        report = json.loads((out / "effects.json").read_text())
        assert len(report["grid"]) == 11
        assert report["grid"][0]["rho"] == 0.0
        assert report["grid"][-1]["rho"] == 1.0

    def test_incomplete_stratum_rho_file_rejected(self, tmp_path, capsys):
        write_cohort(
            tmp_path,
            [
                ["s1", "1", "0", "low", "4.0", "1"],
                ["s2", "0", "1", "high", "6.0", "0"],
            ],
            [],
        )
        path, _ = base_config(tmp_path)
        draws_path = tmp_path / "draws.jsonl"
        point_mass_draws_file(draws_path, copies=2)
        rho_file = tmp_path / "rho.json"
        rho_file.write_text(json.dumps({"risk=low": 0.2}))
        code, _, err = run_cli(
            [
                "effects",
                "--config",
                str(path),
                "--draws",
                str(draws_path),
                "--out",
                str(tmp_path / "eff"),
                "--rho",
                str(rho_file),
            ],
            capsys,
        )
        assert code == 2
        assert "risk=high" in json.loads(err)["message"]


@pytest.mark.slow
class TestPipeline:
    def test_round_trip_reproducible(self, tmp_path, capsys):
        path, cfg = base_config(
            tmp_path,
            truth=TRUTH,
            simulate={"n_subjects": 60, "visit_times": [0.0, 1.0, 3.0], "admin_time": 10.0},
            mcmc={"chains": 2, "burn_in": 40, "samples": 20},
            mc_draws=60,
        )
        sim = tmp_path / "sim"
        code, _, _ = run_cli(["simulate", "--config", str(path), "--out", str(sim)], capsys)
        assert code == 0
        for name in ("subjects.csv", "longitudinal.csv", "truth.jsonl", "oracle_summary.json"):
            assert (sim / name).exists()
        truth_lines = (sim / "truth.jsonl").read_text().splitlines()
        assert json.loads(truth_lines[0])["schema_version"] == 1
        assert len(truth_lines) == 61

        cfg["subject_file"] = str(sim / "subjects.csv")
        cfg["longitudinal_file"] = str(sim / "longitudinal.csv")
        path.write_text(json.dumps(cfg))

        results = []
        for tag in ("a", "b"):
            fit = tmp_path / f"fit_{tag}"
            eff = tmp_path / f"eff_{tag}"
            code, _, _ = run_cli(["fit", "--config", str(path), "--out", str(fit)], capsys)
            assert code == 0
            code, _, _ = run_cli(
                [
                    "effects",
                    "--config",
                    str(path),
                    "--draws",
                    str(fit / "draws.jsonl"),
                    "--out",
                    str(eff),
                ],
                capsys,
            )
            assert code == 0
            results.append((fit, eff))

        (fit_a, eff_a), (fit_b, eff_b) = results
        for name in ("draws.jsonl", "rhat.json", "pointwise_loglik.csv", "fit_report.json", "manifest.json"):
            assert (fit_a / name).read_bytes() == (fit_b / name).read_bytes()
        for name in ("effects.json", "decompositions.csv", "manifest.json"):
            assert (eff_a / name).read_bytes() == (eff_b / name).read_bytes()

        report = json.loads((eff_a / "effects.json").read_text())
        assert report["self_checks"]["pass"] is True
        manifest = json.loads((fit_a / "manifest.json").read_text())
        assert manifest["config_sha256"] == cli.load_config(str(path)).sha256
        assert manifest["seed"] == 11
        assert set(manifest["versions"]) == {"rmstmediate", "python", "numpy"}

    def test_fit_nonconvergence_exit_4_still_writes(self, tmp_path, capsys):
        path, cfg = base_config(
            tmp_path,
            truth=TRUTH,
            simulate={"n_subjects": 30, "visit_times": [0.0, 1.0], "admin_time": 10.0},
            mcmc={"chains": 2, "burn_in": 20, "samples": 15},
            rhat_limit=1.0000001,
        )
        sim = tmp_path / "sim"
        assert cli.main(["simulate", "--config", str(path), "--out", str(sim)]) == 0
        capsys.readouterr()
        cfg["subject_file"] = str(sim / "subjects.csv")
        cfg["longitudinal_file"] = str(sim / "longitudinal.csv")
        path.write_text(json.dumps(cfg))
        fit = tmp_path / "fit"
        code, _, err = run_cli(["fit", "--config", str(path), "--out", str(fit)], capsys)
        assert code == 4
        assert json.loads(err)["error"] == "NoConvergence"
        for name in ("draws.jsonl", "rhat.json", "fit_report.json", "manifest.json"):
            assert (fit / name).exists()

    def test_console_entry_point(self, tmp_path):
        write_cohort(
            tmp_path,
            [
                ["t1", "1", "0", "low", "2.0", "1"],
                ["c1", "0", "0", "low", "1.0", "1"],
            ],
            [],
        )
        path, _ = base_config(tmp_path)
        out = tmp_path / "km"
        proc = subprocess.run(
            [sys.executable, "-m", "rmstmediate.cli", "km", "--config", str(path), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "km.json").exists()
        bad = subprocess.run(
            [sys.executable, "-m", "rmstmediate.cli", "km", "--config", str(tmp_path / "nope.json"), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert bad.returncode == 2
        assert json.loads(bad.stderr)["exit_code"] == 2
