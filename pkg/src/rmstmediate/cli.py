"""Cohort ingestion, run configuration and the command-line workflow.

File formats: UTF-8 CSV with a fixed header per table (subject rows
`subject_id,arm,u_level,<covariates...>,exit_time,event`, longitudinal
rows `subject_id,t,m_obs_raw`), JSON-lines for posterior draws and the
simulation truth sidecar (first line is a header record carrying
`schema_version`), and plain JSON for configs and reports.  All times
are years as decimals.

Every subcommand writes a manifest (config hash, seed, versions) next
to its outputs; given the same platform, config and seed, reruns are
byte-identical.  Exit codes: 0 success, 2 validation failure, 3
infeasibility, 4 non-convergence; failures also print a one-line JSON
error envelope on stderr.  The environment variable MEDIATE_THREADS
caps worker-pool sizes (computation here is single-threaded, so it is
validated and exported as an upper bound for the numeric backends).
"""

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .confounder import ConfounderParams
from .effects import (
    COMPONENTS,
    ModelParams,
    ReferenceLevels,
    StratumWeights,
    relaxed_bounds,
)
from .errors import (
    AllDrawsDiscarded,
    InvalidInput,
    MediateError,
    MonotonicityInfeasible,
    NoConvergence,
    OrphanRecord,
    SchemaViolation,
)
from .inference import (
    DEFAULT_SETTINGS,
    ConfounderDraws,
    Dataset,
    FitState,
    ParameterLayout,
    PosteriorDraws,
    check_monotonicity,
    confounder_names,
    default_template,
    gelman_rubin,
    pointwise_loglik_export,
    posterior_effects,
    run_confounder_mcmc,
    run_mcmc,
)
from .mediator import LongitudinalRecord, MediatorParams, RandomEffectsLaw
from .oracle import (
    SubjectRecord,
    emit_observational,
    oracle_effects,
    scm_config_from_rho,
    simulate_truth,
)
from .survival import (
    CURRENT_CHANGE,
    THREE_YEAR_LEGACY,
    PiecewiseHazard,
    SurvivalParams,
    km_restricted_auc,
)

SCHEMA_VERSION = 1
_MISSING_TOKENS = ("", "NA")


# ---------------------------------------------------------------------------
# covariate schema


@dataclass(frozen=True)
class CovariateSchema:
    """Named categorical covariates with dummy coding.

    Levels are ordered with the reference level first; each covariate
    contributes len(levels)-1 indicator columns to the design, in the
    declared order.
    """

    names: tuple
    levels: dict  # name -> tuple of level labels, reference first

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise SchemaViolation("covariate names must be unique")
        for name in self.names:
            lv = tuple(self.levels[name])
            if not lv or len(set(lv)) != len(lv):
                raise SchemaViolation(f"covariate {name!r} needs distinct levels")
            if not all(isinstance(x, str) and x for x in lv):
                raise SchemaViolation(f"covariate {name!r} levels must be nonempty strings")

    @property
    def width(self):
        return sum(len(self.levels[n]) - 1 for n in self.names)

    def encode(self, values, where=""):
        out = []
        for name in self.names:
            label = values.get(name)
            lv = self.levels[name]
            if label not in lv:
                raise SchemaViolation(f"{where}column {name!r}: unknown level {label!r}")
            out.extend(1.0 if label == cand else 0.0 for cand in lv[1:])
        return tuple(out)

    def decode(self, w):
        w = tuple(float(v) for v in w)
        if len(w) != self.width:
            raise InvalidInput("design vector width does not match the schema")
        out = {}
        pos = 0
        for name in self.names:
            lv = self.levels[name]
            block = w[pos : pos + len(lv) - 1]
            pos += len(lv) - 1
            hot = [k for k, v in enumerate(block) if v == 1.0]
            if any(v not in (0.0, 1.0) for v in block) or len(hot) > 1:
                raise InvalidInput(f"design block for {name!r} is not a dummy code")
            out[name] = lv[0] if not hot else lv[1 + hot[0]]
        return out

    def stratum_label(self, w):
        if not self.names:
            return "(none)"
        vals = self.decode(w)
        return ",".join(f"{n}={vals[n]}" for n in self.names)

    def pattern_from_label(self, label):
        if label == "(none)" and not self.names:
            return ()
        values = {}
        for part in label.split(","):
            if "=" not in part:
                raise SchemaViolation(f"malformed stratum label {label!r}")
            name, _, lv = part.partition("=")
            values[name] = lv
        missing = set(self.names) - set(values)
        if missing or set(values) - set(self.names):
            raise SchemaViolation(f"stratum label {label!r} does not match the schema")
        return self.encode(values, where=f"label {label!r}: ")


# ---------------------------------------------------------------------------
# run configuration


_TOP_REQUIRED = {
    "seed",
    "t_max",
    "cut_points",
    "functional_kind",
    "standardization",
    "covariates",
    "subject_file",
    "longitudinal_file",
    "rho_policy",
    "mc_draws",
    "mcmc",
}
_TOP_OPTIONAL = {"u_reference", "rhat_limit", "simulate", "truth"}
_SIMULATE_KEYS = {"n_subjects", "visit_times", "admin_time", "censor_rate", "dropout"}
_TRUTH_KEYS = {"mediator", "survival", "confounder", "re_covariance", "strata", "rho"}
_MEDIATOR_KEYS = {"beta0", "beta1", "beta2", "alpha", "psi", "sigma"}
_SURVIVAL_KEYS = {
    "baseline_control_levels",
    "baseline_treated_levels",
    "gamma1",
    "gamma2",
    "gamma3",
    "zeta",
    "xi",
}
_CONFOUNDER_KEYS = {"phi0", "phi1", "phi2"}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; paths are resolved absolute."""

    seed: int
    t_max: float
    cut_points: tuple
    functional_kind: str
    center: float
    scale: float
    schema: CovariateSchema
    subject_file: str
    longitudinal_file: str
    rho_policy: object
    mc_draws: int
    mcmc: dict
    u_reference: int
    rhat_limit: object
    simulate: object
    truth: object  # (ModelParams, StratumWeights, rho) or None
    sha256: str


def _expect_keys(obj, required, optional, what):
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{what} must be a JSON object")
    unknown = sorted(set(obj) - required - optional)
    if unknown:
        raise SchemaViolation(f"{what}: unknown keys {unknown}")
    missing = sorted(required - set(obj))
    if missing:
        raise SchemaViolation(f"{what}: missing keys {missing}")


def _as_vector(value, what):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as err:
        raise SchemaViolation(f"{what} must be numeric: {err}") from None
    if arr.ndim != 1:
        raise SchemaViolation(f"{what} must be a flat list")
    return arr


def _as_matrix(value, what):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as err:
        raise SchemaViolation(f"{what} must be numeric: {err}") from None
    if arr.ndim != 2:
        raise SchemaViolation(f"{what} must be a list of rows")
    return arr


def _validate_rho_value(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(f"{what} must be a number in [0, 1]")
    if not 0.0 <= float(v) <= 1.0:
        raise SchemaViolation(f"{what} must lie in [0, 1]")
    return float(v)


def _schema_from_config(entries):
    if not isinstance(entries, list):
        raise SchemaViolation("covariates must be a list")
    names = []
    levels = {}
    for entry in entries:
        _expect_keys(entry, {"name", "levels"}, {"reference"}, "covariate entry")
        name = entry["name"]
        lv = list(entry["levels"])
        ref = entry.get("reference", lv[0] if lv else None)
        if ref not in lv:
            raise SchemaViolation(f"covariate {name!r}: reference {ref!r} not among levels")
        lv.remove(ref)
        names.append(name)
        levels[name] = tuple([ref] + lv)
    return CovariateSchema(names=tuple(names), levels=levels)


def _truth_from_config(section, schema, cut_points, functional_kind, t_max):
    _expect_keys(section, _TRUTH_KEYS, set(), "truth")
    med_cfg = section["mediator"]
    _expect_keys(med_cfg, _MEDIATOR_KEYS, set(), "truth.mediator")
    med = MediatorParams(
        beta0=float(med_cfg["beta0"]),
        beta1=_as_vector(med_cfg["beta1"], "truth.mediator.beta1"),
        beta2=_as_vector(med_cfg["beta2"], "truth.mediator.beta2"),
        alpha=_as_vector(med_cfg["alpha"], "truth.mediator.alpha"),
        psi=_as_matrix(med_cfg["psi"], "truth.mediator.psi"),
        sigma=float(med_cfg["sigma"]),
    )
    if len(med.beta2) != schema.width:
        raise SchemaViolation("truth.mediator.beta2 width must match the covariate schema")
    surv_cfg = section["survival"]
    _expect_keys(surv_cfg, _SURVIVAL_KEYS, set(), "truth.survival")
    cuts = np.asarray(cut_points, dtype=float)
    surv = SurvivalParams(
        baseline_control=PiecewiseHazard(
            cuts, _as_vector(surv_cfg["baseline_control_levels"], "baseline_control_levels")
        ),
        baseline_treated=PiecewiseHazard(
            cuts, _as_vector(surv_cfg["baseline_treated_levels"], "baseline_treated_levels")
        ),
        gamma1=_as_vector(surv_cfg["gamma1"], "truth.survival.gamma1"),
        gamma2=_as_vector(surv_cfg["gamma2"], "truth.survival.gamma2"),
        gamma3=_as_vector(surv_cfg["gamma3"], "truth.survival.gamma3"),
        zeta=_as_vector(surv_cfg["zeta"], "truth.survival.zeta"),
        xi=float(surv_cfg["xi"]),
        functional_kind=functional_kind,
        t_max=t_max,
    )
    if len(surv.gamma3) != schema.width:
        raise SchemaViolation("truth.survival.gamma3 width must match the covariate schema")
    conf_cfg = section["confounder"]
    _expect_keys(conf_cfg, _CONFOUNDER_KEYS, set(), "truth.confounder")
    conf = ConfounderParams(
        phi0=_as_vector(conf_cfg["phi0"], "truth.confounder.phi0"),
        phi1=_as_vector(conf_cfg["phi1"], "truth.confounder.phi1"),
        phi2=_as_matrix(conf_cfg["phi2"], "truth.confounder.phi2"),
    )
    if conf.phi2.shape[1] != schema.width:
        raise SchemaViolation("truth.confounder.phi2 width must match the covariate schema")
    law = RandomEffectsLaw(covariance=_as_matrix(section["re_covariance"], "truth.re_covariance"))
    strata = []
    if not isinstance(section["strata"], list) or not section["strata"]:
        raise SchemaViolation("truth.strata must be a nonempty list")
    for entry in section["strata"]:
        _expect_keys(entry, {"covariates", "mass"}, set(), "truth.strata entry")
        pattern = schema.encode(entry["covariates"], where="truth.strata: ")
        strata.append((pattern, float(entry["mass"])))
    weights = StratumWeights(tuple(strata))
    rho = _validate_rho_value(section["rho"], "truth.rho")
    params = ModelParams(mediator=med, survival=surv, confounder=conf, re_law=law)
    return params, weights, rho


def load_config(path):
    """Parse and validate a JSON run configuration."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise SchemaViolation(f"cannot read config: {err}") from None
    sha = hashlib.sha256(blob).hexdigest()
    try:
        doc = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise SchemaViolation(f"config is not valid JSON: {err}") from None
    _expect_keys(doc, _TOP_REQUIRED, _TOP_OPTIONAL, "config")

    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise SchemaViolation("seed must be a nonnegative integer")
    t_max = float(doc["t_max"])
    if not (np.isfinite(t_max) and t_max > 0):
        raise SchemaViolation("t_max must be positive")
    cuts = _as_vector(doc["cut_points"], "cut_points")
    if len(cuts) == 0 or cuts[0] != 0.0 or np.any(np.diff(cuts) <= 0):
        raise SchemaViolation("cut_points must start at 0 and increase")
    kind = doc["functional_kind"]
    if kind not in (THREE_YEAR_LEGACY, CURRENT_CHANGE):
        raise SchemaViolation(f"unknown functional_kind {kind!r}")
    std = doc["standardization"]
    _expect_keys(std, {"center", "scale"}, set(), "standardization")
    center = float(std["center"])
    scale = float(std["scale"])
    if not (np.isfinite(scale) and scale > 0):
        raise SchemaViolation("standardization.scale must be positive")
    schema = _schema_from_config(doc["covariates"])

    policy = doc["rho_policy"]
    if isinstance(policy, str):
        if policy not in ("min", "max"):
            raise SchemaViolation("rho_policy string must be 'min' or 'max'")
    elif isinstance(policy, dict):
        policy = {k: _validate_rho_value(v, f"rho_policy[{k!r}]") for k, v in policy.items()}
    else:
        policy = _validate_rho_value(policy, "rho_policy")

    mc_draws = doc["mc_draws"]
    if isinstance(mc_draws, bool) or not isinstance(mc_draws, int) or mc_draws < 1:
        raise SchemaViolation("mc_draws must be a positive integer")
    mcmc = doc["mcmc"]
    if not isinstance(mcmc, dict):
        raise SchemaViolation("mcmc must be an object")
    allowed = set(DEFAULT_SETTINGS) - {"seed"}
    unknown = sorted(set(mcmc) - allowed)
    if unknown:
        hint = " (the sampler seed comes from the top-level seed)" if "seed" in unknown else ""
        raise SchemaViolation(f"mcmc: unknown keys {unknown}{hint}")

    u_ref = doc.get("u_reference", 0)
    if u_ref not in (0, 1, 2):
        raise SchemaViolation("u_reference must be 0, 1 or 2")
    rhat_limit = doc.get("rhat_limit")
    if rhat_limit is not None:
        rhat_limit = float(rhat_limit)
        if not (np.isfinite(rhat_limit) and rhat_limit > 0):
            raise SchemaViolation("rhat_limit must be positive")

    sim = doc.get("simulate")
    if sim is not None:
        _expect_keys(sim, {"n_subjects"}, _SIMULATE_KEYS - {"n_subjects"}, "simulate")
        n_subjects = sim["n_subjects"]
        if isinstance(n_subjects, bool) or not isinstance(n_subjects, int) or n_subjects < 1:
            raise SchemaViolation("simulate.n_subjects must be a positive integer")
        sim = {
            "n_subjects": n_subjects,
            "visit_times": tuple(float(v) for v in sim.get("visit_times", ())),
            "admin_time": None if sim.get("admin_time") is None else float(sim["admin_time"]),
            "censor_rate": None if sim.get("censor_rate") is None else float(sim["censor_rate"]),
            "dropout": sim.get("dropout", 0.0),
        }

    truth = doc.get("truth")
    if truth is not None:
        truth = _truth_from_config(truth, schema, cuts, kind, t_max)

    base = os.path.dirname(os.path.abspath(path))

    def _resolve(p):
        if not isinstance(p, str) or not p:
            raise SchemaViolation("file paths must be nonempty strings")
        return p if os.path.isabs(p) else os.path.join(base, p)

    return RunConfig(
        seed=seed,
        t_max=t_max,
        cut_points=tuple(float(c) for c in cuts),
        functional_kind=kind,
        center=center,
        scale=scale,
        schema=schema,
        subject_file=_resolve(doc["subject_file"]),
        longitudinal_file=_resolve(doc["longitudinal_file"]),
        rho_policy=policy,
        mc_draws=mc_draws,
        mcmc=dict(mcmc),
        u_reference=u_ref,
        rhat_limit=rhat_limit,
        simulate=sim,
        truth=truth,
        sha256=sha,
    )


# ---------------------------------------------------------------------------
# ingestion


@dataclass
class IngestResult:
    subjects: list
    records: list
    weights: StratumWeights
    raw_m: list  # raw mediator values aligned with records
    n_excluded: int
    warnings: list


def _read_rows(path, expected_header):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as err:
        raise SchemaViolation(f"cannot read {path}: {err}") from None
    if not rows or rows[0] != expected_header:
        raise SchemaViolation(
            f"{os.path.basename(path)}: expected header {','.join(expected_header)}"
        )
    return rows[1:]


def _parse_cell(row_no, column, raw, kind):
    try:
        if kind == "float":
            return float(raw)
        if kind == "binary":
            if raw not in ("0", "1"):
                raise ValueError("must be 0 or 1")
            return int(raw)
        if raw not in ("0", "1", "2"):
            raise ValueError("must be 0, 1 or 2")
        return int(raw)
    except ValueError as err:
        raise SchemaViolation(f"row {row_no}, column {column!r}: {err}") from None


def ingest(config):
    """Read, validate and standardize the configured cohort files.

    Subjects with missing baseline covariates are excluded (counted in
    the result); unknown categories and malformed cells are schema
    violations naming the row and column.  Per-subject visit times are
    sorted if out of order, with a warning.
    """
    schema = config.schema
    header = ["subject_id", "arm", "u_level", *schema.names, "exit_time", "event"]
    warnings = []
    subjects = []
    seen = set()
    excluded = set()
    for row_no, row in enumerate(_read_rows(config.subject_file, header), start=2):
        if len(row) != len(header):
            raise SchemaViolation(f"row {row_no}: expected {len(header)} columns, got {len(row)}")
        sid = row[0]
        if not sid:
            raise SchemaViolation(f"row {row_no}: empty subject_id")
        if sid in seen or sid in excluded:
            raise SchemaViolation(f"row {row_no}: duplicate subject_id {sid!r}")
        cov_cells = row[3 : 3 + len(schema.names)]
        if any(cell.strip() in _MISSING_TOKENS for cell in cov_cells):
            excluded.add(sid)
            continue
        arm = _parse_cell(row_no, "arm", row[1], "binary")
        u_level = _parse_cell(row_no, "u_level", row[2], "ternary")
        exit_time = _parse_cell(row_no, "exit_time", row[-2], "float")
        if not (np.isfinite(exit_time) and exit_time > 0):
            raise SchemaViolation(f"row {row_no}, column 'exit_time': must be positive")
        event = _parse_cell(row_no, "event", row[-1], "binary")
        labels = dict(zip(schema.names, cov_cells))
        w = schema.encode(labels, where=f"row {row_no}, ")
        seen.add(sid)
        subjects.append(
            SubjectRecord(
                subject_id=sid,
                arm=arm,
                u_level=u_level,
                w=w,
                exit_time=exit_time,
                event=bool(event),
                covariates=labels,
            )
        )
    if not subjects:
        raise SchemaViolation("no usable subjects after exclusions")

    per_subject = {s.subject_id: [] for s in subjects}
    n_dropped = 0
    long_header = ["subject_id", "t", "m_obs_raw"]
    for row_no, row in enumerate(_read_rows(config.longitudinal_file, long_header), start=2):
        if len(row) != 3:
            raise SchemaViolation(f"row {row_no}: expected 3 columns, got {len(row)}")
        sid = row[0]
        if sid in excluded:
            n_dropped += 1
            continue
        if sid not in per_subject:
            raise OrphanRecord(f"row {row_no}: longitudinal record for unknown subject {sid!r}")
        t = _parse_cell(row_no, "t", row[1], "float")
        if not (np.isfinite(t) and t >= 0.0):
            raise SchemaViolation(f"row {row_no}, column 't': must be nonnegative")
        raw = _parse_cell(row_no, "m_obs_raw", row[2], "float")
        if not np.isfinite(raw):
            raise SchemaViolation(f"row {row_no}, column 'm_obs_raw': must be finite")
        per_subject[sid].append((t, raw))
    if n_dropped:
        warnings.append(f"dropped {n_dropped} longitudinal records of excluded subjects")

    records = []
    raw_m = []
    for sub in subjects:
        entries = per_subject[sub.subject_id]
        times = [t for t, _ in entries]
        if any(b < a for a, b in zip(times, times[1:])):
            entries = sorted(entries, key=lambda e: e[0])
            warnings.append(f"visit times for subject {sub.subject_id!r} were sorted")
        for t, raw in entries:
            records.append(
                LongitudinalRecord(sub.subject_id, t, (raw - config.center) / config.scale)
            )
            raw_m.append(raw)

    n = len(subjects)
    patterns = sorted(set(s.w for s in subjects))
    counts = {p: 0 for p in patterns}
    for s in subjects:
        counts[s.w] += 1
    weights = StratumWeights(tuple((p, counts[p] / n) for p in patterns))
    return IngestResult(
        subjects=subjects,
        records=records,
        weights=weights,
        raw_m=raw_m,
        n_excluded=len(excluded),
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# artifact writers and readers


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_subjects_csv(path, subjects, schema):
    header = ["subject_id", "arm", "u_level", *schema.names, "exit_time", "event"]
    rows = []
    for s in subjects:
        labels = s.covariates if s.covariates else schema.decode(s.w)
        rows.append(
            [
                s.subject_id,
                str(s.arm),
                str(s.u_level),
                *[labels[n] for n in schema.names],
                _fmt(s.exit_time),
                "1" if s.event else "0",
            ]
        )
    _write_csv(path, header, rows)


def write_longitudinal_csv(path, records, raw_values):
    rows = [
        [rec.subject_id, _fmt(rec.t), _fmt(raw)] for rec, raw in zip(records, raw_values)
    ]
    _write_csv(path, ["subject_id", "t", "m_obs_raw"], rows)


def _json_line(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def write_truth_jsonl(path, truths, schema):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_json_line({"schema_version": SCHEMA_VERSION, "kind": "truth"}))
        for t in truths:
            fh.write(
                _json_line(
                    {
                        "subject_id": t.subject_id,
                        "covariates": schema.decode(t.w),
                        "arm": int(t.arm),
                        "u_astar": int(t.u_astar),
                        "u_a": int(t.u_a),
                        "t_arm1_m1": float(t.t_arm1_m1),
                        "t_arm1_m0": float(t.t_arm1_m0),
                        "t_arm0_m0": float(t.t_arm0_m0),
                        "t_arm0_m1": float(t.t_arm0_m1),
                        "raw_treated": float(t.raw_treated),
                        "raw_control": float(t.raw_control),
                    }
                )
            )


def write_draws_jsonl(path, draws, conf_draws):
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "posterior-draws",
        "layout_version": draws.version,
        "joint_names": list(draws.names),
        "confounder_names": list(conf_draws.names),
        "n_w": conf_draws.n_w,
        "cut_points": [float(c) for c in draws.layout.cuts],
        "functional_kind": draws.layout.functional_kind,
        "t_max": float(draws.layout.t_max),
        "seed": draws.seed,
        "burn_in": draws.burn_in,
        "thin": draws.thin,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_json_line(header))
        for c, chain in enumerate(draws.chains):
            for row in chain:
                fh.write(_json_line({"model": "joint", "chain": c, "values": row.tolist()}))
        for c, chain in enumerate(conf_draws.chains):
            for row in chain:
                fh.write(_json_line({"model": "confounder", "chain": c, "values": row.tolist()}))


def read_draws_jsonl(path):
    """Load a draws file back into posterior-draw containers."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise SchemaViolation(f"cannot read draws: {err}") from None
    if not lines:
        raise SchemaViolation("draws file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise SchemaViolation(f"draws header is not valid JSON: {err}") from None
    if header.get("kind") != "posterior-draws":
        raise SchemaViolation("not a posterior-draws file")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaViolation(f"unsupported draws schema_version {header.get('schema_version')}")
    template = default_template(
        n_w=int(header["n_w"]),
        cuts=header["cut_points"],
        functional_kind=header["functional_kind"],
        t_max=float(header["t_max"]),
    )
    layout = ParameterLayout(template)
    if list(layout.names) != list(header["joint_names"]):
        raise SchemaViolation("draws file parameter names do not match this layout version")
    if list(confounder_names(int(header["n_w"]))) != list(header["confounder_names"]):
        raise SchemaViolation("draws file confounder names do not match")
    joint_chains = {}
    conf_chains = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as err:
            raise SchemaViolation(f"draws line {line_no}: invalid JSON: {err}") from None
        target = joint_chains if row.get("model") == "joint" else conf_chains
        if row.get("model") not in ("joint", "confounder"):
            raise SchemaViolation(f"draws line {line_no}: unknown model {row.get('model')!r}")
        target.setdefault(int(row["chain"]), []).append(
            np.asarray(row["values"], dtype=float)
        )
    if not joint_chains or not conf_chains:
        raise SchemaViolation("draws file must contain joint and confounder rows")

    def _stack(groups, dim, what):
        chains = []
        for c in sorted(groups):
            block = np.stack(groups[c])
            if block.shape[1] != dim:
                raise SchemaViolation(f"{what} chain {c}: wrong row width")
            chains.append(block)
        return tuple(chains)

    draws = PosteriorDraws(
        names=layout.names,
        chains=_stack(joint_chains, layout.dim, "joint"),
        re_chains=None,
        layout=layout,
        burn_in=int(header["burn_in"]),
        thin=int(header["thin"]),
        seed=int(header["seed"]),
        acceptance=(),
        adaptation_failures=(),
    )
    conf = ConfounderDraws(
        names=tuple(header["confounder_names"]),
        chains=_stack(conf_chains, len(header["confounder_names"]), "confounder"),
        n_w=int(header["n_w"]),
        seed=int(header["seed"]),
    )
    return draws, conf


def _sanitize(value):
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_sanitize(obj), sort_keys=True, indent=2) + "\n")


def write_pointwise_csv(path, table, ids):
    header = ["draw", *ids]
    rows = [[str(k), *[_fmt(v) for v in row]] for k, row in enumerate(table)]
    _write_csv(path, header, rows)


def write_manifest(outdir, command, config, outputs):
    write_json(
        os.path.join(outdir, "manifest.json"),
        {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "config_sha256": config.sha256,
            "seed": config.seed,
            "versions": {
                "rmstmediate": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "outputs": sorted(outputs),
        },
    )


# ---------------------------------------------------------------------------
# subcommands


def _ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _summary_block(values):
    arr = np.asarray(values, dtype=float)
    lo, hi = np.quantile(arr, [0.025, 0.975])
    return {"mean": float(arr.mean()), "q2.5": float(lo), "q97.5": float(hi)}


def _cmd_simulate(config, outdir):
    if config.truth is None or config.simulate is None:
        raise SchemaViolation("simulate requires 'truth' and 'simulate' config sections")
    params, weights, rho = config.truth
    sim = config.simulate
    scm = scm_config_from_rho(
        params,
        weights,
        rho,
        sim["n_subjects"],
        visit_times=sim["visit_times"],
        admin_time=sim["admin_time"],
        censor_rate=sim["censor_rate"],
        dropout=sim["dropout"],
    )
    truths = simulate_truth(scm, seed=config.seed)
    subjects, records = emit_observational(scm, truths, seed=config.seed + 1)
    raw = [config.center + config.scale * rec.m_obs for rec in records]
    eff = oracle_effects(truths)
    write_subjects_csv(os.path.join(outdir, "subjects.csv"), subjects, config.schema)
    write_longitudinal_csv(os.path.join(outdir, "longitudinal.csv"), records, raw)
    write_truth_jsonl(os.path.join(outdir, "truth.jsonl"), truths, config.schema)
    write_json(
        os.path.join(outdir, "oracle_summary.json"),
        {
            "schema_version": SCHEMA_VERSION,
            "n": eff.n,
            "de": eff.de,
            "ie": eff.ie,
            "te": eff.te,
            "de_se": eff.de_se,
            "ie_se": eff.ie_se,
            "te_se": eff.te_se,
            "rho": rho,
        },
    )
    outputs = ["subjects.csv", "longitudinal.csv", "truth.jsonl", "oracle_summary.json"]
    write_manifest(outdir, "simulate", config, outputs)
    print(f"wrote {len(outputs) + 1} artifacts to {outdir}")
    return 0


def _rhat_block(report):
    return {
        "values": {k: _sanitize(v) for k, v in sorted(report.values.items())},
        "degenerate": sorted(report.degenerate),
        "max": _sanitize(report.max()),
    }


def _initial_state(data, config):
    """Deterministic data-derived starting point for the joint sampler.

    The mediator mean is linear in its fixed effects, so a ridge
    least-squares fit of the observed trajectory values on the full
    fixed-effect design starts every chain near high posterior mass;
    baseline hazard levels start at per-arm occurrence/exposure rates.
    Survival regression coefficients and the random-effects law keep
    their neutral template values.
    """
    template = default_template(
        n_w=data.n_w,
        cuts=config.cut_points,
        functional_kind=config.functional_kind,
        t_max=config.t_max,
    )
    med = template.mediator
    if data.n_rec:
        xs = data.x[data.rec_subj]
        ws = data.w[data.rec_subj]
        inter = (data.bpop[:, :, None] * xs[:, None, :]).reshape(data.n_rec, -1)
        design = np.concatenate(
            [np.ones((data.n_rec, 1)), xs, ws, data.bpop, inter], axis=1
        )
        gram = design.T @ design + 1e-6 * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ data.rec_m)
        resid = data.rec_m - design @ coef
        n_b = data.bpop.shape[1]
        n_x = xs.shape[1]
        split = np.cumsum([1, n_x, data.n_w, n_b])
        med = MediatorParams(
            beta0=float(coef[0]),
            beta1=coef[split[0] : split[1]],
            beta2=coef[split[1] : split[2]],
            alpha=coef[split[2] : split[3]],
            psi=coef[split[3] :].reshape(n_b, n_x),
            sigma=max(float(np.std(resid)), 0.05),
        )
    cuts = np.asarray(config.cut_points, dtype=float)
    uppers = np.append(cuts[1:], np.inf)
    baselines = []
    for a in (0, 1):
        sel = data.arm == a
        if not np.any(sel):
            baselines.append(template.survival.baseline_control)
            continue
        exits = data.t_exit[sel]
        exposure = np.clip(
            np.minimum(exits[:, None], uppers[None, :]) - cuts[None, :], 0.0, None
        ).sum(axis=0)
        piece = np.searchsorted(cuts, exits, side="right") - 1
        events = np.bincount(piece[data.event[sel]], minlength=cuts.size).astype(float)
        levels = np.maximum((events + 0.5) / (exposure + 1.0), 1e-3)
        baselines.append(PiecewiseHazard(cuts, levels))
    surv = replace(
        template.survival,
        baseline_control=baselines[0],
        baseline_treated=baselines[1],
    )
    return FitState(
        mediator=med, survival=surv, re_law=template.re_law, r=template.r
    )


def _cmd_fit(config, outdir):
    ing = ingest(config)
    data = Dataset(ing.subjects, ing.records)
    if data.n_w != config.schema.width:
        raise SchemaViolation("data width does not match the covariate schema")
    settings = dict(config.mcmc)
    settings["seed"] = config.seed
    settings["store_re"] = True
    draws = run_mcmc(data, settings=settings, init=_initial_state(data, config))
    conf = run_confounder_mcmc(data, settings=settings)
    rhat_joint = gelman_rubin(draws)
    rhat_conf = gelman_rubin(conf)
    table = pointwise_loglik_export(draws, data)
    write_draws_jsonl(os.path.join(outdir, "draws.jsonl"), draws, conf)
    write_json(
        os.path.join(outdir, "rhat.json"),
        {
            "schema_version": SCHEMA_VERSION,
            "joint": _rhat_block(rhat_joint),
            "confounder": _rhat_block(rhat_conf),
        },
    )
    write_pointwise_csv(os.path.join(outdir, "pointwise_loglik.csv"), table, data.ids)
    write_json(
        os.path.join(outdir, "fit_report.json"),
        {
            "schema_version": SCHEMA_VERSION,
            "n_subjects": data.n,
            "n_records": data.n_rec,
            "n_excluded_missing": ing.n_excluded,
            "warnings": ing.warnings,
            "adaptation_failures": list(draws.adaptation_failures),
        },
    )
    outputs = ["draws.jsonl", "rhat.json", "pointwise_loglik.csv", "fit_report.json"]
    write_manifest(outdir, "fit", config, outputs)
    print(f"wrote {len(outputs) + 1} artifacts to {outdir}")
    if config.rhat_limit is not None:
        worst = max(rhat_joint.max(), rhat_conf.max())
        if worst > config.rhat_limit or draws.adaptation_failures:
            raise NoConvergence(
                f"split-chain diagnostic {worst:.4f} exceeds limit {config.rhat_limit}",
            )
    return 0


def _policy_from_spec(value, config, weights):
    """Normalize a --rho flag (or the config policy) for decompose."""
    schema = config.schema
    if value is None:
        policy = config.rho_policy
    elif value in ("min", "max", "grid"):
        policy = value
    elif value.endswith(".json"):
        try:
            with open(value, "r", encoding="utf-8") as fh:
                policy = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise SchemaViolation(f"cannot read rho file: {err}") from None
        if not isinstance(policy, dict):
            raise SchemaViolation("per-stratum rho file must be a JSON object")
        policy = {k: _validate_rho_value(v, f"rho[{k!r}]") for k, v in policy.items()}
    else:
        try:
            policy = float(value)
        except ValueError:
            raise SchemaViolation("--rho must be min, max, grid, a number or a .json file") from None
        _validate_rho_value(policy, "--rho")
    if isinstance(policy, dict):
        by_pattern = {}
        for label, rho in policy.items():
            by_pattern[schema.pattern_from_label(label)] = rho
        missing = [
            schema.stratum_label(w) for w, _ in weights.strata if w not in by_pattern
        ]
        if missing:
            raise SchemaViolation(f"no rho configured for strata: {missing}")
        policy = by_pattern
    return policy


def _paired_states(draws, conf):
    joint_rows = list(draws.states())
    conf_rows = list(conf.states())
    n = min(len(joint_rows), len(conf_rows))
    if n == 0:
        raise SchemaViolation("draws file holds no paired draws")
    return joint_rows[:n], conf_rows[:n]


def _cmd_effects(config, draws_path, outdir, rho_flag):
    ing = ingest(config)
    draws, conf = read_draws_jsonl(draws_path)
    if conf.n_w != config.schema.width:
        raise SchemaViolation("draws covariate width does not match the config schema")
    refs = ReferenceLevels(u_ref=config.u_reference)
    mc = {"draws": config.mc_draws, "seed": config.seed}
    policy = _policy_from_spec(rho_flag, config, ing.weights)
    echo = {
        "u_reference": config.u_reference,
        "m_reference": "flat-at-baseline",
        "mc_draws": config.mc_draws,
        "seed": config.seed,
    }
    outputs = ["effects.json"]
    if policy == "grid":
        points = []
        for rho in np.linspace(0.0, 1.0, 11):
            out = posterior_effects(
                draws, conf, ing.weights, float(rho), refs=refs, mc=mc
            )
            points.append(
                {
                    "rho": float(rho),
                    "n_skipped": out["n_skipped"],
                    "summary": out["summary"],
                }
            )
        report = {
            "schema_version": SCHEMA_VERSION,
            "rho_policy": "grid",
            "grid": points,
            **echo,
        }
    else:
        out = posterior_effects(draws, conf, ing.weights, policy, refs=refs, mc=mc)
        decs = out["decompositions"]
        if not decs:
            raise AllDrawsDiscarded("every paired posterior draw was infeasible")
        identity_max = max(abs(d.de + d.ie - d.te) for d in decs)
        reassembly_max = max(
            max(
                abs(d.de - (d.de_r - d.delta_de + d.delta)),
                abs(d.ie - (d.ie_r + d.delta_ie - d.delta)),
            )
            for d in decs
        )
        rows = [
            [str(k), *[_fmt(getattr(d, name)) for name in COMPONENTS]]
            for k, d in enumerate(decs)
        ]
        _write_csv(
            os.path.join(outdir, "decompositions.csv"), ["draw", *COMPONENTS], rows
        )
        outputs.append("decompositions.csv")
        report = {
            "schema_version": SCHEMA_VERSION,
            "rho_policy": decs[0].rho_policy,
            "n_paired": out["n_paired"],
            "n_skipped": out["n_skipped"],
            "failure_proportions": {
                config.schema.stratum_label(w): v
                for w, v in out["failure_proportions"].items()
            },
            "summary": out["summary"],
            "self_checks": {
                "additive_identity_max_abs": identity_max,
                "reassembly_max_abs": reassembly_max,
                "pass": bool(identity_max == 0.0 and reassembly_max <= 1e-10),
            },
            **echo,
        }
    write_json(os.path.join(outdir, "effects.json"), report)
    write_manifest(outdir, "effects", config, outputs)
    print(f"wrote {len(outputs) + 1} artifacts to {outdir}")
    return 0


def _cmd_bounds(config, draws_path, outdir):
    ing = ingest(config)
    draws, conf = read_draws_jsonl(draws_path)
    refs = ReferenceLevels(u_ref=config.u_reference)
    mc = {"draws": config.mc_draws, "seed": config.seed}
    joint_rows, conf_rows = _paired_states(draws, conf)
    cols = {"de_lo": [], "de_hi": [], "ie_lo": [], "ie_hi": []}
    for (med, sp, law, _), cp in zip(joint_rows, conf_rows):
        params = ModelParams(mediator=med, survival=sp, confounder=cp, re_law=law)
        bounds = relaxed_bounds(params, ing.weights, refs=refs, mc=mc)
        cols["de_lo"].append(bounds["de"][0])
        cols["de_hi"].append(bounds["de"][1])
        cols["ie_lo"].append(bounds["ie"][0])
        cols["ie_hi"].append(bounds["ie"][1])
    report = {
        "schema_version": SCHEMA_VERSION,
        "n_draws": len(joint_rows),
        "u_reference": config.u_reference,
        "m_reference": "flat-at-baseline",
        "summary": {k: _summary_block(v) for k, v in cols.items()},
    }
    write_json(os.path.join(outdir, "bounds.json"), report)
    write_manifest(outdir, "bounds", config, ["bounds.json"])
    print(f"wrote 2 artifacts to {outdir}")
    return 0


def _cmd_check_monotonicity(config, draws_path, outdir):
    ing = ingest(config)
    _, conf = read_draws_jsonl(draws_path)
    report = check_monotonicity(conf, ing.weights)
    strata_block = {}
    worst = 0.0
    for w_key, entry in report.items():
        label = config.schema.stratum_label(w_key)
        intervals = entry["p11_intervals"]
        ordered = all(lo <= hi for lo, hi in intervals)
        strata_block[label] = {
            "n_draws": entry["n_draws"],
            "failure_proportion": entry["failure_proportion"],
            "n_feasible": len(intervals),
            "p11_lower_mean": float(np.mean([lo for lo, _ in intervals])) if intervals else None,
            "p11_upper_mean": float(np.mean([hi for _, hi in intervals])) if intervals else None,
            "intervals_ordered": bool(ordered),
        }
        worst = max(worst, entry["failure_proportion"])
    out = {
        "schema_version": SCHEMA_VERSION,
        "strata": strata_block,
        "max_failure_proportion": worst,
    }
    write_json(os.path.join(outdir, "monotonicity.json"), out)
    write_manifest(outdir, "check-monotonicity", config, ["monotonicity.json"])
    print(f"wrote 2 artifacts to {outdir}")
    return 0


def _cmd_km(config, outdir):
    ing = ingest(config)
    treated = [s for s in ing.subjects if s.arm == 1]
    control = [s for s in ing.subjects if s.arm == 0]
    if not treated or not control:
        raise InvalidInput("km needs subjects in both arms")
    auc1, se1 = km_restricted_auc(treated, config.t_max)
    auc0, se0 = km_restricted_auc(control, config.t_max)
    report = {
        "schema_version": SCHEMA_VERSION,
        "t_max": config.t_max,
        "treated": {"estimate": auc1, "se": se1, "n": len(treated)},
        "control": {"estimate": auc0, "se": se0, "n": len(control)},
        "te": auc1 - auc0,
        "te_se": math.hypot(se1, se0),
    }
    write_json(os.path.join(outdir, "km.json"), report)
    write_manifest(outdir, "km", config, ["km.json"])
    print(f"wrote 2 artifacts to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    # keep stderr machine-readable: usage problems raise like any other
    # validation failure instead of printing argparse's usage text
    def error(self, message):
        raise SchemaViolation(f"usage: {message}")


def _build_parser():
    parser = _Parser(
        prog="rmstmediate",
        description="Mediation decompositions for longitudinal mediators "
        "and restricted event-free time.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_draws, needs_out in (
        ("simulate", False, True),
        ("fit", False, True),
        ("effects", True, True),
        ("bounds", True, True),
        ("check-monotonicity", True, True),
        ("km", False, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        if needs_draws:
            p.add_argument("--draws", required=True, help="draws.jsonl from a fit run")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        if name == "effects":
            p.add_argument(
                "--rho",
                default=None,
                help="min | max | grid | number in [0,1] | per-stratum .json file",
            )
    return parser


def _apply_thread_cap():
    raw = os.environ.get("MEDIATE_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise SchemaViolation(f"MEDIATE_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise SchemaViolation("MEDIATE_THREADS must be at least 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(cap))
    return cap


def _dispatch(args):
    config = load_config(args.config)
    outdir = _ensure_outdir(args.out)
    if args.command == "simulate":
        return _cmd_simulate(config, outdir)
    if args.command == "fit":
        return _cmd_fit(config, outdir)
    if args.command == "effects":
        return _cmd_effects(config, args.draws, outdir, args.rho)
    if args.command == "bounds":
        return _cmd_bounds(config, args.draws, outdir)
    if args.command == "check-monotonicity":
        return _cmd_check_monotonicity(config, args.draws, outdir)
    if args.command == "km":
        return _cmd_km(config, outdir)
    raise InvalidInput(f"unknown command {args.command!r}")  # unreachable


def _envelope(code, err, name=None):
    payload = {
        "error": name if name is not None else type(err).__name__,
        "message": str(err),
        "exit_code": code,
    }
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    try:
        _apply_thread_cap()
        parser = _build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return 0 if exc.code in (0, None) else int(exc.code)
        return _dispatch(args)
    except NoConvergence as err:
        return _envelope(4, err)
    except (MonotonicityInfeasible, AllDrawsDiscarded) as err:
        return _envelope(3, err)
    except MediateError as err:
        return _envelope(2, err)
    except OSError as err:
        return _envelope(2, err)


if __name__ == "__main__":
    sys.exit(main())
