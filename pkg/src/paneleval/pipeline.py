"""Config-driven pipeline: ingest, prepare, index, estimate, write artifacts.

Artifacts are written to a staging directory and moved into the output
directory only when every requested analysis succeeded, so a failed run
leaves nothing behind.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import report
from .did import baseline_table, did_baseline, event_study, read_schedules, trim_sample
from .index import IndexSpec, build_index, industrial_structure_index
from .mediation import MediatorSources, mediation_analysis, mediator_construction
from .panel import FillReport, PanelError, VariableSpec, derive_variable, fill_missing, load_csv, write_csv
from .placebo import PlaceboConfig, placebo_test
from .psm import overlap_densities, run_psm_did
from .regression import RegressionSpec, normalize_se_type, subgroup_regressions

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 2, 3

ANALYSES = ("baseline", "trim", "alt_index", "heterogeneity", "event_study", "psm_did", "placebo", "mediation")

# which analyses each subcommand may run; the first entry is its default
COMMAND_ANALYSES = {
    "build-index": (),
    "did": ("baseline", "trim", "alt_index", "heterogeneity"),
    "event-study": ("event_study",),
    "psm-did": ("psm_did",),
    "placebo": ("placebo",),
    "mediate": ("mediation",),
    "run": ANALYSES,
}

_str = {"type": "string", "minLength": 1}
_strs = {"type": "array", "items": _str}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "panel": _obj({"path": _str, "entity_col": _str, "year_col": _str}, ["path"]),
    "schedules": _obj({"path": _str, "policies": {**_strs, "minItems": 2, "maxItems": 2}}, ["path"]),
    "groups": _obj({"path": _str, "entity_col": _str, "column": _str}, ["path", "column"]),
    "preprocess": _obj({
        "fill_missing": _strs,
        "fill_order": {"enum": ["raw_first", "derived_first"]},
        "variables": {"type": "array", "items": _obj({
            "name": _str, "source": _str, "transform": {"enum": ["none", "log", "share"]},
            "denominator": _str, "role": {"enum": ["outcome", "control", "indicator", "mediator", "auxiliary"]},
        }, ["name", "source"])},
        "industrial_structure": _obj({"name": _str, "shares": {**_strs, "minItems": 3, "maxItems": 3}}, ["shares"]),
        "mediators": _obj({
            "build": {"type": "array", "items": {"enum": ["vcpe", "talents", "technology"]}},
            "sources": _obj({
                "financial_amount": _str, "gdp": _str, "sector_employment": _strs, "total_employment": _str,
                "scitech_spending": _str, "budget_total": _str, "patents": _str, "population": _str}),
        }),
    }),
    "indices": {"type": "array", "items": _obj({
        "name": _str, "method": {"enum": ["entropy", "pca"]}, "scale": {"type": "number", "exclusiveMinimum": 0},
        "indicators": {"type": "array", "minItems": 2, "items": _obj({
            "name": _str, "direction": {"enum": ["positive", "negative", "+", "-"]}}, ["name"])},
    }, ["name", "indicators"])},
    "outcome": _str,
    "controls": _strs,
    "analyses": {"type": "array", "items": {"enum": list(ANALYSES)}, "uniqueItems": True},
    "event_study": _obj({"pre": {"type": "integer", "minimum": 0}, "post": {"type": "integer", "minimum": 0},
                         "reference": _str}),
    "psm": _obj({
        "covariates": {**_strs, "minItems": 1},
        "modes": {"type": "array", "items": {"enum": ["period", "pooled"]}, "minItems": 1, "uniqueItems": True},
        "k": {"type": "integer", "minimum": 1},
        "caliper": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "with_replacement": {"type": "boolean"},
        "scale": {"enum": ["probability", "logit"]},
    }),
    "trim": _obj({"drop_years": {"type": "array", "items": {"type": "integer"}, "minItems": 1}}, ["drop_years"]),
    "placebo": _obj({
        "replications": {"type": "integer", "minimum": 1},
        "treated_count": {"type": ["integer", "null"], "minimum": 1},
        "year_rule": {"enum": ["uniform", "empirical"]},
        "max_redraws": {"type": "integer", "minimum": 0},
    }),
    "mediation": _obj({"mediators": {**_strs, "minItems": 1},
                       "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    "alt_index": _obj({"outcome": _str}, ["outcome"]),
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "se": {"enum": ["classical", "robust", "cluster"]},
    "jobs": {"type": "integer", "minimum": 1},
    "output_dir": _str,
}, ["panel", "schedules", "outcome"])


class ConfigError(ValueError):
    """Invalid configuration or inputs; maps to exit code 2."""


class AnalysisError(RuntimeError):
    """An analysis failed during estimation; maps to exit code 3."""

    def __init__(self, analysis, cause):
        super().__init__(f"analysis {analysis!r} failed: {cause}")
        self.analysis = analysis


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    seed: int = 0
    se: str = "cluster"
    jobs: int = 1
    output_dir: Path | None = None
    config_sha256: str = ""

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def section(self, name) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def analyses(self):
        return tuple(self.raw.get("analyses", ("baseline",)))

    @property
    def outcome(self):
        return self.raw["outcome"]

    @property
    def controls(self):
        return tuple(self.raw.get("controls", ()))


def load_config(path, seed=None, se=None, out=None, jobs=None) -> PipelineConfig:
    """Parse and schema-check a pipeline config; CLI overrides win."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    cfg = PipelineConfig(raw, path.resolve().parent, config_sha256=hashlib.sha256(blob).hexdigest())
    cfg.seed = int(seed if seed is not None else raw.get("seed", 0))
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg.se = normalize_se_type(se or raw.get("se", "cluster"))
    cfg.jobs = int(jobs or raw.get("jobs", 1))
    if out is not None:
        cfg.output_dir = Path(out)
    elif "output_dir" in raw:
        cfg.output_dir = cfg.path(raw["output_dir"])
    for key in ("panel", "schedules", "groups"):
        if key in raw and not cfg.path(raw[key]["path"]).is_file():
            raise ConfigError(f"{key} file not found: {cfg.path(raw[key]['path'])}")
    return cfg


# --------------------------------------------------------------------------
# Preparation
# --------------------------------------------------------------------------

@dataclass
class Prepared:
    data: object
    dual: object
    groups: dict | None
    fill_report: FillReport
    weights: dict = field(default_factory=dict)
    index_specs: dict = field(default_factory=dict)


def read_groups(path, entity_col="entity", column="group") -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = [f.strip() for f in reader.fieldnames or []]
        for need in (entity_col, column):
            if need not in names:
                raise PanelError(f"{path}: group CSV has no column {need!r}")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items()}
            e = row[entity_col]
            if e in out:
                raise PanelError(f"{path}:{lineno}: duplicate group row for entity {e!r}")
            out[e] = row[column]
    return out


def _fill(data, names, rep):
    for v in names:
        if v not in data:
            raise PanelError(f"cannot fill unknown variable {v!r}")
        data = fill_missing(data, v, rep)
    return data


def prepare(cfg: PipelineConfig) -> Prepared:
    """Load inputs and build every derived variable and index."""
    raw = cfg.raw
    pc = raw["panel"]
    data = load_csv(cfg.path(pc["path"]), pc.get("entity_col", "entity"), pc.get("year_col", "year"))
    sc = raw["schedules"]
    dual = read_schedules(cfg.path(sc["path"]), sc.get("policies"))
    unknown = sorted((set(dual.first.adoption) | set(dual.second.adoption)) - set(data.entities))
    if unknown:
        raise PanelError(f"schedule names entities absent from the panel: {unknown[:5]}")
    groups = None
    if "groups" in raw:
        g = raw["groups"]
        groups = read_groups(cfg.path(g["path"]), g.get("entity_col", "entity"), g["column"])
        missing = [e for e in data.entities if e not in groups]
        if missing:
            raise PanelError(f"group CSV has no label for entities {missing[:5]}")

    pre = cfg.section("preprocess")
    rep = FillReport()
    fill = pre.get("fill_missing", [])
    derived_first = pre.get("fill_order", "raw_first") == "derived_first"
    if not derived_first:
        data = _fill(data, fill, rep)
    for v in pre.get("variables", []):
        data = derive_variable(data, VariableSpec(v["name"], v["source"], v.get("transform", "none"),
                                                  v.get("denominator"), v.get("role", "auxiliary")))
    if "industrial_structure" in pre:
        isc = pre["industrial_structure"]
        data = industrial_structure_index(data, isc["shares"], isc.get("name", "industrial_structure"))
    if "mediators" in pre:
        m = pre["mediators"]
        src = dict(m.get("sources", {}))
        if "sector_employment" in src:
            src["sector_employment"] = tuple(src["sector_employment"])
        data = mediator_construction(data, MediatorSources(**src),
                                     m.get("build", ("vcpe", "talents", "technology")))
    if derived_first:
        data = _fill(data, fill, rep)

    prep = Prepared(data, dual, groups, rep)
    for spec_raw in raw.get("indices", []):
        spec = IndexSpec(tuple((i["name"], i.get("direction", "positive")) for i in spec_raw["indicators"]),
                         spec_raw.get("method", "entropy"), spec_raw["name"])
        prep.data, w = build_index(prep.data, spec, spec_raw.get("scale", 100.0))
        prep.weights[spec.name] = w
        prep.index_specs[spec.name] = spec
    _check_references(cfg, prep)
    return prep


def _check_references(cfg, prep):
    """Every variable an analysis names must exist and be complete."""
    data, raw = prep.data, cfg.raw
    need = {"outcome": [cfg.outcome], "controls": list(cfg.controls)}
    if "psm" in raw:
        need["psm.covariates"] = raw["psm"].get("covariates", [])
    if "mediation" in raw:
        need["mediation.mediators"] = raw["mediation"].get("mediators", [])
    if "alt_index" in raw:
        need["alt_index.outcome"] = [raw["alt_index"]["outcome"]]
    for where, names in need.items():
        for v in names:
            if v not in data:
                raise PanelError(f"{where} references undeclared variable {v!r}")
            if data.n_missing(v):
                raise PanelError(f"{where} variable {v!r} has {data.n_missing(v)} missing cells; "
                                 f"list it under preprocess.fill_missing")
    for a in cfg.analyses:
        if a in ("trim", "alt_index") and a not in raw:
            raise PanelError(f"analysis {a!r} requested without a {a!r} section")
        if a == "heterogeneity" and prep.groups is None:
            raise PanelError("analysis 'heterogeneity' requested without a groups file")
        if a == "psm_did" and "covariates" not in cfg.section("psm"):
            raise PanelError("analysis 'psm_did' requires psm.covariates")
    if "trim" in raw:
        trim_sample(data, raw["trim"]["drop_years"])


# --------------------------------------------------------------------------
# Analyses
# --------------------------------------------------------------------------

def _write_prepared(cfg, prep, out: Path):
    files = ["prepared_panel.csv", "load_report.json"]
    write_csv(prep.data, out / files[0])
    (out / files[1]).write_text(prep.fill_report.to_json() + "\n", encoding="utf-8")
    for name, w in prep.weights.items():
        fn = f"index_{name}_weights.json"
        report.write_json(w.report(prep.index_specs[name]), out / fn)
        files.append(fn)
    return files


def _regression_outputs(out, stem, columns, depvars=None, title=None):
    text = report.format_table(columns, depvars, title=title)
    (out / f"{stem}.txt").write_text(text, encoding="utf-8")
    report.write_results_csv(columns, out / f"{stem}.csv")
    report.write_json(report.results_json(columns), out / f"{stem}.json")
    return [f"{stem}.txt", f"{stem}.csv", f"{stem}.json"]


def _baseline(cfg, prep, out):
    cols = baseline_table(prep.data, prep.dual, cfg.outcome, cfg.controls, cfg.se)
    dep = {k: cfg.outcome for k in cols}
    return _regression_outputs(out, "baseline", cols, dep, "Baseline DID")


def _trim(cfg, prep, out):
    drop = cfg.raw["trim"]["drop_years"]
    data = trim_sample(prep.data, drop)
    res = did_baseline(data, prep.dual, cfg.outcome, cfg.controls, se_type=cfg.se)
    return _regression_outputs(out, "trim", {"trimmed": res}, {"trimmed": cfg.outcome},
                               f"DID excluding years {', '.join(str(y) for y in drop)}")


def _alt_index(cfg, prep, out):
    alt = cfg.raw["alt_index"]["outcome"]
    res = did_baseline(prep.data, prep.dual, alt, cfg.controls, se_type=cfg.se)
    return _regression_outputs(out, "alt_index", {"alternative": res}, {"alternative": alt},
                               "DID with an alternative outcome index")


def _heterogeneity(cfg, prep, out):
    from .did import TREATMENT, adoption_matrix
    W = adoption_matrix(prep.data, prep.dual.effective)
    data = prep.data.with_variable(TREATMENT, W)
    spec = RegressionSpec(cfg.outcome, (TREATMENT,) + cfg.controls, se_type=cfg.se)
    cols = subgroup_regressions(data, spec, prep.groups)
    return _regression_outputs(out, "heterogeneity", cols, {k: cfg.outcome for k in cols},
                               "DID by entity group")


def _event_study(cfg, prep, out):
    es = cfg.section("event_study")
    res = event_study(prep.data, prep.dual, cfg.outcome, cfg.controls, es.get("pre", 2), es.get("post", 6),
                      es.get("reference", "Before_0"), cfg.se)
    res.to_csv(out / "event_study.csv")
    summary = {
        "reference": res.reference,
        "dropped_bins": list(res.dropped_bins),
        "always_treated": list(res.always_treated),
        "n_treated_obs": res.n_treated_obs,
        "bins": [{"label": b.label, "rel_time": b.rel, "coef": b.coef, "se": b.se, "pvalue": b.pvalue,
                  "ci_low": b.ci_low, "ci_high": b.ci_high, "n_obs": b.n_obs, "reference": b.reference}
                 for b in res.bins],
    }
    report.write_json(summary, out / "event_study.json")
    return ["event_study.csv", "event_study.json"]


def _psm_did(cfg, prep, out):
    p = cfg.section("psm")
    files, cols = [], {}
    for mode in p.get("modes", ["period", "pooled"]):
        run = run_psm_did(prep.data, prep.dual, cfg.outcome, p["covariates"], cfg.controls, mode,
                          p.get("k", 1), p.get("caliper"), p.get("with_replacement", True),
                          p.get("scale", "probability"), cfg.se)
        stem = f"psm_{mode}"
        run.matched.to_csv(out / f"{stem}_pairs.csv")
        run.balance.to_csv(out / f"{stem}_balance.csv")
        (out / f"{stem}_balance.txt").write_text(run.balance.to_text(), encoding="utf-8")
        files += [f"{stem}_pairs.csv", f"{stem}_balance.csv", f"{stem}_balance.txt"]
        for (when, grp), dens in sorted(overlap_densities(run.matched).items()):
            if dens is None:
                continue
            fn = f"{stem}_density_{when}_{grp}.csv"
            dens.to_csv(out / fn)
            files.append(fn)
        cols[mode] = run.result
    files += _regression_outputs(out, "psm_did", cols, {k: cfg.outcome for k in cols}, "PSM-DID")
    return files


def _placebo(cfg, prep, out):
    p = cfg.section("placebo")
    pc = PlaceboConfig(p.get("replications", 500), p.get("treated_count"), cfg.seed,
                       p.get("year_rule", "uniform"), p.get("max_redraws", 10))
    res = placebo_test(prep.data, prep.dual, cfg.outcome, cfg.controls, pc, cfg.se, jobs=cfg.jobs)
    return [os.path.basename(f) for f in res.write(str(out / "placebo"))]


def _mediation(cfg, prep, out):
    m = cfg.section("mediation")
    mediators = m.get("mediators", ["vcpe", "talents", "technology"])
    results = [mediation_analysis(prep.data, prep.dual, name, cfg.outcome, cfg.controls, cfg.se,
                                  m.get("alpha", 0.1)) for name in mediators]
    (out / "mediation.txt").write_text(report.format_mediation_table(results, cfg.outcome), encoding="utf-8")
    report.write_json({r.mediator: r.summary() for r in results}, out / "mediation.json")
    return ["mediation.txt", "mediation.json"]


RUNNERS = {
    "baseline": _baseline, "trim": _trim, "alt_index": _alt_index, "heterogeneity": _heterogeneity,
    "event_study": _event_study, "psm_did": _psm_did, "placebo": _placebo, "mediation": _mediation,
}


def selected_analyses(cfg: PipelineConfig, command: str):
    allowed = COMMAND_ANALYSES[command]
    if command == "run":
        return tuple(a for a in ANALYSES if a in cfg.analyses)
    chosen = tuple(a for a in allowed if a in cfg.analyses)
    return chosen or allowed[:1]


# --------------------------------------------------------------------------
# Manifest and staging
# --------------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, files, command, extra=None):
    entries = [{"path": f, "sha256": sha256_file(out / f), "bytes": (out / f).stat().st_size}
               for f in sorted(set(files))]
    manifest = {"command": command, "artifacts": entries}
    manifest.update(extra or {})
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def publish(stage: Path, dest: Path):
    """Move staged files into ``dest`` (created if needed)."""
    dest.mkdir(parents=True, exist_ok=True)
    for f in sorted(stage.iterdir()):
        os.replace(f, dest / f.name)


def staged(dest: Path):
    dest = Path(dest)
    parent = dest.resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=".stage-", dir=parent))


def execute(cfg: PipelineConfig, command: str, prep: Prepared | None = None) -> dict:
    """Run the analyses for ``command``; raise ConfigError or AnalysisError."""
    if cfg.output_dir is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    if prep is None:
        try:
            prep = prepare(cfg)
        except (PanelError, ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None
    stage = staged(cfg.output_dir)
    try:
        files = _write_prepared(cfg, prep, stage)
        for name in selected_analyses(cfg, command):
            try:
                files += RUNNERS[name](cfg, prep, stage)
            except Exception as exc:  # noqa: BLE001 - reported with the analysis name
                raise AnalysisError(name, exc) from exc
        manifest = write_manifest(stage, files, command, {
            "seed": cfg.seed, "se_type": cfg.se, "config_sha256": cfg.config_sha256,
            "analyses": list(selected_analyses(cfg, command)),
        })
        publish(stage, cfg.output_dir)
        return manifest
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def simulate(dgp_config_path, out, seed=None) -> dict:
    """Draw a synthetic panel and write panel, schedule, groups and truth files."""
    from .dgp import DgpConfig, generate, truth_json
    from .did import write_schedules
    try:
        raw = json.loads(Path(dgp_config_path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError("DGP config must be a JSON object")
        if seed is not None:
            raw["seed"] = int(seed)
        cfg = DgpConfig.from_dict(raw)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid DGP config: {exc}") from None
    data, dual, truth = generate(cfg)
    stage = staged(out)
    try:
        files = ["panel.csv", "schedule.csv", "truth.json"]
        cols = [v for v in data.variables if v != "group"]
        write_csv(data, stage / "panel.csv", columns=cols)
        write_schedules(dual, stage / "schedule.csv")
        (stage / "truth.json").write_text(truth_json(truth), encoding="utf-8")
        if "groups" in truth:
            with open(stage / "groups.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["entity", "group"])
                for e in data.entities:
                    w.writerow([e, truth["groups"]["labels"][e]])
            files.append("groups.csv")
        manifest = write_manifest(stage, files, "simulate", {"seed": cfg.seed})
        publish(stage, Path(out))
        return manifest
    finally:
        shutil.rmtree(stage, ignore_errors=True)

