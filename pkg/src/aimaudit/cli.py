"""Pipeline orchestration: subcommands, config, manifest, reports.

Every stage reads and writes flat files under the output directory, so
stages are independently runnable and resumable.  The manifest records
input/output hashes per stage; a downstream stage refuses to run when an
upstream artifact changed since it was produced (override with --force).
Two runs with identical config and inputs produce byte-identical
artifacts; only the manifest (which carries wall-clock durations) is
exempt from that guarantee.

Exit codes: 0 success, 1 validation error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .audit import (
    aggregate,
    categorize,
    county_rates,
    read_labels,
    recorded_counts_by_severity_year,
    write_labels,
)
from .classifier import (
    NarrativeClassifier,
    PredictionSet,
    evaluate,
    load_external_predictions,
    predict_set,
    stratified_split,
)
from .design import balance, encode
from .glmm import multi_start_select, report_anomalies
from .ingest import ingest, load_dataset, save_dataset
from .normalize import load_stopwords, normalize
from .records import AlcoholFlag
from .redact import Redactor, load_rules
from .reports import (
    county_rows,
    fmt_pct,
    lisa_csv_rows,
    render_anomalies,
    render_glmm_report,
    render_lisa_table,
    render_metrics_table,
    severity_series_rows,
    write_csv,
    year_series_rows,
)
from .sampling import stratified_sample
from .spatial import Cluster, LocalMoran, build_weights, grid_adjacency, write_adjacency
from .synth import SynthSpec, synthesize, write_truth
from .vectorizer import TfidfVectorizer

CONFIG_ENV_VAR = "AIMAUDIT_CONFIG"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_STAGE_FAILURE = 2


class ValidationFailure(Exception):
    """Bad config, missing/stale inputs: exit code 1."""


class StageFailure(Exception):
    """Computation failed inside a stage: exit code 2."""


DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": "out",
    "threads": 1,
    "inputs": None,  # {"driver_table":..., "crash_table":..., "narrative_table":...}
    "synth": {
        "n_records": 5000,
        "alcohol_prevalence": 0.06,
        "injected_mismatch_rate": 0.24,
    },
    "stopwords": None,
    "redaction_rules": None,
    "adjacency": None,
    "external_scores": None,
    "train": {
        "sample_size": 8914,
        "ratio": 0.8,
        "min_df": 2,
        "use_bigrams": False,
        "regularization": 0.01,
        "link": "logistic",
        "tol": 1e-8,
        "max_iter": 200,
        "threshold": 0.5,
    },
    "lisa": {"n_perm": 999, "alpha": 0.05},
    "glmm": {
        "n_runs": 20,
        "n_quadrature": 15,
        "tolerance": 1e-6,
        "max_iter": 500,
        "link": "probit",
        "min_level_count": 5,
    },
}


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None, overrides=None) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationFailure(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ValidationFailure(f"config file {path} is not valid JSON: {err}") from None
        if not isinstance(loaded, dict):
            raise ValidationFailure(f"config file {path} must hold a JSON object")
        config = _merge(config, loaded)
    if overrides:
        config = _merge(config, overrides)
    _validate_config(config)
    return config


def _validate_config(config: dict) -> None:
    def fraction(value, name, inclusive=True):
        low = 0.0 <= value if inclusive else 0.0 < value
        high = value <= 1.0 if inclusive else value < 1.0
        if not (low and high):
            raise ValidationFailure(f"config {name} must be a fraction, got {value}")

    fraction(config["train"]["ratio"], "train.ratio", inclusive=False)
    fraction(config["train"]["threshold"], "train.threshold")
    fraction(config["lisa"]["alpha"], "lisa.alpha", inclusive=False)
    fraction(config["synth"]["alcohol_prevalence"], "synth.alcohol_prevalence")
    fraction(config["synth"]["injected_mismatch_rate"], "synth.injected_mismatch_rate")
    if config["lisa"]["n_perm"] < 99:
        raise ValidationFailure("config lisa.n_perm must be >= 99")
    if config["glmm"]["n_runs"] < 1:
        raise ValidationFailure("config glmm.n_runs must be >= 1")
    for key in ("stopwords", "redaction_rules", "adjacency", "external_scores"):
        path = config.get(key)
        if path is not None and not Path(path).exists():
            raise ValidationFailure(f"config {key} path does not exist: {path}")
    inputs = config.get("inputs")
    if inputs is not None:
        for name in ("driver_table", "crash_table", "narrative_table"):
            if name not in inputs:
                raise ValidationFailure(f"config inputs missing {name}")
            if not Path(inputs[name]).exists():
                raise ValidationFailure(f"config inputs.{name} does not exist: {inputs[name]}")


def stage_seed(global_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Workspace:
    """Output directory with manifest bookkeeping and a run lock."""

    MANIFEST = "manifest.json"
    LOCK = ".aimaudit.lock"

    def __init__(self, out_dir, force: bool = False):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.force = force
        manifest_path = self.out / self.MANIFEST
        if manifest_path.exists():
            self.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        else:
            self.manifest = {"version": __version__, "stages": {}, "artifacts": {}}

    # -- locking ---------------------------------------------------------------

    def __enter__(self):
        self._lock_path = self.out / self.LOCK
        try:
            fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ValidationFailure(
                f"output directory is locked by another run: {self._lock_path}"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *_exc):
        try:
            self._lock_path.unlink()
        except FileNotFoundError:
            pass
        return False

    # -- artifacts ---------------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def require_input(self, name: str, producer: str) -> Path:
        """An upstream artifact must exist and match its recorded hash."""
        path = self.path(name)
        if not path.exists():
            raise ValidationFailure(
                f"missing upstream artifact {name}; run the {producer} stage first"
            )
        recorded = self.manifest["artifacts"].get(name)
        if recorded is None:
            raise ValidationFailure(
                f"artifact {name} is not in the manifest; run the {producer} stage first"
            )
        if not self.force and _sha256(path) != recorded:
            raise ValidationFailure(
                f"stale input: {name} changed since the {producer} stage produced it "
                f"(use --force to override)"
            )
        return path

    def record_stage(self, stage: str, inputs, outputs, duration: float, config: dict) -> None:
        self.manifest["stages"][stage] = {
            "inputs": {name: _sha256(Path(p)) for name, p in inputs.items()},
            "outputs": {name: _sha256(self.path(name)) for name in outputs},
            "duration_s": duration,
            "version": __version__,
            "config": config,
        }
        for name in outputs:
            self.manifest["artifacts"][name] = self.manifest["stages"][stage]["outputs"][name]
        (self.out / self.MANIFEST).write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


# -- textprep shared by train/classify ----------------------------------------


def _prepare_docs(ds, config):
    stopwords = load_stopwords(config.get("stopwords"))
    rules = load_rules(config["redaction_rules"]) if config.get("redaction_rules") else None
    redactor = Redactor(rules) if rules is not None else Redactor()
    docs = []
    for rec in ds:
        redacted = redactor.redact(rec.narration)
        docs.append(normalize(redacted, stopwords, crash_key=rec.crash_key))
    return docs


# -- stages ---------------------------------------------------------------------


def stage_synth(ws: Workspace, config: dict) -> dict:
    synth_cfg = config["synth"]
    spec = SynthSpec(
        n_records=int(synth_cfg["n_records"]),
        alcohol_prevalence=float(synth_cfg["alcohol_prevalence"]),
        injected_mismatch_rate=float(synth_cfg["injected_mismatch_rate"]),
        seed=stage_seed(config["seed"], "synth"),
    )
    ds, truth = synthesize(spec)
    save_dataset(ds, ws.path("dataset.csv"))
    write_truth(truth, ws.path("truth.csv"))
    return {
        "inputs": {},
        "outputs": ["dataset.csv", "truth.csv"],
        "summary": {"records": len(ds)},
    }


def stage_ingest(ws: Workspace, config: dict) -> dict:
    inputs = config.get("inputs")
    if not inputs:
        raise ValidationFailure("ingest requires config inputs (three source tables)")
    ds, report = ingest(
        inputs["driver_table"], inputs["crash_table"], inputs["narrative_table"]
    )
    save_dataset(ds, ws.path("dataset.csv"))
    report.write(ws.path("ingest_report.json"))
    return {
        "inputs": {
            "driver_table": inputs["driver_table"],
            "crash_table": inputs["crash_table"],
            "narrative_table": inputs["narrative_table"],
        },
        "outputs": ["dataset.csv", "ingest_report.json"],
        "summary": {"accepted": report.accepted, "rejected": len(report.rejections)},
    }


def stage_train(ws: Workspace, config: dict) -> dict:
    dataset_path = ws.require_input("dataset.csv", "synth/ingest")
    ds = load_dataset(dataset_path)
    train_cfg = config["train"]

    sample_n = min(int(train_cfg["sample_size"]), len(ds))
    sample = stratified_sample(ds, sample_n, "alcohol_rel", stage_seed(config["seed"], "sample"))
    docs = _prepare_docs(sample, config)
    labels = [rec.alcohol_rel for rec in sample]
    y = [1 if flag is AlcoholFlag.ALCOHOL else 0 for flag in labels]

    train_idx, test_idx = stratified_split(
        y, float(train_cfg["ratio"]), stage_seed(config["seed"], "split")
    )
    vectorizer = TfidfVectorizer(
        min_df=int(train_cfg["min_df"]), use_bigrams=bool(train_cfg["use_bigrams"])
    )
    vectorizer.fit([docs[i] for i in train_idx])
    X_train = vectorizer.transform([docs[i] for i in train_idx])
    X_test = vectorizer.transform([docs[i] for i in test_idx])

    model = NarrativeClassifier(
        regularization=float(train_cfg["regularization"]),
        link=train_cfg["link"],
        tol=float(train_cfg["tol"]),
        max_iter=int(train_cfg["max_iter"]),
        threshold=float(train_cfg["threshold"]),
    )
    model.fit(X_train, [y[i] for i in train_idx])

    keys = [rec.crash_key for rec in sample]
    reports = {}
    for split_name, idx, X in (("train", train_idx, X_train), ("test", test_idx, X_test)):
        preds = predict_set(model, X, [keys[i] for i in idx])
        truth = {keys[i]: labels[i] for i in idx}
        reports[split_name] = evaluate(preds, truth)

    vectorizer.save(ws.path("tfidf_model.txt"))
    model.save(ws.path("classifier_model.txt"))
    eval_payload = {
        "sample_size": sample_n,
        "train_size": int(train_idx.shape[0]),
        "test_size": int(test_idx.shape[0]),
        "train": reports["train"].to_dict(),
        "test": reports["test"].to_dict(),
    }
    ws.path("eval_report.json").write_text(
        json.dumps(eval_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    ws.path("metrics_table.txt").write_text(
        render_metrics_table(reports["train"], reports["test"]), encoding="utf-8"
    )
    return {
        "inputs": {"dataset.csv": dataset_path},
        "outputs": ["tfidf_model.txt", "classifier_model.txt", "eval_report.json", "metrics_table.txt"],
        "summary": {
            "test_accuracy": reports["test"].accuracy,
            "vocabulary": vectorizer.dimension_,
        },
    }


def stage_classify(ws: Workspace, config: dict) -> dict:
    dataset_path = ws.require_input("dataset.csv", "synth/ingest")
    ds = load_dataset(dataset_path)
    threshold = float(config["train"]["threshold"])

    external = config.get("external_scores")
    if external:
        preds, unmatched, rejected = load_external_predictions(external, ds, threshold)
        report = {
            "source": "external",
            "scores_file": str(external),
            "predictions": len(preds),
            "unmatched_keys": unmatched,
            "rejected_rows": [{"crash_key": k, "reason": r} for k, r in rejected],
        }
        ws.path("external_scores_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        preds.write(ws.path("predictions.csv"))
        return {
            "inputs": {"dataset.csv": dataset_path, "external_scores": external},
            "outputs": ["predictions.csv", "external_scores_report.json"],
            "summary": {"predictions": len(preds), "unmatched": len(unmatched)},
        }

    tfidf_path = ws.require_input("tfidf_model.txt", "train")
    model_path = ws.require_input("classifier_model.txt", "train")
    vectorizer = TfidfVectorizer.load(tfidf_path)
    model = NarrativeClassifier.load(model_path)
    docs = _prepare_docs(ds, config)
    X = vectorizer.transform(docs)
    preds = predict_set(model, X, [rec.crash_key for rec in ds], threshold)
    preds.write(ws.path("predictions.csv"))
    return {
        "inputs": {
            "dataset.csv": dataset_path,
            "tfidf_model.txt": tfidf_path,
            "classifier_model.txt": model_path,
        },
        "outputs": ["predictions.csv"],
        "summary": {"predictions": len(preds)},
    }


def stage_audit(ws: Workspace, config: dict) -> dict:
    dataset_path = ws.require_input("dataset.csv", "synth/ingest")
    predictions_path = ws.require_input("predictions.csv", "classify")
    ds = load_dataset(dataset_path)
    preds = PredictionSet.read(predictions_path, float(config["train"]["threshold"]))
    labels = categorize(preds, ds)
    report = aggregate(labels, ds)

    write_labels(labels, ws.path("mismatch_labels.csv"))
    report.write(ws.path("aim_report.json"))
    write_csv(
        ws.path("aim_by_year.csv"),
        ["year", "aim", "nonaim", "aim_pct"],
        year_series_rows(report),
    )
    write_csv(
        ws.path("aim_by_severity.csv"),
        ["severity", "aim", "nonaim", "aim_pct"],
        severity_series_rows(report),
    )
    write_csv(
        ws.path("aim_by_county.csv"),
        ["county", "aim", "nonaim", "aim_pct"],
        county_rows(report),
    )
    counts_rows = recorded_counts_by_severity_year(ds)
    if counts_rows:
        write_csv(
            ws.path("recorded_counts.csv"),
            list(counts_rows[0].keys()),
            [list(row.values()) for row in counts_rows],
        )
    return {
        "inputs": {"dataset.csv": dataset_path, "predictions.csv": predictions_path},
        "outputs": [
            "mismatch_labels.csv",
            "aim_report.json",
            "aim_by_year.csv",
            "aim_by_severity.csv",
            "aim_by_county.csv",
            "recorded_counts.csv",
        ],
        "summary": {"aim_pct": report.overall.aim_pct},
    }


def stage_lisa(ws: Workspace, config: dict) -> dict:
    dataset_path = ws.require_input("dataset.csv", "synth/ingest")
    report_path = ws.require_input("aim_report.json", "audit")
    payload = json.loads(Path(report_path).read_text(encoding="utf-8"))
    rates = {
        county: block["aim_pct"] / 100.0
        for county, block in payload["by_county"].items()
        if block["aim_pct"] is not None
    }
    universe = payload["county_universe"]
    excluded = [c for c in universe if c not in rates]

    adjacency = config.get("adjacency")
    inputs = {"dataset.csv": dataset_path, "aim_report.json": report_path}
    if adjacency is None:
        # no geometry supplied: deterministic grid contiguity over the
        # dataset's counties (synthetic corpora)
        pairs = grid_adjacency(sorted(universe), n_cols=11)
        adjacency = ws.path("adjacency.csv")
        write_adjacency(pairs, adjacency)
    else:
        inputs["adjacency"] = adjacency

    weights = build_weights(adjacency, units=universe)
    analysis = weights.subset(sorted(rates))
    lisa = LocalMoran(
        analysis,
        n_perm=int(config["lisa"]["n_perm"]),
        alpha=float(config["lisa"]["alpha"]),
        seed=stage_seed(config["seed"], "lisa"),
        n_threads=int(config.get("threads", 1)),
    ).fit(rates)

    results = lisa.results()
    write_csv(
        ws.path("lisa_table.csv"),
        ["county", "lisa_cluster", "pseudo_p", "local_moran_i"],
        lisa_csv_rows(results),
    )
    write_csv(
        ws.path("lisa_cluster_map.csv"),
        ["county", "cluster"],
        [(unit, cluster.value) for unit, cluster, _, _ in results],
    )
    write_csv(
        ws.path("lisa_excluded.csv"),
        ["county", "reason"],
        [(county, "no predicted-alcoholic crashes") for county in excluded],
    )
    outputs = ["lisa_table.csv", "lisa_cluster_map.csv", "lisa_excluded.csv"]
    if "adjacency" not in inputs:
        outputs.append("adjacency.csv")
    significant = sum(
        1 for _, cluster, _, _ in results
        if cluster not in (Cluster.NOT_SIGNIFICANT, Cluster.ISOLATE)
    )
    return {
        "inputs": inputs,
        "outputs": outputs,
        "summary": {"counties": len(results), "significant": significant},
    }


def stage_glmm(ws: Workspace, config: dict) -> dict:
    dataset_path = ws.require_input("dataset.csv", "synth/ingest")
    labels_path = ws.require_input("mismatch_labels.csv", "audit")
    cluster_path = ws.require_input("lisa_cluster_map.csv", "lisa")

    ds = load_dataset(dataset_path)
    labels = read_labels(labels_path)
    glmm_cfg = config["glmm"]

    sample = balance(labels, ds, stage_seed(config["seed"], "balance"))
    dm = encode(sample, min_level_count=int(glmm_cfg.get("min_level_count", 1)))
    fit, runs = multi_start_select(
        dm.X,
        dm.y,
        dm.county_of_row,
        n_runs=int(glmm_cfg["n_runs"]),
        n_quadrature=int(glmm_cfg["n_quadrature"]),
        tol=float(glmm_cfg["tolerance"]),
        max_iter=int(glmm_cfg["max_iter"]),
        link=glmm_cfg["link"],
        seed=stage_seed(config["seed"], "glmm"),
    )

    ws.path("glmm_report.txt").write_text(render_glmm_report(fit, dm.columns), encoding="utf-8")
    write_csv(
        ws.path("glmm_coefficients.csv"),
        ["variable", "estimate", "std_error", "z_value", "p_value"],
        [
            (e.name, f"{e.estimate:.6f}", f"{e.std_error:.6f}", f"{e.z_value:.3f}", f"{e.p_value:.6f}")
            for e in fit.fixed_effects(dm.columns)
        ],
    )
    write_csv(
        ws.path("glmm_runs.csv"),
        ["seed", "loglik", "aic", "bic", "converged"],
        [
            (r.seed, f"{r.loglik:.6f}", f"{r.aic:.6f}", f"{r.bic:.6f}", r.converged)
            for r in runs
        ],
    )
    payload = {
        "sigma2": fit.sigma2_,
        "sigma": fit.sigma_,
        "loglik": fit.loglik_,
        "aic": fit.aic_,
        "bic": fit.bic_,
        "n_obs": fit.n_obs_,
        "converged": fit.converged_,
        "boundary": fit.boundary_,
        "run_seed": fit.run_seed_,
        "balanced_rows": dm.n_rows,
        "rejected_rows": [{"crash_key": k, "reason": r} for k, r in dm.rejected],
        "dropped_levels": [
            {"variable": v, "level": l, "count": c} for v, l, c in dm.dropped_levels
        ],
        "blups": {county: value for county, value in sorted(fit.blups_.items())},
    }
    ws.path("glmm_fit.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    clusters = {}
    with open(cluster_path, "r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            clusters[row["county"]] = row["cluster"]
    blups = dict(fit.blups_)
    unknown = sorted(set(blups) - set(clusters))
    if unknown and ws.force:
        # forced runs tolerate the mismatch by dropping the unknowns
        blups = {c: v for c, v in blups.items() if c in clusters}
    rows, missing = report_anomalies(blups, clusters)
    write_csv(
        ws.path("anomalies.csv"),
        ["county", "blup", "cluster"],
        [(county, f"{blup:.6f}", cluster) for county, blup, cluster in rows],
    )
    ws.path("anomalies.txt").write_text(render_anomalies(rows, missing), encoding="utf-8")
    return {
        "inputs": {
            "dataset.csv": dataset_path,
            "mismatch_labels.csv": labels_path,
            "lisa_cluster_map.csv": cluster_path,
        },
        "outputs": [
            "glmm_report.txt",
            "glmm_coefficients.csv",
            "glmm_runs.csv",
            "glmm_fit.json",
            "anomalies.csv",
            "anomalies.txt",
        ],
        "summary": {"aic": fit.aic_, "sigma": fit.sigma_},
    }


def stage_report(ws: Workspace, config: dict) -> dict:
    inputs = {}
    sections = [f"aimaudit report (version {__version__}, seed {config['seed']})", "=" * 60, ""]

    eval_path = ws.require_input("eval_report.json", "train")
    inputs["eval_report.json"] = eval_path
    metrics_text = ws.path("metrics_table.txt").read_text(encoding="utf-8")
    sections += ["Classification metrics", "----------------------", metrics_text, ""]

    report_path = ws.require_input("aim_report.json", "audit")
    inputs["aim_report.json"] = report_path
    payload = json.loads(Path(report_path).read_text(encoding="utf-8"))
    overall = payload["overall"]
    sections += [
        "Mismatch audit",
        "--------------",
        f"overall mismatch rate: {fmt_pct(overall['aim_pct'])}% "
        f"({overall['aim']} mismatch / {overall['nonaim']} non-mismatch)",
        "",
        "year series (year, mismatch, non-mismatch, rate%):",
    ]
    for year, block in sorted(payload["by_year"].items()):
        sections.append(
            f"  {year}  {block['aim']:>6d}  {block['nonaim']:>6d}  {fmt_pct(block['aim_pct'])}"
        )
    sections += ["", "severity series (severity, mismatch, non-mismatch, rate%):"]
    for severity, block in payload["by_severity"].items():
        sections.append(
            f"  {severity:<20}  {block['aim']:>6d}  {block['nonaim']:>6d}  "
            f"{fmt_pct(block['aim_pct'])}"
        )
    sections.append("")

    lisa_path = ws.require_input("lisa_table.csv", "lisa")
    inputs["lisa_table.csv"] = lisa_path
    with open(lisa_path, "r", encoding="utf-8", newline="") as handle:
        lisa_rows = [
            (row["county"], row["lisa_cluster"], float(row["pseudo_p"]), float(row["local_moran_i"]))
            for row in csv.DictReader(handle)
        ]
    sections += ["Local spatial clusters", "----------------------", render_lisa_table(lisa_rows)]

    glmm_path = ws.require_input("glmm_report.txt", "glmm")
    inputs["glmm_report.txt"] = glmm_path
    sections += [
        "Mismatch regression",
        "-------------------",
        Path(glmm_path).read_text(encoding="utf-8"),
    ]
    anomalies_path = ws.require_input("anomalies.txt", "glmm")
    inputs["anomalies.txt"] = anomalies_path
    sections.append(Path(anomalies_path).read_text(encoding="utf-8"))

    ws.path("report.txt").write_text("\n".join(sections), encoding="utf-8")
    return {"inputs": inputs, "outputs": ["report.txt"], "summary": {}}


STAGES = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "train": stage_train,
    "classify": stage_classify,
    "audit": stage_audit,
    "lisa": stage_lisa,
    "glmm": stage_glmm,
    "report": stage_report,
}

ALL_ORDER = ("train", "classify", "audit", "lisa", "glmm", "report")


def run_stage(ws: Workspace, name: str, config: dict) -> dict:
    started = time.perf_counter()
    try:
        result = STAGES[name](ws, config)
    except (ValidationFailure, StageFailure):
        raise
    except (ValueError, KeyError, OSError, RuntimeError) as err:
        raise StageFailure(f"{name}: {err}") from err
    duration = time.perf_counter() - started
    ws.record_stage(
        name,
        inputs={k: v for k, v in result["inputs"].items()},
        outputs=result["outputs"],
        duration=duration,
        config=_stage_config_slice(name, config),
    )
    return result


_STAGE_CONFIG_SECTIONS = {
    "synth": ("synth",),
    "ingest": (),
    "train": ("train",),
    "classify": ("train",),
    "audit": ("train",),
    "lisa": ("lisa",),
    "glmm": ("glmm",),
    "report": (),
}


def _stage_config_slice(name: str, config: dict) -> dict:
    keep = {"seed": config["seed"]}
    for key in _STAGE_CONFIG_SECTIONS.get(name, ()):
        keep[key] = config[key]
    return keep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aimaudit",
        description="Audit crash narratives for alcohol-involvement mismatch",
    )
    parser.add_argument("--config", help=f"config file (JSON); default ${CONFIG_ENV_VAR}")
    parser.add_argument("--seed", type=int, help="global seed deriving all stage seeds")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--force", action="store_true", help="ignore stale-input checks")
    parser.add_argument("--threads", type=int, help="worker threads for permutations")

    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="join the three source tables")
    p_ingest.add_argument("--driver-table")
    p_ingest.add_argument("--crash-table")
    p_ingest.add_argument("--narrative-table")

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--n-records", type=int)
    p_synth.add_argument("--prevalence", type=float)
    p_synth.add_argument("--mismatch-rate", type=float)

    p_train = sub.add_parser("train", help="fit TF-IDF and the classifier")
    p_train.add_argument("--ratio", type=float)
    p_train.add_argument("--sample-size", type=int)
    p_train.add_argument("--min-df", type=int)

    p_classify = sub.add_parser("classify", help="score every narrative")
    p_classify.add_argument("--threshold", type=float)
    p_classify.add_argument("--external-scores", help="use externally produced scores")

    p_audit = sub.add_parser("audit", help="mismatch categories and rates")
    p_audit.add_argument("--threshold", type=float)

    p_lisa = sub.add_parser("lisa", help="local Moran's I per county")
    p_lisa.add_argument("--n-perm", type=int)
    p_lisa.add_argument("--alpha", type=float)
    p_lisa.add_argument("--adjacency")

    p_glmm = sub.add_parser("glmm", help="random-intercept mismatch regression")
    p_glmm.add_argument("--n-runs", type=int)
    p_glmm.add_argument("--n-quadrature", type=int)

    sub.add_parser("report", help="assemble the consolidated report")

    p_all = sub.add_parser("all", help="run the whole pipeline in order")
    p_all.add_argument("--n-records", type=int)
    p_all.add_argument("--prevalence", type=float)
    p_all.add_argument("--mismatch-rate", type=float)
    p_all.add_argument("--ratio", type=float)
    p_all.add_argument("--sample-size", type=int)
    p_all.add_argument("--threshold", type=float)
    p_all.add_argument("--n-perm", type=int)
    p_all.add_argument("--alpha", type=float)
    p_all.add_argument("--adjacency")
    p_all.add_argument("--n-runs", type=int)
    p_all.add_argument("--n-quadrature", type=int)
    p_all.add_argument("--external-scores")

    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict = {}

    def put(section, key, value):
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    put("synth", "n_records", getattr(args, "n_records", None))
    put("synth", "alcohol_prevalence", getattr(args, "prevalence", None))
    put("synth", "injected_mismatch_rate", getattr(args, "mismatch_rate", None))
    put("train", "ratio", getattr(args, "ratio", None))
    put("train", "sample_size", getattr(args, "sample_size", None))
    put("train", "min_df", getattr(args, "min_df", None))
    put("train", "threshold", getattr(args, "threshold", None))
    put("lisa", "n_perm", getattr(args, "n_perm", None))
    put("lisa", "alpha", getattr(args, "alpha", None))
    put("glmm", "n_runs", getattr(args, "n_runs", None))
    put("glmm", "n_quadrature", getattr(args, "n_quadrature", None))
    if getattr(args, "adjacency", None) is not None:
        overrides["adjacency"] = args.adjacency
    if getattr(args, "external_scores", None) is not None:
        overrides["external_scores"] = args.external_scores
    if args.command == "ingest":
        tables = {
            "driver_table": getattr(args, "driver_table", None),
            "crash_table": getattr(args, "crash_table", None),
            "narrative_table": getattr(args, "narrative_table", None),
        }
        given = {k: v for k, v in tables.items() if v is not None}
        if given and len(given) != 3:
            missing = sorted(set(tables) - set(given))
            raise ValidationFailure(f"ingest needs all three tables; missing {missing}")
        if given:
            overrides["inputs"] = given
    return overrides


def _error_record(code: int, command: str, err: Exception) -> str:
    return json.dumps(
        {
            "error": {
                "stage": command,
                "type": type(err).__name__,
                "message": str(err),
                "exit_code": code,
            }
        },
        sort_keys=True,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides_from_args(args))
    except ValidationFailure as err:
        print(_error_record(EXIT_VALIDATION, args.command, err), file=sys.stderr)
        return EXIT_VALIDATION

    try:
        with Workspace(config["out_dir"], force=args.force) as ws:
            if args.command == "all":
                first = "ingest" if config.get("inputs") else "synth"
                for name in (first,) + ALL_ORDER:
                    result = run_stage(ws, name, config)
                    print(f"[{name}] ok {json.dumps(result['summary'], sort_keys=True)}")
            else:
                result = run_stage(ws, args.command, config)
                print(f"[{args.command}] ok {json.dumps(result['summary'], sort_keys=True)}")
    except ValidationFailure as err:
        print(_error_record(EXIT_VALIDATION, args.command, err), file=sys.stderr)
        return EXIT_VALIDATION
    except StageFailure as err:
        print(_error_record(EXIT_STAGE_FAILURE, args.command, err), file=sys.stderr)
        return EXIT_STAGE_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
