"""CLI orchestration tests: stages, manifest, determinism, error paths."""

import csv
import json

import pytest

from aimaudit.cli import (
    CONFIG_ENV_VAR,
    EXIT_OK,
    EXIT_STAGE_FAILURE,
    EXIT_VALIDATION,
    ValidationFailure,
    load_config,
    main,
    stage_seed,
)

SMALL_CONFIG = {
    "seed": 3,
    "synth": {"n_records": 2500, "alcohol_prevalence": 0.15, "injected_mismatch_rate": 0.24},
    "train": {"sample_size": 1500, "regularization": 0.3, "tol": 1e-6},
    "lisa": {"n_perm": 199, "alpha": 0.05},
    "glmm": {"n_runs": 3, "n_quadrature": 9, "tolerance": 1e-5, "max_iter": 500, "min_level_count": 5},
}

# the documented end-to-end smoke size
FULL_CONFIG = dict(SMALL_CONFIG, synth={"n_records": 5000, "alcohol_prevalence": 0.15,
                                        "injected_mismatch_rate": 0.24})

BUNDLE_FILES = [
    "dataset.csv",
    "truth.csv",
    "tfidf_model.txt",
    "classifier_model.txt",
    "eval_report.json",
    "metrics_table.txt",
    "predictions.csv",
    "mismatch_labels.csv",
    "aim_report.json",
    "aim_by_year.csv",
    "aim_by_severity.csv",
    "aim_by_county.csv",
    "recorded_counts.csv",
    "adjacency.csv",
    "lisa_table.csv",
    "lisa_cluster_map.csv",
    "lisa_excluded.csv",
    "glmm_report.txt",
    "glmm_coefficients.csv",
    "glmm_runs.csv",
    "glmm_fit.json",
    "anomalies.csv",
    "anomalies.txt",
    "report.txt",
]


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    """One complete 5,000-record pipeline run shared by read-only assertions."""
    tmp_path = tmp_path_factory.mktemp("cli_full")
    config = write_config(tmp_path, FULL_CONFIG)
    out = tmp_path / "out"
    code = main(["--config", config, "--out", str(out), "all"])
    assert code == EXIT_OK
    return tmp_path, config, out


class TestFullPipeline:
    def test_bundle_complete(self, full_run):
        _, _, out = full_run
        for name in BUNDLE_FILES + ["manifest.json"]:
            assert (out / name).exists(), name

    def test_report_contains_all_sections(self, full_run):
        _, _, out = full_run
        text = (out / "report.txt").read_text(encoding="utf-8")
        for heading in (
            "Classification metrics",
            "Mismatch audit",
            "year series",
            "severity series",
            "Local spatial clusters",
            "Mismatch regression",
            "Random effects:",
            "Fixed effects:",
        ):
            assert heading in text

    def test_manifest_records_all_stages(self, full_run):
        _, _, out = full_run
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        for stage in ("synth", "train", "classify", "audit", "lisa", "glmm", "report"):
            assert stage in manifest["stages"]
            assert manifest["stages"][stage]["duration_s"] >= 0
            assert manifest["stages"][stage]["outputs"]

    def test_metrics_table_layout(self, full_run):
        _, _, out = full_run
        table = (out / "metrics_table.txt").read_text(encoding="utf-8").splitlines()
        assert "Precision" in table[0] and "Support" in table[0]
        assert table[1].startswith("Training  Alcohol")
        assert table[2].lstrip().startswith("No Alcohol")
        assert table[3].lstrip().startswith("Accuracy")
        assert table[4].startswith("Testing")

    def test_lisa_table_two_decimals(self, full_run):
        _, _, out = full_run
        with open(out / "lisa_table.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert rows
        for row in rows:
            assert len(row["pseudo_p"].split(".")[1]) == 2
            assert row["lisa_cluster"] in (
                "High-High", "Low-Low", "Low-High", "High-Low", "Not-Significant", "Isolate",
            )

    def test_glmm_report_block_order(self, full_run):
        _, _, out = full_run
        text = (out / "glmm_report.txt").read_text(encoding="utf-8")
        assert text.index("Random effects:") < text.index("Fixed effects:")
        assert "Std. Dev" in text and "Pr(>z)" in text

    def test_idempotent_rerun_of_one_stage(self, full_run):
        _, config, out = full_run
        before = (out / "aim_report.json").read_bytes()
        code = main(["--config", config, "--out", str(out), "audit"])
        assert code == EXIT_OK
        assert (out / "aim_report.json").read_bytes() == before


class TestDeterminism:
    def test_two_runs_byte_identical_across_thread_counts(self, tmp_path):
        config = write_config(tmp_path, SMALL_CONFIG)
        outs = []
        for name, threads in (("a", "1"), ("b", "4")):
            out = tmp_path / name
            code = main(["--config", config, "--out", str(out), "--threads", threads, "all"])
            assert code == EXIT_OK
            outs.append(out)
        for name in BUNDLE_FILES:
            a = (outs[0] / name).read_bytes()
            b = (outs[1] / name).read_bytes()
            assert a == b, name

    def test_seed_changes_values_not_schema(self, tmp_path):
        config_payload = dict(SMALL_CONFIG)
        config = write_config(tmp_path, config_payload)
        headers = {}
        for seed, name in ((3, "s3"), (4, "s4")):
            out = tmp_path / name
            code = main(["--config", config, "--out", str(out), "--seed", str(seed), "all"])
            assert code == EXIT_OK
            with open(out / "predictions.csv", newline="") as handle:
                headers[name] = next(csv.reader(handle))
        assert headers["s3"] == headers["s4"]
        a = (tmp_path / "s3" / "dataset.csv").read_bytes()
        b = (tmp_path / "s4" / "dataset.csv").read_bytes()
        assert a != b


class TestErrorPaths:
    def test_audit_without_predictions_is_validation_error(self, tmp_path, capsys):
        config = write_config(tmp_path, SMALL_CONFIG)
        out = tmp_path / "out"
        assert main(["--config", config, "--out", str(out), "synth"]) == EXIT_OK
        code = main(["--config", config, "--out", str(out), "audit"])
        assert code == EXIT_VALIDATION
        record = json.loads(capsys.readouterr().err.strip())
        assert "predictions.csv" in record["error"]["message"]

    def test_stale_input_detected(self, tmp_path, capsys):
        config = write_config(tmp_path, SMALL_CONFIG)
        out = tmp_path / "out"
        assert main(["--config", config, "--out", str(out), "all"]) == EXIT_OK
        # tamper with an upstream artifact
        with open(out / "predictions.csv", "a", newline="") as handle:
            handle.write("999999,Alcoholic,0.9,native\n")
        code = main(["--config", config, "--out", str(out), "audit"])
        assert code == EXIT_VALIDATION
        record = json.loads(capsys.readouterr().err.strip())
        assert "stale" in record["error"]["message"]

    def test_force_overrides_stale(self, tmp_path):
        config = write_config(tmp_path, SMALL_CONFIG)
        out = tmp_path / "out"
        assert main(["--config", config, "--out", str(out), "all"]) == EXIT_OK
        # edit one score in place: content changes but stays valid
        path = out / "predictions.csv"
        lines = path.read_text(encoding="utf-8").splitlines()
        key, label, _, source = lines[1].split(",")
        lines[1] = ",".join([key, label, "0.987654321", source])
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert main(["--config", config, "--out", str(out), "audit"]) == EXIT_VALIDATION
        assert main(["--config", config, "--out", str(out), "--force", "audit"]) == EXIT_OK

    def test_invalid_config_fraction(self, tmp_path, capsys):
        payload = dict(SMALL_CONFIG)
        payload["train"] = dict(payload["train"], ratio=1.5)
        config = write_config(tmp_path, payload)
        code = main(["--config", config, "--out", str(tmp_path / "out"), "synth"])
        assert code == EXIT_VALIDATION
        record = json.loads(capsys.readouterr().err.strip())
        assert "ratio" in record["error"]["message"]

    def test_lock_file_blocks_concurrent_run(self, tmp_path, capsys):
        config = write_config(tmp_path, SMALL_CONFIG)
        out = tmp_path / "out"
        out.mkdir()
        (out / ".aimaudit.lock").write_text("123", encoding="utf-8")
        code = main(["--config", config, "--out", str(out), "synth"])
        assert code == EXIT_VALIDATION
        record = json.loads(capsys.readouterr().err.strip())
        assert "locked" in record["error"]["message"]

    def test_missing_config_file(self, capsys):
        code = main(["--config", "/nonexistent/config.json", "synth"])
        assert code == EXIT_VALIDATION

    def test_config_env_var(self, tmp_path, monkeypatch):
        payload = dict(SMALL_CONFIG)
        config = write_config(tmp_path, payload)
        monkeypatch.setenv(CONFIG_ENV_VAR, config)
        loaded = load_config()
        assert loaded["synth"]["n_records"] == 2500

    def test_flags_override_config(self, tmp_path):
        config = write_config(tmp_path, SMALL_CONFIG)
        loaded = load_config(config, {"synth": {"n_records": 77}})
        assert loaded["synth"]["n_records"] == 77
        assert loaded["synth"]["alcohol_prevalence"] == 0.15


class TestIngestCommand:
    def test_ingest_subcommand(self, tmp_path, capsys):
        from tests.test_corpus import make_tables, driver_row, crash_row, narrative_row

        paths = make_tables(
            tmp_path,
            [driver_row(k) for k in (1, 2)],
            [crash_row(k) for k in (1, 2)],
            [narrative_row(k) for k in (1, 2)],
        )
        out = tmp_path / "out"
        code = main(
            [
                "--out", str(out), "ingest",
                "--driver-table", str(paths[0]),
                "--crash-table", str(paths[1]),
                "--narrative-table", str(paths[2]),
            ]
        )
        assert code == EXIT_OK
        report = json.loads((out / "ingest_report.json").read_text(encoding="utf-8"))
        assert report["accepted"] == 2
        assert (out / "dataset.csv").exists()


class TestExternalScores:
    def test_external_scores_flow_matches_native(self, tmp_path):
        config = write_config(tmp_path, SMALL_CONFIG)
        out = tmp_path / "out"
        assert main(["--config", config, "--out", str(out), "all"]) == EXIT_OK
        native_labels = (out / "mismatch_labels.csv").read_bytes()

        # replay the native scores through the external adapter
        scores = tmp_path / "scores.csv"
        with open(out / "predictions.csv", newline="") as src, open(
            scores, "w", newline=""
        ) as dst:
            writer = csv.writer(dst, lineterminator="\n")
            writer.writerow(["CRASH_KEY", "SCORE"])
            for row in csv.DictReader(src):
                writer.writerow([row["CRASH_KEY"], row["SCORE"]])

        code = main(
            ["--config", config, "--out", str(out), "classify", "--external-scores", str(scores)]
        )
        assert code == EXIT_OK
        report = json.loads((out / "external_scores_report.json").read_text(encoding="utf-8"))
        assert report["source"] == "external"
        assert report["unmatched_keys"] == []
        assert main(["--config", config, "--out", str(out), "audit"]) == EXIT_OK
        assert (out / "mismatch_labels.csv").read_bytes() == native_labels


def test_stage_seed_derivation_is_stable():
    assert stage_seed(3, "lisa") == stage_seed(3, "lisa")
    assert stage_seed(3, "lisa") != stage_seed(4, "lisa")
    assert stage_seed(3, "lisa") != stage_seed(3, "glmm")


def test_validation_failure_for_missing_input_paths(tmp_path):
    with pytest.raises(ValidationFailure, match="does not exist"):
        load_config(None, {"adjacency": str(tmp_path / "nope.csv")})
