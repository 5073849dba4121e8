import json

import numpy as np
import pytest

from patsim.config import RunConfig
from patsim.model import load_model
from patsim.pipeline import run_evaluation
from patsim.report import MODEL_FILE, RECORDS_FILE, REPORT_FILE, ReportBuilder, record_lines, write_report

METHODS = ("snapshot", "global", "subsequence")


@pytest.fixture
def report(toy_cohort):
    config = RunConfig(methods=METHODS, grid_c=(1.0,), grid_rank=(2,), grid_lambda=(0.1,), inner_k=2, jobs=1)
    return run_evaluation(toy_cohort, config)


class TestReportText:
    def test_sections(self, report):
        text = ReportBuilder().create_report_text(report)
        for heading in ("AUROC (95% CI)", "Pairwise DeLong z-tests", "Contingency at cutoff 0.5",
                        "Largest probability differences: subsequence - snapshot",
                        "Series length: subsequence vs global"):
            assert heading in text
        assert "Subsequence matching" in text and "Snapshot features" in text
        top_feature = report.results["snapshot"].top_features[0][0]
        assert f"final-visit {top_feature} median:" in text

    def test_summary_section(self, report):
        lines = ReportBuilder().create_summary_section(report.summary)
        assert "Patients: 12  Visits: 72  Median visits: 6" in lines
        assert "Visit histogram: 6:12" in lines


class TestRecords:
    def test_record_types(self, report):
        records = ReportBuilder().create_records(report)
        types = [r["type"] for r in records]
        assert types[:2] == ["config", "summary"]
        assert types.count("method") == 3
        assert types.count("prediction") == 3 * 36
        assert types.count("ztest") == 3
        assert types.count("contingency") == 2
        assert types.count("top_difference") == 10
        assert types.count("length_strata") == 1

    def test_snapshot_distribution(self, report):
        snapshot = report.results["snapshot"]
        records = [r for r in ReportBuilder().create_records(report) if r["type"] == "snapshot_distribution"]
        observed = [v for v in snapshot.top_feature_values if not np.isnan(v)]
        assert len(records) == len(observed) >= 18
        assert {r["feature"] for r in records} == {snapshot.top_features[0][0]}
        assert {r["label"] for r in records} == {0, 1}
        assert all(r["method"] == "snapshot" for r in records)

    def test_config_record_has_no_runtime_fields(self, report):
        config = ReportBuilder().create_records(report)[0]
        assert "jobs" not in config and "cache_dir" not in config and "out_dir" not in config
        assert config["fingerprint"] == report.fingerprint

    def test_lines_are_json(self, report):
        for line in record_lines(ReportBuilder().create_records(report)):
            assert isinstance(json.loads(line), dict)

    def test_records_do_not_depend_on_jobs(self, toy_cohort, report):
        parallel = run_evaluation(toy_cohort, report.config.with_overrides(jobs=3))
        builder = ReportBuilder()
        assert record_lines(builder.create_records(parallel)) == record_lines(builder.create_records(report))


def test_write_report(report, tmp_path):
    paths = write_report(report, tmp_path / "out")
    assert paths["report"].endswith(REPORT_FILE)
    assert paths["records"].endswith(RECORDS_FILE)
    with open(paths["records"]) as f:
        assert len(f.readlines()) == len(ReportBuilder().create_records(report))

    assert paths["model"].endswith(MODEL_FILE)
    model = load_model(paths["model"])
    refit = report.results["snapshot"].final_model
    assert model.feature_names == ("MRI[0]", "MRI[1]", "PET[0]")
    assert model.weights.tolist() == refit.weights.tolist() and model.bias == refit.bias


def test_no_model_file_without_snapshot(toy_cohort, tmp_path):
    config = RunConfig(methods=("global",), grid_c=(1.0,), grid_rank=(2,), grid_lambda=(0.1,), inner_k=2, jobs=1)
    paths = write_report(run_evaluation(toy_cohort, config), tmp_path)
    assert "model" not in paths
    assert not (tmp_path / MODEL_FILE).exists()
