import hashlib
import json

import pytest

from abmediate import report


@pytest.fixture(scope="module")
def small_bundle(small_scenario):
    config = report.ReportConfig(seed=7, scenario=small_scenario,
                                 n_param_draws=150, bootstrap_reps=100)
    return report.build_report(config), config


EXPECTED_FILES = {
    "data.csv", "summary.json", "table2.json", "mediation.json",
    "sensitivity_with_confounder.csv", "sensitivity_without_confounder.csv",
    "provenance.json",
}


def test_bundle_contains_all_artifacts(small_bundle):
    bundle, _ = small_bundle
    assert set(bundle.files) == EXPECTED_FILES


def test_table2_has_four_methods_in_order(small_bundle):
    bundle, _ = small_bundle
    doc = json.loads(bundle.files["table2.json"])
    methods = [row["method"] for row in doc["rows"]]
    assert methods == ["unadjusted-ate", "adjusted-regression",
                       "two-stage business=1", "two-stage business=0"]


def test_table2_values_are_rounded_module_outputs(small_bundle):
    bundle, _ = small_bundle
    doc = json.loads(bundle.files["table2.json"])
    for row, full in zip(doc["rows"], bundle.table2_rows):
        assert row["per_day"] == round(full["per_day"], 3)
        assert row["p_value"] == round(full["p_value"], 3)


def test_mediation_json_schema(small_bundle):
    bundle, _ = small_bundle
    doc = json.loads(bundle.files["mediation.json"])
    for key in ("ate", "acme_0", "acme_1", "ade_0", "ade_1", "acme_avg", "ade_avg"):
        assert set(doc[key]) == {"point", "ci_low", "ci_high", "p_value", "per_day"}
    assert doc["seed"] == 7
    assert "config" in doc
    assert "provenance" in doc


def test_summary_matches_dataset(small_bundle, small_scenario):
    bundle, config = small_bundle
    doc = json.loads(bundle.files["summary.json"])
    assert doc["n_units"] == small_scenario.n_units
    assert abs(sum(row["share_of_visitors"] for row in doc["cells"]) - 1.0) <= 1e-12


def test_provenance_digests_match(small_bundle):
    bundle, config = small_bundle
    manifest = json.loads(bundle.files["provenance.json"])
    assert manifest["seed"] == config.seed
    assert manifest["config_hash"] == report.config_hash(config.to_dict())
    for name, digest in manifest["files"].items():
        assert hashlib.sha256(bundle.files[name]).hexdigest() == digest


def test_every_json_artifact_declares_seed_and_hash(small_bundle):
    bundle, config = small_bundle
    expected_hash = report.config_hash(config.to_dict())
    for name in ("summary.json", "table2.json", "mediation.json", "provenance.json"):
        doc = json.loads(bundle.files[name])
        block = doc.get("provenance", doc)
        assert block["seed"] == config.seed
        assert block["config_hash"] == expected_hash


def test_bundle_reproducible(small_scenario):
    config = report.ReportConfig(seed=3, scenario=small_scenario,
                                 n_param_draws=120, bootstrap_reps=100)
    a = report.build_report(config)
    b = report.build_report(config)
    assert a.files == b.files


def test_bundle_write_round_trip(tmp_path, small_bundle):
    bundle, _ = small_bundle
    written = bundle.write(tmp_path / "out")
    assert {path.name for path in written} == EXPECTED_FILES
    for path in written:
        assert path.read_bytes() == bundle.files[path.name]


def test_sensitivity_files_differ(small_bundle):
    bundle, _ = small_bundle
    assert bundle.files["sensitivity_with_confounder.csv"] != \
        bundle.files["sensitivity_without_confounder.csv"]
