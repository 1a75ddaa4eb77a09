import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"

# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LABELS = {
    "test_metric_oracle_equivalence": (1, "metric oracle equivalence"),
    "test_table1_formatting": (2, "display formatting and forced extremes"),
    "test_prompt_goldens": (3, "prompt golden transcripts"),
    "test_parser_corpus": (4, "parser fixture corpus"),
    "test_end_to_end_determinism": (5, "end-to-end determinism"),
    "test_geometry_suite": (6, "geometry and mask metrics"),
    "test_conversation_templates": (7, "conversation template byte-exactness"),
    "test_review_durability": (8, "review kill durability"),
}

_ACCEPTANCE_RESULTS: dict[str, bool] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1].split("[")[0]
    if name not in ACCEPTANCE_LABELS:
        return
    if report.when == "call":
        _ACCEPTANCE_RESULTS[name] = report.passed and _ACCEPTANCE_RESULTS.get(name, True)
    elif report.failed:  # setup/teardown error
        _ACCEPTANCE_RESULTS[name] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, (num, label) in sorted(ACCEPTANCE_LABELS.items(), key=lambda kv: kv[1][0]):
        if name in _ACCEPTANCE_RESULTS:
            status = "PASS" if _ACCEPTANCE_RESULTS[name] else "FAIL"
            terminalreporter.write_line(f"[{status}] criterion {num}: {label}")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def fixture_corpus():
    from relqa.annotations import load_corpus

    return load_corpus(DATA / "fixture_corpus" / "manifest.json")


@pytest.fixture
def make_config(tmp_path):
    """Write a run config pointing at the fixture corpus; per-test dirs keep
    caches and outputs isolated."""

    def build(name="cfg", **overrides):
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        cfg = {
            "manifest": str((DATA / "fixture_corpus" / "manifest.json").resolve()),
            "run_seed": 7,
            "template_kinds": ["yesno", "wh"],
            "output_dir": str(root / "out"),
            "n_per_subset": 5,
            "n_positive": 15,
            "bench_rounds": 2,
            "gateway": {
                "backend": "mock",
                "mock_script": str((DATA / "mock_scripts" / "dataset.jsonl").resolve()),
                "cache_dir": str(root / "cache"),
                "usage_log": str(root / "usage.jsonl"),
            },
        }
        for key, value in overrides.items():
            if key.startswith("gateway."):
                cfg["gateway"][key.split(".", 1)[1]] = value
            else:
                cfg[key] = value
        path = root / "config.json"
        path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
        return path

    return build
