import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from audio2arkit.blendshape import default_schema
from audio2arkit.config import config_from_dict

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "corpus"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture
def make_config(tmp_path):
    def make(output=None, corpus=CORPUS, **overrides):
        doc = {"paths": {"corpus": str(corpus), "output": str(output or tmp_path / "out")}}
        for key, value in overrides.items():
            if isinstance(value, dict):
                doc.setdefault(key, {}).update(value)
            else:
                doc[key] = value
        return config_from_dict(doc, ROOT)
    return make


# ---------------------------------------------------------------- criterion summary

_criteria: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    num, title = marker
    entry = _criteria.setdefault(num, {"title": title, "ok": True, "ran": False})
    if report.when == "call" or report.outcome != "passed":
        entry["ran"] = True
        if report.outcome != "passed":
            entry["ok"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"AC{num} {status}  {e['title']}")
