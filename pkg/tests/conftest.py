import json
from datetime import datetime, timedelta, timezone

import pytest

from fixfinder.advisory import AdvisoryRecord, RawAdvisory
from fixfinder.repominer import make_commit_record
from fixfinder.synth import SynthCommit, fast_import, generate_corpus

BASE = datetime(2020, 1, 1, tzinfo=timezone.utc)
DAY = 86_400


def ts(days):
    """Epoch seconds ``days`` after BASE."""
    return int((BASE + timedelta(days=days)).timestamp())


class RepoBuilder:
    """Linear-or-branched history built through fast-import.

    ``commit`` returns the mark; ``build`` returns mark -> sha.
    """

    def __init__(self, path):
        self.path = path
        self.commits = []
        self.tags = {}
        self.tips = {}

    def commit(self, message, days, files=None, branch="master", parents=None):
        mark = len(self.commits) + 1
        if parents is None:
            parents = [self.tips[branch]] if branch in self.tips else []
        self.commits.append(SynthCommit(mark, message, ts(days), dict(files or {}), list(parents), branch))
        self.tips[branch] = mark
        return mark

    def tag(self, name, mark, annotated_days=None):
        self.tags[name] = (mark, None if annotated_days is None else ts(annotated_days))

    def build(self, bare=True):
        return fast_import(self.path, self.commits, self.tags, bare=bare)


@pytest.fixture
def repo_builder(tmp_path):
    return RepoBuilder(tmp_path / "repo")


def make_advisory(cve_id="CVE-2020-1234", description="", published=None, urls=(), **extra):
    raw = RawAdvisory(cve_id, description, published or BASE, list(urls))
    return AdvisoryRecord(raw, **extra)


def record(cid, days=0.0, message="", files=(), diff=()):
    return make_commit_record(cid, BASE + timedelta(days=days), message, list(files), list(diff))


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The default 20-advisory synthetic corpus (generated once per session)."""
    out = tmp_path_factory.mktemp("corpus")
    planted = generate_corpus(out, seed=0)
    return out, planted


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    ok = rep.passed if rep.when == "call" else not rep.failed
    prev = _ACCEPTANCE.get(number, (title, True))
    _ACCEPTANCE[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")
