from collections import Counter

import pytest

from fixfinder.pipeline import read_dataset
from fixfinder.repominer import GitRepo
from fixfinder.synth import default_signals, generate_corpus


def test_default_signal_mix():
    assert Counter(default_signals(20)) == {"cve_message": 7, "nvd_reference": 7, "path_tokens": 6}
    assert len(default_signals(5)) == 5


def test_same_seed_same_corpus(tmp_path):
    a = generate_corpus(tmp_path / "a", n_advisories=4, n_repos=2, seed=11)
    b = generate_corpus(tmp_path / "b", n_advisories=4, n_repos=2, seed=11)
    c = generate_corpus(tmp_path / "c", n_advisories=4, n_repos=2, seed=12)
    assert [p.fix_id for p in a] == [p.fix_id for p in b]
    assert (tmp_path / "a" / "dataset.tsv").read_text() == (tmp_path / "b" / "dataset.tsv").read_text()
    assert [p.fix_id for p in a] != [p.fix_id for p in c]


def test_dataset_points_at_planted_fixes(corpus):
    out, planted = corpus
    entries = read_dataset(out / "dataset.tsv")
    assert [e.cve_id for e in entries] == [p.cve_id for p in planted]
    for entry, p in zip(entries, planted):
        assert entry.fixes == [p.fix_id]
        repo = GitRepo(entry.repo)
        assert repo.resolve(p.fix_id) == p.fix_id
        if p.signal == "cve_message":
            assert p.cve_id in repo.extract_commit(p.fix_id).message


def test_signal_count_must_match(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(tmp_path, n_advisories=3, signals=["cve_message"])
