import io
from datetime import timedelta
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import BASE, make_advisory, record
from fixfinder.features import (
    COL, FEATURE_NAMES, FIX_WORDS, IDENTITY_COLUMNS, N_FEATURES, PER_ADVISORY_COLUMNS, UNIVERSAL_COLUMNS,
    PipelineConfig, ScalingScheme, TfidfIndex, UnfittedScaler, assemble, id_features, lexical_similarities,
    message_ref_flags, minmax, path_similarity, reachability_score, referred_features, resolve_anchors,
    time_distance_features, write_feature_table,
)
from fixfinder.repominer import Tag, build_tag_tree

GOLDEN = Path(__file__).parent / "data" / "features_golden.tsv"


def test_feature_layout():
    assert N_FEATURES == 23
    assert FEATURE_NAMES[0] == "vuln_id_in_message"
    assert FEATURE_NAMES[-1] == "vulnerability_timestamp"
    assert list(FIX_WORDS) == ["security", "cve", "patch", "vulnerability", "vulnerable",
                               "advisory", "attack", "exploit", "exploitable"]
    parts = set(UNIVERSAL_COLUMNS) | set(PER_ADVISORY_COLUMNS) | set(IDENTITY_COLUMNS)
    assert parts == set(range(23))
    assert len(UNIVERSAL_COLUMNS) + len(PER_ADVISORY_COLUMNS) + len(IDENTITY_COLUMNS) == 23


def test_pipeline_config_validation():
    assert PipelineConfig().diff_line_limit == 10_000
    with pytest.raises(ValueError):
        PipelineConfig(commit_prefix_len=0)


# -- simple features ----------------------------------------------------------


def test_id_features():
    assert id_features("CVE-2019-1234", "fix CVE-2019-1234") == (1.0, 0.0)
    assert id_features("CVE-2019-1234", "backport CVE-2018-9999 fix") == (0.0, 1.0)
    assert id_features("CVE-2019-1234", "fix npe") == (0.0, 0.0)
    assert id_features("CVE-2019-1234", "fixes cve-2019-1234") == (1.0, 0.0)


def test_referred_features():
    adv = make_advisory(nvd_commit_prefixes={"abcdef12"}, advisory_commit_prefixes={"12345678"})
    assert referred_features(adv, "abcdef12" + "0" * 32) == (1.0, 0.0)
    assert referred_features(adv, "12345678" + "0" * 32) == (0.0, 1.0)
    assert referred_features(make_advisory(), "abcdef12" + "0" * 32) == (0.0, 0.0)


def test_message_ref_flags():
    assert message_ref_flags("Close #306 and #359") == (1.0, 0.0)
    assert message_ref_flags("SOLR-12345: harden parser") == (0.0, 1.0)
    assert message_ref_flags("CVE-2020-1234 fix") == (0.0, 0.0)
    assert message_ref_flags("see (HADOOP-1), thanks") == (0.0, 1.0)


# -- path similarity ----------------------------------------------------------


def test_path_similarity_examples():
    assert path_similarity(["example/file.py"], ["project/main/example/file.py"]) == 3
    assert path_similarity(["example/file.py"], ["other/thing.py"]) == 0
    assert path_similarity([], ["a/b.py"]) == 0


def test_path_similarity_extensionless():
    assert path_similarity(["main/example"], ["project/main/example.py"]) == 2
    assert path_similarity(["example"], ["project/example.py"]) == 1
    assert path_similarity(["example/file.py", "lib/util"], ["x/example/file.py", "lib/util.c"]) == 5


segments = st.sampled_from(["a", "b", "src", "main", "file", "util"])
ext = st.sampled_from(["", ".py", ".c", ".java"])
paths = st.builds(lambda parts, e: "/".join(parts) + e, st.lists(segments, min_size=1, max_size=4), ext)


@settings(max_examples=500, deadline=None)
@given(st.lists(paths, max_size=6), st.lists(paths, max_size=6))
def test_path_similarity_matches_brute_force(desc_paths, files):
    assert path_similarity(desc_paths, files) == oracles.path_similarity(desc_paths, files)


# -- lexical similarity -------------------------------------------------------


def test_tfidf_identical_and_orthogonal():
    index = TfidfIndex([["alpha", "beta"], ["gamma"], ["delta", "delta"]])
    sims = index.similarities(["alpha", "beta"])
    assert sims[0] == pytest.approx(1.0, abs=1e-12)
    assert sims[1] == 0.0 and sims[2] == 0.0
    assert np.all(index.similarities([]) == 0.0)
    assert np.all(index.similarities(["unknown"]) == 0.0)


def test_tfidf_empty_document():
    index = TfidfIndex([[], ["a1"]])
    assert index.similarities(["a1"]).tolist() == [0.0, 1.0]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdefg"), max_size=10), min_size=1, max_size=6),
       st.lists(st.sampled_from("abcdefgh"), max_size=8), st.integers(0, 5))
def test_tfidf_matches_oracle_and_length_invariance(corpus, query, which):
    got = TfidfIndex(corpus).similarities(query)
    np.testing.assert_allclose(got, oracles.tfidf_cosine(corpus, query), atol=1e-9)
    which %= len(corpus)
    doubled = [doc * 2 if i == which else doc for i, doc in enumerate(corpus)]
    # document frequencies do not change when tokens are duplicated, so cosines must not either
    np.testing.assert_allclose(TfidfIndex(doubled).similarities(query), got, atol=1e-12)


def _fixture_candidates():
    return [
        record("a" * 40, -40, "Fix XML entity resolution in XmlParser (security)", ["src/xml/XmlParser.java"],
               ["@@ -1 +1 @@", "-resolveEntity(dtd);", "+disableExternalEntity(dtd);"]),
        record("b" * 40, -20, "Update docs for the CLI", ["docs/cli.md", "src/cli/Main.java"],
               ["@@ -3 +3 @@", "-old usage", "+new usage text"]),
        record("c" * 40, -5, "Refactor token cache #12", ["src/cache/TokenCache.java"],
               ["@@ -9,2 +9,2 @@", " cache.put(key)", "-evict()", "+evictOldest()"]),
        record("d" * 40, 3, "Merge pull request #40 from dev/xml", ["src/xml/XmlReader.java", "pom.xml"],
               ["@@ -1 +1,2 @@", " parser.read()", "+parser.close()"]),
    ]


def _fixture_advisory():
    return make_advisory(
        "CVE-2020-5555",
        "XML external entity vulnerability in XmlParser of src/xml/XmlParser.java through 1.2.0 "
        "lets attackers read files via resolveEntity.",
        published=BASE,
        versions=["1.2.0"], paths=["src/xml/XmlParser.java"], code_tokens=["XmlParser", "resolveEntity"],
        nvd_commit_prefixes={"aaaaaaaa"}, advisory_commit_prefixes={"cccccccc"},
        reference_keywords=["xml", "entiti", "parser", "secur", "file"],
    )


def test_lexical_matches_oracle_on_fixture():
    adv, cands = _fixture_advisory(), _fixture_candidates()
    got = lexical_similarities(adv, cands)
    np.testing.assert_allclose(got, oracles.lexical_oracle(adv, cands, list(FIX_WORDS)), atol=1e-9)
    assert got.shape == (4, 9)
    assert np.all((got >= 0) & (got <= 1))


def test_lexical_needs_candidates():
    with pytest.raises(ValueError):
        lexical_similarities(_fixture_advisory(), [])


def test_fix_words_only_in_message_query():
    adv = make_advisory(description="")
    cands = [record("a" * 40, message="security patch", files=["security/patch.py"], diff=["+security patch"]),
             record("b" * 40, message="other", files=["other.py"], diff=["+other"])]
    got = lexical_similarities(adv, cands)
    assert got[0, 0] > 0  # message vs description + fix words
    assert got[0, 3] == 0 and got[0, 6] == 0  # files / diff vs plain (empty) description


# -- time and reachability ----------------------------------------------------


def test_time_distance_examples():
    pub = BASE
    before = [pub - timedelta(days=d) for d in (30, 20, 10)]
    np.testing.assert_allclose(time_distance_features(before, pub)[:, 0], [0.5, 0.75, 1.0])
    assert time_distance_features([pub + timedelta(days=1)], pub).tolist() == [[0.0, 1.0]]
    assert time_distance_features([pub], pub).tolist() == [[0.0, 1.0]]
    mixed = time_distance_features([pub - timedelta(days=1), pub, pub + timedelta(days=1),
                                    pub + timedelta(days=2)], pub)
    assert mixed.tolist() == [[1.0, 0.0], [0.0, 1.0], [0.0, 0.75], [0.0, 0.5]]


def _anchor(days_after_base, target="t" * 40):
    return Tag("v1.0.0", BASE + timedelta(days=days_after_base), target)


def test_reachability_examples():
    commit = record("a" * 40, 0)
    reach = {"a" * 40}
    assert reachability_score(commit, [_anchor(5)], lambda t: reach) == 0.95
    assert reachability_score(commit, [_anchor(150)], lambda t: reach) == 0.0
    assert reachability_score(commit, [_anchor(5)], lambda t: set()) == 0.0
    assert reachability_score(commit, [], lambda t: reach) == 0.0
    assert reachability_score(commit, [_anchor(100)], lambda t: reach) == pytest.approx(0.0)
    assert reachability_score(commit, [_anchor(50), _anchor(5)], lambda t: reach) == 0.95


def test_reachability_floors_partial_days():
    commit = record("a" * 40, 0)
    tag = Tag("v1", BASE + timedelta(days=5, hours=23), "t" * 40)
    assert reachability_score(commit, [tag], lambda t: {"a" * 40}) == 0.95


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100))
def test_reachability_antitone(d1, d2):
    commit = record("a" * 40, 0)
    near, far = sorted((d1, d2))
    s_near = reachability_score(commit, [_anchor(near)], lambda t: {"a" * 40})
    s_far = reachability_score(commit, [_anchor(far)], lambda t: {"a" * 40})
    assert s_near >= s_far
    assert 0.0 <= s_far <= 1.0


def test_resolve_anchors():
    tree = build_tag_tree([_anchor(1), Tag("v1.1.0", BASE + timedelta(days=9), "u" * 40)])
    anchors = resolve_anchors(["1.0.0", "1.0.0", "7.7"], tree)
    assert [a.name for a in anchors] == ["v1.1.0"]


# -- assembly -----------------------------------------------------------------


def _fixture_matrix():
    adv, cands = _fixture_advisory(), _fixture_candidates()
    anchor = Tag("v1.3.0", BASE - timedelta(days=2), "e" * 40)
    reach = {"a" * 40, "b" * 40, "c" * 40}
    return cands, assemble(adv, cands, [anchor], lambda t: reach)


def test_assemble_fixture_against_sub_operations():
    cands, X = _fixture_matrix()
    adv = _fixture_advisory()
    assert X.shape == (4, 23)
    assert X[:, COL["vuln_id_in_message"]].tolist() == [0, 0, 0, 0]
    assert X[:, COL["referred_by_nvd"]].tolist() == [1, 0, 0, 0]
    assert X[:, COL["referred_by_advisories"]].tolist() == [0, 0, 1, 0]
    assert X[:, COL["has_github_issue_ref"]].tolist() == [0, 0, 1, 1]
    assert X[:, COL["path_similarity"]].tolist() == [4, 0, 0, 0]
    np.testing.assert_allclose(X[:, 10:19], oracles.lexical_oracle(adv, cands, list(FIX_WORDS)), atol=1e-9)
    assert X[:, COL["time_distance_before"]].tolist() == [0.5, 0.75, 1.0, 0.0]
    assert X[:, COL["time_distance_after"]].tolist() == [0, 0, 0, 1.0]
    np.testing.assert_allclose(X[:, COL["reachability"]], [0.62, 0.82, 0.97, 0.0], atol=1e-12)
    assert np.all(X[:, COL["vulnerability_timestamp"]] == BASE.timestamp())


def test_assemble_matches_golden_file():
    cands, X = _fixture_matrix()
    lines = GOLDEN.read_text().splitlines()
    assert lines[0].split("\t") == ["commit_id", *FEATURE_NAMES]
    golden = np.array([[float(v) for v in ln.split("\t")[1:]] for ln in lines[1:]])
    assert [ln.split("\t")[0] for ln in lines[1:]] == [c.id for c in cands]
    np.testing.assert_allclose(X, golden, rtol=0, atol=1e-12)


def test_assemble_single_and_empty_commit():
    adv = _fixture_advisory()
    X = assemble(adv, [record("f" * 40, -1)])
    assert X.shape == (1, 23)
    assert X[0, COL["n_hunks"]] == 0 and X[0, COL["avg_hunk_size"]] == 0
    assert np.all(X[0, 16:19] == 0)
    assert X[0, COL["time_distance_before"]] == 1.0
    with pytest.raises(ValueError):
        assemble(adv, [])


word = st.sampled_from(["xml", "parser", "fix", "cache", "entity", "CVE-2020-5555", "#3", "ABC-1", "Main"])
cand_strategy = st.builds(
    lambda i, day, msg, files, diff: record(f"{i:040x}", day, " ".join(msg), files, diff),
    st.integers(0, 10**6), st.floats(-700, 99), st.lists(word, max_size=6),
    st.lists(st.sampled_from(["src/xml/XmlParser.java", "a.py", "docs/x.md", "src/Main.java"]), max_size=3),
    st.lists(st.sampled_from(["@@ -1 +1 @@", "+xml entity", "-cache", " parser"]), max_size=8),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(cand_strategy, min_size=1, max_size=8, unique_by=lambda c: c.id))
def test_feature_vector_invariants(cands):
    cands.sort(key=lambda c: (c.timestamp, c.id))
    X = assemble(_fixture_advisory(), cands, [Tag("v1.3.0", BASE, "e" * 40)], lambda t: {c.id for c in cands})
    for col in ("vuln_id_in_message", "other_vuln_id_in_message", "referred_by_nvd",
                "referred_by_advisories", "has_github_issue_ref", "has_jira_ref"):
        assert set(X[:, COL[col]]) <= {0.0, 1.0}
    assert np.all((X[:, 10:19] >= 0) & (X[:, 10:19] <= 1))
    for f20, f21 in X[:, 19:21]:
        assert (f20 == 0) != (f21 == 0)
        assert max(f20, f21) >= 0.5 and max(f20, f21) <= 1.0
    assert np.all((X[:, COL["reachability"]] >= 0) & (X[:, COL["reachability"]] <= 1))
    assert np.all(X[:, COL["path_similarity"]] >= 0)


def test_write_feature_table():
    buf = io.StringIO()
    write_feature_table(buf, ["a" * 40], np.arange(23.0).reshape(1, 23))
    header, row = buf.getvalue().splitlines()
    assert header.split("\t") == ["commit_id", *FEATURE_NAMES]
    assert row.split("\t")[1:3] == ["0.0", "1.0"]


# -- scaling ------------------------------------------------------------------


def test_minmax_examples():
    np.testing.assert_allclose(minmax(np.array([2.0, 4.0, 10.0]), 2.0, 10.0), [0, 0.25, 1.0])
    assert minmax(np.array([3.0, 3.0]), 3.0, 3.0).tolist() == [0.0, 0.0]
    assert minmax(np.array([12.0, -1.0]), 2.0, 10.0).tolist() == [1.0, 0.0]


def test_scaling_scheme():
    rng = np.random.default_rng(0)
    train = rng.uniform(0, 50, size=(30, 23))
    scheme = ScalingScheme().fit_universal(train)
    test = rng.uniform(-10, 80, size=(7, 23))
    out = scheme.transform(test)
    assert np.all((out[:, list(UNIVERSAL_COLUMNS + PER_ADVISORY_COLUMNS)] >= 0))
    assert np.all((out[:, list(UNIVERSAL_COLUMNS + PER_ADVISORY_COLUMNS)] <= 1))
    np.testing.assert_array_equal(out[:, list(IDENTITY_COLUMNS)], test[:, list(IDENTITY_COLUMNS)])
    for c in PER_ADVISORY_COLUMNS:
        assert out[:, c].min() == 0.0 and out[:, c].max() == 1.0
    again = ScalingScheme.from_dict(scheme.to_dict()).transform(test)
    np.testing.assert_array_equal(again, out)


def test_unfitted_scaler():
    with pytest.raises(UnfittedScaler):
        ScalingScheme().transform(np.zeros((1, 23)))
    with pytest.raises(UnfittedScaler):
        ScalingScheme().to_dict()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=23, max_size=23), min_size=1, max_size=8))
def test_per_advisory_scaling_preserves_order(rows):
    X = np.array(rows)
    out = ScalingScheme().fit_universal(X).transform(X)
    for c in PER_ADVISORY_COLUMNS:
        for i in range(len(X)):
            for j in range(len(X)):
                if X[i, c] < X[j, c]:
                    assert out[i, c] <= out[j, c]
