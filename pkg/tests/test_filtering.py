from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import record
from fixfinder.filtering import (
    RELEVANT_EXTENSIONS, FilterConfig, filter_extensions, has_relevant_extension, select_window,
)

PUB = datetime(2021, 6, 1, tzinfo=timezone.utc)


def timeline(day_offsets):
    pairs = [(f"{i:040x}", PUB + timedelta(days=d)) for i, d in enumerate(sorted(day_offsets))]
    return pairs


def test_default_extension_list():
    assert len(RELEVANT_EXTENSIONS) == 28
    assert RELEVANT_EXTENSIONS[:3] == ("java", "c", "cpp")
    assert "md" not in RELEVANT_EXTENSIONS


def test_window_rules():
    commits = timeline([-3 * 365, -10, 50, 101])
    kept = [c for c, _ in select_window(commits, PUB)]
    assert kept == [commits[1][0], commits[2][0]]


def test_window_bounds_inclusive():
    commits = timeline([-730, 0, 100])
    assert len(select_window(commits, PUB)) == 3
    commits = [(c, t + timedelta(seconds=s)) for (c, t), s in zip(timeline([-730, 100]), (-1, 1))]
    assert select_window(commits, PUB) == []


def test_cap_before_keeps_most_recent():
    commits = timeline([-700 + i * 0.1 for i in range(6000)])
    kept = select_window(commits, PUB)
    assert len(kept) == 5215
    assert kept == commits[-5215:]


def test_cap_after_keeps_earliest():
    commits = timeline([0.5 + i * 0.5 for i in range(150)])
    kept = select_window(commits, PUB)
    assert kept == commits[:100]


def test_empty():
    assert select_window([], PUB) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1000, 300, allow_nan=False), max_size=80),
       st.integers(1, 30), st.integers(1, 30), st.integers(1, 800), st.integers(1, 200))
def test_size_bound_and_sorted(days, cap_b, cap_a, days_b, days_a):
    cfg = FilterConfig(days_before=days_b, days_after=days_a, cap_before=cap_b, cap_after=cap_a)
    commits = timeline(days)
    kept = select_window(commits, PUB, cfg)
    assert len(kept) <= cap_b + cap_a
    assert kept == sorted(kept, key=lambda p: (p[1], p[0]))
    for _, t in kept:
        assert PUB - timedelta(days=days_b) <= t <= PUB + timedelta(days=days_a)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1000, 300, allow_nan=False), max_size=60), st.integers(1, 20),
       st.integers(0, 20), st.integers(1, 500), st.integers(0, 500))
def test_enlarging_before_side_is_monotone(days, cap, extra_cap, span, extra_span):
    commits = timeline(days)
    small = FilterConfig(days_before=span, cap_before=cap)
    large = FilterConfig(days_before=span + extra_span, cap_before=cap + extra_cap)
    before_small = {c for c, t in select_window(commits, PUB, small) if t < PUB}
    before_large = {c for c, t in select_window(commits, PUB, large) if t < PUB}
    assert before_small <= before_large


def test_extension_examples():
    recs = {
        "r": record("r" * 40, files=["README.md"]),
        "j": record("j" * 40, files=["src/Main.java"]),
        "t": record("t" * 40, files=["archive.tar.gz", "run.sh"]),
        "m": record("m" * 40, files=["Makefile"]),
        "u": record("u" * 40, files=["LIB/Thing.PY"]),
    }
    kept = filter_extensions(list(recs), recs.__getitem__)
    assert kept == ["j", "t", "u"]


def test_extension_on_pairs():
    recs = {"a": record("a" * 40, files=["x.c"])}
    assert filter_extensions([("a", PUB)], recs.__getitem__) == ["a"]


def test_has_relevant_extension():
    exts = frozenset(RELEVANT_EXTENSIONS)
    assert has_relevant_extension("dir.py/Makefile", exts) is False
    assert has_relevant_extension("a/b.yml", exts)


@pytest.mark.parametrize("kwargs", [
    {"days_before": 0}, {"cap_after": -1}, {"relevant_extensions": ()},
    {"relevant_extensions": ("Java",)}, {"relevant_extensions": (".py",)},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FilterConfig(**kwargs)
