from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from ifgeo.textutil import best_match, content_tokens, jaccard, normalize_text, tokens


def test_tokens_lowercase_alnum_runs():
    assert tokens("Hello, World! 42x") == ["hello", "world", "42x"]


def test_content_tokens_drop_stopwords_and_short():
    assert content_tokens("the cat is on a big mat") == ["cat", "big", "mat"]


def test_normalize_text_collapses_punctuation_and_case():
    assert normalize_text("What IS  coffee?") == normalize_text("what is coffee")


def test_jaccard_basic():
    assert jaccard("alpha beta", "beta alpha") == 1.0
    assert jaccard("alpha beta", "beta gamma") == 1 / 3
    assert jaccard("", "") == 1.0
    assert jaccard("alpha", "") == 0.0


def test_best_match_exact():
    start, end, score = best_match("needle", "hay needle stack")
    assert (start, end, score) == (4, 10, 1.0)


def test_best_match_casefold():
    start, end, score = best_match("NEEDLE", "hay needle stack")
    assert (start, end, score) == (4, 10, 1.0)


def test_best_match_fuzzy_scores_by_block_fraction():
    # Half of the needle appears verbatim, the rest does not.
    start, end, score = best_match("abcdWXYZ", "xx abcd yy")
    assert score == 0.5
    assert "abcd" in "xx abcd yy"[start:end]


def test_best_match_empty_and_hopeless():
    assert best_match("", "anything") == (0, 0, 0.0)
    assert best_match("qqq", "zzzz") == (0, 0, 0.0)


@given(st.text(min_size=1, max_size=40), st.text(max_size=200))
def test_best_match_span_inside_haystack(needle, haystack):
    start, end, score = best_match(needle, haystack)
    assert 0 <= start <= end <= max(len(haystack), 0) or (start, end) == (0, 0)
    assert 0.0 <= score <= 1.0
    if score == 1.0:
        assert haystack[start:end].casefold() == needle.casefold()
