"""Small text helpers shared by the engine, the pipeline and the mock backend."""

from __future__ import annotations

import difflib
import re

TOKEN_RE = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    """
    a an the and or but if then else for nor so yet of in on at to from by with
    as is are was were be been being am do does did done have has had having
    this that these those it its they them their there here what which who whom
    whose when where why how not no yes can could should would will shall may
    might must about into over under between after before during against more
    most some any each very such own same than too also just only other another
    you your yours we our ours i me my mine he him his she her hers
    """.split()
)


def tokens(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    return [t for t in tokens(text) if len(t) >= 3 and t not in STOPWORDS]


def normalize_text(text: str) -> str:
    return " ".join(tokens(text))


def jaccard(a: str, b: str) -> float:
    """Token-set Jaccard similarity of two strings."""
    sa, sb = set(tokens(a)), set(tokens(b))
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def best_match(needle: str, haystack: str) -> tuple[int, int, float]:
    """Locate ``needle`` in ``haystack`` as a character span.

    Tries an exact find, then a casefolded find, then the longest common
    block via difflib. Returns ``(start, end, score)`` where score is 1.0
    for exact/casefold hits and ``block_len / len(needle)`` otherwise.
    An empty needle scores 0 at span (0, 0).
    """
    if not needle:
        return 0, 0, 0.0
    pos = haystack.find(needle)
    if pos >= 0:
        return pos, pos + len(needle), 1.0
    pos = haystack.casefold().find(needle.casefold())
    if pos >= 0:
        return pos, pos + len(needle), 1.0
    matcher = difflib.SequenceMatcher(None, haystack, needle, autojunk=False)
    block = matcher.find_longest_match(0, len(haystack), 0, len(needle))
    if block.size == 0:
        return 0, 0, 0.0
    return block.a, block.a + block.size, block.size / len(needle)
