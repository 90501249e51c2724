"""Text normalisation shared by advisory descriptions and commit content.

Every piece of text that takes part in a lexical comparison (descriptions,
commit messages, changed-file lists, diffs, scraped reference pages) goes
through :func:`preprocess` so that both sides of a comparison live in the
same token space.
"""

import re
from functools import lru_cache
from importlib import resources

from nltk.stem.porter import PorterStemmer

# Anything that is not alphanumeric or one of the compound separators ends a token.
_TOKEN_SPLIT = re.compile(r"[^A-Za-z0-9_./]+")
_SEPARATORS = re.compile(r"[_./]+")
# lower/digit -> Upper ("parseObject"), and acronym -> Word ("XMLParser")
_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_HAS_ALPHA = re.compile(r"[A-Za-z]")

_stemmer = PorterStemmer()


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    text = resources.files("fixfinder").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def split_compound(token: str) -> list[str]:
    """Split a CamelCase, snake_case or dot.case token into its parts.

    Path separators are treated like dots so that ``src/main/Foo.java``
    contributes ``src``, ``main``, ``Foo`` and ``java``.

    >>> split_compound("TfidfVectorizer")
    ['Tfidf', 'Vectorizer']
    >>> split_compound("snake_case_name")
    ['snake', 'case', 'name']
    """
    parts = []
    for chunk in _SEPARATORS.split(token):
        if chunk:
            parts.extend(p for p in _CAMEL_BOUNDARY.split(chunk) if p)
    return parts or [token]


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    # Porter is not idempotent on its own output ("agreed" -> "agre" -> "agr"),
    # so iterate to a fixed point.
    for _ in range(8):
        nxt = _stemmer.stem(word, to_lowercase=True)
        if nxt == word:
            break
        word = nxt
    return word


def _keep(token: str, stop: frozenset[str]) -> bool:
    return len(token) > 1 and _HAS_ALPHA.search(token) is not None and token.lower() not in stop


def preprocess(text: str) -> list[str]:
    """Tokenise, filter, split compounds, stem and lowercase ``text``.

    >>> preprocess("Fixed the XMLParser bug 42")
    ['fix', 'xml', 'parser', 'bug']
    """
    stop = stopwords()
    out = []
    for raw in _TOKEN_SPLIT.split(text):
        if not _keep(raw, stop):
            continue
        for piece in split_compound(raw):
            if not _keep(piece, stop):
                continue
            token = stem(piece.lower())
            if _keep(token, stop):
                out.append(token)
    return out
