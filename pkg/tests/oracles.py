"""Independent reference implementations used to check the library."""

import re

import numpy as np

from fixfinder.textprep import preprocess


def tfidf_cosine(corpus, query):
    """Dense TF-IDF (smoothed idf, L2 norm) cosine of ``query`` against each document."""
    vocab = sorted({t for doc in corpus for t in doc})
    if not vocab:
        return np.zeros(len(corpus))
    col = {t: j for j, t in enumerate(vocab)}
    counts = np.zeros((len(corpus), len(vocab)))
    for i, doc in enumerate(corpus):
        for t in doc:
            counts[i, col[t]] += 1
    n = len(corpus)
    df = (counts > 0).sum(axis=0)
    idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    docs = counts * idf
    q = np.zeros(len(vocab))
    for t in query:
        if t in col:
            q[col[t]] += 1
    q *= idf
    qn = np.linalg.norm(q)
    out = np.zeros(n)
    if qn == 0:
        return out
    for i in range(n):
        dn = np.linalg.norm(docs[i])
        if dn > 0:
            out[i] = docs[i] @ q / (dn * qn)
    return out


def nine_similarities(description, code_tokens, reference_keywords, fix_words, messages, files, diffs):
    """Expected f11..f19 from raw token lists (already preprocessed)."""
    cols = []
    for corpus, desc_query in ((messages, description + fix_words), (files, description), (diffs, description)):
        for query in (desc_query, code_tokens, reference_keywords):
            cols.append(tfidf_cosine(corpus, query))
    return np.column_stack(cols)


def lexical_oracle(advisory, candidates, fix_words):
    return nine_similarities(
        preprocess(advisory.description),
        preprocess(" ".join(advisory.code_tokens)),
        preprocess(" ".join(advisory.reference_keywords)),
        preprocess(" ".join(fix_words)),
        [c.pre_message for c in candidates],
        [c.pre_files for c in candidates],
        [c.pre_diff for c in candidates],
    )


def path_similarity(paths, files):
    """Enumerate every common suffix of the component lists and keep the longest."""
    total = 0
    for p in paths:
        base = p.split("/")[-1]
        has_ext = "." in base
        p_parts = [x for x in re.split(r"[./]", p) if x]
        best = 0
        for f in files:
            f_parts = [x for x in re.split(r"[./]", f) if x]
            if not has_ext and "." in f.split("/")[-1] and len(f_parts) > 1:
                f_parts = f_parts[:-1]
            for k in range(1, min(len(p_parts), len(f_parts)) + 1):
                if p_parts[-k:] == f_parts[-k:]:
                    if k >= (2 if has_ext else 1):
                        best = max(best, k)
        total += best
    return float(total)
