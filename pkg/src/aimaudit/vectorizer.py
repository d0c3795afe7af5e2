"""TF-IDF vectorizer over tokenized narratives (from scratch).

Weights use smoothed inverse document frequency,
``idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1``, so no term ever gets a
zero or negative weight, and document vectors are L2-normalized to kill
narrative-length effects.  Vocabulary order is lexicographic.
"""

from __future__ import annotations

import math
from collections import Counter
from pathlib import Path

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_fitted


def _doc_tokens(doc):
    tokens = getattr(doc, "tokens", doc)
    return list(tokens)


def _doc_terms(tokens, use_bigrams: bool):
    terms = list(tokens)
    if use_bigrams:
        terms.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return terms


def smoothed_idf(df: int, n_docs: int) -> float:
    return math.log((1.0 + n_docs) / (1.0 + df)) + 1.0


class TfidfVectorizer(BaseEstimator, TransformerMixin):
    """Fit a vocabulary + IDF table, transform docs to sparse vectors.

    Parameters
    ----------
    min_df : int
        Keep only terms appearing in at least this many documents
        (default 2, dropping hapax noise).
    use_bigrams : bool
        Add adjacent-token bigrams to the term stream (off by default).
    """

    def __init__(self, min_df: int = 2, use_bigrams: bool = False):
        self.min_df = min_df
        self.use_bigrams = use_bigrams

    def fit(self, docs, y=None):
        docs = list(docs)
        if not docs:
            raise ValueError("empty corpus")
        if self.min_df < 1:
            raise ValueError("min_df must be >= 1")
        df_counter = Counter()
        for doc in docs:
            terms = set(_doc_terms(_doc_tokens(doc), self.use_bigrams))
            df_counter.update(terms)
        kept = sorted(t for t, df in df_counter.items() if df >= self.min_df)
        if not kept:
            raise ValueError("empty vocabulary: no term meets min_df")
        self.vocabulary_ = {term: idx for idx, term in enumerate(kept)}
        self.document_frequency_ = np.array([df_counter[t] for t in kept], dtype=np.int64)
        self.n_docs_ = len(docs)
        self.idf_ = np.array(
            [smoothed_idf(df, self.n_docs_) for df in self.document_frequency_]
        )
        return self

    def transform(self, docs) -> sparse.csr_matrix:
        """Rows are L2-normalized tf*idf vectors; OOV terms are ignored."""
        check_fitted(self, "vocabulary_")
        docs = list(docs)
        data, indices, indptr = [], [], [0]
        for doc in docs:
            counts = Counter(_doc_terms(_doc_tokens(doc), self.use_bigrams))
            entries = sorted(
                (self.vocabulary_[t], count)
                for t, count in counts.items()
                if t in self.vocabulary_
            )
            weights = [count * self.idf_[col] for col, count in entries]
            norm = math.sqrt(sum(w * w for w in weights))
            if norm > 0:
                weights = [w / norm for w in weights]
            data.extend(weights)
            indices.extend(col for col, _ in entries)
            indptr.append(len(indices))
        return sparse.csr_matrix(
            (np.array(data), np.array(indices, dtype=np.int32), np.array(indptr, dtype=np.int32)),
            shape=(len(docs), len(self.vocabulary_)),
        )

    @property
    def dimension_(self) -> int:
        check_fitted(self, "vocabulary_")
        return len(self.vocabulary_)

    def save(self, path) -> None:
        """Versioned flat serialization: one term per line, exact floats."""
        check_fitted(self, "vocabulary_")
        lines = [
            "aimaudit-tfidf v1",
            f"n_docs={self.n_docs_}",
            f"min_df={self.min_df}",
            f"use_bigrams={int(self.use_bigrams)}",
        ]
        for term, idx in self.vocabulary_.items():
            lines.append(
                f"{term}\t{idx}\t{int(self.document_frequency_[idx])}\t{float(self.idf_[idx])!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TfidfVectorizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != "aimaudit-tfidf v1":
            raise ValueError(f"{path}: not a tfidf model file")
        n_docs = int(lines[1].split("=", 1)[1])
        min_df = int(lines[2].split("=", 1)[1])
        use_bigrams = bool(int(lines[3].split("=", 1)[1]))
        model = cls(min_df=min_df, use_bigrams=use_bigrams)
        vocab, dfs, idfs = {}, [], []
        for line in lines[4:]:
            if not line:
                continue
            term, idx, df, idf = line.split("\t")
            vocab[term] = int(idx)
            dfs.append(int(df))
            idfs.append(float(idf))
        model.vocabulary_ = vocab
        model.document_frequency_ = np.array(dfs, dtype=np.int64)
        model.idf_ = np.array(idfs)
        model.n_docs_ = n_docs
        return model
