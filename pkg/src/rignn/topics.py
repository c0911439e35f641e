"""Per-item review tokenisation and an LDA topic model fit by collapsed Gibbs sampling."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

SENTINEL_NO_REVIEW = -1
TOPICS_FORMAT = "rignn-topics"
TOPICS_VERSION = 1

STOPWORDS = frozenset(
    """
    about above after again against all also and any are aren because been before
    being below between both but can cannot could did didn does doesn doing don down
    during each few for from further had hadn has hasn have haven having her here hers
    herself him himself his how into isn its itself just let more most mustn myself nor
    not now off once only other our ours ourselves out over own same shan she should
    shouldn some such than that the their theirs them themselves then there these they
    this those through too under until very was wasn were weren what when where which
    while who whom why will with won would wouldn you your yours yourself yourselves
    get got one really much even well like
    """.split()
)

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(document: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop short tokens and stopwords."""
    return [
        t for t in _SPLIT.split(document.lower())
        if len(t) >= 3 and t not in STOPWORDS
    ]


@dataclass
class TokenizedCorpus:
    vocab: dict[str, int]
    docs: list[np.ndarray]

    @property
    def doc_lengths(self) -> np.ndarray:
        return np.array([len(d) for d in self.docs], dtype=np.int64)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def words(self) -> list[str]:
        inv = [""] * len(self.vocab)
        for w, i in self.vocab.items():
            inv[i] = w
        return inv


def build_corpus(documents: Sequence[str], max_tokens: int | None = None) -> TokenizedCorpus:
    """Tokenise every document; the vocabulary is the sorted set of surviving tokens."""
    toks = [tokenize(d) for d in documents]
    if max_tokens is not None:
        toks = [t[:max_tokens] for t in toks]
    vocab = {w: i for i, w in enumerate(sorted({w for t in toks for w in t}))}
    docs = [np.array([vocab[w] for w in t], dtype=np.int64) for t in toks]
    return TokenizedCorpus(vocab, docs)


def encode_with_vocab(documents: Sequence[str], vocab: dict[str, int],
                      max_tokens: int | None = None) -> list[np.ndarray]:
    """Tokenise against a fixed vocabulary, dropping unknown tokens."""
    out = []
    for d in documents:
        ids = [vocab[w] for w in tokenize(d) if w in vocab]
        if max_tokens is not None:
            ids = ids[:max_tokens]
        out.append(np.array(ids, dtype=np.int64))
    return out


@dataclass
class TopicModel:
    num_topics: int
    alpha: float
    beta: float
    topic_word_counts: np.ndarray   # T x V
    doc_topic_counts: np.ndarray    # m x T
    assignments: list[np.ndarray]   # per document, per token
    dominant: np.ndarray            # m, topic id or SENTINEL_NO_REVIEW
    vocab: list[str]

    def doc_topic_distribution(self, item: int) -> np.ndarray:
        row = self.doc_topic_counts[item] + self.alpha
        return row / row.sum()

    def save(self, path: str | Path) -> None:
        lengths = np.array([len(a) for a in self.assignments], dtype=np.int64)
        flat = (np.concatenate(self.assignments) if self.assignments
                else np.zeros(0, np.int64)).astype(np.int64)
        header = {"format": TOPICS_FORMAT, "version": TOPICS_VERSION,
                  "num_topics": self.num_topics, "alpha": self.alpha, "beta": self.beta}
        with open(path, "wb") as fh:
            np.savez(
                fh,
                __header__=np.array(json.dumps(header, sort_keys=True)),
                vocab=np.array(self.vocab, dtype=np.str_),
                topic_word_counts=self.topic_word_counts,
                doc_topic_counts=self.doc_topic_counts,
                assignment_lengths=lengths,
                assignments=flat,
                dominant=self.dominant,
            )

    @classmethod
    def load(cls, path: str | Path) -> "TopicModel":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            if header.get("format") != TOPICS_FORMAT:
                raise ValueError(f"{path}: not a topic model file")
            if header["version"] != TOPICS_VERSION:
                raise ValueError(f"{path}: unsupported topic model version {header['version']}")
            bounds = np.cumsum(z["assignment_lengths"])[:-1]
            return cls(
                num_topics=header["num_topics"],
                alpha=header["alpha"],
                beta=header["beta"],
                topic_word_counts=z["topic_word_counts"],
                doc_topic_counts=z["doc_topic_counts"],
                assignments=list(np.split(z["assignments"], bounds)),
                dominant=z["dominant"],
                vocab=[str(w) for w in z["vocab"]],
            )


def save_dominant(dominant: Sequence[int], path: str | Path) -> None:
    """Write a topic file that carries only per-item dominant topics."""
    dom = np.asarray(dominant, dtype=np.int64)
    header = {"format": TOPICS_FORMAT, "version": TOPICS_VERSION, "dominant_only": True}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), dominant=dom)


def load_dominant(path: str | Path) -> np.ndarray:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != TOPICS_FORMAT:
            raise ValueError(f"{path}: not a topic model file")
        return z["dominant"].astype(np.int64)


def _sweep(words, docs, z, nwt, ndt, nt, alpha, beta, vbeta, u, p, first):
    # with first=True, tokens enter the counts one at a time (sequential init)
    T = nt.shape[0]
    for n in range(words.shape[0]):
        w = words[n]
        d = docs[n]
        if not first:
            k = z[n]
            nwt[k, w] -= 1
            ndt[d, k] -= 1
            nt[k] -= 1
        total = 0.0
        for j in range(T):
            total += (ndt[d, j] + alpha) * (nwt[j, w] + beta) / (nt[j] + vbeta)
            p[j] = total
        target = u[n] * total
        k = 0
        while k < T - 1 and p[k] <= target:
            k += 1
        z[n] = k
        nwt[k, w] += 1
        ndt[d, k] += 1
        nt[k] += 1


_sweep_fast = njit(cache=False)(_sweep) if njit is not None else _sweep


def fit_lda(
    corpus: TokenizedCorpus,
    num_topics: int,
    alpha: float | None = None,
    beta: float = 0.01,
    iterations: int = 500,
    seed: int = 0,
    check_invariants: bool = False,
    chains: int = 4,
) -> TopicModel:
    """Collapsed Gibbs sampling for `iterations` full sweeps over all tokens.

    Tokens are visited in document order. Initial topics are drawn sequentially,
    each token conditioned on the tokens placed before it. With a small `beta`
    a word rarely leaves its topic once placed, so a single chain can freeze a
    partition that mixes unrelated vocabularies; `chains` independent chains are
    run and the one with the highest collapsed joint log-likelihood is kept.
    Every chain draws from its own PCG64 stream spawned from `seed`, so a fit is
    fully reproducible. `alpha` defaults to 50 / num_topics.
    """
    if num_topics < 2:
        raise ValueError("num_topics must be >= 2")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if chains < 1:
        raise ValueError("chains must be >= 1")
    if corpus.vocab_size == 0:
        raise ValueError("empty vocabulary: no document has any usable token")
    if alpha is None:
        alpha = 50.0 / num_topics
    T, V, m = num_topics, corpus.vocab_size, len(corpus.docs)
    lengths = corpus.doc_lengths
    words = (np.concatenate(corpus.docs) if m else np.zeros(0)).astype(np.int64)
    docs = np.repeat(np.arange(m, dtype=np.int64), lengths)
    args = (float(alpha), float(beta), float(V * beta))

    best = None
    for stream in np.random.SeedSequence(seed).spawn(chains):
        rng = np.random.Generator(np.random.PCG64(stream))
        z = np.zeros(words.shape[0], dtype=np.int64)
        nwt = np.zeros((T, V), dtype=np.int64)
        ndt = np.zeros((m, T), dtype=np.int64)
        nt = np.zeros(T, dtype=np.int64)
        p = np.zeros(T, dtype=np.float64)
        _sweep_fast(words, docs, z, nwt, ndt, nt, *args, rng.random(words.shape[0]), p, True)
        for _ in range(iterations):
            u = rng.random(words.shape[0])
            _sweep_fast(words, docs, z, nwt, ndt, nt, *args, u, p, False)
            if check_invariants:
                _check_counts(nwt, ndt, z, words.shape[0], T)
        ll = joint_log_likelihood(nwt, ndt, alpha, beta)
        if best is None or ll > best[0]:
            best = (ll, z, nwt, ndt)
    _, z, nwt, ndt = best

    bounds = np.cumsum(lengths)[:-1]
    model = TopicModel(
        num_topics=T,
        alpha=float(alpha),
        beta=float(beta),
        topic_word_counts=nwt,
        doc_topic_counts=ndt,
        assignments=list(np.split(z, bounds)) if m else [],
        dominant=np.zeros(m, dtype=np.int64),
        vocab=corpus.words(),
    )
    model.dominant = np.array(
        [assign_dominant(model, i, empty=lengths[i] == 0) for i in range(m)], dtype=np.int64
    )
    return model


def joint_log_likelihood(nwt: np.ndarray, ndt: np.ndarray, alpha: float, beta: float) -> float:
    """log p(w, z) with theta and phi integrated out."""
    T, V = nwt.shape
    words = (gammaln(nwt + beta).sum() - gammaln(nwt.sum(axis=1) + V * beta).sum()
             + T * (gammaln(V * beta) - V * gammaln(beta)))
    ndt = ndt[ndt.sum(axis=1) > 0]
    topics = (gammaln(ndt + alpha).sum() - gammaln(ndt.sum(axis=1) + T * alpha).sum()
              + len(ndt) * (gammaln(T * alpha) - T * gammaln(alpha)))
    return float(words + topics)


def _check_counts(nwt, ndt, z, total, T) -> None:
    if nwt.sum() != total or ndt.sum() != total:
        raise AssertionError("count matrices out of sync with token total")
    if (nwt < 0).any() or (ndt < 0).any():
        raise AssertionError("negative topic count")
    if total and (z.min() < 0 or z.max() >= T):
        raise AssertionError("assignment out of range")


def assign_dominant(model: TopicModel, item: int, empty: bool | None = None) -> int:
    """Argmax of the smoothed document-topic distribution, lowest id on ties."""
    row = model.doc_topic_counts[item]
    if empty is None:
        empty = row.sum() == 0
    if empty:
        return SENTINEL_NO_REVIEW
    return int(np.argmax(row + model.alpha))
