"""Ranking metrics and the non-neural baselines S-POP and S-KNN."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class RankedResult:
    top: tuple[int, ...]   # best first
    label: int

    @property
    def rank(self) -> int:
        """1-based rank of the label, 0 if it is not in `top`."""
        try:
            return self.top.index(self.label) + 1
        except ValueError:
            return 0


def rank_scores(scores: np.ndarray, n: int = 20) -> np.ndarray:
    """Top-n indices per row by descending score; ties go to the lower index."""
    scores = np.atleast_2d(scores)
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :n]


def results_from_scores(scores: np.ndarray, labels: Sequence[int], n: int = 20) -> list[RankedResult]:
    top = rank_scores(scores, n)
    return [RankedResult(tuple(int(x) for x in row), int(y)) for row, y in zip(top, labels)]


def _ranks(results: Sequence[RankedResult], k: int) -> np.ndarray:
    if not results:
        raise ValueError("no results to score")
    for r in results:
        if k > len(r.top):
            raise ValueError(f"K={k} exceeds ranked list length {len(r.top)}")
    return np.array([r.rank for r in results])


def precision_at_k(results: Sequence[RankedResult], k: int) -> float:
    """Percentage of examples whose label is in the top k (hit rate)."""
    ranks = _ranks(results, k)
    return 100.0 * float(np.mean((ranks >= 1) & (ranks <= k)))


def mrr_at_k(results: Sequence[RankedResult], k: int) -> float:
    """Mean reciprocal rank of the label, counting 0 beyond rank k, as a percentage."""
    ranks = _ranks(results, k)
    rr = np.where((ranks >= 1) & (ranks <= k), 1.0 / np.maximum(ranks, 1), 0.0)
    return 100.0 * float(np.mean(rr))


def metric_table(results: Sequence[RankedResult], ks: Iterable[int] = (10, 20)) -> dict[str, float]:
    out = {}
    for k in ks:
        out[f"P@{k}"] = precision_at_k(results, k)
        out[f"MRR@{k}"] = mrr_at_k(results, k)
    return out


# ---------------------------------------------------------------- baselines


def item_popularity(sessions: Iterable[Sequence[int]], num_items: int) -> np.ndarray:
    counts = np.zeros(num_items, dtype=np.int64)
    for s in sessions:
        for i in s:
            counts[i] += 1
    return counts


def _popularity_order(global_counts: np.ndarray) -> np.ndarray:
    return np.argsort(-global_counts, kind="stable")


def _backfill(ranked: list[int], pop_order: np.ndarray, n: int) -> list[int]:
    seen = set(ranked)
    for i in pop_order:
        if len(ranked) >= n:
            break
        if int(i) not in seen:
            ranked.append(int(i))
            seen.add(int(i))
    return ranked[:n]


def s_pop(prefix: Sequence[int], global_counts: np.ndarray, n: int = 20,
          _pop_order: np.ndarray | None = None) -> list[int]:
    """Items of the session by in-session frequency, then global popularity."""
    if not prefix:
        raise ValueError("prefix must be non-empty")
    counts = Counter(prefix)
    ranked = sorted(counts, key=lambda i: (-counts[i], i))[:n]
    order = _pop_order if _pop_order is not None else _popularity_order(global_counts)
    return _backfill(list(ranked), order, n)


class SessionKNN:
    """Session kNN: cosine similarity between binary item sets, neighbours vote
    for their items with their similarity."""

    def __init__(self, train_sessions: Sequence[Sequence[int]], num_items: int, k_nn: int = 500):
        self.k_nn = k_nn
        self.num_items = num_items
        rows, cols = [], []
        for r, s in enumerate(train_sessions):
            for i in sorted(set(s)):
                rows.append(r)
                cols.append(i)
        self.M = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(train_sessions), num_items)
        )
        self.MT = self.M.T.tocsr()
        self.sizes = np.asarray(self.M.sum(axis=1)).ravel()
        self.popularity = item_popularity(train_sessions, num_items)
        self._pop_order = _popularity_order(self.popularity)

    def neighbours(self, prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        items = sorted(set(prefix))
        overlap = np.asarray(self.MT[items].sum(axis=0)).ravel()
        cand = np.nonzero(overlap)[0]
        if cand.size == 0:
            return cand, np.zeros(0)
        sims = overlap[cand] / np.sqrt(self.sizes[cand] * len(items))
        order = np.lexsort((cand, -sims))[: self.k_nn]
        return cand[order], sims[order]

    def scores(self, prefix: Sequence[int]) -> np.ndarray:
        idx, sims = self.neighbours(prefix)
        if idx.size == 0:
            return np.zeros(self.num_items)
        return np.asarray(self.M[idx].T @ sims).ravel()

    def recommend(self, prefix: Sequence[int], n: int = 20) -> list[int]:
        sc = self.scores(prefix)
        voted = np.nonzero(sc > 0)[0]
        ranked = [int(i) for i in voted[np.lexsort((voted, -sc[voted]))]][:n]
        return _backfill(ranked, self._pop_order, n)


def s_knn(prefix: Sequence[int], train_sessions: Sequence[Sequence[int]], k_nn: int = 500,
          num_items: int | None = None, n: int = 20) -> list[int]:
    if num_items is None:
        num_items = 1 + max(max(s) for s in train_sessions)
    return SessionKNN(train_sessions, num_items, k_nn).recommend(prefix, n)


def evaluate_baseline(name: str, train_sessions, examples, num_items: int,
                      ks=(10, 20), n: int = 20, k_nn: int = 500) -> dict[str, float]:
    if name == "s_pop":
        pop = item_popularity(train_sessions, num_items)
        order = _popularity_order(pop)
        res = [RankedResult(tuple(s_pop(ex.prefix, pop, n, order)), ex.label) for ex in examples]
    elif name == "s_knn":
        knn = SessionKNN(train_sessions, num_items, k_nn)
        res = [RankedResult(tuple(knn.recommend(ex.prefix, n)), ex.label) for ex in examples]
    else:
        raise ValueError(f"unknown baseline {name!r}")
    return metric_table(res, ks)
