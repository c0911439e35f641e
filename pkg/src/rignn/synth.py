"""Synthetic sessions with planted topic threads and known dependency edges.

Each topic owns a block of items and a private vocabulary. Within a topic the
items form a hidden cycle; a thread walks that cycle. A session interleaves a
few threads of distinct topics, so adjacent items from different threads are
false dependencies and every ordered pair inside one thread is a true one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import build_graph
from .ingest import Bundle, ItemCatalog, Session, save_bundle
from .topics import save_dominant

START_TIME = 1_300_000_000


@dataclass
class SynthSpec:
    num_topics: int = 10
    items_per_topic: int = 20
    vocab_per_topic: int = 30
    session_count: int = 2000
    min_length: int = 4
    max_length: int = 10
    interleave_prob: float = 0.5
    threads: int = 2
    review_tokens: int = 20
    jump_prob: float = 0.0      # chance a thread jumps to a random item of its topic
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        counts = (self.num_topics, self.items_per_topic, self.vocab_per_topic,
                  self.session_count, self.min_length, self.threads, self.review_tokens)
        if min(counts) < 1:
            raise ValueError("all counts must be positive")
        if not 0.0 <= self.interleave_prob <= 1.0 or not 0.0 <= self.jump_prob <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.max_length < self.min_length:
            raise ValueError("max_length < min_length")
        if self.threads > self.num_topics:
            raise ValueError("need at least as many topics as threads")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, values: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        return cls(**{k: type(getattr(cls, k))(v) for k, v in values.items() if k in known})


@dataclass
class SynthCorpus:
    spec: SynthSpec
    sessions: list[tuple[int, ...]]
    truth: list[set[tuple[int, int]]]        # per session, true (item -> item) pairs
    threads: list[tuple[int, ...]]           # per session position, thread id
    topics: np.ndarray                       # per item, planted topic
    bundle: Bundle


def item_name(topic: int, j: int) -> str:
    return f"t{topic:03d}_i{j:04d}"


def word_name(topic: int, j: int) -> str:
    return f"t{topic:03d}w{j:04d}"


def generate(spec: SynthSpec) -> SynthCorpus:
    ss = np.random.SeedSequence(spec.seed)
    rng_world, rng_sessions = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    T, n_items = spec.num_topics, spec.items_per_topic
    m = T * n_items
    topics = np.repeat(np.arange(T, dtype=np.int64), n_items)

    # hidden walk order inside each topic
    succ = np.zeros(m, dtype=np.int64)
    for t in range(T):
        cyc = t * n_items + rng_world.permutation(n_items)
        succ[cyc] = np.roll(cyc, -1)

    reviews = []
    for i in range(m):
        words = rng_world.integers(0, spec.vocab_per_topic, size=spec.review_tokens)
        reviews.append(" ".join(word_name(int(topics[i]), int(w)) for w in words))
    catalog = ItemCatalog([item_name(int(topics[i]), i % n_items) for i in range(m)], reviews)

    sessions, truth, thread_ids = [], [], []
    for _ in range(spec.session_count):
        length = int(rng_sessions.integers(spec.min_length, spec.max_length + 1))
        own = rng_sessions.choice(T, size=spec.threads, replace=False)
        last: list[int | None] = [None] * spec.threads
        cur = 0
        items, tids = [], []
        for pos in range(length):
            if pos > 0 and spec.threads > 1 and rng_sessions.random() < spec.interleave_prob:
                others = [x for x in range(spec.threads) if x != cur]
                cur = others[int(rng_sessions.integers(len(others)))] if len(others) > 1 else others[0]
            prev = last[cur]
            if prev is None or rng_sessions.random() < spec.jump_prob:
                nxt = int(own[cur]) * n_items + int(rng_sessions.integers(n_items))
            else:
                nxt = int(succ[prev])
            last[cur] = nxt
            items.append(nxt)
            tids.append(cur)
        pairs = {
            (items[a], items[b])
            for a in range(length) for b in range(a + 1, length)
            if tids[a] == tids[b] and items[a] != items[b]
        }
        sessions.append(tuple(items))
        truth.append(pairs)
        thread_ids.append(tuple(tids))

    n_test = int(round(spec.session_count * spec.test_fraction))
    n_train = spec.session_count - n_test
    train = [Session(s, START_TIME + 3600 * i) for i, s in enumerate(sessions[:n_train]) if len(s) >= 2]
    seen = {i for s in train for i in s.items}
    test = []
    for j, s in enumerate(sessions[n_train:]):
        kept = tuple(i for i in s if i in seen)
        if len(kept) >= 2:
            test.append(Session(kept, START_TIME + 3600 * (n_train + j)))
    meta = {"case": 1, "source": "synth", "synth": asdict(spec)}
    bundle = Bundle(catalog, train, test, meta)
    return SynthCorpus(spec, sessions, truth, thread_ids, topics, bundle)


def dependency_recovery(
    sessions: Sequence[Sequence[int]],
    truth: Sequence[set[tuple[int, int]]],
    dominant: np.ndarray,
) -> dict[str, dict[str, float]]:
    """Micro-averaged precision and recall of AIG and RIG edges against the
    planted dependency pairs."""
    tally = {"aig": [0, 0], "rig": [0, 0]}      # [true positives, predicted]
    n_true = 0
    for s, gold in zip(sessions, truth):
        g = build_graph(s, dominant)
        aig = {(g.nodes[u], g.nodes[w]) for u, w in g.aig_edges()}
        rig = {(g.nodes[u], g.nodes[w]) for u, w in g.E_re}
        for name, edges in (("aig", aig), ("rig", rig)):
            tally[name][0] += len(edges & gold)
            tally[name][1] += len(edges)
        n_true += len(gold)
    out = {}
    for name, (tp, pred) in tally.items():
        out[name] = {
            "precision": tp / pred if pred else 0.0,
            "recall": tp / n_true if n_true else 0.0,
            "edges": pred,
        }
    return out


def save_corpus(corpus: SynthCorpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    save_bundle(corpus.bundle, out)
    save_dominant(corpus.topics, out / "oracle.topics")
    doc = {
        "spec": asdict(corpus.spec),
        "sessions": [
            {"items": list(s), "threads": list(t), "edges": sorted([list(e) for e in gold])}
            for s, t, gold in zip(corpus.sessions, corpus.threads, corpus.truth)
        ],
    }
    (out / "ground_truth.json").write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))
