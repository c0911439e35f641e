"""Raw review dumps -> sessions, item catalog and train/test splits."""

from __future__ import annotations

import gzip
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

log = logging.getLogger(__name__)

DAY = 86_400
YEAR = 365 * DAY
BUNDLE_FORMAT = "rignn-bundle"
BUNDLE_VERSION = 1
BUNDLE_FILE = "bundle.json"
CASE_MIN_LENGTH = {1: 2, 2: 6}


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int
    review_text: str = ""

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if not self.item_id:
            raise ValueError("item_id must be non-empty")


@dataclass(frozen=True)
class Session:
    items: tuple[int, ...]
    start_time: int

    def __post_init__(self):
        if not self.items:
            raise ValueError("session must contain at least one item")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SequenceExample:
    prefix: tuple[int, ...]
    label: int


@dataclass
class ItemCatalog:
    item_ids: list[str]
    review_doc: list[str]

    def __post_init__(self):
        if len(self.item_ids) != len(self.review_doc):
            raise ValueError("item_ids and review_doc differ in length")
        self.index_of = {iid: i for i, iid in enumerate(self.item_ids)}
        if len(self.index_of) != len(self.item_ids):
            raise ValueError("duplicate item ids in catalog")

    @property
    def m(self) -> int:
        return len(self.item_ids)


@dataclass
class Bundle:
    catalog: ItemCatalog
    train: list[Session]
    test: list[Session]
    meta: dict = field(default_factory=dict)

    def train_examples(self, case: int | None = None) -> list[SequenceExample]:
        case = case or self.meta.get("case", 1)
        return [ex for s in self.train for ex in sequence_split(s, case)]

    def test_examples(self, case: int | None = None) -> list[SequenceExample]:
        case = case or self.meta.get("case", 1)
        return [ex for s in self.test for ex in sequence_split(s, case)]


# ---------------------------------------------------------------- parsing


def _open_stream(path: str | Path) -> BinaryIO:
    fh = open(path, "rb")
    magic = fh.read(2)
    fh.seek(0)
    if magic == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=fh)
    return fh


def parse_reviews(stream: BinaryIO | Iterable[bytes]) -> tuple[list[Interaction], int]:
    """Parse newline-delimited JSON review records.

    Lines that fail to decode, miss a required field or carry invalid values
    are counted and skipped.
    """
    out: list[Interaction] = []
    errors = 0
    for raw in stream:
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            out.append(
                Interaction(
                    user_id=str(rec["reviewerID"]),
                    item_id=str(rec["asin"]),
                    timestamp=int(rec["unixReviewTime"]),
                    review_text=str(rec.get("reviewText") or ""),
                )
            )
        except (ValueError, KeyError, TypeError):
            errors += 1
    return out, errors


def read_reviews(path: str | Path) -> tuple[list[Interaction], int]:
    with _open_stream(path) as fh:
        return parse_reviews(fh)


# ---------------------------------------------------------------- protocol


def filter_min_count(interactions: list[Interaction], min_count: int) -> list[Interaction]:
    """Keep interactions whose item occurs at least `min_count` times in the input.

    Single pass over the original counts; no re-filtering.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(x.item_id for x in interactions)
    return [x for x in interactions if counts[x.item_id] >= min_count]


def build_catalog(interactions: list[Interaction]) -> ItemCatalog:
    """Dense indices in sorted item-id order; each item's document is all its
    reviews joined in timestamp order."""
    reviews: dict[str, list[tuple[int, int, str]]] = defaultdict(list)
    for pos, x in enumerate(interactions):
        reviews[x.item_id].append((x.timestamp, pos, x.review_text))
    ids = sorted(reviews)
    docs = [
        " ".join(t for _, _, t in sorted(reviews[i]) if t) for i in ids
    ]
    return ItemCatalog(ids, docs)


def build_sessions(
    interactions: list[Interaction],
    catalog: ItemCatalog,
    window: int = 7 * DAY,
) -> list[Session]:
    """Partition each user's history into epoch-anchored windows of `window` seconds.

    Output is ordered by (user_id, start_time).
    """
    if window <= 0:
        raise ValueError("window must be positive")
    by_user: dict[str, list[tuple[int, int, Interaction]]] = defaultdict(list)
    for pos, x in enumerate(interactions):
        by_user[x.user_id].append((x.timestamp, pos, x))
    sessions: list[Session] = []
    for user in sorted(by_user):
        bins: dict[int, list[Interaction]] = defaultdict(list)
        for _, _, x in sorted(by_user[user], key=lambda r: (r[0], r[1])):
            bins[x.timestamp // window].append(x)
        for b in sorted(bins):
            xs = bins[b]
            sessions.append(
                Session(tuple(catalog.index_of[x.item_id] for x in xs), xs[0].timestamp)
            )
    return sessions


def split_train_test(
    sessions: list[Session], horizon: int = YEAR, min_length: int = 2
) -> tuple[list[Session], list[Session]]:
    """Sessions starting within `horizon` seconds of the latest start go to test.

    Sessions shorter than `min_length` are dropped from both sides. Test items
    never seen in the kept train sessions are removed first, so a test session
    can fall below `min_length` because of them.
    """
    if not sessions:
        return [], []
    latest = max(s.start_time for s in sessions)
    cutoff = latest - horizon
    train = [s for s in sessions if s.start_time < cutoff and len(s) >= min_length]
    raw_test = [s for s in sessions if s.start_time >= cutoff]
    seen = {i for s in train for i in s.items}
    test = []
    for s in raw_test:
        kept = tuple(i for i in s.items if i in seen)
        if len(kept) >= min_length:
            test.append(Session(kept, s.start_time))
    return train, test


def sequence_split(session: Session | Iterable[int], case: int = 1) -> list[SequenceExample]:
    items = tuple(session.items if isinstance(session, Session) else session)
    if case not in CASE_MIN_LENGTH:
        raise ValueError(f"case must be 1 or 2, got {case}")
    if len(items) < CASE_MIN_LENGTH[case]:
        return []
    return [SequenceExample(items[:t], items[t]) for t in range(1, len(items))]


def preprocess(
    interactions: list[Interaction],
    min_count: int = 5,
    window_days: int = 7,
    case: int = 1,
) -> Bundle:
    """The full protocol: min-count filter, weekly sessions, last-year test split."""
    n_raw = len(interactions)
    kept = filter_min_count(interactions, min_count)
    catalog = build_catalog(kept)
    sessions = build_sessions(kept, catalog, window_days * DAY)
    min_len = CASE_MIN_LENGTH[case]
    train, test = split_train_test(sessions, min_length=min_len)
    if not train:
        log.warning("train split is empty; all sessions fall in the final year")
    meta = {
        "case": case,
        "min_count": min_count,
        "window_days": window_days,
        "raw_interactions": n_raw,
        "filtered_interactions": len(kept),
        "all_sessions": len(sessions),
    }
    return Bundle(catalog, train, test, meta)


# ---------------------------------------------------------------- stats


def corpus_stats(bundle: Bundle) -> dict:
    """Dataset statistics at two stages: sessions and sequence-split examples."""
    train_ex = bundle.train_examples()
    test_ex = bundle.test_examples()
    sessions = bundle.train + bundle.test
    interactions = sum(len(s) for s in sessions)
    return {
        "interactions": interactions,
        "items": bundle.catalog.m,
        "train_sessions": len(bundle.train),
        "test_sessions": len(bundle.test),
        "train_examples": len(train_ex),
        "test_examples": len(test_ex),
        "avg_session_length": interactions / len(sessions) if sessions else 0.0,
        "filtered_interactions": bundle.meta.get("filtered_interactions"),
    }


# ---------------------------------------------------------------- persistence


def _session_rec(s: Session) -> dict:
    return {"items": list(s.items), "start_time": s.start_time}


def bundle_to_json(bundle: Bundle) -> str:
    doc = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "meta": bundle.meta,
        "items": bundle.catalog.item_ids,
        "reviews": bundle.catalog.review_doc,
        "train": [_session_rec(s) for s in bundle.train],
        "test": [_session_rec(s) for s in bundle.test],
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def save_bundle(bundle: Bundle, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / BUNDLE_FILE
    path.write_text(bundle_to_json(bundle), encoding="utf-8")
    return path


def load_bundle(path: str | Path) -> Bundle:
    path = Path(path)
    if path.is_dir():
        path = path / BUNDLE_FILE
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{path}: not a corpus bundle")
    if doc["version"] != BUNDLE_VERSION:
        raise ValueError(f"{path}: unsupported bundle version {doc['version']}")
    sess = lambda recs: [Session(tuple(r["items"]), r["start_time"]) for r in recs]  # noqa: E731
    return Bundle(
        ItemCatalog(doc["items"], doc["reviews"]),
        sess(doc["train"]),
        sess(doc["test"]),
        doc["meta"],
    )
