"""RI-GNN forward pass on top of `numcore`.

A batch of sessions is laid out as one block-diagonal graph: node rows of all
sessions are stacked, the AIG matrices and RIG neighbour masks are block
diagonal, and per-session reductions use small segment matrices. This is the
same computation as running every session on its own, without padding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .graph import SessionGraph, build_graph
from .numcore import ParameterSet, Tensor

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_ril", "no_topic", "no_review")


@dataclass
class ModelConfig:
    d: int = 100
    d_w: int = 300
    heads: int = 3
    d_head: int = 100          # d_q = d_k = d_v
    k: int = 2                 # stacked graph layers, AIL first
    steps: int = 1             # propagation steps per AIL layer
    dropout: float = 0.2
    n_max: int = 50
    review_len: int = 256
    ril_source: str = "input"  # neighbour states in RIL: "input" or "base"
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= 6:
            raise ValueError(f"k must be in [1, 6], got {self.k}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.ril_source not in ("input", "base"):
            raise ValueError("ril_source must be 'input' or 'base'")
        if min(self.d, self.d_w, self.heads, self.d_head, self.n_max, self.review_len) < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                continue
            default = getattr(cls, key)
            kwargs[key] = type(default)(val)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, num_items: int, vocab_size: int,
                rng: np.random.Generator | None = None) -> ParameterSet:
    """Every weight uniform in (-1/sqrt(d), 1/sqrt(d))."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    d, dw, h, dh = cfg.d, cfg.d_w, cfg.heads, cfg.d_head
    bound = 1.0 / math.sqrt(d)
    shapes: dict[str, tuple[int, ...]] = {
        "item_emb": (num_items, d),
        "word_emb": (max(vocab_size, 1), dw),
        "H": (d, 2 * d),
        "b_1": (2 * d,),
        "W_z": (d, 2 * d), "W_r": (d, 2 * d), "W_o": (d, 2 * d),
        "U_z": (d, d), "U_r": (d, d), "U_o": (d, d),
    }
    for i in range(h):
        shapes[f"W_Q{i}"] = (dw, dh)
        shapes[f"W_K{i}"] = (dw, dh)
        shapes[f"W_V{i}"] = (dw, dh)
    shapes["W_1"] = (h * dh, dw)
    for layer in range(1, cfg.k):
        shapes[f"dense_{layer}"] = ((layer + 1) * d, d)
    shapes["dense_out"] = ((cfg.k + 1) * d, d)
    shapes.update({
        "P": (cfg.n_max, d),
        "W_2": (d, 2 * d), "b_2": (d,),
        "W_3": (d, d), "W_4": (d, d), "b_3": (d,),
        "q": (d,),
    })
    return ParameterSet({name: rng.uniform(-bound, bound, size=s) for name, s in shapes.items()})


# ---------------------------------------------------------------- batch layout


@dataclass
class Batch:
    node_items: np.ndarray     # N
    A_out: np.ndarray          # N x N, block diagonal
    A_in: np.ndarray
    nbr_mask: np.ndarray       # N x N bool, RIG neighbour union
    has_nbr: np.ndarray        # N float
    pos_node: np.ndarray       # T: global node row for each session position
    pos_rev: np.ndarray        # T: reversed position index (last item -> 0)
    seg_mean: np.ndarray       # B x T, 1/n on own positions
    seg_sum: np.ndarray        # B x T, 0/1
    seg_expand: np.ndarray     # T x B, one-hot
    rev_items: np.ndarray      # U items whose reviews are encoded
    rev_tokens: np.ndarray     # U x L padded word ids
    rev_mask: np.ndarray       # U x L
    node_rev: np.ndarray       # N: row into [encoded reviews ; zero row]

    @property
    def size(self) -> int:
        return self.seg_sum.shape[0]


def layout_batch(graphs: Sequence[SessionGraph], review_tokens: Sequence[np.ndarray],
                 need_reviews: bool = True) -> Batch:
    sizes = [g.n_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    N = int(offsets[-1])
    A_out = np.zeros((N, N))
    A_in = np.zeros((N, N))
    nbr = np.zeros((N, N), dtype=bool)
    node_items = np.zeros(N, dtype=np.int64)
    pos_node, pos_rev, seg = [], [], []
    for b, g in enumerate(graphs):
        o, n = offsets[b], sizes[b]
        A_out[o:o + n, o:o + n] = g.A_out
        A_in[o:o + n, o:o + n] = g.A_in
        for u, w in g.E_re:
            nbr[o + u, o + w] = nbr[o + w, o + u] = True
        node_items[o:o + n] = g.nodes
        L = len(g.node_of)
        pos_node.extend(o + s for s in g.node_of)
        pos_rev.extend(range(L - 1, -1, -1))
        seg.extend([b] * L)
    B, T = len(graphs), len(seg)
    seg = np.array(seg, dtype=np.int64)
    seg_sum = np.zeros((B, T))
    seg_sum[seg, np.arange(T)] = 1.0
    lengths = seg_sum.sum(axis=1)
    has_nbr = nbr.any(axis=1)

    rev_items = np.zeros(0, dtype=np.int64)
    node_rev = np.zeros(N, dtype=np.int64)
    if need_reviews and has_nbr.any():
        cand = np.unique(node_items[has_nbr])
        rev_items = np.array([i for i in cand if len(review_tokens[i]) > 0], dtype=np.int64)
    Lmax = max((len(review_tokens[i]) for i in rev_items), default=0)
    rev_tokens = np.zeros((len(rev_items), max(Lmax, 1)), dtype=np.int64)
    rev_mask = np.zeros_like(rev_tokens, dtype=np.float64)
    row_of = {}
    for r, i in enumerate(rev_items):
        toks = review_tokens[i]
        rev_tokens[r, :len(toks)] = toks
        rev_mask[r, :len(toks)] = 1.0
        row_of[int(i)] = r
    zero_row = len(rev_items)
    node_rev = np.array([row_of.get(int(i), zero_row) for i in node_items], dtype=np.int64)

    return Batch(
        node_items=node_items, A_out=A_out, A_in=A_in, nbr_mask=nbr,
        has_nbr=has_nbr.astype(np.float64),
        pos_node=np.array(pos_node, dtype=np.int64), pos_rev=np.array(pos_rev, dtype=np.int64),
        seg_mean=seg_sum / lengths[:, None], seg_sum=seg_sum, seg_expand=seg_sum.T.copy(),
        rev_items=rev_items, rev_tokens=rev_tokens, rev_mask=rev_mask, node_rev=node_rev,
    )


# ---------------------------------------------------------------- layers


def encode_reviews(params: ParameterSet, tokens: np.ndarray, mask: np.ndarray,
                   cfg: ModelConfig) -> Tensor:
    """Multi-head self-attention over each review document, pooled by the mean
    over real tokens. Returns one d_w vector per row of `tokens`."""
    U, L = tokens.shape
    dw, dh = cfg.d_w, cfg.d_head
    E2 = nc.gather_rows(params["word_emb"], tokens.reshape(-1))           # U*L x dw
    key_mask = np.broadcast_to(mask[:, None, :] > 0, (U, L, L))
    heads = []
    for i in range(cfg.heads):
        Q = nc.reshape(nc.matmul(E2, params[f"W_Q{i}"]), (U, L, dh))
        K = nc.reshape(nc.matmul(E2, params[f"W_K{i}"]), (U, L, dh))
        V = nc.reshape(nc.matmul(E2, params[f"W_V{i}"]), (U, L, dh))
        S = nc.scale(nc.matmul(Q, nc.transpose(K)), 1.0 / math.sqrt(dh))
        heads.append(nc.matmul(nc.masked_softmax(S, key_mask), V))
    cat = nc.reshape(nc.concat(heads, axis=-1), (U * L, cfg.heads * dh))
    out = nc.reshape(nc.matmul(cat, params["W_1"]), (U, L, dw))
    return nc.masked_mean(out, mask)


def ail_forward(params: ParameterSet, A_out: np.ndarray, A_in: np.ndarray, h: Tensor,
                steps: int = 1) -> Tensor:
    """Gated propagation over the AIG for `steps` steps."""
    d = h.shape[1]
    H = params["H"]
    Wz_t, Wr_t, Wo_t = (nc.transpose(params[n]) for n in ("W_z", "W_r", "W_o"))
    Uz_t, Ur_t, Uo_t = (nc.transpose(params[n]) for n in ("U_z", "U_r", "U_o"))
    for _ in range(steps):
        hH = nc.matmul(h, H)
        a = nc.add(nc.concat([nc.matmul(A_out, nc.slice_cols(hH, 0, d)),
                              nc.matmul(A_in, nc.slice_cols(hH, d, 2 * d))], axis=1),
                   params["b_1"])
        z = nc.sigmoid(nc.add(nc.matmul(a, Wz_t), nc.matmul(h, Uz_t)))
        r = nc.sigmoid(nc.add(nc.matmul(a, Wr_t), nc.matmul(h, Ur_t)))
        cand = nc.tanh(nc.add(nc.matmul(a, Wo_t), nc.matmul(nc.mul(r, h), Uo_t)))
        h = nc.add(nc.mul(nc.one_minus(z), h), nc.mul(z, cand))
    return h


def ril_weights(batch: Batch, reviews: Tensor | None, variant: str) -> Tensor:
    """Row-normalised attention over RIG neighbours (zero rows for isolated nodes)."""
    mask = batch.nbr_mask
    if variant == "no_review" or reviews is None:
        cnt = mask.sum(axis=1, keepdims=True)
        return Tensor(np.where(mask, 1.0 / np.where(cnt > 0, cnt, 1), 0.0))
    R = nc.normalize_rows(reviews)
    cos = nc.matmul(R, nc.transpose(R))
    return nc.masked_softmax(cos, mask)


def ril_forward(batch: Batch, h: Tensor, reviews: Tensor | None, variant: str = "full",
                source: Tensor | None = None) -> Tensor:
    """Attention-weighted sum of RIG neighbour states; isolated nodes pass through."""
    if variant == "no_ril" or not batch.nbr_mask.any():
        return h
    src = h if source is None else source
    pi = ril_weights(batch, reviews, variant)
    return nc.add(nc.matmul(pi, src), nc.scale_rows(h, 1.0 - batch.has_nbr))


def node_reviews(params: ParameterSet, batch: Batch, cfg: ModelConfig) -> Tensor | None:
    if cfg.variant in ("no_ril", "no_review") or not batch.nbr_mask.any():
        return None
    zero = Tensor(np.zeros((1, cfg.d_w)))
    if len(batch.rev_items):
        enc = encode_reviews(params, batch.rev_tokens, batch.rev_mask, cfg)
        table = nc.concat([enc, zero], axis=0)
    else:
        table = zero
    return nc.gather_rows(table, batch.node_rev)


def stack_forward(params: ParameterSet, batch: Batch, cfg: ModelConfig, base: Tensor,
                  reviews: Tensor | None, train: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Alternating AIL/RIL layers with dense connections, projected back to width d."""
    outs = [base]
    for layer in range(cfg.k):
        inp = base if layer == 0 else nc.matmul(nc.concat(outs, axis=1), params[f"dense_{layer}"])
        if layer % 2 == 0:
            out = ail_forward(params, batch.A_out, batch.A_in, inp, cfg.steps)
        else:
            src = base if cfg.ril_source == "base" else None
            out = ril_forward(batch, inp, reviews, cfg.variant, source=src)
        outs.append(nc.dropout(out, cfg.dropout, train, rng))
    return nc.matmul(nc.concat(outs, axis=1), params["dense_out"])


def session_repr(params: ParameterSet, batch: Batch, Hp: Tensor) -> Tensor:
    """Position-aware soft attention readout, one row per session."""
    X = nc.gather_rows(Hp, batch.pos_node)
    Pp = nc.gather_rows(params["P"], batch.pos_rev)
    Z = nc.tanh(nc.add(nc.matmul(nc.concat([X, Pp], axis=1), nc.transpose(params["W_2"])),
                       params["b_2"]))
    s_mean = nc.matmul(batch.seg_mean, X)
    G = nc.sigmoid(nc.add(nc.add(nc.matmul(Z, nc.transpose(params["W_3"])),
                                 nc.matmul(nc.matmul(batch.seg_expand, s_mean),
                                           nc.transpose(params["W_4"]))),
                          params["b_3"]))
    beta = nc.matmul(G, nc.reshape(params["q"], (-1, 1)))
    return nc.matmul(batch.seg_sum, nc.scale_rows(X, beta))


def score_logits(s: Tensor, item_emb: Tensor) -> Tensor:
    return nc.matmul(s, nc.transpose(item_emb))


def score(s, item_emb) -> np.ndarray:
    """Softmax over s . h_i for every candidate item."""
    return nc.softmax(score_logits(nc.as_tensor(s), nc.as_tensor(item_emb)), axis=-1).value


# ---------------------------------------------------------------- model


class RIGNN:
    """Bundles parameters with the per-item topics and review tokens they act on."""

    def __init__(self, cfg: ModelConfig, params: ParameterSet, dominant: np.ndarray,
                 review_tokens: Sequence[np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.dominant = np.asarray(dominant, dtype=np.int64)
        self.review_tokens = [np.asarray(t, dtype=np.int64)[:cfg.review_len] for t in review_tokens]
        self._graphs: dict[tuple[int, ...], SessionGraph] = {}
        self.truncated = 0

    @property
    def num_items(self) -> int:
        return self.params["item_emb"].shape[0]

    def graph(self, prefix: Sequence[int]) -> SessionGraph:
        key = tuple(prefix)
        g = self._graphs.get(key)
        if g is None:
            g = build_graph(key, self.dominant, ignore_topics=self.cfg.variant == "no_topic")
            self._graphs[key] = g
        return g

    def clip(self, prefix: Sequence[int]) -> tuple[int, ...]:
        if len(prefix) > self.cfg.n_max:
            self.truncated += 1
            log.warning("session of length %d truncated to the last %d items",
                        len(prefix), self.cfg.n_max)
            return tuple(prefix[-self.cfg.n_max:])
        return tuple(prefix)

    def batch(self, prefixes: Sequence[Sequence[int]]) -> Batch:
        graphs = [self.graph(self.clip(p)) for p in prefixes]
        need = self.cfg.variant in ("full", "no_topic")
        return layout_batch(graphs, self.review_tokens, need_reviews=need)

    def forward(self, batch: Batch, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Logits over all items, one row per session."""
        p = self.params
        base = nc.gather_rows(p["item_emb"], batch.node_items)
        reviews = node_reviews(p, batch, self.cfg)
        Hp = stack_forward(p, batch, self.cfg, base, reviews, train=train, rng=rng)
        s = session_repr(p, batch, Hp)
        return score_logits(s, p["item_emb"])

    def loss(self, prefixes, labels, l2: float = 0.0, train: bool = False,
             rng: np.random.Generator | None = None) -> tuple[Tensor, int]:
        logits = self.forward(self.batch(prefixes), train=train, rng=rng)
        ce, clamped = nc.softmax_nll(logits, labels)
        if l2 > 0:
            reg = None
            for _, t in self.params.items():
                sq = nc.sum_all(nc.mul(t, t))
                reg = sq if reg is None else nc.add(reg, sq)
            ce = nc.add(ce, nc.scale(reg, l2 / 2.0))
        return ce, clamped

    def predict_proba(self, prefixes) -> np.ndarray:
        logits = self.forward(self.batch(prefixes)).value
        return nc.softmax(logits, axis=-1).value

    def logits(self, prefixes) -> np.ndarray:
        return self.forward(self.batch(prefixes)).value

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"model": self.cfg.to_dict()}
        meta.update(extra or {})
        self.params.save(path, meta)
