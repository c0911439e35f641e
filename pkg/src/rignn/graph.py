"""Per-session graphs: adjacency-driven (AIG) and review-refined (RIG)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .topics import SENTINEL_NO_REVIEW


@dataclass
class SessionGraph:
    nodes: list[int]                     # item index per node slot, first-occurrence order
    node_of: list[int]                   # session position -> node slot
    A_out: np.ndarray
    A_in: np.ndarray
    E_re: set[tuple[int, int]] = field(default_factory=set)   # node-slot pairs
    B_out: np.ndarray | None = None
    B_in: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def A(self) -> np.ndarray:
        """Connection matrix A_out || A_in, shape n' x 2n'."""
        return np.concatenate([self.A_out, self.A_in], axis=1)

    @property
    def B(self) -> np.ndarray:
        return np.concatenate([self.B_out, self.B_in], axis=1)

    def aig_edges(self) -> set[tuple[int, int]]:
        return {(int(u), int(w)) for u, w in zip(*np.nonzero(self.A_out))}

    def re_neighbors(self, node: int) -> list[int]:
        return re_neighbors(self, node)


def _slots(session: Sequence[int]) -> tuple[list[int], list[int]]:
    nodes: list[int] = []
    slot: dict[int, int] = {}
    node_of = []
    for item in session:
        if item not in slot:
            slot[item] = len(nodes)
            nodes.append(item)
        node_of.append(slot[item])
    return nodes, node_of


def _normalize(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalise outgoing counts and (transposed) incoming counts."""
    out_deg = counts.sum(axis=1, keepdims=True)
    in_counts = counts.T
    in_deg = in_counts.sum(axis=1, keepdims=True)
    A_out = np.divide(counts, out_deg, out=np.zeros_like(counts), where=out_deg > 0)
    A_in = np.divide(in_counts, in_deg, out=np.zeros_like(in_counts), where=in_deg > 0)
    return A_out, A_in


def build_aig(session: Sequence[int]) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Edges between consecutive distinct nodes, weighted by occurrence count
    over the source node's total outgoing count (incoming symmetric)."""
    if len(session) < 1:
        raise ValueError("session must be non-empty")
    nodes, node_of = _slots(session)
    n = len(nodes)
    counts = np.zeros((n, n))
    for u, w in zip(node_of, node_of[1:]):
        if u != w:
            counts[u, w] += 1.0
    A_out, A_in = _normalize(counts)
    return nodes, A_out, A_in


def build_rig(
    session: Sequence[int],
    dominant: Sequence[int] | np.ndarray,
    ignore_topics: bool = False,
) -> tuple[set[tuple[int, int]], np.ndarray, np.ndarray]:
    """Edge u -> w for every pair of session positions t1 < t2 whose items share a
    (non-sentinel) topic and map to distinct nodes.

    This keeps the same-topic adjacent edges and adds every later same-topic
    item. Weights are occurrence counts over such position pairs, normalised
    like the AIG. With `ignore_topics` every ordered pair qualifies.
    """
    nodes, node_of = _slots(session)
    n = len(nodes)
    counts = np.zeros((n, n))
    tp = [int(dominant[i]) for i in session]
    L = len(session)
    for t1 in range(L):
        for t2 in range(t1 + 1, L):
            u, w = node_of[t1], node_of[t2]
            if u == w:
                continue
            if not ignore_topics and (tp[t1] != tp[t2] or tp[t1] == SENTINEL_NO_REVIEW):
                continue
            counts[u, w] += 1.0
    edges = {(int(u), int(w)) for u, w in zip(*np.nonzero(counts))}
    B_out, B_in = _normalize(counts)
    return edges, B_out, B_in


def re_neighbors(graph: SessionGraph, node: int) -> list[int]:
    """Union of outgoing and incoming RIG neighbours, ascending slot order."""
    if not 0 <= node < graph.n_nodes:
        raise IndexError(f"node {node} not in graph with {graph.n_nodes} nodes")
    out = {w for u, w in graph.E_re if u == node}
    inc = {u for u, w in graph.E_re if w == node}
    return sorted(out | inc)


def build_graph(
    session: Sequence[int],
    dominant: Sequence[int] | np.ndarray,
    ignore_topics: bool = False,
) -> SessionGraph:
    nodes, A_out, A_in = build_aig(session)
    _, node_of = _slots(session)
    E_re, B_out, B_in = build_rig(session, dominant, ignore_topics=ignore_topics)
    return SessionGraph(nodes, node_of, A_out, A_in, E_re, B_out, B_in)


def format_edges(graph: SessionGraph, labels: Sequence[str] | None = None) -> str:
    name = (lambda s: labels[graph.nodes[s]]) if labels else (lambda s: str(graph.nodes[s]))
    lines = ["AIG:"]
    for u, w in sorted(graph.aig_edges()):
        lines.append(f"  {name(u)} -> {name(w)}  out={graph.A_out[u, w]:.4g}  in={graph.A_in[w, u]:.4g}")
    lines.append("RIG:")
    for u, w in sorted(graph.E_re):
        lines.append(f"  {name(u)} -> {name(w)}  out={graph.B_out[u, w]:.4g}  in={graph.B_in[w, u]:.4g}")
    return "\n".join(lines)
