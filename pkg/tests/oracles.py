"""Reference implementations written independently of the package, used as test oracles."""

from collections import defaultdict

import numpy as np

NO_TOPIC = -1


def brute_force_graph(session, dominant):
    """Enumerate every pair of positions and count edges with plain dicts."""
    nodes = []
    for x in session:
        if x not in nodes:
            nodes.append(x)
    slot = {x: nodes.index(x) for x in nodes}
    n = len(nodes)

    adj = defaultdict(int)
    for t in range(len(session) - 1):
        a, b = session[t], session[t + 1]
        if a != b:
            adj[(slot[a], slot[b])] += 1
    rig = defaultdict(int)
    for t1 in range(len(session)):
        for t2 in range(len(session)):
            if t1 >= t2:
                continue
            a, b = session[t1], session[t2]
            if a == b or dominant[a] == NO_TOPIC or dominant[a] != dominant[b]:
                continue
            rig[(slot[a], slot[b])] += 1

    def out_in(counts):
        out_m = np.zeros((n, n))
        in_m = np.zeros((n, n))
        for u in range(n):
            total = sum(c for (s, _), c in counts.items() if s == u)
            for (s, w), c in counts.items():
                if s == u:
                    out_m[u, w] = c / total
        for w in range(n):
            total = sum(c for (_, t), c in counts.items() if t == w)
            for (u, t), c in counts.items():
                if t == w:
                    in_m[w, u] = c / total
        return out_m, in_m

    A_out, A_in = out_in(adj)
    B_out, B_in = out_in(rig)
    return {
        "nodes": nodes, "aig_edges": set(adj), "rig_edges": set(rig),
        "A_out": A_out, "A_in": A_in, "B_out": B_out, "B_in": B_in,
    }


def brute_force_metrics(ranked_lists, labels, k):
    """Hit rate and reciprocal rank by linear scan, in percent."""
    hits, rr = 0, 0.0
    for ranked, y in zip(ranked_lists, labels):
        for pos in range(k):
            if ranked[pos] == y:
                hits += 1
                rr += 1.0 / (pos + 1)
                break
    return 100.0 * hits / len(labels), 100.0 * rr / len(labels)


# ---------------------------------------------------------------- model oracles
# Plain loops over scalars; parameter layouts follow the package's naming.


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _vec_mat(v, M):
    """Row vector times matrix."""
    out = [0.0] * len(M[0])
    for j in range(len(M[0])):
        for i in range(len(v)):
            out[j] += v[i] * M[i][j]
    return out


def _mat_vec(M, v):
    return [sum(M[i][j] * v[j] for j in range(len(v))) for i in range(len(M))]


def ail_scalar(p, A_out, A_in, h0, steps):
    n, d = len(h0), len(h0[0])
    h = [list(map(float, row)) for row in h0]
    for _ in range(steps):
        hH = [_vec_mat(h[j], p["H"]) for j in range(n)]
        new = []
        for i in range(n):
            a = [0.0] * (2 * d)
            for j in range(n):
                for c in range(d):
                    a[c] += A_out[i][j] * hH[j][c]
                    a[d + c] += A_in[i][j] * hH[j][d + c]
            a = [a[c] + p["b_1"][c] for c in range(2 * d)]
            Wz_a, Wr_a, Wo_a = (_mat_vec(p[k], a) for k in ("W_z", "W_r", "W_o"))
            Uz_h, Ur_h = _mat_vec(p["U_z"], h[i]), _mat_vec(p["U_r"], h[i])
            z = [_sig(Wz_a[c] + Uz_h[c]) for c in range(d)]
            r = [_sig(Wr_a[c] + Ur_h[c]) for c in range(d)]
            rh = [r[c] * h[i][c] for c in range(d)]
            Uo_rh = _mat_vec(p["U_o"], rh)
            cand = [np.tanh(Wo_a[c] + Uo_rh[c]) for c in range(d)]
            new.append([(1 - z[c]) * h[i][c] + z[c] * cand[c] for c in range(d)])
        h = new
    return np.array(h)


def _cos(u, v):
    nu = np.sqrt(sum(x * x for x in u))
    nv = np.sqrt(sum(x * x for x in v))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def ril_scalar(h, neighbours, reviews=None, source=None):
    """neighbours[i]: list of node indices; reviews None means uniform weights."""
    src = h if source is None else source
    out = []
    for i, nb in enumerate(neighbours):
        if not nb:
            out.append(list(h[i]))
            continue
        if reviews is None:
            w = [1.0 / len(nb)] * len(nb)
        else:
            e = [np.exp(_cos(reviews[i], reviews[j])) for j in nb]
            w = [x / sum(e) for x in e]
        out.append([sum(w[t] * src[j][c] for t, j in enumerate(nb)) for c in range(len(h[i]))])
    return np.array(out)


def readout_scalar(p, Hp, node_of):
    n, d = len(node_of), len(Hp[0])
    X = [Hp[s] for s in node_of]
    mean = [sum(X[i][c] for i in range(n)) / n for c in range(d)]
    W4m = _mat_vec(p["W_4"], mean)
    s = [0.0] * d
    for i in range(n):
        pos = p["P"][n - 1 - i]          # last item gets the first position row
        z = [np.tanh(v + b) for v, b in zip(_mat_vec(p["W_2"], list(X[i]) + list(pos)), p["b_2"])]
        g = [_sig(a + b + c) for a, b, c in zip(_mat_vec(p["W_3"], z), W4m, p["b_3"])]
        beta = sum(q * x for q, x in zip(p["q"], g))
        for c in range(d):
            s[c] += beta * X[i][c]
    return np.array(s)


def attention_head_scalar(E, Wq, Wk, Wv):
    L = len(E)
    Q = [_vec_mat(E[t], Wq) for t in range(L)]
    K = [_vec_mat(E[t], Wk) for t in range(L)]
    V = [_vec_mat(E[t], Wv) for t in range(L)]
    dk = len(Q[0])
    out = []
    for t in range(L):
        logits = [sum(a * b for a, b in zip(Q[t], K[u])) / np.sqrt(dk) for u in range(L)]
        mx = max(logits)
        e = [np.exp(x - mx) for x in logits]
        w = [x / sum(e) for x in e]
        out.append([sum(w[u] * V[u][c] for u in range(L)) for c in range(len(V[0]))])
    return out
