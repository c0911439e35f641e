"""Small dense reverse-mode autodiff engine on top of numpy float64 arrays.

Every op builds a `Tensor` holding its value, its parents and a closure that
pushes the output gradient back to the parents. `backward` walks the graph in
reverse topological order. Values are checked for NaN/Inf after every op.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "rignn-params"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    # operator sugar, kept to what the model uses
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _make(value: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by {op}")
    out = Tensor(value)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _shape_error(op: str, a, b) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """2-D @ 2-D, or batched 3-D @ 3-D with equal batch size."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    ok = (av.ndim == bv.ndim == 2 and av.shape[1] == bv.shape[0]) or (
        av.ndim == bv.ndim == 3 and av.shape[0] == bv.shape[0] and av.shape[2] == bv.shape[1]
    )
    if not ok:
        raise _shape_error("matmul", av.shape, bv.shape)

    def backward(g):
        _accum(a, g @ np.swapaxes(bv, -1, -2))
        _accum(b, np.swapaxes(av, -1, -2) @ g)

    return _make(av @ bv, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.value.ndim < 2:
        raise DimensionError(f"transpose: need at least 2 dims, got {a.shape}")

    def backward(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.value, -1, -2).copy(), (a,), backward, "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        v = a.value.reshape(shape)
    except ValueError as exc:
        raise _shape_error("reshape", a.shape, shape) from exc

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(v, (a,), backward, "reshape")


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Columns start:stop of a matrix."""
    a = as_tensor(a)
    if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: bad range {start}:{stop} for shape {a.shape}")

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[:, start:stop] = g
            _accum(a, full)

    return _make(a.value[:, start:stop].copy(), (a,), backward, "slice_cols")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    vals = [p.value for p in parts]
    try:
        v = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise DimensionError(
            "concat: incompatible shapes " + ", ".join(str(x.shape) for x in vals)
        ) from exc
    bounds = np.cumsum([x.shape[axis] for x in vals])[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, bounds, axis=axis)):
            _accum(p, gp)

    return _make(v, parts, backward, "concat")


def gather_rows(table, index) -> Tensor:
    """Rows `table[index]`; gradient is scattered back with accumulation."""
    table = as_tensor(table)
    idx = np.asarray(index, dtype=np.int64)
    if table.value.ndim != 2 or idx.ndim != 1:
        raise _shape_error("gather_rows", table.shape, idx.shape)

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.value)
            np.add.at(full, idx, g)
            _accum(table, full)

    return _make(table.value[idx], (table,), backward, "gather_rows")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    """Same-shape addition, or (matrix, row-vector) bias addition."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        def backward(g):
            _accum(a, g)
            _accum(b, g)
    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        def backward(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))
    else:
        raise _shape_error("add", av.shape, bv.shape)
    return _make(av + bv, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise _shape_error("mul", av.shape, bv.shape)

    def backward(g):
        _accum(a, g * bv)
        _accum(b, g * av)

    return _make(av * bv, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        _accum(a, g * c)

    return _make(a.value * c, (a,), backward, "scale")


def scale_rows(x, w) -> Tensor:
    """x[i, :] * w[i] for a matrix x and a vector (or n x 1 column) w."""
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    col = wv.reshape(-1)
    if xv.ndim != 2 or col.shape[0] != xv.shape[0] or wv.size != col.shape[0]:
        raise _shape_error("scale_rows", xv.shape, wv.shape)

    def backward(g):
        _accum(x, g * col[:, None])
        _accum(w, (g * xv).sum(axis=1).reshape(wv.shape))

    return _make(xv * col[:, None], (x, w), backward, "scale_rows")


def one_minus(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return _make(1.0 - a.value, (a,), backward, "one_minus")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)

    def backward(g):
        _accum(a, g * (1.0 - t * t))

    return _make(t, (a,), backward, "tanh")


# ---------------------------------------------------------------- reductions


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.array(a.value.sum()), (a,), backward, "sum_all")


def mean(a, axis: int) -> Tensor:
    a = as_tensor(a)
    n = a.value.shape[axis]
    if n == 0:
        raise DimensionError(f"mean: empty axis {axis} in shape {a.shape}")

    def backward(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.shape))

    return _make(a.value.mean(axis=axis), (a,), backward, "mean")


def masked_mean(x, mask) -> Tensor:
    """Mean of x[b, i, :] over positions i with mask[b, i] = 1; all-masked rows give 0."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    if x.value.ndim != 3 or m.shape != x.shape[:2]:
        raise _shape_error("masked_mean", x.shape, m.shape)
    cnt = m.sum(axis=1)
    w = m / np.where(cnt > 0, cnt, 1.0)[:, None]

    def backward(g):
        _accum(x, w[:, :, None] * g[:, None, :])

    return _make(np.einsum("bi,bid->bd", w, x.value), (x,), backward, "masked_mean")


# ---------------------------------------------------------------- normalisers


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.value
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (a,), backward, "softmax")


def masked_softmax(a, mask) -> Tensor:
    """Softmax over the last axis restricted to entries with mask = 1.

    Masked entries get probability 0; rows with no admissible entry are all 0.
    """
    a = as_tensor(a)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise _shape_error("masked_softmax", a.shape, m.shape)
    x = np.where(m, a.value, -np.inf)
    mx = x.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(np.where(m, a.value, 0.0) - mx), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    s = e / np.where(z > 0, z, 1.0)

    def backward(g):
        _accum(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (a,), backward, "masked_softmax")


def normalize_rows(a) -> Tensor:
    """Each row divided by its L2 norm; zero rows stay zero."""
    a = as_tensor(a)
    x = a.value
    if x.ndim != 2:
        raise DimensionError(f"normalize_rows: need 2 dims, got {x.shape}")
    nrm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.where(nrm > 0, nrm, 1.0)
    u = np.where(nrm > 0, x / safe, 0.0)

    def backward(g):
        proj = (g * u).sum(axis=1, keepdims=True)
        _accum(a, np.where(nrm > 0, (g - u * proj) / safe, 0.0))

    return _make(u, (a,), backward, "normalize_rows")


def cosine_similarity(u, v) -> Tensor:
    """Cosine of two vectors; 0 if either is the zero vector."""
    u, v = as_tensor(u), as_tensor(v)
    if u.value.ndim != 1 or u.shape != v.shape:
        raise _shape_error("cosine_similarity", u.shape, v.shape)
    un = normalize_rows(reshape(u, (1, -1)))
    vn = normalize_rows(reshape(v, (1, -1)))
    return reshape(matmul(un, transpose(vn)), ())


# ---------------------------------------------------------------- stochastic


def dropout(a, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or train is False."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        _accum(a, g * keep)

    return _make(a.value * keep, (a,), backward, "dropout")


# ---------------------------------------------------------------- losses


def softmax_nll(logits, labels, clamp: float = 1e-12) -> tuple[Tensor, int]:
    """Mean of -log softmax(logits)[label] over rows, with the probability
    clamped from below at `clamp`. Returns (loss, number of clamped rows)."""
    logits = as_tensor(logits)
    lab = np.asarray(labels, dtype=np.int64)
    x = logits.value
    if x.ndim != 2 or lab.shape != (x.shape[0],):
        raise _shape_error("softmax_nll", x.shape, lab.shape)
    b = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(b), lab] - logz
    clamped = logp < np.log(clamp)
    logp = np.where(clamped, np.log(clamp), logp)
    probs = np.exp(shifted - logz[:, None])

    def backward(g):
        d = probs.copy()
        d[np.arange(b), lab] -= 1.0
        d[clamped] = 0.0
        _accum(logits, d * (float(g) / b))

    return _make(np.array(-logp.mean()), (logits,), backward, "softmax_nll"), int(clamped.sum())


# ---------------------------------------------------------------- backward


def backward(out: Tensor) -> None:
    """Populate `.grad` of every tensor that `out` depends on."""
    if out.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {out.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------- parameters


class ParameterSet:
    """Ordered name -> trainable Tensor map."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.value))
            for k, t in self._params.items()
        }

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.value for k, t in self._params.items()}

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.arrays().items()})

    def num_values(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                  "names": list(self._params), "meta": meta or {}}
        payload = {f"p/{k}": v for k, v in self.arrays().items()}
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **payload)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ParameterSet", dict]:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: not a parameter checkpoint")
            if header["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
            arrays = {k: z[f"p/{k}"] for k in header["names"]}
        return cls(arrays), header["meta"]


# ---------------------------------------------------------------- gradient check


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParameterSet,
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    samples: int = 50,
    seed: int = 0,
    names: Iterable[str] | None = None,
    order: int = 2,
) -> dict[str, float]:
    """Compare analytic gradients with central finite differences.

    `loss_fn` must be deterministic and rebuild the graph from `params` on each
    call. Returns the max relative error per parameter, measured on up to
    `samples` randomly chosen entries, as |g - fd| / max(|g|, |fd|, 1e-8).
    `order` selects the 2-point (default) or 4-point central stencil.
    `tolerance` is not enforced here; use `report_ok` for a verdict.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    rng = np.random.default_rng(seed)
    params.zero_grad()
    backward(loss_fn())
    analytic = {k: g.copy() for k, g in params.grads().items()}
    report: dict[str, float] = {}
    for name in names if names is not None else list(params):
        t = params[name]
        flat = t.value.reshape(-1)
        n = flat.size
        picks = rng.choice(n, size=min(samples, n), replace=False)
        worst = 0.0
        for i in picks:
            old = flat[i]

            def at(delta):
                flat[i] = old + delta
                return float(loss_fn().value)

            if order == 2:
                fd = (at(eps) - at(-eps)) / (2 * eps)
            else:
                fd = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps)
            flat[i] = old
            ga = analytic[name].reshape(-1)[i]
            err = abs(ga - fd) / max(abs(ga), abs(fd), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


def report_ok(report: dict[str, float], tolerance: float) -> bool:
    return all(v < tolerance for v in report.values())
