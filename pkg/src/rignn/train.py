"""Cross-entropy training with Adam and L2 regularisation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .evaluation import metric_table, results_from_scores
from .ingest import Bundle, SequenceExample, Session
from .model import ModelConfig, RIGNN, init_params
from .topics import build_corpus

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 100
    l2: float = 1e-5
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    eval_batch_size: int = 500
    top_n: int = 20

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.l2 < 0 or self.epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive; l2, epochs >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: type(getattr(cls, k))(v) for k, v in values.items() if k in known})


def loss(y_hat: np.ndarray, labels: Sequence[int], params: dict[str, np.ndarray] | None = None,
         l2: float = 0.0, clamp: float = 1e-12) -> tuple[float, int]:
    """Mean negative log-likelihood of the labels plus l2/2 * sum of squared params.

    Returns (loss, number of clamped probabilities)."""
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    p = y_hat[np.arange(len(labels)), np.asarray(labels)]
    clamped = int((p <= clamp).sum())
    if clamped:
        log.warning("%d label probabilities clamped at %g", clamped, clamp)
    value = float(-np.log(np.maximum(p, clamp)).mean())
    if params and l2:
        value += l2 / 2.0 * sum(float((v * v).sum()) for v in params.values())
    return value, clamped


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              t: int, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, applied in place."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.t = t


# ---------------------------------------------------------------- assembly


def review_vocab(bundle: Bundle, review_len: int):
    corpus = build_corpus(bundle.catalog.review_doc, max_tokens=review_len)
    return corpus.vocab, corpus.docs


def build_model(bundle: Bundle, dominant: np.ndarray, cfg: ModelConfig,
                word_vectors: str | Path | None = None) -> RIGNN:
    vocab, docs = review_vocab(bundle, cfg.review_len)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = init_params(cfg, bundle.catalog.m, len(vocab), rng)
    if word_vectors is not None:
        n = load_word_vectors(word_vectors, vocab, params["word_emb"].value)
        log.info("loaded %d of %d word vectors from %s", n, len(vocab), word_vectors)
    if len(dominant) != bundle.catalog.m:
        raise ValueError(f"topic file covers {len(dominant)} items, bundle has {bundle.catalog.m}")
    return RIGNN(cfg, params, dominant, docs)


def load_word_vectors(path: str | Path, vocab: dict[str, int], table: np.ndarray) -> int:
    """Overwrite rows of `table` from a text file of `token v1 v2 ...` lines.

    Returns the number of vocabulary words found."""
    found = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2 or parts[0] not in vocab:
                continue
            if len(parts) - 1 != table.shape[1]:
                raise ValueError(f"{path}:{lineno}: expected {table.shape[1]} values, got {len(parts) - 1}")
            table[vocab[parts[0]]] = np.array(parts[1:], dtype=np.float64)
            found += 1
    return found


def split_validation(sessions: Sequence[Session], fraction: float) -> tuple[list[Session], list[Session]]:
    """Hold out the latest `fraction` of sessions by start time."""
    order = sorted(range(len(sessions)), key=lambda i: (sessions[i].start_time, i))
    n_val = int(math.floor(len(sessions) * fraction))
    cut = len(sessions) - n_val
    fit = [sessions[i] for i in sorted(order[:cut])]
    val = [sessions[i] for i in sorted(order[cut:])]
    return fit, val


def evaluate_model(model: RIGNN, examples: Sequence[SequenceExample], ks=(10, 20),
                   n: int = 20, batch_size: int = 500) -> dict[str, float]:
    results = []
    n = min(n, model.num_items)
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        scores = model.logits([ex.prefix for ex in chunk])
        results.extend(results_from_scores(scores, [ex.label for ex in chunk], n))
    return metric_table(results, [k for k in ks if k <= n])


# ---------------------------------------------------------------- loop


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_params: nc.ParameterSet
    diverged: bool = False
    clamped: int = 0


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


def train(model: RIGNN, examples: Sequence[SequenceExample], cfg: TrainConfig,
          val_examples: Sequence[SequenceExample] | None = None,
          out_dir: str | Path | None = None, ks=(10, 20)) -> TrainResult:
    """Mini-batch training. Keeps the parameters with the best validation MRR@20
    (the last epoch if there is no validation data)."""
    shuffle_rng = _stream(cfg.seed, 1)
    dropout_rng = _stream(cfg.seed, 2)
    state = AdamState()
    params = model.params
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "epoch_000.npz", {"epoch": 0})

    history: list[dict] = []
    best_key, best_epoch, best = -math.inf, 0, params.copy()
    last_good = params.copy()
    step = 0
    clamped_total = 0
    select_k = max(k for k in ks)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(examples))
        total, count = 0.0, 0
        try:
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = [examples[i] for i in idx]
                params.zero_grad()
                value, clamped = model.loss([ex.prefix for ex in batch], [ex.label for ex in batch],
                                            l2=cfg.l2, train=True, rng=dropout_rng)
                clamped_total += clamped
                nc.backward(value)
                step += 1
                arrays = params.arrays()
                adam_step(arrays, params.grads(), state, step, cfg.learning_rate,
                          cfg.beta1, cfg.beta2, cfg.adam_eps)
                if not all(np.all(np.isfinite(a)) for a in arrays.values()):
                    raise nc.NumericalError("non-finite parameter after update")
                total += float(value.value) * len(batch)
                count += len(batch)
        except nc.NumericalError as exc:
            log.error("training diverged in epoch %d: %s; restoring last good parameters", epoch, exc)
            for name, arr in last_good.arrays().items():
                params[name].value[...] = arr
            return TrainResult(history, best_epoch, best, diverged=True, clamped=clamped_total)

        rec = {"epoch": epoch, "loss": total / max(count, 1)}
        if val_examples:
            metrics = evaluate_model(model, val_examples, ks, cfg.top_n, cfg.eval_batch_size)
            rec.update(metrics)
            key = metrics.get(f"MRR@{select_k}", -math.inf)
        else:
            key = epoch
        history.append(rec)
        log.info("epoch %d %s", epoch, json.dumps(rec))
        last_good = params.copy()
        if key > best_key:
            best_key, best_epoch, best = key, epoch, params.copy()
        if out is not None:
            model.save(out / f"epoch_{epoch:03d}.npz", {"epoch": epoch})
            with open(out / "metrics.jsonl", "a" if epoch > 1 else "w") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if out is not None and cfg.epochs > 0:
        best.save(out / "best.npz", {"model": model.cfg.to_dict(), "epoch": best_epoch})
    return TrainResult(history, best_epoch, best, clamped=clamped_total)


def use_params(model: RIGNN, params: nc.ParameterSet) -> None:
    for name, arr in params.arrays().items():
        model.params[name].value[...] = arr


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
