import math

import numpy as np
import pytest

from rignn import numcore as nc
from rignn.evaluation import precision_at_k, results_from_scores
from rignn.model import ModelConfig, RIGNN
from rignn.numcore import ParameterSet
from rignn.train import (
    AdamState, TrainConfig, adam_step, build_model, evaluate_model, loss, review_vocab,
    split_validation, train, use_params,
)
from rignn.ingest import Session

from .toy import toy_bundle, toy_dominant, toy_examples

CFG = dict(d=8, d_w=8, heads=2, d_head=4, k=2, dropout=0.0, n_max=10)


def toy_model(seed=0, **kw):
    return build_model(toy_bundle(), toy_dominant(), ModelConfig(**{**CFG, "seed": seed, **kw}))


# ---------------------------------------------------------------- loss


def test_loss_examples():
    assert loss(np.full((1, 4), 0.25), [2])[0] == pytest.approx(math.log(4))
    assert loss(np.array([[0.0, 1.0, 0.0]]), [1])[0] == 0.0
    y = np.array([[0.5, 0.5, 0, 0], [0.25, 0.25, 0.25, 0.25]])
    assert loss(y, [0, 3])[0] == pytest.approx(1.5 * math.log(2))


def test_loss_regulariser_and_clamp():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([[3.0]])}
    value, _ = loss(np.full((1, 2), 0.5), [0], params, l2=0.1)
    assert value == pytest.approx(math.log(2) + 0.05 * 14.0)
    value, clamped = loss(np.array([[1.0, 0.0]]), [1])
    assert clamped == 1 and value == pytest.approx(-math.log(1e-12))


def test_model_loss_matches_numpy_loss():
    model = toy_model()
    ex = toy_examples(6)
    prefixes, labels = [e.prefix for e in ex], [e.label for e in ex]
    value, _ = model.loss(prefixes, labels, l2=1e-3)
    ref, _ = loss(model.predict_proba(prefixes), labels, model.params.arrays(), l2=1e-3)
    assert value.value == pytest.approx(ref, rel=1e-12)


def test_regularised_gradient_passes_fd():
    model = toy_model()
    ex = toy_examples(3)
    report = nc.grad_check(
        lambda: model.loss([e.prefix for e in ex], [e.label for e in ex], l2=0.05)[0],
        model.params, eps=1e-3, samples=6, order=4, names=["item_emb", "H", "q", "W_1"])
    assert nc.report_ok(report, 1e-4), report


# ---------------------------------------------------------------- adam


def textbook_adam(theta, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_first_step_is_lr_times_sign():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.array([3.0, -0.5])}, AdamState(), 1, lr=0.01)
    np.testing.assert_allclose(params["w"], [1.0 - 0.01, -2.0 + 0.01], rtol=1e-8)


def test_adam_zero_grad_is_identity():
    params = {"w": np.array([1.5, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(), 1)
    np.testing.assert_array_equal(params["w"], [1.5, -2.0])


def test_adam_matches_textbook_sequence():
    gs = [0.3, -1.2, 0.05, 2.0]
    params = {"w": np.array([0.7])}
    state = AdamState()
    for t, g in enumerate(gs, start=1):
        adam_step(params, {"w": np.array([g])}, state, t)
    assert params["w"][0] == pytest.approx(textbook_adam(0.7, gs), rel=1e-14)


def test_adam_rejects_step_zero():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamState(), 0)


# ---------------------------------------------------------------- loop


def test_epochs_zero_writes_initial_checkpoint_only(tmp_path):
    model = toy_model()
    before = model.params.copy()
    res = train(model, toy_examples(), TrainConfig(epochs=0), out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_000.npz"]
    assert res.log == []
    for name, arr in before.arrays().items():
        np.testing.assert_array_equal(model.params[name].value, arr)


def test_same_seed_same_logs_and_checkpoints(tmp_path):
    cfg = TrainConfig(epochs=3, batch_size=7, seed=3)
    val = toy_examples(8, seed=9)
    for run in ("a", "b"):
        model = toy_model(dropout=0.2)
        train(model, toy_examples(), cfg, val_examples=val, out_dir=tmp_path / run)
    for name in ("metrics.jsonl", "epoch_003.npz", "best.npz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_checkpoint_reload_reproduces_metrics(tmp_path):
    model = toy_model()
    ex = toy_examples()
    train(model, ex, TrainConfig(epochs=2, batch_size=5), out_dir=tmp_path)
    before = evaluate_model(model, ex, ks=(1, 5), n=10)
    params, meta = ParameterSet.load(tmp_path / "best.npz")
    fresh = toy_model(seed=42)
    use_params(fresh, params)
    assert meta["epoch"] == 2
    assert evaluate_model(fresh, ex, ks=(1, 5), n=10) == before


def test_loss_decreases_on_toy_corpus():
    model = toy_model()
    res = train(model, toy_examples(), TrainConfig(epochs=40, batch_size=20, learning_rate=0.01))
    losses = np.array([r["loss"] for r in res.log])
    smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-9)


def test_overfits_twenty_examples():
    model = toy_model()
    ex = toy_examples()
    train(model, ex, TrainConfig(epochs=200, batch_size=20, learning_rate=0.01, l2=0.0))
    res = results_from_scores(model.logits([e.prefix for e in ex]), [e.label for e in ex], 10)
    assert precision_at_k(res, 1) >= 90.0


def test_divergence_restores_last_good(monkeypatch):
    model = toy_model()
    ex = toy_examples()
    real = RIGNN.loss
    calls = {"n": 0}

    def flaky(self, *a, **kw):
        calls["n"] += 1
        if calls["n"] == 3:             # first batch of epoch 2
            raise nc.NumericalError("boom")
        return real(self, *a, **kw)

    monkeypatch.setattr(RIGNN, "loss", flaky)
    res = train(model, ex, TrainConfig(epochs=3, batch_size=10))
    assert res.diverged and len(res.log) == 1
    # the model is back at the end-of-epoch-1 parameters, which are also the best so far
    for name, arr in res.best_params.arrays().items():
        np.testing.assert_array_equal(model.params[name].value, arr)


def test_validation_split_latest_sessions():
    ss = [Session((0, 1), t) for t in (50, 10, 40, 20, 30, 60, 70, 80, 90, 100)]
    fit, val = split_validation(ss, 0.2)
    assert [s.start_time for s in val] == [90, 100]
    assert len(fit) == 8


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)


def test_word_vectors_loaded(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("bird " + " ".join(["0.5"] * 8) + "\nunknown " + " ".join(["1"] * 8) + "\n")
    model = build_model(toy_bundle(), toy_dominant(), ModelConfig(**CFG), word_vectors=path)
    vocab, _ = review_vocab(toy_bundle(), 256)
    np.testing.assert_array_equal(model.params["word_emb"].value[vocab["bird"]], 0.5)
    path.write_text("bird 1 2\n")
    with pytest.raises(ValueError):
        build_model(toy_bundle(), toy_dominant(), ModelConfig(**CFG), word_vectors=path)
