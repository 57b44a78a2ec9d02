import json

import numpy as np
import pytest

from rccr import autodiff as ad
from rccr import data
from rccr.model import BackboneConfig, ConfigError, ConvLayer, HeadKind, build_predictor
from rccr.seqcore import one_hot, revcomp
from rccr.symmetry import default_symmetry
from rccr.trainer import (
    TrainConfig,
    TrainState,
    adamw_step,
    augment_batch,
    encode_split,
    evaluate,
    lr_at,
    train,
)

TINY = BackboneConfig(layers=(ConvLayer(8, 5, 1, 4),), hidden=8)


@pytest.fixture(scope="module")
def clf_setup():
    spec = data.TaskSpec(length=60, n_train=96, n_val=16, n_test=48)
    ds = data.generate(spec)
    head = spec.head()
    return ds, build_predictor(TINY, head, spec.length), default_symmetry(head)


@pytest.fixture(scope="module")
def profile_setup():
    spec = data.TaskSpec(
        kind="rc-equivariant-profile", length=128, resolution=32, motifs=("GATTACA",), n_train=64, n_val=8, n_test=16
    )
    ds = data.generate(spec)
    head = spec.head()
    return ds, build_predictor(TINY, head, spec.length), default_symmetry(head, swap_strands=True)


def _strip(log):
    return [{k: v for k, v in e.items() if k != "wall_ms"} for e in log]


def _params_equal(a, b):
    return all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_lr_schedule_examples():
    assert lr_at(0, 100, 1e-3, 0.06) == 0.0
    assert lr_at(6, 100, 1e-3, 0.06) == 1e-3
    assert lr_at(100, 100, 1e-3, 0.06) == 0.0
    assert lr_at(3, 100, 1e-3, 0.06) == pytest.approx(0.5e-3)
    assert lr_at(53, 100, 1e-3, 0.06) == pytest.approx(0.5e-3)
    with pytest.raises(ConfigError):
        lr_at(0, 0, 1e-3)
    with pytest.raises(ValueError):
        lr_at(101, 100, 1e-3)


def test_adamw_zero_grads():
    w0 = np.array([1.0, -2.0])
    params = {"w": ad.Tensor(w0.copy(), requires_grad=True)}
    state = TrainState(0, {"w": np.zeros(2)}, {"w": np.zeros(2)})
    adamw_step(params, {"w": np.zeros(2)}, state, TrainConfig(weight_decay=0.0), lr=0.1)
    np.testing.assert_array_equal(params["w"].data, w0)
    adamw_step(params, {"w": np.zeros(2)}, state, TrainConfig(weight_decay=0.01), lr=0.1)
    np.testing.assert_array_equal(params["w"].data, w0 * (1 - 0.1 * 0.01))
    assert state.step == 2


def test_adamw_rejects_non_finite_and_leaves_params():
    params = {"a": ad.Tensor([1.0], requires_grad=True), "b": ad.Tensor([2.0], requires_grad=True)}
    state = TrainState(0, {k: np.zeros(1) for k in params}, {k: np.zeros(1) for k in params})
    with pytest.raises(FloatingPointError, match="'b'"):
        adamw_step(params, {"a": np.array([1.0]), "b": np.array([np.nan])}, state, TrainConfig(), lr=0.1)
    assert params["a"].data[0] == 1.0 and state.step == 0


def test_adamw_quadratic_monotone_after_warmup():
    w = ad.Tensor([3.0], requires_grad=True)
    cfg = TrainConfig(lr=0.01)
    state = TrainState(0, {"w": np.zeros(1)}, {"w": np.zeros(1)})
    total, trace = 200, []
    for step in range(total):
        (g,) = ad.grad(ad.sum_(w * w), [w])
        adamw_step({"w": w}, {"w": g}, state, cfg, lr_at(step, total, cfg.lr, cfg.warmup_frac))
        trace.append(abs(w.data[0]))
    warm = int(np.ceil(0.06 * total))
    assert all(b < a for a, b in zip(trace[warm:], trace[warm + 1 :]))


def test_train_config_validation():
    with pytest.raises(ConfigError, match="train.lam"):
        TrainConfig(mode="vanilla", lam=0.3)
    with pytest.raises(ConfigError, match="train.lam"):
        TrainConfig(mode="rccr", lam=-1.0)
    with pytest.raises(ConfigError, match="warmup"):
        TrainConfig(warmup_frac=1.0)
    with pytest.raises(ConfigError, match="train.mode"):
        TrainConfig(mode="fancy")


def test_rccr_lambda_zero_matches_vanilla(clf_setup):
    ds, model, sym = clf_setup
    m1, log1 = train(model, ds, TrainConfig(mode="vanilla", epochs=2, batch_size=32), sym)
    m2, log2 = train(model, ds, TrainConfig(mode="rccr", lam=0.0, epochs=2, batch_size=32), sym)
    assert [e["task_loss"] for e in log1] == [e["task_loss"] for e in log2]
    assert _params_equal(m1, m2)


def test_rc_aug_probability_zero_matches_vanilla(clf_setup):
    ds, model, sym = clf_setup
    m1, log1 = train(model, ds, TrainConfig(mode="vanilla", epochs=2, batch_size=32), sym)
    m2, log2 = train(model, ds, TrainConfig(mode="rc-aug", aug_prob=0.0, epochs=2, batch_size=32), sym)
    assert _strip(log1) == _strip(log2)
    assert _params_equal(m1, m2)


def test_training_is_deterministic_and_logged(clf_setup, tmp_path):
    ds, model, sym = clf_setup
    cfg = TrainConfig(mode="rccr", lam=0.3, epochs=2, batch_size=32)
    _, log1 = train(model, ds, cfg, sym, log_path=tmp_path / "log.jsonl")
    _, log2 = train(model, ds, cfg, sym)
    assert _strip(log1) == _strip(log2)
    lines = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert _strip(lines) == _strip(log1)
    assert {"epoch", "task_loss", "penalty", "lr", "wall_ms"} <= set(lines[0])
    assert all(e["penalty"] is not None and np.isfinite(e["penalty"]) for e in lines)


def test_training_leaves_input_model_untouched(clf_setup):
    ds, model, sym = clf_setup
    before = {k: v.data.copy() for k, v in model.params.items()}
    train(model, ds, TrainConfig(epochs=1), sym)
    assert all(np.array_equal(before[k], model.params[k].data) for k in before)


def test_head_mismatch_rejected(clf_setup, profile_setup):
    ds, _, sym = clf_setup
    _, profile_model, _ = profile_setup
    with pytest.raises(ConfigError, match="head"):
        train(profile_model, ds, TrainConfig(epochs=1), sym)


def test_tta_makes_predictions_exactly_consistent(clf_setup):
    ds, model, sym = clf_setup
    batch, rep = evaluate(model, ds.test, sym, tta=True)
    np.testing.assert_array_equal(batch.fwd, batch.rc)
    assert rep["sfr"] == 0.0 and rep["rc_corr"] == 1.0
    assert rep.notes["sfr"] == "exact-by-construction"


def test_untrained_model_is_not_rc_consistent():
    """At initialisation the output bias usually fixes the argmax for every
    input, so flips only show once that constant gap is centred away."""
    spec = data.TaskSpec(n_train=10, n_val=10, n_test=500)
    ds = data.generate(spec)
    head = spec.head()
    sym = default_symmetry(head)
    model = build_predictor(BackboneConfig(), head, spec.length)
    _, rep = evaluate(model, ds.test, sym)
    assert rep["divergence"] > 0.0 and rep["rc_corr_pooled"] < 1.0
    x, _ = encode_split(ds.test, head, sym)
    gap = model.predict(x)[:, 1] - model.predict(x)[:, 0]
    model.params["out.b"].data[1] -= np.median(gap)
    _, rep = evaluate(model, ds.test, sym)
    assert rep["sfr"] > 0.0


def test_profile_training_and_eval(profile_setup):
    ds, model, sym = profile_setup
    trained, log = train(model, ds, TrainConfig(mode="rccr", lam=0.3, epochs=2, batch_size=16), sym)
    _, rep = evaluate(trained, ds.test, sym)
    assert "sfr" not in rep and rep["rc_mse"] >= 0.0
    _, rep = evaluate(trained, ds.test, sym, tta=True)
    assert rep["rc_mse"] == 0.0


def test_rc_aug_realigns_profile_targets(profile_setup):
    ds, model, sym = profile_setup
    recs = ds.train[:6]
    x, y = encode_split(recs, model.head, sym)
    flip = np.array([True, False, True, False, True, True])
    xa, ya = augment_batch(x, y, flip, sym)
    for i, r in enumerate(recs):
        seq = revcomp(r.seq) if flip[i] else r.seq
        np.testing.assert_array_equal(xa[i], one_hot(seq))
        expected = data.profile_target(seq, "GATTACA", 32, 2)
        np.testing.assert_array_equal(ya[i], np.log1p(expected))


def test_rc_aug_realigns_bin_class_labels():
    head = HeadKind.bin_classification(3, 2, 4)
    sym = default_symmetry(head, swap_strands=True)
    x = np.zeros((1, 12, 4))
    y = np.array([[0, 1, 1]])
    _, ya = augment_batch(x, y, np.array([True]), sym)
    np.testing.assert_array_equal(ya, [[0, 0, 1]])
