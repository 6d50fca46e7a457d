import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import grad_check, gradient_cases
from pgil.nn import (SGD, PgnModel, PinModel, ShapeError, Tensor, TrainConfig, TrainingError, Transform,
                     broadcast_bot, cross_entropy, learning_rate, load_model, model_bytes, pgn_features,
                     pgn_loss, pin_loss, predict_scores, sample_activation_mask, save_model,
                     train_classifier_from_pgn, train_pgn, train_pin)
from pgil.nn import tensor as T
from pgil.nn.models import SITES


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("case", gradient_cases(0), ids=lambda c: c[0])
def test_gradient_matches_finite_difference(case):
    _, build, arrays, wrt = case
    assert grad_check(build, arrays, wrt) < 1e-4


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.integers(1, 3),
       st.sampled_from([1, 3]), st.sampled_from([1, 2]), st.integers(0, 2**31 - 1))
def test_conv_gradient_random_shapes(n, c, hw, o, k, stride, seed):
    r = np.random.default_rng(seed)
    pad = k // 2
    arrays = [r.standard_normal((n, c, hw, hw)), r.standard_normal((o, c, k, k)), r.standard_normal(o)]
    err = grad_check(lambda x, w, b: T.conv2d(x, w, b, stride, pad), arrays)
    assert err < 1e-4


def test_conv_matches_direct_loop(rng):
    x, w, b = rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("ncij,ocij->no", patch, w) + b
    assert np.allclose(out, ref, atol=1e-12)


def test_relu_backward_values():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    T.relu(x).backward(np.array([5.0, 7.0]))
    assert np.array_equal(x.grad, [0.0, 7.0])


def test_identity_one_by_one_conv(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    out = T.conv2d(Tensor(x), Tensor(np.eye(3)[:, :, None, None]))
    assert np.array_equal(out.data, x)


def test_shape_error_names_op():
    with pytest.raises(ShapeError, match="conv2d"):
        T.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_batchnorm_running_stats_update(rng):
    x = rng.standard_normal((8, 2, 3, 3)) * 2 + 1
    rm, rv = np.zeros(2), np.ones(2)
    T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))


def test_log_softmax_normalized(rng):
    ls = T.log_softmax(Tensor(rng.standard_normal((5, 9)) * 30)).data
    assert np.allclose(np.exp(ls).sum(axis=1), 1.0, atol=1e-12)


def test_graph_not_built_without_grad(rng):
    out = T.relu(Tensor(rng.standard_normal(4)))
    assert not out.requires_grad and out._parents == ()


# ---------------------------------------------------------------- PGN

def test_backbone_feature_shape():
    assert PgnModel("desk", 25).forward_backbone(np.zeros((1, 1, 64, 64))).shape == (1, 64, 8, 8)


def test_backbone_batch_equals_singletons(rng):
    pgn = PgnModel("desk", 10, seed=1).eval()
    x = rng.standard_normal((2, 1, 32, 32))
    both = pgn.forward_backbone(x).data
    one = np.concatenate([pgn.forward_backbone(x[i:i + 1]).data for i in range(2)])
    assert np.allclose(both, one, atol=1e-12)


def test_zero_input_is_finite():
    pgn = PgnModel("desk", 10)
    assert np.all(np.isfinite(pgn(np.zeros((2, 1, 16, 16))).data))


def test_bad_input_size_rejected():
    with pytest.raises(ShapeError):
        PgnModel("desk", 10).forward_backbone(np.zeros((1, 1, 30, 30)))


def test_pml_default_topic_count():
    assert PgnModel().forward_pml(Tensor(np.zeros((2, 64, 4, 4)))).shape == (2, 175)


def test_pml_zero_weights_zero_scores(rng):
    pgn = PgnModel("desk", 12)
    pgn.pml_fc.weight.data[...] = 0
    assert np.all(pgn.forward_pml(Tensor(rng.standard_normal((2, 64, 4, 4)))).data == 0)


def test_pml_channel_mismatch():
    with pytest.raises(ShapeError, match="forward_pml"):
        PgnModel("desk", 12).forward_pml(Tensor(np.zeros((1, 32, 4, 4))))


def test_pml_gradient(rng):
    pgn = PgnModel(profile="desk", n_topics=5, seed=2)
    f = rng.standard_normal((3, 64, 2, 2))
    err = grad_check(lambda fm, wt: _with_weight(pgn, wt, fm), [f, pgn.pml_fc.weight.data.copy()])
    assert err < 1e-4


def _with_weight(pgn, weight, fmap):
    pgn.pml_fc.weight = weight
    return pgn.forward_pml(fmap)


# ---------------------------------------------------------------- mask and losses

def test_mask_threshold_inclusive():
    d = sample_activation_mask([0.7, 0.2, 0.1, 0.0], 0.1, 1.0, np.random.default_rng(0))
    assert np.array_equal(d, [1, 1, 1, 0])


def test_mask_zero_probability():
    assert np.all(sample_activation_mask(np.ones(10), 0.1, 0.0, np.random.default_rng(0)) == 0)


def test_mask_activation_rate():
    d = sample_activation_mask(np.full(100_000, 0.5), 0.1, 0.9, np.random.default_rng(3))
    assert abs(d.mean() - 0.9) < 0.01


@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1))
def test_mask_legality(seed, alpha, p_a):
    r = np.random.default_rng(seed)
    y = r.dirichlet(np.ones(12), size=4)
    d = sample_activation_mask(y, alpha, p_a, r)
    assert np.all(y[d == 1] >= alpha)


def test_pgn_loss_full_mask():
    loss = pgn_loss([0.7, 0.2, 0.1], Tensor(np.zeros(3)), [1, 1, 1]).item()
    assert abs(loss - math.log(3)) < 1e-12
    assert abs(loss - 1.0986) < 1e-4


def test_pgn_loss_partial_mask():
    loss = pgn_loss([0.7, 0.2, 0.1], Tensor(np.zeros(3)), [1, 0, 0]).item()
    assert abs(loss - 0.7 * math.log(3)) < 1e-12


def test_pgn_loss_empty_mask_zero_gradient():
    phi = Tensor(np.array([[0.3, -1.0, 2.0]]), requires_grad=True)
    loss = pgn_loss([[0.5, 0.3, 0.2]], phi, [[0, 0, 0]])
    loss.backward()
    assert loss.item() == 0 and np.all(phi.grad == 0)


@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_pgn_loss_uniform_scores_is_log_k(k, seed):
    y = np.random.default_rng(seed).dirichlet(np.ones(k))
    assert abs(pgn_loss(y, Tensor(np.zeros(k)), np.ones(k)).item() - math.log(k)) < 1e-10


@given(st.integers(0, 2**31 - 1))
def test_hard_loss_closed_form(seed):
    r = np.random.default_rng(seed)
    y = r.dirichlet(np.ones(6), size=3)
    phi = r.standard_normal((3, 6))
    d = (r.random((3, 6)) < 0.5).astype(float)
    ls = phi - np.log(np.exp(phi).sum(axis=1, keepdims=True))
    expect = (-(d * y * ls).sum() + ((1 - d) * y * ls).sum()) / 3
    assert abs(pgn_loss(y, Tensor(phi), d, "hard").item() - expect) < 1e-12


def test_unknown_constraint():
    with pytest.raises(ValueError, match="constraint"):
        pgn_loss([1.0], Tensor(np.zeros(1)), [1.0], "medium")


def test_cross_entropy_uniform_seven_classes():
    assert abs(cross_entropy(Tensor(np.zeros((4, 7))), [0, 3, 6, 2]).item() - math.log(7)) < 1e-12


def test_cross_entropy_confident_limit():
    s = np.full((2, 3), -50.0)
    s[[0, 1], [1, 2]] = 50.0
    assert cross_entropy(Tensor(s), [1, 2]).item() < 1e-40


def test_pin_loss_is_linear_in_lambda(rng):
    s, phi = Tensor(rng.standard_normal((4, 7))), Tensor(rng.standard_normal((4, 5)))
    y, d, lab = rng.dirichlet(np.ones(5), 4), np.ones((4, 5)), [0, 1, 2, 3]
    ce = cross_entropy(s, lab).item()
    sr = pgn_loss(y, phi, d).item()
    assert pin_loss(s, lab, phi, y, d, lam=0.1).item() == ce + 0.1 * sr
    assert pin_loss(s, lab, phi, y, d, lam=0.0).item() == ce


def test_pin_loss_rejects_negative_lambda(rng):
    with pytest.raises(ValueError):
        pin_loss(Tensor(np.zeros((1, 2))), [0], lam=-1)


# ---------------------------------------------------------------- transforms and PIN

def test_identity_transform_at_inj3(rng):
    f = rng.standard_normal((2, 64, 8, 8))
    t = Transform(64, 64, 1.0, rng, "identity")
    assert np.array_equal(t(Tensor(f)).data, f)


def test_inj2_upsamples(rng):
    pin = PinModel("desk", 7, sites=("inj-2",))
    assert pin.transforms["inj-2"](Tensor(rng.standard_normal((1, 64, 8, 8)))).shape == (1, 32, 16, 16)


def test_inj4_pools(rng):
    pin = PinModel("desk", 7, sites=("inj-4",))
    assert pin.transforms["inj-4"](Tensor(rng.standard_normal((1, 64, 8, 8)))).shape == (1, 128, 4, 4)


def test_zero_transforms_are_bitwise_neutral(rng):
    x = rng.standard_normal((2, 1, 32, 32))
    src = Tensor(rng.standard_normal((2, 64, 4, 4)))
    plain = PinModel("desk", 7, sites=(), seed=4).eval()
    injected = PinModel("desk", 7, sites=SITES, seed=4, transform_init="zero").eval()
    assert np.array_equal(plain(x).data, injected(x, src).data)


def test_pin_scores_per_class(rng):
    out = PinModel("desk", 7, sites=SITES)(rng.standard_normal((3, 1, 16, 16)),
                                           Tensor(rng.standard_normal((3, 64, 2, 2))))
    assert out.shape == (3, 7)


def test_pin_needs_source_when_injecting(rng):
    with pytest.raises(ValueError, match="source"):
        PinModel("desk", 7, sites=("inj-3",))(rng.standard_normal((1, 1, 16, 16)))


def test_unknown_site():
    with pytest.raises(ValueError, match="site"):
        PinModel("desk", 7, sites=("inj-1",))


def test_gradient_reaches_classifier_and_transforms(rng):
    pin = PinModel("desk", 4, sites=SITES, seed=1)
    # make the zero-initialised residual branches live so every parameter gets signal
    for name, p in pin.parameters().items():
        if name.endswith("bn2.gamma"):
            p.data[...] = 0.5
    out = pin(rng.standard_normal((4, 1, 16, 16)), Tensor(rng.standard_normal((4, 64, 2, 2))))
    cross_entropy(out, [0, 1, 2, 3]).backward()
    params = pin.parameters()
    assert np.any(params["head.weight"].grad != 0)
    assert all(np.any(params[f"transforms.{s}.conv.weight"].grad != 0) for s in SITES)
    assert np.any(params["backbone.stem.weight"].grad != 0)


def test_broadcast_bot_shape():
    b = broadcast_bot(np.array([[0.2, 0.8]]), 3)
    assert b.shape == (1, 2, 3, 3) and np.all(b.data[0, 1] == 0.8)


# ---------------------------------------------------------------- training

def tiny_data(n=12, k=5, seed=0, size=16):
    r = np.random.default_rng(seed)
    return r.standard_normal((n, 1, size, size)), r.dirichlet(np.full(k, 0.3), size=n), r.integers(0, 3, n)


def test_schedule_cosine_reaches_floor():
    cfg = TrainConfig(lr=0.01, epochs=10, schedule="cosine")
    rates = [learning_rate(cfg, e) for e in range(10)]
    assert rates[0] == 0.01
    assert rates[-3:] == [1e-8] * 3
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_schedule_constant():
    assert learning_rate(TrainConfig(lr=0.05), 19) == 0.05


@pytest.mark.parametrize("kw", [{"lr": 0}, {"lam": -0.1}, {"schedule": "step"}, {"constraint": "x"},
                                {"epochs": 0}, {"momentum": 1.0}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_sgd_momentum_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = SGD([([p], 1.0)], momentum=0.5)
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step(0.1)
    # v1 = 1, v2 = 1.5
    assert np.isclose(p.data[0], 1.0 - 0.1 - 0.15)


def test_train_pgn_deterministic_and_logged(tmp_path):
    x, y, _ = tiny_data()
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
    a, b = PgnModel("desk", 5, seed=3), PgnModel("desk", 5, seed=3)
    log = train_pgn(a, x, y, cfg, log_path=tmp_path / "log.jsonl")
    train_pgn(b, x, y, cfg)
    assert model_bytes(a) == model_bytes(b)
    lines = [json.loads(s) for s in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [ln["epoch"] for ln in lines] == [0, 1]
    assert lines[-1]["loss"] == log[-1]["loss"] and "lr" in lines[0]


def test_constant_rate_log_is_prefix_stable():
    x, y, _ = tiny_data()
    short = train_pgn(PgnModel("desk", 5, seed=2), x, y, TrainConfig(epochs=2, batch_size=4, seed=2))
    long = train_pgn(PgnModel("desk", 5, seed=2), x, y, TrainConfig(epochs=3, batch_size=4, seed=2))
    assert short == long[:2]


def test_train_pgn_loss_decreases():
    x, y, _ = tiny_data(n=16)
    log = train_pgn(PgnModel("desk", 5, seed=0), x, y, TrainConfig(epochs=15, batch_size=8, lr=0.05))
    assert log[-1]["loss"] < log[0]["loss"]


def test_nan_aborts():
    x, y, _ = tiny_data()
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError):
        train_pgn(PgnModel("desk", 5), x, y, TrainConfig(epochs=1, batch_size=4))


def test_sal_off_leaves_pgn_unchanged():
    x, y, lab = tiny_data()
    pgn = PgnModel("desk", 5, seed=1)
    before = model_bytes(pgn)
    pin = PinModel("desk", 3, sites=SITES, seed=1)
    train_pin(pin, x, lab, TrainConfig(epochs=1, batch_size=4, sal=False), pgn=pgn, bots=y)
    assert model_bytes(pgn) == before


def test_sal_on_fine_tunes_pgn():
    x, y, lab = tiny_data()
    pgn = PgnModel("desk", 5, seed=1)
    before = model_bytes(pgn)
    pin = PinModel("desk", 3, sites=SITES, seed=1)
    train_pin(pin, x, lab, TrainConfig(epochs=1, batch_size=4, sal=True, lr=0.01), pgn=pgn, bots=y)
    assert model_bytes(pgn) != before


def test_train_pin_deterministic():
    x, y, lab = tiny_data()
    outs = []
    for _ in range(2):
        pgn = PgnModel("desk", 5, seed=1)
        pin = PinModel("desk", 3, sites=("inj-3",), seed=2)
        train_pin(pin, x, lab, TrainConfig(epochs=2, batch_size=4, sal=True, seed=2), pgn=pgn, bots=y)
        outs.append(model_bytes(pin) + model_bytes(pgn))
    assert outs[0] == outs[1]


def test_direct_bot_training_and_prediction():
    x, y, lab = tiny_data()
    pin = PinModel("desk", 3, sites=SITES, source_channels=5, seed=0)
    train_pin(pin, x, lab, TrainConfig(epochs=1, batch_size=4), bots=y, source="bot")
    assert predict_scores(pin, x, bots=y, source="bot").shape == (12, 3)


def test_finetune_only_classifier():
    x, _, lab = tiny_data()
    pin = train_classifier_from_pgn(PgnModel("desk", 5), 3, x, lab, TrainConfig(epochs=1, batch_size=4))
    assert predict_scores(pin, x, source="none").shape == (12, 3)


def test_pgn_features_eval_mode():
    x, _, _ = tiny_data(n=5)
    f = pgn_features(PgnModel("desk", 5), x, batch_size=2)
    assert f.shape == (5, 64, 2, 2)


# ---------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("make", [lambda: PgnModel("desk", 9, seed=4),
                                  lambda: PinModel("desk", 7, sites=("inj-2", "inj-4"), seed=5),
                                  lambda: PinModel("desk", 7, sites=SITES, source_channels=9, seed=6)])
def test_checkpoint_round_trip(tmp_path, make):
    model = make()
    model.parameters()[sorted(model.parameters())[0]].data += 0.25
    digest = save_model(tmp_path / "m.ckpt", model, epoch=3)
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["epoch"] == 3 and len(digest) == 64
    assert model_bytes(back) == model_bytes(model)


def test_state_dict_strict(rng):
    a = PgnModel("desk", 5)
    sd = a.state_dict()
    sd.pop(next(iter(sd)))
    with pytest.raises(KeyError):
        PgnModel("desk", 5).load_state_dict(sd)
