import numpy as np
import pytest

from prunekit import engine
from prunekit.data import DataSlice
from prunekit.errors import EngineError
from prunekit.model_ir import (FORMAT_VERSION, ArchBuilder, LayerSpec,
                               ModelSnapshot, builtin_arch)
from prunekit.trainer import cross_entropy

from oracles import (fd_gradient, ref_avg_pool, ref_conv, ref_depthwise,
                     ref_forward, ref_max_pool)


def identity_net(channels=1, spatial=1):
    """conv(k1, identity) -> flatten -> fc(identity); logits equal the input."""
    b = ArchBuilder("ident", (channels, spatial, spatial), channels * spatial * spatial, seed=0)
    b.begin_block("c", "plain")
    b.conv("c.conv", channels, kernel=1, padding=0)
    b.end_block()
    b.classifier_block("head", (spatial, spatial))
    s = b.build()
    w = dict(s.weights)
    w["c.conv.w"] = np.eye(channels, dtype=np.float32).reshape(channels, channels, 1, 1)
    n = channels * spatial * spatial
    w["head.fc.w"] = np.eye(n, dtype=np.float32)
    w["head.fc.b"] = np.zeros(n, dtype=np.float32)
    return s.with_weights(w)


def test_identity_conv_passthrough():
    s = identity_net(channels=2, spatial=2)
    x = np.random.default_rng(0).normal(size=(3, 2, 2, 2)).astype(np.float32)
    logits, _ = engine.forward(s, x, mode="eval")
    assert np.allclose(logits, x.reshape(3, -1), atol=1e-6)


def test_bn_identity_parameters():
    b = ArchBuilder("bnid", (2, 2, 2), 8, seed=0)
    b.begin_block("c", "plain")
    b.conv("c.conv", 2, kernel=1, padding=0)
    b.bn("c.bn")
    b.end_block()
    b.classifier_block("head", (2, 2))
    s = b.build()
    w = dict(s.weights)
    w["c.conv.w"] = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
    w["head.fc.w"] = np.eye(8, dtype=np.float32)
    s = s.with_weights(w)
    x = np.random.default_rng(1).normal(size=(4, 2, 2, 2)).astype(np.float32)
    logits, _ = engine.forward(s, x, mode="eval")
    # gamma=1, beta=0, mean=0, var=1: identity up to the 1e-5 epsilon
    assert np.allclose(logits, x.reshape(4, -1), atol=1e-4)


@pytest.mark.parametrize("arch", ["tiny_vgg", "tiny_resnet", "tiny_ir"])
@pytest.mark.parametrize("mode", ["eval", "train"])
def test_forward_matches_naive_reference(arch, mode):
    s = builtin_arch(arch, 3, (3, 8, 8), seed=4)
    x = np.random.default_rng(2).uniform(0, 1, size=(2, 3, 8, 8)).astype(np.float32)
    got, _ = engine.forward(s, x, mode=mode)
    want = ref_forward(s, x, mode=mode)
    assert np.max(np.abs(got - want)) < 1e-5


def _rand_layer_case(rng):
    cin = int(rng.integers(1, 5))
    cout = int(rng.integers(1, 5))
    k = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, k))
    h = int(rng.integers(k + s, 11))
    w = int(rng.integers(k + s, 11))
    n = int(rng.integers(1, 4))
    return cin, cout, k, s, p, h, w, n


def test_conv_op_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(12):
        cin, cout, k, st, p, h, w, n = _rand_layer_case(rng)
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cout, cin, k, k))
        bias = rng.normal(size=cout)
        lyr = LayerSpec("t", "conv", cin, cout, (k, k), (st, st), (p, p), has_bias=True)
        got = engine._apply_eval(None, lyr, x, {"t.w": wt, "t.b": bias})
        want = ref_conv(x, wt, bias, (st, st), (p, p))
        assert np.max(np.abs(got - want)) < 1e-9


def test_depthwise_op_random_shapes():
    rng = np.random.default_rng(1)
    for _ in range(10):
        cin, _, k, st, p, h, w, n = _rand_layer_case(rng)
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cin, 1, k, k))
        lyr = LayerSpec("t", "depthwise_conv", cin, cin, (k, k), (st, st), (p, p))
        got = engine._apply_eval(None, lyr, x, {"t.w": wt})
        want = ref_depthwise(x, wt, None, (st, st), (p, p))
        assert np.max(np.abs(got - want)) < 1e-9


def test_pool_ops_random_shapes():
    rng = np.random.default_rng(2)
    for _ in range(10):
        cin, _, k, st, p, h, w, n = _rand_layer_case(rng)
        p = min(p, k // 2)  # max_pool padding must not dominate the window
        x = rng.normal(size=(n, cin, h, w))
        mx = LayerSpec("t", "max_pool", cin, cin, (k, k), (st, st), (p, p))
        got = engine._apply_eval(None, mx, x, {})
        want = ref_max_pool(x, (k, k), (st, st), (p, p))
        assert np.max(np.abs(got - want)) < 1e-12
        av = LayerSpec("t", "avg_pool", cin, cin, (k, k), (st, st), (0, 0))
        got = engine._apply_eval(None, av, x, {})
        want = ref_avg_pool(x, (k, k), (st, st), (0, 0))
        assert np.max(np.abs(got - want)) < 1e-9


def _loss_fn(s, params, x, labels):
    def f():
        logits, _ = engine.forward(s, x, mode="train", params=params)
        return cross_entropy(logits, labels)[0]
    return f


def pooling_net():
    """Covers max_pool and avg_pool in the differentiated path."""
    b = ArchBuilder("pools", (3, 8, 8), 3, seed=5)
    b.conv_block("c1", 6)
    b.pool_block("mp", "max_pool")
    b.begin_block("ap", "plain")
    b.conv("ap.conv", 6, prunable=False)
    b.pool("ap.pool", "avg_pool", 2)
    b.end_block()
    b.classifier_block("head", (2, 2))
    return b.build()


@pytest.mark.parametrize("net", ["tiny_vgg", "tiny_ir", "pools"])
def test_gradient_check_sampled(net):
    s = pooling_net() if net == "pools" else builtin_arch(net, 3, (3, 8, 8), seed=6)
    rng = np.random.default_rng(3)
    params = {k: v.astype(np.float64) for k, v in s.weights.items()}
    x = rng.uniform(0, 1, size=(4, 3, 8, 8))
    labels = np.array([0, 1, 2, 0])
    logits, cache = engine.forward(s, x, mode="train", params=params)
    _, grad_logits = cross_entropy(logits, labels)
    grads = engine.backward(cache, grad_logits)
    loss_fn = _loss_fn(s, params, x, labels)
    # h=1e-6: small enough that relu-kink crossings (error ~ h^2) stay far
    # below the thresholds, large enough that float64 roundoff is negligible;
    # the 95th-percentile bound needs enough samples to absorb a rare crossing
    for name in engine.trainable_names(s):
        flat = grads[name].reshape(-1)
        idxs = rng.choice(flat.size, size=min(flat.size, 24), replace=False)
        fd = fd_gradient(loss_fn, params, name, idxs, h=1e-6)
        denom = np.maximum(np.abs(fd), np.maximum(np.abs(flat[idxs]), 1e-6))
        rel = np.abs(fd - flat[idxs]) / denom
        assert np.percentile(rel, 95) < 1e-3, name
        assert rel.max() < 1e-2, name


def test_backward_linearity():
    s = builtin_arch("tiny_resnet", 3, (3, 8, 8), seed=7)
    x = np.random.default_rng(4).uniform(0, 1, size=(2, 3, 8, 8)).astype(np.float32)
    logits, cache = engine.forward(s, x, mode="train")
    zero = engine.backward(cache, np.zeros_like(logits))
    assert all(np.all(g == 0) for g in zero.values())

    logits, cache = engine.forward(s, x, mode="train")
    g1 = engine.backward(cache, np.ones_like(logits))
    logits, cache = engine.forward(s, x, mode="train")
    g2 = engine.backward(cache, 2 * np.ones_like(logits))
    for name in g1:
        assert np.allclose(2 * g1[name], g2[name], rtol=1e-5, atol=1e-7)


def test_bn_train_normalizes_to_gamma_beta():
    rng = np.random.default_rng(5)
    x = rng.normal(loc=3.0, scale=2.0, size=(16, 6, 5, 5))
    gamma = rng.uniform(0.5, 2.0, size=6)
    beta = rng.uniform(-1.0, 1.0, size=6)
    params = {"bn.gamma": gamma, "bn.beta": beta,
              "bn.mean": np.zeros(6), "bn.var": np.ones(6)}
    lyr = LayerSpec("bn", "batch_norm", 6, 6)
    out, _ = engine._bn_forward("bn", lyr, x, params, "train", {})
    assert np.allclose(out.mean(axis=(0, 2, 3)), beta, atol=1e-3)
    assert np.allclose(out.var(axis=(0, 2, 3)), gamma ** 2, atol=1e-3)


def test_train_mode_emits_running_stat_updates():
    s = builtin_arch("tiny_vgg", 3, (3, 8, 8), seed=8)
    x = np.random.default_rng(6).uniform(0, 1, size=(8, 3, 8, 8)).astype(np.float32)
    _, cache = engine.forward(s, x, mode="train")
    assert "b1.bn.mean" in cache["bn_updates"]
    mu = x.mean()  # sanity only: updates must differ from the zero init
    assert not np.allclose(cache["bn_updates"]["b1.bn.mean"], 0.0)


def test_stale_cache_rejected():
    s = builtin_arch("tiny_vgg", 3, (3, 8, 8), seed=8)
    x = np.random.default_rng(7).uniform(0, 1, size=(2, 3, 8, 8)).astype(np.float32)
    logits, cache = engine.forward(s, x, mode="train")
    engine.backward(cache, np.zeros_like(logits))
    with pytest.raises(EngineError, match="stale cache"):
        engine.backward(cache, np.zeros_like(logits))
    _, eval_cache = engine.forward(s, x, mode="eval")
    with pytest.raises(EngineError, match="train-mode"):
        engine.backward(eval_cache, np.zeros_like(logits))


def test_batch_shape_mismatch():
    s = builtin_arch("tiny_vgg", 3, (3, 8, 8), seed=8)
    with pytest.raises(EngineError, match="batch shape"):
        engine.forward(s, np.zeros((2, 3, 9, 9), dtype=np.float32))


def test_checked_mode_reports_layer():
    s = builtin_arch("tiny_vgg", 3, (3, 8, 8), seed=8)
    w = dict(s.weights)
    bad = w["b2.conv.w"].copy()
    bad[0, 0, 0, 0] = np.nan
    w["b2.conv.w"] = bad
    x = np.random.default_rng(8).uniform(0, 1, size=(1, 3, 8, 8)).astype(np.float32)
    with pytest.raises(EngineError, match="b2.conv"):
        engine.forward(s.with_weights(w), x, mode="eval", checked=True)


def test_empty_chain_forward_errors():
    s = ModelSnapshot(FORMAT_VERSION, "empty", (3, 4, 4), 2, (), {}, {})
    with pytest.raises(EngineError, match="output shape"):
        engine.forward(s, np.zeros((1, 3, 4, 4), dtype=np.float32))


def test_recalibrate_known_statistics():
    b = ArchBuilder("stats", (1, 4, 4), 2, seed=0)
    b.begin_block("c", "plain")
    b.conv("c.conv", 1, kernel=1, padding=0)
    b.bn("c.bn")
    b.end_block()
    s = b.build()
    w = dict(s.weights)
    w["c.conv.w"] = np.ones((1, 1, 1, 1), dtype=np.float32)
    s = s.with_weights(w)
    rng = np.random.default_rng(9)
    imgs = rng.normal(loc=0.7, scale=0.3, size=(64, 1, 4, 4)).astype(np.float32)
    calib = DataSlice(imgs, np.zeros(64, dtype=np.int64))
    recal = engine.recalibrate_bn(s, calib)
    assert recal.weights["c.bn.mean"][0] == pytest.approx(imgs.mean(), abs=1e-5)
    assert recal.weights["c.bn.var"][0] == pytest.approx(imgs.var(), abs=1e-5)
    # trainable parameters untouched
    assert np.array_equal(recal.weights["c.conv.w"], s.weights["c.conv.w"])
    assert np.array_equal(recal.weights["c.bn.gamma"], s.weights["c.bn.gamma"])


def test_recalibrate_is_idempotent():
    s = builtin_arch("tiny_resnet", 3, (3, 8, 8), seed=10)
    imgs = np.random.default_rng(10).uniform(0, 1, size=(128, 3, 8, 8)).astype(np.float32)
    calib = DataSlice(imgs, np.zeros(128, dtype=np.int64))
    once = engine.recalibrate_bn(s, calib)
    twice = engine.recalibrate_bn(once, calib)
    for name in once.weights:
        if name.endswith(".mean") or name.endswith(".var"):
            assert np.allclose(once.weights[name], twice.weights[name], atol=1e-4), name


def test_recalibrate_empty_slice():
    s = builtin_arch("tiny_vgg", 3, (3, 8, 8), seed=8)
    calib = DataSlice(np.zeros((0, 3, 8, 8), dtype=np.float32), np.zeros(0, dtype=np.int64))
    with pytest.raises(EngineError, match="empty"):
        engine.recalibrate_bn(s, calib)


def constant_logit_net(num_classes, favored=0):
    b = ArchBuilder("const", (1, 2, 2), num_classes, seed=0)
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    s = b.build()
    w = dict(s.weights)
    w["head.fc.w"] = np.zeros_like(w["head.fc.w"])
    bias = np.zeros(num_classes, dtype=np.float32)
    bias[favored] = 1.0
    w["head.fc.b"] = bias
    return s.with_weights(w)


def test_accuracy_constant_model():
    s = constant_logit_net(4, favored=0)
    imgs = np.random.default_rng(11).uniform(size=(40, 1, 2, 2)).astype(np.float32)
    all_zero = DataSlice(imgs, np.zeros(40, dtype=np.int64))
    assert engine.evaluate_accuracy(s, all_zero) == 1.0
    uniform = DataSlice(imgs, np.arange(40, dtype=np.int64) % 4)
    assert engine.evaluate_accuracy(s, uniform) == 0.25


def test_accuracy_empty_slice():
    s = constant_logit_net(2)
    with pytest.raises(EngineError, match="empty"):
        engine.evaluate_accuracy(s, DataSlice(np.zeros((0, 1, 2, 2), dtype=np.float32),
                                              np.zeros(0, dtype=np.int64)))


def test_trained_fixture_accuracy(trained_tiny):
    snap, _, _, val = trained_tiny
    assert engine.evaluate_accuracy(snap, val) >= 0.9
