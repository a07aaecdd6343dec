import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayestn.bayes import propagate
from bayestn.check import fd_gradient_error, random_network, random_samples
from bayestn.data import Dataset
from bayestn.engine import (
    AdamRenorm,
    GradientSet,
    RotationDiagnostics,
    TrainConfig,
    TrainingMetrics,
    adam_renorm_step,
    backward,
    batch_loss,
    evaluate,
    forward,
    forward_batch,
    loss,
    predict,
    rotation_step,
    train,
)
from bayestn.featuremap import encode_image
from bayestn.network import NetworkSpec, TreeBtn, build_tree, validate
from bayestn.oracle import flatten


def one_slice_net(q):
    """Single node with a one-event in-going set: its only slice is ``q``."""
    q = np.asarray(q, dtype=float)[:, None]
    return TreeBtn(None, [((1, 0, 0), ["r"], "leaf", q)], ["r"], {"r": 1, "leaf": q.shape[0]})


def grads_like(net, g):
    return GradientSet(net, [np.asarray(g, dtype=float)[None, :, None]])


def oracle_forward(net, roots):
    t, labels = flatten(net)
    order = [net.root_sets.index(r) for r in labels]
    return np.array([propagate(t, [s[k] for k in order]) for s in roots])


# -- forward and loss -------------------------------------------------------


def test_uniform_net_gives_uniform_leaf():
    net = build_tree(NetworkSpec(4, 4, d=3, chi=2, n_classes=10), policy="uniform-positive")
    rng = np.random.default_rng(0)
    leaf = forward(net, random_samples(rng, net, 1)[0])
    np.testing.assert_allclose(leaf, np.full(10, 0.1), rtol=0, atol=1e-15)


def test_single_node_one_hot_selects_column():
    net = build_tree(NetworkSpec(2, 2, d=2, n_classes=3), seed=4)
    roots = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(forward(net, roots), net.nodes[0].t[:, 0, 1, 1, 0], rtol=0, atol=1e-15)


@pytest.mark.parametrize("fan_in", [4, 2])
def test_forward_matches_oracle(fan_in):
    rng = np.random.default_rng(fan_in)
    net = build_tree(NetworkSpec(4, 4, d=2, chi=3, n_classes=4, fan_in=fan_in), seed=1)
    roots = random_samples(rng, net, 8)
    got = forward_batch(net, roots)
    np.testing.assert_allclose(got, oracle_forward(net, roots), rtol=0, atol=1e-12)
    assert np.max(np.abs(got.sum(axis=1) - 1.0)) < 1e-10


def test_forward_shape_errors():
    net = build_tree(NetworkSpec(2, 2, d=2))
    with pytest.raises(ValueError):
        forward_batch(net, np.full((1, 3, 2), 0.5))
    with pytest.raises(ValueError):
        forward_batch(net, np.full((1, 4, 3), 1 / 3))


def test_loss_examples():
    assert loss([0.0, 1.0, 0.0], 1) == 0.0
    assert loss(np.full(4, 0.25), 2) == pytest.approx(math.log(4), abs=1e-15)
    assert loss([1.0, 0.0], 1, epsilon=1e-12) == pytest.approx(27.631021115928547, abs=1e-12)
    with pytest.raises(IndexError):
        loss([0.5, 0.5], 2)


# -- gradients ----------------------------------------------------------------


@pytest.mark.parametrize("fan_in", [4, 2])
def test_gradient_matches_finite_differences_4x4(fan_in):
    rng = np.random.default_rng(11)
    net = build_tree(NetworkSpec(4, 4, d=2, chi=2, n_classes=3, fan_in=fan_in), seed=3)
    roots = random_samples(rng, net, 4)
    labels = rng.integers(0, 3, size=4)
    assert fd_gradient_error(net, roots, labels) < 1e-5


def test_disconnected_node_has_zero_gradient():
    net = build_tree(NetworkSpec(2, 2, d=2, n_classes=3), seed=0)
    n0 = net.nodes[0]
    extra_q = np.full((2, 2), 1 / np.sqrt(2))
    nodes = [(n0.coords, n0.in_sets, n0.out_set, n0.q.copy()), ((9, 0, 0), ["z"], "dangling", extra_q)]
    dims = dict(net.set_dims, z=2, dangling=2)
    double = TreeBtn(None, nodes, net.root_sets + ["z"], dims, net.leaf_set)
    rng = np.random.default_rng(0)
    roots = rng.dirichlet(np.ones(2), size=(3, 5))
    _, grads = backward(double, roots, [0, 1, 2])
    assert np.all(grads[1] == 0.0)
    assert np.any(grads[0] != 0.0)


def test_duplicated_batch_same_mean_gradient():
    rng = np.random.default_rng(5)
    net = random_network(rng, fan_in=2, d=3, chi=3)
    roots = random_samples(rng, net, 6)
    labels = rng.integers(0, 3, size=6)
    l1, g1 = backward(net, roots, labels)
    l2, g2 = backward(net, np.concatenate([roots, roots]), np.concatenate([labels, labels]))
    assert l1 == pytest.approx(l2, abs=1e-14)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_backward_accepts_encoded_samples():
    net = build_tree(NetworkSpec(2, 2, d=2, n_classes=2), seed=0)
    samples = [encode_image([0.1, 0.2, 0.3, 0.4], 1, 2), encode_image([0.9, 0.8, 0.7, 0.6], 0, 2)]
    l1, g1 = backward(net, samples)
    l2, g2 = backward(net, np.stack([s.roots for s in samples]), [1, 0])
    assert l1 == l2
    assert np.array_equal(g1[0], g2[0])
    with pytest.raises(ValueError):
        backward(net, np.zeros((0, 4, 2)), [])


# -- rotation -------------------------------------------------------------------


def test_rotation_worked_example():
    net = one_slice_net([1.0, 0.0])
    diag = RotationDiagnostics()
    rotation_step(net, grads_like(net, [0.5, 0.5]), math.pi / 4, diag)
    s = math.sqrt(2) / 2
    np.testing.assert_allclose(net.nodes[0].q[:, 0], [s, -s], rtol=0, atol=1e-15)
    assert diag.updated_slices == 1


def test_rotation_parallel_gradient_leaves_slice():
    net = one_slice_net([0.6, 0.8])
    diag = RotationDiagnostics()
    rotation_step(net, grads_like(net, [1.2, 1.6]), 0.3, diag)
    np.testing.assert_array_equal(net.nodes[0].q[:, 0], [0.6, 0.8])
    assert diag.skipped_slices == 1 and diag.updated_slices == 0


@pytest.mark.parametrize("scale", [1.0, 50.0])
def test_rotation_nearly_parallel_gradient(scale):
    # G_perp / G around 1e-12: a single projection leaves a parallel residue
    q = np.array([0.6, 0.8, 0.0, 0.0])
    perp = np.array([0.8, -0.6, 0.3, 0.1])
    perp -= q * (perp @ q)
    net = one_slice_net(q)
    diag = RotationDiagnostics()
    rotation_step(net, grads_like(net, scale * (q + 1e-12 * perp)), 0.3, diag)
    assert diag.updated_slices == 1
    assert diag.max_orthogonality < 1e-12
    assert abs(q @ net.nodes[0].q[:, 0] - math.cos(0.3)) < 1e-12


def test_rotation_rejects_non_finite():
    net = one_slice_net([1.0, 0.0])
    with pytest.raises(FloatingPointError):
        rotation_step(net, grads_like(net, [np.nan, 0.0]), 0.1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1.5))
def test_rotation_geometry(seed, theta):
    rng = np.random.default_rng(seed)
    net = random_network(rng, policy="random-normal")
    old = [n.q.copy() for n in net.nodes]
    grads = GradientSet(net, [rng.standard_normal(q.shape) for q in net.blocks])
    diag = RotationDiagnostics()
    rotation_step(net, grads, theta, diag)
    assert diag.max_orthogonality < 1e-12
    assert diag.max_norm_error < 1e-10
    for q0, n in zip(old, net.nodes):
        cos = (q0 * n.q).sum(axis=0)
        np.testing.assert_allclose(cos, math.cos(theta), rtol=0, atol=1e-12)
    assert validate(net).ok


# -- adam -------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_tensors():
    net = build_tree(NetworkSpec(4, 4), seed=1)
    before = [n.q.copy() for n in net.nodes]
    zero = GradientSet(net, [np.zeros_like(q) for q in net.blocks])
    adam_renorm_step(net, zero, TrainConfig())
    for q0, n in zip(before, net.nodes):
        np.testing.assert_allclose(n.q, q0, rtol=0, atol=1e-15)


def test_adam_keeps_normalization():
    rng = np.random.default_rng(2)
    net = random_network(rng, fan_in=2)
    opt = AdamRenorm(lr=0.05)
    for _ in range(5):
        roots = random_samples(rng, net, 4)
        _, grads = backward(net, roots, rng.integers(0, 3, size=4))
        opt.step(net, grads)
    assert validate(net).ok


# -- training loop ----------------------------------------------------------------


def toy_dataset(n, seed=0, h=4, w=4, n_classes=2):
    rng = np.random.default_rng(seed)
    images = rng.random((n, h, w))
    labels = rng.integers(0, n_classes, size=n)
    return Dataset(images, labels, n_classes)


def separable_dataset():
    """Binary 4x4 images whose class is the value of the top-left pixel."""
    rng = np.random.default_rng(0)
    images = rng.integers(0, 2, size=(40, 4, 4)).astype(float)
    return Dataset(images, images[:, 0, 0].astype(np.int64), 2)


def test_training_is_deterministic():
    ds = toy_dataset(30)
    cfg = TrainConfig(theta=0.05, epochs=3, batch_size=7, seed=4)
    runs = []
    for _ in range(2):
        net = build_tree(NetworkSpec(4, 4, n_classes=2), seed=0)
        best, m = train(net, ds, cfg, ds)
        runs.append(([(r.mean_loss, r.train_acc, r.test_acc) for r in m.records], [n.q for n in best.nodes]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_toy_loss_weakly_decreasing():
    ds = toy_dataset(10, seed=1)
    net = build_tree(NetworkSpec(4, 4, n_classes=2), seed=0)
    _, m = train(net, ds, TrainConfig(epochs=5, batch_size=10))
    losses = [r.mean_loss for r in m.records]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_separable_dataset_is_learned():
    ds = separable_dataset()
    net = build_tree(NetworkSpec(4, 4, d=2, chi=2, n_classes=2, feature_map="linear"), seed=0)
    best, m = train(net, ds, TrainConfig(theta=math.atan(0.02), epochs=100, batch_size=10))
    assert max(r.train_acc for r in m.records) == 1.0
    assert evaluate(best, ds) == 1.0


def test_on_step_hook_sees_every_step():
    ds = toy_dataset(25)
    net = build_tree(NetworkSpec(4, 4, n_classes=2), seed=0)
    seen = []
    train(net, ds, TrainConfig(epochs=2, batch_size=10), on_step=lambda n, k, d: seen.append((k, d)))
    assert [k for k, _ in seen] == list(range(1, 7))
    assert all(isinstance(d, RotationDiagnostics) for _, d in seen)


def test_best_net_is_a_copy():
    ds = toy_dataset(20)
    net = build_tree(NetworkSpec(4, 4, n_classes=2), seed=0)
    best, _ = train(net, ds, TrainConfig(theta=0.1, epochs=2), ds)
    assert best is not net
    assert validate(best).ok


def test_uniform_net_predicts_class_zero():
    ds = toy_dataset(50, n_classes=10)
    net = build_tree(NetworkSpec(4, 4, n_classes=10), policy="uniform-positive")
    assert np.all(predict(net, ds) == 0)
    assert evaluate(net, ds) == np.mean(ds.labels == 0)


def test_memorized_single_sample():
    ds = Dataset(np.ones((1, 2, 2)), np.array([1]), 2)
    net = build_tree(NetworkSpec(2, 2, n_classes=2, feature_map="linear"), seed=0)
    best, _ = train(net, ds, TrainConfig(theta=0.2, epochs=5, batch_size=1))
    assert evaluate(best, ds) == 1.0


def test_predictions_match_oracle():
    rng = np.random.default_rng(9)
    net = build_tree(NetworkSpec(4, 4, d=2, chi=3, n_classes=5), seed=2)
    roots = random_samples(rng, net, 50)
    labels = np.zeros(50, dtype=int)
    want = np.argmax(oracle_forward(net, roots), axis=1)
    assert np.array_equal(predict(net, (roots, labels)), want)


def test_config_validation():
    for kw in (dict(theta=0.0), dict(theta=2.0), dict(batch_size=0), dict(optimizer="sgd")):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
    assert TrainConfig().learning_rate == pytest.approx(1e-3, rel=1e-15)


def test_metrics_csv_roundtrip(tmp_path):
    ds = toy_dataset(20)
    net = build_tree(NetworkSpec(4, 4, n_classes=2), seed=0)
    _, m = train(net, ds, TrainConfig(epochs=2), ds)
    path = tmp_path / "m.csv"
    m.to_csv(path)
    assert path.read_text().splitlines()[0] == "epoch,mean_loss,train_acc,test_acc,seconds"
    back = TrainingMetrics.from_csv(path)
    assert [r.mean_loss for r in back.records] == [r.mean_loss for r in m.records]
    assert all(0.0 <= r.test_acc <= 1.0 for r in back.records)


def test_batch_loss_floor():
    leaves = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert batch_loss(leaves, [1, 0]) == pytest.approx((27.631021115928547 + math.log(2)) / 2)
