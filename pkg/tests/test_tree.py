import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nigptree.data import synth_blobs
from nigptree.kernels import DimensionError
from nigptree.pg_node import NoiseModel
from nigptree.tree import (ClassTree, TrainConfig, build_structure, build_tree, class_centroids,
                           class_probabilities, expected_sigmoid, predict, train)


def _blobs(C, per_class=20, d=3, seed=0, noise=0.0):
    ds = synth_blobs(C, per_class, d, 6.0, noise, seed=seed)
    return ds.features, ds.labels


def _quick(**kw):
    base = dict(epochs=3, denoiser="none", seed=0)
    base.update(kw)
    return TrainConfig(**base)


@settings(max_examples=40, deadline=None)
@given(C=st.integers(2, 16), seed=st.integers(0, 1000))
def test_structure_invariants(C, seed):
    centroids = np.random.default_rng(seed).normal(size=(C, 4))
    tree = ClassTree(build_structure(centroids, np.random.default_rng(seed)), C)
    tree.check_invariants()
    assert tree.depth <= math.ceil(math.log2(C))
    assert len(tree.internal_nodes()) == C - 1
    for c, path in tree.paths().items():
        node = tree.root
        for v, bit in path:
            assert v is node
            node = v.left if bit == 1 else v.right
        assert node.classes == (c,)


def test_two_classes_single_node():
    X, y = _blobs(2)
    tree = build_tree(X, y, _quick())
    assert len(tree.internal_nodes()) == 1
    assert tree.root.left.classes == (0,) and tree.root.right.classes == (1,)


def test_three_classes_shape():
    X, y = _blobs(3)
    tree = build_tree(X, y, _quick())
    assert tree.depth == 2
    sizes = sorted(len(child.classes) for child in (tree.root.left, tree.root.right))
    assert sizes == [1, 2]


def test_nearest_classes_share_a_subtree():
    centroids = np.array([[0.0, 0.0], [10.0, 0.0], [10.5, 0.0]])
    for seed in range(10):
        root = build_structure(centroids, np.random.default_rng(seed))
        assert {root.left.classes, root.right.classes} == {(0,), (1, 2)}


def test_build_is_deterministic():
    X, y = _blobs(5)
    a = build_tree(X, y, _quick(seed=4)).to_dict()
    b = build_tree(X, y, _quick(seed=4)).to_dict()
    assert a == b


def test_missing_class_reported():
    X, y = _blobs(4)
    y = np.where(y == 2, 3, y)
    with pytest.raises(ValueError, match=r"\[2\]"):
        build_tree(X, y, _quick())
    with pytest.raises(ValueError, match=r"\[1\]"):
        class_centroids(X[:3], np.array([0, 0, 1]), 2)


def test_fresh_tree_is_uniform_and_ties_go_to_class_zero():
    X, y = _blobs(4)
    tree = build_tree(X, y, _quick())
    P = tree.class_probabilities(X)
    np.testing.assert_allclose(P, 0.25, atol=1e-15)
    np.testing.assert_array_equal(tree.predict(X), np.zeros(len(X), int))


@pytest.mark.parametrize("C", [2, 3, 5, 8])
def test_probabilities_normalised(C):
    X, y = _blobs(C, noise=0.2)
    res = train(X, y, _quick())
    Xs = np.random.default_rng(1).normal(scale=5.0, size=(1000, X.shape[1]))
    for noise in (None, NoiseModel(np.full(X.shape[1], 0.1))):
        P = res.tree.class_probabilities(Xs, noise=noise)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(P >= 0)


def test_two_classes_give_complementary_pair():
    X, y = _blobs(2)
    res = train(X, y, _quick())
    x = X[:1]
    mean, var = res.tree.root.pg.predict_f(x)
    p = expected_sigmoid(mean, var)[0]
    np.testing.assert_allclose(class_probabilities(res.tree, x[0]), [p, 1 - p], rtol=1e-15)


def test_probit_approximation_close_to_monte_carlo():
    mean = np.linspace(-3, 3, 13)
    var = np.linspace(0.01, 4.0, 13)
    mc = expected_sigmoid(mean, var, method="mc", n_draws=200_000, rng=0)
    np.testing.assert_allclose(expected_sigmoid(mean, var), mc, atol=2e-2)


def test_train_fits_separated_blobs():
    X, y = _blobs(3, per_class=30, d=8, noise=0.0)
    res = train(X, y, _quick(epochs=10))
    assert np.mean(predict(res.tree, X) == y) == 1.0
    assert len(res.elbo_history) == 10
    assert np.all(np.diff(res.elbo_history) >= -1e-8)
    assert len(res.inducing) == 2 and res.inducing[0].shape == (2, 8)


def test_predictions_permute_with_rows():
    X, y = _blobs(3, noise=0.3)
    tree = train(X, y, _quick()).tree
    perm = np.random.default_rng(0).permutation(len(X))
    np.testing.assert_array_equal(tree.predict(X[perm]), tree.predict(X)[perm])


def test_noisy_flag_with_zero_noise_is_bit_identical():
    X, y = _blobs(3, noise=0.2)
    plain = train(X, y, _quick(noisy=False))
    noisy = train(X, y, _quick(noisy=True), noise=np.zeros(X.shape[1]))
    Xs = np.random.default_rng(0).normal(scale=4, size=(300, X.shape[1]))
    a = plain.tree.class_probabilities(Xs, noise=plain.noise)
    b = noisy.tree.class_probabilities(Xs, noise=noisy.noise)
    assert np.array_equal(a, b)


def test_denoised_vs_raw_training_switch():
    X, y = _blobs(3, d=8, noise=0.3)
    on = train(X, y, _quick(denoiser="svd", train_on_denoised=True))
    off = train(X, y, _quick(denoiser="svd", train_on_denoised=False))
    assert not np.array_equal(on.X, X)
    np.testing.assert_array_equal(off.X, X)
    np.testing.assert_array_equal(on.sigma_x, off.sigma_x)


def test_thread_count_does_not_change_result(monkeypatch):
    X, y = _blobs(5, noise=0.2)
    monkeypatch.setenv("NIGP_THREADS", "1")
    a = train(X, y, _quick()).tree.to_dict()
    monkeypatch.setenv("NIGP_THREADS", "4")
    b = train(X, y, _quick()).tree.to_dict()
    assert a == b


@pytest.mark.parametrize("kernel", ["rbf", "rbf30", "powrbf"])
@pytest.mark.parametrize("m,lr,os_", [(2, 0.1, 20.0), (6, 0.8, 320.0)])
def test_published_hyperparameter_grid_accepted(kernel, m, lr, os_):
    X, y = _blobs(3, noise=0.2)
    res = train(X, y, _quick(kernel=kernel, n_inducing=m, learning_rate=lr, output_scale=os_,
                             alpha=0.9, epochs=2))
    assert np.all(np.isfinite(res.elbo_history))


def test_dimension_mismatch_on_predict():
    X, y = _blobs(3)
    tree = train(X, y, _quick()).tree
    with pytest.raises(DimensionError):
        tree.predict(np.zeros((2, X.shape[1] + 1)))


def test_untrained_node_rejected():
    X, y = _blobs(3)
    tree = build_tree(X, y, _quick())
    tree.internal_nodes()[0].pg = None
    with pytest.raises(RuntimeError, match="no trained classifier"):
        tree.class_probabilities(X)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(n_inducing=0), dict(learning_rate=0.0),
                                 dict(kernel="linear"), dict(denoiser="median"),
                                 dict(noisy="yes"), dict(sweeps_per_epoch=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()


def test_config_round_trip_and_unknown_keys():
    cfg = TrainConfig(epochs=7, kernel="powrbf", alpha=1.3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epochs": 3, "momentum": 0.9})


def test_tree_round_trip():
    X, y = _blobs(4, noise=0.2)
    res = train(X, y, _quick(denoiser="smooth:3"))
    clone = ClassTree.from_dict(res.tree.to_dict())
    np.testing.assert_array_equal(clone.noise.sigma_x, res.tree.noise.sigma_x)
    np.testing.assert_array_equal(clone.class_probabilities(X, noise=clone.noise),
                                  res.tree.class_probabilities(X, noise=res.tree.noise))
