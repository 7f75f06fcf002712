import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepchron.baselines import (
    ConfigurationError,
    DegeneracyError,
    Standardizer,
    StatusModel,
    hinge_objective,
    kmeans_fit,
    select_by_ttest,
    status_features,
    svm_train,
    variability_features,
)
from deepchron.numerics import Rng


def test_svm_separable_pair():
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    y = np.array([1, -1])
    model = svm_train(x, y, l2_coeff=0.01, epochs=3000)
    assert model.predict(x).tolist() == [1, 0]
    # the regularized optimum is w = (1, 0), b = 0
    np.testing.assert_allclose(model.weights, [1.0, 0.0], atol=0.02)
    assert abs(model.bias) < 0.02


def test_svm_label_flip_negates():
    rng = Rng(1)
    x = rng.normal(size=(30, 4))
    y = np.where(x[:, 0] + 0.5 * rng.normal(size=30) > 0, 1, -1)
    a = svm_train(x, y, epochs=300)
    b = svm_train(x, -y, epochs=300)
    np.testing.assert_array_equal(a.weights, -b.weights)
    assert a.bias == -b.bias


def test_svm_duplicated_training_set_is_invariant():
    rng = Rng(2)
    x = rng.normal(size=(15, 3))
    y = np.where(rng.uniform(size=15) > 0.5, 1, -1)
    y[:2] = [1, -1]
    a = svm_train(x, y, epochs=200)
    b = svm_train(np.vstack([x, x]), np.concatenate([y, y]), epochs=200)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)
    assert a.bias == pytest.approx(b.bias, abs=1e-12)


def test_svm_matches_grid_search_oracle():
    rng = Rng(3)
    x = rng.normal(size=(20, 1))
    y = np.where(x[:, 0] + 0.7 * rng.normal(size=20) > 0, 1, -1)
    lam = 0.1
    model = svm_train(x, y, l2_coeff=lam, epochs=20000)
    got = hinge_objective(model.weights, model.bias, x, y, lam)
    ws = np.linspace(-4, 4, 801)
    bs = np.linspace(-4, 4, 801)
    margins = y[None, None, :] * (ws[:, None, None] * x[None, None, :, 0] + bs[None, :, None])
    grid = np.maximum(0, 1 - margins).mean(-1) + 0.5 * lam * ws[:, None] ** 2
    assert got <= grid.min() + 1e-3


def test_svm_rejects_single_class():
    with pytest.raises(ConfigurationError):
        svm_train(np.ones((3, 2)), [1, 1, 1])


def test_standardizer_handles_constant_columns():
    x = np.array([[1.0, 5.0], [3.0, 5.0]])
    z = Standardizer.fit(x).transform(x)
    np.testing.assert_allclose(z, [[-1.0, 0.0], [1.0, 0.0]])


def test_kmeans_recovers_blobs():
    rng = Rng(4)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    truth = np.repeat(np.arange(3), 40)
    x = centers[truth] + rng.normal(scale=0.5, size=(120, 2))
    model = kmeans_fit(x, k=3, seed=0)
    labels = np.argmin(((x[:, None] - model.centroids[None]) ** 2).sum(-1), axis=1)
    # same partition up to relabelling
    for j in range(3):
        assert np.unique(labels[truth == j]).size == 1
    assert np.unique(labels).size == 3
    trace = model.inertia_trace
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_kmeans_exhaustive_partition_oracle():
    rng = Rng(5)
    x = rng.normal(size=(8, 2))
    best = math.inf
    for bits in itertools.product([0, 1], repeat=8):
        mask = np.array(bits, dtype=bool)
        if mask.all() or not mask.any():
            continue
        sse = sum(((x[m] - x[m].mean(0)) ** 2).sum() for m in (mask, ~mask))
        best = min(best, sse)
    found = min(kmeans_fit(x, k=2, seed=s).inertia for s in range(20))
    assert found == pytest.approx(best, abs=1e-9)
    # every run is a local optimum, never below the global one
    assert all(kmeans_fit(x, k=2, seed=s).inertia >= best - 1e-9 for s in range(5))


def test_kmeans_degenerate_input():
    with pytest.raises(DegeneracyError):
        kmeans_fit(np.ones((10, 3)), k=2)


def test_status_features_sum_and_permutation():
    rng = Rng(6)
    rows = rng.normal(size=(40, 3))
    model = kmeans_fit(rows, k=4, seed=1)
    f = status_features(rows, model)
    assert f.sum() == pytest.approx(1.0)
    perm = np.array([2, 0, 3, 1])
    g = status_features(rows, StatusModel(model.centroids[perm]))
    np.testing.assert_allclose(g, f[perm])


def test_variability_example():
    v = variability_features(np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert v[0] == pytest.approx(math.sqrt(1.25))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_variability_offset_invariance(seed, offset):
    rows = Rng(seed).normal(size=(10, 4))
    np.testing.assert_allclose(variability_features(rows + offset), variability_features(rows), atol=1e-10)


def test_ttest_selection_false_positive_rate():
    rng = Rng(7)
    x = rng.normal(size=(100, 4000))
    y = np.repeat([0, 1], 50)
    rate = select_by_ttest(x, y, alpha=0.05).size / 4000
    assert abs(rate - 0.05) < 0.012


def test_ttest_selects_extreme_feature():
    rng = Rng(8)
    x = rng.normal(size=(40, 10))
    y = np.repeat([0, 1], 20)
    x[y == 1, 3] += 5.0
    assert 3 in select_by_ttest(x, y)


def test_ttest_fallbacks():
    y = np.repeat([0, 1], 5)
    assert select_by_ttest(np.ones((10, 3)), y).tolist() == [0]
    x = np.zeros((10, 3))
    x[:, 1] = [0.0, 1, 0, 1, 0, 1, 0, 1, 0, 1]
    x[:, 2] = [0.0, 1, 0, 1, 0.5, 0, 1, 0, 1, 1]
    got = select_by_ttest(x, y, alpha=1e-9)
    assert got.size == 1 and got[0] in (1, 2)
    with pytest.raises(ConfigurationError):
        select_by_ttest(np.ones((4, 2)), [0, 0, 0, 0])
