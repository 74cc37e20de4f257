import numpy as np
import pytest

from wordimportance.tree import RegressionTree


def test_single_perfect_split():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(200, 4)).astype(float)
    y = X[:, 2].copy()
    tree = RegressionTree().fit(X, y)
    imp = tree.feature_importances
    assert imp[2] == pytest.approx(1.0)
    assert np.allclose(tree.predict(X), y)


def test_no_split_when_constant():
    X = np.random.default_rng(0).random((50, 3))
    tree = RegressionTree().fit(X, np.ones(50))
    assert tree.root.is_leaf
    assert np.all(tree.feature_importances == 0)


def test_min_leaf_respected():
    X = np.arange(30, dtype=float).reshape(-1, 1)
    y = (X[:, 0] >= 25).astype(float)
    tree = RegressionTree(min_leaf=10).fit(X, y)

    def leaves(node):
        return [node] if node.is_leaf else leaves(node.left) + leaves(node.right)

    assert all(leaf.n >= 10 for leaf in leaves(tree.root))


def test_tie_break_prefers_lower_feature_index():
    X = np.repeat(np.array([[0.0, 0.0], [1.0, 1.0]]), 30, axis=0)
    y = X[:, 0] * 2.0
    tree = RegressionTree().fit(X, y)
    assert tree.root.feature == 0


def test_matches_sklearn_on_random_data():
    sk = pytest.importorskip("sklearn.tree")
    rng = np.random.default_rng(5)
    X = rng.integers(0, 2, size=(600, 14)).astype(float)
    y = 2 * X[:, 0] - X[:, 3] + 0.5 * X[:, 7] * X[:, 1] + rng.normal(0, 0.3, 600)
    ours = RegressionTree(6, 20).fit(X, y)
    ref = sk.DecisionTreeRegressor(max_depth=6, min_samples_leaf=20, random_state=0).fit(X, y)
    assert np.allclose(ours.feature_importances, ref.feature_importances_, atol=1e-9)
    assert np.allclose(ours.predict(X), ref.predict(X), atol=1e-9)


def test_shape_validation():
    with pytest.raises(ValueError):
        RegressionTree().fit(np.zeros(5), np.zeros(5))
