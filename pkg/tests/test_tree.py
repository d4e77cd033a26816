import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circforest.circular import KAPPA_CAP, angular_distance, fit_mle, log_likelihood
from circforest.dataset import Dataset
from circforest.errors import DataError, ModelFormatError, RoutingError
from circforest.partition import Covariate
from circforest.simulate import two_regime
from circforest.tree import Tree, TreeControl, design_matrix, grow


def binary_flip(n=400, seed=0):
    rng = np.random.default_rng(seed)
    b = rng.integers(0, 2, n).astype(float)
    ys = np.mod(rng.vonmises(np.where(b == 1, np.pi, 0.0), 4.0), 2 * np.pi)
    return Dataset(ys, [Covariate("b", b), Covariate("noise", rng.normal(size=n))])


def random_dataset(seed, n=None):
    """Fuzzed fixture: random size, mixed covariate kinds, optional signal."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 200)) if n is None else n
    x = rng.uniform(size=n)
    codes = rng.integers(1, 4, n).astype(float)
    mu = np.where(x > rng.uniform(0.2, 0.8), rng.uniform(0, 3), 0.0) + 0.7 * (codes == 2)
    ys = np.mod(rng.vonmises(mu, rng.uniform(0.5, 8)), 2 * np.pi)
    covs = [
        Covariate("x", x),
        Covariate("g", codes, "categorical", ("a", "b", "c")),
        Covariate("z", rng.normal(size=n)),
    ]
    return Dataset(ys, covs)


def leaf_sets(tree):
    return [set(leaf.members.tolist()) for leaf in tree.leaves()]


def structure(node):
    if node.is_leaf:
        return ("leaf", node.n_obs)
    sp = node.split
    return (sp.variable, sp.threshold, sp.left_levels, structure(node.left), structure(node.right))


# -- control ------------------------------------------------------------------

def test_tree_control_validation():
    with pytest.raises(ValueError):
        TreeControl(minbucket=0)
    with pytest.raises(ValueError):
        TreeControl(minsplit=10, minbucket=6)
    with pytest.raises(ValueError):
        TreeControl(alpha=0)
    with pytest.raises(ValueError):
        TreeControl(test_form="other")


# -- growth -----------------------------------------------------------------------

def test_binary_flip_two_leaves():
    data = binary_flip()
    tree = grow(data)
    assert tree.n_leaves == 2
    left, right = tree.root.left, tree.root.right
    assert angular_distance(left.params.mu, 0.0) < 0.1
    assert angular_distance(right.params.mu, np.pi) < 0.1


def test_minbucket_n_gives_root():
    data = binary_flip(100)
    assert grow(data, TreeControl(minbucket=100, minsplit=200)).n_leaves == 1


def test_constant_response_single_degenerate_node():
    data = Dataset(np.full(50, 1.0), [Covariate("x", np.arange(50.0))])
    tree = grow(data)
    assert tree.n_leaves == 1
    assert tree.root.params.degenerate and tree.root.params.kappa == KAPPA_CAP


def test_empty_and_missing_response_errors():
    with pytest.raises(DataError):
        grow(Dataset(np.array([]), []))
    with pytest.raises(DataError):
        grow(Dataset(np.array([1.0, np.nan]), []))


def test_maxdepth_limits_growth():
    data = random_dataset(0, n=300)
    tree = grow(data, TreeControl(alpha=1.0, maxdepth=2))
    assert tree.depth <= 2
    assert grow(data, TreeControl(alpha=1.0, maxdepth=0)).n_leaves == 1


def test_null_root_only_rate():
    roots = 0
    for rep in range(100):
        rng = np.random.default_rng(500 + rep)
        ys = np.mod(rng.vonmises(1.0, 2.0, 500), 2 * np.pi)
        covs = [Covariate(f"n{j}", rng.normal(size=500)) for j in range(3)]
        roots += grow(Dataset(ys, covs)).n_leaves == 1
    assert roots >= 90


def test_grow_is_deterministic():
    data = random_dataset(3, n=150)
    ctrl = TreeControl(alpha=0.5)
    assert structure(grow(data, ctrl).root) == structure(grow(data, ctrl).root)


# -- invariants over fuzzed fixtures -------------------------------------------------

@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_tree_invariants(seed):
    data = random_dataset(seed)
    ctrl = TreeControl(alpha=0.5, minsplit=10, minbucket=5)
    tree = grow(data, ctrl)
    sets = leaf_sets(tree)
    # partition property
    assert sum(len(s) for s in sets) == data.n
    assert set().union(*sets) == set(range(data.n))
    for leaf in tree.leaves():
        assert leaf.n_obs >= ctrl.minbucket or tree.n_leaves == 1
        ref = fit_mle(data.response[leaf.members])
        assert leaf.params.mu == pytest.approx(ref.mu, abs=1e-12)
        assert leaf.params.kappa == pytest.approx(ref.kappa, rel=1e-12)
    # log-likelihood does not decrease under any split
    for node in tree.nodes():
        if node.is_leaf:
            continue
        members = tree.node_members(node)
        parent = np.sum(log_likelihood(data.response[members], node.params))
        kids = sum(np.sum(log_likelihood(data.response[tree.node_members(c)], c.params))
                   for c in (node.left, node.right))
        assert kids >= parent - 1e-9


@given(st.integers(0, 10_000), st.floats(-10, 10))
@settings(max_examples=30, deadline=None)
def test_tree_rotation_equivariance(seed, delta):
    data = random_dataset(seed)
    ctrl = TreeControl(alpha=0.5, minsplit=10, minbucket=5)
    a = grow(data, ctrl)
    b = grow(data.rotate(delta), ctrl)
    assert structure(a.root) == structure(b.root)
    for la, lb in zip(a.leaves(), b.leaves()):
        assert angular_distance(la.params.mu + delta, lb.params.mu) <= 1e-8
        assert lb.params.kappa == pytest.approx(la.params.kappa, rel=1e-8)


# -- prediction and weights -----------------------------------------------------------

def test_tree_weights_and_predict_consistency():
    data = random_dataset(21, n=180)
    tree = grow(data, TreeControl(alpha=0.5, minsplit=10, minbucket=5))
    X = data.matrix()
    rng = np.random.default_rng(0)
    for i in rng.choice(data.n, 100, replace=False):
        w = tree.tree_weights(X[i])
        leaf = tree.route(X[i])
        assert w[i] == 1.0
        assert w.sum() == leaf.n_obs
        assert set(np.flatnonzero(w)) == set(leaf.members.tolist())
        p = tree.predict(X[i])
        ref = fit_mle(data.response, w)
        assert p.mu == pytest.approx(ref.mu, abs=1e-12)
        assert p.kappa == pytest.approx(ref.kappa, rel=1e-12)
    mu, kappa = tree.predict_data(data)
    for i in range(data.n):
        leaf = tree.route(X[i])
        assert mu[i] == leaf.params.mu and kappa[i] == leaf.params.kappa


def test_root_only_weights_all_ones():
    data = Dataset(np.linspace(0, 1, 10), [Covariate("x", np.zeros(10))])
    tree = grow(data)
    assert np.array_equal(tree.tree_weights([0.0]), np.ones(10))
    assert tree.predict([0.0]) == tree.root.params


def test_two_node_weights_match_left_members():
    data = two_regime(400, seed=7)
    tree = grow(data)
    thr = tree.root.split.threshold
    w = tree.tree_weights({"x": thr - 0.1, "noise": 0.0})
    x = data.covariate("x").values
    assert set(np.flatnonzero(w)) == set(np.flatnonzero(x <= thr))


def test_routing_errors_name_variable():
    data = two_regime(400, seed=7)
    tree = grow(data)
    with pytest.raises(RoutingError, match="x"):
        tree.route({"noise": 1.0})
    with pytest.raises(RoutingError, match="x"):
        tree.route([np.nan, 0.0])
    with pytest.raises(RoutingError):
        tree.predict_matrix(np.array([[np.nan, 0.0]]))


def test_route_by_label_and_unseen_level():
    rng = np.random.default_rng(2)
    g = rng.integers(0, 3, 300)
    labels = np.array(["n", "s", "w"])[g]
    ys = np.mod(rng.vonmises(np.where(g == 1, 3.0, 0.0), 5.0), 2 * np.pi)
    data = Dataset(ys, [Covariate.from_labels("wind", labels.tolist())])
    tree = grow(data)
    assert tree.n_leaves == 2
    assert angular_distance(tree.predict({"wind": "s"}).mu, 3.0) < 0.2
    # a level absent from training goes right
    unseen = Dataset(np.zeros(1), [Covariate.from_labels("wind", ["x"])])
    X = design_matrix(unseen, tree.covariates)
    assert X[0, 0] == 4.0
    assert tree.apply_matrix(X)[0] is tree.root.right


# -- export ------------------------------------------------------------------------

def test_json_roundtrip_lossless():
    data = random_dataset(30, n=200)
    tree = grow(data, TreeControl(alpha=0.5, minsplit=10, minbucket=5))
    back = Tree.from_json(tree.to_json())
    assert structure(back.root) == structure(tree.root)
    for a, b in zip(tree.nodes(), back.nodes()):
        assert a.params == b.params
        assert a.test == b.test
    assert np.array_equal(back.response, tree.response)
    assert back.control == tree.control
    d = json.loads(tree.export("json"))
    assert d["root"]["params"]["mu_deg"] == pytest.approx(np.rad2deg(tree.root.params.mu))


def test_json_rejects_foreign_and_future_versions():
    tree = grow(binary_flip(100))
    d = tree.to_dict()
    with pytest.raises(ModelFormatError):
        Tree.from_dict({**d, "version": 99})
    with pytest.raises(ModelFormatError):
        Tree.from_dict({**d, "format": "other"})


def test_dot_export_counts():
    root_only = grow(Dataset(np.linspace(0, 1, 10), [Covariate("x", np.zeros(10))]))
    dot = root_only.to_dot()
    assert dot.count("[label=") == 1
    rng = np.random.default_rng(3)
    x = rng.uniform(size=900)
    ys = np.mod(rng.vonmises(np.select([x < 1 / 3, x < 2 / 3], [0.0, 2.0], 4.0), 8.0), 2 * np.pi)
    tree = grow(Dataset(ys, [Covariate("x", x)]), TreeControl(minbucket=100, minsplit=200))
    assert tree.n_leaves == 3
    dot = tree.export("dot")
    assert dot.count("shape=ellipse") == 2
    assert dot.count("style=rounded") == 3
    assert "p < 0.001" in dot and "mu = " in dot
