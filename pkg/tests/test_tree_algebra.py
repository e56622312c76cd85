import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plntree.tree_algebra import (
    NoSpanningTreeError,
    edge_probabilities,
    edge_probabilities_from_log,
    edge_probabilities_minor_ratio,
    enumerate_spanning_trees,
    laplacian,
    log_meila_matrix_from_log,
    log_tree_weight_sum,
    log_tree_weight_sum_from_log,
    meila_matrix,
    normalize_log_weights,
    normalize_weights,
)

from conftest import enumeration_marginals, random_weights, upper_pairs


def uniform(p, value=1.0):
    w = np.full((p, p), value)
    np.fill_diagonal(w, 0.0)
    return w


# -- laplacian ---------------------------------------------------------------

def test_laplacian_uniform_p3():
    expected = np.array([[2.0, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    np.testing.assert_array_equal(laplacian(uniform(3)), expected)


def test_laplacian_single_edge():
    w = np.zeros((4, 4))
    w[0, 1] = w[1, 0] = 5.0
    q = laplacian(w)
    assert q[0, 0] == q[1, 1] == 5.0
    assert q[0, 1] == q[1, 0] == -5.0
    mask = np.ones((4, 4), bool)
    mask[:2, :2] = False
    assert np.all(q[mask] == 0)


def test_laplacian_matches_definition(rng):
    w = random_weights(rng, 5)
    q = laplacian(w)
    np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-12)
    for j in range(5):
        for k in range(5):
            want = w[j].sum() if j == k else -w[j, k]
            assert q[j, k] == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("bad", [
    np.array([[0, 1, 2], [1, 0, 1], [1, 1, 0]], float),
    np.array([[0, -1, 1], [-1, 0, 1], [1, 1, 0]], float),
    np.array([[0, np.nan, 1], [np.nan, 0, 1], [1, 1, 0]], float),
    np.ones((2, 2)),
    np.ones((3, 4)),
])
def test_invalid_weights_rejected(bad):
    with pytest.raises(ValueError):
        laplacian(bad)


# -- tree sums -----------------------------------------------------------------

@pytest.mark.parametrize("p", [3, 4, 5, 6])
def test_cayley_counts(p):
    assert log_tree_weight_sum(uniform(p)) == pytest.approx((p - 2) * math.log(p), abs=1e-12)
    if p <= 4:
        assert len(enumerate_spanning_trees(uniform(p))) == p ** (p - 2)


def test_log_tree_sum_matches_enumeration_p5(rng):
    w = random_weights(rng, 5)
    trees = enumerate_spanning_trees(w)
    assert len(trees) == 125
    total = sum(t[1] for t in trees)
    assert math.exp(log_tree_weight_sum(w)) == pytest.approx(total, rel=1e-12)


def test_enumeration_zero_weight_edge():
    w = uniform(4)
    w[0, 1] = w[1, 0] = 0.0
    for edges, weight in enumerate_spanning_trees(w):
        if (0, 1) in edges:
            assert weight == 0.0
        else:
            assert weight == 1.0


def test_enumeration_guard():
    with pytest.raises(ValueError, match="refusing"):
        enumerate_spanning_trees(uniform(9))


def test_enumerated_trees_are_spanning(rng):
    for edges, _ in enumerate_spanning_trees(random_weights(rng, 5)):
        assert len(edges) == 4
        parent = list(range(5))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        for j, k in edges:
            rj, rk = find(j), find(k)
            assert rj != rk
            parent[rj] = rk


def test_disconnected_graph_raises():
    w = np.zeros((4, 4))
    w[0, 1] = w[1, 0] = 1.0
    w[2, 3] = w[3, 2] = 1.0
    with pytest.raises(NoSpanningTreeError):
        log_tree_weight_sum(w)
    with pytest.raises(NoSpanningTreeError):
        edge_probabilities(w)
    with pytest.raises(NoSpanningTreeError):
        meila_matrix(w)


def test_log_tree_sum_huge_weights_stays_finite():
    w = uniform(6, 1e200)
    assert log_tree_weight_sum(w) == pytest.approx(4 * math.log(6) + 5 * 200 * math.log(10))


# -- derivative matrix -----------------------------------------------------------

@pytest.mark.parametrize("p", [3, 4])
def test_meila_uniform(p):
    m = meila_matrix(uniform(p))
    off = ~np.eye(p, dtype=bool)
    np.testing.assert_allclose(m[off], 2.0 / p, atol=1e-14)
    assert np.all(np.diag(m) == 0)


@pytest.mark.parametrize("seed", range(5))
def test_meila_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w = random_weights(rng, 5)
    m = meila_matrix(w)
    total = math.exp(log_tree_weight_sum(w))
    for j, k in upper_pairs(5):
        h = 1e-5 * w[j, k]
        wp, wm = w.copy(), w.copy()
        wp[j, k] = wp[k, j] = w[j, k] + h
        wm[j, k] = wm[k, j] = w[j, k] - h
        fd = (math.exp(log_tree_weight_sum(wp)) - math.exp(log_tree_weight_sum(wm))) / (2 * h)
        assert m[j, k] * total == pytest.approx(fd, rel=1e-6)


def test_meila_methods_agree(rng):
    for p in (3, 5, 8, 12):
        w = random_weights(rng, p)
        np.testing.assert_allclose(meila_matrix(w), meila_matrix(w, method="minor"), rtol=1e-10)


def test_meila_unknown_method():
    with pytest.raises(ValueError):
        meila_matrix(uniform(3), method="nope")


def test_meila_accurate_for_tight_pair():
    # nodes 0 and 1 joined by a huge weight, closed into a ring through 2 and 3;
    # the resistance 0-1 is a 1e-16 resistor in parallel with a path of 3
    w = np.zeros((4, 4))
    for j, k, v in [(0, 1, 1e16), (0, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)]:
        w[j, k] = w[k, j] = v
    exact = 1.0 / (1e16 + 1.0 / 3.0)
    assert meila_matrix(w)[0, 1] == pytest.approx(exact, rel=1e-12)
    # a plain Cholesky of the fixed minor cannot even factor this matrix
    with pytest.raises(NoSpanningTreeError):
        meila_matrix(w, method="minor")
    prob = edge_probabilities(w)
    assert prob[0, 1] == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose([prob[0, 2], prob[2, 3], prob[1, 3]], 2.0 / 3.0, rtol=1e-12)


# -- edge probabilities ----------------------------------------------------------

@pytest.mark.parametrize("p", [3, 4, 5, 7])
def test_uniform_probabilities(p):
    prob = edge_probabilities(uniform(p))
    off = ~np.eye(p, dtype=bool)
    np.testing.assert_allclose(prob[off], 2.0 / p, atol=1e-10)


@pytest.mark.parametrize("p", [4, 5, 6])
def test_probabilities_match_enumeration(rng, p):
    w = random_weights(rng, p)
    _, marg = enumeration_marginals(w)
    np.testing.assert_allclose(edge_probabilities(w), marg, atol=1e-10)


def test_probabilities_zero_where_weight_zero(rng):
    w = random_weights(rng, 6)
    w[0, 3] = w[3, 0] = 0.0
    w[2, 5] = w[5, 2] = 0.0
    prob = edge_probabilities(w)
    assert prob[0, 3] == 0.0 and prob[2, 5] == 0.0
    assert prob[np.triu_indices(6, 1)].sum() == pytest.approx(5.0, abs=1e-12)


def test_bridge_edge_has_probability_one():
    w = np.ones((5, 5))
    np.fill_diagonal(w, 0.0)
    w[4, :3] = w[:3, 4] = 0.0  # node 4 hangs on node 3 only
    prob = edge_probabilities(w)
    assert prob[3, 4] == pytest.approx(1.0, abs=1e-14)
    ratio = edge_probabilities_minor_ratio(w)
    assert math.isnan(ratio[3, 4])


def test_minor_ratio_agrees_with_product_form(rng):
    for p in (4, 6, 9):
        w = random_weights(rng, p)
        np.testing.assert_allclose(edge_probabilities_minor_ratio(w), edge_probabilities(w),
                                   atol=1e-8)


def test_probabilities_wide_range_sum_exact():
    rng = np.random.default_rng(7)
    p = 25
    log_w = rng.normal(scale=40.0, size=(p, p))
    log_w = np.triu(log_w, 1)
    log_w = log_w + log_w.T
    w, _ = normalize_log_weights(log_w)
    prob = edge_probabilities(w)
    assert prob[np.triu_indices(p, 1)].sum() == pytest.approx(p - 1, abs=1e-8)
    assert np.all((prob >= 0) & (prob <= 1))


weights_strategy = st.integers(min_value=3, max_value=9).flatmap(
    lambda p: arrays(np.float64, (p, p), elements=st.floats(1e-3, 1e3))
)


@settings(max_examples=60, deadline=None)
@given(weights_strategy, st.floats(1e-6, 1e6))
def test_probability_invariants(raw, scale):
    w = np.triu(raw, 1)
    w = w + w.T
    p = w.shape[0]
    prob = edge_probabilities(w)
    np.testing.assert_array_equal(prob, prob.T)
    assert np.all(np.diag(prob) == 0)
    assert np.all((prob >= 0) & (prob <= 1))
    assert prob[np.triu_indices(p, 1)].sum() == pytest.approx(p - 1, abs=1e-8)
    np.testing.assert_allclose(edge_probabilities(scale * w), prob, atol=1e-10)


# -- normalization -------------------------------------------------------------

def test_normalize_constant():
    w, scale = normalize_weights(uniform(4, 1e6))
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_allclose(w[off], 1.0, rtol=1e-12)
    assert scale == pytest.approx(6 * math.log(10), rel=1e-12)


def test_normalize_fixed_point():
    w0 = np.array([[0, 2, 0.5], [2, 0, 1], [0.5, 1, 0]], float)
    w, scale = normalize_weights(w0)
    assert scale == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(w, w0, rtol=1e-14)


def test_normalize_preserves_probabilities(rng):
    w = random_weights(rng, 7, 1e-3, 1e3)
    np.testing.assert_allclose(edge_probabilities(normalize_weights(w)[0]),
                               edge_probabilities(w), atol=1e-10)


def test_normalize_zeroes_tiny_entries():
    w = uniform(4)
    w[0, 1] = w[1, 0] = 1e-20
    out, _ = normalize_weights(w)
    assert out[0, 1] == 0.0


def test_normalize_all_zero():
    with pytest.raises(ValueError):
        normalize_weights(np.zeros((3, 3)))


def test_normalize_log_weights_mask():
    log_w = np.zeros((3, 3))
    mask = np.ones((3, 3), bool)
    mask[0, 2] = mask[2, 0] = False
    w, scale = normalize_log_weights(log_w, mask)
    assert w[0, 2] == 0.0 and w[0, 1] == 1.0 and scale == 0.0


# -- log-weight entry points -----------------------------------------------------

def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


@pytest.mark.parametrize("p", [3, 5, 8])
def test_log_entry_points_match_linear(rng, p):
    w = random_weights(rng, p)
    lw = _log(w)
    assert log_tree_weight_sum_from_log(lw) == pytest.approx(log_tree_weight_sum(w), abs=1e-12)
    np.testing.assert_allclose(edge_probabilities_from_log(lw), edge_probabilities(w), atol=1e-13)
    m = np.exp(log_meila_matrix_from_log(lw))
    np.testing.assert_allclose(m, meila_matrix(w), rtol=1e-12)


def test_log_entry_points_match_enumeration(rng):
    w = random_weights(rng, 6, 0.01, 50.0)
    total, marg = enumeration_marginals(w)
    assert log_tree_weight_sum_from_log(_log(w)) == pytest.approx(math.log(total), rel=1e-12)
    np.testing.assert_allclose(edge_probabilities_from_log(_log(w)), marg, atol=1e-12)


def test_log_entry_points_beyond_float_range():
    # one edge with weight e^2000: it is in every tree, the rest is the
    # contracted graph (a K5 whose merged node carries doubled weights)
    p = 6
    lw = np.zeros((p, p))
    np.fill_diagonal(lw, -np.inf)
    lw[4, 5] = lw[5, 4] = 2000.0
    pr = edge_probabilities_from_log(lw)
    w_c = np.ones((5, 5))
    np.fill_diagonal(w_c, 0.0)
    w_c[4, :4] = w_c[:4, 4] = 2.0
    total_c, marg_c = enumeration_marginals(w_c)
    assert pr[4, 5] == pytest.approx(1.0, abs=1e-12)
    assert pr[0, 1] == pytest.approx(marg_c[0, 1], abs=1e-12)
    assert pr[0, 4] + pr[0, 5] == pytest.approx(marg_c[0, 4], abs=1e-12)
    assert pr.sum() / 2 == pytest.approx(p - 1, abs=1e-10)
    assert log_tree_weight_sum_from_log(lw) == pytest.approx(2000.0 + math.log(total_c), abs=1e-9)


def test_log_entry_points_mask():
    # masked entries are absent edges, not small ones
    p = 4
    lw = np.zeros((p, p))
    mask = ~np.eye(p, dtype=bool)
    mask[0, 1] = mask[1, 0] = False
    w = np.ones((p, p)) - np.eye(p)
    w[0, 1] = w[1, 0] = 0.0
    pr = edge_probabilities_from_log(lw, mask)
    assert pr[0, 1] == 0.0
    np.testing.assert_allclose(pr, edge_probabilities(w), atol=1e-14)
    assert log_tree_weight_sum_from_log(lw, mask) == pytest.approx(math.log(8), abs=1e-12)


def test_log_entry_points_disconnected_mask():
    lw = np.zeros((4, 4))
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 1] = mask[1, 0] = mask[2, 3] = mask[3, 2] = True
    with pytest.raises(NoSpanningTreeError):
        edge_probabilities_from_log(lw, mask)
