"""Spanning-tree sums, edge probabilities and why the log-weight path matters.

Run: python3 demos/01_tree_algebra.py
"""

import numpy as np

from plntree.tree_algebra import (
    edge_probabilities,
    edge_probabilities_from_log,
    enumerate_spanning_trees,
    log_tree_weight_sum,
    log_tree_weight_sum_from_log,
    meila_matrix,
)

rng = np.random.default_rng(0)
p = 5
w = np.triu(rng.uniform(0.1, 3.0, size=(p, p)), 1)
w = w + w.T

# The determinant route and brute force agree on the total tree weight.
trees = list(enumerate_spanning_trees(w))
total = sum(weight for _, weight in trees)
print(f"{len(trees)} spanning trees on {p} nodes (Cayley: {p ** (p - 2)})")
print(f"brute force sum {total:.12g}, determinant {np.exp(log_tree_weight_sum(w)):.12g}")

# Edge marginals: P = w * M, where M is the derivative of log B.
prob = edge_probabilities(w)
print("edge probabilities sum to p - 1:", np.sum(np.triu(prob, 1)))
print("P[0, 1] = w[0, 1] * M[0, 1]:", prob[0, 1], w[0, 1] * meila_matrix(w)[0, 1])

# Weights like exp(2000) arise when two species are almost copies of each
# other.  They overflow float64 but the log-weight entry points handle them.
log_w = np.zeros((6, 6))
np.fill_diagonal(log_w, -np.inf)
log_w[4, 5] = log_w[5, 4] = 2000.0
print("log tree sum with one e^2000 edge:", log_tree_weight_sum_from_log(log_w))
print("that edge is in every tree, P =", edge_probabilities_from_log(log_w)[4, 5])
