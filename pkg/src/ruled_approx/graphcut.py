"""Multi-label assignment by alpha expansion over binary min-cuts.

Labels live on graph nodes; the objective is a sum of per-node data costs
and Potts edge costs (weight paid when the endpoints disagree). Each
expansion move solves one s-t min cut; with Potts weights every move
subproblem is submodular, so the binary step is exact and the sweep
converges to a strong local optimum (exact for two labels).
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

PIN = 1e15


@dataclass
class LabelingProblem:
    """n nodes, labels 0..n_labels-1.

    data_cost: (n, n_labels); edges: (m, 2) int; weights: (m,) >= 0.
    fixed[i] >= 0 pins node i to that label (its data row is still charged).
    """

    data_cost: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    fixed: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.data_cost.shape[0]

    @property
    def n_labels(self) -> int:
        return self.data_cost.shape[1]


def labeling_energy(problem: LabelingProblem, labels: np.ndarray) -> float:
    d = problem.data_cost[np.arange(problem.n_nodes), labels].sum()
    if len(problem.edges):
        la, lb = labels[problem.edges[:, 0]], labels[problem.edges[:, 1]]
        d += problem.weights[la != lb].sum()
    return float(d)


def _initial_labels(problem: LabelingProblem) -> np.ndarray:
    labels = np.argmin(problem.data_cost, axis=1).astype(np.int64)
    if problem.fixed is not None:
        pin = problem.fixed >= 0
        labels[pin] = problem.fixed[pin]
    return labels


def _expansion_move(problem: LabelingProblem, labels: np.ndarray, alpha: int):
    """One alpha-expansion: each node keeps its label (0) or switches (1).

    Returns the improved labels or None when the move does not lower the
    energy. Pairwise costs are reduced to the canonical form
    A + (C-A) x_i + (D-C) x_j + (B+C-A-D)(1-x_i) x_j with
    A=cost(li,lj), B=cost(li,alpha), C=cost(alpha,lj), D=0.
    """
    n = problem.n_nodes
    theta0 = problem.data_cost[np.arange(n), labels].copy()
    theta1 = problem.data_cost[:, alpha].copy()
    if problem.fixed is not None:
        theta1[(problem.fixed >= 0) & (problem.fixed != alpha)] = PIN
    G = nx.DiGraph()
    G.add_node("s")
    G.add_node("t")
    for k in range(len(problem.edges)):
        i, j = int(problem.edges[k, 0]), int(problem.edges[k, 1])
        w = float(problem.weights[k])
        li, lj = int(labels[i]), int(labels[j])
        A = w * (li != lj)
        B = w * (li != alpha)
        C = w * (alpha != lj)
        theta1[i] += C - A
        theta1[j] += 0.0 - C
        pw = B + C - A  # D = 0; Potts guarantees pw >= 0
        if pw > 0.0:
            G.add_edge(i, j, capacity=pw)
    for i in range(n):
        lo = min(theta0[i], theta1[i])
        if theta1[i] - lo > 0.0:
            G.add_edge("s", i, capacity=theta1[i] - lo)
        if theta0[i] - lo > 0.0:
            G.add_edge(i, "t", capacity=theta0[i] - lo)
    _, (source_side, _) = nx.minimum_cut(G, "s", "t")
    new_labels = labels.copy()
    for i in range(n):
        # t side = switch to alpha (x_i = 1); isolated nodes fall to the
        # cheaper unary, which the cut puts on the source side only when
        # keeping is free
        if i not in source_side:
            new_labels[i] = alpha
    if labeling_energy(problem, new_labels) < labeling_energy(problem, labels) - 1e-12:
        return new_labels
    return None


def alpha_expansion(problem: LabelingProblem, init: np.ndarray | None = None,
                    max_sweeps: int = 10) -> np.ndarray:
    """Sweep expansion moves over labels 0..n_labels-1 until no move helps."""
    labels = _initial_labels(problem) if init is None else init.copy()
    for _ in range(max_sweeps):
        improved = False
        for alpha in range(problem.n_labels):
            out = _expansion_move(problem, labels, alpha)
            if out is not None:
                labels = out
                improved = True
        if not improved:
            break
    return labels
