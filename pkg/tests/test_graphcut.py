import itertools

import numpy as np
import pytest

from ruled_approx.graphcut import LabelingProblem, labeling_energy, alpha_expansion


def brute_force_min(problem):
    """Exhaustive minimum over all labelings (oracle for small instances)."""
    n, k = problem.data_cost.shape
    free = np.arange(n)
    base = np.zeros(n, dtype=np.int64)
    if problem.fixed is not None:
        pinned = problem.fixed >= 0
        base[pinned] = problem.fixed[pinned]
        free = np.flatnonzero(~pinned)
    best = np.inf
    best_lab = None
    for combo in itertools.product(range(k), repeat=len(free)):
        lab = base.copy()
        lab[free] = combo
        e = labeling_energy(problem, lab)
        if e < best - 1e-15:
            best = e
            best_lab = lab
    return best, best_lab


def random_problem(rng, n_nodes, n_labels, n_fixed=0):
    # random connected graph: spanning tree plus a few chords
    edges = []
    for i in range(1, n_nodes):
        edges.append((rng.integers(0, i), i))
    extra = rng.integers(0, n_nodes)
    for _ in range(extra):
        a, b = rng.integers(0, n_nodes, size=2)
        if a != b:
            edges.append((min(a, b), max(a, b)))
    edges = np.array(sorted(set(tuple(e) for e in edges)), dtype=np.int64)
    data = rng.uniform(0.0, 4.0, size=(n_nodes, n_labels))
    w = rng.uniform(0.1, 2.0, size=len(edges))
    fixed = None
    if n_fixed:
        fixed = np.full(n_nodes, -1, dtype=np.int64)
        idx = rng.choice(n_nodes, size=n_fixed, replace=False)
        fixed[idx] = rng.integers(0, n_labels, size=n_fixed)
    return LabelingProblem(data_cost=data, edges=edges, weights=w, fixed=fixed)


def test_energy_matches_hand_computation():
    data = np.array([[0.0, 2.0], [3.0, 1.0], [5.0, 0.5]])
    edges = np.array([[0, 1], [1, 2]])
    w = np.array([0.7, 1.3])
    p = LabelingProblem(data_cost=data, edges=edges, weights=w)
    assert labeling_energy(p, np.array([0, 0, 1])) == pytest.approx(0.0 + 3.0 + 0.5 + 1.3)
    assert labeling_energy(p, np.array([0, 1, 1])) == pytest.approx(0.0 + 1.0 + 0.5 + 0.7)


def test_two_labels_exact():
    # with two labels a single expansion move is a global min cut
    rng = np.random.default_rng(7)
    for _ in range(40):
        p = random_problem(rng, n_nodes=rng.integers(2, 9), n_labels=2)
        lab = alpha_expansion(p)
        e = labeling_energy(p, lab)
        ref, _ = brute_force_min(p)
        assert e == pytest.approx(ref, abs=1e-9)


def test_multilabel_near_optimal():
    rng = np.random.default_rng(11)
    hits = 0
    trials = 100
    for _ in range(trials):
        n = int(rng.integers(4, 13))
        k = int(rng.integers(2, 4))
        p = random_problem(rng, n_nodes=n, n_labels=k)
        lab = alpha_expansion(p)
        e = labeling_energy(p, lab)
        ref, _ = brute_force_min(p)
        assert e <= ref * 1.05 + 1e-9
        if e <= ref + 1e-9:
            hits += 1
    assert hits >= 95


def test_fixed_labels_respected():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 10))
        p = random_problem(rng, n_nodes=n, n_labels=3, n_fixed=2)
        lab = alpha_expansion(p)
        pin = p.fixed >= 0
        assert np.array_equal(lab[pin], p.fixed[pin])
        ref, _ = brute_force_min(p)
        assert labeling_energy(p, lab) <= ref * 1.05 + 1e-9


def test_strong_smoothness_gives_constant_labeling():
    data = np.array([[0.0, 0.1], [0.1, 0.0], [0.0, 0.1], [0.1, 0.0]])
    edges = np.array([[0, 1], [1, 2], [2, 3]])
    w = np.full(3, 10.0)
    lab = alpha_expansion(LabelingProblem(data_cost=data, edges=edges, weights=w))
    assert len(np.unique(lab)) == 1


def test_zero_smoothness_takes_pointwise_argmin():
    rng = np.random.default_rng(5)
    data = rng.uniform(size=(6, 3))
    edges = np.array([[0, 1], [2, 3], [4, 5]])
    lab = alpha_expansion(LabelingProblem(data_cost=data, edges=edges,
                                          weights=np.zeros(3)))
    assert np.array_equal(lab, np.argmin(data, axis=1))


def test_deterministic():
    rng = np.random.default_rng(13)
    p = random_problem(rng, n_nodes=10, n_labels=3)
    a = alpha_expansion(p)
    b = alpha_expansion(p)
    assert np.array_equal(a, b)
