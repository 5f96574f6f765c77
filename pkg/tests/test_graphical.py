"""Pairwise model and spanning-forest bound tests against enumeration."""

import itertools
import math

import numpy as np
import pytest

from osstar.graphical import (Disconnected, Forest, PairwiseModel,
                              SubspaceProposal, ising_grid,
                              max_spanning_forest, prim_max_tree, tree_bound)


def all_configs(model):
    return list(itertools.product(*[range(d) for d in model.domains]))


def triangle():
    rng = np.random.default_rng(42)
    return PairwiseModel(
        domains=[2, 3, 2],
        log_psi=[rng.normal(size=2), rng.normal(size=3), rng.normal(size=2)],
        edges=[(0, 1, rng.normal(size=(2, 3))),
               (0, 2, rng.normal(size=(2, 2))),
               (1, 2, rng.normal(size=(3, 2)))])


def chain():
    rng = np.random.default_rng(7)
    return PairwiseModel(
        domains=[2, 2, 2],
        log_psi=[rng.normal(size=2) for _ in range(3)],
        edges=[(0, 1, rng.normal(size=(2, 2))),
               (1, 2, rng.normal(size=(2, 2)))])


def test_model_validation():
    with pytest.raises(ValueError):
        PairwiseModel([2], [[0.0]], [])  # psi too short
    with pytest.raises(ValueError):
        PairwiseModel([2, 2], [[0, 0], [0, 0]], [(1, 0, [[0, 0], [0, 0]])])
    with pytest.raises(ValueError):
        PairwiseModel([2, 2], [[0, 0], [0, 0]],
                      [(0, 1, [[0, 0], [0, 0]]), (0, 1, [[0, 0], [0, 0]])])
    with pytest.raises(ValueError):
        PairwiseModel([2, 2], [[0, 0], [0, 0]], [(0, 1, [[0, 0]])])
    with pytest.raises(ValueError):
        PairwiseModel([2, 2], [[0, math.inf], [0, 0]], [])
    with pytest.raises(ValueError):
        PairwiseModel.from_dict({"nodes": [{"id": 1, "domain": 2,
                                            "log_psi": [0, 0]}], "edges": []})


def test_json_roundtrip_is_exact():
    m = triangle()
    m2 = PairwiseModel.from_json(m.to_json())
    for x in all_configs(m):
        assert m.log_p(x) == m2.log_p(x)


def test_ising_grid_layout_and_determinism():
    m = ising_grid(2, 2, sigma=0.7, seed=3)
    assert m.n_nodes == 4
    assert [(e.u, e.v) for e in m.edges] == [(0, 1), (0, 2), (1, 3), (2, 3)]
    for e in m.edges:
        j = e.log_phi[0, 0]
        assert np.allclose(e.log_phi, [[j, -j], [-j, j]])
    m2 = ising_grid(2, 2, sigma=0.7, seed=3)
    for x in all_configs(m):
        assert m.log_p(x) == m2.log_p(x)
    m3 = ising_grid(2, 2, sigma=0.7, seed=4)
    assert any(m.log_p(x) != m3.log_p(x) for x in all_configs(m))


def rng_free_model(ranges):
    """Triangle with prescribed phi ranges, zero unaries."""
    edges = [(0, 1), (0, 2), (1, 2)]
    return PairwiseModel(
        domains=[2, 2, 2],
        log_psi=[[0.0, 0.0]] * 3,
        edges=[(u, v, [[0.0, -r], [-r, 0.0]])
               for (u, v), r in zip(edges, ranges)])


def test_prim_keeps_largest_ranges():
    m = rng_free_model([3.0, 1.0, 2.0])
    assert prim_max_tree(m).edge_ids == {0, 2}
    # all ranges equal: ties resolved toward the smallest edge id
    m = rng_free_model([1.0, 1.0, 1.0])
    assert prim_max_tree(m).edge_ids == {0, 1}


def test_disconnected_graph_rejected_but_forest_allowed():
    m = PairwiseModel([2, 2, 2], [[0, 0]] * 3, [(0, 1, [[0, 1], [1, 0]])])
    with pytest.raises(Disconnected):
        prim_max_tree(m)
    forest = max_spanning_forest(m, [0, 1, 2])
    assert forest.roots == [0, 2]
    assert forest.edge_ids == {0}


def test_bound_dominates_and_matches_enumeration():
    m = triangle()
    q = tree_bound(m)
    scores = {x: q.score(x) for x in all_configs(m)}
    for x, s in scores.items():
        assert s >= m.log_p(x) - 1e-12
    vals = list(scores.values())
    assert math.isclose(q.mass_log(), np.logaddexp.reduce(vals),
                        rel_tol=0, abs_tol=1e-10)
    assert math.isclose(q.max_log(), max(vals), rel_tol=0, abs_tol=1e-10)
    config, log_q = q.argmax()
    assert math.isclose(log_q, max(vals), rel_tol=0, abs_tol=1e-10)
    assert scores[config] == log_q
    # exactly one edge is off the spanning tree of a triangle
    assert len(q.offtree_ids) == 1


def test_tree_structured_model_is_bounded_exactly():
    m = chain()
    q = tree_bound(m)
    assert q.offtree_ids == []
    for x in all_configs(m):
        assert math.isclose(q.score(x), m.log_p(x), rel_tol=0, abs_tol=1e-12)
    config, log_q = q.argmax()
    best = max(all_configs(m), key=m.log_p)
    assert config == best


def test_sampling_law_matches_subspace_masses():
    m = triangle()
    q = tree_bound(m)
    scores = {x: q.score(x) for x in all_configs(m)}
    z = np.logaddexp.reduce(list(scores.values()))
    rng = np.random.default_rng(0)
    n = 30_000
    freq = {x: 0 for x in scores}
    for _ in range(n):
        x, log_q = q.sample(rng)
        assert log_q == scores[x]
        freq[x] += 1
    for x, s in scores.items():
        assert abs(freq[x] / n - math.exp(s - z)) < 0.02


def test_sample_many_matches_law_and_scores():
    m = triangle()
    q = tree_bound(m)
    scores = {x: q.score(x) for x in all_configs(m)}
    z = np.logaddexp.reduce(list(scores.values()))
    rng = np.random.default_rng(1)
    configs, log_qs = q.sample_many(rng, 30_000)
    assert np.allclose(log_qs, q.score_many(configs), atol=1e-12, rtol=0)
    head = configs[:100]
    assert np.allclose(m.log_p_many(head),
                       [m.log_p(tuple(c)) for c in head], atol=1e-12, rtol=0)
    for x, s in scores.items():
        got = np.mean([tuple(c) == x for c in configs.tolist()])
        assert abs(got - math.exp(s - z)) < 0.02


def test_conditioned_subspace():
    m = triangle()
    q = SubspaceProposal(m, {0: 1})
    members = [x for x in all_configs(m) if x[0] == 1]
    vals = [q.score(x) for x in members]
    assert math.isclose(q.mass_log(), np.logaddexp.reduce(vals),
                        rel_tol=0, abs_tol=1e-10)
    for x in members:
        assert q.score(x) >= m.log_p(x) - 1e-12
    rng = np.random.default_rng(2)
    for _ in range(200):
        x, _ = q.sample(rng)
        assert x[0] == 1
    configs, _ = q.sample_many(rng, 500)
    assert (configs[:, 0] == 1).all()


def test_fully_conditioned_subspace_scores_exactly():
    m = triangle()
    for x in all_configs(m):
        q = SubspaceProposal(m, dict(enumerate(x)))
        assert q.score(x) == m.log_p(x)
        assert q.mass_log() == m.log_p(x)
        config, log_q = q.argmax()
        assert config == x and log_q == m.log_p(x)


@pytest.mark.parametrize("shape,seed", [((2, 2), 0), ((3, 3), 1), ((2, 3), 5)])
def test_grid_bound_enumeration(shape, seed):
    m = ising_grid(*shape, sigma=0.8, seed=seed)
    q = tree_bound(m)
    scores = {x: q.score(x) for x in all_configs(m)}
    for x, s in scores.items():
        assert s >= m.log_p(x) - 1e-12
    vals = list(scores.values())
    assert math.isclose(q.mass_log(), np.logaddexp.reduce(vals),
                        rel_tol=0, abs_tol=1e-9)
    config, log_q = q.argmax()
    assert math.isclose(log_q, max(vals), rel_tol=0, abs_tol=1e-9)
    # bound argmax matches enumeration of the bound itself
    best = max(vals)
    assert scores[config] >= best - 1e-12


def test_forest_without_node():
    m = ising_grid(3, 3, sigma=0.5, seed=9)
    f = prim_max_tree(m)
    assert sorted(f.order) == list(range(9))
    g = f.without(4)
    assert sorted(g.order) == [0, 1, 2, 3, 5, 6, 7, 8]
    for c in f.children[4]:
        assert g.parent[c] is None
        assert c in g.roots
    for j in g.order:
        p = g.parent[j]
        if p is not None:
            assert g.order.index(p) < g.order.index(j)
            e = m.edges[g.edge_of[j]]
            assert {e.u, e.v} == {j, p}
    assert 4 not in g.parent and 4 not in g.children


def test_argmax_tie_takes_lexicographically_smallest():
    anti = np.log(np.array([[1.0, 2.0], [2.0, 1.0]]))
    m = PairwiseModel([2, 2], [np.zeros(2), np.zeros(2)], [(0, 1, anti)])
    # maxima tie at (0,1) and (1,0)
    config, val = tree_bound(m).argmax()
    assert config == (0, 1)
    assert val == pytest.approx(math.log(2.0))


def test_argmax_fully_tied_model_returns_zero_config():
    flat = np.zeros((2, 2))
    m = PairwiseModel([2, 2, 2], [np.zeros(2)] * 3,
                      [(0, 1, flat), (1, 2, flat)])
    config, val = tree_bound(m).argmax()
    assert config == (0, 0, 0)
    assert val == 0.0
