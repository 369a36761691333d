import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doublecurrent.currents import (ClusterChain, CoupledSampler, CurrentTrace, TraceError, assign_labels_and_spins,
                                    check_trace, clusters, dimer_to_flow, even_probability, flow_to_trace,
                                    reverse_map_constant, sample_double_current)
from doublecurrent.decorations import LONG, X_CRITICAL, build_gd
from doublecurrent.kasteleyn import kasteleyn_matrix, invert, matched_edges, real_kasteleyn_signs, sample_dimers
from doublecurrent.oracle import (EVEN, ODD, ZERO, closed_form_trace_law, enum_dimer_covers, flow_trace_law,
                                  total_variation, truncated_current_law)
from doublecurrent.planar_map import grid_domain


def _law(rows):
    c = Counter(tuple(int(v) for v in r) for r in rows)
    return {k: n / len(rows) for k, n in c.items()}


def _edge_id(m, a, b):
    for e, (p, q) in enumerate(m.edges):
        if {int(p), int(q)} == {a, b}:
            return e
    raise KeyError((a, b))


def test_coupling_constants_at_criticality():
    x = X_CRITICAL
    assert abs(even_probability(x) - (1 - 1 / math.sqrt(2))) < 1e-12
    dual = (1 - x) / (1 + x)
    assert abs(even_probability(dual) - even_probability(x)) < 1e-12
    gap = 1 - even_probability(x) - even_probability(dual)
    assert abs(gap - 2 * x * (1 - x) / (1 + x * x)) < 1e-12
    assert abs(gap - 0.41421356) < 1e-8
    assert abs(reverse_map_constant(x) - 0.54692) < 1e-5


def test_all_short_covers_give_empty_flows(graphs):
    gd = build_gd(graphs["edge"], 0.4)
    _, _, covers = enum_dimer_covers(gd.map.n_vertices, gd.map.edges, gd.map.weights)
    short_only = []
    for c, _ in covers:
        mask = np.zeros(gd.map.n_edges, bool)
        mask[list(c)] = True
        if not np.any(mask & (gd.kind == LONG)):
            short_only.append(mask)
    # two cycle covers per vertex without flow
    assert len(short_only) == 2 ** graphs["edge"].n_vertices
    for mask in short_only:
        flow = dimer_to_flow(gd, mask)
        assert not flow.present.any()
        odd, even = flow_to_trace(flow)
        assert not odd.any() and not even.any()


@pytest.mark.parametrize("name", ["edge", "path", "triangle"])
def test_sampled_flows_follow_the_flow_law(graphs, rng, name):
    m = graphs[name]
    gd = build_gd(m, X_CRITICAL)
    km = kasteleyn_matrix(gd, real_kasteleyn_signs(gd))
    M = matched_edges(km, sample_dimers(km, invert(km), 100_000, rng), rng)
    rows = []
    for cover in M:
        odd, even = flow_to_trace(dimer_to_flow(gd, cover))
        rows.append(np.where(odd, ODD, np.where(even, EVEN, ZERO)))
    assert total_variation(_law(rows), flow_trace_law(gd.digraph)) <= 0.02


def test_flow_law_matches_current_law(graphs):
    from doublecurrent.decorations import build_vec_g
    for name in ("edge", "path", "triangle"):
        m = graphs[name]
        law = closed_form_trace_law(m, math.atanh(X_CRITICAL))
        assert total_variation(flow_trace_law(build_vec_g(m, X_CRITICAL)), law) <= 1e-12


def test_single_edge_trace_law(graphs, rng):
    m = graphs["edge"]
    traces = sample_double_current(m, X_CRITICAL, rng=rng, n_samples=100_000)
    primal = np.array([t.primal for t in traces])
    exact = truncated_current_law(m, math.atanh(X_CRITICAL))["law"]
    assert total_variation(_law(primal), exact) <= 0.02
    assert not np.any(primal == ODD)


def test_odd_part_is_xor_of_two_even_subgraphs(graphs):
    # a double current's odd part is the symmetric difference of two independent
    # tanh-weighted even subgraphs; on the triangle that is 2q(1 - q)
    beta = math.atanh(X_CRITICAL)
    law = closed_form_trace_law(graphs["triangle"], beta)
    p_odd = sum(v for k, v in law.items() if all(c == ODD for c in k))
    t3 = math.tanh(beta) ** 3
    q = t3 / (1 + t3)
    assert abs(p_odd - 2 * q * (1 - q)) < 1e-12


def test_disjointness_and_even_degree_on_every_sample(rng):
    m = grid_domain(3, 3).map
    _, p, d = CoupledSampler(m, 0.37).traces(5000, rng)
    check_trace(m, p, d)
    assert not np.any((p != ZERO) & (d != ZERO))


def test_check_trace_rejects_odd_degree(graphs):
    m = graphs["path"]
    bad = np.array([ODD, ZERO], dtype=np.int8)
    with pytest.raises(TraceError):
        check_trace(m, bad)


def test_check_trace_rejects_overlap(graphs):
    m = graphs["square"]
    p = np.array([EVEN, ZERO, ZERO, ZERO], dtype=np.int8)
    with pytest.raises(TraceError):
        check_trace(m, p, p)


def test_empty_trace_has_no_clusters():
    m = grid_domain(3, 3).map
    z = np.zeros(m.n_edges, np.int8)
    assert len(clusters(CurrentTrace(m, z, z))) == 0


def test_odd_square_cluster():
    d = grid_domain(4, 4)
    m, vi = d.map, d.vertex_index
    ids = [vi[s] for s in [(1, 1), (2, 1), (2, 2), (1, 2)]]
    p = np.zeros(m.n_edges, np.int8)
    for k in range(4):
        p[_edge_id(m, ids[k], ids[(k + 1) % 4])] = ODD
    cs = clusters(CurrentTrace(m, p, np.zeros_like(p)))
    assert len(cs) == 1
    c = cs.clusters[0]
    assert c.outer.length == 8
    assert len(c.holes) == 1 and bool(c.hole_odd[0])


def test_isolated_even_edge_cluster():
    d = grid_domain(4, 4)
    m, vi = d.map, d.vertex_index
    p = np.zeros(m.n_edges, np.int8)
    p[_edge_id(m, vi[(1, 1)], vi[(2, 1)])] = EVEN
    cs = clusters(CurrentTrace(m, p, np.zeros_like(p)))
    assert len(cs) == 1
    c = cs.clusters[0]
    assert len(c.holes) == 0
    P = c.outer.points
    assert P[:, 0].min() < 1 < 2 < P[:, 0].max() and P[:, 1].min() < 1 < P[:, 1].max()


def test_spins_inside_an_odd_loop_flip(rng):
    d = grid_domain(4, 4)
    m, vi = d.map, d.vertex_index
    ids = [vi[s] for s in [(1, 1), (2, 1), (2, 2), (1, 2)]]
    p = np.zeros(m.n_edges, np.int8)
    for k in range(4):
        p[_edge_id(m, ids[k], ids[(k + 1) % 4])] = ODD
    tr = assign_labels_and_spins(CurrentTrace(m, p, np.zeros_like(p)), rng)
    inside = d.face_at((1.5, 1.5))
    tau = np.asarray(tr.tau_dual)
    assert tau[inside] == -1
    others = [f for f in m.bounded_faces if f != inside]
    assert np.all(tau[others] == 1)


def test_no_clusters_gives_plus_spins(rng):
    m = grid_domain(3, 3).map
    z = np.zeros(m.n_edges, np.int8)
    tr = assign_labels_and_spins(CurrentTrace(m, z, z), rng)
    assert np.all(np.asarray(tr.tau_dual) == 1)


def test_labels_are_fair_coins(rng):
    d = grid_domain(4, 4)
    m, vi = d.map, d.vertex_index
    p = np.zeros(m.n_edges, np.int8)
    p[_edge_id(m, vi[(0, 0)], vi[(1, 0)])] = EVEN
    p[_edge_id(m, vi[(2, 2)], vi[(3, 2)])] = EVEN
    tr = CurrentTrace(m, p, np.zeros_like(p))
    labs = np.array([assign_labels_and_spins(tr, rng).labels for _ in range(20000)])
    # chi-squared over the four joint outcomes of two cluster labels, 3 dof, 0.1% level
    joint = Counter(tuple(r) for r in labs[:, :2].tolist())
    chi2 = sum((joint.get(k, 0) - 5000) ** 2 / 5000 for k in [(-1, -1), (-1, 1), (1, -1), (1, 1)])
    assert chi2 < 16.27


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.2, X_CRITICAL, 0.7]))
def test_chain_samples_are_valid_traces(seed, x):
    m = grid_domain(6, 5).map
    chain = ClusterChain(m, x, seed=seed, sweeps=1)
    for _ in range(5):
        odd, open_, _ = chain.step()
        assert np.all(open_[odd])
        primal = np.where(odd, ODD, np.where(open_, EVEN, ZERO)).astype(np.int8)
        check_trace(m, primal)


def test_chain_matches_exact_law_on_small_grid():
    m = grid_domain(2, 3).map
    exact = closed_form_trace_law(m, math.atanh(X_CRITICAL))
    chain = ClusterChain(m, X_CRITICAL, seed=3, sweeps=1)
    chain.burn_in(100)
    rows = []
    for _ in range(60000):
        odd, open_, _ = chain.step()
        rows.append(np.where(odd, ODD, np.where(open_, EVEN, ZERO)))
    assert total_variation(_law(rows), exact) <= 0.03
