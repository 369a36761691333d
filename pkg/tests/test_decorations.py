import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doublecurrent.decorations import (X_CRITICAL, BipartiteMap, build_cg, build_gd, build_vec_g, collapse,
                                       face_street_weight, gd_to_cg, middle_weight, urban_renewal,
                                       vertex_split, vertex_street_weight)
from doublecurrent.oracle import dimer_partition
from doublecurrent.planar_map import grid_domain


def test_critical_weight_is_self_dual():
    assert abs((1 - X_CRITICAL) / (1 + X_CRITICAL) - X_CRITICAL) < 1e-15


def test_tripled_digraph_on_single_edge(graphs):
    vg = build_vec_g(graphs["edge"], X_CRITICAL)
    assert vg.n_directed == 3
    assert np.allclose(sorted(vg.weight), sorted([X_CRITICAL, X_CRITICAL, 1.0]), atol=1e-12)


def test_middle_weight_values():
    assert abs(middle_weight(X_CRITICAL) - 1) < 1e-15
    assert abs(middle_weight(0.5) - 4 / 3) < 1e-15
    assert middle_weight(1e-9) < 1e-8


def test_decorated_graph_short_edges_weigh_one(graphs):
    gd = build_gd(graphs["triangle"], 0.37)
    short = gd.kind == 0
    assert short.any()
    assert np.all(gd.map.weights[short] == 1.0)


def test_street_weights_at_criticality():
    assert abs(face_street_weight(X_CRITICAL) - 1 / math.sqrt(2)) < 1e-12
    assert abs(vertex_street_weight(X_CRITICAL) - 1 / math.sqrt(2)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6))
def test_street_weights_on_unit_circle(x):
    assert abs(face_street_weight(x) ** 2 + vertex_street_weight(x) ** 2 - 1) < 1e-12


def test_city_graph_counts():
    m = grid_domain(3, 3).map
    cg = build_cg(m, 0.3)
    assert m.n_edges == 12
    assert int(np.sum(cg.kind != 0)) == 48
    assert cg.map.n_vertices == 4 * 12
    cg.check_proper()


def _quad(weights):
    from doublecurrent.checks import corpus
    sq = corpus()["square"]
    return BipartiteMap(sq.with_weights(np.asarray(weights, float)), np.array([True, False, True, False]))


def test_renewal_of_unit_square():
    bm = _quad([1, 1, 1, 1])
    new, C = urban_renewal(bm, int(bm.map.bounded_faces[0]))
    assert C == 2.0
    assert np.allclose(np.sort(new.map.weights)[:4], 0.5)


def test_renewal_of_alternating_square():
    a, b = 0.3, 0.7
    new, C = urban_renewal(_quad([a, b, a, b]), 0)
    assert abs(C - (a * a + b * b)) < 1e-15
    inner = new.map.weights[4:]
    assert np.allclose(sorted(inner), sorted([a / C, b / C, a / C, b / C]))


def test_renewal_constant_ignores_opposite_sign_flips():
    x = [0.2, 0.5, 0.9, 0.4]
    _, C = urban_renewal(_quad(x), 0)
    _, C_flip = urban_renewal(_quad([-x[0], x[1], -x[2], x[3]]), 0)
    assert abs(C - C_flip) < 1e-15


def test_renewal_rejects_non_quadrilateral(graphs):
    cg = build_cg(graphs["triangle"], 0.4)
    hexagonal = [f for f in cg.map.bounded_faces if len(cg.map.face_cycles[f]) != 4]
    with pytest.raises(ValueError):
        urban_renewal(cg, int(hexagonal[0]))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 3.0), min_size=4, max_size=4), st.sampled_from(["square", "edge", "path"]))
def test_renewal_preserves_partition_function(weights, name):
    from doublecurrent.checks import corpus
    m = corpus()[name]
    w = np.resize(np.asarray(weights), m.n_edges)
    cg = build_cg(m.with_weights(w), 0.37)
    Z = dimer_partition(cg)
    for f in cg.map.bounded_faces:
        if len(cg.map.face_cycles[f]) == 4:
            new, C = urban_renewal(cg, int(f))
            assert abs(Z - C * dimer_partition(new)) <= 1e-12 * Z
            new.check_proper()


def test_split_then_collapse_round_trip(graphs):
    cg = build_cg(graphs["edge"], 0.4)
    v = 0
    arc = [int(h >> 1) for h in cg.map.out_halves[v]][:2]
    split = vertex_split(cg, v, arc)
    assert split.map.n_vertices == cg.map.n_vertices + 2
    assert abs(dimer_partition(split) - dimer_partition(cg)) < 1e-12
    back = collapse(split, split.map.n_vertices - 1)
    assert back.map.n_vertices == cg.map.n_vertices
    assert abs(dimer_partition(back) - dimer_partition(cg)) < 1e-12


@pytest.mark.parametrize("name,renewals", [("edge", 1), ("path", 2)])
def test_reduction_transcript(graphs, name, renewals):
    tr = gd_to_cg(graphs[name], X_CRITICAL)
    assert tr.count("renew") == renewals
    cg = build_cg(graphs[name], X_CRITICAL)
    assert np.allclose(np.sort(tr.result.map.weights), np.sort(cg.map.weights), atol=1e-12)


@pytest.mark.parametrize("name", ["edge", "path", "triangle", "square"])
@pytest.mark.parametrize("x", [0.2, X_CRITICAL, 0.9])
def test_reduction_constant(graphs, name, x):
    tr = gd_to_cg(graphs[name], x)
    Zgd = dimer_partition(build_gd(graphs[name], x))
    assert abs(Zgd - tr.constant * dimer_partition(tr.result)) <= 1e-12 * Zgd
