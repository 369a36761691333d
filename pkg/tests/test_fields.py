import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doublecurrent import _kernels
from doublecurrent.currents import ClusterChain, CoupledSampler
from doublecurrent.decorations import X_CRITICAL, build_cg
from doublecurrent.fields import (DualVertexIndex, HeightBuilder, crosscheck_height_vs_nesting, exact_height_law,
                                  exact_nesting_law, nesting_field, nesting_on_faces, reference_form,
                                  spins_from_height)
from doublecurrent.kasteleyn import build_weighting, invert, kasteleyn_matrix
from doublecurrent.oracle import EVEN, ODD, ZERO, total_variation
from doublecurrent.planar_map import augment_wired, grid_domain

SMALL = ["edge", "path", "triangle", "square", "grid2x2"]


def _setup(m, x):
    cg = build_cg(m, x)
    km = kasteleyn_matrix(cg, build_weighting(cg).phase)
    return cg, km, invert(km)


def test_reference_form_on_roads_and_white_vertices():
    m = grid_domain(3, 3).map
    cg, km, kinv = _setup(m, 0.37)
    f0 = reference_form(cg, km, kinv)
    n = m.n_half
    assert np.abs(f0[:n] - 0.5).max() <= 1e-9
    out = np.zeros(cg.map.n_vertices)
    np.add.at(out, cg.map.edges.ravel(), np.repeat(f0, 2))
    assert np.allclose(out[cg.white], 1.0)


@pytest.mark.parametrize("name", ["edge", "triangle", "grid2x2"])
def test_reference_form_equals_enumerated_marginals(graphs, name):
    from doublecurrent.oracle import enum_dimer_covers
    cg, km, kinv = _setup(graphs[name], X_CRITICAL)
    _, marginals, _ = enum_dimer_covers(cg.map.n_vertices, cg.map.edges, cg.map.weights)
    assert np.abs(reference_form(cg, km, kinv) - marginals).max() <= 1e-9


def _heights(m, x, n, rng):
    S = CoupledSampler(m, x)
    hb = HeightBuilder(S.cg, reference_form(S.cg, S.km, S.kinv))
    covers = S.covers(n, rng)
    return S, covers, hb(covers)


def test_height_structure_on_every_sample(rng):
    m = grid_domain(3, 4).map
    S, covers, hf = _heights(m, 0.37, 3000, rng)
    hu, hv = hf.on_faces(), hf.on_vertices()
    assert np.all(hu == np.rint(hu))
    assert np.all(hv - 0.5 == np.rint(hv - 0.5))
    assert np.all(hu[:, m.outer_face] == 0)
    # adjacent face and vertex differ by a half
    for h in range(m.n_half):
        d = np.abs(hu[:, m.face_of[h]] - hv[:, m.origin[h]])
        assert np.all(d == 0.5)


def test_height_is_centred(rng):
    m = grid_domain(3, 3).map
    _, _, hf = _heights(m, X_CRITICAL, 100_000, rng)
    hu = hf.on_faces()[:, list(m.bounded_faces)]
    se = hu.std(axis=0) / math.sqrt(len(hu))
    assert np.all(np.abs(hu.mean(axis=0)) <= 3 * se + 1e-12)


def test_spins_match_heights(rng):
    m = grid_domain(3, 3).map
    _, _, hf = _heights(m, 0.37, 200, rng)
    tau_dual, tau = spins_from_height(hf)
    hu, hv = hf.on_faces(), hf.on_vertices()
    for h in range(m.n_half):
        f, v = m.face_of[h], m.origin[h]
        assert np.all(hu[:, f] - hv[:, v] == 0.5 * tau_dual[:, f] * tau[:, v])


def test_single_cluster_nesting():
    d = grid_domain(4, 4)
    m, vi = d.map, d.vertex_index
    ring = [vi[s] for s in [(1, 1), (2, 1), (2, 2), (1, 2)]]
    odd = np.zeros(m.n_edges, bool)
    for k in range(4):
        a, b = ring[k], ring[(k + 1) % 4]
        odd[next(e for e, (p, q) in enumerate(m.edges) if {int(p), int(q)} == {a, b})] = True
    lab = _kernels.components(m.n_vertices, m.edges, odd)
    labels = np.ones(int(lab.max()) + 1)
    h = nesting_field(m, odd, lab, labels)
    inside = d.face_at((1.5, 1.5))
    assert h[inside] == 1
    assert np.count_nonzero(h) == 1
    hn = nesting_on_faces(m, odd, lab, labels)
    assert np.array_equal(hn, h[list(m.bounded_faces)])


def test_wired_nesting_edge_cases():
    d = grid_domain(3, 3)
    w = augment_wired(d)
    m = w.map
    none = np.zeros(m.n_edges, bool)
    lab = _kernels.components(m.n_vertices, m.edges, none)
    labels = np.ones(int(lab.max()) + 1)
    labels[lab[w.ghost]] = -1
    h = nesting_field(m, none, lab, labels, ghost=w.ghost)
    assert np.all(h == -0.5)
    # ghost cluster odd around every bounded face of G
    odd = np.zeros(m.n_edges, bool)
    odd[w.ghost_edges[:2]] = True
    a, b = m.edges[w.ghost_edges[0]], m.edges[w.ghost_edges[1]]
    u, v = [int(t) for t in a if t != w.ghost][0], [int(t) for t in b if t != w.ghost][0]
    e = next(k for k, (p, q) in enumerate(m.edges) if {int(p), int(q)} == {u, v})
    odd[e] = True
    lab = _kernels.components(m.n_vertices, m.edges, odd)
    labels = np.ones(int(lab.max()) + 1)
    h = nesting_field(m, odd, lab, labels, ghost=w.ghost)
    # the ghost triangle encloses one bounded face of G+ only, where the ghost term is -1/2
    assert set(np.unique(h[list(m.bounded_faces)])) <= {0.5, -0.5}
    assert np.count_nonzero(h == -0.5) == 1


def test_nesting_field_without_clusters_vanishes():
    m = grid_domain(3, 3).map
    none = np.zeros(m.n_edges, bool)
    lab = _kernels.components(m.n_vertices, m.edges, none)
    assert not np.any(nesting_field(m, none, lab, np.ones(int(lab.max()) + 1)))


@pytest.mark.parametrize("name", SMALL)
@pytest.mark.parametrize("x", [0.3, X_CRITICAL])
def test_height_law_equals_nesting_law_exactly(graphs, name, x):
    m = graphs[name]
    cg, km, kinv = _setup(m, x)
    assert total_variation(exact_height_law(cg, km, kinv), exact_nesting_law(m, math.atanh(x))) <= 1e-12


@pytest.mark.parametrize("name", SMALL)
@pytest.mark.parametrize("x", [0.3, X_CRITICAL])
def test_vertex_heights_equal_wired_dual_nesting_exactly(graphs, name, x):
    m = graphs[name]
    cg, km, kinv = _setup(m, x)
    idx = DualVertexIndex(m)
    faces = [int(np.flatnonzero(idx.vertex_of_face == v)[0]) for v in range(m.n_vertices)]
    dual_beta = math.atanh((1 - x) / (1 + x))
    wired = exact_nesting_law(idx.dual.map, dual_beta, faces=faces, ghost=idx.ghost)
    assert total_variation(exact_height_law(cg, km, kinv, "vertices"), wired) <= 1e-12


def test_single_edge_laws_are_symmetric(graphs):
    m = graphs["edge"]
    cg, km, kinv = _setup(m, X_CRITICAL)
    law = exact_height_law(cg, km, kinv, "vertices")
    for k, p in law.items():
        assert abs(law.get(tuple(-t for t in k), 0.0) - p) < 1e-12


def test_sampled_heights_against_sampled_nesting(rng):
    cc = crosscheck_height_vs_nesting(grid_domain(2, 2).map, X_CRITICAL, 100_000, rng)
    assert cc.tv_joint <= 0.02


def test_sampled_vertex_heights_against_sampled_wired_nesting(rng):
    m = grid_domain(3, 3).map
    S = CoupledSampler(m, X_CRITICAL)
    hb = HeightBuilder(S.cg, reference_form(S.cg, S.km, S.kinv))
    n = 100_000
    H = hb(S.covers(n, rng)).on_vertices()
    _, _, dual = S.traces(n, rng)
    idx = DualVertexIndex(m)
    dm = idx.dual.map
    N = np.empty_like(H)
    for s in range(n):
        op = dual[s][idx.dual.primal_edge] != ZERO
        lab = _kernels.components(dm.n_vertices, dm.edges, op)
        eps = rng.choice((-1.0, 1.0), size=int(lab.max()) + 1)
        N[s] = idx.wired_nesting(dual[s][idx.dual.primal_edge] == ODD, lab, eps)
    from doublecurrent.fields import empirical_law
    centre = [int(np.argmin(np.hypot(*(m.positions - m.positions.mean(axis=0)).T)))]
    assert total_variation(empirical_law(H[:, centre]), empirical_law(N[:, centre])) <= 0.02


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ray_nesting_matches_tree_nesting(seed):
    m = grid_domain(7, 6).map
    chain = ClusterChain(m, X_CRITICAL, seed=seed, sweeps=2)
    odd, open_, _ = chain.step()
    lab = _kernels.components(m.n_vertices, m.edges, open_)
    labels = np.random.default_rng(seed).choice((-1.0, 1.0), size=int(lab.max()) + 1)
    ref = nesting_field(m, odd, lab, labels)[list(m.bounded_faces)]
    assert np.array_equal(nesting_on_faces(m, odd, lab, labels), ref)
