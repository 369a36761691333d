import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doublecurrent.currents import ClusterChain, CurrentTrace
from doublecurrent.decorations import X_CRITICAL
from doublecurrent.loops_stats import (CLUSTER_COUNT_LIMIT, EXIT_MEAN, LAMBDA, Annulus, CrossingCounter,
                                       LoopFamily, UnitExitTime, brownian_exit_mean, cluster_count_experiment,
                                       conformal_radius, crossing_counts, green_disk, green_half_plane,
                                       green_rectangle, interval_exit_time, lattice_height_covariance,
                                       loop_distance, loop_family, loop_metric, pairing_target, unit_disk,
                                       unit_square)
from doublecurrent.oracle import EVEN, ODD, ZERO
from doublecurrent.planar_map import grid_domain

EPS_GRID = np.linspace(0.0, 2.0, 201)


def _square(c=(0.0, 0.0), s=1.0):
    x, y = c
    return np.array([[x, y], [x + s, y], [x + s, y + s], [x, y + s]])


def _circle(r=1.0, n=720, c=0j):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([c.real + r * np.cos(t), c.imag + r * np.sin(t)])


def test_scaling_constants():
    assert abs(2 * math.sqrt(2) * LAMBDA - math.sqrt(math.pi)) < 1e-12
    assert abs(EXIT_MEAN - 13.9577) < 1e-4
    assert abs(CLUSTER_COUNT_LIMIT * EXIT_MEAN - 1) < 1e-15


# ---------------------------------------------------------------------------
# loop metric

def test_translated_square_distance():
    F = LoopFamily.of_polylines([_square()])
    for t in (0.05, 0.1, 0.3):
        G = LoopFamily.of_polylines([_square((t, 0.0))])
        assert abs(loop_metric(F, G, EPS_GRID) - t) <= 0.01 + 1e-12
        assert abs(loop_distance(_square(), _square((t, 0.0))) - t) < 1e-9


def test_distance_ignores_start_and_direction():
    P = _square()
    Q = np.roll(P, 2, axis=0)[::-1]
    assert loop_distance(P, Q) < 1e-12


def test_unmatched_small_loop_costs_its_size():
    F = LoopFamily.of_polylines([_square(s=1.0)])
    G = LoopFamily.of_polylines([_square(s=1.0), _square((5, 5), 0.1)])
    d = loop_metric(F, G, EPS_GRID)
    assert 0 < d <= 0.2


def _families(draw_loops):
    return LoopFamily.of_polylines(draw_loops)


loops = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 2)), min_size=0, max_size=4)


@settings(max_examples=40, deadline=None)
@given(loops, loops)
def test_metric_axioms(a, b):
    F = LoopFamily.of_polylines([_square((x, y), s) for x, y, s in a])
    G = LoopFamily.of_polylines([_square((x, y), s) for x, y, s in b])
    grid = np.linspace(0, 10, 1001)
    assert loop_metric(F, F, grid) == 0
    assert loop_metric(F, G, grid) == loop_metric(G, F, grid)


# ---------------------------------------------------------------------------
# loop families from traces

def test_family_nesting_depths():
    F = LoopFamily.of_polylines([_square((0, 0), 4), _square((1, 1), 2), _square((1.5, 1.5), 0.5), _square((8, 8), 1)])
    assert F.parent.tolist() == [-1, 0, 1, -1]
    assert F.depth().tolist() == [0, 1, 2, 0]


def test_family_of_a_sample_has_one_outer_loop_per_cluster():
    m = grid_domain(12, 12).map
    chain = ClusterChain(m, X_CRITICAL, seed=5)
    odd, open_, _ = chain.step()
    primal = np.where(odd, ODD, np.where(open_, EVEN, ZERO)).astype(np.int8)
    fam = loop_family(CurrentTrace(m, primal, np.zeros_like(primal)))
    outer = [mt.cluster for mt in fam.meta if mt.outer]
    assert len(outer) == len(set(outer))
    touched = np.unique(m.edges[open_].ravel())
    from doublecurrent import _kernels
    lab = _kernels.components(m.n_vertices, m.edges, open_)
    assert len(outer) == len(np.unique(lab[touched]))


# ---------------------------------------------------------------------------
# crossing events

def test_empty_trace_has_no_crossings():
    d = grid_domain(21, 21)
    m = d.map
    z = np.zeros(m.n_edges, np.int8)
    cc = crossing_counts(CurrentTrace(m, z, z), Annulus(d.center, 2, 6))
    assert cc.k_clusters == 0
    assert not cc.four_arm_square and not cc.four_arm_hole


def _path_edges(d, pts):
    m, vi = d.map, d.vertex_index
    out = []
    for p, q in zip(pts[:-1], pts[1:]):
        a, b = vi[p], vi[q]
        out.append(next(e for e, (s, t) in enumerate(m.edges) if {int(s), int(t)} == {a, b}))
    return out


def test_single_arm_crosses_once():
    d = grid_domain(21, 21)
    m = d.map
    p = np.zeros(m.n_edges, np.int8)
    p[_path_edges(d, [(x, 10) for x in range(10, 20)])] = EVEN
    cc = crossing_counts(CurrentTrace(m, p, np.zeros_like(p)), Annulus((10.0, 10.0), 2, 6))
    assert cc.k_clusters == 1
    assert not cc.four_arm_square


def test_two_separate_arms_cross_twice():
    d = grid_domain(21, 21)
    m = d.map
    p = np.zeros(m.n_edges, np.int8)
    p[_path_edges(d, [(x, 10) for x in range(11, 20)])] = EVEN
    p[_path_edges(d, [(x, 10) for x in range(1, 10)])] = EVEN
    cc = crossing_counts(CurrentTrace(m, p, np.zeros_like(p)), Annulus((10.0, 10.0), 2, 6))
    assert cc.k_clusters == 2
    assert cc.four_arm_square


def test_annulus_must_fit():
    m = grid_domain(9, 9).map
    with pytest.raises(ValueError):
        CrossingCounter(m, Annulus((4.0, 4.0), 2, 8))
    with pytest.raises(ValueError):
        CrossingCounter(m, Annulus((4.0, 4.0), 3, 3))


def test_four_arm_probability_decreases_with_outer_radius():
    m = grid_domain(64, 64).map
    radii = (4, 8, 16)
    counters = [CrossingCounter(m, Annulus((31.0, 31.0), 2, R)) for R in radii]
    chain = ClusterChain(m, X_CRITICAL, seed=2024)
    chain.burn_in(200)
    hits = np.zeros((len(radii), 2))
    n = 10_000
    for _ in range(n):
        odd, open_, _ = chain.step()
        for j, c in enumerate(counters):
            cc = c(odd, open_)
            hits[j] += (cc.four_arm_square, cc.four_arm_hole)
    p = hits / n
    assert np.all(np.diff(p[:, 0]) < 0)
    assert np.all(np.diff(p[:, 1]) < 0)


# ---------------------------------------------------------------------------
# Green's functions and pairing targets

def test_half_plane_value():
    assert abs(green_half_plane(1j, 2j) - math.log(3) / (2 * math.pi)) < 1e-15
    assert abs(green_half_plane(1j, 2j) - 0.1748496) < 1e-7


def _double_series(a, b, M=800):
    k = np.arange(1, M + 1)
    sx = np.sin(np.pi * k * a[0]) * np.sin(np.pi * k * b[0])
    sy = np.sin(np.pi * k * a[1]) * np.sin(np.pi * k * b[1])
    return 4 * np.sum(np.outer(sx, sy) / (np.pi ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)))


@pytest.mark.parametrize("a,b", [((0.3, 0.5), (0.7, 0.5)), ((0.2, 0.25), (0.6, 0.8)), ((0.5, 0.3), (0.5, 0.7))])
def test_square_green_against_double_series(a, b):
    assert abs(green_rectangle(a, b) - _double_series(a, b)) < 1e-6


def test_green_symmetry_and_convergence():
    a, b = (0.2, 0.3), (0.6, 0.9)
    rect = (1.0, 1.5)
    assert abs(green_rectangle(a, b, rect) - green_rectangle(b, a, rect)) <= 1e-10
    assert abs(green_rectangle(a, b, rect, tol=1e-8) - green_rectangle(a, b, rect, tol=1e-13)) <= 1e-8


def test_green_decays_toward_boundary():
    a = (0.5, 0.5)
    vals = [green_rectangle(a, (t, 0.5)) for t in (0.6, 0.7, 0.8, 0.9, 0.99, 1.0)]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] == 0


def test_green_rejects_coincident_points():
    with pytest.raises(ValueError):
        green_rectangle((0.5, 0.5), (0.5, 0.5))


def test_disk_green_is_conformally_consistent():
    # the Cayley map takes the disk to the half-plane and preserves Green's functions
    z, w = 0.2 + 0.1j, -0.4 + 0.3j
    phi = lambda t: 1j * (1 + t) / (1 - t)
    assert abs(green_disk(z, w) - green_half_plane(phi(z), phi(w))) < 1e-12


def test_pairing_targets():
    G = lambda a, b: green_rectangle(a, b)
    pts = [(0.3, 0.5), (0.7, 0.5), (0.5, 0.3), (0.5, 0.7)]
    assert pairing_target(pts[:1], G) == 0.0
    assert abs(pairing_target(pts[:2], G) - G(pts[0], pts[1]) / math.pi) < 1e-15
    three = (G(pts[0], pts[1]) * G(pts[2], pts[3]) + G(pts[0], pts[2]) * G(pts[1], pts[3])
             + G(pts[0], pts[3]) * G(pts[1], pts[2])) / math.pi ** 2
    assert abs(pairing_target(pts, G) - three) < 1e-15


def test_lattice_covariance_approaches_the_continuum():
    # exact lattice covariance at face centres approaches (1/pi) G as the mesh shrinks
    a, b = (0.3125, 0.5), (0.6875, 0.5)
    target = green_rectangle(a, b) / math.pi
    errs = [abs(lattice_height_covariance(unit_square(N), a, b) - target) for N in (16, 32)]
    assert errs[1] < errs[0]
    assert errs[1] / target < 0.05


# ---------------------------------------------------------------------------
# conformal radius, exit times, cluster counts

@pytest.mark.parametrize("r", [1.0, 0.3])
def test_conformal_radius_of_circles(r, rng):
    est = conformal_radius(_circle(r), (0.0, 0.0), rng, n_walks=200)
    assert abs(est.value - r) < 1e-3 * r


def test_conformal_radius_of_rotated_square(rng):
    sq = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    rot = sq @ np.array([[0, -1], [1, 0]]).T
    a = conformal_radius(sq, (0.0, 0.0), rng, n_walks=2000)
    b = conformal_radius(rot, (0.0, 0.0), rng, n_walks=2000)
    assert abs(a.log_mean - b.log_mean) <= 2 * math.hypot(a.log_se, b.log_se)


def test_unit_exit_time_mean():
    assert abs(UnitExitTime().mean() - 1.0) < 1e-9


@pytest.mark.parametrize("a,b", [(math.pi, math.pi), (math.pi, (math.sqrt(2) - 1) * math.pi)])
def test_interval_exit_mean(a, b, rng):
    t = interval_exit_time(a, b, 200_000, rng)
    assert abs(t.mean() - a * b) <= 4 * t.std() / math.sqrt(len(t))


def test_exit_mean_components(rng):
    rep = brownian_exit_mean(200_000, rng)
    assert abs(rep.second - math.pi ** 2) / math.pi ** 2 < 0.01
    assert abs(rep.first - (math.sqrt(2) - 1) * math.pi ** 2) / ((math.sqrt(2) - 1) * math.pi ** 2) < 0.01


def test_cluster_counts_trivial_cases():
    tab = cluster_count_experiment(unit_disk(24), [1.5, 0.3, 0.1, 0.05], 6, seed=1)
    assert np.all(tab.counts[:, 0] == 0)
    assert np.all(np.diff(tab.counts, axis=1) >= 0)
    assert np.all(np.diff(tab.mean_count) >= 0)
