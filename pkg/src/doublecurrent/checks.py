"""Exact-identity suite over the frozen test corpus."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .decorations import X_CRITICAL, build_cg, build_gd, build_vec_g, gd_to_cg, urban_renewal
from .kasteleyn import (alternating_residuals, build_weighting, edge_probabilities, fermion_identity_residual,
                        invert, kadanoff_ceva, kasteleyn_matrix, log_abs_det, sign_path, signed_monomer_partition)
from .oracle import (closed_form_trace_law, dimer_partition, dual_ising_edge_correlations, flow_trace_law,
                     ising_edge_correlations, kadanoff_ceva_sum, total_variation, truncated_current_law)
from .planar_map import PlanarMap, corner_data, grid_domain

SMALL = ("edge", "path", "triangle")


def corpus() -> dict:
    """The frozen test graphs, by name."""
    sq = PlanarMap.from_straight_line([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1], [1, 2], [2, 3], [3, 0]])
    tri = PlanarMap.from_straight_line([[0, 0], [1, 0], [0.5, 0.8]], [[0, 1], [1, 2], [2, 0]])
    return {"edge": grid_domain(2, 1).map, "path": grid_domain(3, 1).map, "triangle": tri,
            "square": sq, "grid2x2": grid_domain(2, 2).map, "grid2x3": grid_domain(2, 3).map}


@dataclass(frozen=True)
class Check:
    name: str
    graph: str
    value: float                 # worst residual
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _setup(m, x, corrupt: bool):
    cg = build_cg(m, x)
    phase = build_weighting(cg, check=False).phase.copy()
    if corrupt:
        phase[2 * m.n_half] *= -1            # one face street
    km = kasteleyn_matrix(cg, phase)
    return cg, phase, km


def road_checks(name: str, m: PlanarMap, x: float) -> list:
    cg, _, km = _setup(m, x, False)
    p = edge_probabilities(km, invert(km))
    n = m.n_half
    h = np.arange(n)
    return [Check("road_half", name, float(np.abs(p[:n] - 0.5).max()), 1e-9),
            Check("parallel_streets", name, max(float(np.abs(p[n + h] - p[n + (h ^ 1)]).max()),
                                                float(np.abs(p[2 * n + h] - p[2 * n + (h ^ 1)]).max())), 1e-9)]


def street_checks(name: str, m: PlanarMap, x: float, corrupt: bool = False) -> list:
    cg, phase, km = _setup(m, x, corrupt)
    out = [Check("kasteleyn_condition", name, float(alternating_residuals(cg, phase).max(initial=0.0)), 1e-12)]
    Z = dimer_partition(cg)
    logd, _ = log_abs_det(km.K)
    out.append(Check("det_equals_enumeration", name, abs(math.exp(logd) - Z) / Z, 1e-9))
    if corrupt:
        return out
    p = edge_probabilities(km, invert(km))
    n = m.n_half
    h = np.arange(n)
    mu = ising_edge_correlations(m, x)[h >> 1]
    mud = dual_ising_edge_correlations(m, x)[h >> 1]
    out.append(Check("face_street_identity", name, float(np.abs(p[2 * n + h] - x / (1 + x * x) * mu).max()), 1e-9))
    out.append(Check("vertex_street_identity", name,
                     float(np.abs(p[n + h] - (1 - x * x) / (2 * (1 + x * x)) * mud).max()), 1e-9))
    out.append(Check("kramers_wannier_linear", name,
                     float(np.abs(2 * x * mu + (1 - x * x) * mud - (1 + x * x)).max()), 1e-12))
    return out


def fermion_checks(name: str, m: PlanarMap, x: float) -> list:
    cg = build_cg(m, x)
    km = kasteleyn_matrix(cg, build_weighting(cg).phase)
    kinv = invert(km)
    cd = corner_data(m)
    pairs = [(i, j) for i in range(m.n_half) for j in range(m.n_half)
             if cd.corners[i].vertex != cd.corners[j].vertex]
    kf = max(fermion_identity_residual(cg, kinv, i, j) for i, j in pairs)
    Z = dimer_partition(cg)
    kc, mono = 0.0, 0.0
    inner = [(i, j) for i, j in pairs
             if cd.corners[i].face != m.outer_face and cd.corners[j].face != m.outer_face]
    for i, j in inner[:: max(1, len(inner) // 12)]:
        path = sign_path(cg, cd.corners[i], cd.corners[j])
        ref = kadanoff_ceva_sum(m, x, cd.corners[i].vertex, cd.corners[j].vertex, path.crossed)
        kc = max(kc, abs(kadanoff_ceva(cg, km, kinv, i, j, path) - ref))
        mono = max(mono, abs(2 * signed_monomer_partition(cg, i, j, path) / Z - ref))
    return [Check("inverse_equals_corner_observable", name, float(kf), 1e-9),
            Check("kadanoff_ceva_from_inverse", name, float(kc), 1e-9),
            Check("kadanoff_ceva_from_monomers", name, float(mono), 1e-9)]


def law_checks(name: str, m: PlanarMap, x: float) -> list:
    beta = math.atanh(x)
    closed = closed_form_trace_law(m, beta)
    flow = flow_trace_law(build_vec_g(m, x))
    trunc = truncated_current_law(m, beta)
    return [Check("flow_law_equals_trace_law", name, total_variation(flow, closed), 1e-12),
            Check("poisson_law_equals_trace_law", name, total_variation(trunc["law"], closed), 1e-12)]


def renewal_checks(name: str, m: PlanarMap, x: float) -> list:
    tr = gd_to_cg(m, x)
    Zgd = dimer_partition(build_gd(m, x))
    out = [Check("gd_to_cg_constant", name, abs(Zgd - tr.constant * dimer_partition(tr.result)) / Zgd, 1e-12)]
    cg = build_cg(m, x)
    Z = dimer_partition(cg)
    worst = 0.0
    cm = cg.map
    for f in cm.bounded_faces:
        if len(cm.face_cycles[f]) == 4:
            new, C = urban_renewal(cg, int(f))
            worst = max(worst, abs(Z - C * dimer_partition(new)) / Z)
    out.append(Check("urban_renewal_constant", name, worst, 1e-12))
    return out


def run_identity_suite(x: float = X_CRITICAL, corrupt: bool = False) -> list:
    """All exact checks; `corrupt` flips the phase of one street to exercise the failure path."""
    out = []
    graphs = corpus()
    for name, m in graphs.items():
        out += street_checks(name, m, x, corrupt)
    if corrupt:
        return out
    out += road_checks("grid3x3", grid_domain(3, 3).map, x)
    out += fermion_checks("grid2x3", graphs["grid2x3"], x)
    out += fermion_checks("triangle", graphs["triangle"], x)
    for name in SMALL:
        out += law_checks(name, graphs[name], x)
    for name in ("edge", "path", "triangle", "square"):
        out += renewal_checks(name, graphs[name], x)
    return out
