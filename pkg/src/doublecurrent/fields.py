"""Height functions on the city graph and nesting fields of double-current clusters.

Heights are stored doubled (2H).  Values on faces of G are integers and values on
vertices of G are half-integers; quadrangle faces carry real values.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .currents import DualTree, TraceError
from .decorations import CityGraph
from .oracle import ODD, ZERO, DEFAULT_BUDGET, closed_form_trace_law, enum_dimer_covers
from .planar_map import PlanarMap, dual_graph


@dataclass(frozen=True, eq=False)
class HeightField:
    cg: CityGraph
    twice: np.ndarray            # 2H per city-graph face; batched on the leading axis
    uv_twice: np.ndarray         # 2H on faces of G then vertices of G, exact integers

    def on_faces(self) -> np.ndarray:
        """H on the faces of G, in face order of G."""
        return self.uv_twice[..., :self.cg.base.n_faces] / 2

    def on_vertices(self) -> np.ndarray:
        return self.uv_twice[..., self.cg.base.n_faces:] / 2


def reference_form(cg: CityGraph, km, kinv) -> np.ndarray:
    """Reference flow per city-graph edge, oriented white to black: its dimer probability."""
    from .kasteleyn import edge_probabilities
    return edge_probabilities(km, kinv)


class HeightBuilder:
    """Heights from dimer covers by one sweep of a spanning tree of the city graph's dual."""

    def __init__(self, cg: CityGraph, f0: np.ndarray, tol: float = 1e-7):
        m = cg.map
        self.cg, self.f0, self.tol = cg, np.asarray(f0, float), tol
        self.tree = DualTree.of(m)
        # sign of the flux across the half-edge with the parent face on its left
        g = np.empty(m.n_faces, np.int64)
        for f in self.tree.order[1:]:
            e = self.tree.parent_edge[f]
            g[f] = 2 * e if m.face_of[2 * e] == self.tree.parent[f] else 2 * e + 1
        self.step_half = g
        self.white_target = cg.white[m.target]
        uf, vf = cg.u_faces, cg.v_faces
        self.uv_index = np.array([uf[f] for f in range(cg.base.n_faces)] +
                                 [vf[v] for v in range(cg.base.n_vertices)], dtype=np.int64)

    def _increments(self, covers: np.ndarray, halves: np.ndarray) -> np.ndarray:
        e = halves >> 1
        sign = np.where(self.white_target[halves], 1.0, -1.0)
        return sign * (covers[..., e].astype(float) - self.f0[e])

    def __call__(self, covers: np.ndarray) -> HeightField:
        covers = np.atleast_2d(np.asarray(covers, bool))
        m = self.cg.map
        H = np.zeros((covers.shape[0], m.n_faces))
        order = self.tree.order
        steps = self._increments(covers, self.step_half[order[1:]])
        for k, f in enumerate(order[1:]):
            H[:, f] = H[:, self.tree.parent[f]] + steps[:, k]
        # well-definedness across every edge
        h0 = np.arange(0, m.n_half, 2)
        inc = self._increments(covers, h0)
        err = H[:, m.face_of[h0 + 1]] - H[:, m.face_of[h0]] - inc
        if np.abs(err).max(initial=0.0) > self.tol:
            raise TraceError("height flux is not closed")
        twice = 2 * H
        uv = twice[:, self.uv_index]
        r = np.rint(uv)
        if np.abs(uv - r).max(initial=0.0) > self.tol:
            raise TraceError("heights on faces and vertices of G are not half-integers")
        r = r.astype(np.int64)
        nf = self.cg.base.n_faces
        if np.any(r[:, :nf] % 2 != 0) or np.any(r[:, nf:] % 2 != 1):
            raise TraceError("face heights must be integers and vertex heights half-integers")
        return HeightField(self.cg, twice, r)


def height_from_dimer(cg: CityGraph, covers, f0) -> HeightField:
    return HeightBuilder(cg, f0)(covers)


def spins_from_height(hf: HeightField) -> tuple:
    """(tau-dagger on faces, tau on vertices): (-1)^H(u) and i(-1)^H(v)."""
    hu = hf.on_faces()
    hv = hf.on_vertices()
    tau_dual = np.where(np.rint(hu).astype(np.int64) % 2 == 0, 1, -1).astype(np.int8)
    tau = np.rint(np.real(1j * np.exp(1j * np.pi * hv))).astype(np.int8)
    return tau_dual, tau


# ---------------------------------------------------------------------------
# nesting fields

def odd_around(m: PlanarMap, odd: np.ndarray, cluster_of: np.ndarray, tree: DualTree | None = None) -> dict:
    """cluster -> bool mask of faces around which the cluster is odd."""
    tree = tree or DualTree.of(m)
    edge_lab = cluster_of[m.edges[:, 0]]
    out = {}
    for c in np.unique(edge_lab[odd]):
        out[int(c)] = tree.spins(odd & (edge_lab == c)) < 0
    return out


def nesting_field(m: PlanarMap, odd: np.ndarray, cluster_of: np.ndarray, labels: np.ndarray,
                  ghost: int | None = None, tree: DualTree | None = None) -> np.ndarray:
    """Per face: sum of labels of clusters odd around it; with a ghost vertex its cluster
    contributes (1/2 - odd) times its label instead."""
    h = np.zeros(m.n_faces)
    g = None if ghost is None else int(cluster_of[ghost])
    for c, mask in odd_around(m, odd, cluster_of, tree).items():
        if c != g:
            h += labels[c] * mask
    if g is not None:
        mask = odd_around(m, odd, cluster_of, tree).get(g, np.zeros(m.n_faces, bool))
        h += labels[g] * (0.5 - mask)
    return h


class DualVertexIndex:
    """Faces of the full dual correspond to vertices of G."""

    def __init__(self, m: PlanarMap):
        self.dual = dual_graph(m, "full")
        dm = self.dual.map
        vof = np.full(dm.n_faces, -1)
        vof[dm.face_of] = m.origin
        self.vertex_of_face = vof
        self.ghost = int(m.outer_face)

    def wired_nesting(self, dual_odd, cluster_of_dual, labels) -> np.ndarray:
        """Wired nesting field of a dual trace, per vertex of G."""
        dm = self.dual.map
        h = nesting_field(dm, dual_odd, cluster_of_dual, labels, ghost=self.ghost)
        out = np.empty(len(h))
        out[self.vertex_of_face] = h
        return out


# ---------------------------------------------------------------------------
# exact laws on tiny graphs

def exact_nesting_law(m: PlanarMap, beta, faces=None, ghost: int | None = None) -> dict:
    """Joint law of the nesting field on the listed faces (default: bounded faces)."""
    from . import _kernels
    faces = list(m.bounded_faces) if faces is None else list(faces)
    tree = DualTree.of(m)
    law = defaultdict(float)
    for cls, p in closed_form_trace_law(m, beta).items():
        cls = np.array(cls)
        odd, op = cls == ODD, cls != ZERO
        lab = _kernels.components(m.n_vertices, m.edges, op)
        oa = odd_around(m, odd, lab, tree)
        gl = None if ghost is None else int(lab[ghost])
        keys = sorted(set(oa) | ({gl} if gl is not None else set()))
        for signs in itertools.product((-1, 1), repeat=len(keys)):
            h = np.zeros(m.n_faces)
            for c, s in zip(keys, signs):
                mask = oa.get(c, np.zeros(m.n_faces, bool))
                h += s * ((0.5 - mask) if c == gl else mask)
            law[tuple(float(v) for v in h[faces])] += p / 2 ** len(keys)
    return dict(law)


def exact_height_law(cg: CityGraph, km, kinv, which: str = "faces", budget=DEFAULT_BUDGET) -> dict:
    """Joint law of H on bounded faces of G (or on all vertices of G) by enumerating covers."""
    m = cg.map
    Z, _, covers = enum_dimer_covers(m.n_vertices, m.edges, m.weights, budget)
    f0 = reference_form(cg, km, kinv)
    hb = HeightBuilder(cg, f0)
    masks = np.zeros((len(covers), m.n_edges), bool)
    for k, (c, _) in enumerate(covers):
        masks[k, list(c)] = True
    hf = hb(masks)
    vals = hf.on_faces()[:, list(cg.base.bounded_faces)] if which == "faces" else hf.on_vertices()
    law = defaultdict(float)
    for v, (_, w) in zip(vals, covers):
        law[tuple(float(t) for t in v)] += w / Z
    return dict(law)


def empirical_law(values: np.ndarray) -> dict:
    values = np.atleast_2d(values)
    law = defaultdict(float)
    for row in values:
        law[tuple(float(t) for t in row)] += 1.0 / len(values)
    return dict(law)


@dataclass(frozen=True)
class CrossCheck:
    faces: tuple
    tv_joint: float
    tv_per_face: tuple
    n_samples: int


def crosscheck_height_vs_nesting(m: PlanarMap, x, n_samples: int, rng: np.random.Generator) -> CrossCheck:
    """Law of H on bounded faces (from dimers) against the free nesting field built from the
    coupled traces of independent dimer samples with i.i.d. labels."""
    from . import _kernels
    from .currents import CoupledSampler
    from .oracle import total_variation
    S = CoupledSampler(m, x)
    hb = HeightBuilder(S.cg, reference_form(S.cg, S.km, S.kinv))
    faces = list(m.bounded_faces)
    covers = S.covers(n_samples, rng)
    H = hb(covers).on_faces()[:, faces]
    _, p, _ = S.traces(n_samples, rng)
    tree = DualTree.of(m)
    N = np.empty((n_samples, len(faces)))
    for s in range(n_samples):
        op = p[s] != ZERO
        lab = _kernels.components(m.n_vertices, m.edges, op)
        eps = rng.choice((-1.0, 1.0), size=int(lab.max()) + 1)
        N[s] = nesting_field(m, p[s] == ODD, lab, eps, tree=tree)[faces]
    per = tuple(total_variation(empirical_law(H[:, k:k + 1]), empirical_law(N[:, k:k + 1]))
                for k in range(len(faces)))
    return CrossCheck(tuple(faces), total_variation(empirical_law(H), empirical_law(N)), per, n_samples)


def nesting_on_faces(m: PlanarMap, odd: np.ndarray, cluster_of: np.ndarray, labels: np.ndarray,
                     faces=None, ghost: int | None = None) -> np.ndarray:
    """Nesting field on many faces at once by ray parity along dual-tree paths."""
    from . import _kernels
    from .loops_stats import dual_rays
    faces = list(m.bounded_faces) if faces is None else list(faces)
    ptr, pe = dual_rays(m, faces)
    M = _kernels.odd_membership(np.asarray(odd, bool), np.asarray(cluster_of, np.int64),
                                int(cluster_of.max()) + 1, ptr, pe, m.edges.astype(np.int64))
    lab = np.asarray(labels, float)
    h = M @ lab
    if ghost is not None:
        g = int(cluster_of[ghost])
        h += lab[g] * (0.5 - 2.0 * M[:, g])
    return h
