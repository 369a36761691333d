"""From dimer covers to alternating flows and coupled primal/dual double-current traces.

Traces store one class per edge: ZERO, ODD or EVEN (even and positive).  The primal
trace lives on the edges of G, the dual trace on the edges of the full dual, which
share indices with G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .decorations import (FACE_STREET, LONG, VERTEX_STREET, CityGraph, DecoratedGraph,
                          TripledDigraph, build_cg, dual_weight)
from .oracle import EVEN, ODD, ZERO
from .planar_map import Domain, DualMap, PlanarMap, augment_wired, corner_data, dual_graph


class TraceError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# flows

@dataclass(frozen=True, eq=False)
class FlowConfig:
    digraph: TripledDigraph
    present: np.ndarray          # bool per directed edge

    def alternates(self) -> bool:
        vg = self.digraph
        for v, rot in enumerate(vg.rotation):
            seq = [vg.tail[d] == v for d in rot if self.present[d]]
            if len(seq) % 2 or any(seq[k] == seq[(k + 1) % len(seq)] for k in range(len(seq))):
                return False
        return True


def dimer_to_flow(gd: DecoratedGraph, cover: np.ndarray, check: bool = True) -> FlowConfig:
    """Long edges of the cover become directed edges of the tripled digraph."""
    cover = np.asarray(cover, bool)
    present = np.zeros(gd.digraph.n_directed, bool)
    longs = cover & (gd.kind == LONG)
    present[gd.directed_edge[longs]] = True
    flow = FlowConfig(gd.digraph, present)
    if check and not flow.alternates():
        raise TraceError("flow from a dimer cover is not alternating")
    return flow


def flow_to_trace(flow: FlowConfig) -> tuple:
    """(odd mask, even-positive mask) over primal edges: one or three copies are odd, two are even."""
    cnt = flow.present.reshape(-1, 3).sum(axis=1)
    return cnt % 2 == 1, cnt == 2


# ---------------------------------------------------------------------------
# coupled traces

def even_probability(x):
    """Chance that an undetermined edge is open: 2x^2 / (1 + x^2)."""
    x = np.asarray(x)
    return 2 * x * x / (1 + x * x)


def reverse_map_constant(x):
    """Local constant of the reverse decoration map, 2(1 - x^2) / (3 + x^4)."""
    x = np.asarray(x)
    return 2 * (1 - x * x) / (3 + x ** 4)


@dataclass(eq=False)
class CurrentTrace:
    map: PlanarMap
    primal: np.ndarray           # class per edge of G
    dual: np.ndarray             # class per edge of the full dual (same indices)
    dual_map: DualMap | None = None
    ghost: int | None = None     # ghost vertex when the map is an augmented wired graph
    labels: np.ndarray | None = None      # epsilon per primal cluster
    tau: np.ndarray | None = None         # per vertex
    tau_dual: np.ndarray | None = None    # per face

    @property
    def odd(self) -> np.ndarray:
        return self.primal == ODD

    @property
    def open(self) -> np.ndarray:
        return self.primal != ZERO

    @cached_property
    def cluster_of(self) -> np.ndarray:
        """Cluster id per vertex; isolated vertices are clusters of their own."""
        return _kernels.components(self.map.n_vertices, self.map.edges, self.open)

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_of.max()) + 1 if self.map.n_vertices else 0

    def check(self):
        check_trace(self.map, self.primal, self.dual)


def check_trace(m: PlanarMap, primal, dual=None):
    """Even degree of the odd part and disjointness of primal and dual."""
    primal = np.atleast_2d(primal)
    odd = primal == ODD
    deg = np.zeros((odd.shape[0], m.n_vertices), np.int64)
    a, b = m.edges[:, 0], m.edges[:, 1]
    np.add.at(deg.T, a, odd.T)
    np.add.at(deg.T, b, odd.T)
    if np.any(deg % 2):
        raise TraceError("odd part has a vertex of odd degree")
    if dual is not None:
        dual = np.atleast_2d(dual)
        if np.any((primal != ZERO) & (dual != ZERO)):
            raise TraceError("primal and dual open on the same edge")
        dodd = dual == ODD
        fa, fb = m.face_of[0::2], m.face_of[1::2]
        ddeg = np.zeros((dodd.shape[0], m.n_faces), np.int64)
        np.add.at(ddeg.T, fa, dodd.T)
        np.add.at(ddeg.T, fb, dodd.T)
        if np.any(ddeg % 2):
            raise TraceError("dual odd part has a face of odd degree")


def cg_to_coupled_currents(cg: CityGraph, covers: np.ndarray, rng: np.random.Generator) -> tuple:
    """Primal and dual classes per primal edge from city-graph dimer covers.

    One face street of a quadrangle means primal odd; one vertex street means dual odd.
    Two parallel face streets give primal even with probability (1 + x^2)/2, two vertex
    streets give dual even with probability (1 + x*^2)/2.  An empty quadrangle uses one
    uniform U: primal even if U < 2x^2/(1+x^2), dual even if U >= 1 - 2x*^2/(1+x*^2).
    Returns (primal, dual) arrays shaped like (n_samples, n_edges).
    """
    covers = np.atleast_2d(np.asarray(covers, bool))
    n = cg.n_corners
    S = covers.shape[0]
    fs = covers[:, 2 * n:].reshape(S, -1, 2).sum(axis=2)
    vs = covers[:, n:2 * n].reshape(S, -1, 2).sum(axis=2)
    x = cg.x
    xs = dual_weight(x)
    u = rng.random(fs.shape)
    empty = (fs == 0) & (vs == 0)
    primal = np.full(fs.shape, ZERO, np.int8)
    dual = np.full(fs.shape, ZERO, np.int8)
    primal[fs == 1] = ODD
    dual[vs == 1] = ODD
    primal[((fs == 2) & (u < (1 + x * x) / 2)) | (empty & (u < even_probability(x)))] = EVEN
    dual[((vs == 2) & (u < (1 + xs * xs) / 2)) | (empty & (u >= 1 - even_probability(xs)))] = EVEN
    return primal, dual


# ---------------------------------------------------------------------------
# clusters, loops, spins

@dataclass(frozen=True, eq=False)
class DualTree:
    """BFS tree of the full dual rooted at the outer face, for face-spin sweeps."""
    order: np.ndarray            # faces, root first
    parent: np.ndarray
    parent_edge: np.ndarray

    @classmethod
    def of(cls, m: PlanarMap) -> "DualTree":
        adj = [[] for _ in range(m.n_faces)]
        fo = m.face_of
        for e in range(m.n_edges):
            f, g = int(fo[2 * e]), int(fo[2 * e + 1])
            if f != g:
                adj[f].append((g, e))
                adj[g].append((f, e))
        parent = np.full(m.n_faces, -1)
        pe = np.full(m.n_faces, -1)
        seen = np.zeros(m.n_faces, bool)
        order = [m.outer_face]
        seen[m.outer_face] = True
        k = 0
        while k < len(order):
            f = order[k]
            k += 1
            for g, e in adj[f]:
                if not seen[g]:
                    seen[g] = True
                    parent[g], pe[g] = f, e
                    order.append(g)
        return cls(np.array(order), parent, pe)

    def spins(self, mask: np.ndarray) -> np.ndarray:
        """Face spins (outer face +1) flipping across every edge of the mask; batched on leading axes."""
        mask = np.asarray(mask, bool)
        out = np.ones(mask.shape[:-1] + (len(self.parent),), np.int8)
        for f in self.order[1:]:
            out[..., f] = out[..., self.parent[f]] * np.where(mask[..., self.parent_edge[f]], -1, 1)
        return out


@dataclass(frozen=True)
class Loop:
    points: np.ndarray           # closed polyline (first point not repeated)
    walk: tuple                  # half-edges of the cluster walked with the loop's face on the left
    faces: tuple                 # a face of G inside the loop's region at each corner of the walk
    crossed: tuple               # edges of G crossed by the loop
    area: float                  # signed area; negative for outer boundaries

    @property
    def length(self) -> int:
        return len(self.crossed)


@dataclass(frozen=True)
class Cluster:
    vertices: np.ndarray
    edges: np.ndarray
    outer: Loop | None           # None for a single vertex
    holes: tuple
    hole_odd: tuple              # parity per hole


@dataclass(frozen=True, eq=False)
class ClusterSet:
    map: PlanarMap
    cluster_of: np.ndarray       # per vertex, -1 when untouched by open edges
    clusters: list

    def __len__(self):
        return len(self.clusters)

    def loops(self) -> list:
        """(loop, cluster index, is_outer, odd) for every boundary loop."""
        out = []
        for k, c in enumerate(self.clusters):
            if c.outer is not None:
                out.append((c.outer, k, True, False))
            out.extend((lp, k, False, odd) for lp, odd in zip(c.holes, c.hole_odd))
        return out


def _polygon_area(P: np.ndarray) -> float:
    return 0.5 * float(np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1]))


class LoopBuilder:
    """Face boundaries of an edge subgraph, drawn slightly inside each face."""

    def __init__(self, m: PlanarMap, offset: float = 0.2):
        self.m = m
        pos = m.positions
        d = pos[m.target] - pos[m.origin]
        self.angle = np.arctan2(d[:, 1], d[:, 0])
        L = np.hypot(d[:, 0], d[:, 1])
        self.r = offset * (float(np.median(L)) if len(L) else 1.0)
        nrm = np.stack([-d[:, 1], d[:, 0]], axis=1) / np.maximum(L, 1e-300)[:, None]
        self.mid_left = 0.5 * (pos[m.origin] + pos[m.target]) + self.r * nrm

    def _corner(self, g: int, t: int) -> np.ndarray:
        a1, a2 = self.angle[g], self.angle[t]
        gap = (a2 - a1) % (2 * np.pi)
        if g == t or gap == 0:
            gap = 2 * np.pi
        bis = a1 + gap / 2
        return self.m.positions[self.m.origin[g]] + self.r * np.array([np.cos(bis), np.sin(bis)])

    def _walk(self, h0: int, on: np.ndarray, used: np.ndarray) -> Loop:
        m = self.m
        rn, rp = m.rot_next, m.rot_prev
        pts, walk, faces, crossed = [], [], [], []
        h = int(h0)
        while True:
            used[h] = True
            walk.append(h)
            pts.append(self.mid_left[h])
            t = h ^ 1
            g = int(rp[t])
            while not on[g]:
                g = int(rp[g])
            pts.append(self._corner(g, t))
            faces.append(int(m.face_of[g]))
            k = int(rn[g])
            while k != t and k != g:
                crossed.append(k >> 1)
                k = int(rn[k])
            h = g
            if h == h0:
                break
        P = np.array(pts)
        return Loop(P, tuple(walk), tuple(faces), tuple(crossed), _polygon_area(P))

    def loops(self, edge_mask: np.ndarray) -> list:
        on = np.repeat(np.asarray(edge_mask, bool), 2)
        used = np.zeros(self.m.n_half, bool)
        return [self._walk(h0, on, used) for h0 in np.flatnonzero(on) if not used[h0]]

    def outer_loop(self, edge_mask: np.ndarray) -> Loop:
        """Outer boundary of a connected edge set, walked from its lowest-leftmost vertex."""
        m = self.m
        es = np.flatnonzero(edge_mask)
        if len(es) == 0:
            raise ValueError("empty edge set")
        vs = np.unique(m.edges[es])
        p = m.positions[vs]
        v = int(vs[np.lexsort((p[:, 1], p[:, 0]))[0]])
        on = np.repeat(np.asarray(edge_mask, bool), 2)
        hs = [h for h in m.out_halves[v] if on[h]]
        # the sector containing the westward direction lies in the outer face
        ang = self.angle[hs] % (2 * np.pi)
        h0 = hs[int(np.argmax(np.where(ang <= np.pi + 1e-12, ang, ang - 2 * np.pi)))]
        return self._walk(h0, on, np.zeros(m.n_half, bool))


def clusters(trace: CurrentTrace, builder: LoopBuilder | None = None,
             tree: DualTree | None = None) -> ClusterSet:
    """Clusters of open edges with outer boundaries and holes classified by parity."""
    m = trace.map
    builder = builder or LoopBuilder(m)
    tree = tree or DualTree.of(m)
    lab = trace.cluster_of
    op = trace.open
    edge_lab = lab[m.edges[:, 0]]
    cid = np.full(m.n_vertices, -1)
    out = []
    for c in np.unique(edge_lab[op]):
        es = op & (edge_lab == c)
        verts = np.flatnonzero(lab == c)
        cid[verts] = len(out)
        loops = builder.loops(es)
        outer = [lp for lp in loops if lp.area < 0]
        holes = [lp for lp in loops if lp.area >= 0]
        if len(outer) != 1:
            raise TraceError(f"cluster has {len(outer)} outer boundaries")
        spins = tree.spins(trace.odd & es)
        if any(spins[f] < 0 for f in outer[0].faces):
            raise TraceError("odd part flips the spin outside its cluster")
        parity = tuple(bool(spins[lp.faces[0]] < 0) for lp in holes)
        out.append(Cluster(verts, np.flatnonzero(es), outer[0], tuple(holes), parity))
    return ClusterSet(m, cid, out)


def assign_labels_and_spins(trace: CurrentTrace, rng: np.random.Generator,
                            tree: DualTree | None = None) -> CurrentTrace:
    """tau-dagger from the odd part (outer face +1); tau i.i.d. per cluster; epsilon = tau tau-dagger."""
    m = trace.map
    tree = tree or DualTree.of(m)
    tau_dual = tree.spins(trace.odd)
    k = trace.n_clusters
    lab = trace.cluster_of
    tau_c = rng.choice(np.array([-1, 1], np.int8), size=k)
    # spin seen from outside: any face at the corner of a vertex on the outer walk
    builder = LoopBuilder(m)
    edge_lab = lab[m.edges[:, 0]]
    td_c = np.ones(k, np.int8)
    for c in range(k):
        es = trace.open & (edge_lab == c)
        if es.any():
            outer = [lp for lp in builder.loops(es) if lp.area < 0]
            td_c[c] = tau_dual[outer[0].faces[0]]
        else:
            v = int(np.flatnonzero(lab == c)[0])
            hs = m.out_halves[v]
            td_c[c] = tau_dual[m.face_of[hs[0]]] if len(hs) else 1
    trace.tau = tau_c[lab]
    trace.tau_dual = tau_dual
    trace.labels = (tau_c * td_c).astype(np.int8)
    return trace


# ---------------------------------------------------------------------------
# samplers

@dataclass(eq=False)
class CoupledSampler:
    """Exact sampler of coupled traces through the city-graph dimer model."""
    map: PlanarMap
    x: np.ndarray
    cg: CityGraph = field(init=False)
    km: object = field(init=False)
    kinv: np.ndarray = field(init=False)

    def __post_init__(self):
        from .kasteleyn import build_weighting, invert, kasteleyn_matrix
        self.x = np.broadcast_to(np.asarray(self.x, float), (self.map.n_edges,)).copy()
        self.cg = build_cg(self.map, self.x)
        self.km = kasteleyn_matrix(self.cg, build_weighting(self.cg).phase)
        self.kinv = invert(self.km)

    def covers(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        from .kasteleyn import matched_edges, sample_dimers
        cols = sample_dimers(self.km, self.kinv, n_samples, rng)
        return matched_edges(self.km, cols, rng)

    def traces(self, n_samples: int, rng: np.random.Generator, covers=None) -> tuple:
        """(covers, primal classes, dual classes)."""
        if covers is None:
            covers = self.covers(n_samples, rng)
        p, d = cg_to_coupled_currents(self.cg, covers, rng)
        check_trace(self.map, p, d)
        return covers, p, d


def _resolve(domain, bc: str):
    m = domain.map if isinstance(domain, Domain) else domain
    if bc == "free":
        return m, None
    if bc == "wired":
        wm = augment_wired(domain)
        return wm.map, wm.ghost
    raise ValueError(f"unknown boundary condition {bc!r}")


def sample_double_current(domain, x, bc: str = "free", rng: np.random.Generator | None = None,
                          n_samples: int = 1) -> list:
    """Coupled primal/dual traces from exact city-graph dimer samples."""
    rng = rng or np.random.default_rng()
    m, ghost = _resolve(domain, bc)
    sampler = CoupledSampler(m, x)
    _, p, d = sampler.traces(n_samples, rng)
    dm = dual_graph(m, "full")
    return [CurrentTrace(m, p[s], d[s], dm, ghost) for s in range(n_samples)]


@dataclass(eq=False)
class ClusterChain:
    """Markov chain for free-boundary double currents on G at large sizes.

    Two independent Swendsen-Wang chains run on spins attached to the faces of G,
    outer face pinned at +1, with weight x per disagreeing neighbour pair; their
    interfaces are the odd parts of two independent sourceless currents.  Edges off
    both interfaces are opened with probability x^2.
    """
    map: PlanarMap
    x: np.ndarray
    seed: int = 0
    sweeps: int = 1

    def __post_init__(self):
        m = self.map
        self.x = np.broadcast_to(np.asarray(self.x, float), (m.n_edges,)).copy()
        self.face_ends = np.stack([m.face_of[0::2], m.face_of[1::2]], axis=1).astype(np.int64)
        self.p_bond = 1.0 - self.x
        self.x2 = self.x ** 2
        self.ends = m.edges.astype(np.int64)
        _kernels.seed(int(self.seed) % (2 ** 32))
        self.s1 = np.ones(m.n_faces, np.int8)
        self.s2 = np.ones(m.n_faces, np.int8)

    def burn_in(self, n: int):
        for _ in range(n):
            _kernels.sw_sweep(self.s1, self.face_ends, self.p_bond, self.map.outer_face)
            _kernels.sw_sweep(self.s2, self.face_ends, self.p_bond, self.map.outer_face)

    def step(self) -> tuple:
        """(odd mask, open mask, cluster label per vertex)."""
        return _kernels.double_current_step(self.s1, self.s2, self.face_ends, self.p_bond,
                                            self.map.outer_face, self.x2, self.map.n_vertices,
                                            self.ends, self.sweeps)

    def trace(self) -> CurrentTrace:
        odd, op, _ = self.step()
        primal = np.where(odd, ODD, np.where(op, EVEN, ZERO)).astype(np.int8)
        return CurrentTrace(self.map, primal, np.zeros_like(primal))
