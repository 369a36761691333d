"""The tripled digraph, the decorated graph, the city graph, and local rewrites.

Edge weights: sides of the tripled edge carry x, the middle carries
y = 2x/(1-x^2); in the city graph, streets bordering a face of G carry
w = 2x/(1+x^2), streets bordering a vertex of G carry z = (1-x^2)/(1+x^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .planar_map import Domain, PlanarMap

X_CRITICAL = math.sqrt(2.0) - 1.0

ROAD, VERTEX_STREET, FACE_STREET = 0, 1, 2
SHORT, LONG = 0, 1
SIDE_RIGHT, MIDDLE, SIDE_LEFT = 0, 1, 2


def middle_weight(x):
    return 2 * np.asarray(x) / (1 - np.asarray(x) ** 2)


def face_street_weight(x):
    return 2 * np.asarray(x) / (1 + np.asarray(x) ** 2)


def vertex_street_weight(x):
    return (1 - np.asarray(x) ** 2) / (1 + np.asarray(x) ** 2)


def dual_weight(x):
    return (1 - np.asarray(x)) / (1 + np.asarray(x))


def _as_map(g) -> PlanarMap:
    return g.map if isinstance(g, Domain) else g


def _edge_weights(m: PlanarMap, x) -> np.ndarray:
    x = np.broadcast_to(np.asarray(x, dtype=float), (m.n_edges,)).copy()
    if np.any((x <= 0) | (x >= 1)):
        raise ValueError("edge weights must lie in (0, 1)")
    return x


@dataclass(frozen=True, eq=False)
class BipartiteMap:
    map: PlanarMap
    white: np.ndarray            # bool per vertex

    def check_proper(self) -> bool:
        e = self.map.edges
        return bool(np.all(self.white[e[:, 0]] != self.white[e[:, 1]]))


# ---------------------------------------------------------------------------
# tripled digraph

@dataclass(frozen=True, eq=False)
class TripledDigraph:
    base: PlanarMap
    tail: np.ndarray             # per directed edge 3e + kind
    head: np.ndarray
    weight: np.ndarray
    middle_tail: np.ndarray      # per primal edge
    rotation: list               # per vertex: ccw directed-edge ids
    slot: np.ndarray             # per primal half-edge: index in rotation of its last copy

    @property
    def n_directed(self) -> int:
        return len(self.tail)

    def is_out(self, v: int, d: int) -> bool:
        return self.tail[d] == v


def build_vec_g(g, x) -> TripledDigraph:
    m = _as_map(g)
    x = _edge_weights(m, x)
    y = middle_weight(x)
    E = m.n_edges
    tail = np.empty(3 * E, dtype=np.int64)
    head = np.empty(3 * E, dtype=np.int64)
    weight = np.empty(3 * E)
    mtail = np.empty(E, dtype=np.int64)
    for e, (a, b) in enumerate(m.edges):
        pa, pb = tuple(m.positions[a]), tuple(m.positions[b])
        t, hd = (a, b) if pa <= pb else (b, a)
        mtail[e] = t
        tail[3 * e + MIDDLE], head[3 * e + MIDDLE] = t, hd
        for k in (SIDE_RIGHT, SIDE_LEFT):
            tail[3 * e + k], head[3 * e + k] = hd, t
        weight[3 * e: 3 * e + 3] = (x[e], y[e], x[e])
    rotation, slot = [], np.empty(m.n_half, dtype=np.int64)
    for v, hs in enumerate(m.out_halves):
        rot = []
        for h in hs:
            e = h >> 1
            # right of the half-edge first when sweeping counterclockwise
            kinds = (SIDE_RIGHT, MIDDLE, SIDE_LEFT) if h % 2 == 0 else (SIDE_LEFT, MIDDLE, SIDE_RIGHT)
            rot.extend(3 * e + k for k in kinds)
            slot[h] = len(rot) - 1
        rotation.append(rot)
    return TripledDigraph(m, tail, head, weight, mtail, rotation, slot)


# ---------------------------------------------------------------------------
# decorated graph

@dataclass(frozen=True, eq=False)
class DecoratedGraph(BipartiteMap):
    kind: np.ndarray = None              # SHORT / LONG per edge
    directed_edge: np.ndarray = None     # long edge -> directed edge of the tripled digraph; -1 for short
    vertex_of: np.ndarray = None         # decorated vertex -> vertex of G
    digraph: TripledDigraph = None
    run_of: dict = None                  # (v, directed edge) -> decorated vertex


def build_gd(g, x) -> DecoratedGraph:
    vg = build_vec_g(g, x)
    m = vg.base
    runs, run_vertex, run_of = [], [], {}
    for v, rot in enumerate(vg.rotation):
        out = [vg.tail[d] == v for d in rot]
        n = len(rot)
        # start at an orientation change so no run wraps around
        start = next(i for i in range(n) if out[i] != out[i - 1])
        cur = []
        vruns = []
        for k in range(n):
            i = (start + k) % n
            if cur and out[i] != out[(i - 1) % n]:
                vruns.append(cur)
                cur = []
            cur.append(rot[i])
        vruns.append(cur)
        runs.append(vruns)
        for r in vruns:
            rid = len(run_vertex)
            run_vertex.append((v, r, bool(vg.tail[r[0]] == v)))
            for d in r:
                run_of[(v, d)] = rid
    nV = len(run_vertex)
    edges, weights, kinds, dirs = [], [], [], []
    rotation = [[] for _ in range(nV)]
    # long edges first so their ids follow the digraph order
    long_id = {}
    for d in range(vg.n_directed):
        a, b = run_of[(vg.tail[d], d)], run_of[(vg.head[d], d)]
        long_id[d] = len(edges)
        edges.append((a, b))
        weights.append(vg.weight[d])
        kinds.append(LONG)
        dirs.append(d)
    short_next = {}
    offset = 0
    for v, vruns in enumerate(runs):
        ids = [offset + i for i in range(len(vruns))]
        offset += len(vruns)
        k = len(vruns)
        for j in range(k):
            a, b = ids[j], ids[(j + 1) % k]
            e = len(edges)
            # keep white end first
            wa = run_vertex[a][2]
            edges.append((a, b) if wa else (b, a))
            weights.append(1.0)
            kinds.append(SHORT)
            dirs.append(-1)
            short_next[a] = (e, 0 if wa else 1)
    # orient long edges white -> black: tail run is white
    short_prev = {}
    for a, (e, end) in short_next.items():
        other = edges[e][1 - end]
        short_prev[other] = (e, 1 - end)
    for rid, (v, r, _) in enumerate(run_vertex):
        lst = [2 * short_prev[rid][0] + short_prev[rid][1]]
        for d in r:
            e = long_id[d]
            lst.append(2 * e + (0 if vg.tail[d] == v else 1))
        lst.append(2 * short_next[rid][0] + short_next[rid][1])
        rotation[rid] = lst
    pos = np.zeros((nV, 2))
    for rid, (v, r, _) in enumerate(run_vertex):
        dvec = np.zeros(2)
        for d in r:
            other = vg.head[d] if vg.tail[d] == v else vg.tail[d]
            u = m.positions[other] - m.positions[v]
            dvec += u / (np.linalg.norm(u) + 1e-300)
        nrm = np.linalg.norm(dvec)
        scale = 0.2 * _mesh(m)
        pos[rid] = m.positions[v] + (dvec / nrm * scale if nrm > 1e-12 else 0)
    pm = PlanarMap.from_rotation(pos, np.array(edges), rotation, np.array(weights), outer_face=0,
                                 straight=False)
    white = np.array([rv[2] for rv in run_vertex])
    # outer face: left of the outermost copy of the lowest primal boundary half-edge
    from .planar_map import bottom_boundary_half
    hb = bottom_boundary_half(m)
    d = 3 * (hb >> 1) + (SIDE_LEFT if hb % 2 == 0 else SIDE_RIGHT)
    le = long_id[d]
    outer_half = 2 * le if vg.tail[d] == m.origin[hb] else 2 * le + 1
    object.__setattr__(pm, "outer_face", int(pm.face_of[outer_half]))
    return DecoratedGraph(pm, white, np.array(kinds), np.array(dirs), np.array([rv[0] for rv in run_vertex]),
                          vg, run_of)


def _mesh(m: PlanarMap) -> float:
    if m.n_edges == 0:
        return 1.0
    d = m.positions[m.edges[:, 0]] - m.positions[m.edges[:, 1]]
    return float(np.median(np.linalg.norm(d, axis=1)))


# ---------------------------------------------------------------------------
# city graph

@dataclass(frozen=True, eq=False)
class CityGraph(BipartiteMap):
    base: PlanarMap = None
    x: np.ndarray = None
    kind: np.ndarray = None          # ROAD / VERTEX_STREET / FACE_STREET
    half_edge: np.ndarray = None     # primal half-edge (corner for roads)
    face_class: list = None          # per city face: ('U', face) | ('V', vertex) | ('Q', edge)
    white_side: str = "R"

    @property
    def n_corners(self) -> int:
        return self.base.n_half

    def road_white(self, h):
        """White endpoint of the road of corner h."""
        a, b = self.map.edges[h]
        return a if self.white[a] else b

    def road_black(self, h):
        a, b = self.map.edges[h]
        return b if self.white[a] else a

    @property
    def u_faces(self) -> dict:
        return {c[1]: f for f, c in enumerate(self.face_class) if c[0] == "U"}

    @property
    def v_faces(self) -> dict:
        return {c[1]: f for f, c in enumerate(self.face_class) if c[0] == "V"}


def road_id(h):
    return h


def vertex_street_id(m: PlanarMap, h):
    return m.n_half + h


def face_street_id(m: PlanarMap, h):
    return 2 * m.n_half + h


def build_cg(g, x, white_side: str = "R") -> CityGraph:
    """City graph with vertices q(h, L) = 2h and q(h, R) = 2h + 1 for each primal half-edge h."""
    m = _as_map(g)
    x = _edge_weights(m, x)
    n = m.n_half
    E = m.n_edges
    edges = np.empty((3 * n, 2), dtype=np.int64)
    weights = np.empty(3 * n)
    kind = np.empty(3 * n, dtype=np.int64)
    hs = np.arange(n)
    edges[:n] = np.stack([2 * hs, 2 * m.rot_next + 1], axis=1)
    edges[n:2 * n] = np.stack([2 * hs, 2 * hs + 1], axis=1)
    edges[2 * n:] = np.stack([2 * hs, 2 * (hs ^ 1) + 1], axis=1)
    xe = x[hs >> 1]
    weights[:n] = 1.0
    weights[n:2 * n] = vertex_street_weight(xe)
    weights[2 * n:] = face_street_weight(xe)
    kind[:n], kind[n:2 * n], kind[2 * n:] = ROAD, VERTEX_STREET, FACE_STREET
    rotation = [None] * (2 * n)
    for h in range(n):
        # at q(h, L): vertex street, face street, road
        rotation[2 * h] = [2 * (n + h), 2 * (2 * n + h), 2 * h]
        # at q(h, R): face street of the twin, vertex street, road of the cw-previous corner
        rotation[2 * h + 1] = [2 * (2 * n + (h ^ 1)) + 1, 2 * (n + h) + 1, 2 * m.rot_prev[h] + 1]
    pos = np.zeros((2 * n, 2))
    for h in range(n):
        a, b = m.origin[h], m.target[h]
        pa, pb = m.positions[a], m.positions[b]
        u = pb - pa
        L = np.linalg.norm(u)
        nl = np.array([-u[1], u[0]]) / max(L, 1e-300)
        base = pa + 0.25 * u
        pos[2 * h] = base + 0.15 * L * nl
        pos[2 * h + 1] = base - 0.15 * L * nl
    half = np.concatenate([hs, hs, hs])
    pm = PlanarMap.from_rotation(pos, edges, rotation, weights, outer_face=0, straight=False)
    face_class = []
    for f, cyc in enumerate(pm.face_cycles):
        ks = set(kind[c >> 1] for c in cyc)
        hh = half[cyc[0] >> 1]
        if ks == {VERTEX_STREET, FACE_STREET}:
            face_class.append(("Q", int(hh >> 1)))
        else:
            # find a street on the face to decide U or V
            st = [c for c in cyc if kind[c >> 1] != ROAD]
            c = st[0]
            if kind[c >> 1] == VERTEX_STREET:
                face_class.append(("V", int(m.origin[half[c >> 1]])))
            else:
                face_class.append(("U", int(m.face_of[half[c >> 1]])))
    uf = {c[1]: f for f, c in enumerate(face_class) if c[0] == "U"}
    object.__setattr__(pm, "outer_face", int(uf[m.outer_face]))
    if white_side not in ("L", "R"):
        raise ValueError("white_side must be 'L' or 'R'")
    white = (np.arange(2 * n) % 2 == 0) == (white_side == "L")
    return CityGraph(pm, white, m, x, kind, half, face_class, white_side)


# ---------------------------------------------------------------------------
# mutable rotation graph for local rewrites

class RotGraph:
    """Bipartite weighted plane graph with a rotation system, edited in place."""

    def __init__(self):
        self.pos, self.white, self.alive_v = [], [], []
        self.ends, self.weight, self.alive_e = [], [], []
        self.rot = []            # per vertex: ccw list of edge ids

    @classmethod
    def from_bipartite(cls, bm: BipartiteMap) -> "RotGraph":
        g = cls()
        m = bm.map
        for v in range(m.n_vertices):
            g.add_vertex(m.positions[v], bool(bm.white[v]))
        for e, (a, b) in enumerate(m.edges):
            g.ends.append([int(a), int(b)])
            g.weight.append(float(m.weights[e]))
            g.alive_e.append(True)
        for v, hs in enumerate(m.out_halves):
            g.rot[v] = [int(h >> 1) for h in hs]
        return g

    def copy(self) -> "RotGraph":
        g = RotGraph()
        g.pos = [p.copy() for p in self.pos]
        g.white = list(self.white)
        g.alive_v = list(self.alive_v)
        g.ends = [list(e) for e in self.ends]
        g.weight = list(self.weight)
        g.alive_e = list(self.alive_e)
        g.rot = [list(r) for r in self.rot]
        return g

    def add_vertex(self, pos, white: bool) -> int:
        self.pos.append(np.asarray(pos, float).copy())
        self.white.append(bool(white))
        self.alive_v.append(True)
        self.rot.append([])
        return len(self.pos) - 1

    def add_edge(self, a: int, b: int, w: float) -> int:
        self.ends.append([a, b])
        self.weight.append(float(w))
        self.alive_e.append(True)
        return len(self.ends) - 1

    def other(self, e: int, v: int) -> int:
        a, b = self.ends[e]
        return b if a == v else a

    def degree(self, v: int) -> int:
        return len(self.rot[v])

    def _half_list(self, v):
        # half-edge view of the rotation, distinguishing loops is unnecessary (no loops)
        out = []
        for e in self.rot[v]:
            a, b = self.ends[e]
            out.append(2 * e + (0 if a == v else 1))
        return out

    def to_bipartite(self):
        """Compact copy as a BipartiteMap plus old->new vertex and edge maps."""
        vmap = {}
        for v, ok in enumerate(self.alive_v):
            if ok:
                vmap[v] = len(vmap)
        emap = {}
        for e, ok in enumerate(self.alive_e):
            if ok:
                emap[e] = len(emap)
        edges = np.array([[vmap[self.ends[e][0]], vmap[self.ends[e][1]]] for e in emap], dtype=np.int64)
        weights = np.array([self.weight[e] for e in emap])
        rotation = []
        for v in vmap:
            lst = []
            for e in self.rot[v]:
                a, b = self.ends[e]
                lst.append(2 * emap[e] + (0 if a == v else 1))
            rotation.append(lst)
        pos = np.array([self.pos[v] for v in vmap])
        pm = PlanarMap.from_rotation(pos, edges.reshape(-1, 2), rotation, weights, outer_face=0,
                                     straight=False)
        white = np.array([self.white[v] for v in vmap])
        return BipartiteMap(pm, white), vmap, emap

    def face_cycle_ok(self, vs, es) -> bool:
        """True if (v0, e0, v1, e1, ...) bounds a face with the interior on the left."""
        k = len(vs)
        for i in range(k):
            r = self.rot[vs[i]]
            e_in, e_out = es[i - 1], es[i]
            j = r.index(e_out)
            if r[(j + 1) % len(r)] != e_in:
                return False
        return True


def urban_renewal_rot(g: RotGraph, vs: list, es: list) -> tuple:
    """Urban renewal on the quadrilateral face (v0, e0, v1, e1, v2, e2, v3, e3).

    Returns (new inner vertices, new inner edges, constant C) with Z_old = C * Z_new.
    Edge e_k of the old square is replaced by a parallel inner edge of weight
    x_{k+2} / C and every old corner is joined to its inner copy by a weight-1 leg.
    """
    if len(vs) != 4 or len(es) != 4:
        raise ValueError("urban renewal needs a quadrilateral")
    order = [0, 1, 2, 3]
    if not g.face_cycle_ok(vs, es):
        vs = [vs[0], vs[3], vs[2], vs[1]]
        es = [es[3], es[2], es[1], es[0]]
        order = [3, 2, 1, 0]
        if not g.face_cycle_ok(vs, es):
            raise ValueError("edges do not bound a quadrilateral face")
    x = [g.weight[e] for e in es]
    C = x[0] * x[2] + x[1] * x[3]
    if C == 0:
        raise ValueError("degenerate quadrilateral")
    ctr = sum(g.pos[v] for v in vs) / 4
    inner = [g.add_vertex(g.pos[v] + 0.5 * (ctr - g.pos[v]), not g.white[v]) for v in vs]
    legs = []
    for k, v in enumerate(vs):
        leg = g.add_edge(v, inner[k], 1.0)
        legs.append(leg)
        r = g.rot[v]
        j = r.index(es[k])
        # es[k] is followed by es[k-1]; replace the pair with the leg
        r[j] = leg
        r.remove(es[k - 1])
    new_edges = []
    for k in range(4):
        new_edges.append(g.add_edge(inner[k], inner[(k + 1) % 4], x[(k + 2) % 4] / C))
    for k in range(4):
        g.rot[inner[k]] = [legs[k], new_edges[k], new_edges[k - 1]]
    for e in es:
        g.alive_e[e] = False
    # report inner edges in the caller's edge order
    aligned = [None] * 4
    for k in range(4):
        aligned[order[k]] = new_edges[k]
    return inner, aligned, C


def vertex_split_rot(g: RotGraph, v: int, arc: list) -> tuple:
    """Move a cyclically contiguous arc of v's edges to a new vertex joined to v through a
    new middle vertex of the opposite colour. Returns (new vertex, middle vertex)."""
    r = g.rot[v]
    arcset = set(arc)
    if not arcset or arcset == set(r) or not arcset <= set(r):
        raise ValueError("invalid partition")
    n = len(r)
    starts = [i for i in range(n) if r[i] in arcset and r[i - 1] not in arcset]
    if len(starts) != 1:
        raise ValueError("partition is not contiguous")
    i0 = starts[0]
    seq = [r[(i0 + k) % n] for k in range(len(arcset))]
    if set(seq) != arcset:
        raise ValueError("partition is not contiguous")
    rest = [r[(i0 + len(seq) + k) % n] for k in range(n - len(seq))]
    pos_arc = np.mean([g.pos[g.other(e, v)] for e in seq], axis=0)
    nv = g.add_vertex(g.pos[v] + 0.3 * (pos_arc - g.pos[v]), g.white[v])
    mid = g.add_vertex(g.pos[v] + 0.15 * (pos_arc - g.pos[v]), not g.white[v])
    e1 = g.add_edge(v, mid, 1.0)
    e2 = g.add_edge(mid, nv, 1.0)
    for e in seq:
        a, b = g.ends[e]
        g.ends[e] = [nv if a == v else a, nv if b == v else b]
    g.rot[v] = rest + [e1]
    g.rot[nv] = seq + [e2]
    g.rot[mid] = [e2, e1]
    return nv, mid


def collapse_rot(g: RotGraph, c: int) -> int:
    """Remove a degree-2 vertex whose edges have weight 1, merging its two neighbours."""
    if g.degree(c) != 2:
        raise ValueError("collapse needs a degree-2 vertex")
    e1, e2 = g.rot[c]
    if g.weight[e1] != 1.0 or g.weight[e2] != 1.0:
        raise ValueError("collapse needs weight-1 edges")
    p, q = g.other(e1, c), g.other(e2, c)
    if p == q:
        raise ValueError("cannot collapse a doubled edge onto one vertex")
    rp, rq = g.rot[p], g.rot[q]
    jq = rq.index(e2)
    tail = rq[jq + 1:] + rq[:jq]
    jp = rp.index(e1)
    g.rot[p] = rp[:jp] + tail + rp[jp + 1:]
    for e in tail:
        a, b = g.ends[e]
        g.ends[e] = [p if a == q else a, p if b == q else b]
    for e in (e1, e2):
        g.alive_e[e] = False
    g.alive_v[c] = g.alive_v[q] = False
    g.rot[c], g.rot[q] = [], []
    return p


def merge_parallel_rot(g: RotGraph, e1: int, e2: int) -> int:
    """Replace two edges with the same endpoints bounding a 2-gon by one edge of summed weight."""
    if sorted(g.ends[e1]) != sorted(g.ends[e2]):
        raise ValueError("edges are not parallel")
    g.weight[e1] += g.weight[e2]
    for v in set(g.ends[e2]):
        g.rot[v].remove(e2)
    g.alive_e[e2] = False
    return e1


def urban_renewal(bm: BipartiteMap, face: int):
    """Urban renewal on a quadrilateral face of a bipartite map.

    Returns (rewritten BipartiteMap, constant C) with Z_old = C * Z_new.
    """
    m = bm.map
    cyc = m.face_cycles[face]
    if len(cyc) != 4:
        raise ValueError("face is not a quadrilateral")
    g = RotGraph.from_bipartite(bm)
    vs = [int(m.origin[h]) for h in cyc]
    es = [int(h >> 1) for h in cyc]
    _, _, C = urban_renewal_rot(g, vs, es)
    out, _, _ = g.to_bipartite()
    return out, C


def vertex_split(bm: BipartiteMap, v: int, arc_edges) -> BipartiteMap:
    g = RotGraph.from_bipartite(bm)
    vertex_split_rot(g, v, [int(e) for e in arc_edges])
    return g.to_bipartite()[0]


def collapse(bm: BipartiteMap, c: int) -> BipartiteMap:
    g = RotGraph.from_bipartite(bm)
    collapse_rot(g, c)
    return g.to_bipartite()[0]


# ---------------------------------------------------------------------------
# decorated graph -> city graph

@dataclass
class Transcript:
    steps: list = field(default_factory=list)
    log_constant: float = 0.0
    result: BipartiteMap = None

    @property
    def constant(self) -> float:
        return math.exp(self.log_constant)

    def count(self, op: str) -> int:
        return sum(1 for s in self.steps if s[0] == op)


def _ensure_degree3(g: RotGraph, v: int, keep: list, tr: Transcript) -> int:
    """Split v so that the two consecutive edges in keep sit on a vertex of degree 3."""
    if g.degree(v) == 3:
        return v
    nv, mid = vertex_split_rot(g, v, keep)
    tr.steps.append(("split", v, tuple(keep)))
    return nv


def gd_to_cg(g, x) -> Transcript:
    """Rewrite the decorated graph into the city graph, one primal edge at a time."""
    gd = build_gd(g, x)
    vg = gd.digraph
    rg = RotGraph.from_bipartite(gd)
    tr = Transcript()
    m = vg.base
    for e in range(m.n_edges):
        # renew the thin quadrilateral on the right of the middle edge, so that merged
        # runs of consecutive triples never serve two renewals
        right_first = vg.middle_tail[e] == m.edges[e][0]
        dm = 3 * e + MIDDLE
        dr = 3 * e + (SIDE_RIGHT if right_first else SIDE_LEFT)
        dl = 3 * e + (SIDE_LEFT if right_first else SIDE_RIGHT)
        W, B = rg.ends[dm]                       # long edges are stored white -> black
        Wr, Br = rg.ends[dr]
        # shorts of the right thin quadrilateral
        sB, sW = _quad_shorts(rg, W, B, Wr, Br, dm, dr)
        Wr = _ensure_degree3(rg, Wr, [sB, dr], tr)
        Br = _ensure_degree3(rg, Br, [dr, sW], tr)
        vs, es = [W, B, Wr, Br], [dm, sB, dr, sW]
        inner, new_edges, C = urban_renewal_rot(rg, vs, es)
        tr.steps.append(("renew", e, C))
        tr.log_constant += math.log(abs(C))
        for v in vs:
            if rg.degree(v) == 2:
                collapse_rot(rg, v)
                tr.steps.append(("collapse", v))
        # the inner edge replacing the middle edge now runs parallel to the left side
        par = new_edges[0]
        if sorted(rg.ends[par]) == sorted(rg.ends[dl]):
            merge_parallel_rot(rg, dl, par)
            tr.steps.append(("merge", dl, par))
        # the remaining middle splits are collapsed as well
        for v in range(len(rg.alive_v)):
            if rg.alive_v[v] and rg.degree(v) == 2 and all(rg.weight[k] == 1.0 for k in rg.rot[v]):
                a, b = (rg.other(k, v) for k in rg.rot[v])
                if a != b:
                    collapse_rot(rg, v)
                    tr.steps.append(("collapse", v))
    tr.result = rg.to_bipartite()[0]
    return tr


def _neighbour_edge(g: RotGraph, v: int, e: int, step: int) -> int:
    """The edge following (step=+1) or preceding (step=-1) e in v's rotation."""
    r = g.rot[v]
    return r[(r.index(e) + step) % len(r)]


def _quad_shorts(g: RotGraph, W, B, Wr, Br, dm, dr):
    """Short edges closing the thin quadrilateral between the middle and one side edge."""
    for sB in {_neighbour_edge(g, B, dm, +1), _neighbour_edge(g, B, dm, -1)}:
        if g.other(sB, B) != Wr:
            continue
        for sW in {_neighbour_edge(g, W, dm, +1), _neighbour_edge(g, W, dm, -1)}:
            if g.other(sW, W) != Br:
                continue
            vs, es = [W, B, Wr, Br], [dm, sB, dr, sW]
            if g.face_cycle_ok(vs, es) or g.face_cycle_ok(vs[:1] + vs[:0:-1], es[::-1]):
                return sB, sW
    raise ValueError("thin quadrilateral not found")
