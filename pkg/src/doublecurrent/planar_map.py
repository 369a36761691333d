"""Half-edge planar maps, square-lattice domains, duals and corners.

Half-edge ``2e`` runs from ``edges[e, 0]`` to ``edges[e, 1]`` and ``2e + 1``
is its twin.  The embedding is stored as a rotation system: ``rot_next[h]`` is
the next half-edge counterclockwise around ``origin(h)``.  The face of ``h``
is the face on its left; ``next_half`` walks that face counterclockwise
(clockwise for the outer face when seen from inside the domain).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


def _ccw_angle(a: float, b: float) -> float:
    """Counterclockwise sweep from direction angle a to b, in (0, 2pi]."""
    d = (b - a) % TWO_PI
    return TWO_PI if d < 1e-12 else d


@dataclass(frozen=True, eq=False)
class PlanarMap:
    positions: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    rot_next: np.ndarray
    outer_face: int = -1
    straight: bool = True

    # ---- construction -------------------------------------------------
    @classmethod
    def from_rotation(cls, positions, edges, rotation, weights=None, outer_face=None,
                      straight=False) -> "PlanarMap":
        """Build from per-vertex ccw lists of half-edges."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        n_half = 2 * len(edges)
        rot_next = np.full(n_half, -1, dtype=np.int64)
        for v, hs in enumerate(rotation):
            for k, h in enumerate(hs):
                if edges[h >> 1, h & 1] != v:
                    raise ValueError(f"half-edge {h} does not leave vertex {v}")
                rot_next[h] = hs[(k + 1) % len(hs)]
        if (rot_next < 0).any():
            raise ValueError("rotation system does not cover every half-edge")
        if weights is None:
            weights = np.ones(len(edges))
        m = cls(positions, edges, np.asarray(weights, dtype=float), rot_next, -1, straight)
        if outer_face is None:
            outer_face = m._guess_outer_face()
        object.__setattr__(m, "outer_face", int(outer_face))
        return m

    @classmethod
    def from_straight_line(cls, positions, edges, weights=None) -> "PlanarMap":
        """Rotation system read off a straight-line embedding."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        out = [[] for _ in range(len(positions))]
        for e, (a, b) in enumerate(edges):
            out[a].append(2 * e)
            out[b].append(2 * e + 1)
        rotation = []
        for v, hs in enumerate(out):
            ang = [_half_angle(positions, edges, h) for h in hs]
            rotation.append([h for _, h in sorted(zip(ang, hs))])
        return cls.from_rotation(positions, edges, rotation, weights, straight=True)

    def _guess_outer_face(self) -> int:
        # the outer face of a straight-line map is the one with negative signed area
        areas = [self.face_signed_area(f) for f in range(self.n_faces)]
        return int(np.argmin(areas))

    # ---- basic accessors ----------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_half(self) -> int:
        return 2 * len(self.edges)

    @cached_property
    def origin(self) -> np.ndarray:
        return self.edges.reshape(-1)

    @cached_property
    def target(self) -> np.ndarray:
        return self.edges[:, ::-1].reshape(-1)

    @staticmethod
    def twin(h):
        return h ^ 1

    @cached_property
    def rot_prev(self) -> np.ndarray:
        p = np.empty_like(self.rot_next)
        p[self.rot_next] = np.arange(self.n_half)
        return p

    @cached_property
    def next_half(self) -> np.ndarray:
        # next along the left face: turn clockwise at the head
        return self.rot_prev[np.arange(self.n_half) ^ 1]

    @cached_property
    def prev_half(self) -> np.ndarray:
        p = np.empty_like(self.next_half)
        p[self.next_half] = np.arange(self.n_half)
        return p

    @cached_property
    def _faces(self):
        face_of = np.full(self.n_half, -1, dtype=np.int64)
        cycles = []
        for h0 in range(self.n_half):
            if face_of[h0] >= 0:
                continue
            cyc, h = [], h0
            while face_of[h] < 0:
                face_of[h] = len(cycles)
                cyc.append(h)
                h = self.next_half[h]
            cycles.append(np.array(cyc, dtype=np.int64))
        return face_of, cycles

    @property
    def face_of(self) -> np.ndarray:
        return self._faces[0]

    @property
    def face_cycles(self) -> list:
        return self._faces[1]

    @property
    def n_faces(self) -> int:
        return len(self.face_cycles)

    @cached_property
    def out_halves(self) -> list:
        """ccw list of half-edges leaving each vertex."""
        res = [[] for _ in range(self.n_vertices)]
        seen = np.zeros(self.n_half, bool)
        for h0 in range(self.n_half):
            if seen[h0]:
                continue
            h = h0
            cyc = []
            while not seen[h]:
                seen[h] = True
                cyc.append(h)
                h = self.rot_next[h]
            res[self.origin[h0]] = cyc
        return res

    @cached_property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.n_vertices)

    def face_vertices(self, f: int) -> np.ndarray:
        return self.origin[self.face_cycles[f]]

    def face_signed_area(self, f: int) -> float:
        p = self.positions[self.face_vertices(f)]
        q = np.roll(p, -1, axis=0)
        return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]))

    @cached_property
    def face_centers(self) -> np.ndarray:
        c = np.array([self.positions[self.face_vertices(f)].mean(axis=0)
                      for f in range(self.n_faces)])
        return c

    @cached_property
    def bounded_faces(self) -> np.ndarray:
        return np.array([f for f in range(self.n_faces) if f != self.outer_face], dtype=np.int64)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        """Vertices on the outer face, in outer-walk order, without repeats."""
        seen, out = set(), []
        for v in self.face_vertices(self.outer_face):
            if v not in seen:
                seen.add(int(v))
                out.append(int(v))
        return np.array(out, dtype=np.int64)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def with_weights(self, weights) -> "PlanarMap":
        return PlanarMap(self.positions, self.edges, np.asarray(weights, float), self.rot_next,
                         self.outer_face, self.straight)

    # ---- serialization ------------------------------------------------
    def to_json(self, delta: float | None = None) -> str:
        return json.dumps({
            "delta": delta,
            "vertices": self.positions.tolist(),
            "edges": [[int(a), int(b), float(w)] for (a, b), w in zip(self.edges, self.weights)],
            "outer_face": self.face_vertices(self.outer_face).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "PlanarMap":
        d = json.loads(text)
        e = np.array([[a, b] for a, b, _ in d["edges"]], dtype=np.int64)
        w = np.array([x for _, _, x in d["edges"]], dtype=float)
        return cls.from_straight_line(np.array(d["vertices"], float), e, w)


def _half_angle(positions, edges, h) -> float:
    a, b = edges[h >> 1, h & 1], edges[h >> 1, 1 - (h & 1)]
    d = positions[b] - positions[a]
    return float(np.arctan2(d[1], d[0]))


# ---------------------------------------------------------------------------
# square-lattice domains

@dataclass(frozen=True, eq=False)
class Domain:
    delta: float
    map: PlanarMap
    lattice: np.ndarray           # integer lattice coordinates per vertex
    shape: str
    params: tuple
    center: tuple = (0.0, 0.0)

    @property
    def boundary(self) -> np.ndarray:
        return self.map.boundary_vertices

    @cached_property
    def vertex_index(self) -> dict:
        return {(int(i), int(j)): v for v, (i, j) in enumerate(self.lattice)}

    def face_at(self, point) -> int:
        """Bounded face of the map containing a point (ties resolved toward lower-left cell)."""
        i = int(np.floor(point[0] / self.delta + 1e-9))
        j = int(np.floor(point[1] / self.delta + 1e-9))
        corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        vi = self.vertex_index
        if not all(c in vi for c in corners):
            raise ValueError("point not inside a bounded face")
        a, b = vi[(i, j)], vi[(i + 1, j)]
        m = self.map
        for h in m.out_halves[a]:
            if m.target[h] == b:
                f = m.face_of[h]
                if f != m.outer_face:
                    return int(f)
        raise ValueError("point not inside a bounded face")


def _lattice_domain(points: list, delta: float, shape: str, params: tuple, center) -> Domain:
    idx = {p: k for k, p in enumerate(points)}
    edges = []
    for (i, j), k in idx.items():
        for di, dj in ((1, 0), (0, 1)):
            q = (i + di, j + dj)
            if q in idx:
                edges.append((k, idx[q]))
    lattice = np.array(points, dtype=np.int64)
    pos = lattice * float(delta)
    m = PlanarMap.from_straight_line(pos, np.array(edges, dtype=np.int64))
    if m.euler_characteristic() != 2:
        raise ValueError("domain is not connected")
    if any(len(m.face_cycles[f]) != 4 for f in m.bounded_faces):
        raise ValueError("domain has holes")
    if len(m.bounded_faces) < 1:
        raise ValueError("degenerate shape: no bounded face")
    return Domain(float(delta), m, lattice, shape, params, tuple(center))


def grid_domain(nx: int, ny: int, delta: float = 1.0) -> Domain:
    """nx-by-ny vertex grid."""
    if nx < 1 or ny < 1 or nx * ny < 2:
        raise ValueError("grid needs at least two vertices")
    pts = [(i, j) for j in range(ny) for i in range(nx)]
    idx = {p: k for k, p in enumerate(pts)}
    edges = []
    for (i, j), k in idx.items():
        for q in ((i + 1, j), (i, j + 1)):
            if q in idx:
                edges.append((k, idx[q]))
    lattice = np.array(pts, dtype=np.int64)
    m = PlanarMap.from_straight_line(lattice * float(delta), np.array(edges, dtype=np.int64))
    c = ((nx - 1) * delta / 2, (ny - 1) * delta / 2)
    return Domain(float(delta), m, lattice, "rectangle", (nx, ny), c)


def build_square_domain(shape: str, size, delta: float) -> Domain:
    """shape 'rectangle' with size (w, h), or 'disk' with size radius."""
    if delta <= 0:
        raise ValueError("mesh must be positive")
    if shape == "rectangle":
        w, h = size
        if min(w, h) < 2 * delta - 1e-12:
            raise ValueError("rectangle smaller than two mesh steps")
        nx, ny = int(round(w / delta)) + 1, int(round(h / delta)) + 1
        pts = [(i, j) for j in range(ny) for i in range(nx)]
        return _lattice_domain(pts, delta, shape, (w, h), (w / 2, h / 2))
    if shape == "disk":
        r = float(size)
        if r < 2 * delta - 1e-12:
            raise ValueError("disk smaller than two mesh steps")
        n = int(np.ceil(r / delta)) + 1
        inside = {(i, j) for i in range(-n, n + 1) for j in range(-n, n + 1)
                  if (i * delta) ** 2 + (j * delta) ** 2 < r * r - 1e-12}
        # keep the component of the origin, then fill holes are impossible for convex sets
        comp, todo = {(0, 0)}, deque([(0, 0)])
        while todo:
            i, j = todo.popleft()
            for q in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if q in inside and q not in comp:
                    comp.add(q)
                    todo.append(q)
        pts = sorted(comp, key=lambda p: (p[1], p[0]))
        return _lattice_domain(pts, delta, shape, (r,), (0.0, 0.0))
    raise ValueError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# duals and the ghost augmentation

@dataclass(frozen=True, eq=False)
class DualMap:
    map: PlanarMap
    primal_edge: np.ndarray       # dual edge -> primal edge it crosses
    vertex_face: np.ndarray       # dual vertex -> primal face


def dual_graph(m: PlanarMap, mode: str = "full") -> DualMap:
    """Full dual (all faces) or weak dual (bounded faces only)."""
    fo = m.face_of
    if mode == "full":
        rotation = [list(np.asarray(cyc) ^ 1) for cyc in m.face_cycles]
        dedges = np.stack([fo[1::2], fo[0::2]], axis=1)
        pos = m.face_centers.copy()
        if m.straight:
            pos[m.outer_face] = _far_point(m)
        # the outer face of the dual: the primal vertex at the start of the lowest boundary edge
        outer_v = bottom_boundary_half(m)
        dm = PlanarMap.from_rotation(pos, dedges, [[int(h) for h in r] for r in rotation],
                                     m.weights, outer_face=0, straight=False)
        # dual face of h* is origin(h)
        object.__setattr__(dm, "outer_face", int(dm.face_of[outer_v]))
        return DualMap(dm, np.arange(m.n_edges), np.arange(m.n_faces))
    if mode == "weak":
        keep = [e for e in range(m.n_edges)
                if fo[2 * e] != m.outer_face and fo[2 * e + 1] != m.outer_face]
        faces = list(m.bounded_faces)
        fid = {f: k for k, f in enumerate(faces)}
        dedges = np.array([[fid[fo[2 * e + 1]], fid[fo[2 * e]]] for e in keep],
                          dtype=np.int64).reshape(-1, 2)
        pos = m.face_centers[faces]
        dm = PlanarMap.from_straight_line(pos, dedges, m.weights[keep]) if len(keep) else \
            PlanarMap(pos, dedges, np.zeros(0), np.zeros(0, np.int64), -1, True)
        return DualMap(dm, np.array(keep, dtype=np.int64), np.array(faces, dtype=np.int64))
    raise ValueError(f"unknown dual mode {mode!r}")


def _far_point(m: PlanarMap) -> np.ndarray:
    lo, hi = m.positions.min(axis=0), m.positions.max(axis=0)
    return np.array([(lo[0] + hi[0]) / 2, lo[1] - (hi[1] - lo[1] + 1.0)])


def bottom_boundary_half(m: PlanarMap) -> int:
    """Outer-face half-edge of the lowest edge crossed by the downward ray from the centre."""
    lo, hi = m.positions.min(axis=0), m.positions.max(axis=0)
    cx = (lo[0] + hi[0]) / 2 + 1e-3 * max(hi[0] - lo[0], 1.0) / max(m.n_vertices, 1)
    best, best_y = None, np.inf
    for h in m.face_cycles[m.outer_face]:
        a, b = m.positions[m.origin[h]], m.positions[m.target[h]]
        if (a[0] - cx) * (b[0] - cx) < 0:
            t = (cx - a[0]) / (b[0] - a[0])
            y = a[1] + t * (b[1] - a[1])
            if y < best_y:
                best, best_y = int(h), y
    if best is None:
        best = int(m.face_cycles[m.outer_face][0])
    return best


@dataclass(frozen=True, eq=False)
class WiredMap:
    map: PlanarMap
    ghost: int
    ghost_edges: np.ndarray       # edge ids joining the ghost


def augment_wired(domain: Domain | PlanarMap) -> WiredMap:
    """Add a ghost vertex in the outer face joined to every boundary vertex."""
    m = domain.map if isinstance(domain, Domain) else domain
    delta = domain.delta if isinstance(domain, Domain) else 1.0
    ghost = m.n_vertices
    outer = m.face_cycles[m.outer_face]
    first = {}
    for h in outer:
        first.setdefault(int(m.origin[h]), int(h))
    bverts = list(first)
    edges = [tuple(e) for e in m.edges]
    rotation = [list(hs) for hs in m.out_halves]
    ghost_rot, gedges = [], []
    for v in bverts:
        e = len(edges)
        edges.append((v, ghost))
        gedges.append(e)
        lst = rotation[v]
        lst.insert(lst.index(first[v]) + 1, 2 * e)
        ghost_rot.append(2 * e + 1)
    rotation.append(ghost_rot)
    lo, hi = m.positions.min(axis=0), m.positions.max(axis=0)
    pos = np.vstack([m.positions, [(lo[0] + hi[0]) / 2, hi[1] + 2 * delta]])
    w = np.concatenate([m.weights, np.ones(len(gedges))])
    gm = PlanarMap.from_rotation(pos, np.array(edges), rotation, w, outer_face=0, straight=False)
    object.__setattr__(gm, "outer_face", int(gm.face_of[bottom_boundary_half(m)]))
    return WiredMap(gm, ghost, np.array(gedges, dtype=np.int64))


# ---------------------------------------------------------------------------
# corners and diamond angles

@dataclass(frozen=True)
class Corner:
    half_edge: int                # corner sits between this half-edge and its ccw successor
    face: int
    vertex: int
    direction: float              # angle of the segment from face centre to vertex
    eta: complex                  # unit root with conj(eta)^2 = exp(i direction)


@dataclass(frozen=True, eq=False)
class CornerData:
    corners: list
    direction: np.ndarray         # per half-edge
    vertex_angle: np.ndarray      # per half-edge: sweep at origin(h) from the corner before h to the one after
    face_angle: np.ndarray        # per half-edge: angle at the centre of face(h) between origin(h) and target(h)


def root_of_direction(phi: float) -> complex:
    """Fixed branch: halve the angle into (-pi/2, pi/2] and conjugate."""
    phi = (phi + np.pi) % TWO_PI - np.pi
    if phi <= -np.pi + 1e-15:
        phi = np.pi
    return complex(np.exp(-0.5j * phi))


def _balanced_angles(m: PlanarMap, vertex_angle, face_angle):
    """Nearest angles (least squares) with full turns around every vertex, every bounded
    face and every interior rhombus; the even spread alone breaks the rhombus sums."""
    n = m.n_half
    inner = np.flatnonzero(m.face_of != m.outer_face)
    col = np.full(n, -1)
    col[inner] = n + np.arange(len(inner))
    rows = [list(hs) for hs in m.out_halves]
    rows += [col[cyc].tolist() for f, cyc in enumerate(m.face_cycles) if f != m.outer_face]
    rows += [[h, h ^ 1, col[h], col[h ^ 1]] for h in range(0, n, 2) if col[h] >= 0 and col[h ^ 1] >= 0]
    A = np.zeros((len(rows), n + len(inner)))
    for i, r in enumerate(rows):
        A[i, r] = 1.0
    x0 = np.concatenate([vertex_angle, face_angle[inner]])
    x = x0 + np.linalg.lstsq(A, TWO_PI - A @ x0, rcond=None)[0]
    fa = np.zeros(n)
    fa[inner] = x[n:]
    return x[:n], fa


def corner_data(m: PlanarMap) -> CornerData:
    """Corners for every half-edge plus the diamond angles of the corner-segment picture.

    Corner directions of bounded faces point from the face centroid to the vertex.
    Outer-face corners point opposite to the bisector of the outer angular gap, so
    vertex angles at boundary vertices follow the geometry and face angles of the
    outer face take the leftover of 2pi.
    """
    n = m.n_half
    pos, org = m.positions, m.origin
    cs = m.face_centers
    succ = m.rot_next
    direction = np.zeros(n)
    if m.straight:
        ang = np.array([_half_angle(pos, m.edges, h) for h in range(n)])
        for h in range(n):
            f = m.face_of[h]
            if f != m.outer_face:
                d = pos[org[h]] - cs[f]
                direction[h] = np.arctan2(d[1], d[0])
            else:
                gap = _ccw_angle(ang[h], ang[succ[h]])
                direction[h] = ang[h] + gap / 2 + np.pi
    else:
        # combinatorial: equally spread corners around each vertex
        for v, hs in enumerate(m.out_halves):
            k = len(hs)
            for i, h in enumerate(hs):
                direction[h] = np.pi + TWO_PI * (i + 0.5) / k
    direction = (direction + np.pi) % TWO_PI - np.pi

    vertex_angle = np.zeros(n)
    for h in range(n):
        before = m.rot_prev[h]
        vertex_angle[h] = _ccw_angle(direction[before] + np.pi, direction[h] + np.pi)

    face_angle = np.zeros(n)
    for f, cyc in enumerate(m.face_cycles):
        if f == m.outer_face:
            continue
        for h in cyc:
            if m.straight:
                a = pos[org[h]] - cs[f]
                b = pos[m.target[h]] - cs[f]
                face_angle[h] = _ccw_angle(np.arctan2(a[1], a[0]), np.arctan2(b[1], b[0]))
            else:
                face_angle[h] = TWO_PI / len(cyc)
    if not m.straight:
        vertex_angle, face_angle = _balanced_angles(m, vertex_angle, face_angle)
    # outer face: the leftover of each rhombus (its four angles sum to 2pi)
    for h in m.face_cycles[m.outer_face]:
        t = h ^ 1
        rest = TWO_PI - vertex_angle[h] - vertex_angle[t]
        if m.face_of[t] == m.outer_face:
            face_angle[h] = rest / 2
        else:
            face_angle[h] = rest - face_angle[t]

    corners = []
    for h in range(n):
        f = int(m.face_of[h])
        corners.append(Corner(h, f, int(org[h]), float(direction[h]),
                              root_of_direction(direction[h])))
    return CornerData(corners, direction, vertex_angle, face_angle)


def corners(m: PlanarMap, include_outer: bool = False) -> list:
    """Corners of bounded faces (optionally also those of the outer face)."""
    cd = corner_data(m)
    return [c for c in cd.corners if include_outer or c.face != m.outer_face]


def bfs_tree(n: int, adjacency: list, root: int):
    """Parent pointers (vertex, via) and BFS order."""
    parent = np.full(n, -1, dtype=np.int64)
    via = np.full(n, -1, dtype=np.int64)
    order, seen = [root], np.zeros(n, bool)
    seen[root] = True
    q = deque([root])
    while q:
        a = q.popleft()
        for b, tag in adjacency[a]:
            if not seen[b]:
                seen[b] = True
                parent[b], via[b] = a, tag
                order.append(b)
                q.append(b)
    return parent, via, np.array(order, dtype=np.int64)
