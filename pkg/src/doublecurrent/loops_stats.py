"""Loop families, the loop metric, crossing events, and Monte Carlo experiments on
nesting fields: Green's-function moments, conformal radii and cluster counts."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import shapely
from matplotlib.path import Path
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra, maximum_bipartite_matching
from scipy.special import erfc

from . import _kernels
from .currents import ClusterChain, ClusterSet, CurrentTrace, DualTree, LoopBuilder
from .decorations import X_CRITICAL
from .planar_map import Domain, PlanarMap

LAMBDA = math.sqrt(math.pi / 8)
CLUSTER_COUNT_LIMIT = 1.0 / (math.sqrt(2.0) * math.pi ** 2)
EXIT_MEAN = math.sqrt(2.0) * math.pi ** 2


# ---------------------------------------------------------------------------
# Green's functions (Dirichlet, normalised so that -Laplacian G(x, .) = delta_x)

def green_rectangle(a, b, rect=(1.0, 1.0), tol: float = 1e-8) -> float:
    """Green's function of [0, w] x [0, h].

    Sine modes along the axis of larger separation; the transverse factor is the exact
    1D resolvent, so only one index is truncated, at a geometric tail bound below tol.
    """
    (ax, ay), (bx, by) = map(tuple, (a, b))
    w, h = rect
    if math.isclose(ax, bx, abs_tol=1e-15) and math.isclose(ay, by, abs_tol=1e-15):
        raise ValueError("Green's function is singular on the diagonal")
    for px, py in ((ax, ay), (bx, by)):
        if not (0 < px < w and 0 < py < h):
            return 0.0
    if abs(ax - bx) > abs(ay - by):
        return green_rectangle((ay, ax), (by, bx), (h, w), tol)
    lo, hi = min(ay, by), max(ay, by)
    gap = hi - lo
    ratio = math.exp(-math.pi * gap / w)
    total, m = 0.0, 1
    while True:
        k = m * math.pi / w
        damp = 1.0 - math.exp(-2 * k * h)
        g = (math.exp(k * (lo - hi)) - math.exp(-k * (lo + hi)) - math.exp(k * (lo + hi - 2 * h))
             + math.exp(-k * (2 * h - hi + lo))) / (2 * k * damp)
        total += (2 / w) * math.sin(k * ax) * math.sin(k * bx) * g
        k1 = k + math.pi / w
        tail = math.exp(-k1 * gap) / (w * k1 * (1 - math.exp(-2 * k1 * h))) / (1 - ratio)
        if tail < tol:
            return total
        m += 1


def green_half_plane(z: complex, w: complex) -> float:
    return math.log(abs((z - w.conjugate()) / (z - w))) / (2 * math.pi)


def green_disk(z: complex, w: complex, radius: float = 1.0) -> float:
    z, w = z / radius, w / radius
    return math.log(abs(1 - z * w.conjugate()) / abs(z - w)) / (2 * math.pi)


def domain_green(domain: Domain):
    """Continuum Green's function of the region a lattice domain approximates."""
    if domain.shape == "disk":
        r = float(domain.params[0])
        return lambda a, b: green_disk(complex(*a), complex(*b), r)
    pos = domain.map.positions
    x0, y0 = pos.min(axis=0)
    x1, y1 = pos.max(axis=0)
    return lambda a, b: green_rectangle((a[0] - x0, a[1] - y0), (b[0] - x0, b[1] - y0), (x1 - x0, y1 - y0))


def pairing_target(points, green) -> float:
    """Sum over pairings of products of (1/pi) G; zero for an odd number of points."""
    pts = list(points)
    if len(pts) % 2:
        return 0.0
    if not pts:
        return 1.0
    first, rest = pts[0], pts[1:]
    return sum(green(first, q) / math.pi * pairing_target(rest[:k] + rest[k + 1:], green)
               for k, q in enumerate(rest))


# ---------------------------------------------------------------------------
# loop families and the loop metric

@dataclass(frozen=True)
class LoopMeta:
    cluster: int
    outer: bool
    odd: bool                    # parity of a hole; False for outer boundaries
    label: int = 0


@dataclass(eq=False)
class LoopFamily:
    loops: list                  # closed polylines, (n, 2) arrays, first point not repeated
    meta: list

    @classmethod
    def from_clusters(cls, cs: ClusterSet, labels=None) -> "LoopFamily":
        loops, meta = [], []
        for lp, k, outer, odd in cs.loops():
            lab = 0 if labels is None else int(labels[k])
            loops.append(lp.points)
            meta.append(LoopMeta(k, outer, odd, lab))
        return cls(loops, meta)

    @classmethod
    def of_polylines(cls, polylines) -> "LoopFamily":
        loops = [np.asarray(p, float) for p in polylines]
        return cls(loops, [LoopMeta(k, True, False) for k in range(len(loops))])

    def __len__(self):
        return len(self.loops)

    @cached_property
    def diameters(self) -> np.ndarray:
        return np.array([_diameter(p) for p in self.loops])

    @cached_property
    def parent(self) -> np.ndarray:
        """Innermost loop enclosing each loop, -1 at the roots of the nesting forest."""
        area = np.array([abs(_area(p)) for p in self.loops])
        lo = np.array([p.min(axis=0) for p in self.loops]).reshape(-1, 2)
        hi = np.array([p.max(axis=0) for p in self.loops]).reshape(-1, 2)
        paths = [Path(p) for p in self.loops]
        out = np.full(len(self), -1)
        for i, p in enumerate(self.loops):
            q = p[0]
            best = math.inf
            for j in np.flatnonzero((area > area[i]) & np.all(lo <= q, axis=1) & np.all(hi >= q, axis=1)):
                if area[j] < best and paths[j].contains_point(q):
                    best, out[i] = area[j], j
        return out

    def depth(self) -> np.ndarray:
        par = self.parent
        d = np.zeros(len(self), int)
        for i in range(len(self)):
            j = par[i]
            while j >= 0:
                d[i] += 1
                j = par[j]
        return d


def loop_family(trace: CurrentTrace, builder: LoopBuilder | None = None) -> LoopFamily:
    from .currents import clusters
    cs = clusters(trace, builder)
    labels = None
    if trace.labels is not None:
        labels = [int(trace.labels[trace.cluster_of[c.vertices[0]]]) for c in cs.clusters]
    return LoopFamily.from_clusters(cs, labels)


def _area(P) -> float:
    return 0.5 * float(np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1]))


def _diameter(P) -> float:
    if len(P) < 2:
        return 0.0
    d = P[:, None, :] - P[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def resample(P, n: int) -> np.ndarray:
    """n points at equal arclength along the closed polyline, starting at its first point."""
    P = np.asarray(P, float)
    Q = np.vstack([P, P[:1]])
    seg = np.hypot(*np.diff(Q, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(P[:1], n, axis=0)
    t = np.arange(n) * s[-1] / n
    return np.stack([np.interp(t, s, Q[:, 0]), np.interp(t, s, Q[:, 1])], axis=1)


def loop_distance(P, Q, n: int = 128) -> float:
    """Sup distance between uniform-speed parametrisations, minimised over start point
    and direction of the second loop."""
    A, B = resample(P, n), resample(Q, n)
    i = np.arange(n)
    shift = (i[:, None] + i[None, :]) % n       # [t, s] -> index of t + s
    best = math.inf
    for Bd in (B, B[::-1]):
        D = np.hypot(A[:, None, 0] - Bd[None, :, 0], A[:, None, 1] - Bd[None, :, 1])
        best = min(best, float(D[i[:, None], shift].max(axis=0).min()))
    return best


def _bbox_bound(P, Q) -> float:
    """Lower bound on the loop distance from bounding boxes."""
    return float(np.abs(np.concatenate([P.min(0) - Q.min(0), P.max(0) - Q.max(0)])).max())


def loop_metric(F: LoopFamily, G: LoopFamily, eps_grid, n: int = 128) -> float:
    """Smallest eps on the grid for which the eps-large loops of each family inject into
    the other family with every matched pair within eps; inf if none does."""
    grid = sorted(float(e) for e in eps_grid)
    if not grid:
        raise ValueError("empty eps grid")
    top = grid[-1]
    D = np.full((len(F), len(G)), math.inf)
    for i, P in enumerate(F.loops):
        for j, Q in enumerate(G.loops):
            if _bbox_bound(P, Q) <= top:
                D[i, j] = loop_distance(P, Q, n)

    def injects(dist, diam, eps):
        rows = np.flatnonzero(diam > eps)
        if len(rows) == 0:
            return True
        adj = csr_matrix(dist[rows] <= eps * (1 + 1e-9) + 1e-12)
        match = maximum_bipartite_matching(adj, perm_type="column")
        return bool(np.all(match >= 0))

    for eps in grid:
        if injects(D, F.diameters, eps) and injects(D.T, G.diameters, eps):
            return eps
    return math.inf


# ---------------------------------------------------------------------------
# crossing events in square annuli

@dataclass(frozen=True)
class Annulus:
    center: tuple                # a point; snapped to the nearest vertex
    r: int                       # inner radius in mesh units
    R: int                       # outer radius in mesh units


@dataclass(frozen=True)
class CrossingCounts:
    k_clusters: int
    four_arm_square: bool
    four_arm_hole: bool


class CrossingCounter:
    """Evaluates the annulus crossing events on traces of one map."""

    def __init__(self, m: PlanarMap, ann: Annulus):
        if not (1 <= ann.r < ann.R):
            raise ValueError("need 1 <= r < R")
        self.m, self.ann = m, ann
        pos = m.positions
        L = np.hypot(*(pos[m.edges[:, 1]] - pos[m.edges[:, 0]]).T)
        delta = float(np.median(L))
        c = pos[int(np.argmin(np.hypot(*(pos - np.asarray(ann.center, float)).T)))]
        lat = np.rint((pos - c) / delta).astype(np.int64)
        d = np.abs(lat).max(axis=1)
        if np.count_nonzero(d <= ann.R + 1) != (2 * ann.R + 3) ** 2:
            raise ValueError("annulus is not inside the domain")
        ends = m.edges.astype(np.int64)
        self.ends = ends
        self.inner_v = np.flatnonzero(d == ann.r)
        self.outer_v = np.flatnonzero(d == ann.R)
        in_ann = (d >= ann.r) & (d <= ann.R)
        self.ann_edges = in_ann[ends[:, 0]] & in_ann[ends[:, 1]]
        in_box = d <= ann.R
        self.box_edges = in_box[ends[:, 0]] & in_box[ends[:, 1]]
        fc = m.face_centers
        df = np.abs(np.rint(2 * (fc - c) / delta)).max(axis=1)        # twice the sup distance
        bounded = np.ones(m.n_faces, bool)
        bounded[m.outer_face] = False
        self.inner_f = np.flatnonzero(bounded & (df == 2 * ann.r - 1))
        self.outer_f = np.flatnonzero(bounded & (df == 2 * ann.R + 1))
        self.face_ends = np.stack([m.face_of[0::2], m.face_of[1::2]], axis=1).astype(np.int64)
        # dual adjacency over bounded faces for flux paths
        fe = self.face_ends
        keep = (fe[:, 0] != fe[:, 1]) & bounded[fe[:, 0]] & bounded[fe[:, 1]]
        self.dual_edge = {}
        for e in np.flatnonzero(keep):
            a, b = int(fe[e, 0]), int(fe[e, 1])
            self.dual_edge.setdefault((a, b), int(e))
            self.dual_edge.setdefault((b, a), int(e))
        k = np.flatnonzero(keep)
        self.dual_adj = csr_matrix((np.ones(2 * len(k)), (np.r_[fe[k, 0], fe[k, 1]], np.r_[fe[k, 1], fe[k, 0]])),
                                   shape=(m.n_faces, m.n_faces))

    def _crossing_labels(self, lab, inner, outer) -> list:
        return sorted(set(lab[inner].tolist()) & set(lab[outer].tolist()))

    def __call__(self, odd: np.ndarray, open_: np.ndarray) -> CrossingCounts:
        m = self.m
        lab = _kernels.components(m.n_vertices, self.ends, open_ & self.ann_edges)
        k = len(self._crossing_labels(lab, self.inner_v, self.outer_v))
        lab = _kernels.components(m.n_vertices, self.ends, open_ & self.box_edges)
        square = len(self._crossing_labels(lab, self.inner_v, self.outer_v)) >= 2
        flab = _kernels.components(m.n_faces, self.face_ends, ~open_ & self.ann_edges)
        holes = self._crossing_labels(flab, self.inner_f, self.outer_f)
        hole = False
        for a, b in itertools.combinations(holes, 2):
            if self._flux_parity(odd, np.flatnonzero(flab == a), np.flatnonzero(flab == b)) == 0:
                hole = True
                break
        return CrossingCounts(k, square, hole)

    def _flux_parity(self, odd, A, B) -> int:
        """Parity of the odd flux along a shortest dual path from faces A to faces B."""
        dist, pred, src = dijkstra(self.dual_adj, unweighted=True, indices=A,
                               min_only=True, return_predecessors=True)
        f = int(B[np.argmin(dist[B])])
        par = 0
        while pred[f] >= 0:
            g = int(pred[f])
            par ^= int(odd[self.dual_edge[(g, f)]])
            f = g
        return par


def crossing_counts(trace: CurrentTrace, ann: Annulus) -> CrossingCounts:
    return CrossingCounter(trace.map, ann)(trace.odd, trace.open)


# ---------------------------------------------------------------------------
# chain plumbing shared by the experiments

def _streams(seed: int, workers: int) -> list:
    return np.random.SeedSequence(seed).spawn(max(1, workers))


def _chunks(n: int, workers: int) -> list:
    w = max(1, workers)
    return [n // w + (1 if k < n % w else 0) for k in range(w)]


def _run(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _chain(m: PlanarMap, x, ss: np.random.SeedSequence, burn_in: int) -> tuple:
    chain = ClusterChain(m, x, seed=int(ss.generate_state(1)[0]))
    chain.burn_in(burn_in)
    return chain, np.random.default_rng(ss)


def dual_rays(m: PlanarMap, faces) -> tuple:
    """Concatenated dual-tree paths from each face to the outer face: (pointers, edges)."""
    tree = DualTree.of(m)
    ptr, edges = [0], []
    for f in faces:
        f = int(f)
        while f != m.outer_face:
            edges.append(int(tree.parent_edge[f]))
            f = int(tree.parent[f])
        ptr.append(len(edges))
    return np.array(ptr, np.int64), np.array(edges, np.int64)


# ---------------------------------------------------------------------------
# moments of the nesting field

@dataclass(frozen=True)
class MomentRow:
    points: tuple                # indices into the point set
    estimate: float
    se: float
    target: float | None
    target_at_faces: float | None
    label_averaged: bool

    @property
    def z(self) -> float | None:
        if self.target is None or self.se == 0:
            return None
        return (self.estimate - self.target) / self.se


@dataclass
class MomentReport:
    points: np.ndarray
    face_centers: np.ndarray
    rows: list
    n_samples: int
    mesh: float
    relevant_clusters: float     # mean number of clusters odd around two or more points
    variance_convention: str = ("limit field (1/sqrt(pi)) h_D with E[h_D(a) h_D(b)] = G_D(a, b), "
                                "-Laplacian G_D(a, .) = delta_a, zero on the boundary")

    def row(self, *idx) -> MomentRow:
        key = tuple(sorted(idx))
        for r in self.rows:
            if r.points == key:
                return r
        raise KeyError(key)

    def table(self) -> list:
        return [{"points": "-".join(map(str, r.points)), "order": len(r.points), "estimate": r.estimate,
                 "stderr": r.se, "target": r.target, "target_at_faces": r.target_at_faces,
                 "z": r.z, "label_averaged": r.label_averaged} for r in self.rows]


def _moment_job(args) -> dict:
    m, x, faces, ss, n, burn_in, n_batches = args
    ptr, pe = dual_rays(m, faces)
    chain, rng = _chain(m, x, ss, burn_in)
    k = len(faces)
    quads = list(itertools.combinations(range(k), 4))
    raw = np.empty((n, k))
    pairs = np.empty((n, k, k))
    four = np.empty((n, len(quads)))
    relevant = np.empty(n)
    for s in range(n):
        odd, _, lab = chain.step()
        nc = int(lab.max()) + 1
        M = _kernels.odd_membership(odd, lab, nc, ptr, pe, chain.ends)
        eps = rng.integers(0, 2, size=nc) * 2.0 - 1.0
        raw[s] = M @ eps
        Mf = M.astype(np.float64)
        pairs[s] = Mf @ Mf.T
        relevant[s] = np.count_nonzero(M.sum(axis=0) >= 2)
        for q, (a, b, c, d) in enumerate(quads):
            all4 = float(np.count_nonzero(M[a] & M[b] & M[c] & M[d]))
            four[s, q] = (pairs[s, a, b] * pairs[s, c, d] + pairs[s, a, c] * pairs[s, b, d]
                          + pairs[s, a, d] * pairs[s, b, c] - 2 * all4)
    return {"raw": raw, "pairs": pairs, "four": four, "quads": quads, "relevant": relevant,
            "n_batches": n_batches}


def _batch_means(series: list, n_batches: list) -> tuple:
    """Mean and batch-means standard error over per-worker chains."""
    means = []
    for v, b in zip(series, n_batches):
        b = max(1, min(b, len(v)))
        means.extend(np.mean(part, axis=0) for part in np.array_split(v, b))
    means = np.array(means)
    total = np.concatenate(series).mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(len(means)) if len(means) > 1 else np.full_like(total, np.nan)
    return total, se


def estimate_height_moments(domain: Domain, points, n_samples: int, x=X_CRITICAL, seed: int = 0,
                            workers: int = 1, burn_in: int = 500, n_batches: int = 100) -> MomentReport:
    """Mixed moments of the free nesting field at the faces containing the points.

    First and third moments use i.i.d. labels drawn per sample.  Second and fourth moments
    average the labels out exactly: given the clusters, E[h(a) h(b)] is the number of
    clusters odd around both faces, and the fourth moment is the matching pairing sum
    with the all-four term counted once.
    """
    pts = np.asarray(points, float).reshape(-1, 2)
    for p, q in itertools.combinations(range(len(pts)), 2):
        if np.allclose(pts[p], pts[q]):
            raise ValueError("points must be pairwise distinct")
    m = domain.map
    faces = [domain.face_at(p) for p in pts]
    if len(set(faces)) < len(faces):
        raise ValueError("two points share a face")
    streams = _streams(seed, workers)
    sizes = _chunks(n_samples, workers)
    nb = _chunks(n_batches, workers)
    jobs = [(m, x, faces, ss, n, burn_in, b) for ss, n, b in zip(streams, sizes, nb) if n > 0]
    res = _run(_moment_job, jobs, workers)
    bl = [r["n_batches"] for r in res]
    green = domain_green(domain)
    centres = m.face_centers[faces]
    k = len(pts)
    rows = []
    raw_mean, raw_se = _batch_means([r["raw"] for r in res], bl)
    for i in range(k):
        rows.append(MomentRow((i,), float(raw_mean[i]), float(raw_se[i]), 0.0, 0.0, False))
    pm, pse = _batch_means([r["pairs"] for r in res], bl)
    for i in range(k):
        rows.append(MomentRow((i, i), float(pm[i, i]), float(pse[i, i]), None, None, True))
    for i, j in itertools.combinations(range(k), 2):
        rows.append(MomentRow((i, j), float(pm[i, j]), float(pse[i, j]),
                              pairing_target([tuple(pts[i]), tuple(pts[j])], green),
                              pairing_target([tuple(centres[i]), tuple(centres[j])], green), True))
    if k >= 3:
        triples = list(itertools.combinations(range(k), 3))
        prods = [np.stack([r["raw"][:, list(t)].prod(axis=1) for t in triples], axis=1) for r in res]
        tm, tse = _batch_means(prods, bl)
        for q, t in enumerate(triples):
            rows.append(MomentRow(t, float(tm[q]), float(tse[q]), 0.0, 0.0, False))
    if k >= 4:
        fm, fse = _batch_means([r["four"] for r in res], bl)
        for q, t in enumerate(res[0]["quads"]):
            rows.append(MomentRow(t, float(fm[q]), float(fse[q]),
                                  pairing_target([tuple(pts[i]) for i in t], green),
                                  pairing_target([tuple(centres[i]) for i in t], green), True))
    relevant = float(np.concatenate([r["relevant"] for r in res]).mean())
    return MomentReport(pts, centres, rows, n_samples, domain.delta, relevant)


def lattice_height_covariance(domain: Domain, a, b, x=X_CRITICAL) -> float:
    """Exact E[H(a) H(b)] of the city-graph height function, from one sparse LU of K.

    Each height is a signed sum of centred dimer indicators along a dual path to the
    outer face; covariances of indicators of distinct edges come from K^{-1}.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla
    from .decorations import build_cg
    from .kasteleyn import build_weighting, kasteleyn_matrix
    cg = build_cg(domain.map, x)
    km = kasteleyn_matrix(cg, build_weighting(cg).phase)
    C = cg.map
    tree = DualTree.of(C)
    uf = cg.u_faces

    def steps(p):
        f, out = uf[domain.face_at(p)], []
        while f != C.outer_face:
            e = int(tree.parent_edge[f])
            out.append(2 * e if C.face_of[2 * e] == tree.parent[f] else 2 * e + 1)
            f = int(tree.parent[f])
        return np.array(out, np.int64)

    ha, hb = steps(a), steps(b)
    ea, eb = ha >> 1, hb >> 1
    if set(ea.tolist()) & set(eb.tolist()):
        raise ValueError("height paths share an edge; pick points further apart")
    sa = np.where(cg.white[C.target[ha]], 1.0, -1.0)
    sb = np.where(cg.white[C.target[hb]], 1.0, -1.0)
    lu = spla.splu(sp.csc_matrix(km.K))
    ra, ca = km.edge_index[ea, 0], km.edge_index[ea, 1]
    rb, cb = km.edge_index[eb, 0], km.edge_index[eb, 1]
    rows = np.unique(np.concatenate([ra, rb]))
    E = np.zeros((km.size, len(rows)), complex)
    E[rows, np.arange(len(rows))] = 1
    X = lu.solve(E)
    col = {int(r): k for k, r in enumerate(rows)}
    m1 = X[np.ix_(cb, [col[int(r)] for r in ra])]
    m2 = X[np.ix_(ca, [col[int(r)] for r in rb])]
    cov = -(km.edge_value[ea][:, None] * km.edge_value[eb][None, :]) * (m1.T * m2)
    return float(np.real(np.sum(sa[:, None] * sb[None, :] * cov)))


@dataclass(frozen=True)
class MeshTrend:
    sizes: tuple
    reports: tuple
    z: tuple                     # |z| of the two-point moment per size

    @property
    def non_increasing(self) -> bool:
        return all(b <= a for a, b in zip(self.z, self.z[1:]))


def mesh_trend(sizes, points, n_samples: int, seed: int = 0, workers: int = 1,
               x=X_CRITICAL) -> MeshTrend:
    """Moment reports on unit squares of decreasing mesh; the trend tracks the |z| of the
    two-point moment of the first two points."""
    reps = []
    for N in sizes:
        reps.append(estimate_height_moments(unit_square(N), points, n_samples, x, seed + N, workers))
    return MeshTrend(tuple(sizes), tuple(reps), tuple(abs(r.row(0, 1).z) for r in reps))


def unit_square(N: int) -> Domain:
    from .planar_map import build_square_domain
    return build_square_domain("rectangle", (1.0, 1.0), 1.0 / N)


def unit_disk(N: int) -> Domain:
    from .planar_map import build_square_domain
    return build_square_domain("disk", 1.0, 1.0 / N)


# ---------------------------------------------------------------------------
# conformal radius by walk on spheres

@dataclass(frozen=True)
class RadiusEstimate:
    value: float
    log_mean: float
    log_se: float
    n_walks: int


def conformal_radius(loop, z0, rng: np.random.Generator, n_walks: int = 400,
                     tol: float | None = None, max_steps: int = 10_000) -> RadiusEstimate:
    """exp of the mean log-distance from z0 to the Brownian exit point of the loop's interior."""
    P = np.asarray(loop, float)
    ring = shapely.LinearRing(P)
    z0 = np.asarray(z0, float)
    if not shapely.Polygon(P).contains(shapely.Point(z0)):
        raise ValueError("base point is not inside the loop")
    if tol is None:
        tol = 1e-4 * math.sqrt(abs(_area(P)))
    pos = np.repeat(z0[None, :], n_walks, axis=0)
    active = np.ones(n_walks, bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        d = shapely.distance(shapely.points(pos[idx]), ring)
        near = d < tol
        active[idx[near]] = False
        move = idx[~near]
        th = rng.uniform(0, 2 * np.pi, len(move))
        pos[move] += d[~near, None] * np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        raise RuntimeError("walk on spheres did not terminate")
    exits = shapely.line_interpolate_point(ring, shapely.line_locate_point(ring, shapely.points(pos)))
    xy = shapely.get_coordinates(exits)
    logs = np.log(np.hypot(*(xy - z0).T))
    mu = float(logs.mean())
    se = float(logs.std(ddof=1) / math.sqrt(n_walks)) if n_walks > 1 else math.nan
    return RadiusEstimate(math.exp(mu), mu, se, n_walks)


# ---------------------------------------------------------------------------
# clusters surrounding a point

@dataclass
class ClusterCountTable:
    eps: tuple
    mean_count: tuple
    se: tuple
    ratio: tuple                 # mean N(eps) / log(1/eps)
    ratio_se: tuple
    limit: float = CLUSTER_COUNT_LIMIT
    n_samples: int = 0
    counts: np.ndarray = field(default=None, repr=False)   # per sample and eps

    def table(self) -> list:
        return [{"eps": e, "mean_count": n, "stderr": s, "ratio": r, "ratio_stderr": rs, "limit": self.limit}
                for e, n, s, r, rs in zip(self.eps, self.mean_count, self.se, self.ratio, self.ratio_se)]


def surrounding_radii(m: PlanarMap, odd, open_, lab, z0, builder: LoopBuilder, ray: np.ndarray,
                      rng: np.random.Generator, eps_range: tuple, n_walks: int, tol: float) -> list:
    """Conformal radii, seen from z0, of outer boundaries of clusters surrounding z0.

    Koebe's bound d <= R <= 4d, with d the distance from z0 to the boundary, settles
    every threshold in eps_range = (lo, hi) unless lo < 4d and d < hi; only those radii
    are estimated.  Boundaries with d >= hi report d, and those with 4d < lo are dropped.
    """
    lo, hi = eps_range
    ends = m.edges
    cands = np.unique(lab[ends[ray[open_[ray]], 0]])
    edge_lab = lab[ends[:, 0]]
    pt = shapely.Point(z0)
    out = []
    for c in cands:
        lp = builder.outer_loop(open_ & (edge_lab == c))
        poly = shapely.Polygon(lp.points)
        if not poly.contains(pt):
            continue
        d = float(shapely.distance(pt, poly.exterior))
        if d >= hi:
            out.append(d)
        elif 4 * d < lo:
            continue
        else:
            out.append(conformal_radius(lp.points, z0, rng, n_walks, tol).value)
    return sorted(out, reverse=True)


def _cluster_job(args) -> np.ndarray:
    m, x, z0, eps, ss, n, burn_in, n_walks, tol, face = args
    chain, rng = _chain(m, x, ss, burn_in)
    builder = LoopBuilder(m)
    _, ray = dual_rays(m, [face])
    counts = np.zeros((n, len(eps)))
    for s in range(n):
        odd, op, lab = chain.step()
        radii = np.array(surrounding_radii(m, odd, op, lab, z0, builder, ray, rng, (min(eps), max(eps)), n_walks, tol))
        counts[s] = [(radii >= e).sum() for e in eps]
    return counts


def cluster_count_experiment(domain: Domain, eps_list, n_samples: int, x=X_CRITICAL, seed: int = 0,
                             workers: int = 1, burn_in: int = 500, n_walks: int = 200,
                             point=None) -> ClusterCountTable:
    """Mean number of clusters surrounding a point whose outer boundary has conformal radius
    at least eps, divided by log(1/eps).  The point defaults to the centre of the face at
    the domain centre."""
    m = domain.map
    face = domain.face_at(domain.center if point is None else point)
    z0 = tuple(m.face_centers[face])
    eps = tuple(float(e) for e in eps_list)
    tol = domain.delta / 4
    jobs = [(m, x, z0, eps, ss, n, burn_in, n_walks, tol, face)
            for ss, n in zip(_streams(seed, workers), _chunks(n_samples, workers)) if n > 0]
    counts = np.concatenate(_run(_cluster_job, jobs, workers))
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(counts)) if len(counts) > 1 else np.zeros(len(eps))
    logs = np.log(1 / np.array(eps))
    return ClusterCountTable(eps, tuple(mean), tuple(se), tuple(mean / logs), tuple(se / logs),
                             n_samples=len(counts), counts=counts)


# ---------------------------------------------------------------------------
# Brownian exit times

class UnitExitTime:
    """Exit time of standard Brownian motion from [-1, 1] started at 0, sampled by
    inverting its distribution function tabulated on a fine grid."""

    def __init__(self, t_max: float = 40.0, n_grid: int = 400_001):
        t = np.linspace(0.0, t_max, n_grid)
        self.t = t
        self.cdf = self.distribution(t)

    @staticmethod
    def distribution(t, terms: int = 60) -> np.ndarray:
        """P[T <= t]: reflection series for t < 1, spectral series otherwise."""
        t = np.atleast_1d(np.asarray(t, float))
        out = np.zeros_like(t)
        small = (t > 0) & (t < 1)
        k = np.arange(terms)
        if small.any():
            ts = t[small][:, None]
            out[small] = 2 * np.sum((-1.0) ** k * erfc((2 * k + 1) / np.sqrt(2 * ts)), axis=1)
        big = t >= 1
        if big.any():
            tb = t[big][:, None]
            surv = 4 / np.pi * np.sum((-1.0) ** k / (2 * k + 1) * np.exp(-(2 * k + 1) ** 2 * np.pi ** 2 * tb / 8), axis=1)
            out[big] = 1 - surv
        return np.clip(out, 0.0, 1.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n)
        cdf = np.maximum.accumulate(self.cdf)
        keep = np.r_[True, np.diff(cdf) > 0]
        return np.interp(u, cdf[keep], self.t[keep])

    def mean(self) -> float:
        return float(np.trapezoid(1 - self.cdf, self.t))


def interval_exit_time(a: float, b: float, n: int, rng: np.random.Generator,
                       unit: UnitExitTime | None = None) -> np.ndarray:
    """Exit times of [-a, b] from 0, exactly: from y, run the symmetric interval of half-width
    min(y + a, b - y), whose exit time is that width squared times a unit exit time and whose
    exit side is a fair coin independent of the time."""
    if a <= 0 or b <= 0:
        raise ValueError("interval must contain 0 in its interior")
    unit = unit or UnitExitTime()
    y = np.zeros(n)
    T = np.zeros(n)
    live = np.arange(n)
    while len(live):
        r = np.minimum(y[live] + a, b - y[live])
        T[live] += r ** 2 * unit.sample(len(live), rng)
        y[live] += np.where(rng.random(len(live)) < 0.5, r, -r)
        live = live[(y[live] > -a + 1e-12 * a) & (y[live] < b - 1e-12 * b)]
    return T


@dataclass(frozen=True)
class ExitMeanReport:
    estimate: float
    se: float
    first: float                 # mean exit time of [-pi, (sqrt2 - 1) pi]
    second: float                # mean exit time of [-pi, pi]
    n_paths: int
    target: float = EXIT_MEAN

    @property
    def relative_error(self) -> float:
        return abs(self.estimate - self.target) / self.target


def brownian_exit_mean(n_paths: int, rng: np.random.Generator | None = None, chunk: int = 250_000) -> ExitMeanReport:
    if n_paths < 1:
        raise ValueError("need at least one path")
    rng = rng or np.random.default_rng()
    unit = UnitExitTime()
    t1s, t2s = [], []
    for n in _chunks(n_paths, max(1, -(-n_paths // chunk))):
        t1s.append(interval_exit_time(math.pi, (math.sqrt(2) - 1) * math.pi, n, rng, unit))
        t2s.append(interval_exit_time(math.pi, math.pi, n, rng, unit))
    t1, t2 = np.concatenate(t1s), np.concatenate(t2s)
    s = t1 + t2
    se = float(s.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.nan
    return ExitMeanReport(float(s.mean()), se, float(t1.mean()), float(t2.mean()), n_paths)
