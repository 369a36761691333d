"""Kasteleyn weightings, determinants, inverses, exact dimer sampling and fermionic observables."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .decorations import (FACE_STREET, ROAD, VERTEX_STREET, BipartiteMap, CityGraph)
from .planar_map import Corner, corner_data


class KasteleynError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PhaseAssignment:
    phase: np.ndarray            # unit complex per edge

    def residuals(self, bm: BipartiteMap) -> np.ndarray:
        return alternating_residuals(bm, self.phase)


def alternating_residuals(bm: BipartiteMap, phase) -> np.ndarray:
    """|prod of alternating phase ratios - (-1)^(k+1)| on every bounded face."""
    m = bm.map
    out = []
    for f in m.bounded_faces:
        cyc = m.face_cycles[f]
        k2 = len(cyc)
        num = np.prod([phase[cyc[t] >> 1] for t in range(0, k2, 2)])
        den = np.prod([phase[cyc[t] >> 1] for t in range(1, k2, 2)])
        out.append(abs(num / den - (-1) ** (k2 // 2 + 1)))
    return np.array(out)


def build_weighting(cg: CityGraph, check: bool = True, tol: float = 1e-12) -> PhaseAssignment:
    """Roads get -1, vertex streets exp(i theta_v / 2), face streets exp(-i theta_u / 2)."""
    cd = corner_data(cg.base)
    n = cg.base.n_half
    phase = np.empty(3 * n, dtype=complex)
    phase[:n] = -1.0
    phase[n:2 * n] = np.exp(0.5j * cd.vertex_angle)
    phase[2 * n:] = np.exp(-0.5j * cd.face_angle)
    pa = PhaseAssignment(phase)
    if check:
        r = pa.residuals(cg)
        if r.size and r.max() > tol:
            raise KasteleynError(f"alternating condition fails on {int(np.sum(r > tol))} faces")
    return pa


def real_kasteleyn_signs(bm: BipartiteMap) -> np.ndarray:
    """A +-1 Kasteleyn sign per edge for any bipartite plane map (tree / dual-tree sweep)."""
    m = bm.map
    E = m.n_edges
    sign = np.ones(E)
    # spanning tree edges keep +1
    adj = [[] for _ in range(m.n_vertices)]
    for e, (a, b) in enumerate(m.edges):
        adj[a].append((b, e))
        adj[b].append((a, e))
    seen = np.zeros(m.n_vertices, bool)
    tree = np.zeros(E, bool)
    seen[0] = True
    q = deque([0])
    while q:
        a = q.popleft()
        for b, e in adj[a]:
            if not seen[b]:
                seen[b] = True
                tree[e] = True
                q.append(b)
    # dual tree on the remaining edges, rooted at the outer face
    fo = m.face_of
    dadj = [[] for _ in range(m.n_faces)]
    for e in np.flatnonzero(~tree):
        f, g = fo[2 * e], fo[2 * e + 1]
        dadj[f].append((g, e))
        dadj[g].append((f, e))
    parent_edge = np.full(m.n_faces, -1)
    order = [m.outer_face]
    fseen = np.zeros(m.n_faces, bool)
    fseen[m.outer_face] = True
    q = deque([m.outer_face])
    while q:
        f = q.popleft()
        for g, e in dadj[f]:
            if not fseen[g]:
                fseen[g] = True
                parent_edge[g] = e
                order.append(g)
                q.append(g)
    for f in reversed(order[1:]):
        cyc = m.face_cycles[f]
        e0 = parent_edge[f]
        prod = np.prod([sign[h >> 1] for h in cyc if (h >> 1) != e0])
        target = (-1) ** (len(cyc) // 2 + 1)
        # each edge appears once in a face of a bridgeless map
        sign[e0] = target * prod
    return sign


# ---------------------------------------------------------------------------
# matrices

@dataclass(frozen=True, eq=False)
class KasteleynMatrix:
    K: np.ndarray                # dense, rows black, columns white
    black: np.ndarray            # graph vertex of each row
    white: np.ndarray            # graph vertex of each column
    edge_index: np.ndarray       # (n_edges, 2): (row, col) of each graph edge
    edge_value: np.ndarray       # signed weight of each graph edge; parallel edges share an entry

    @property
    def size(self) -> int:
        return self.K.shape[0]


def kasteleyn_matrix(bm: BipartiteMap, phase=None, order: str = "corner") -> KasteleynMatrix:
    """Rows/columns follow the corner order for city graphs, vertex order otherwise."""
    m = bm.map
    white = np.flatnonzero(bm.white)
    black = np.flatnonzero(~bm.white)
    if len(white) != len(black):
        raise KasteleynError("colour classes differ in size: no perfect matching")
    if isinstance(bm, CityGraph) and order == "corner":
        n = bm.n_corners
        roads = m.edges[:n]
        white = np.where(bm.white[roads[:, 0]], roads[:, 0], roads[:, 1])
        black = np.where(bm.white[roads[:, 0]], roads[:, 1], roads[:, 0])
    row = np.full(m.n_vertices, -1)
    col = np.full(m.n_vertices, -1)
    row[black] = np.arange(len(black))
    col[white] = np.arange(len(white))
    if phase is None:
        phase = real_kasteleyn_signs(bm)
    K = np.zeros((len(black), len(white)), dtype=complex)
    idx = np.empty((m.n_edges, 2), dtype=np.int64)
    val = np.asarray(phase) * m.weights
    for e, (a, b) in enumerate(m.edges):
        bb, ww = (a, b) if row[a] >= 0 else (b, a)
        idx[e] = (row[bb], col[ww])
        K[row[bb], col[ww]] += val[e]
    return KasteleynMatrix(K, black, white, idx, val)


def log_abs_det(K: np.ndarray) -> tuple:
    """(log|det K|, phase of det K) via pivoted LU."""
    n = K.shape[0]
    if n == 0:
        return 0.0, 1.0 + 0j
    if n > 3000:
        lu = spla.splu(sp.csc_matrix(K))
        d = np.concatenate([lu.U.diagonal()])
        perm_sign = _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
    else:
        lu, piv = sla.lu_factor(K, check_finite=False)
        d = np.diag(lu)
        perm_sign = (-1) ** int(np.sum(piv != np.arange(n)))
    if np.any(d == 0):
        raise KasteleynError("singular Kasteleyn matrix: no perfect matching")
    logabs = float(np.sum(np.log(np.abs(d))))
    ph = perm_sign * np.prod(d / np.abs(d))
    return logabs, complex(ph)


def _perm_parity(p) -> int:
    p = np.asarray(p)
    seen = np.zeros(len(p), bool)
    s = 1
    for i in range(len(p)):
        if not seen[i]:
            j, L = i, 0
            while not seen[j]:
                seen[j] = True
                j = p[j]
                L += 1
            if L % 2 == 0:
                s = -s
    return s


def partition_function(km: KasteleynMatrix) -> float:
    logabs, _ = log_abs_det(km.K)
    return math.exp(logabs)


def invert(km: KasteleynMatrix) -> np.ndarray:
    """K^{-1}, indexed (white column, black row)."""
    try:
        lu = sla.lu_factor(km.K, check_finite=False)
    except (ValueError, sla.LinAlgError) as exc:
        raise KasteleynError("singular Kasteleyn matrix") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise KasteleynError("singular Kasteleyn matrix")
    return sla.lu_solve(lu, np.eye(km.size, dtype=complex), check_finite=False)


def edge_probabilities(km: KasteleynMatrix, Kinv: np.ndarray) -> np.ndarray:
    r, c = km.edge_index[:, 0], km.edge_index[:, 1]
    return np.real(km.edge_value * Kinv[c, r])


# ---------------------------------------------------------------------------
# exact sampling

def sample_dimers(km: KasteleynMatrix, Kinv: np.ndarray, n_samples: int, rng: np.random.Generator,
                  batch: int = 2048, tol: float = 1e-8) -> np.ndarray:
    """Exact samples of the dimer measure by sequential conditioning over rows.

    Returns an (n_samples, n_rows) array giving the matched column of every row.
    """
    K = km.K
    n = km.size
    nbrs = [np.flatnonzero(K[b]) for b in range(n)]
    out = np.empty((n_samples, n), dtype=np.int64)
    done = 0
    while done < n_samples:
        B = min(batch, n_samples - done, max(1, int(2e7 // max(n * n, 1))))
        inv = np.broadcast_to(Kinv, (B, n, n)).copy()
        ar = np.arange(B)
        for b in range(n):
            ws = nbrs[b]
            p = K[b, ws][None, :] * inv[:, ws, b]
            pr = p.real
            bad = (np.abs(p.imag) > tol) | (pr < -tol) | (pr > 1 + tol) | \
                (np.abs(pr.sum(axis=1) - 1) > 1e-6)[:, None]
            if bad.any():
                rows = np.flatnonzero(bad.any(axis=1))
                for s in rows:
                    inv[s] = _refactor(K, out[done + s, :b], b)
                p = K[b, ws][None, :] * inv[:, ws, b]
                pr = p.real
            pr = np.clip(pr, 0.0, None)
            cum = np.cumsum(pr, axis=1)
            u = rng.random(B) * cum[:, -1]
            k = np.minimum((cum < u[:, None]).sum(axis=1), len(ws) - 1)
            w = ws[k]
            out[done:done + B, b] = w
            col = inv[ar, :, b]
            row = inv[ar, w, :]
            piv = inv[ar, w, b]
            inv -= col[:, :, None] * (row / piv[:, None])[:, None, :]
        done += B
    return out


def _refactor(K, matched_cols, b_next):
    """Inverse of the reduced matrix, embedded with zeros for removed rows and columns."""
    n = K.shape[0]
    rows = np.arange(b_next, n)
    used = np.zeros(n, bool)
    used[matched_cols] = True
    cols = np.flatnonzero(~used)
    sub = K[np.ix_(rows, cols)]
    full = np.zeros((n, n), dtype=complex)
    full[np.ix_(cols, rows)] = np.linalg.inv(sub)
    return full


def matched_edges(km: KasteleynMatrix, cols: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Convert row->column samples to boolean edge masks over the graph edges.

    When several edges share a matrix entry one of them is picked with probability
    proportional to its weight; without `rng` the first one is taken.
    """
    cols = np.atleast_2d(cols)
    r, c = km.edge_index[:, 0], km.edge_index[:, 1]
    mask = cols[:, r] == c[None, :]
    groups = {}
    for e, key in enumerate(map(tuple, km.edge_index)):
        groups.setdefault(key, []).append(e)
    for es in groups.values():
        if len(es) < 2:
            continue
        es = np.array(es)
        hit = mask[:, es[0]].copy()
        mask[:, es] = False
        w = np.abs(km.edge_value[es])
        if rng is None:
            pick = np.zeros(len(hit), dtype=np.int64)
        else:
            pick = np.searchsorted(np.cumsum(w) / w.sum(), rng.random(len(hit)), side="right")
            pick = np.minimum(pick, len(es) - 1)
        rows = np.flatnonzero(hit)
        mask[rows, es[pick[rows]]] = True
    return mask


# ---------------------------------------------------------------------------
# monomers and fermions

@dataclass(frozen=True)
class SignPath:
    faces: tuple                 # primal faces from u(c_j) to u(c_i)
    crossed: tuple               # primal edges crossed, in order
    winding: float               # total winding of the extended path

    @property
    def kappa(self) -> complex:
        return complex(np.exp(0.5j * self.winding))


def sign_path(cg: CityGraph, c_i: Corner, c_j: Corner, faces=None) -> SignPath:
    """Dual path through bounded faces from u(c_j) to u(c_i), shortest by default."""
    m = cg.base
    if c_i.face == m.outer_face or c_j.face == m.outer_face:
        raise ValueError("sign paths are defined between corners of bounded faces")
    if faces is None:
        faces = _face_path(m, c_j.face, c_i.face)
    faces = tuple(int(f) for f in faces)
    crossed = []
    for f, g in zip(faces[:-1], faces[1:]):
        e = _shared_edge(m, f, g)
        crossed.append(e)
    cs = m.face_centers
    dirs = [c_j.direction + np.pi]
    for f, g in zip(faces[:-1], faces[1:]):
        d = cs[g] - cs[f]
        dirs.append(math.atan2(d[1], d[0]))
    dirs.append(c_i.direction)
    from .oracle import path_winding
    return SignPath(faces, tuple(crossed), path_winding(dirs))


def _face_path(m, f0, f1):
    fo = m.face_of
    adj = {}
    for e in range(m.n_edges):
        a, b = fo[2 * e], fo[2 * e + 1]
        if m.outer_face in (a, b) or a == b:
            continue
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    prev = {f0: None}
    q = deque([f0])
    while q:
        f = q.popleft()
        if f == f1:
            break
        for g in sorted(adj.get(f, [])):
            if g not in prev:
                prev[g] = f
                q.append(g)
    if f1 not in prev:
        raise ValueError("faces not connected through bounded faces")
    path = [f1]
    while path[-1] != f0:
        path.append(prev[path[-1]])
    return path[::-1]


def _shared_edge(m, f, g) -> int:
    fo = m.face_of
    for e in range(m.n_edges):
        if {fo[2 * e], fo[2 * e + 1]} == {f, g}:
            return e
    raise ValueError("faces are not adjacent")


@dataclass(frozen=True)
class MonomerCorrelator:
    value: complex               # K^{-1}(w_i, b_j)
    kappa: complex
    ratio: complex               # value / (i kappa); real up to rounding

    @property
    def kadanoff_ceva(self) -> float:
        return 2.0 * self.ratio.real


def monomer_correlator(cg: CityGraph, km: KasteleynMatrix, Kinv: np.ndarray, i: int, j: int,
                       path: SignPath | None = None) -> MonomerCorrelator:
    """K^{-1}(w_i, b_j) for corners (half-edges) i and j, with its phase decomposition."""
    cd = corner_data(cg.base)
    ci, cj = cd.corners[i], cd.corners[j]
    if ci.vertex == cj.vertex:
        raise ValueError("corners share a vertex")
    if path is None:
        path = sign_path(cg, ci, cj)
    val = complex(Kinv[i, j])
    return MonomerCorrelator(val, path.kappa, val / (1j * path.kappa))


def signed_monomer_partition(cg: CityGraph, i: int, j: int, path: SignPath, budget=None) -> float:
    """Z^gamma(w_i, b_j) by enumeration: covers of the graph minus w_i, b_j, with edges
    crossed by the path counted negatively."""
    from .oracle import DEFAULT_BUDGET, dimer_partition
    signs = np.ones(cg.map.n_edges)
    n = cg.base.n_half
    for e in path.crossed:
        for h in (2 * e, 2 * e + 1):
            signs[2 * n + h] = -1.0
    removed = (int(cg.road_white(i)), int(cg.road_black(j)))
    return float(np.real(dimer_partition(cg, signs, removed, budget or DEFAULT_BUDGET)))


def kadanoff_ceva(cg, km, Kinv, i, j, path=None) -> float:
    return monomer_correlator(cg, km, Kinv, i, j, path).kadanoff_ceva


def fermion_identity_residual(cg: CityGraph, Kinv: np.ndarray, i: int, j: int, budget=None) -> float:
    """|K^{-1}(w_i, b_j) + (i/2) f(c_i, c_j)| with f from brute-force path enumeration."""
    from .oracle import DEFAULT_BUDGET, corner_observable
    cd = corner_data(cg.base)
    f = corner_observable(cg.base, cg.x, cd.corners[i], cd.corners[j], budget or DEFAULT_BUDGET)
    return abs(Kinv[i, j] + 0.5j * f)


# ---------------------------------------------------------------------------
# continuum observables

def continuum_f(w: complex, z: complex, domain: str = "half-plane", branch: str = "-") -> complex:
    """Holomorphic fermion kernels in the upper half-plane or unit disk."""
    w, z = complex(w), complex(z)
    if w == z:
        raise ValueError("coincident points")
    if domain == "half-plane":
        return 1j / (2 * np.pi * (z - w.conjugate())) if branch == "-" else 1 / (2 * np.pi * (z - w))
    if domain == "unit-disk":
        # pull back from the half-plane by phi(z) = i (1 + z) / (1 - z); spinor weight sqrt(phi')
        phi = lambda t: 1j * (1 + t) / (1 - t)
        dphi = lambda t: 2j / (1 - t) ** 2
        sw, sz = np.sqrt(dphi(w)), np.sqrt(dphi(z))
        if branch == "-":
            return np.conj(sw) * sz * continuum_f(phi(w), phi(z), "half-plane", "-")
        return sw * sz * continuum_f(phi(w), phi(z), "half-plane", "+")
    raise ValueError(f"unknown domain {domain!r}")
