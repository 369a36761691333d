"""Brute-force enumerators used as ground truth on tiny graphs.

Sums use math.fsum so exact identities can be asserted at the 1e-12 level.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .planar_map import PlanarMap

BETA_CRITICAL = 0.5 * math.log(math.sqrt(2.0) + 1.0)


class BudgetExceeded(ValueError):
    pass


@dataclass(frozen=True)
class EnumerationBudget:
    max_cycle_rank: int = 14
    max_flow_edges: int = 12
    max_matching_vertices: int = 32
    max_spin_sites: int = 22
    poisson_cutoff: int = 40

    def check(self, what: str, size: int):
        limit = {"cycles": self.max_cycle_rank, "flows": self.max_flow_edges,
                 "matchings": self.max_matching_vertices, "spins": self.max_spin_sites}[what]
        if size > limit:
            raise BudgetExceeded(f"{what}: size {size} exceeds budget {limit}")


DEFAULT_BUDGET = EnumerationBudget()


# ---------------------------------------------------------------------------
# even subgraphs

def _incidence_parity_solution(n_vertices, edges, sources):
    """Edge set whose odd-degree vertices are exactly `sources` (spanning-forest paths)."""
    adj = defaultdict(list)
    for e, (a, b) in enumerate(edges):
        adj[a].append((b, e))
        adj[b].append((a, e))
    mask = np.zeros(len(edges), bool)
    if not sources:
        return mask
    s, t = sources
    parent = {s: (None, None)}
    todo = [s]
    while todo:
        a = todo.pop()
        for b, e in adj[a]:
            if b not in parent:
                parent[b] = (a, e)
                todo.append(b)
    if t not in parent:
        raise ValueError("sources lie in different components")
    v = t
    while v != s:
        a, e = parent[v]
        mask[e] ^= True
        v = a
    return mask


def cycle_basis_masks(n_vertices, edges) -> np.ndarray:
    """Fundamental cycles of a spanning forest, as boolean edge masks."""
    edges = np.asarray(edges).reshape(-1, 2)
    parent = list(range(n_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree, extra = [], []
    for e, (a, b) in enumerate(edges):
        ra, rb = find(a), find(b)
        if ra == rb:
            extra.append(e)
        else:
            parent[ra] = rb
            tree.append(e)
    basis = []
    tree_edges = [tuple(edges[e]) for e in tree]
    for e in extra:
        a, b = edges[e]
        sub = [(tuple(edges[t]), t) for t in tree]
        path = _incidence_parity_solution(n_vertices, [p for p, _ in sub], (int(a), int(b)) if a != b else None)
        mask = np.zeros(len(edges), bool)
        mask[e] = True
        for k, (_, t) in enumerate(sub):
            if path[k]:
                mask[t] ^= True
        basis.append(mask)
    del tree_edges
    return np.array(basis, dtype=bool).reshape(-1, len(edges))


def enum_even_subgraphs(m: PlanarMap, x=None, sources=None, budget=DEFAULT_BUDGET):
    """All edge sets with odd degree exactly at `sources` (None or a pair of vertices).

    Returns (masks of shape (N, E), weights prod x_e).
    """
    edges = m.edges
    E = len(edges)
    x = np.ones(E) if x is None else np.broadcast_to(np.asarray(x, float), (E,))
    basis = cycle_basis_masks(m.n_vertices, edges)
    budget.check("cycles", len(basis))
    base = _incidence_parity_solution(m.n_vertices, [tuple(e) for e in edges],
                                      tuple(sources) if sources else None)
    k = len(basis)
    coeffs = ((np.arange(2 ** k)[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    masks = np.zeros((2 ** k, E), bool) ^ base[None, :]
    for i in range(k):
        masks[coeffs[:, i]] ^= basis[i]
    weights = np.array([math.prod(x[mk]) for mk in masks])
    return masks, weights


def high_temperature_sums(m: PlanarMap, x, budget=DEFAULT_BUDGET):
    """Z_hT and, per edge, the sums Z_plus (even subgraphs containing e) and Z_minus."""
    masks, w = enum_even_subgraphs(m, x, None, budget)
    Z = math.fsum(w)
    zp = np.array([math.fsum(w[masks[:, e]]) for e in range(m.n_edges)])
    zm = np.array([math.fsum(w[~masks[:, e]]) for e in range(m.n_edges)])
    return Z, zp, zm


def ising_edge_correlations(m: PlanarMap, x, budget=DEFAULT_BUDGET) -> np.ndarray:
    """mu_G[s_v s_v'] per edge by summing over all spin configurations; coupling tanh = x."""
    n = m.n_vertices
    budget.check("spins", n)
    x = np.broadcast_to(np.asarray(x, float), (m.n_edges,))
    a, b = m.edges[:, 0], m.edges[:, 1]
    spins = 1 - 2 * ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1)
    prod = spins[:, a] * spins[:, b]
    w = np.prod(1 + x[None, :] * prod, axis=1)
    return np.array([math.fsum(w * prod[:, e]) for e in range(m.n_edges)]) / math.fsum(w)


def dual_ising_edge_correlations(m: PlanarMap, x, budget=DEFAULT_BUDGET) -> np.ndarray:
    """mu_{G*}[s_u s_u'] per edge: spins on all faces, weight x per disagreeing dual edge."""
    nf = m.n_faces
    budget.check("spins", nf)
    x = np.broadcast_to(np.asarray(x, float), (m.n_edges,))
    fa, fb = m.face_of[0::2], m.face_of[1::2]
    spins = 1 - 2 * ((np.arange(2 ** nf)[:, None] >> np.arange(nf)[None, :]) & 1)
    prod = spins[:, fa] * spins[:, fb]
    w = np.prod(np.where(prod < 0, x[None, :], 1.0), axis=1)
    return np.array([math.fsum(w * prod[:, e]) for e in range(m.n_edges)]) / math.fsum(w)


# ---------------------------------------------------------------------------
# Kadanoff-Ceva sums and the winding observable

def crossing_sign(mask: np.ndarray, crossed_edges) -> int:
    return -1 if int(np.sum(mask[list(crossed_edges)])) % 2 else 1


def kadanoff_ceva_sum(m: PlanarMap, x, v_i: int, v_j: int, crossed_edges, budget=DEFAULT_BUDGET) -> float:
    """Signed sum over edge sets with odd degree at v_i and v_j, divided by Z_hT."""
    masks, w = enum_even_subgraphs(m, x, (v_i, v_j), budget)
    sg = np.array([crossing_sign(mk, crossed_edges) for mk in masks])
    Z = math.fsum(enum_even_subgraphs(m, x, None, budget)[1])
    return math.fsum(sg * w) / Z


def _turn(a: float, b: float) -> float:
    d = (b - a + np.pi) % (2 * np.pi) - np.pi
    if abs(abs(d) - np.pi) < 1e-12:
        raise ValueError("path reverses direction")
    return d


def path_winding(directions) -> float:
    return float(sum(_turn(directions[k], directions[k + 1]) for k in range(len(directions) - 1)))


def rho_winding(m: PlanarMap, mask: np.ndarray, corner_i, corner_j) -> float:
    """Winding of the path from corner i through the edge set to the reversed corner j.

    Items at each vertex (edges of the set, plus the corner segments) are sorted by angle
    and paired consecutively, which is a non-crossing pairing.
    """
    pos = m.positions
    items = defaultdict(list)          # vertex -> list of (angle, tag)
    for e in np.flatnonzero(mask):
        a, b = m.edges[e]
        for v, o in ((a, b), (b, a)):
            d = pos[o] - pos[v]
            items[int(v)].append((math.atan2(d[1], d[0]), ("e", int(e))))
    # corner segment as seen from its vertex points toward the face
    items[corner_i.vertex].append((_wrap(corner_i.direction + np.pi), ("ci", -1)))
    items[corner_j.vertex].append((_wrap(corner_j.direction + np.pi), ("cj", -1)))
    partner = {}
    for v, lst in items.items():
        lst.sort()
        if len(lst) % 2:
            raise ValueError("odd number of items at a vertex")
        for k in range(0, len(lst), 2):
            partner[(v, lst[k][1])] = lst[k + 1]
            partner[(v, lst[k + 1][1])] = lst[k]
    dirs = [corner_i.direction]
    v, tag = corner_i.vertex, ("ci", -1)
    steps = 0
    while True:
        ang, nxt = partner[(v, tag)]
        if nxt[0] == "cj":
            dirs.append(_wrap(corner_j.direction + np.pi))
            break
        if nxt[0] == "ci":
            raise ValueError("path returned to its start")
        e = nxt[1]
        a, b = m.edges[e]
        w = int(b if a == v else a)
        dirs.append(ang)
        v, tag = w, ("e", e)
        steps += 1
        if steps > 4 * m.n_edges + 4:
            raise RuntimeError("runaway path")
    return path_winding(dirs)


def _wrap(a: float) -> float:
    return (a + np.pi) % (2 * np.pi) - np.pi


def corner_observable(m: PlanarMap, x, corner_i, corner_j, budget=DEFAULT_BUDGET) -> complex:
    """Complex corner observable: sum of exp(-i wind/2) prod x over edge sets with sources."""
    if corner_i.vertex == corner_j.vertex:
        raise ValueError("corners share a vertex")
    masks, w = enum_even_subgraphs(m, x, (corner_i.vertex, corner_j.vertex), budget)
    Z = math.fsum(enum_even_subgraphs(m, x, None, budget)[1])
    terms = np.array([np.exp(-0.5j * rho_winding(m, mk, corner_i, corner_j)) for mk in masks])
    re = math.fsum((terms.real * w).tolist())
    im = math.fsum((terms.imag * w).tolist())
    return complex(re, im) / Z


# ---------------------------------------------------------------------------
# dimers

def enum_dimer_covers(n_vertices: int, edges, weights, budget=DEFAULT_BUDGET):
    """All perfect matchings by backtracking on the lowest unmatched vertex.

    Returns (Z, per-edge marginals, list of (edge tuple, weight)).
    """
    budget.check("matchings", n_vertices)
    edges = [tuple(map(int, e)) for e in edges]
    weights = list(weights)
    inc = [[] for _ in range(n_vertices)]
    for k, (a, b) in enumerate(edges):
        inc[a].append(k)
        inc[b].append(k)
    covers = []
    if n_vertices % 2:
        return 0.0, np.zeros(len(edges)), covers
    used = [False] * n_vertices
    chosen = []

    def rec(start):
        v = start
        while v < n_vertices and used[v]:
            v += 1
        if v == n_vertices:
            covers.append(tuple(chosen))
            return
        used[v] = True
        for k in inc[v]:
            a, b = edges[k]
            o = b if a == v else a
            if not used[o]:
                used[o] = True
                chosen.append(k)
                rec(v + 1)
                chosen.pop()
                used[o] = False
        used[v] = False

    rec(0)
    ws = [math.prod(weights[k] for k in c) for c in covers]
    if ws and isinstance(ws[0], complex):
        Z = complex(math.fsum(w.real for w in ws), math.fsum(w.imag for w in ws))
    else:
        Z = math.fsum(ws)
    marg = np.zeros(len(edges))
    if Z != 0:
        acc = defaultdict(list)
        for c, w in zip(covers, ws):
            for k in c:
                acc[k].append(w)
        for k, lst in acc.items():
            marg[k] = math.fsum(np.real(lst)) / np.real(Z)
    return Z, marg, list(zip(covers, ws))


def dimer_partition(bm, signs=None, removed=(), budget=DEFAULT_BUDGET):
    """Partition function of a bipartite map, optionally with signed weights and removed vertices."""
    m = bm.map
    keep = [v for v in range(m.n_vertices) if v not in set(removed)]
    idx = {v: k for k, v in enumerate(keep)}
    es, ws = [], []
    for e, (a, b) in enumerate(m.edges):
        if a in idx and b in idx:
            es.append((idx[a], idx[b]))
            ws.append(m.weights[e] * (1 if signs is None else signs[e]))
    return enum_dimer_covers(len(keep), es, ws, budget)[0]


# ---------------------------------------------------------------------------
# alternating flows on the tripled digraph

def _alternates(seq) -> bool:
    n = len(seq)
    return n % 2 == 0 and all(seq[k] != seq[(k + 1) % n] for k in range(n))


def enum_alternating_flows(vg, sources=None, budget=DEFAULT_BUDGET):
    """Alternating flows with weights 2^{|V|-|V(F)|} prod x.

    `sources` may be (h_i, h_j): primal half-edges naming corners c_i (into v(c_i)) and
    -c_j (out of v(c_j)); both extra edges have weight 1 and must be present.
    Returns list of (frozenset of directed edges, weight).
    """
    nd = vg.n_directed
    budget.check("flows", nd)
    m = vg.base
    rot = [list(r) for r in vg.rotation]
    extra = {}
    if sources is not None:
        hi, hj = sources
        vi, vj = int(m.origin[hi]), int(m.origin[hj])
        # corner edges sit just after the last copy of the half-edge
        ins = sorted([(vi, int(vg.slot[hi]), -1, False), (vj, int(vg.slot[hj]), -2, True)],
                     key=lambda t: -t[1])
        for v, s, tag, out in ins:
            rot[v].insert(s + 1, tag)
            extra[tag] = (v, out)
    res = []
    nV = m.n_vertices
    for bits in range(2 ** nd):
        F = [d for d in range(nd) if bits >> d & 1]
        inF = set(F) | set(extra)
        ok = True
        touched = set()
        for v in range(nV):
            seq = []
            for d in rot[v]:
                if d in inF:
                    if d < 0:
                        seq.append(extra[d][1])
                    else:
                        seq.append(vg.tail[d] == v)
            if seq:
                touched.add(v)
                if not _alternates(seq):
                    ok = False
                    break
        if not ok:
            continue
        w = 2.0 ** (nV - len(touched)) * math.prod(vg.weight[d] for d in F)
        res.append((frozenset(F), w))
    return res


def flow_trace(vg, F) -> tuple:
    """Per primal edge class: 1 or 3 copies present -> odd, 2 -> even-positive, 0 -> zero."""
    E = vg.base.n_edges
    cnt = np.zeros(E, dtype=np.int64)
    for d in F:
        cnt[d // 3] += 1
    return tuple(int(c) for c in np.where(cnt % 2 == 1, 1, np.where(cnt == 2, 2, 0)))


def flow_trace_law(vg, budget=DEFAULT_BUDGET) -> dict:
    law = defaultdict(list)
    for F, w in enum_alternating_flows(vg, None, budget):
        law[flow_trace(vg, F)].append(w)
    tot = math.fsum(math.fsum(v) for v in law.values())
    return {k: math.fsum(v) / tot for k, v in law.items()}


# ---------------------------------------------------------------------------
# truncated Poisson sums for currents

ZERO, ODD, EVEN = 0, 1, 2


def _poisson_parts(t: float, cutoff: int):
    terms = [t ** n / math.factorial(n) for n in range(cutoff + 1)]
    return math.fsum(terms[0::2]), math.fsum(terms[1::2])


def truncated_current_law(m: PlanarMap, beta, cutoff: int = 40, double: bool = True,
                          budget=DEFAULT_BUDGET) -> dict:
    """Exact-to-truncation law of per-edge classes (ZERO, ODD, EVEN) for sourceless currents.

    Keys are tuples of classes per edge.  Also returns the truncation bound under key 'tail'.
    """
    E = m.n_edges
    beta = np.broadcast_to(np.asarray(beta, float), (E,))
    masks, _ = enum_even_subgraphs(m, None, None, budget)
    C0 = np.empty(E)
    S1 = np.empty(E)
    for e in range(E):
        C0[e], S1[e] = _poisson_parts(beta[e], cutoff)
    law = defaultdict(list)
    if double:
        for p1 in masks:
            for p2 in masks:
                odd = p1 ^ p2
                both = p1 & p2
                free = ~(p1 | p2)
                base = math.prod(C0[e] * S1[e] for e in np.flatnonzero(odd)) * \
                    math.prod(S1[e] ** 2 for e in np.flatnonzero(both))
                fr = np.flatnonzero(free)
                for choice in itertools.product((ZERO, EVEN), repeat=len(fr)):
                    cls = np.where(odd, ODD, EVEN)
                    w = base
                    for e, c in zip(fr, choice):
                        cls[e] = c
                        w *= 1.0 if c == ZERO else C0[e] ** 2 - 1.0
                    law[tuple(int(c) for c in cls)].append(w)
    else:
        for p in masks:
            fr = np.flatnonzero(~p)
            base = math.prod(S1[e] for e in np.flatnonzero(p))
            for choice in itertools.product((ZERO, EVEN), repeat=len(fr)):
                cls = np.where(p, ODD, EVEN)
                w = base
                for e, c in zip(fr, choice):
                    cls[e] = c
                    w *= 1.0 if c == ZERO else C0[e] - 1.0
                law[tuple(int(c) for c in cls)].append(w)
    tot = math.fsum(math.fsum(v) for v in law.values())
    out = {k: math.fsum(v) / tot for k, v in law.items()}
    bmax = float(np.max(beta)) if E else 0.0
    out_tail = bmax ** (cutoff + 1) / math.factorial(cutoff + 1) * math.exp(bmax)
    return {"law": out, "tail": out_tail}


def closed_form_trace_law(m: PlanarMap, beta) -> dict:
    """Double-current trace law from the cluster-count formula:
    P(O, Ev) proportional to 2^{k(O u Ev)} prod_O sinh(2b) prod_Ev (cosh(2b) - 1),
    with O an even subgraph and k the number of components of the open subgraph,
    isolated vertices included."""
    E = m.n_edges
    beta = np.broadcast_to(np.asarray(beta, float), (E,))
    masks, _ = enum_even_subgraphs(m, None, None)
    law = {}
    for O in masks:
        rest = np.flatnonzero(~O)
        for choice in itertools.product((False, True), repeat=len(rest)):
            ev = np.zeros(E, bool)
            ev[rest[np.array(choice, dtype=bool)]] = True
            open_ = O | ev
            k = _n_clusters(m, open_)
            w = 2.0 ** k * math.prod(math.sinh(2 * beta[e]) for e in np.flatnonzero(O)) * \
                math.prod(math.cosh(2 * beta[e]) - 1 for e in np.flatnonzero(ev))
            cls = np.where(O, ODD, np.where(ev, EVEN, ZERO))
            law[tuple(int(c) for c in cls)] = w
    tot = math.fsum(law.values())
    return {k: v / tot for k, v in law.items()}


def _n_clusters(m: PlanarMap, open_mask) -> int:
    parent = list(range(m.n_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in np.flatnonzero(open_mask):
        a, b = m.edges[e]
        parent[find(a)] = find(b)
    return len({find(v) for v in range(m.n_vertices)})


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
