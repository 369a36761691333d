"""Compiled inner loops: union-find, Swendsen-Wang sweeps, ray-parity nesting values."""

import numpy as np
from numba import njit


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@njit(cache=True)
def components(n, ends, open_mask):
    """Component label per vertex (0..k-1, in order of first appearance)."""
    parent = np.arange(n)
    for e in range(ends.shape[0]):
        if open_mask[e]:
            ra = _find(parent, ends[e, 0])
            rb = _find(parent, ends[e, 1])
            if ra != rb:
                parent[ra] = rb
    lab = -np.ones(n, np.int64)
    out = np.empty(n, np.int64)
    k = 0
    for v in range(n):
        r = _find(parent, v)
        if lab[r] < 0:
            lab[r] = k
            k += 1
        out[v] = lab[r]
    return out


@njit(cache=True)
def sw_sweep(spins, face_ends, p_bond, fixed):
    """One Swendsen-Wang update of +-1 spins; the cluster of `fixed` keeps its spin."""
    n = spins.shape[0]
    parent = np.arange(n)
    for e in range(face_ends.shape[0]):
        a = face_ends[e, 0]
        b = face_ends[e, 1]
        if a != b and spins[a] == spins[b] and np.random.random() < p_bond[e]:
            ra = _find(parent, a)
            rb = _find(parent, b)
            if ra != rb:
                parent[ra] = rb
    flip = np.zeros(n, np.int8)
    done = np.zeros(n, np.bool_)
    rf = _find(parent, fixed)
    done[rf] = True
    for v in range(n):
        r = _find(parent, v)
        if not done[r]:
            done[r] = True
            flip[r] = 1 if np.random.random() < 0.5 else 0
    for v in range(n):
        if flip[_find(parent, v)]:
            spins[v] = -spins[v]


@njit(cache=True)
def interfaces(spins, face_ends):
    out = np.empty(face_ends.shape[0], np.bool_)
    for e in range(face_ends.shape[0]):
        out[e] = spins[face_ends[e, 0]] != spins[face_ends[e, 1]]
    return out


@njit(cache=True)
def double_current_step(s1, s2, face_ends, p_bond, fixed, x2, n_vertices, ends, n_sweeps):
    """Advance two independent dual chains and draw the double-current trace.

    Returns (odd, nonzero, cluster label per vertex).
    """
    for _ in range(n_sweeps):
        sw_sweep(s1, face_ends, p_bond, fixed)
        sw_sweep(s2, face_ends, p_bond, fixed)
    E = face_ends.shape[0]
    odd = np.empty(E, np.bool_)
    nz = np.empty(E, np.bool_)
    for e in range(E):
        a = s1[face_ends[e, 0]] != s1[face_ends[e, 1]]
        b = s2[face_ends[e, 0]] != s2[face_ends[e, 1]]
        odd[e] = a != b
        if a or b:
            nz[e] = True
        else:
            nz[e] = np.random.random() < x2[e]
    lab = components(n_vertices, ends, nz)
    return odd, nz, lab


@njit(cache=True)
def ray_nesting(odd, lab, eps, path_ptr, path_edges, ends):
    """Nesting value at each tracked face: sum of labels of clusters with an odd number
    of odd edges on the face's ray to the outside."""
    k = path_ptr.shape[0] - 1
    out = np.zeros(k)
    for i in range(k):
        # parity per cluster via a scratch list
        seen_c = np.empty(path_ptr[i + 1] - path_ptr[i], np.int64)
        seen_p = np.zeros(path_ptr[i + 1] - path_ptr[i], np.int64)
        m = 0
        for t in range(path_ptr[i], path_ptr[i + 1]):
            e = path_edges[t]
            if odd[e]:
                c = lab[ends[e, 0]]
                j = 0
                while j < m and seen_c[j] != c:
                    j += 1
                if j == m:
                    seen_c[m] = c
                    m += 1
                seen_p[j] ^= 1
        s = 0.0
        for j in range(m):
            if seen_p[j]:
                s += eps[seen_c[j]]
        out[i] = s
    return out


@njit(cache=True)
def odd_membership(odd, lab, n_clusters, path_ptr, path_edges, ends):
    """(tracked face, cluster) -> 1 when the cluster is odd around the face, by ray parity."""
    k = path_ptr.shape[0] - 1
    out = np.zeros((k, n_clusters), np.uint8)
    for i in range(k):
        for t in range(path_ptr[i], path_ptr[i + 1]):
            e = path_edges[t]
            if odd[e]:
                out[i, lab[ends[e, 0]]] ^= 1
    return out
