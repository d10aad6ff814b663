"""Pure-Python/numpy versions of the compiled kernels.

Used when the extension module is not built, and as the reference the
compiled versions are tested against.
"""
from __future__ import annotations

import math

import numpy as np


def _lp_rows(d: np.ndarray, p: float) -> np.ndarray:
    a = np.abs(d)
    if math.isinf(p):
        return a.max(axis=-1)
    if p == 2.0:
        return np.sqrt(np.sum(a * a, axis=-1))
    if p == 1.0:
        return a.sum(axis=-1)
    return np.sum(a ** p, axis=-1) ** (1.0 / p)


def grid_lipschitz(values: np.ndarray, offsets: np.ndarray, lengths: np.ndarray, y_p: float) -> float:
    """Max over grid pairs ``(x, x + o h)`` of ``||f(x+oh) - f(x)||_p / lengths[o]``."""
    n = values.ndim - 1
    best = 0.0
    for o, ln in zip(offsets, lengths):
        src, dst = [], []
        for d in range(n):
            if o[d] > 0:
                src.append(slice(1, None))
                dst.append(slice(0, -1))
            elif o[d] < 0:
                src.append(slice(0, -1))
                dst.append(slice(1, None))
            else:
                src.append(slice(None))
                dst.append(slice(None))
        diff = values[tuple(src)] - values[tuple(dst)]
        if diff.size:
            best = max(best, float(_lp_rows(diff, y_p).max()) / float(ln))
    return best


def _northwest(a: np.ndarray, b: np.ndarray):
    ns, nt = len(a), len(b)
    nb = ns + nt - 1
    bi = np.empty(nb, dtype=np.int64)
    bj = np.empty(nb, dtype=np.int64)
    bx = np.empty(nb)
    i = j = 0
    ra, rb = a[0], b[0]
    for k in range(nb):
        f = min(ra, rb)
        bi[k], bj[k], bx[k] = i, j, max(f, 0.0)
        ra -= f
        rb -= f
        if k == nb - 1:
            break
        if i == ns - 1:
            j += 1
            rb = b[j]
        elif j == nt - 1:
            i += 1
            ra = a[i]
        elif ra <= rb:
            i += 1
            ra = a[i]
        else:
            j += 1
            rb = b[j]
    return bi, bj, bx


def _tree(ns, nt, bi, bj, C):
    """Parent pointers, depths and potentials of the basis tree rooted at row 0."""
    nn = ns + nt
    adj = [[] for _ in range(nn)]
    for e in range(len(bi)):
        r, c = int(bi[e]), ns + int(bj[e])
        adj[r].append((c, e))
        adj[c].append((r, e))
    parent = np.full(nn, -1, dtype=np.int64)
    pedge = np.full(nn, -1, dtype=np.int64)
    depth = np.zeros(nn, dtype=np.int64)
    pot = np.zeros(nn)
    seen = np.zeros(nn, dtype=bool)
    seen[0] = True
    queue = [0]
    head = 0
    while head < len(queue):
        u = queue[head]
        head += 1
        for v, e in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v], pedge[v], depth[v] = u, e, depth[u] + 1
                cost = C[bi[e], bj[e]]
                pot[v] = cost - pot[u]
                queue.append(v)
    return parent, pedge, depth, pot


def transport_simplex(a, b, C, max_iter: int = 0, tol: float = 1e-12):
    """Exact transportation problem ``min <C, P>`` with marginals ``a``, ``b``.

    Returns ``(rows, cols, flows, cost, u, v, iterations)`` where the basis
    cells carry the optimal plan and ``u_i + v_j <= C_ij`` are the duals.
    """
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    ns, nt = len(a), len(b)
    bi, bj, bx = _northwest(a, b)
    if max_iter <= 0:
        max_iter = 50 * (ns + nt) * max(10, int(math.log2(ns * nt + 2)))
    eps = tol * max(1.0, float(np.abs(C).max()))
    block = max(64, int(math.sqrt(ns * nt)))
    total = ns * nt
    cursor = 0
    it = 0
    flatC = C.ravel()
    while it < max_iter:
        parent, pedge, depth, pot = _tree(ns, nt, bi, bj, C)
        u, v = pot[:ns], pot[ns:]
        best, best_idx, scanned = -eps, -1, 0
        while scanned < total:
            stop = min(cursor + block, total)
            idx = np.arange(cursor, stop)
            r = flatC[cursor:stop] - u[idx // nt] - v[idx % nt]
            k = int(np.argmin(r))
            if r[k] < best:
                best, best_idx = float(r[k]), int(idx[k])
            scanned += stop - cursor
            cursor = 0 if stop == total else stop
            if best_idx >= 0:
                break
        if best_idx < 0:
            break
        ei, ej = divmod(best_idx, nt)
        p, q = ei, ns + ej
        up_p, up_q = [], []
        while depth[p] > depth[q]:
            up_p.append(pedge[p])
            p = parent[p]
        while depth[q] > depth[p]:
            up_q.append(pedge[q])
            q = parent[q]
        while p != q:
            up_p.append(pedge[p])
            p = parent[p]
            up_q.append(pedge[q])
            q = parent[q]
        cycle = up_q + up_p[::-1]
        minus = cycle[0::2]
        plus = cycle[1::2]
        k = min(range(len(minus)), key=lambda t: (bx[minus[t]], t))
        leave = minus[k]
        theta = bx[leave]
        for e in minus:
            bx[e] -= theta
        for e in plus:
            bx[e] += theta
        bi[leave], bj[leave], bx[leave] = ei, ej, theta
        it += 1
    parent, pedge, depth, pot = _tree(ns, nt, bi, bj, C)
    cost = float(np.sum(bx * C[bi, bj]))
    return bi, bj, np.maximum(bx, 0.0), cost, pot[:ns].copy(), pot[ns:].copy(), it
