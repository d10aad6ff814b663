# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: grid Lipschitz scan and the transportation simplex.

Same algorithms and tie-breaking as ``_kernels_py``; results agree to
rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, pow, INFINITY, isinf, log2

cnp.import_array()


def grid_lipschitz(values, long[:, ::1] offsets, double[::1] lengths, double y_p):
    cdef int n = values.ndim - 1
    cdef long res = values.shape[0]
    cdef long m = values.shape[values.ndim - 1]
    cdef double[:, ::1] V = np.ascontiguousarray(np.asarray(values).reshape(-1, m), dtype=np.float64).copy()
    cdef long total = V.shape[0]
    cdef long[::1] stride = np.array([res ** (n - 1 - d) for d in range(n)], dtype=np.int64)
    cdef long[::1] shifts = np.asarray(offsets) @ np.asarray(stride)
    cdef long[::1] idx = np.zeros(n, dtype=np.int64)
    cdef int no = offsets.shape[0]
    cdef int inf_norm = isinf(y_p)
    cdef double best = 0.0
    with nogil:
        best = _lip_scan(V, offsets, lengths, stride, shifts, idx, n, res, m, total, no, y_p, inf_norm)
    return best


cdef double _lip_scan(double[:, ::1] V, long[:, ::1] offsets, double[::1] lengths, long[::1] stride,
                      long[::1] shifts, long[::1] idx, int n, long res, long m, long total, int no,
                      double y_p, int inf_norm) noexcept nogil:
    cdef double best = 0.0, s, dd, val
    cdef long p, q, c, j, cc
    cdef int k, d, ok
    for p in range(total):
        q = p
        for d in range(n):
            idx[d] = q // stride[d]
            q = q - idx[d] * stride[d]
        for k in range(no):
            ok = 1
            for d in range(n):
                cc = idx[d] + offsets[k, d]
                if cc < 0 or cc >= res:
                    ok = 0
                    break
            if ok == 0:
                continue
            j = p + shifts[k]
            s = 0.0
            for c in range(m):
                dd = fabs(V[j, c] - V[p, c])
                if inf_norm:
                    if dd > s:
                        s = dd
                elif y_p == 2.0:
                    s = s + dd * dd
                elif y_p == 1.0:
                    s = s + dd
                else:
                    s = s + pow(dd, y_p)
            if not inf_norm:
                if y_p == 2.0:
                    s = sqrt(s)
                elif y_p != 1.0:
                    s = pow(s, 1.0 / y_p)
            val = s / lengths[k]
            if val > best:
                best = val
    return best


cdef void _build_tree(long ns, long nt, long[::1] bi, long[::1] bj, double[:, ::1] C,
                      long[::1] deg, long[::1] start, long[::1] nbr, long[::1] nedge,
                      long[::1] parent, long[::1] pedge, long[::1] depth, double[::1] pot,
                      long[::1] queue, char[::1] seen) noexcept nogil:
    cdef long nn = ns + nt, nb = bi.shape[0], e, r, c, u, w, k, head, tail
    for u in range(nn):
        deg[u] = 0
        seen[u] = 0
    for e in range(nb):
        deg[bi[e]] += 1
        deg[ns + bj[e]] += 1
    start[0] = 0
    for u in range(nn):
        start[u + 1] = start[u] + deg[u]
        deg[u] = 0
    for e in range(nb):
        r = bi[e]
        c = ns + bj[e]
        nbr[start[r] + deg[r]] = c
        nedge[start[r] + deg[r]] = e
        deg[r] += 1
        nbr[start[c] + deg[c]] = r
        nedge[start[c] + deg[c]] = e
        deg[c] += 1
    parent[0] = -1
    pedge[0] = -1
    depth[0] = 0
    pot[0] = 0.0
    seen[0] = 1
    queue[0] = 0
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        for k in range(start[u], start[u + 1]):
            w = nbr[k]
            if not seen[w]:
                seen[w] = 1
                e = nedge[k]
                parent[w] = u
                pedge[w] = e
                depth[w] = depth[u] + 1
                pot[w] = C[bi[e], bj[e]] - pot[u]
                queue[tail] = w
                tail += 1


def transport_simplex(a, b, C, long max_iter=0, double tol=1e-12):
    """Exact transportation simplex; see ``_kernels_py.transport_simplex``."""
    cdef double[::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] CC = np.ascontiguousarray(C, dtype=np.float64)
    cdef long ns = A.shape[0], nt = B.shape[0], nn = ns + nt, nb = ns + nt - 1
    cdef long[::1] bi = np.empty(nb, dtype=np.int64)
    cdef long[::1] bj = np.empty(nb, dtype=np.int64)
    cdef double[::1] bx = np.empty(nb, dtype=np.float64)
    cdef long i = 0, j = 0, k
    cdef double ra = A[0], rb = B[0], f
    for k in range(nb):
        f = ra if ra < rb else rb
        bi[k] = i
        bj[k] = j
        bx[k] = f if f > 0.0 else 0.0
        ra -= f
        rb -= f
        if k == nb - 1:
            break
        if i == ns - 1:
            j += 1
            rb = B[j]
        elif j == nt - 1:
            i += 1
            ra = A[i]
        elif ra <= rb:
            i += 1
            ra = A[i]
        else:
            j += 1
            rb = B[j]

    cdef long[::1] deg = np.empty(nn, dtype=np.int64)
    cdef long[::1] start = np.empty(nn + 1, dtype=np.int64)
    cdef long[::1] nbr = np.empty(2 * nb, dtype=np.int64)
    cdef long[::1] nedge = np.empty(2 * nb, dtype=np.int64)
    cdef long[::1] parent = np.empty(nn, dtype=np.int64)
    cdef long[::1] pedge = np.empty(nn, dtype=np.int64)
    cdef long[::1] depth = np.empty(nn, dtype=np.int64)
    cdef double[::1] pot = np.empty(nn, dtype=np.float64)
    cdef long[::1] queue = np.empty(nn, dtype=np.int64)
    cdef char[::1] seen = np.empty(nn, dtype=np.int8)
    cdef long[::1] cyc = np.empty(nn + 1, dtype=np.int64)
    cdef long[::1] upp = np.empty(nn + 1, dtype=np.int64)

    cdef double cmax = 1.0
    for i in range(ns):
        for j in range(nt):
            if fabs(CC[i, j]) > cmax:
                cmax = fabs(CC[i, j])
    cdef double eps = tol * cmax
    cdef long total = ns * nt
    cdef long block = <long>sqrt(<double>total)
    if block < 64:
        block = 64
    if max_iter <= 0:
        max_iter = 50 * (ns + nt) * max(10, <long>log2(<double>total + 2.0))
    cdef long cursor = 0, scanned, stop, idx, best_idx, it = 0
    cdef long p, q, np_, nq, ncyc, t, leave, ei, ej, kbest
    cdef double best, r, theta
    with nogil:
        while it < max_iter:
            _build_tree(ns, nt, bi, bj, CC, deg, start, nbr, nedge, parent, pedge, depth, pot, queue, seen)
            best = -eps
            best_idx = -1
            scanned = 0
            while scanned < total:
                stop = cursor + block
                if stop > total:
                    stop = total
                for idx in range(cursor, stop):
                    i = idx // nt
                    j = idx - i * nt
                    r = CC[i, j] - pot[i] - pot[ns + j]
                    if r < best:
                        best = r
                        best_idx = idx
                scanned += stop - cursor
                cursor = 0 if stop == total else stop
                if best_idx >= 0:
                    break
            if best_idx < 0:
                break
            ei = best_idx // nt
            ej = best_idx - ei * nt
            p = ei
            q = ns + ej
            np_ = 0
            nq = 0
            while depth[p] > depth[q]:
                upp[np_] = pedge[p]
                np_ += 1
                p = parent[p]
            while depth[q] > depth[p]:
                cyc[nq] = pedge[q]
                nq += 1
                q = parent[q]
            while p != q:
                upp[np_] = pedge[p]
                np_ += 1
                p = parent[p]
                cyc[nq] = pedge[q]
                nq += 1
                q = parent[q]
            ncyc = nq
            for t in range(np_ - 1, -1, -1):
                cyc[ncyc] = upp[t]
                ncyc += 1
            kbest = 0
            theta = bx[cyc[0]]
            t = 2
            while t < ncyc:
                if bx[cyc[t]] < theta:
                    theta = bx[cyc[t]]
                    kbest = t
                t += 2
            leave = cyc[kbest]
            for t in range(ncyc):
                if t % 2 == 0:
                    bx[cyc[t]] -= theta
                else:
                    bx[cyc[t]] += theta
            bi[leave] = ei
            bj[leave] = ej
            bx[leave] = theta
            it += 1
        _build_tree(ns, nt, bi, bj, CC, deg, start, nbr, nedge, parent, pedge, depth, pot, queue, seen)
    rows = np.asarray(bi).copy()
    cols = np.asarray(bj).copy()
    flows = np.maximum(np.asarray(bx), 0.0)
    Cn = np.asarray(CC)
    cost = float(np.sum(flows * Cn[rows, cols]))
    potn = np.asarray(pot)
    return rows, cols, flows, cost, potn[:ns].copy(), potn[ns:].copy(), it
