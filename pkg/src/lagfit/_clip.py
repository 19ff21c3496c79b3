"""Numba kernel: one Laguerre cell by successive half-space clipping.

Coordinates are local to the generator.  The cell starts as the box replica
centred at the generator (the bisectors with its own periodic images) and is
clipped by radical planes of candidate neighbours, visited in order of
increasing distance, until no unvisited candidate can reach the cell.

Faces are stored as vertex rings, counter-clockwise seen from outside.  Face
labels are candidate indices (>= 0) or box sides: -1/-2 = +x/-x,
-3/-4 = +y/-y, -5/-6 = +z/-z.
"""

import numpy as np
from numba import njit

MAXV = 1024
MAXF = 256
MAXD = 64

OK = 0
EMPTY = 1
DEGENERATE = 3
OVERFLOW = 4

_BOX_FACES = np.array(
    [[4, 6, 7, 5], [0, 1, 3, 2], [2, 3, 7, 6], [0, 4, 5, 1], [1, 5, 7, 3], [0, 2, 6, 4]], dtype=np.int64
)


@njit(cache=True)
def _max_r2(V, nv):
    m = 0.0
    for v in range(nv):
        r2 = V[v, 0] * V[v, 0] + V[v, 1] * V[v, 1] + V[v, 2] * V[v, 2]
        if r2 > m:
            m = r2
    return m


@njit(cache=True)
def _cut(V, nv, F, flen, flab, nf, q, offset, label, eps, V2, F2, flen2, flab2, s, newidx, nxt, elo, ehi, enew, ring, onf):
    """Clip by ``2 v.q <= offset``.  Returns (status, nv, nf); result in the *2 buffers."""
    keep_any = False
    out_any = False
    for v in range(nv):
        s[v] = 2.0 * (V[v, 0] * q[0] + V[v, 1] * q[1] + V[v, 2] * q[2]) - offset
        if s[v] > eps:
            out_any = True
        else:
            keep_any = True
    if not out_any:
        return -1, nv, nf
    if not keep_any:
        return EMPTY, 0, 0

    nv2 = 0
    for v in range(nv):
        if s[v] <= eps:
            newidx[v] = nv2
            V2[nv2, 0] = V[v, 0]
            V2[nv2, 1] = V[v, 1]
            V2[nv2, 2] = V[v, 2]
            nv2 += 1
        else:
            newidx[v] = -1

    # crossing edges: (lo, hi, new vertex)
    ne = 0
    nf2 = 0
    for j in range(min(MAXV, 2 * nv + 8)):
        nxt[j] = -1
    n_links = 0

    for f in range(nf):
        L = flen[f]
        m = 0
        for k in range(L):
            a = F[f, k]
            b = F[f, (k + 1) % L]
            if s[a] <= eps:
                if m >= MAXD:
                    return OVERFLOW, 0, 0
                ring[m] = newidx[a]
                onf[m] = s[a] >= -eps
                m += 1
            if (s[a] < -eps and s[b] > eps) or (s[a] > eps and s[b] < -eps):
                lo = a if a < b else b
                hi = b if a < b else a
                idx = -1
                for e in range(ne):
                    if elo[e] == lo and ehi[e] == hi:
                        idx = enew[e]
                        break
                if idx < 0:
                    if nv2 >= MAXV or ne >= MAXV:
                        return OVERFLOW, 0, 0
                    t = s[a] / (s[a] - s[b])
                    V2[nv2, 0] = V[a, 0] + t * (V[b, 0] - V[a, 0])
                    V2[nv2, 1] = V[a, 1] + t * (V[b, 1] - V[a, 1])
                    V2[nv2, 2] = V[a, 2] + t * (V[b, 2] - V[a, 2])
                    idx = nv2
                    nv2 += 1
                    elo[ne] = lo
                    ehi[ne] = hi
                    enew[ne] = idx
                    ne += 1
                if m >= MAXD:
                    return OVERFLOW, 0, 0
                ring[m] = idx
                onf[m] = True
                m += 1
        if m < 3:
            continue
        n_on = 0
        for k in range(m):
            if onf[k]:
                n_on += 1
        if n_on == m:
            # face lies in the cutting plane; the new face replaces it
            continue
        if nf2 >= MAXF:
            return OVERFLOW, 0, 0
        for k in range(m):
            F2[nf2, k] = ring[k]
        flen2[nf2] = m
        flab2[nf2] = flab[f]
        nf2 += 1
        if n_on >= 2:
            # the on-plane vertices must form one cyclic run; link them reversed
            start = -1
            for k in range(m):
                if onf[k] and not onf[(k - 1 + m) % m]:
                    if start >= 0:
                        return DEGENERATE, 0, 0
                    start = k
            if start < 0:
                return DEGENERATE, 0, 0
            for r in range(n_on - 1):
                p = ring[(start + r) % m]
                qv = ring[(start + r + 1) % m]
                if nxt[qv] >= 0 and nxt[qv] != p:
                    return DEGENERATE, 0, 0
                if nxt[qv] < 0:
                    nxt[qv] = p
                    n_links += 1

    if n_links < 3:
        return DEGENERATE, 0, 0
    first = -1
    for j in range(nv2):
        if nxt[j] >= 0:
            first = j
            break
    if nf2 >= MAXF:
        return OVERFLOW, 0, 0
    cur = first
    m = 0
    while True:
        if m >= MAXD:
            return OVERFLOW, 0, 0
        F2[nf2, m] = cur
        m += 1
        cur = nxt[cur]
        if cur < 0:
            return DEGENERATE, 0, 0
        if cur == first:
            break
        if m > n_links:
            return DEGENERATE, 0, 0
    if m != n_links:
        return DEGENERATE, 0, 0
    flen2[nf2] = m
    flab2[nf2] = label
    nf2 += 1

    # drop unreferenced vertices
    used = np.zeros(nv2, dtype=np.int64) - 1
    for f in range(nf2):
        for k in range(flen2[f]):
            used[F2[f, k]] = 1
    cnt = 0
    for v in range(nv2):
        if used[v] >= 0:
            used[v] = cnt
            if cnt != v:
                V2[cnt, 0] = V2[v, 0]
                V2[cnt, 1] = V2[v, 1]
                V2[cnt, 2] = V2[v, 2]
            cnt += 1
    if cnt != nv2:
        for f in range(nf2):
            for k in range(flen2[f]):
                F2[f, k] = used[F2[f, k]]
    return OK, cnt, nf2


@njit(cache=True)
def compute_cell(half, w_self, disp, cw, wmax, eps):
    """Clip the box replica by all reaching candidates.

    Returns ``(status, V, flen, F, flab, farea, fper, vol, reach)`` where
    ``reach`` is the distance beyond which no candidate can cut the final
    cell; the caller checks that the candidate list covered it.
    """
    V = np.empty((MAXV, 3))
    F = np.empty((MAXF, MAXD), dtype=np.int64)
    flen = np.empty(MAXF, dtype=np.int64)
    flab = np.empty(MAXF, dtype=np.int64)
    V2 = np.empty((MAXV, 3))
    F2 = np.empty((MAXF, MAXD), dtype=np.int64)
    flen2 = np.empty(MAXF, dtype=np.int64)
    flab2 = np.empty(MAXF, dtype=np.int64)
    s = np.empty(MAXV)
    newidx = np.empty(MAXV, dtype=np.int64)
    nxt = np.empty(MAXV, dtype=np.int64)
    elo = np.empty(MAXV, dtype=np.int64)
    ehi = np.empty(MAXV, dtype=np.int64)
    enew = np.empty(MAXV, dtype=np.int64)
    ring = np.empty(MAXD, dtype=np.int64)
    onf = np.empty(MAXD, dtype=np.bool_)

    for v in range(8):
        V[v, 0] = half[0] if (v >> 2) & 1 else -half[0]
        V[v, 1] = half[1] if (v >> 1) & 1 else -half[1]
        V[v, 2] = half[2] if v & 1 else -half[2]
    nv = 8
    for f in range(6):
        for k in range(4):
            F[f, k] = _BOX_FACES[f, k]
        flen[f] = 4
        flab[f] = -(f + 1)
    nf = 6

    status = OK
    r2 = _max_r2(V, nv)
    R = np.sqrt(r2)
    for c in range(disp.shape[0]):
        q = disp[c]
        qq = q[0] * q[0] + q[1] * q[1] + q[2] * q[2]
        qn = np.sqrt(qq)
        if qn >= R + np.sqrt(r2 + wmax - w_self):
            break
        offset = qq + w_self - cw[c]
        if 2.0 * R * qn <= offset - eps:
            continue
        st, nv2, nf2 = _cut(
            V, nv, F, flen, flab, nf, q, offset, c, eps, V2, F2, flen2, flab2, s, newidx, nxt, elo, ehi, enew, ring, onf
        )
        if st == -1:
            continue
        if st != OK:
            status = st
            break
        V, V2 = V2, V
        F, F2 = F2, F
        flen, flen2 = flen2, flen
        flab, flab2 = flab2, flab
        nv = nv2
        nf = nf2
        r2 = _max_r2(V, nv)
        R = np.sqrt(r2)

    reach = R + np.sqrt(max(r2 + wmax - w_self, 0.0))
    if status != OK:
        return status, V[:0].copy(), flen[:0].copy(), F[:0, :1].copy(), flab[:0].copy(), s[:0].copy(), s[:0].copy(), 0.0, reach

    farea = np.empty(nf)
    fper = np.empty(nf)
    vol = 0.0
    maxlen = 0
    for f in range(nf):
        L = flen[f]
        if L > maxlen:
            maxlen = L
        ax = 0.0
        ay = 0.0
        az = 0.0
        per = 0.0
        p0 = F[f, 0]
        for k in range(L):
            a = F[f, k]
            b = F[f, (k + 1) % L]
            ax += V[a, 1] * V[b, 2] - V[a, 2] * V[b, 1]
            ay += V[a, 2] * V[b, 0] - V[a, 0] * V[b, 2]
            az += V[a, 0] * V[b, 1] - V[a, 1] * V[b, 0]
            dx = V[b, 0] - V[a, 0]
            dy = V[b, 1] - V[a, 1]
            dz = V[b, 2] - V[a, 2]
            per += np.sqrt(dx * dx + dy * dy + dz * dz)
            if k >= 1 and k < L - 1:
                # fan tetrahedron (origin, p0, a, b)
                vol += (
                    V[p0, 0] * (V[a, 1] * V[b, 2] - V[a, 2] * V[b, 1])
                    + V[p0, 1] * (V[a, 2] * V[b, 0] - V[a, 0] * V[b, 2])
                    + V[p0, 2] * (V[a, 0] * V[b, 1] - V[a, 1] * V[b, 0])
                )
        farea[f] = 0.5 * np.sqrt(ax * ax + ay * ay + az * az)
        fper[f] = per
    vol /= 6.0
    return status, V[:nv].copy(), flen[:nf].copy(), F[:nf, :maxlen].copy(), flab[:nf].copy(), farea, fper, vol, reach


@njit(cache=True)
def plane_reaches(V, D, sides, dw, tol):
    """Whether any periodic image ``D + shift`` of a generator clips the vertex set ``V``.

    ``V`` is relative to the cell's generator and ``dw = w_cell - w_other``.
    """
    for sx in range(-1, 2):
        for sy in range(-1, 2):
            for sz in range(-1, 2):
                q0 = D[0] + sx * sides[0]
                q1 = D[1] + sy * sides[1]
                q2 = D[2] + sz * sides[2]
                off = q0 * q0 + q1 * q1 + q2 * q2 + dw
                for v in range(V.shape[0]):
                    if 2.0 * (V[v, 0] * q0 + V[v, 1] * q1 + V[v, 2] * q2) - off >= -tol:
                        return True
    return False
