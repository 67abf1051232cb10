"""Alignment kernel over pairs of token DAGs.

Each sequence is given as a DAG whose nodes are token occurrences listed in
topological order (a plain chain for ordinary alignment; a DAG with one
fork per 2-way branch for the permutation-invariant variant). A cell
``(u, v)`` keeps a small set of states, one per pair of bitmasks telling
which of the currently open enclosures on each side were matched by
substitution. Separators may only be substituted when the innermost open
enclosures on both sides are matched to each other, and may only be
inserted or deleted when theirs is unmatched. This keeps every path
grammar-consistent while still finding the exact minimum.
"""
from __future__ import annotations

import numpy as np

from ._jit import njit

# candidate order doubles as the tie-break: substitute, then add a token of
# the second sequence, then remove a token of the first
MOVE_SUB = 0
MOVE_INS = 1  # consume a token of the second sequence only ("add")
MOVE_DEL = 2  # consume a token of the first sequence only ("rem")

_COMP, _OPENER, _DIVIDER, _CLOSER = 1, 2, 3, 4


@njit
def _single(code, level, mask):
    """Mask after consuming one token alone, or -1 if not allowed."""
    if code == _COMP or code == _OPENER:
        return mask
    if code == _DIVIDER or code == _CLOSER:
        if (mask >> level) & 1:
            return -1
        return mask
    return -1


@njit
def align_dags(tok1, pstart1, pidx1, tok2, pstart2, pidx2,
               codes1, levels1, codes2, levels2, sub, ind1, ind2, order):
    n1 = tok1.shape[0]
    n2 = tok2.shape[0]
    ncell = n1 * n2
    cap = max(16, 4 * ncell)
    m1s = np.empty(cap, dtype=np.int64)
    m2s = np.empty(cap, dtype=np.int64)
    costs = np.empty(cap, dtype=np.float64)
    backs = np.empty(cap, dtype=np.int64)
    moves = np.empty(cap, dtype=np.int8)
    cells = np.empty(cap, dtype=np.int64)
    cstart = np.zeros(ncell + 1, dtype=np.int64)
    best = np.full(ncell, -1, dtype=np.int64)
    n = 0
    for u in range(n1):
        t1 = tok1[u]
        c1 = codes1[t1]
        l1 = levels1[t1]
        for v in range(n2):
            cell = u * n2 + v
            cstart[cell] = n
            if u == 0 and v == 0:
                m1s[n] = 0
                m2s[n] = 0
                costs[n] = 0.0
                backs[n] = -1
                moves[n] = -1
                cells[n] = cell
                best[cell] = n
                n += 1
                continue
            t2 = tok2[v]
            c2 = codes2[t2]
            l2 = levels2[t2]
            np2 = 1
            for k in range(3):
                move = order[k]
                if move == MOVE_SUB:
                    if c1 != c2:
                        continue
                    w = sub[t1, t2]
                    if not np.isfinite(w):
                        continue
                    np1 = pstart1[u + 1] - pstart1[u]
                    np2 = pstart2[v + 1] - pstart2[v]
                    npairs = np1 * np2
                elif move == MOVE_DEL:
                    w = ind1[t1]
                    npairs = pstart1[u + 1] - pstart1[u]
                else:
                    w = ind2[t2]
                    npairs = pstart2[v + 1] - pstart2[v]
                for q in range(npairs):
                    if move == MOVE_SUB:
                        pu = pidx1[pstart1[u] + q // np2]
                        pv = pidx2[pstart2[v] + q % np2]
                    elif move == MOVE_DEL:
                        pu = pidx1[pstart1[u] + q]
                        pv = v
                    else:
                        pu = u
                        pv = pidx2[pstart2[v] + q]
                    pcell = pu * n2 + pv
                    # predecessors always precede the current cell
                    for s in range(cstart[pcell], cstart[pcell + 1]):
                        a = m1s[s]
                        b = m2s[s]
                        if move == MOVE_SUB:
                            if c1 == _OPENER:
                                a = a | (1 << l1)
                                b = b | (1 << l2)
                            elif c1 == _DIVIDER or c1 == _CLOSER:
                                if ((a >> l1) & 1) == 0 or ((b >> l2) & 1) == 0:
                                    continue
                                if c1 == _CLOSER:
                                    a = a & ~(1 << l1)
                                    b = b & ~(1 << l2)
                        elif move == MOVE_DEL:
                            a = _single(c1, l1, a)
                            if a < 0:
                                continue
                        else:
                            b = _single(c2, l2, b)
                            if b < 0:
                                continue
                        cost = costs[s] + w
                        found = -1
                        for r in range(cstart[cell], n):
                            if m1s[r] == a and m2s[r] == b:
                                found = r
                                break
                        if found >= 0:
                            if cost < costs[found]:
                                costs[found] = cost
                                backs[found] = s
                                moves[found] = move
                            continue
                        if n == cap:
                            cap *= 2
                            m1s = _grow_i64(m1s, cap)
                            m2s = _grow_i64(m2s, cap)
                            costs = _grow_f64(costs, cap)
                            backs = _grow_i64(backs, cap)
                            moves = _grow_i8(moves, cap)
                            cells = _grow_i64(cells, cap)
                        m1s[n] = a
                        m2s[n] = b
                        costs[n] = cost
                        backs[n] = s
                        moves[n] = move
                        cells[n] = cell
                        n += 1
            bi = -1
            for r in range(cstart[cell], n):
                if bi < 0 or costs[r] < costs[bi]:
                    bi = r
            best[cell] = bi
    cstart[ncell] = n
    return m1s[:n], m2s[:n], costs[:n], backs[:n], moves[:n], cells[:n], cstart, best


@njit
def _grow_i64(arr, cap):
    out = np.empty(cap, dtype=np.int64)
    out[:arr.shape[0]] = arr
    return out


@njit
def _grow_f64(arr, cap):
    out = np.empty(cap, dtype=np.float64)
    out[:arr.shape[0]] = arr
    return out


@njit
def _grow_i8(arr, cap):
    out = np.empty(cap, dtype=np.int8)
    out[:arr.shape[0]] = arr
    return out
