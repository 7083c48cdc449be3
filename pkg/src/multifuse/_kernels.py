"""Compiled inner loops for the HNSW graph.

Distances are negative inner products of unit float32 vectors accumulated
in float64, so "smaller is closer" and similarity is exactly ``-distance``.
Every heap entry carries the node's external label as a tie-breaker,
making traversal order independent of insertion order for equal distances.

Layer-0 adjacency lives in ``links0[node, :count0[node]]``. A node of
level L >= 1 owns rows ``up_start[node] + (l - 1)`` of ``up_links`` for
l = 1..L.
"""

import heapq

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _dist(vecs, i, q):
    s = 0.0
    for j in range(q.shape[0]):
        s += np.float64(vecs[i, j]) * q[j]
    return -s


@njit(cache=True, nogil=True, inline="always")
def _dist_nodes(vecs, a, b):
    s = 0.0
    for j in range(vecs.shape[1]):
        s += np.float64(vecs[a, j]) * np.float64(vecs[b, j])
    return -s


@njit(cache=True, nogil=True, inline="always")
def _neighbors(layer, node, links0, count0, up_start, up_links, up_count):
    if layer == 0:
        return links0[node, : count0[node]]
    r = up_start[node] + layer - 1
    return up_links[r, : up_count[r]]


@njit(cache=True, nogil=True)
def search_layer(q, eps, ef, layer, vecs, labels, links0, count0, up_start, up_links, up_count, n):
    """Best-first search of one layer; returns (dists, nodes) sorted closest first."""
    visited = np.zeros(n, dtype=np.bool_)
    cand = [(0.0, np.int64(0), np.int64(0))]
    cand.pop()
    res = [(0.0, np.int64(0), np.int64(0))]
    res.pop()
    for i in range(eps.shape[0]):
        e = np.int64(eps[i])
        if visited[e]:
            continue
        visited[e] = True
        d = _dist(vecs, e, q)
        heapq.heappush(cand, (d, labels[e], e))
        heapq.heappush(res, (-d, -labels[e], e))
        if len(res) > ef:
            heapq.heappop(res)
    while len(cand) > 0:
        d, lab, c = heapq.heappop(cand)
        wd = -res[0][0]
        wl = -res[0][1]
        if d > wd or (d == wd and lab > wl):
            break
        nb = _neighbors(layer, c, links0, count0, up_start, up_links, up_count)
        for i in range(nb.shape[0]):
            e = np.int64(nb[i])
            if visited[e]:
                continue
            visited[e] = True
            de = _dist(vecs, e, q)
            wd = -res[0][0]
            wl = -res[0][1]
            le = labels[e]
            if len(res) < ef or de < wd or (de == wd and le < wl):
                heapq.heappush(cand, (de, le, e))
                heapq.heappush(res, (-de, -le, e))
                if len(res) > ef:
                    heapq.heappop(res)
    m = len(res)
    out_d = np.empty(m, dtype=np.float64)
    out_n = np.empty(m, dtype=np.int64)
    for i in range(m - 1, -1, -1):
        nd, _, nn = heapq.heappop(res)
        out_d[i] = -nd
        out_n[i] = nn
    return out_d, out_n


@njit(cache=True, nogil=True)
def _select(dists, nodes, limit, heuristic, keep_pruned, vecs):
    """Pick up to ``limit`` neighbors from candidates sorted closest first."""
    if not heuristic:
        return nodes[: min(limit, nodes.shape[0])].copy()
    chosen = np.empty(min(limit, nodes.shape[0]), dtype=np.int64)
    k = 0
    for i in range(nodes.shape[0]):
        if k == limit:
            break
        e = nodes[i]
        keep = True
        for j in range(k):
            # drop e when an already chosen neighbor is closer to it than the base point
            if _dist_nodes(vecs, e, chosen[j]) < dists[i]:
                keep = False
                break
        if keep:
            chosen[k] = e
            k += 1
    if keep_pruned and k < chosen.shape[0]:
        # top up with the closest rejected candidates
        for i in range(nodes.shape[0]):
            if k == chosen.shape[0]:
                break
            e = nodes[i]
            seen = False
            for j in range(k):
                if chosen[j] == e:
                    seen = True
                    break
            if not seen:
                chosen[k] = e
                k += 1
    return chosen[:k].copy()


@njit(cache=True, nogil=True)
def _sort_candidates(dists, nodes, labels):
    m = nodes.shape[0]
    keys = [(dists[i], labels[nodes[i]], nodes[i]) for i in range(m)]
    keys.sort()
    out_d = np.empty(m, dtype=np.float64)
    out_n = np.empty(m, dtype=np.int64)
    for i in range(m):
        out_d[i] = keys[i][0]
        out_n[i] = keys[i][2]
    return out_d, out_n


@njit(cache=True, nogil=True)
def _link(src, dst, layer, cap, heuristic, keep_pruned, vecs, labels, links0, count0, up_start, up_links, up_count):
    """Add the edge src -> dst, shrinking src's list to ``cap`` if needed."""
    if layer == 0:
        row = links0[src]
        cnt = count0[src]
    else:
        r = up_start[src] + layer - 1
        row = up_links[r]
        cnt = up_count[r]
    if cnt < cap:
        row[cnt] = dst
        cnt += 1
    else:
        cand = np.empty(cnt + 1, dtype=np.int64)
        dists = np.empty(cnt + 1, dtype=np.float64)
        for i in range(cnt):
            cand[i] = row[i]
            dists[i] = _dist_nodes(vecs, src, row[i])
        cand[cnt] = dst
        dists[cnt] = _dist_nodes(vecs, src, dst)
        dists, cand = _sort_candidates(dists, cand, labels)
        kept = _select(dists, cand, cap, heuristic, keep_pruned, vecs)
        cnt = kept.shape[0]
        for i in range(cnt):
            row[i] = kept[i]
        for i in range(cnt, row.shape[0]):
            row[i] = -1
    if layer == 0:
        count0[src] = cnt
    else:
        up_count[up_start[src] + layer - 1] = cnt


@njit(cache=True, nogil=True)
def insert(node, level, q, entry, max_level, ef_construction, M, M0, heuristic, keep_pruned,
           vecs, labels, links0, count0, up_start, up_links, up_count, n):
    ep = np.empty(1, dtype=np.int64)
    ep[0] = entry
    for layer in range(max_level, level, -1):
        _, found = search_layer(q, ep, 1, layer, vecs, labels, links0, count0,
                                up_start, up_links, up_count, n)
        ep = found[:1].copy()
    for layer in range(min(level, max_level), -1, -1):
        dists, found = search_layer(q, ep, ef_construction, layer, vecs, labels, links0,
                                    count0, up_start, up_links, up_count, n)
        cap = M0 if layer == 0 else M
        chosen = _select(dists, found, cap, heuristic, keep_pruned, vecs)
        for i in range(chosen.shape[0]):
            _link(node, chosen[i], layer, cap, heuristic, keep_pruned, vecs, labels, links0, count0,
                  up_start, up_links, up_count)
            _link(chosen[i], node, layer, cap, heuristic, keep_pruned, vecs, labels, links0, count0,
                  up_start, up_links, up_count)
        ep = found


@njit(cache=True, nogil=True)
def knn(q, k, ef, entry, max_level, vecs, labels, links0, count0, up_start, up_links, up_count, n):
    ep = np.empty(1, dtype=np.int64)
    ep[0] = entry
    for layer in range(max_level, 0, -1):
        _, found = search_layer(q, ep, 1, layer, vecs, labels, links0, count0,
                                up_start, up_links, up_count, n)
        ep = found[:1].copy()
    dists, found = search_layer(q, ep, max(ef, k), 0, vecs, labels, links0, count0,
                                up_start, up_links, up_count, n)
    return dists[:k].copy(), found[:k].copy()


@njit(cache=True, nogil=True)
def exhaustive_dists(q, vecs, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = _dist(vecs, i, q)
    return out
