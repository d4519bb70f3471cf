"""Fill-reducing symmetric orderings computed from a sparsity pattern."""
import heapq

import numpy as np
import scipy.sparse as sp


def _adjacency(S):
    """Off-diagonal adjacency sets of the symmetrized pattern of ``S``."""
    S = sp.coo_matrix(S)
    n = S.shape[0]
    adj = [set() for _ in range(n)]
    for i, j in zip(S.row.tolist(), S.col.tolist()):
        if i != j:
            adj[i].add(j)
            adj[j].add(i)
    return adj


def symbolic_order(S) -> np.ndarray:
    """Minimum-degree elimination order of the pattern of ``S``.

    Only the structure of ``S`` is read; stored values (including explicit
    zeros) are ignored. Ties go to the lowest index, so the result depends on
    the pattern alone. Returns ``perm`` with ``perm[i]`` the original index
    eliminated at step ``i``.
    """
    n = S.shape[0]
    if S.shape[0] != S.shape[1]:
        raise ValueError("ordering needs a square matrix")
    adj = _adjacency(S)
    heap = [(len(a), i) for i, a in enumerate(adj)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, p = heapq.heappop(heap)
        if done[p] or deg != len(adj[p]):
            continue
        done[p] = True
        order.append(p)
        nbrs = adj[p]
        for u in nbrs:
            au = adj[u]
            au.discard(p)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[p] = set()
    return np.asarray(order, dtype=np.int64)


def fill_in(S, perm) -> int:
    """Number of nonzeros in the strict lower factor for the given order.

    Simple elimination-graph count; used to compare orderings.
    """
    adj = _adjacency(S)
    pos = np.empty(len(perm), dtype=np.int64)
    pos[np.asarray(perm)] = np.arange(len(perm))
    total = 0
    for p in perm:
        later = {u for u in adj[p] if pos[u] > pos[p]}
        total += len(later)
        for u in later:
            adj[u] |= later
            adj[u].discard(u)
    return total
