"""Bellman-Ford relaxation on a dense weighted digraph."""

from __future__ import annotations

import numpy as np


class NegativeCycleError(RuntimeError):
    """Relaxation did not settle; ``cycle`` lists the node indices of a negative cycle."""

    def __init__(self, message, cycle):
        super().__init__(message)
        self.cycle = cycle


def relax(W, base=None, max_rounds=None, tol=1e-13):
    """Shortest distances in the complete digraph with arc weights ``W[k, l]``.

    ``W`` may contain ``+inf`` for absent arcs.  With ``base`` given, distances
    are from that node; with ``base=None`` every node starts at 0 (a virtual
    source joined to all nodes).  Improvements smaller than ``tol`` times the
    largest finite weight are ignored, so zero-weight cycles that round to
    ``-1e-16`` do not keep the loop alive.

    Returns ``(dist, pred, rounds, settled)``.  Raises :class:`NegativeCycleError`
    when the distances still drop after ``len(W)`` rounds.
    """
    W = np.asarray(W, float)
    n = len(W)
    finite = np.isfinite(W)
    scale = float(np.abs(W[finite]).max()) if finite.any() else 1.0
    thresh = tol * max(scale, 1.0)
    if base is None:
        dist = np.zeros(n)
    else:
        dist = np.full(n, np.inf)
        dist[base] = 0.0
    pred = np.full(n, -1, dtype=np.int64)
    limit = n if max_rounds is None else min(max_rounds, n)
    rounds = 0
    settled = False
    while rounds < limit:
        cand = dist[:, None] + W
        best = np.argmin(cand, axis=0)
        val = cand[best, np.arange(n)]
        better = val < dist - thresh
        rounds += 1
        if not better.any():
            settled = True
            break
        dist = np.where(better, val, dist)
        pred = np.where(better, best, pred)
    if not settled and rounds >= n:
        cand = dist[:, None] + W
        best = np.argmin(cand, axis=0)
        val = cand[best, np.arange(n)]
        better = val < dist - thresh
        if better.any():
            pred = np.where(better, best, pred)
            raise NegativeCycleError(
                "relaxation did not settle: negative cycle",
                _find_cycle(pred, int(np.flatnonzero(better)[0])),
            )
        settled = True
    return dist, pred, rounds, settled


def _find_cycle(pred, start):
    n = len(pred)
    v = start
    for _ in range(n):
        if pred[v] < 0:
            return [start]
        v = int(pred[v])
    cycle = [v]
    u = int(pred[v])
    while u != v and len(cycle) <= n:
        cycle.append(u)
        u = int(pred[u])
    return cycle[::-1]
