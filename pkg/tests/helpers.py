"""Oracles and small builders shared by the test modules."""

from __future__ import annotations

import math

import numpy as np


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def central_difference(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def sample_coordinates(shape, n: int, rng) -> list[tuple]:
    """``n`` distinct coordinates (fewer if the array is smaller)."""
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(n, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def euclidean(a, b) -> float:
    # plain sqrt of the summed squares, so exact comparisons are not thrown
    # off by math.dist's differently rounded algorithm
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def brute_force_optics(points: np.ndarray, min_pts: int, eps: float):
    """Queue-free OPTICS: at every step scan all unprocessed points for the
    smallest current reachability (ties to the smallest index); if none is
    finite, start from the smallest unprocessed index."""
    z = len(points)
    d = [[euclidean(points[i], points[j]) for j in range(z)] for i in range(z)]
    core = []
    for p in range(z):
        others = sorted(d[p][o] for o in range(z) if o != p)
        if len(others) >= min_pts and others[min_pts - 1] <= eps:
            core.append(others[min_pts - 1])
        else:
            core.append(math.inf)
    reach = [math.inf] * z
    done = [False] * z
    order = []
    while len(order) < z:
        best = None
        for o in range(z):
            if not done[o] and reach[o] < math.inf and (best is None or reach[o] < reach[best]):
                best = o
        if best is None:
            best = next(o for o in range(z) if not done[o])
        done[best] = True
        order.append(best)
        if core[best] < math.inf:
            for o in range(z):
                if not done[o] and d[best][o] <= eps:
                    reach[o] = min(reach[o], max(core[best], d[best][o]))
    return order, core, reach


def brute_force_silhouette(points: np.ndarray, labels) -> float:
    labels = list(labels)
    idx = [i for i, lab in enumerate(labels) if lab != -1]
    clusters = sorted({labels[i] for i in idx})
    scores = []
    for i in idx:
        own = [j for j in idx if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = sum(math.dist(points[i], points[j]) for j in own) / len(own)
        b = min(
            sum(math.dist(points[i], points[j]) for j in idx if labels[j] == c) / sum(1 for j in idx if labels[j] == c)
            for c in clusters
            if c != labels[i]
        )
        scores.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return sum(scores) / len(scores)
