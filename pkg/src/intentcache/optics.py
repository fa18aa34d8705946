"""OPTICS ordering with Epanechnikov-kernel selection of MinPts and epsilon,
flat cluster extraction, silhouette scoring and the structured-record store."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UndefinedMetricError

NOISE = -1
INF = math.inf


@dataclass
class PointSet:
    points: np.ndarray  # (z, dim)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2:
            raise ValueError("points must form a (z, dim) array")

    @property
    def z(self) -> int:
        return self.points.shape[0]

    @property
    def norm_scale(self) -> float:
        return float(self.distances().max()) if self.z > 1 else 0.0

    def distances(self) -> np.ndarray:
        cached = self.__dict__.get("_dist")
        if cached is None:
            diff = self.points[:, None, :] - self.points[None, :, :]
            cached = np.sqrt((diff * diff).sum(axis=-1))
            self.__dict__["_dist"] = cached
        return cached


@dataclass
class DensityEstimate:
    density: np.ndarray
    bandwidth: float

    @property
    def max_density(self) -> float:
        return float(self.density.max())


@dataclass
class ReachabilityOrdering:
    order: list[int]
    core_distance: np.ndarray
    reachability: np.ndarray  # indexed by point, value at emission time
    min_pts: int
    epsilon: float

    def reachability_in_order(self) -> list[float]:
        return [float(self.reachability[i]) for i in self.order]


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    threshold: float

    @property
    def n_clusters(self) -> int:
        return len({int(label) for label in self.labels if label != NOISE})


def epanechnikov(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def median_pairwise_distance(ps: PointSet) -> float:
    iu = np.triu_indices(ps.z, k=1)
    return float(np.median(ps.distances()[iu]))


def epanechnikov_density(ps: PointSet, h: float | None = None) -> DensityEstimate:
    """Leave-one-out kernel density over pairwise distances scaled by ``h``
    (median pairwise distance by default)."""
    if ps.z < 2:
        raise ValueError("density estimation needs at least two points")
    if h is None:
        h = median_pairwise_distance(ps)
        if h <= 0.0:
            h = 1.0
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    k = epanechnikov(ps.distances() / h)
    np.fill_diagonal(k, 0.0)
    return DensityEstimate(density=k.sum(axis=1) / (ps.z - 1), bandwidth=float(h))


def select_min_pts(de: DensityEstimate, alpha: float = 5.0) -> int:
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return max(2, math.floor(alpha * de.max_density + 0.5))


def nearest_neighbor_distances(ps: PointSet) -> np.ndarray:
    d = ps.distances().copy()
    np.fill_diagonal(d, INF)
    return d.min(axis=1)


def select_epsilon(ps: PointSet, de: DensityEstimate, beta: float = 0.5) -> float:
    """Smallest nearest-neighbour distance among sub-threshold-density points;
    the median nearest-neighbour distance when no point is that sparse."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    nn = nearest_neighbor_distances(ps)
    sparse = de.density < beta * de.max_density
    eps = float(nn[sparse].min()) if sparse.any() else float(np.median(nn))
    if eps <= 0.0:
        # duplicate points; fall back to the smallest positive gap
        positive = ps.distances()[ps.distances() > 0]
        eps = float(positive.min()) if positive.size else 1.0
    return eps


def core_distances(ps: PointSet, min_pts: int, epsilon: float) -> np.ndarray:
    """Distance to the ``min_pts``-th nearest other point, if within epsilon."""
    out = np.full(ps.z, INF)
    if ps.z - 1 < min_pts:
        return out
    d = ps.distances()
    for p in range(ps.z):
        others = np.sort(np.delete(d[p], p))
        kth = others[min_pts - 1]
        if kth <= epsilon:
            out[p] = kth
    return out


def optics_order(ps: PointSet, min_pts: int, epsilon: float) -> ReachabilityOrdering:
    if min_pts < 2:
        raise ValueError(f"min_pts must be at least 2, got {min_pts}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    d = ps.distances()
    core = core_distances(ps, min_pts, epsilon)
    reach = np.full(ps.z, INF)
    processed = np.zeros(ps.z, dtype=bool)
    order: list[int] = []

    def update(p: int, seeds: list):
        for o in range(ps.z):
            if processed[o] or o == p or d[p, o] > epsilon:
                continue
            new = max(core[p], d[p, o])
            if new < reach[o]:
                reach[o] = new
                heapq.heappush(seeds, (new, o))

    for start in range(ps.z):
        if processed[start]:
            continue
        processed[start] = True
        order.append(start)
        if core[start] == INF:
            continue
        seeds: list = []
        update(start, seeds)
        while seeds:
            r, o = heapq.heappop(seeds)
            if processed[o] or r != reach[o]:
                continue  # stale queue entry
            processed[o] = True
            order.append(o)
            if core[o] != INF:
                update(o, seeds)
    return ReachabilityOrdering(order=order, core_distance=core, reachability=reach, min_pts=min_pts, epsilon=epsilon)


def extract_clusters(ro: ReachabilityOrdering, cut: float) -> ClusterAssignment:
    """Split the ordering wherever reachability exceeds ``cut``; segments of at
    least ``min_pts`` points become clusters, the rest noise."""
    if cut <= 0:
        raise ValueError(f"cut must be positive, got {cut}")
    segments: list[list[int]] = []
    for idx in ro.order:
        if not segments or ro.reachability[idx] > cut:
            segments.append([idx])
        else:
            segments[-1].append(idx)
    labels = np.full(len(ro.order), NOISE, dtype=np.int64)
    next_label = 0
    for seg in segments:
        if len(seg) >= ro.min_pts:
            labels[seg] = next_label
            next_label += 1
    return ClusterAssignment(labels=labels, threshold=cut)


def silhouette(ps: PointSet, ca: ClusterAssignment) -> float:
    labels = np.asarray(ca.labels)
    clustered = np.flatnonzero(labels != NOISE)
    clusters = sorted({int(labels[i]) for i in clustered})
    if len(clusters) < 2:
        raise UndefinedMetricError(f"silhouette needs at least 2 clusters, got {len(clusters)}")
    d = ps.distances()
    members = {c: np.flatnonzero(labels == c) for c in clusters}
    scores = []
    for i in clustered:
        own = members[int(labels[i])]
        if len(own) == 1:
            scores.append(0.0)
            continue
        a = d[i, own].sum() / (len(own) - 1)
        b = min(d[i, members[c]].mean() for c in clusters if c != labels[i])
        top = max(a, b)
        scores.append(0.0 if top == 0.0 else (b - a) / top)
    return float(np.mean(scores))


@dataclass
class ClusteringResult:
    ordering: ReachabilityOrdering
    assignment: ClusterAssignment
    density: DensityEstimate | None
    silhouette: float | None
    ct_ms: float


def ek_optics(
    ps: PointSet,
    h: float | None = None,
    alpha: float = 5.0,
    beta: float = 0.5,
    cut: float | None = None,
) -> ClusteringResult:
    """Density-selected MinPts and epsilon, OPTICS ordering, extraction.
    ``ct_ms`` is the wall time of the whole run."""
    t0 = time.perf_counter()
    de = epanechnikov_density(ps, h)
    min_pts = select_min_pts(de, alpha)
    eps = select_epsilon(ps, de, beta)
    ro = optics_order(ps, min_pts, eps)
    ca = extract_clusters(ro, eps if cut is None else cut)
    ct_ms = (time.perf_counter() - t0) * 1000.0
    try:
        score = silhouette(ps, ca)
    except UndefinedMetricError:
        score = None
    return ClusteringResult(ro, ca, de, score, ct_ms)


def fixed_optics(ps: PointSet, min_pts: int, epsilon: float, cut: float | None = None) -> ClusteringResult:
    """Plain OPTICS with user-supplied parameters (the ablation baseline)."""
    t0 = time.perf_counter()
    ro = optics_order(ps, min_pts, epsilon)
    ca = extract_clusters(ro, epsilon if cut is None else cut)
    ct_ms = (time.perf_counter() - t0) * 1000.0
    try:
        score = silhouette(ps, ca)
    except UndefinedMetricError:
        score = None
    return ClusteringResult(ro, ca, None, score, ct_ms)


# ---------------------------------------------------------------------------
# structured-record store
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuredRecord:
    point_id: int
    label: int
    reachability: float
    core_distance: float
    vector: tuple[float, ...]


def _fmt(x: float) -> str:
    return "inf" if x == INF else repr(float(x))


def write_store(path: str | Path, records: list[StructuredRecord]) -> None:
    lines = []
    for r in records:
        cols = [str(r.point_id), str(r.label), _fmt(r.reachability), _fmt(r.core_distance)]
        cols += [repr(float(v)) for v in r.vector]
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def parse_store(text: str) -> list[StructuredRecord]:
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 4:
            raise ParseError(f"expected at least 4 tab-separated columns, got {len(cols)}", line_no)
        try:
            out.append(
                StructuredRecord(
                    point_id=int(cols[0]),
                    label=int(cols[1]),
                    reachability=float(cols[2]),
                    core_distance=float(cols[3]),
                    vector=tuple(float(c) for c in cols[4:]),
                )
            )
        except ValueError as exc:
            raise ParseError(f"malformed structured record: {exc}", line_no) from None
    return out


def read_store(path: str | Path) -> list[StructuredRecord]:
    return parse_store(Path(path).read_text(encoding="utf-8"))


def to_records(ids: list[int], ps: PointSet, result: ClusteringResult) -> list[StructuredRecord]:
    ro, ca = result.ordering, result.assignment
    return [
        StructuredRecord(
            point_id=ids[i],
            label=int(ca.labels[i]),
            reachability=float(ro.reachability[i]),
            core_distance=float(ro.core_distance[i]),
            vector=tuple(float(v) for v in ps.points[i]),
        )
        for i in range(ps.z)
    ]
