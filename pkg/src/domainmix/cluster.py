"""Domain repartition: k-means over sketched gradient vectors.

Lloyd's algorithm with k-means++ seeding over squared Euclidean distance.
Empty clusters are repaired by reseeding their centroid to the point
currently farthest from its assigned centroid; with genuinely distinct
points the reseeded centroid captures that point on the next assignment
pass, so non-degenerate partitions end with no empty domain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gradtrace import GradientTrace
from .sketch import ProjectionMatrix, project, topk_sparsify

__all__ = ["DomainPartition", "kmeans", "repartition", "domain_sizes", "save_partition"]


@dataclass(frozen=True)
class DomainPartition:
    """Assignment of sample ids to k domains plus centroids in sketch space."""

    k: int
    assignments: dict[int, int]
    centroids: np.ndarray  # (k, s)
    inertia: float
    inertia_history: tuple[float, ...] = ()
    seed: int = 0

    def labels_for(self, sample_ids) -> np.ndarray:
        return np.array([self.assignments[sid] for sid in sample_ids], dtype=int)


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # squared distances, argmin ties resolve to the lowest domain index
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _repair_empty(points, centroids, labels, dist2) -> bool:
    """Reseed centroids of empty clusters; True if any reseed actually moved."""
    moved = False
    counts = np.bincount(labels, minlength=len(centroids))
    used: set[int] = set()
    for j in np.flatnonzero(counts == 0):
        order = np.argsort(-dist2, kind="stable")
        far = next(int(i) for i in order if int(i) not in used)
        used.add(far)
        if dist2[far] > 0:
            moved = True
        centroids[j] = points[far]
    return moved


def kmeans(points, k: int, seed: int, max_iters: int = 100) -> DomainPartition:
    """Cluster ``points`` (list or array of equal-length vectors) into k domains.

    Deterministic in ``seed``. Per-iteration inertia is recorded and is
    non-increasing; iteration stops when assignments are stable or at
    ``max_iters``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("expected a non-empty (n, s) array of points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    n = pts.shape[0]
    if k <= 0 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if max_iters <= 0:
        raise ValueError("max_iters must be positive")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(pts, k, rng)
    labels, dist2 = _assign(pts, centroids)
    _repair_empty(pts, centroids, labels, dist2)
    history = [float(dist2.sum())]

    for _ in range(max_iters):
        for j in range(k):
            members = pts[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        new_labels, dist2 = _assign(pts, centroids)
        changed = not np.array_equal(new_labels, labels)
        labels = new_labels
        moved = _repair_empty(pts, centroids, labels, dist2)
        history.append(float(dist2.sum()))
        if not changed and not moved:
            break

    return DomainPartition(
        k=k,
        assignments={i: int(labels[i]) for i in range(n)},
        centroids=centroids,
        inertia=history[-1],
        inertia_history=tuple(history),
        seed=seed,
    )


def repartition(
    trace: GradientTrace,
    keep_ratio: float,
    proj: ProjectionMatrix,
    k: int,
    seed: int,
    max_iters: int = 100,
) -> DomainPartition:
    """Sparsify, project and cluster a gradient trace into k domains.

    Records are canonicalized by sample id before clustering, so permuting
    the trace's record order does not change the resulting assignment map.
    """
    if trace.dim != proj.h:
        raise ValueError(f"trace dim {trace.dim} does not match projection h={proj.h}")
    if len(trace) == 0:
        raise ValueError("trace has no records")
    recs = sorted(trace.records, key=lambda r: r.sample_id)
    sketched = np.stack(
        [project(proj, topk_sparsify(r.vector.astype(float), keep_ratio)) for r in recs]
    )
    part = kmeans(sketched, k=k, seed=seed, max_iters=max_iters)
    by_sample = {recs[i].sample_id: part.assignments[i] for i in range(len(recs))}
    return DomainPartition(
        k=part.k,
        assignments=by_sample,
        centroids=part.centroids,
        inertia=part.inertia,
        inertia_history=part.inertia_history,
        seed=seed,
    )


def domain_sizes(partition: DomainPartition) -> list[int]:
    """Sample counts per domain index; sums to the number of samples."""
    counts = [0] * partition.k
    for dom in partition.assignments.values():
        counts[dom] += 1
    return counts


def save_partition(partition: DomainPartition, csv_path, json_path) -> None:
    """Write the ``sample_id,domain`` CSV and its JSON sidecar."""
    lines = ["sample_id,domain"]
    for sid in sorted(partition.assignments):
        lines.append(f"{sid},{partition.assignments[sid]}")
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {
        "k": partition.k,
        "seed": partition.seed,
        "inertia": partition.inertia,
        "centroid_norms": [float(x) for x in np.linalg.norm(partition.centroids, axis=1)],
    }
    Path(json_path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
