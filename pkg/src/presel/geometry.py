"""Per-task geometry: k-means clustering and neighbor-centrality scoring.

k-means runs Lloyd iterations from k-means++ seeding in euclidean space on
the raw features. Neighbor centrality is the mean cosine similarity of a
point to its k nearest neighbors (by cosine distance) inside its cluster;
high values mark representative points, low values outliers.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from . import _kernels as K
from .apportion import round_half_up
from .errors import InvalidClusterCount, TooManyClusters, ZeroNormFeature

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class ClusterAssignment:
    task_id: str
    n_clusters: int
    labels: np.ndarray  # int64 (n,)
    centroids: np.ndarray  # float64 (C, d), exact member means
    sizes: np.ndarray  # int64 (C,)
    inertia: float
    inertia_history: tuple[float, ...]


def default_cluster_count(pool_size: int, clusters_per_100: float = 1.0) -> int:
    """Cluster count for a pool: one per 100 points, rounded, at least 1."""
    if pool_size < 1:
        raise InvalidClusterCount(f"pool_size must be >= 1, got {pool_size}")
    c = round_half_up(Fraction(pool_size) * Fraction(clusters_per_100) / 100)
    return max(1, c)


def _as_f32(features: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(features, dtype=np.float32)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    return x


def _plusplus_seed(x: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over row indices, deterministic for a given rng."""
    n = x.shape[0]
    centers = np.empty((n_clusters, x.shape[1]), dtype=np.float32)
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = x[first]
    chosen[first] = True
    if n_clusters == 1:
        return centers
    _, dist2 = K.assign_labels(x, centers[0:1])
    j = 1
    while j < n_clusters:
        total = float(dist2.sum())
        if total <= 0.0:
            # every remaining point duplicates a chosen center; fill with the
            # lowest unchosen indices so seeding stays deterministic
            for idx in np.flatnonzero(~chosen):
                if j == n_clusters:
                    break
                centers[j] = x[idx]
                chosen[idx] = True
                j += 1
            while j < n_clusters:
                centers[j] = centers[0]
                j += 1
            break
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(dist2), r, side="right"))
        idx = min(idx, n - 1)
        centers[j] = x[idx]
        chosen[idx] = True
        _, dnew = K.assign_labels(x, centers[j : j + 1])
        np.minimum(dist2, dnew, out=dist2)
        j += 1
    return centers


def _repair_empty(labels, mindist, sizes):
    """Move the farthest point of a populated cluster into each empty one."""
    empties = np.flatnonzero(sizes == 0)
    if len(empties) == 0:
        return
    dist = mindist.copy()
    for e in empties:
        order = np.argsort(-dist, kind="stable")
        donor = -1
        for cand in order:
            if sizes[labels[cand]] >= 2:
                donor = int(cand)
                break
        if donor < 0:  # unreachable while n_clusters <= n
            raise TooManyClusters("cannot repair empty cluster")
        sizes[labels[donor]] -= 1
        labels[donor] = e
        sizes[e] = 1
        # the donor becomes its cluster's sole member and centroid
        mindist[donor] = 0.0
        dist[donor] = -np.inf


def kmeans(
    features: np.ndarray,
    n_clusters: int,
    seed: Union[int, np.random.Generator],
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    task_id: str = "",
) -> ClusterAssignment:
    """Lloyd k-means, deterministic for a fixed seed.

    Converges when the squared centroid shift drops below ``tol`` times the
    mean per-dimension variance of the input, when the assignment stops
    changing, or after ``max_iter`` iterations. Empty clusters are repaired
    each iteration by re-homing the point farthest from its centroid.
    """
    x = _as_f32(features)
    n, d = x.shape
    if n_clusters <= 0:
        raise InvalidClusterCount(f"n_clusters must be positive, got {n_clusters}")
    if n_clusters > n:
        raise TooManyClusters(f"n_clusters {n_clusters} exceeds {n} points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(int(seed))

    centers32 = _plusplus_seed(x, n_clusters, rng)
    centers64 = centers32.astype(np.float64)
    x64 = x.astype(np.float64)
    tol_eff = tol * float(np.var(x64, axis=0).mean())
    # per-row squared norms; the same einsum kernel is used for the centroid
    # sums below so singleton clusters cancel to an exact zero inertia
    rowsq = np.einsum("nd,nd->n", x64, x64)

    labels = None
    history: list[float] = []
    for _ in range(max_iter):
        new_labels, mindist = K.assign_labels(x, centers32)
        sizes = np.bincount(new_labels, minlength=n_clusters).astype(np.int64)
        _repair_empty(new_labels, mindist, sizes)

        sums, counts = K.sum_by_label(x, new_labels, n_clusters)
        new64 = sums / counts[:, None]
        # within-cluster SSE around the exact means:
        # sum_c (sum_{x in c} |x|^2 - |sum_c|^2 / n_c)
        sumsq = np.bincount(new_labels, weights=rowsq, minlength=n_clusters)
        per_cluster = sumsq - np.einsum("cd,cd->c", sums, sums) / counts
        history.append(float(np.maximum(per_cluster, 0.0).sum()))
        shift2 = float(((new64 - centers64) ** 2).sum())

        unchanged = labels is not None and bool((new_labels == labels).all())
        labels = new_labels
        centers64 = new64
        centers32 = new64.astype(np.float32)
        if unchanged or shift2 <= tol_eff:
            break

    sizes = np.bincount(labels, minlength=n_clusters).astype(np.int64)
    return ClusterAssignment(
        task_id=task_id,
        n_clusters=n_clusters,
        labels=labels,
        centroids=centers64,
        sizes=sizes,
        inertia=history[-1],
        inertia_history=tuple(history),
    )


def nc_scores(features: np.ndarray, k: int) -> np.ndarray:
    """Neighbor-centrality scores for one cluster's members.

    Mean cosine similarity to the k nearest neighbors (cosine distance, self
    excluded, ties to the lower row index). With fewer than k other members
    all of them count; a lone point scores 1.0.
    """
    return nc_neighbors(features, k)[0]


def nc_neighbors(features: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """NC scores plus the neighbor indices (rank order) behind each score."""
    if k < 1:
        raise InvalidClusterCount(f"k must be >= 1, got {k}")
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    m = x.shape[0]
    if m == 0:
        return np.empty(0, dtype=np.float64), np.empty((0, 0), dtype=np.int64)
    if m == 1:
        if not (x[0] != 0.0).any():
            raise ZeroNormFeature("zero-norm feature row at index 0")
        return np.ones(1, dtype=np.float64), np.empty((1, 0), dtype=np.int64)
    return K.nc_topk(x, min(k, m - 1))
