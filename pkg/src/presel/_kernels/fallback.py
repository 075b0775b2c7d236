"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced via
``PRESEL_KERNELS=fallback``). Semantics match the compiled core; floating
point results may differ in the last bits because numpy's reductions are
blocked rather than strictly sequential.
"""

import numpy as np

from ..errors import ZeroNormFeature

BACKEND = "fallback"


def assign_labels(x: np.ndarray, centroids: np.ndarray):
    """Nearest-centroid assignment by squared euclidean distance.

    Returns (labels int64[n], min squared distance float64[n]). Distance ties
    go to the lower centroid index.
    """
    x64 = x.astype(np.float64, copy=False)
    c64 = centroids.astype(np.float64, copy=False)
    cross = x.astype(np.float32, copy=False) @ centroids.astype(np.float32, copy=False).T
    d2 = (x64 * x64).sum(axis=1)[:, None] - 2.0 * cross.astype(np.float64) + (c64 * c64).sum(axis=1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)  # first minimum: lower index wins ties
    mindist = d2[np.arange(d2.shape[0]), labels]
    return labels.astype(np.int64), mindist


def sum_by_label(x: np.ndarray, labels: np.ndarray, n_clusters: int):
    """Per-cluster float64 feature sums and member counts (row order)."""
    sums = np.zeros((n_clusters, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x.astype(np.float64, copy=False))
    counts = np.bincount(labels, minlength=n_clusters).astype(np.int64)
    return sums, counts


def nc_topk(x: np.ndarray, k: int):
    """Mean cosine similarity of each row to its k nearest rows (self excluded).

    `x` must be float64 with at least 2 rows and k <= m-1. Similarity ties
    break toward the lower row index. Returns (scores, neighbor indices in
    rank order).
    """
    norms = np.sqrt((x * x).sum(axis=1))
    if (norms == 0.0).any():
        raise ZeroNormFeature(f"zero-norm feature row at index {int(np.argmin(norms))}")
    xn = x / norms[:, None]
    sims = xn @ xn.T
    np.clip(sims, -1.0, 1.0, out=sims)
    np.fill_diagonal(sims, -np.inf)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(sims, order, axis=1)
    return top.mean(axis=1), order.astype(np.int64)
