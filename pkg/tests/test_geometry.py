import math

import numpy as np
import pytest

from presel.errors import InvalidClusterCount, TooManyClusters, ZeroNormFeature
from presel.geometry import default_cluster_count, kmeans, nc_neighbors, nc_scores


def blobs(rng, centers, per_blob, stddev):
    """Gaussian blobs; returns (points, blob labels)."""
    points = []
    labels = []
    for b, c in enumerate(centers):
        points.append(c + rng.normal(0.0, stddev, size=(per_blob, len(c))))
        labels.extend([b] * per_blob)
    return np.vstack(points).astype(np.float32), np.array(labels)


def label_match(pred, truth, n_clusters):
    """True if pred equals truth up to a bijective relabeling."""
    mapping = {}
    for p, t in zip(pred, truth):
        if p in mapping:
            if mapping[p] != t:
                return False
        else:
            mapping[p] = t
    return len(set(mapping.values())) == n_clusters


class TestDefaultClusterCount:
    @pytest.mark.parametrize(
        "pool,expected",
        [(1000, 10), (50, 1), (149, 1), (151, 2), (150, 2), (1, 1), (100, 1), (249, 2), (250, 3)],
    )
    def test_paper_rule(self, pool, expected):
        assert default_cluster_count(pool) == expected

    def test_density_knob(self):
        assert default_cluster_count(1000, clusters_per_100=2.0) == 20
        assert default_cluster_count(1000, clusters_per_100=0.5) == 5

    def test_invalid(self):
        with pytest.raises(InvalidClusterCount):
            default_cluster_count(0)


class TestKmeans:
    def test_single_cluster_centroid_is_mean(self, rng):
        x = rng.standard_normal((40, 6)).astype(np.float32)
        out = kmeans(x, 1, seed=0)
        assert set(out.labels.tolist()) == {0}
        np.testing.assert_allclose(out.centroids[0], x.astype(np.float64).mean(axis=0), rtol=1e-10)

    def test_n_clusters_equals_n_points(self, rng):
        x = rng.standard_normal((12, 4)).astype(np.float32)
        out = kmeans(x, 12, seed=3)
        assert sorted(out.labels.tolist()) == list(range(12))
        assert out.inertia == 0.0

    def test_two_well_separated_blobs(self, rng):
        centers = np.array([[10.0, 0.0], [-10.0, 0.0]])  # 20 sigma apart at stddev 1
        x, truth = blobs(rng, centers, 100, 1.0)
        out = kmeans(x, 2, seed=7)
        assert label_match(out.labels, truth, 2)

    def test_inertia_non_increasing(self, rng):
        x = rng.standard_normal((300, 8)).astype(np.float32)
        out = kmeans(x, 6, seed=11)
        hist = out.inertia_history
        assert all(a >= b for a, b in zip(hist, hist[1:]))

    def test_deterministic(self, rng):
        x = rng.standard_normal((200, 5)).astype(np.float32)
        a = kmeans(x, 4, seed=42)
        b = kmeans(x, 4, seed=42)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.centroids, b.centroids)
        c = kmeans(x, 4, seed=43)
        assert not np.array_equal(a.labels, c.labels) or not np.array_equal(a.centroids, c.centroids)

    def test_sizes_partition_pool(self, rng):
        x = rng.standard_normal((123, 3)).astype(np.float32)
        out = kmeans(x, 9, seed=1)
        assert out.sizes.sum() == 123
        assert (out.sizes > 0).all()

    def test_duplicate_points_repair_keeps_clusters_non_empty(self):
        x = np.repeat(np.eye(3, dtype=np.float32), 4, axis=0)  # 12 points, 3 distinct
        out = kmeans(x, 5, seed=0)
        assert (out.sizes > 0).all()
        assert out.sizes.sum() == 12

    def test_errors(self, rng):
        x = rng.standard_normal((5, 2)).astype(np.float32)
        with pytest.raises(TooManyClusters):
            kmeans(x, 6, seed=0)
        with pytest.raises(InvalidClusterCount):
            kmeans(x, 0, seed=0)


class TestNcScores:
    def test_identical_unit_vectors(self):
        # 4 * e0 normalizes exactly, so self-similarity is exactly 1.0
        x = np.tile([4.0, 0.0, 0.0], (3, 1))
        np.testing.assert_array_equal(nc_scores(x, 2), np.ones(3))

    def test_orthogonal_pair(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(nc_scores(x, 1), np.zeros(2))

    def test_lone_point(self):
        assert nc_scores(np.array([[0.5, 0.5]]), 5).tolist() == [1.0]

    def test_small_cluster_uses_all_neighbors(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        got = nc_scores(x, k=10)  # k > m-1, falls back to m-1 = 2 neighbors
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        assert got[0] == pytest.approx((0.0 + inv_sqrt2) / 2, abs=1e-15)

    def test_brute_force_oracle(self, rng):
        x = rng.standard_normal((500, 16))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        got = nc_scores(x, 5)
        xn = x / np.linalg.norm(x, axis=1, keepdims=True)
        sims = np.clip(xn @ xn.T, -1.0, 1.0)
        np.fill_diagonal(sims, -np.inf)
        expected = np.sort(sims, axis=1)[:, -5:].mean(axis=1)
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_scale_invariance(self, rng):
        x = rng.standard_normal((60, 12))
        a = nc_scores(x, 4)
        b = nc_scores(x * 37.5, 4)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_duplicated_point_scores_one(self):
        rest = np.array([[0.0, 8.0, 0.0], [0.0, 0.0, 2.0], [0.0, 4.0, 4.0]])
        copies = np.tile([2.0, 0.0, 0.0], (4, 1))  # k+1 copies for k=3
        x = np.vstack([copies, rest])
        scores = nc_scores(x, 3)
        np.testing.assert_array_equal(scores[:4], np.ones(4))

    def test_tie_breaks_toward_lower_index(self):
        # rows 1 and 2 are identical; row 0 must pick row 1 as its neighbor
        x = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 1.0], [0.0, 1.0]])
        _, neighbors = nc_neighbors(x, 1)
        assert neighbors[0, 0] == 1

    def test_zero_norm_rejected(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ZeroNormFeature):
            nc_scores(x, 1)
        with pytest.raises(ZeroNormFeature):
            nc_scores(np.zeros((1, 3)), 1)

    def test_scores_within_cosine_range(self, rng):
        x = rng.standard_normal((80, 5))
        scores = nc_scores(x, 7)
        assert (scores >= -1.0).all() and (scores <= 1.0).all()

    def test_invalid_k(self, rng):
        with pytest.raises(InvalidClusterCount):
            nc_scores(rng.standard_normal((4, 2)), 0)
