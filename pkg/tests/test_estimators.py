import json

import numpy as np
import pytest
from conftest import random_spd
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdmkit.dataset import ActivityDataset, build_contrast_matrix
from rdmkit.errors import CrossvalidationError, InvalidArgumentError, RegularizationError
from rdmkit.estimators import (RDMEstimate, biased_distances, biased_second_moment,
                               centering_matrix, pooled_unbiased_distances, read_rdm_json,
                               stacked_distance_estimates, unbiased_distances,
                               unbiased_second_moment, write_rdm_csv, write_rdm_json)
from rdmkit.noise import inverse_sqrt, prewhiten

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
datasets = arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(2, 5), st.integers(1, 4)),
                  elements=finite)


def brute_unbiased(y):
    """Loop over condition pairs and ordered partition pairs."""
    m, k, p = y.shape
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            acc = 0.0
            for a in range(m):
                for b in range(m):
                    if a != b:
                        acc += np.dot(y[a, i] - y[a, j], y[b, i] - y[b, j])
            out.append(acc / (m * (m - 1) * p))
    return np.array(out)


class TestBiased:
    def test_noise_free_equals_truth(self, rng):
        b = rng.standard_normal((4, 6))
        rdm = biased_distances(ActivityDataset((b, b, b)))
        truth = [np.sum((b[i] - b[j]) ** 2) / 6 for i in range(4) for j in range(i + 1, 4)]
        np.testing.assert_allclose(rdm.d, truth, rtol=1e-13)
        assert rdm.estimator == "biased" and rdm.m == 3

    def test_hand_value(self):
        ds = ActivityDataset((np.array([[1.0], [0.0]]), np.array([[3.0], [0.0]])))
        assert biased_distances(ds).d[0] == 4.0

    def test_single_partition_allowed(self):
        ds = ActivityDataset((np.array([[1.0, 1.0], [0.0, 0.0]]),))
        assert biased_distances(ds).d[0] == 1.0

    def test_contrast_mismatch(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((2, 3, 4)))
        with pytest.raises(InvalidArgumentError):
            biased_distances(ds, build_contrast_matrix(4))

    @given(datasets)
    def test_nonnegative(self, y):
        assert np.all(biased_distances(ActivityDataset.from_array(y)).d >= 0)

    def test_mean_bias_monte_carlo(self):
        # identical true patterns, unit noise, M=4: E(d_hat) = Xi_kk / M = 0.5
        rng = np.random.default_rng(1)
        d_b, _ = stacked_distance_estimates(rng.standard_normal((100000, 4, 2, 1)))
        se = d_b.std() / np.sqrt(d_b.size)
        assert abs(d_b.mean() - 0.5) < 3 * se


class TestUnbiased:
    def test_hand_value(self):
        ds = ActivityDataset((np.array([[2.0], [0.0]]), np.array([[4.0], [0.0]])))
        assert unbiased_distances(ds).d[0] == 8.0

    def test_noise_free_equals_biased(self, rng):
        b = rng.standard_normal((3, 5))
        ds = ActivityDataset((b, b, b, b))
        np.testing.assert_allclose(unbiased_distances(ds).d, biased_distances(ds).d, rtol=1e-13)

    def test_needs_two_partitions(self):
        with pytest.raises(CrossvalidationError):
            unbiased_distances(ActivityDataset((np.zeros((2, 2)),)))

    def test_unknown_method(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((2, 3, 4)))
        with pytest.raises(InvalidArgumentError):
            unbiased_distances(ds, method="fast")

    def test_negative_values_not_clipped(self):
        ds = ActivityDataset((np.array([[1.0], [0.0]]), np.array([[-1.0], [0.0]])))
        assert unbiased_distances(ds).d[0] == -1.0

    @given(datasets)
    def test_matches_brute_force(self, y):
        rdm = unbiased_distances(ActivityDataset.from_array(y))
        np.testing.assert_allclose(rdm.d, brute_unbiased(y), rtol=1e-9, atol=1e-9)

    @given(datasets)
    def test_direct_and_identity_paths_agree(self, y):
        ds = ActivityDataset.from_array(y)
        a = unbiased_distances(ds, method="direct").d
        b = unbiased_distances(ds, method="identity").d
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-6)

    def test_large_m_uses_identity(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((40, 3, 2)))
        np.testing.assert_allclose(unbiased_distances(ds).d, brute_unbiased(ds.stacked()), rtol=1e-10)

    def test_zero_signal_mean_monte_carlo(self):
        rng = np.random.default_rng(2)
        _, d_u = stacked_distance_estimates(rng.standard_normal((100000, 4, 3, 2)))
        se = d_u.std(axis=0) / np.sqrt(d_u.shape[0])
        assert np.all(np.abs(d_u.mean(axis=0)) < 3 * se)

    def test_bias_difference_monte_carlo(self):
        sigma2, m = 2.0, 4
        rng = np.random.default_rng(3)
        d_b, d_u = stacked_distance_estimates(np.sqrt(sigma2) * rng.standard_normal((100000, m, 3, 2)))
        diff = d_b - d_u
        se = diff.std(axis=0) / np.sqrt(diff.shape[0])
        assert np.all(np.abs(diff.mean(axis=0) - 2 * sigma2 / m) < 3 * se)


class TestInvariants:
    @given(datasets, st.floats(-10, 10))
    def test_scaling(self, y, alpha):
        ds = ActivityDataset.from_array(y)
        scaled = ActivityDataset.from_array(alpha * y)
        for fn in (biased_distances, unbiased_distances):
            np.testing.assert_allclose(fn(scaled).d, alpha ** 2 * fn(ds).d, rtol=1e-9, atol=1e-6)

    @given(datasets, st.integers(0, 2**32 - 1))
    def test_common_pattern_shift(self, y, seed):
        # a pattern shared by all conditions of a partition cancels in every difference
        shift = np.random.default_rng(seed).standard_normal((y.shape[0], 1, y.shape[2])) * 100
        for fn in (biased_distances, unbiased_distances):
            np.testing.assert_allclose(fn(ActivityDataset.from_array(y + shift)).d,
                                       fn(ActivityDataset.from_array(y)).d, rtol=1e-9, atol=1e-4)

    @given(datasets, st.randoms(use_true_random=False))
    def test_permutation_equivariance(self, y, rnd):
        k = y.shape[1]
        perm = list(range(k))
        rnd.shuffle(perm)
        d = unbiased_distances(ActivityDataset.from_array(y)).d
        dp = unbiased_distances(ActivityDataset.from_array(y[:, perm])).d
        lookup = {}
        r = 0
        for i in range(k):
            for j in range(i + 1, k):
                lookup[i, j] = lookup[j, i] = d[r]
                r += 1
        r = 0
        for i in range(k):
            for j in range(i + 1, k):
                assert dp[r] == pytest.approx(lookup[perm[i], perm[j]], rel=1e-9, abs=1e-9)
                r += 1

    def test_mahalanobis_pathway(self, rng):
        y = rng.standard_normal((3, 4, 6))
        s = random_spd(rng, 6)
        got = unbiased_distances(prewhiten(ActivityDataset.from_array(y), s)).d
        sinv = np.linalg.inv(s)
        c = build_contrast_matrix(4).c
        expect = np.zeros(6)
        for a in range(3):
            for b in range(3):
                if a != b:
                    expect += np.einsum("dp,pq,dq->d", c @ y[a], sinv, c @ y[b])
        np.testing.assert_allclose(got, expect / (6 * 6), rtol=1e-8)


class TestSecondMoment:
    def test_identical_partitions(self, rng):
        b = rng.standard_normal((4, 5))
        b -= b.mean(axis=0)
        g = unbiased_second_moment(ActivityDataset((b, b, b))).g
        h = centering_matrix(4)
        np.testing.assert_allclose(g, h @ b @ b.T @ h.T / 5, atol=1e-13)

    def test_rows_sum_to_zero_and_symmetric(self, rng):
        sm = unbiased_second_moment(ActivityDataset.from_array(rng.standard_normal((3, 4, 5))))
        np.testing.assert_allclose(sm.g.sum(axis=1), 0, atol=1e-13)
        np.testing.assert_array_equal(sm.g, sm.g.T)

    def test_distances_match_crossvalidated(self, rng):
        y = rng.standard_normal((3, 5, 7))
        y -= y.mean(axis=1, keepdims=True)
        ds = ActivityDataset.from_array(y)
        np.testing.assert_allclose(unbiased_second_moment(ds).distances(),
                                   unbiased_distances(ds).d, atol=1e-10)
        np.testing.assert_allclose(biased_second_moment(ds).distances(),
                                   biased_distances(ds).d, atol=1e-10)

    def test_biased_centered_is_psd(self, rng):
        g = biased_second_moment(ActivityDataset.from_array(rng.standard_normal((2, 5, 3)))).g
        assert np.linalg.eigvalsh(g)[0] > -1e-12

    def test_needs_two_partitions(self):
        with pytest.raises(CrossvalidationError):
            unbiased_second_moment(ActivityDataset((np.zeros((2, 2)),)))

    def test_pure_noise_mean_monte_carlo(self):
        rng = np.random.default_rng(4)
        y = rng.standard_normal((100000, 3, 3, 2))
        total = y.sum(axis=1)
        g = (total @ np.swapaxes(total, -1, -2) - np.einsum("nmkp,nmlp->nkl", y, y)) / (3 * 2 * 2)
        se = g.std(axis=0) / np.sqrt(len(g))
        assert np.all(np.abs(g.mean(axis=0)) < 3 * se)


class TestStacked:
    @given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 4), st.integers(2, 4),
                                        st.integers(1, 3)), elements=finite))
    def test_matches_single_dataset_estimators(self, y):
        d_b, d_u = stacked_distance_estimates(y)
        for n in range(y.shape[0]):
            ds = ActivityDataset.from_array(y[n])
            np.testing.assert_allclose(d_b[n], biased_distances(ds).d, rtol=1e-9, atol=1e-7)
            np.testing.assert_allclose(d_u[n], unbiased_distances(ds).d, rtol=1e-9, atol=1e-6)


class TestPooled:
    def test_equal_covariances_collapse_to_plain(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((4, 4, 6)))
        sk = [np.eye(4)] * 4
        pooled = pooled_unbiased_distances(ds, None, sk, np.eye(6))
        np.testing.assert_allclose(pooled.d, unbiased_distances(ds).d, atol=1e-10)

    def test_gls_against_explicit_stacking(self, rng):
        m, k, p = 3, 3, 4
        ds = ActivityDataset.from_array(rng.standard_normal((m, k, p)))
        sks = [random_spd(rng, k) for _ in range(m)]
        c = build_contrast_matrix(k).c
        xs, vs = [], []
        for a in range(m):
            for b in range(a + 1, m):
                xs.append(np.einsum("dp,dp->d", c @ ds.patterns[a], c @ ds.patterns[b]) / p)
                vs.append((c @ sks[a] @ c.T) * (c @ sks[b] @ c.T))
        y = np.concatenate(xs)
        x = np.tile(np.eye(3), (len(xs), 1))
        vinv = np.linalg.inv(np.block([[vs[i] if i == j else np.zeros((3, 3))
                                        for j in range(len(vs))] for i in range(len(vs))]))
        expect = np.linalg.solve(x.T @ vinv @ x, x.T @ vinv @ y)
        got = pooled_unbiased_distances(ds, None, sks, np.eye(p)).d
        np.testing.assert_allclose(got, expect, rtol=1e-9)

    def test_singular_variance(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((2, 3, 4)))
        with pytest.raises(RegularizationError):
            pooled_unbiased_distances(ds, None, [np.zeros((3, 3)), np.eye(3)], np.eye(4))

    def test_wrong_count(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((2, 3, 4)))
        with pytest.raises(InvalidArgumentError):
            pooled_unbiased_distances(ds, None, [np.eye(3)], np.eye(4))

    def test_returns_covariance(self, rng):
        ds = ActivityDataset.from_array(rng.standard_normal((3, 3, 4)))
        est, cov = pooled_unbiased_distances(ds, None, [np.eye(3)] * 3, np.eye(4),
                                             return_covariance=True)
        assert cov.shape == (3, 3)
        np.testing.assert_array_equal(cov, cov.T)


class TestSerialisation:
    def test_json_round_trip(self, tmp_path, rng):
        rdm = RDMEstimate(rng.standard_normal(6), "unbiased", "mahalanobis", 4, 3)
        write_rdm_json(tmp_path / "r.json", rdm)
        back = read_rdm_json(tmp_path / "r.json")
        np.testing.assert_array_equal(back.d, rdm.d)
        assert (back.k, back.m, back.estimator, back.metric) == (4, 3, "unbiased", "mahalanobis")
        obj = json.loads((tmp_path / "r.json").read_text())
        assert obj["pairs"][:3] == [[0, 1], [0, 2], [0, 3]]
        assert not (tmp_path / "r.json.tmp").exists()

    def test_csv(self, tmp_path):
        rdm = RDMEstimate([0.5, 1.0, 1.5], "biased", "euclidean", 3, 2)
        write_rdm_csv(tmp_path / "r.csv", rdm)
        assert (tmp_path / "r.csv").read_text().splitlines() == [
            "i,j,d", "0,1,0.5", "0,2,1.0", "1,2,1.5"]

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            RDMEstimate([1.0, 2.0], "biased", "euclidean", 3, 2)

    def test_noncanonical_pairs_rejected(self, tmp_path):
        (tmp_path / "r.json").write_text(json.dumps(
            {"k": 3, "m": 2, "pairs": [[0, 2], [0, 1], [1, 2]], "d": [1, 2, 3]}))
        with pytest.raises(Exception, match="canonical"):
            read_rdm_json(tmp_path / "r.json")
