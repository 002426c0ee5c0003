import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsekernel import rng
from sparsekernel.harness.oracles import dense_oracle_posterior, dense_vn_kappa_form, random_instance
from sparsekernel.kernels import KernelSpec, reduced_rank, sample_rkhs_function
from sparsekernel.posterior import (
    Dataset,
    ExactPosterior,
    NegativeVarianceError,
    SparsePosterior,
    _clamp,
    chol_update,
    compress,
    decompose_variance,
    effective_dimension,
    exact_variance,
    fit_exact,
    fit_sparse,
    information_gain,
    project_rkhs,
    variational_moments,
    variational_optimum,
    weights_vn,
)

SE1 = KernelSpec.squared_exponential(1.0, 1.0, 1)


def dense_exact(kernel, X, Y, tau, Q):
    K = kernel(X) + tau**2 * np.eye(len(X))
    kq = kernel(X, Q)
    mean = kq.T @ np.linalg.solve(K, Y)
    var = kernel.diag(Q) - np.einsum("iq,iq->q", kq, np.linalg.solve(K, kq))
    return mean, var


class TestDataset:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), np.zeros(2), 0.1)

    def test_tau_positive(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 1)), np.zeros(1), 0.0)

    def test_append_keeps_order(self):
        d = Dataset(np.zeros((0, 1)), np.zeros(0), 0.1)
        d.append([0.5], 1.0)
        d.append([0.2], 2.0)
        np.testing.assert_array_equal(d.X[:, 0], [0.5, 0.2])
        np.testing.assert_array_equal(d.Y, [1.0, 2.0])
        assert d.inputs_only().Y is None


class TestExactPosterior:
    def test_prior(self):
        ex = fit_exact(SE1, Dataset(np.zeros((0, 1)), np.zeros(0), 1.0))
        Q = np.linspace(-1, 1, 5).reshape(-1, 1)
        np.testing.assert_array_equal(ex.mean(Q), 0.0)
        np.testing.assert_allclose(ex.variance(Q), SE1.diag(Q))

    def test_one_point(self):
        ex = fit_exact(SE1, Dataset([[0.0]], [1.0], 1.0))
        np.testing.assert_allclose(ex.mean([[0.0]]), [0.5], rtol=1e-14)
        np.testing.assert_allclose(ex.variance([[0.0]]), [0.5], rtol=1e-14)

    def test_dense_solve(self):
        gen = rng.stream(3, rng.TRIAL)
        k = KernelSpec.squared_exponential(0.3, 1.0, 1)
        X, Y = gen.random((5, 1)), gen.standard_normal(5)
        Q = np.linspace(0, 1, 17).reshape(-1, 1)
        ex = ExactPosterior(k, Dataset(X, Y, 0.2))
        mean, var = dense_exact(k, X, Y, 0.2, Q)
        np.testing.assert_allclose(ex.mean(Q), mean, atol=1e-9)
        np.testing.assert_allclose(ex.std(Q), np.sqrt(var), atol=1e-9)

    def test_variance_shrinks_with_data(self):
        k = KernelSpec.matern(1.5, 0.2, 1.0, 1)
        X = rng.stream(4, rng.TRIAL).random((30, 1))
        Q = np.linspace(0, 1, 50).reshape(-1, 1)
        prev = k.diag(Q)
        for n in range(1, 31, 5):
            cur = ExactPosterior(k, Dataset(X[:n], np.zeros(n), 0.1)).variance(Q)
            assert np.all(cur <= prev + 1e-12)
            assert np.all(cur >= 0)
            prev = cur

    def test_exact_variance_helper(self):
        k = KernelSpec.squared_exponential(0.2, 1.0, 1)
        X = np.concatenate([rng.stream(5, rng.TRIAL).random((12, 1)), [[0.5], [0.5]]])
        Q = np.linspace(0, 1, 9).reshape(-1, 1)
        _, var = dense_exact(k, X, np.zeros(len(X)), 0.1, Q)
        np.testing.assert_allclose(exact_variance(k, X, 0.1, Q), var, atol=1e-10)


class TestSparsePosterior:
    def test_full_support_matches_exact(self):
        k = KernelSpec.squared_exponential(0.3, 1.0, 1)
        gen = rng.stream(6, rng.TRIAL)
        X, Y = gen.random((8, 1)), gen.standard_normal(8)
        data = Dataset(X, Y, 0.1)
        Q = gen.random((20, 1))
        sp = fit_sparse(k, data, reduced_rank(k, X, jitter=0.0))
        ex = fit_exact(k, data)
        np.testing.assert_allclose(sp.mean(Q), ex.mean(Q), atol=1e-8)
        np.testing.assert_allclose(sp.std(Q), ex.std(Q), atol=1e-8)

    def test_no_data(self):
        Z = np.array([[0.2], [0.8]])
        sp = SparsePosterior(SE1, Dataset(np.zeros((0, 1)), np.zeros(0), 0.5), Z)
        Q = np.linspace(0, 1, 7).reshape(-1, 1)
        np.testing.assert_array_equal(sp.mean(Q), 0.0)
        np.testing.assert_allclose(sp.variance(Q), SE1.diag(Q), atol=1e-12)

    def test_dense_oracle_n30_m5(self):
        k = KernelSpec.squared_exponential(0.2, 1.0, 1)
        gen = rng.stream(7, rng.TRIAL)
        X, Y = gen.random((30, 1)), gen.standard_normal(30)
        Z = X[[0, 6, 12, 18, 24]]
        data = Dataset(X, Y, 0.1)
        Q = np.linspace(0, 1, 40).reshape(-1, 1)
        sp = SparsePosterior(k, data, Z)
        mu, sd, _ = dense_oracle_posterior(k, data, Z, Q, sp.jitter)
        np.testing.assert_allclose(sp.mean(Q), mu, atol=1e-8)
        np.testing.assert_allclose(sp.std(Q), sd, atol=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_instances(self, seed):
        k, data, Z, Q = random_instance(seed, n_max=60, m_max=10)
        sp = SparsePosterior(k, data, Z)
        mu, sd, _ = dense_oracle_posterior(k, data, Z, Q, sp.jitter)
        np.testing.assert_allclose(sp.mean(Q), mu, atol=1e-8)
        np.testing.assert_allclose(sp.std(Q), sd, atol=1e-8)

    def test_variance_bounded_by_prior(self):
        k, data, Z, Q = random_instance(21)
        sp = SparsePosterior(k, data, Z)
        v = sp.variance(Q)
        assert np.all(v >= 0) and np.all(v <= k.diag(Q) + 1e-8 * k.k_max)

    def test_append_matches_refit(self):
        k = KernelSpec.matern(2.5, 0.3, 1.0, 2)
        gen = rng.stream(8, rng.TRIAL)
        X, Y = gen.random((25, 2)), gen.standard_normal(25)
        Z = X[:6]
        Q = gen.random((15, 2))
        sp = SparsePosterior(k, Dataset(X[:10], Y[:10], 0.2), Z)
        for i in range(10, 25):
            sp.append(X[i], Y[i])
        ref = SparsePosterior(k, Dataset(X, Y, 0.2), Z)
        np.testing.assert_allclose(sp.mean(Q), ref.mean(Q), atol=1e-10)
        np.testing.assert_allclose(sp.variance(Q), ref.variance(Q), atol=1e-10)

    def test_inputs_only_has_no_mean(self):
        sp = SparsePosterior(SE1, Dataset([[0.0]], None, 0.5), [[0.0]])
        with pytest.raises(ValueError):
            sp.mean([[0.0]])
        assert sp.variance([[0.0]])[0] > 0


class TestWeights:
    def test_one_point(self):
        k = KernelSpec.squared_exponential(0.5, 1.0, 1)
        X, Z, x = np.array([[0.1]]), np.array([[0.0], [0.4]]), np.array([[0.3]])
        sp = SparsePosterior(k, Dataset(X, [1.0], 0.3), reduced_rank(k, Z, jitter=0.0))
        kZ, KZZ, KXZ = k(Z, x)[:, 0], k(Z), k(X, Z)
        expected = kZ @ np.linalg.solve(0.09 * KZZ + KXZ.T @ KXZ, KXZ.T[:, 0])
        np.testing.assert_allclose(weights_vn(sp, x[0]), [expected], rtol=1e-10)
        np.testing.assert_allclose(sp.mean(x), [expected], rtol=1e-10)

    @pytest.mark.parametrize("seed", range(8))
    def test_dual_forms(self, seed):
        k, data, Z, Q = random_instance(100 + seed, n_max=30, m_max=8)
        sp = SparsePosterior(k, data, Z)
        Vk = dense_vn_kappa_form(k, data.X, Z, data.tau, Q, sp.jitter)
        np.testing.assert_allclose(sp.weights(Q), Vk, atol=1e-9)
        np.testing.assert_allclose(sp.weights(Q).T @ data.Y, sp.mean(Q), atol=1e-10)

    @pytest.mark.parametrize("seed", range(8))
    def test_noise_part_below_variance(self, seed):
        k, data, Z, Q = random_instance(200 + seed, n_max=30, m_max=8)
        sp = SparsePosterior(k, data, Z)
        V = sp.weights(Q)
        assert np.all(data.tau**2 * np.sum(V * V, axis=0) <= sp.variance(Q) + 1e-12)


class TestProjection:
    def test_centers_inside_support(self):
        k = KernelSpec.squared_exponential(0.3, 1.0, 1)
        f = sample_rkhs_function(k, 3, 1.0, seed=1)
        Z = np.vstack([f.centers, [[0.5]]])
        p = project_rkhs(f, reduced_rank(k, Z, jitter=0.0))
        Q = np.linspace(0, 1, 30).reshape(-1, 1)
        np.testing.assert_allclose(p(Q), f(Q), atol=1e-9)

    def test_interpolates_and_shrinks_norm(self):
        k = KernelSpec.matern(1.5, 0.2, 1.0, 1)
        f = sample_rkhs_function(k, 6, 1.3, seed=2)
        Z = np.array([[0.1], [0.45], [0.9]])
        p = project_rkhs(f, reduced_rank(k, Z))
        np.testing.assert_allclose(p(Z), f(Z), atol=1e-7)
        assert p.rkhs_norm <= f.rkhs_norm + 1e-9

    def test_residual_bound(self):
        k = KernelSpec.squared_exponential(0.2, 1.0, 1)
        f = sample_rkhs_function(k, 8, 2.0, seed=3)
        Z = rng.stream(3, rng.TRIAL).random((3, 1))
        rr = reduced_rank(k, Z, jitter=0.0)
        p = project_rkhs(f, rr)
        Q = np.linspace(0, 1, 200).reshape(-1, 1)
        gap = np.sqrt(np.maximum(k.diag(Q) - rr.diag(Q), 0.0))
        assert np.all(np.abs(f(Q) - p(Q)) <= f.rkhs_norm * gap + 1e-9)


class TestDecomposition:
    def test_no_data(self):
        Z = np.array([[0.3]])
        sp = SparsePosterior(SE1, Dataset(np.zeros((0, 1)), np.zeros(0), 0.4), Z)
        Q = np.linspace(0, 1, 6).reshape(-1, 1)
        dec = decompose_variance(sp, Q)
        kap = sp.rr.diag(Q)
        np.testing.assert_allclose(dec.projection_term, SE1.diag(Q) - kap, atol=1e-12)
        np.testing.assert_allclose(dec.reduced_prediction_term, kap, atol=1e-12)
        np.testing.assert_array_equal(dec.noise_term, 0.0)

    def test_full_support(self):
        k = KernelSpec.squared_exponential(0.3, 1.0, 1)
        X = np.linspace(0, 1, 7).reshape(-1, 1)
        sp = SparsePosterior(k, Dataset(X, np.zeros(7), 0.1), reduced_rank(k, X, jitter=0.0))
        np.testing.assert_allclose(sp.decompose(X).projection_term, 0.0, atol=1e-10)

    def test_sum_n20_m4(self):
        k = KernelSpec.squared_exponential(0.25, 1.0, 1)
        gen = rng.stream(9, rng.TRIAL)
        X = gen.random((20, 1))
        data = Dataset(X, gen.standard_normal(20), 0.2)
        Z = X[[1, 5, 9, 13]]
        Q = gen.random((50, 1))
        sp = SparsePosterior(k, data, Z)
        dec = sp.decompose(Q)
        _, sd, odec = dense_oracle_posterior(k, data, Z, Q, sp.jitter)
        np.testing.assert_allclose(dec.total, sd**2, atol=1e-8)
        np.testing.assert_allclose(odec.total, sd**2, atol=1e-9)
        for t in (dec.projection_term, dec.reduced_prediction_term, dec.noise_term):
            assert t.min() >= -1e-10

    def test_clamping(self):
        v, c = _clamp(np.array([0.5, -1e-12]), 1.0)
        np.testing.assert_array_equal(v, [0.5, 0.0])
        assert c == pytest.approx(1e-12)
        with pytest.raises(NegativeVarianceError):
            _clamp(np.array([-1e-3]), 1.0)


class TestInformationAccounting:
    def test_single_point(self):
        assert information_gain(SE1, [[0.0]], 1.0) == pytest.approx(0.5 * math.log(2), abs=1e-15)
        assert effective_dimension(SE1, [[0.0]], 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_empty(self):
        assert information_gain(SE1, np.zeros((0, 1)), 1.0) == 0.0
        assert effective_dimension(SE1, np.zeros((0, 1)), 1.0) == 0.0

    def test_ten_points_dense(self):
        k = KernelSpec.matern(1.5, 0.3, 1.0, 2)
        X = rng.stream(10, rng.TRIAL).random((10, 2))
        tau = 0.3
        K = k(X)
        _, logdet = np.linalg.slogdet(np.eye(10) + K / tau**2)
        np.testing.assert_allclose(information_gain(k, X, tau), 0.5 * logdet, atol=1e-9)
        trace = np.trace(K @ np.linalg.inv(K + tau**2 * np.eye(10)))
        np.testing.assert_allclose(effective_dimension(k, X, tau), trace, atol=1e-9)

    def test_duplicates_handled(self):
        k = KernelSpec.squared_exponential(0.2, 1.0, 1)
        X = np.array([[0.1], [0.1], [0.4], [0.1], [0.9]])
        K = k(X)
        _, logdet = np.linalg.slogdet(np.eye(5) + K / 0.01)
        np.testing.assert_allclose(information_gain(k, X, 0.1), 0.5 * logdet, atol=1e-9)

    def test_monotone_in_points(self):
        k = KernelSpec.squared_exponential(0.1, 1.0, 1)
        X = rng.stream(11, rng.TRIAL).random((40, 1))
        gains = [information_gain(k, X[:n], 0.1) for n in range(41)]
        assert np.all(np.diff(gains) >= -1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_effective_dimension_below_gain(self, seed):
        k = KernelSpec.squared_exponential(0.15, 1.0, 1)
        X = rng.stream(seed, rng.TRIAL).random((60, 1))
        for tau in (0.05, 0.1, 0.5):
            assert effective_dimension(k, X, tau) <= information_gain(k, X, tau) + 1e-12


class TestVariational:
    @pytest.mark.parametrize("seed", range(5))
    def test_optimum_reproduces_posterior(self, seed):
        k, data, Z, Q = random_instance(300 + seed, n_max=40, m_max=8)
        sp = SparsePosterior(k, data, reduced_rank(k, Z, jitter=0.0))
        params = variational_optimum(k, data, Z)
        mean, cov = variational_moments(k, Z, params, Q)
        np.testing.assert_allclose(mean, sp.mean(Q), atol=1e-8)
        np.testing.assert_allclose(np.diag(cov), sp.variance(Q), atol=1e-8)


class TestLinearAlgebraHelpers:
    def test_chol_update(self):
        gen = rng.stream(12, rng.TRIAL)
        A = gen.standard_normal((6, 6))
        M = A @ A.T + np.eye(6)
        v = gen.standard_normal(6)
        L = np.linalg.cholesky(M)
        chol_update(L, v)
        np.testing.assert_allclose(L @ L.T, M + np.outer(v, v), atol=1e-10)

    def test_compress(self):
        X = np.array([[0.3], [0.1], [0.3], [0.2], [0.1]])
        U, counts, inv = compress(X)
        np.testing.assert_array_equal(U[inv], X)
        assert counts.sum() == 5 and U.shape[0] == 3


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n=st.integers(0, 25),
    m=st.integers(1, 6),
    tau=st.floats(0.05, 1.0),
)
def test_sparse_variance_between_zero_and_prior(seed, n, m, tau):
    k = KernelSpec.matern(1.5, 0.3, 1.0, 1)
    gen = rng.stream(seed, rng.TRIAL)
    X = gen.random((n, 1))
    Z = gen.random((m, 1))
    Q = gen.random((10, 1))
    sp = SparsePosterior(k, Dataset(X, gen.standard_normal(n), tau), Z)
    v = sp.variance(Q)
    assert np.all(v >= 0) and np.all(v <= k.diag(Q) + 1e-8)
    dec = sp.decompose(Q)
    np.testing.assert_allclose(dec.total, v, atol=1e-8)
