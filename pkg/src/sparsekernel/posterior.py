"""Exact and sparse (Nyström / SVGP) kernel regression posteriors.

The sparse posterior is stored in whitened form.  With ``K_ZZ + eta I = L L^T``
and ``A = L^{-1} K_ZX`` (``m x n``), the ``m x m`` matrix
``M = A A^T + tau^2 I`` satisfies ``tau^2 K_ZZ + K_XZ^T K_XZ = L M L^T``, so

    mean(x)     = a_x^T M^{-1} A Y
    variance(x) = k(x, x) - |a_x|^2 + tau^2 |L_M^{-1} a_x|^2
    V_n(x)      = A^T M^{-1} a_x

with ``a_x = L^{-1} k_Z(x)``.  ``M`` has eigenvalues ``>= tau^2`` which keeps
the factorization well conditioned even when ``K_ZZ`` is not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .kernels import KernelSpec, ReducedRankKernel, RkhsFunction, reduced_rank

NEG_VARIANCE_TOL = 1e-8


class NegativeVarianceError(ArithmeticError):
    pass


@dataclass
class Dataset:
    """Ordered, append-only record of inputs and (optionally) observations.

    ``Y is None`` marks an inputs-only dataset; selection rules that must not
    see observations are handed one of these.
    """

    X: np.ndarray
    Y: np.ndarray | None
    tau: float

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.Y is not None:
            self.Y = np.asarray(self.Y, dtype=float).reshape(-1)
            if self.Y.shape[0] != self.X.shape[0]:
                raise ValueError("X and Y must have the same length")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def append(self, x, y=None) -> None:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        self.X = np.vstack([self.X.reshape(-1, x.shape[1]), x])
        if self.Y is not None:
            if y is None:
                raise ValueError("dataset carries observations; y is required")
            self.Y = np.append(self.Y, float(y))

    def inputs_only(self) -> "Dataset":
        return Dataset(self.X.copy(), None, self.tau)


def _clamp(values: np.ndarray, k_max: float) -> tuple[np.ndarray, float]:
    values = np.asarray(values, dtype=float)
    low = float(values.min()) if values.size else 0.0
    if low < -NEG_VARIANCE_TOL * k_max:
        raise NegativeVarianceError(f"variance term {low:.3e} below roundoff tolerance")
    clamp = max(0.0, -low)
    return np.maximum(values, 0.0), clamp


class ExactPosterior:
    """Kernel ridge / GP posterior with regularizer ``tau^2``."""

    def __init__(self, kernel: KernelSpec, dataset: Dataset):
        self.kernel = kernel
        self.dataset = dataset
        X = kernel.points(dataset.X)
        self.X = X
        n = X.shape[0]
        if n:
            K = kernel(X)
            K[np.diag_indices(n)] += dataset.tau**2
            try:
                self.factor = sla.cholesky(K, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise RuntimeError("internal error: K + tau^2 I not positive definite") from exc
            if dataset.Y is not None:
                self.alpha = sla.cho_solve((self.factor, True), dataset.Y, check_finite=False)
            else:
                self.alpha = None
        else:
            self.factor = np.zeros((0, 0))
            self.alpha = np.zeros(0)

    def mean(self, Q) -> np.ndarray:
        Q = self.kernel.points(Q)
        if self.alpha is None:
            raise ValueError("posterior was fitted without observations")
        if not self.X.shape[0]:
            return np.zeros(Q.shape[0])
        return self.kernel(Q, self.X) @ self.alpha

    def variance(self, Q) -> np.ndarray:
        Q = self.kernel.points(Q)
        prior = self.kernel.diag(Q)
        if not self.X.shape[0]:
            return prior
        W = sla.solve_triangular(self.factor, self.kernel(self.X, Q), lower=True, check_finite=False)
        return _clamp(prior - np.einsum("ij,ij->j", W, W), self.kernel.k_max)[0]

    def std(self, Q) -> np.ndarray:
        return np.sqrt(self.variance(Q))


def fit_exact(kernel: KernelSpec, dataset: Dataset) -> ExactPosterior:
    return ExactPosterior(kernel, dataset)


@dataclass
class VarianceDecomposition:
    """Three nonnegative parts of the sparse posterior variance at query points."""

    projection_term: np.ndarray
    reduced_prediction_term: np.ndarray
    noise_term: np.ndarray
    clamp: float = 0.0

    @property
    def total(self) -> np.ndarray:
        return self.projection_term + self.reduced_prediction_term + self.noise_term


def _inducing_points(inducing) -> np.ndarray:
    if isinstance(inducing, ReducedRankKernel):
        return inducing.inducing
    return getattr(inducing, "Z", inducing)


class SparsePosterior:
    """Nyström / SVGP posterior; ``O(n m^2)`` to build, ``O(m^2)`` per query."""

    def __init__(self, kernel: KernelSpec, dataset: Dataset, inducing):
        self.kernel = kernel
        self.dataset = dataset
        self.tau = dataset.tau
        if isinstance(inducing, ReducedRankKernel):
            self.rr = inducing
        else:
            self.rr = reduced_rank(kernel, _inducing_points(inducing))
        X = kernel.points(dataset.X)
        self.A = self.rr.features(X) if X.shape[0] else np.zeros((self.m, 0))
        M = self.A @ self.A.T
        M[np.diag_indices(self.m)] += self.tau**2
        self.chol_M = sla.cholesky(M, lower=True, check_finite=False)
        if dataset.Y is not None:
            self.b = self.A @ dataset.Y if X.shape[0] else np.zeros(self.m)
            self.w = sla.cho_solve((self.chol_M, True), self.b, check_finite=False)
        else:
            self.b = self.w = None

    @property
    def m(self) -> int:
        return self.rr.m

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def inducing(self) -> np.ndarray:
        return self.rr.inducing

    @property
    def jitter(self) -> float:
        return self.rr.jitter

    def mean(self, Q) -> np.ndarray:
        if self.w is None:
            raise ValueError("posterior was fitted without observations")
        return self.rr.features(Q).T @ self.w

    def _parts(self, Q):
        F = self.rr.features(Q)
        proj = self.kernel.diag(Q) - np.einsum("ij,ij->j", F, F)
        G = sla.solve_triangular(self.chol_M, F, lower=True, check_finite=False)
        reduced_var = self.tau**2 * np.einsum("ij,ij->j", G, G)
        return F, proj, reduced_var

    def variance(self, Q) -> np.ndarray:
        _, proj, reduced_var = self._parts(Q)
        return _clamp(proj + reduced_var, self.kernel.k_max)[0]

    def std(self, Q) -> np.ndarray:
        return np.sqrt(self.variance(Q))

    def reduced_variance(self, Q) -> np.ndarray:
        """Posterior variance of the GP with the Nyström kernel, conditioned on X."""
        return self._parts(Q)[2]

    def weights(self, Q) -> np.ndarray:
        """``V_n`` at each query point, as an ``(n, q)`` array."""
        F = self.rr.features(Q)
        return self.A.T @ sla.cho_solve((self.chol_M, True), F, check_finite=False)

    def decompose(self, Q) -> VarianceDecomposition:
        F, proj, reduced_var = self._parts(Q)
        V = self.A.T @ sla.cho_solve((self.chol_M, True), F, check_finite=False)
        noise = self.tau**2 * np.einsum("ij,ij->j", V, V)
        k_max = self.kernel.k_max
        proj, c1 = _clamp(proj, k_max)
        reduced, c2 = _clamp(reduced_var - noise, k_max)
        return VarianceDecomposition(proj, reduced, noise, max(c1, c2))

    def rkhs_coefficients(self) -> np.ndarray:
        """Coefficients of the mean as an expansion over the inducing points."""
        if self.w is None:
            raise ValueError("posterior was fitted without observations")
        return sla.solve_triangular(self.rr.factor.T, self.w, lower=False, check_finite=False)

    def mean_function(self) -> RkhsFunction:
        return RkhsFunction(self.inducing, self.rkhs_coefficients(), self.kernel)

    def mean_rkhs_norm(self) -> float:
        return self.mean_function().rkhs_norm

    def append(self, x, y=None) -> None:
        """Add one observation with a rank-one update of the ``m x m`` factor."""
        x = self.kernel.points(x)
        if x.shape[0] != 1:
            raise ValueError("append takes a single point")
        a = self.rr.features(x)[:, 0]
        self.dataset.append(x[0], y)
        self.A = np.hstack([self.A, a[:, None]])
        chol_update(self.chol_M, a)
        if self.b is not None:
            self.b = self.b + a * float(y)
            self.w = sla.cho_solve((self.chol_M, True), self.b, check_finite=False)


def fit_sparse(kernel: KernelSpec, dataset: Dataset, inducing) -> SparsePosterior:
    return SparsePosterior(kernel, dataset, inducing)


def weights_vn(sp: SparsePosterior, x) -> np.ndarray:
    return sp.weights(x)[:, 0]


def decompose_variance(sp: SparsePosterior, x) -> VarianceDecomposition:
    return sp.decompose(x)


def chol_update(L: np.ndarray, v: np.ndarray) -> None:
    """In-place update of lower ``L`` to the factor of ``L L^T + v v^T``."""
    v = np.array(v, dtype=float)
    n = v.shape[0]
    for k in range(n):
        r = math.hypot(L[k, k], v[k])
        c = r / L[k, k]
        s = v[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * v[k + 1 :]) / c
            v[k + 1 :] = c * v[k + 1 :] - s * L[k + 1 :, k]


def project_rkhs(f: RkhsFunction, rr: ReducedRankKernel) -> RkhsFunction:
    """Minimum-norm interpolant of ``f`` on the inducing points."""
    if f.kernel != rr.base:
        raise ValueError("function and reduced-rank kernel use different base kernels")
    coef = sla.cho_solve((rr.factor, True), f(rr.inducing), check_finite=False)
    return RkhsFunction(rr.inducing, coef, rr.base)


# -- information gain and effective dimension --------------------------------


def compress(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique rows, their multiplicities, and the map from rows to uniques."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return X, np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    U, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    return U, counts, inverse.reshape(-1)


def gram_spectrum(kernel: KernelSpec, X) -> np.ndarray:
    """Nonzero-relevant eigenvalues of ``k_{X,X}``.

    Repeated inputs are merged: ``k_{X,X} = P K_U P^T`` shares its nonzero
    spectrum with ``C^{1/2} K_U C^{1/2}`` where ``C`` holds multiplicities.
    """
    X = kernel.points(X)
    if X.shape[0] == 0:
        return np.zeros(0)
    U, counts, _ = compress(X)
    s = np.sqrt(counts.astype(float))
    G = s[:, None] * kernel(U) * s[None, :]
    return np.clip(np.linalg.eigvalsh(G), 0.0, None)


def information_gain(kernel: KernelSpec, X, tau: float) -> float:
    """``1/2 log det(I + K / tau^2)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    lam = gram_spectrum(kernel, X)
    return float(0.5 * np.sum(np.log1p(lam / tau**2)))


def effective_dimension(kernel: KernelSpec, X, tau: float) -> float:
    """``tr(K (K + tau^2 I)^{-1})``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    lam = gram_spectrum(kernel, X)
    return float(np.sum(lam / (lam + tau**2)))


def exact_variance(kernel: KernelSpec, X, tau: float, Q) -> np.ndarray:
    """Exact posterior variance using merged repeated inputs.

    ``r`` repeats of an input with noise ``tau^2`` carry the same information
    as one input with noise ``tau^2 / r``; this keeps audits of long designs on
    finite domains cheap.
    """
    X = kernel.points(X)
    Q = kernel.points(Q)
    prior = kernel.diag(Q)
    if X.shape[0] == 0:
        return prior
    U, counts, _ = compress(X)
    K = kernel(U)
    K[np.diag_indices(U.shape[0])] += tau**2 / counts
    L = sla.cholesky(K, lower=True, check_finite=False)
    W = sla.solve_triangular(L, kernel(U, Q), lower=True, check_finite=False)
    return _clamp(prior - np.einsum("ij,ij->j", W, W), kernel.k_max)[0]


# -- variational parameterization ---------------------------------------------


@dataclass
class VariationalParams:
    mean: np.ndarray
    cov: np.ndarray
    jitter: float = field(default=0.0)


def variational_optimum(kernel: KernelSpec, dataset: Dataset, Z, jitter: float = 0.0) -> VariationalParams:
    """Closed-form optimal variational mean and covariance over ``f_Z``."""
    Z = kernel.points(Z)
    X = kernel.points(dataset.X)
    KZZ = kernel(Z) + jitter * np.eye(Z.shape[0])
    KXZ = kernel(X, Z)
    tau2 = dataset.tau**2
    mu = KZZ @ np.linalg.solve(tau2 * KZZ + KXZ.T @ KXZ, KXZ.T @ dataset.Y)
    Sigma = KZZ @ np.linalg.solve(KZZ + KXZ.T @ KXZ / tau2, KZZ)
    return VariationalParams(mu, 0.5 * (Sigma + Sigma.T), jitter)


def variational_moments(kernel: KernelSpec, Z, params: VariationalParams, Q) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the variational GP family at ``Q``."""
    Z = kernel.points(Z)
    KZZ = kernel(Z) + params.jitter * np.eye(Z.shape[0])
    KZQ = kernel(Z, Q)
    B = np.linalg.solve(KZZ, KZQ)
    mean = B.T @ params.mean
    cov = kernel(Q) - B.T @ (KZZ - params.cov) @ B
    return mean, cov
