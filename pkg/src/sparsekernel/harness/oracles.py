"""Brute-force reference computations and the identity validation suite.

The dense oracle evaluates the sparse posterior formulas literally, with
explicit inverses built from eigendecompositions, so it shares no
factorization route with the fast whitened path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .. import rng as _rng
from ..bandit import BanditConfig, batch_cap, batch_lengths, run_sbpe
from ..confidence import (
    ConfidenceParams,
    SubGaussian,
    beta,
    beta_terms,
    discretization_grid,
    error_split,
    mean_norm_bound,
    nearest_node,
)
from ..inducing import compute_lambda_max, select_recursive_rls
from ..kernels import KernelSpec, reduced_rank, sample_rkhs_function
from ..noise import GaussianNoise, mgf_check
from ..posterior import (
    Dataset,
    ExactPosterior,
    SparsePosterior,
    VarianceDecomposition,
    information_gain,
    variational_moments,
    variational_optimum,
)
from ..regression import delta_schedule, make_grid, run_design, sum_of_variances_bound, variance_chain_check

DENSE_MAX = 2000
COND_CAP = 1e6


@dataclass
class OracleReport:
    name: str
    max_abs_dev: float
    instance: str
    tolerance: float
    passed: bool

    def row(self) -> dict:
        return {
            "identity": self.name, "max_abs_dev": self.max_abs_dev, "instance": self.instance,
            "tolerance": self.tolerance, "passed": self.passed,
        }


EXT = np.longdouble


def _spd_solve(M: np.ndarray, B: np.ndarray, refine: int = 4) -> np.ndarray:
    """``M^{-1} B`` for symmetric positive definite ``M``.

    A float64 eigendecomposition inverse serves as the starting point and
    preconditioner; residuals ``B - M x`` are formed in extended precision
    and fed back, so the result stays accurate when ``cond(M) * eps`` is not
    small.
    """
    M = np.asarray(M, dtype=EXT)
    B = np.asarray(B, dtype=EXT)
    w, U = np.linalg.eigh(0.5 * (M + M.T).astype(float))
    if w.min() <= 0:
        raise np.linalg.LinAlgError("oracle matrix is not positive definite")
    P = ((U / w) @ U.T).astype(EXT)
    x = P @ B
    for _ in range(refine):
        x = x + P @ (B - M @ x)
    return x


def dense_oracle_posterior(kernel: KernelSpec, dataset: Dataset, Z, Q, jitter: float = 0.0):
    """Sparse mean, std and variance decomposition by literal dense algebra.

    All products run in extended precision.  ``jitter`` is added to ``K_ZZ``
    so results can be compared with a fast path that used the same
    regularization.
    """
    X = kernel.points(dataset.X)
    if X.shape[0] > DENSE_MAX:
        raise ValueError(f"dense oracle is capped at n = {DENSE_MAX}")
    Z, Q = kernel.points(Z), kernel.points(Q)
    tau2 = EXT(dataset.tau) ** 2
    KZZ = kernel(Z).astype(EXT) + EXT(jitter) * np.eye(Z.shape[0], dtype=EXT)
    KXZ = kernel(X, Z).astype(EXT)
    KZQ = kernel(Z, Q).astype(EXT)
    G = tau2 * KZZ + KXZ.T @ KXZ
    mean = None
    if dataset.Y is not None:
        mean = (KZQ.T @ _spd_solve(G, KXZ.T @ dataset.Y.astype(EXT))).astype(float)
    GQ = _spd_solve(G, KZQ)
    prior = kernel.diag(Q).astype(EXT)
    kappa = np.sum(KZQ * _spd_solve(KZZ, KZQ), axis=0)
    red = tau2 * np.sum(KZQ * GQ, axis=0)
    var = prior - kappa + red
    V = KXZ @ GQ
    noise = tau2 * np.sum(V * V, axis=0)
    decomp = VarianceDecomposition(
        (prior - kappa).astype(float), (red - noise).astype(float), noise.astype(float),
    )
    return mean, np.sqrt(np.maximum(var, 0.0)).astype(float), decomp


def dense_vn_kappa_form(kernel: KernelSpec, X, Z, tau: float, Q, jitter: float = 0.0) -> np.ndarray:
    """``V_n = (kappa_XX + tau^2 I)^{-1} kappa_X(Q)`` by dense solves."""
    X, Z, Q = kernel.points(X), kernel.points(Z), kernel.points(Q)
    KZZ = kernel(Z).astype(EXT) + EXT(jitter) * np.eye(Z.shape[0], dtype=EXT)
    KXZ = kernel(X, Z).astype(EXT)
    kXX = KXZ @ _spd_solve(KZZ, KXZ.T)
    kXX = 0.5 * (kXX + kXX.T)
    kXQ = KXZ @ _spd_solve(KZZ, kernel(Z, Q).astype(EXT))
    V = _spd_solve(kXX + EXT(tau) ** 2 * np.eye(X.shape[0], dtype=EXT), kXQ)
    return V.astype(float)


def random_instance(seed: int, n_max: int = 200, m_max: int = 20, with_y: bool = True):
    """Random small regression instance with a well-conditioned ``K_ZZ``."""
    gen = _rng.stream(seed, _rng.TRIAL, 0)
    for _ in range(100):
        d = int(gen.integers(1, 4))
        n = int(gen.integers(5, n_max + 1))
        m = int(gen.integers(1, min(m_max, n) + 1))
        ell = float(gen.uniform(0.1, 0.6)) * math.sqrt(d)
        family = gen.integers(0, 3)
        if family == 0:
            kernel = KernelSpec.squared_exponential(ell, float(gen.uniform(0.5, 2.0)), d)
        else:
            kernel = KernelSpec.matern([0.5, 1.5, 2.5][int(gen.integers(0, 3))], ell, float(gen.uniform(0.5, 2.0)), d)
        X = gen.random((n, d))
        Z = X[np.sort(gen.choice(n, m, replace=False))] if gen.random() < 0.5 else gen.random((m, d))
        if np.linalg.cond(kernel(Z)) > COND_CAP:
            continue
        tau = float(gen.uniform(0.05, 0.5))
        Y = np.sin(3.0 * X.sum(axis=1)) + tau * gen.standard_normal(n) if with_y else None
        Q = gen.random((50, d))
        return kernel, Dataset(X, Y, tau), Z, Q
    raise RuntimeError("could not draw a well-conditioned instance")


def fixture30():
    """The bundled 30-point, 2-d validation fixture."""
    kernel = KernelSpec.squared_exponential(0.3, 1.0, 2)
    gen = _rng.stream(2024, _rng.DESIGN, 0)
    X = gen.random((30, 2))
    Z = X[[0, 3, 7, 11, 15, 19, 23, 27]]
    f = sample_rkhs_function(kernel, 12, 1.5, seed=2024)
    tau = 0.1
    noise = GaussianNoise(0.1)
    Y = f(X) + noise.sample(_rng.stream(2024, _rng.NOISE, 0), 30)
    Q = make_grid([0.0, 1.0], 12, 2)
    return kernel, Dataset(X, Y, tau), Z, Q, f, noise


def _report(name, dev, instance, tol, passed=None) -> OracleReport:
    dev = float(dev)
    return OracleReport(name, dev, instance, tol, bool(dev <= tol) if passed is None else bool(passed))


def validate_suite(audit: bool = True) -> list[OracleReport]:
    """Check every identity on the bundled fixture; one report per identity."""
    kernel, data, Z, Q, f, noise = fixture30()
    tau = data.tau
    inst = "fixture30"
    out: list[OracleReport] = []
    sp = SparsePosterior(kernel, data, Z)
    mu_o, sd_o, dec_o = dense_oracle_posterior(kernel, data, Z, Q, sp.jitter)
    out.append(_report("sparse_mean_vs_dense", np.max(np.abs(sp.mean(Q) - mu_o)), inst, 1e-8))
    out.append(_report("sparse_std_vs_dense", np.max(np.abs(sp.std(Q) - sd_o)), inst, 1e-8))

    dec = sp.decompose(Q)
    out.append(_report("variance_decomposition_sum", np.max(np.abs(dec.total - sp.variance(Q))), inst, 1e-8))
    terms_min = min(dec.projection_term.min(), dec.reduced_prediction_term.min(), dec.noise_term.min())
    out.append(_report("variance_terms_nonnegative", max(0.0, -terms_min), inst, 1e-10))

    ex = ExactPosterior(kernel, data)
    lam = compute_lambda_max(kernel, data.X, Z)
    # the sandwich is checked for the inducing module's own selection
    sel = select_recursive_rls(kernel, data.X, tau, 0.01, seed=2024)
    s2, sb2 = ex.variance(Q), SparsePosterior(kernel, data, sel).variance(Q)
    ratio = 1.0 + sel.lambda_max / tau**2
    dev = max(float(np.max(s2 - sb2)), float(np.max(sb2 - ratio * s2)), 0.0)
    out.append(_report("variance_sandwich", dev, f"{inst}, recursive RLS m={sel.m}", 1e-8))

    full = SparsePosterior(kernel, data, reduced_rank(kernel, data.X, jitter=0.0))
    dev = max(np.max(np.abs(full.mean(Q) - ex.mean(Q))), np.max(np.abs(full.std(Q) - ex.std(Q))))
    out.append(_report("full_rank_exactness", dev, inst, 1e-8))

    V_fast = sp.weights(Q)
    V_kappa = dense_vn_kappa_form(kernel, data.X, Z, tau, Q, sp.jitter)
    out.append(_report("vn_dual_forms", np.max(np.abs(V_fast - V_kappa)), inst, 1e-9))

    params = variational_optimum(kernel, data, Z, sp.jitter)
    vm, vc = variational_moments(kernel, Z, params, Q)
    out.append(_report("variational_mean", np.max(np.abs(vm - sp.mean(Q))), inst, 1e-8))
    out.append(_report("variational_variance", np.max(np.abs(np.diag(vc) - sp.variance(Q))), inst, 1e-8))

    kz = reduced_rank(kernel, Z)
    Kq = kz(Q)
    ev = np.linalg.eigvalsh(Kq)
    dq = np.sqrt(kernel.diag(Q))
    cs = np.max(np.abs(Kq) - np.outer(dq, dq))
    out.append(_report("kappa_psd_and_bounded", max(0.0, -ev.min() - 1e-8, cs - 1e-12), inst, 0.0))
    res = kernel(data.X) - kz(data.X)
    out.append(_report("residual_psd", max(0.0, -np.linalg.eigvalsh(res).min()), inst, 1e-8))

    lam_small = compute_lambda_max(kernel, data.X, Z[:4])
    lam_big = compute_lambda_max(kernel, data.X, np.vstack([Z, data.X[[1, 2, 5]]]))
    out.append(_report("lambda_max_nested_monotone", max(0.0, lam_big - lam, lam - lam_small), inst, 1e-10))

    gains = [information_gain(kernel, data.X[:k], tau) for k in range(1, 31)]
    out.append(_report("information_gain_monotone", max(0.0, -float(np.min(np.diff(gains)))), inst, 1e-12))

    eps = data.Y - f(data.X)
    split = error_split(sp, f, eps, Q)
    out.append(_report("error_split_sum", np.max(np.abs(split.total - (f(Q) - sp.mean(Q)))), inst, 1e-8))
    sd = sp.std(Q)
    spill_bound = f.rkhs_norm * math.sqrt(lam) / tau * sd
    dev = max(0.0, float(np.max(np.abs(split.spillover) - spill_bound)))
    out.append(_report("spillover_term_bound", dev, inst, 1e-10))
    dev = max(
        0.0,
        float(np.max(np.abs(split.projection) - f.rkhs_norm * sd)),
        float(np.max(np.abs(split.reduced_prediction) - f.rkhs_norm * sd)),
    )
    out.append(_report("projection_terms_bound", dev, inst, 1e-10))

    cp = ConfidenceParams(f.rkhs_norm, SubGaussian(noise.R), tau, 0.1, lam, kernel.k_max)
    out.append(_report("beta_term_sum", abs(sum(beta_terms(cp).values()) - beta(cp)), inst, 1e-12))

    norm = sp.mean_rkhs_norm()
    bound = mean_norm_bound(f.rkhs_norm, kernel.k_max, noise.R, tau, data.n, 0.1)
    out.append(_report("mean_rkhs_norm_bound", max(0.0, norm - bound), inst, 0.0))

    grid = discretization_grid(KernelSpec.squared_exponential(0.3, 1.0, 1), 1.0, 4)
    kern1 = KernelSpec.squared_exponential(0.3, 1.0, 1)
    X1 = data.X[:, :1]
    sp1 = SparsePosterior(kern1, Dataset(X1, data.Y, tau), X1[:8])
    pts = np.linspace(0.0, 1.0, 997)[:, None]
    near = grid[nearest_node(grid, pts)]
    gap = float(np.max(sp1.std(pts) - sp1.std(near)))
    out.append(_report("std_discretization_gap", max(0.0, gap - 2.0 / math.sqrt(X1.shape[0])), "fixture30[:, 0]", 0.0))

    tail = 3.0 * 0.1 / math.pi**2 * (1.0 / 100000)  # integral tail bound beyond J
    partial = sum(delta_schedule(0.1, j) for j in range(1, 100001))
    out.append(_report("delta_schedule_sum", abs(partial - 0.05), "delta=0.1", 1.1 * tail))

    dom = make_grid([0.0, 1.0], 41, 1)
    k1 = KernelSpec.squared_exponential(0.2)
    f1 = sample_rkhs_function(k1, 8, 1.0, seed=5)
    run = run_design(k1, dom, f1, GaussianNoise(0.1), 25, tau, 0.1, seed=5, audit=audit)
    again = run_design(k1, dom, f1, GaussianNoise(0.1), 25, tau, 0.1, seed=5, noise_seed=99)
    same = np.array_equal(run.X, again.X) and all(
        np.array_equal(a.inducing_indices, b.inducing_indices) for a, b in zip(run.steps, again.steps)
    )
    out.append(_report("selection_noise_independence", 0.0 if same else 1.0, "se-1d-grid41 n=25", 0.0))
    caps = [s.m <= rls_size_cap_or_inf(k1, run, s) for s in run.steps[1:]]
    out.append(_report("inducing_size_cap", 0.0 if all(caps) else 1.0, "se-1d-grid41 n=25", 0.0))
    if audit:
        total = sum(s.exact_sigma**2 for s in run.steps)
        excess = total - sum_of_variances_bound(run.info_gain(), tau, k1.k_max)
        out.append(_report("sum_of_variances_bound", max(0.0, excess), "se-1d-grid41 n=25", 1e-10))
        lhs, rhs = variance_chain_check(run)
        out.append(_report("variance_chain", max(0.0, lhs - rhs), "se-1d-grid41 n=25", 1e-10))

    rows = mgf_check(GaussianNoise(0.3), _rng.stream(7, _rng.NOISE, 1), (-1.0, -0.5, 0.5, 1.0))
    worst = max(emp / env - 1.1 for _, emp, env, _ in rows)
    out.append(_report("noise_mgf_envelope", max(0.0, worst), "gaussian sigma=0.3, 1e5 draws", 0.0))

    f_a = sample_rkhs_function(k1, 8, 1.0, seed=11)
    f_b = sample_rkhs_function(k1, 8, 1.0, seed=11)
    same = np.array_equal(f_a.coefficients, f_b.coefficients) and np.array_equal(f_a.centers, f_b.centers)
    out.append(_report("rkhs_sampling_reproducible", 0.0 if same else 1.0, "se-1d seed=11", 0.0))

    lengths = batch_lengths(16)
    out.append(_report("batch_schedule_n16", 0.0 if (lengths == [4, 8, 4] and batch_cap(16) == 3) else 1.0, "N=16", 0.0))
    arms = np.linspace(0.0, 1.0, 5)[:, None]
    bcfg = BanditConfig(64, arms, k1, tau, 0.1, f1.rkhs_norm, 0.1)
    brun = run_sbpe(bcfg, f1, GaussianNoise(0.1), seed=3)
    sizes = [a.shape[0] for a in brun.active_sets]
    mono = all(b <= a for a, b in zip(sizes, sizes[1:]))
    out.append(_report("elimination_monotone", 0.0 if mono and sizes[-1] >= 1 else 1.0, "5 arms N=64", 0.0))
    return out


def rls_size_cap_or_inf(kernel, run, step) -> float:
    if step.m == 0:
        return 0
    X = run.X[: step.j - 1]
    Z = select_recursive_rls(kernel, X, run.tau, step.delta_j, run.seed, stream_index=step.j - 1)
    if Z.m != step.m:
        return -1
    cap = Z.m_cap if Z.m_cap is not None else math.inf
    return min(X.shape[0], cap)


def check_all(reports: list[OracleReport]) -> tuple[bool, list[OracleReport]]:
    failed = [r for r in reports if not r.passed]
    return not failed, failed
