"""Inducing-point selection by recursive ridge-leverage-score sampling.

The recursion follows the recursive RLS-Nyström scheme of Musco & Musco:
halve the data uniformly at random, select a weighted landmark set on the
half, use it to estimate ridge leverage scores on the whole, and keep each
point independently with probability ``min(1, c * l_i * log(d/delta))``.
The quality of every returned set is audited through ``lambda_max``, the top
eigenvalue of ``k_{X,X} - kappa_{X,X}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import rng as _rng
from .kernels import KernelSpec, reduced_rank
from .posterior import compress, effective_dimension

RECURSIVE_RLS = "recursive_rls"
UNIFORM = "uniform"
MANUAL = "manual"

AUDIT_EXACT_MAX = 2000
POWER_ITERATIONS = 20
POWER_RTOL = 1e-3


@dataclass
class InducingSet:
    Z: np.ndarray
    source_indices: np.ndarray | None
    method: str
    delta: float | None = None
    lambda_max: float | None = None
    leverage_estimates: np.ndarray | None = None
    jitter: float | None = None
    seed: int | None = None
    stream_index: int = 0
    oversampling: float | None = None
    effective_dim: float | None = None
    m_cap: int | None = None
    lambda_max_exact: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "indices": None if self.source_indices is None else [int(i) for i in self.source_indices],
            "Z": self.Z.tolist() if self.method == MANUAL else None,
            "delta": self.delta,
            "lambda_max": self.lambda_max,
            "seed": self.seed,
            "stream_index": self.stream_index,
            "oversampling": self.oversampling,
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, cfg: dict, X=None) -> "InducingSet":
        if cfg.get("indices") is not None:
            if X is None:
                raise ValueError("index-based inducing sets need the dataset inputs")
            idx = np.asarray(cfg["indices"], dtype=int)
            Z = np.asarray(X, dtype=float).reshape(len(X), -1)[idx]
        else:
            idx = None
            Z = np.asarray(cfg["Z"], dtype=float)
        return cls(
            Z, idx, cfg["method"], delta=cfg.get("delta"), lambda_max=cfg.get("lambda_max"),
            jitter=cfg.get("jitter"), seed=cfg.get("seed"), stream_index=cfg.get("stream_index", 0),
            oversampling=cfg.get("oversampling"),
        )


# -- lambda_max ----------------------------------------------------------------


def residual_gram(kernel: KernelSpec, A, Z, B=None) -> np.ndarray:
    """``k(A, B) - kappa(A, B)``; ``Z`` empty means ``kappa = 0``."""
    A = kernel.points(A)
    B = A if B is None else kernel.points(B)
    K = kernel(A, B)
    Z = kernel.points(Z)
    if Z.shape[0] == 0:
        return K
    rr = reduced_rank(kernel, Z)
    return K - rr.features(A).T @ rr.features(B)


def compute_lambda_max(kernel: KernelSpec, X, Z, seed: int = 0) -> float:
    """Top eigenvalue of ``k_{X,X} - kappa_{X,X}``, clamped at zero.

    Repeated inputs are merged exactly (multiplicity weights).  Above
    ``AUDIT_EXACT_MAX`` distinct inputs the value is a randomized power
    iteration estimate.
    """
    lam, _ = _lambda_max(kernel, X, Z, seed)
    return lam


def _lambda_max(kernel, X, Z, seed=0) -> tuple[float, bool]:
    X = kernel.points(X)
    if X.shape[0] == 0:
        return 0.0, True
    U, counts, _ = compress(X)
    s = np.sqrt(counts.astype(float))
    if U.shape[0] <= AUDIT_EXACT_MAX:
        G = s[:, None] * residual_gram(kernel, U, Z) * s[None, :]
        top = sla.eigvalsh(G, subset_by_index=[U.shape[0] - 1, U.shape[0] - 1])[0]
        return max(float(top), 0.0), True
    return max(_power_lambda_max(kernel, U, s, Z, seed), 0.0), False


def _power_lambda_max(kernel, U, s, Z, seed, block=1024) -> float:
    Z = kernel.points(Z)
    F = reduced_rank(kernel, Z).features(U) if Z.shape[0] else None

    def matvec(v):
        sv = s * v
        out = np.empty_like(v)
        for lo in range(0, U.shape[0], block):
            out[lo : lo + block] = kernel(U[lo : lo + block], U) @ sv
        if F is not None:
            out -= F.T @ (F @ sv)
        return s * out

    gen = _rng.stream(seed, _rng.INDUCING, 0xFFFF)
    v = gen.standard_normal(U.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITERATIONS):
        w = matvec(v)
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if est and abs(new - est) <= POWER_RTOL * abs(new):
            return new
        est = new
    return est


# -- leverage scores -------------------------------------------------------------


def exact_leverage_scores(kernel: KernelSpec, X, tau: float) -> np.ndarray:
    """``diag(K (K + tau^2 I)^{-1})`` by dense factorization."""
    X = kernel.points(X)
    n = X.shape[0]
    if n == 0:
        raise ValueError("leverage scores need at least one point")
    K = kernel(X)
    K[np.diag_indices(n)] += tau**2
    L = sla.cholesky(K, lower=True)
    Linv = sla.solve_triangular(L, np.eye(n), lower=True)
    return 1.0 - tau**2 * np.einsum("ij,ij->j", Linv, Linv)


def _estimate_leverage(kernel, X, S, J, wJ, lam) -> np.ndarray:
    """Nyström ridge-leverage estimates for rows ``S`` from weighted landmarks ``J``."""
    # Repeated rows give identical estimates, and repeated landmarks with
    # weights w_a act as one landmark with weight sqrt(sum w_a^2).
    US, _, inv = compress(X[S])
    diag = kernel.diag(US)
    if J.shape[0] == 0:
        return np.minimum(diag / lam, 1.0)[inv]
    UJ, _, invJ = compress(X[J])
    w = np.sqrt(np.bincount(invJ, weights=wJ**2, minlength=UJ.shape[0]))
    B = w[:, None] * kernel(UJ) * w[None, :]
    B[np.diag_indices(UJ.shape[0])] += lam
    L = sla.cholesky(B, lower=True, check_finite=False)
    C = sla.solve_triangular(L, w[:, None] * kernel(UJ, US), lower=True, check_finite=False)
    est = (diag - np.einsum("ij,ij->j", C, C)) / lam
    return np.clip(est, 0.0, 1.0)[inv]


def _recursive(kernel, X, S, lam, tau, delta, c, gen, base_cap, trail):
    if S.shape[0] <= 16:
        return S, np.ones(S.shape[0]), None
    if S.shape[0] <= base_cap:
        d_eff = effective_dimension(kernel, X[S], tau)
        if S.shape[0] <= 16 * math.ceil(d_eff):
            return S, np.ones(S.shape[0]), None
    half = S[gen.random(S.shape[0]) < 0.5]
    J, wJ, _ = _recursive(kernel, X, half, lam, tau, delta, c, gen, base_cap, trail)
    lev = _estimate_leverage(kernel, X, S, J, wJ, lam)
    d_hat = max(float(lev.sum()), 1.0)
    p = np.minimum(1.0, c * lev * math.log(d_hat / delta))
    keep = gen.random(S.shape[0]) < p
    trail.append(S.shape[0])
    return S[keep], 1.0 / np.sqrt(p[keep]), lev


def select_recursive_rls(
    kernel: KernelSpec,
    X,
    tau: float,
    delta: float,
    seed: int,
    stream_index: int = 0,
    oversampling: float = 16.0,
    base_cap: int = 256,
    audit: bool = True,
) -> InducingSet:
    """Recursive ridge-leverage-score selection of inducing points from ``X``.

    Each point survives with probability ``min(1, c * l_i * log(d/delta))``
    (``c = oversampling``).  Subproblems with at most ``16 * ceil(d_eff)``
    points (checked for subproblems up to ``base_cap`` points) keep
    everything.  Selected points at identical locations are merged.
    """
    if not 0 < delta < 1 / 32:
        raise ValueError("delta must lie in (0, 1/32)")
    X = kernel.points(X)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot select inducing points from empty data")
    gen = _rng.stream(seed, _rng.INDUCING, stream_index)
    trail: list[int] = []
    idx, _, lev = _recursive(kernel, X, np.arange(n), tau**2, tau, delta, oversampling, gen, base_cap, trail)
    if idx.shape[0] == 0:
        # every draw failed; keep the point with the largest estimated score
        idx = np.array([int(np.argmax(lev))]) if lev is not None else np.array([0])
    idx = np.sort(idx)
    _, first = np.unique(X[idx], axis=0, return_index=True)
    idx = idx[np.sort(first)]
    out = InducingSet(
        X[idx], idx, RECURSIVE_RLS, delta=delta, seed=seed, stream_index=stream_index,
        oversampling=oversampling, leverage_estimates=lev, extra={"level_sizes": trail},
    )
    if audit:
        audit_inducing(kernel, X, tau, out)
    return out


def audit_inducing(kernel: KernelSpec, X, tau: float, inducing: InducingSet, seed: int = 0) -> InducingSet:
    """Fill in ``lambda_max``, jitter, effective dimension and the size cap."""
    X = kernel.points(X)
    inducing.lambda_max, inducing.lambda_max_exact = _lambda_max(kernel, X, inducing.Z, seed)
    if inducing.m:
        inducing.jitter = reduced_rank(kernel, inducing.Z).jitter
    U, _, _ = compress(X)
    if U.shape[0] <= AUDIT_EXACT_MAX:
        d_eff = effective_dimension(kernel, X, tau)
    else:
        d_eff = float(np.sum(inducing.leverage_estimates)) if inducing.leverage_estimates is not None else float("nan")
    inducing.effective_dim = d_eff
    if inducing.delta is not None and d_eff > 0:
        inducing.m_cap = rls_size_cap(d_eff, inducing.delta)
    if inducing.leverage_estimates is None and U.shape[0] == X.shape[0] and X.shape[0] <= AUDIT_EXACT_MAX:
        inducing.leverage_estimates = exact_leverage_scores(kernel, X, tau)
    return inducing


def rls_size_cap(d_eff: float, delta: float) -> int:
    """``ceil(384 d log(3 d / delta))``."""
    return int(math.ceil(384.0 * d_eff * math.log(3.0 * d_eff / delta)))


def select_uniform(kernel: KernelSpec, X, m: int, seed: int, stream_index: int = 0, tau: float | None = None) -> InducingSet:
    """``m`` distinct data points drawn uniformly without replacement."""
    X = kernel.points(X)
    if X.shape[0] == 0:
        raise ValueError("cannot select inducing points from empty data")
    gen = _rng.stream(seed, _rng.INDUCING, stream_index)
    idx = np.sort(gen.choice(X.shape[0], size=min(m, X.shape[0]), replace=False))
    _, first = np.unique(X[idx], axis=0, return_index=True)
    idx = idx[np.sort(first)]
    out = InducingSet(X[idx], idx, UNIFORM, seed=seed, stream_index=stream_index)
    if tau is not None:
        audit_inducing(kernel, X, tau, out)
    return out


def manual_inducing(kernel: KernelSpec, Z, X=None, tau: float | None = None) -> InducingSet:
    out = InducingSet(kernel.points(Z), None, MANUAL)
    if X is not None and tau is not None:
        audit_inducing(kernel, X, tau, out)
    return out
