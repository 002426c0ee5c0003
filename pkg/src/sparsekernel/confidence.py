"""Confidence-interval widths for sparse kernel regression and their Monte Carlo checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import rng as _rng
from .inducing import compute_lambda_max
from .kernels import MATERN, SE, KernelSpec, RkhsFunction, reduced_rank
from .posterior import Dataset, SparsePosterior, project_rkhs


@dataclass(frozen=True)
class SubGaussian:
    R: float


@dataclass(frozen=True)
class LightTailed:
    xi0: float
    h0: float


@dataclass(frozen=True)
class FiniteDomain:
    size: int


@dataclass(frozen=True)
class ContinuousDomain:
    d: int
    c: float


@dataclass(frozen=True)
class ConfidenceParams:
    C_k: float
    noise: SubGaussian | LightTailed
    tau: float
    delta: float
    lambda_max: float = 0.0
    k_max: float = 1.0
    domain: FiniteDomain | ContinuousDomain | None = None

    def __post_init__(self):
        if self.C_k < 0 or self.tau <= 0 or self.k_max <= 0:
            raise ValueError("C_k must be nonnegative and tau, k_max positive")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be nonnegative")
        _check_delta(self.delta)

    def with_(self, **kw) -> "ConfidenceParams":
        return replace(self, **kw)

    @property
    def R(self) -> float:
        if isinstance(self.noise, SubGaussian):
            return self.noise.R
        raise ValueError("noise is not sub-Gaussian")


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")


def _rkhs_part(p: ConfidenceParams) -> float:
    return (2.0 + math.sqrt(p.lambda_max) / p.tau) * p.C_k


def beta_terms(params: ConfidenceParams, delta: float | None = None) -> dict[str, float]:
    """Width split into projection, reduced-prediction, spillover and noise parts."""
    delta = params.delta if delta is None else delta
    _check_delta(delta)
    p = params
    if isinstance(p.noise, LightTailed):
        noise = _light_tailed_noise(p, delta)
    else:
        noise = p.noise.R / p.tau * math.sqrt(2.0 * math.log(1.0 / delta))
    return {
        "projection": p.C_k,
        "reduced_prediction": p.C_k,
        "spillover": p.C_k * math.sqrt(p.lambda_max) / p.tau,
        "noise": noise,
    }


def beta(params: ConfidenceParams, delta: float | None = None) -> float:
    """Width multiplier ``(2 + sqrt(lambda_max)/tau) C_k + (R/tau) sqrt(2 log(1/delta))``.

    Light-tailed noise parameters dispatch to :func:`beta_light_tailed`.
    """
    delta = params.delta if delta is None else delta
    if isinstance(params.noise, LightTailed):
        return beta_light_tailed(params, delta)
    _check_delta(delta)
    return _rkhs_part(params) + params.noise.R / params.tau * math.sqrt(2.0 * math.log(1.0 / delta))


def _light_tailed_noise(p: ConfidenceParams, delta: float) -> float:
    log_inv = math.log(1.0 / delta)
    scale = max(p.noise.xi0, 2.0 * log_inv / p.noise.h0**2)
    return math.sqrt(2.0 * scale * log_inv) / p.tau


def beta_light_tailed(params: ConfidenceParams, delta: float | None = None) -> float:
    delta = params.delta if delta is None else delta
    _check_delta(delta)
    if not isinstance(params.noise, LightTailed):
        raise ValueError("light-tailed width needs LightTailed noise parameters")
    if params.noise.xi0 <= 0 or params.noise.h0 <= 0:
        raise ValueError("xi0 and h0 must be positive")
    return _rkhs_part(params) + _light_tailed_noise(params, delta)


# -- continuous domains ------------------------------------------------------------


def mean_norm_bound(C_k: float, k_max: float, R: float, tau: float, n: int, delta: float) -> float:
    """High-probability bound on the RKHS norm of the sparse posterior mean."""
    _check_delta(delta)
    rn = math.sqrt(n)
    return C_k * (1.0 + rn * k_max / tau) + rn * R / tau * math.sqrt(2.0 * math.log(2.0 * n / delta))


@dataclass(frozen=True)
class UniformParams:
    beta_tilde: float
    gamma_n: float
    mean_norm_bound: float
    mean_slack: float
    sigma_slack: float

    def bounds(self, mean, std) -> tuple[np.ndarray, np.ndarray]:
        half = self.mean_slack + self.beta_tilde * (np.asarray(std) + self.sigma_slack)
        return np.asarray(mean) - half, np.asarray(mean) + half


def uniform_params(params: ConfidenceParams, n: int, delta: float | None = None) -> UniformParams:
    """Constants of the uniform bound ``mean +- [2/n + beta~ (std + 2/sqrt(n))]``."""
    delta = params.delta if delta is None else delta
    _check_delta(delta)
    if not isinstance(params.domain, ContinuousDomain):
        raise ValueError("uniform parameters need a continuous domain; use beta(delta/|X|) on finite ones")
    if n < 1:
        raise ValueError("n must be at least 1")
    d, c = params.domain.d, params.domain.c
    cmu = mean_norm_bound(params.C_k, params.k_max, params.R, params.tau, n, delta / 2.0)
    log_gamma = math.log(c) + d * math.log(cmu) + d * math.log(n)
    gamma = math.exp(log_gamma)
    # beta(delta / (2 Gamma)) written through log(2 Gamma / delta) to avoid underflow
    noise = params.R / params.tau * math.sqrt(2.0 * (math.log(2.0 / delta) + log_gamma))
    return UniformParams(_rkhs_part(params) + noise, gamma, cmu, 2.0 / n, 2.0 / math.sqrt(n))


def lipschitz_constant(kernel: KernelSpec) -> float:
    """``sqrt(-k''(0))``: Lipschitz constant of unit-norm RKHS functions."""
    if kernel.family == SE:
        return math.sqrt(kernel.variance) / kernel.lengthscale
    if kernel.family == MATERN and kernel.nu == 1.5:
        return math.sqrt(3.0 * kernel.variance) / kernel.lengthscale
    if kernel.family == MATERN and kernel.nu == 2.5:
        return math.sqrt(5.0 * kernel.variance / 3.0) / kernel.lengthscale
    raise ValueError("discretization fixture needs SE or Matern with nu > 1")


def discretization_constant(kernel: KernelSpec, side: float = 1.0) -> float:
    """``c`` with ``|grid| <= c (C_k n)^d`` for :func:`discretization_grid` on a cube."""
    d = kernel.dim
    return (lipschitz_constant(kernel) * math.sqrt(d) * side / 2.0 + 2.0) ** d


def discretization_grid(kernel: KernelSpec, C_k: float, n: int, bounds=(0.0, 1.0)) -> np.ndarray:
    """Uniform grid where ``f(x) - f([x]) <= 1/n`` for every ``|f| <= C_k``.

    Grid spacing ``h`` keeps the nearest-node distance below ``h sqrt(d)/2``;
    the Lipschitz bound then gives ``C_k L h sqrt(d) / 2 <= 1/n``.
    """
    d = kernel.dim
    box = np.asarray(bounds, dtype=float)
    box = np.tile(box, (d, 1)) if box.ndim == 1 else box
    h = 2.0 / (lipschitz_constant(kernel) * math.sqrt(d) * C_k * n)
    axes = [np.linspace(lo, hi, int(math.ceil((hi - lo) / h)) + 1) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def nearest_node(grid: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Index of the nearest grid node for every row of ``X``."""
    from scipy.spatial import cKDTree

    return cKDTree(grid).query(X)[1]


# -- error decomposition ------------------------------------------------------------


@dataclass
class ErrorSplit:
    projection: np.ndarray
    reduced_prediction: np.ndarray
    spillover: np.ndarray
    noise: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.projection + self.reduced_prediction - self.spillover - self.noise


def error_split(sp: SparsePosterior, f: RkhsFunction, noise_vector, Q) -> ErrorSplit:
    """Four-way split of ``f(x) - mean(x)`` when ``Y = f(X) + noise_vector``."""
    proj = project_rkhs(f, sp.rr)
    X = sp.dataset.X
    V = sp.weights(Q)
    fX, pX = f(X), proj(X)
    pQ = proj(Q)
    return ErrorSplit(
        projection=f(Q) - pQ,
        reduced_prediction=pQ - V.T @ pX,
        spillover=V.T @ (fX - pX),
        noise=V.T @ np.asarray(noise_vector, dtype=float),
    )


# -- Monte Carlo coverage --------------------------------------------------------------


@dataclass
class CoverageScenario:
    """A fixed design and inducing set, an objective and a noise sampler.

    The design ``X`` and inducing points ``Z`` must be fixed before any noise
    is drawn; ``design_uses_observations=True`` is rejected.
    """

    kernel: KernelSpec
    f: RkhsFunction
    X: np.ndarray
    Z: np.ndarray
    tau: float
    noise: Any
    query: np.ndarray
    C_k: float | None = None
    lambda_max: float | None = None
    grid: np.ndarray | None = None
    disc_c: float | None = None
    seed: int = 0
    light_tailed: bool = False
    design_uses_observations: bool = False
    extra: dict = field(default_factory=dict)


@dataclass
class CoverageReport:
    rows: list
    upper: float
    lower: float
    both: float
    std_error: float
    beta: float
    width: float
    uniform: dict | None = None

    def as_rows(self):
        return self.rows


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)


def scenario_params(s: CoverageScenario, delta: float) -> ConfidenceParams:
    lam = s.lambda_max
    if lam is None:
        lam = compute_lambda_max(s.kernel, s.X, s.Z)
    C_k = s.f.rkhs_norm if s.C_k is None else s.C_k
    noise = LightTailed(s.noise.xi0, s.noise.h0) if s.light_tailed else SubGaussian(s.noise.R)
    domain = None
    if s.grid is not None:
        c = s.disc_c if s.disc_c is not None else discretization_constant(s.kernel)
        domain = ContinuousDomain(s.kernel.dim, c)
    return ConfidenceParams(C_k, noise, s.tau, delta, lam, s.kernel.k_max, domain)


def empirical_coverage(trials: int, scenario: CoverageScenario, delta: float, batch: int = 500) -> CoverageReport:
    """Fraction of noise draws where ``f(x)`` lies inside ``mean +- beta * std``.

    Per-trial noise comes from the stream ``(seed, NOISE, trial)``.  When the
    scenario carries a ``grid``, the uniform (continuous-domain) bounds are
    checked simultaneously over the grid as well.
    """
    if scenario.design_uses_observations:
        raise ValueError("coverage requires a design chosen independently of the noise")
    s = scenario
    params = scenario_params(s, delta)
    b = beta(params, delta)
    sp = SparsePosterior(s.kernel, Dataset(s.X, None, s.tau), reduced_rank(s.kernel, s.Z))
    q = s.kernel.points(s.query)[:1]
    v = sp.weights(q)[:, 0]
    sd = float(sp.std(q)[0])
    fX = s.f(s.X)
    fq = float(s.f(q)[0])
    n = s.X.shape[0]

    grid_state = None
    if s.grid is not None:
        up = uniform_params(params, n, delta)
        VG = sp.weights(s.grid)
        grid_state = (up, VG, sp.std(s.grid), s.f(s.grid))
    rows = []
    cover_u = cover_l = 0
    uni_u = uni_l = uni_b = 0
    for lo in range(0, trials, batch):
        hi = min(trials, lo + batch)
        E = np.stack([s.noise.sample(_rng.stream(s.seed, _rng.NOISE, t), n) for t in range(lo, hi)])
        Y = fX[None, :] + E
        mu = Y @ v
        up_ok = fq <= mu + b * sd
        lo_ok = fq >= mu - b * sd
        cover_u += int(up_ok.sum())
        cover_l += int(lo_ok.sum())
        for t, (a, c) in enumerate(zip(up_ok, lo_ok)):
            rows.append((lo + t, bool(a), bool(c), 2.0 * b * sd))
        if grid_state is not None:
            up, VG, sdG, fG = grid_state
            muG = Y @ VG
            lower, upper = up.bounds(muG, sdG[None, :])
            gu = np.all(fG[None, :] <= upper, axis=1)
            gl = np.all(fG[None, :] >= lower, axis=1)
            uni_u += int(gu.sum())
            uni_l += int(gl.sum())
            uni_b += int((gu & gl).sum())
    pu, pl = cover_u / trials, cover_l / trials
    both = sum(1 for r in rows if r[1] and r[2]) / trials
    uniform = None
    if grid_state is not None:
        up = grid_state[0]
        uniform = {
            "upper": uni_u / trials, "lower": uni_l / trials, "both": uni_b / trials,
            "beta_tilde": up.beta_tilde, "gamma_n": up.gamma_n,
        }
    return CoverageReport(rows, pu, pl, both, _binomial_se(min(pu, pl), trials), b, 2.0 * b * sd, uniform)
