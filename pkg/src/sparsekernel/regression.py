"""Maximal-uncertainty-reduction data collection and uniform error checks.

At step ``j`` the design picks ``x_j = argmax_x std_{j-1}(x)`` over a finite
domain, where ``std_{j-1}`` is the sparse posterior standard deviation on
``X_{j-1}`` with inducing points re-selected by recursive RLS at confidence
``delta_j = 3 delta / (pi^2 j^2)``.  Only inputs reach the selection path;
observations are drawn afterwards from a separate noise stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .inducing import InducingSet, audit_inducing, select_recursive_rls, select_uniform
from .kernels import KernelSpec, RkhsFunction
from .posterior import Dataset, SparsePosterior, exact_variance, information_gain

MAX_GRID = 100_000
AUDIT_MAX_N = 1000


def delta_schedule(delta: float, j: int, batches: int = 1) -> float:
    """``3 delta / (pi^2 B j^2)``; summed over ``j >= 1`` this is ``delta / (2B)``."""
    return 3.0 * delta / (math.pi**2 * batches * j * j)


def make_grid(bounds, resolution: int = 512, d: int | None = None) -> np.ndarray:
    """Regular grid over a box; ``resolution`` points per axis."""
    box = np.asarray(bounds, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (d or 1, 1))
    d = box.shape[0]
    if resolution**d > MAX_GRID:
        resolution = int(math.floor(MAX_GRID ** (1.0 / d)))
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def sum_of_variances_bound(info_gain: float, tau: float, k_max: float = 1.0) -> float:
    """Bound on ``sum_j sigma^2_{j-1}(x_j)`` by the information gain.

    ``2 k_max / log(1 + k_max / tau^2) * I``; with ``k_max = 1`` this is the
    familiar ``2 / log(1 + 1/tau^2) * I``.
    """
    return 2.0 * k_max / math.log1p(k_max / tau**2) * info_gain


def _select(kernel, X, tau, delta, seed, stream_index, oversampling, uniform_m):
    if uniform_m is None:
        return select_recursive_rls(
            kernel, X, tau, delta, seed, stream_index=stream_index, oversampling=oversampling,
        )
    return select_uniform(kernel, X, uniform_m, seed, stream_index=stream_index, tau=tau)


@dataclass
class StepRecord:
    j: int
    index: int
    x: np.ndarray
    sigma_bar: float
    m: int
    lambda_max: float
    jitter: float
    delta_j: float
    inducing_indices: np.ndarray
    exact_sigma: float = float("nan")
    info_gain: float = float("nan")


@dataclass
class DesignRun:
    kernel: KernelSpec
    domain: np.ndarray
    tau: float
    delta: float
    seed: int
    noise_seed: int
    oversampling: float
    X: np.ndarray
    Y: np.ndarray
    indices: np.ndarray
    steps: list[StepRecord] = field(default_factory=list)
    audit: bool = False
    uniform_m: int | None = None
    _final: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def posterior_at(self, n: int | None = None) -> tuple[SparsePosterior, InducingSet]:
        """Sparse posterior on the first ``n`` observations with ``Z^{(n)}``.

        ``Z^{(n)}`` is drawn from the same stream the design would use at step
        ``n + 1``, so prefixes of one long run are valid shorter runs.
        """
        n = self.n if n is None else n
        if n in self._final:
            return self._final[n]
        Xn = self.X[:n]
        Z = _select(
            self.kernel, Xn, self.tau, delta_schedule(self.delta, n), self.seed, n,
            self.oversampling, self.uniform_m,
        )
        sp = SparsePosterior(self.kernel, Dataset(Xn, self.Y[:n], self.tau), Z)
        self._final[n] = (sp, Z)
        return sp, Z

    @property
    def posterior(self) -> SparsePosterior:
        return self.posterior_at()[0]

    def lambda_hat(self, n: int | None = None) -> float:
        n = self.n if n is None else n
        lam = [s.lambda_max for s in self.steps[:n]]
        lam.append(self.posterior_at(n)[1].lambda_max)
        return float(max(lam))

    def guarantees_held(self, n: int | None = None) -> bool:
        return self.lambda_hat(n) <= self.tau**2

    def info_gain(self, n: int | None = None) -> float:
        n = self.n if n is None else n
        return information_gain(self.kernel, self.X[:n], self.tau)

    def log_rows(self):
        for s in self.steps:
            yield {
                "j": s.j, "x_j": _fmt_point(s.x), "sigma_bar_max": s.sigma_bar, "m_j": s.m,
                "lambda_max": s.lambda_max, "jitter": s.jitter, "info_gain": s.info_gain,
            }


def _fmt_point(x) -> str:
    x = np.atleast_1d(x)
    return " ".join(repr(float(v)) for v in x)


def design_sequence(
    kernel: KernelSpec,
    domain: np.ndarray,
    n: int,
    tau: float,
    delta: float,
    seed: int,
    batches: int = 1,
    stream_offset: int = 0,
    oversampling: float = 16.0,
    refresh: str = "every",
    audit: bool = False,
    uniform_m: int | None = None,
) -> tuple[np.ndarray, np.ndarray, list[StepRecord]]:
    """Pick ``n`` points of ``domain`` by maximal sparse-posterior std.

    The sequence depends only on ``(domain, seed)``: no observation enters.
    Inducing points on ``X_{j-1}`` use confidence ``delta_schedule(delta, j-1,
    batches)`` and the stream ``stream_offset + j - 1``.  Ties go to the lowest
    domain index.  ``uniform_m`` swaps recursive RLS for ``uniform_m`` uniformly
    drawn data points (ablation).
    """
    if domain.shape[0] == 0:
        raise ValueError("domain must be nonempty")
    if n < 1:
        raise ValueError("n must be at least 1")
    if audit and n > AUDIT_MAX_N:
        raise ValueError(f"exact audits are limited to n <= {AUDIT_MAX_N}")
    cadence = 1 if refresh == "every" else max(1, math.ceil(math.log(n)))
    X = np.zeros((n, kernel.dim))
    chosen = np.zeros(n, dtype=int)
    steps: list[StepRecord] = []
    Z: InducingSet | None = None
    info = 0.0
    prior = kernel.diag(domain)
    for j in range(1, n + 1):
        prev = X[: j - 1]
        if j == 1:
            var = prior
            m, lam, jit, zidx = 0, 0.0, 0.0, np.zeros(0, dtype=int)
        else:
            if Z is None or (j - 1) % cadence == 0:
                Z = _select(
                    kernel, prev, tau, delta_schedule(delta, j - 1, batches), seed,
                    stream_offset + j - 1, oversampling, uniform_m,
                )
            else:
                audit_inducing(kernel, prev, tau, Z)
            var = SparsePosterior(kernel, Dataset(prev, None, tau), Z).variance(domain)
            m, lam, jit, zidx = Z.m, Z.lambda_max, Z.jitter, Z.source_indices
        idx = int(np.argmax(var))
        x = domain[idx]
        rec = StepRecord(
            j, idx, x.copy(), math.sqrt(var[idx]), m, lam, jit,
            delta_schedule(delta, max(j - 1, 1), batches), zidx,
        )
        if audit:
            s2 = float(exact_variance(kernel, prev, tau, x[None, :])[0])
            rec.exact_sigma = math.sqrt(s2)
            info += 0.5 * math.log1p(s2 / tau**2)
            rec.info_gain = info
        steps.append(rec)
        X[j - 1] = x
        chosen[j - 1] = idx
    return X, chosen, steps


def run_design(
    kernel: KernelSpec,
    domain,
    f: RkhsFunction,
    noise_model,
    n: int,
    tau: float,
    delta: float,
    seed: int,
    noise_seed: int | None = None,
    oversampling: float = 16.0,
    refresh: str = "every",
    audit: bool = False,
    uniform_m: int | None = None,
) -> DesignRun:
    """Collect ``n`` points by maximal sparse-posterior uncertainty.

    ``refresh="log"`` re-selects inducing points only every ``ceil(log n)``
    steps (runtime studies only).  With ``audit`` the exact posterior std at
    each chosen point and the running information gain are recorded.
    Observations are drawn after the design from the stream
    ``(noise_seed, NOISE, 0)``.
    """
    domain = kernel.points(domain)
    noise_seed = seed if noise_seed is None else noise_seed
    X, chosen, steps = design_sequence(
        kernel, domain, n, tau, delta, seed, oversampling=oversampling, refresh=refresh, audit=audit,
        uniform_m=uniform_m,
    )
    Y = f(X) + noise_model.sample(_rng.stream(noise_seed, _rng.NOISE, 0), n)
    return DesignRun(kernel, domain, tau, delta, seed, noise_seed, oversampling, X, Y, chosen, steps, audit, uniform_m)


@dataclass
class UniformError:
    n: int
    error: float
    bound: float
    info_gain: float
    lambda_hat: float
    events_held: bool

    @property
    def violated(self) -> bool:
        return self.events_held and self.error > self.bound


def uniform_error_bound(C_k: float, R: float, tau: float, delta: float, domain_size: int, info_gain: float, n: int) -> float:
    """``(3 C_k + R/tau sqrt(2 log(4|X|/delta))) sqrt(8 I / (log(1 + 1/tau^2) n))``."""
    width = 3.0 * C_k + R / tau * math.sqrt(2.0 * math.log(4.0 * domain_size / delta))
    return width * math.sqrt(8.0 * info_gain / (math.log1p(1.0 / tau**2) * n))


def uniform_error(run: DesignRun, f: RkhsFunction, eval_grid=None, C_k: float | None = None, R: float = 0.0, n: int | None = None) -> UniformError:
    """Sup-norm error of the sparse mean and the realized-information-gain bound.

    The bound substitutes the run's own ``I(Y_n; F)`` for the maximal
    information gain; it is only claimed when every audited ``lambda_max`` is
    at most ``tau^2``.
    """
    n = run.n if n is None else n
    grid = run.domain if eval_grid is None else run.kernel.points(eval_grid)
    sp, _ = run.posterior_at(n)
    err = float(np.max(np.abs(f(grid) - sp.mean(grid))))
    C_k = f.rkhs_norm if C_k is None else C_k
    info = run.info_gain(n)
    bound = uniform_error_bound(C_k, R, run.tau, run.delta, run.domain.shape[0], info, n)
    return UniformError(n, err, bound, info, run.lambda_hat(n), run.guarantees_held(n))


def variance_chain_check(run: DesignRun, n: int | None = None) -> tuple[float, float]:
    """Both sides of ``max_x sigma_bar_n^2(x) <= (1/n)(1 + lam/tau^2)^2 sum_j sigma^2_{j-1}(x_j)``.

    Needs an audited run (exact std at each chosen point).
    """
    if not run.audit:
        raise ValueError("the variance chain needs a run with audit=True")
    n = run.n if n is None else n
    sp, _ = run.posterior_at(n)
    lhs = float(np.max(sp.variance(run.domain)))
    lam = run.lambda_hat(n)
    total = sum(s.exact_sigma**2 for s in run.steps[:n])
    return lhs, (1.0 + lam / run.tau**2) ** 2 * total / n


def sigma_bar_bound(run: DesignRun, n: int | None = None) -> float:
    """``(1 + lam/tau^2) sqrt(8 I / (log(1 + 1/tau^2) n))`` with realized ``I``."""
    n = run.n if n is None else n
    lam = run.lambda_hat(n)
    return (1.0 + lam / run.tau**2) * math.sqrt(8.0 * run.info_gain(n) / (math.log1p(1.0 / run.tau**2) * n))
