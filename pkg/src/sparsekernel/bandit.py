"""Sparse batched pure exploration: batched arm elimination on sparse posteriors.

Batch ``i`` has length ``N_i = ceil(sqrt(N N_{i-1}))`` with ``N_0 = 1``.  Inside
a batch the arms are chosen by maximal sparse-posterior std computed from that
batch's inputs only, so the design never sees an observation.  Observations are
collected once the batch design is complete, confidence bounds are formed from
the batch posterior and every arm whose upper bound falls below the best lower
bound is dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .confidence import (
    ConfidenceParams,
    ContinuousDomain,
    SubGaussian,
    beta,
    discretization_constant,
    uniform_params,
)
from .inducing import select_recursive_rls
from .kernels import KernelSpec, RkhsFunction
from .posterior import Dataset, SparsePosterior, information_gain
from .regression import delta_schedule, design_sequence

FINITE = "finite"
CONTINUOUS = "continuous"

# stream indices of batch i start at i * BATCH_STREAM_STRIDE
BATCH_STREAM_STRIDE = 1 << 24


def _ceil_sqrt(a: int) -> int:
    return math.isqrt(a - 1) + 1 if a > 0 else 0


def batch_cap(N: int) -> int:
    """``ceil(log2 log2 N) + 1``, at least 1.

    Batch ``i`` has planned length about ``N^(1 - 2^-i)``, so this many batches
    always reach ``N``; with natural logarithms the count is exceeded (``N = 256``
    needs 4 batches).
    """
    if N < 3:
        return 1
    return max(1, math.ceil(math.log2(math.log2(N))) + 1)


def batch_lengths(N: int) -> list[int]:
    """Batch lengths with the last batch truncated so they sum to ``N``."""
    if N < 1:
        raise ValueError("N must be positive")
    out, total, prev = [], 0, 1
    while total < N:
        cur = _ceil_sqrt(N * prev)
        out.append(min(cur, N - total))
        total += out[-1]
        prev = cur
    return out


@dataclass
class BanditConfig:
    N: int
    domain: np.ndarray
    kernel: KernelSpec
    tau: float
    delta: float
    C_k: float
    R: float
    variant: str = FINITE
    oversampling: float = 16.0
    disc_c: float | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("horizon N must be at least 2")
        if self.variant not in (FINITE, CONTINUOUS):
            raise ValueError(f"unknown confidence variant {self.variant!r}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        self.domain = self.kernel.points(self.domain)

    @property
    def B(self) -> int:
        return batch_cap(self.N)

    @property
    def lengths(self) -> list[int]:
        return batch_lengths(self.N)

    def width(self, lambda_max: float, n: int):
        """``beta(delta/(4B|X|))`` or, for the continuous variant, the uniform constants."""
        params = ConfidenceParams(
            self.C_k, SubGaussian(self.R), self.tau, self.delta, lambda_max, self.kernel.k_max,
        )
        if self.variant == FINITE:
            return beta(params, self.delta / (4.0 * self.B * self.domain.shape[0]))
        c = self.disc_c if self.disc_c is not None else discretization_constant(self.kernel)
        params = params.with_(domain=ContinuousDomain(self.kernel.dim, c))
        return uniform_params(params, n, self.delta / (4.0 * self.B))


@dataclass
class BatchRecord:
    i: int
    planned: int
    length: int
    active_before: int
    active_after: int
    width: float
    lambda_max_max: float
    lambda_max_median: float
    info_gain: float
    events_held: bool
    optimum_active: bool
    emptied: bool
    regret: float


@dataclass
class SbpeRun:
    config: BanditConfig
    seed: int
    X: np.ndarray
    indices: np.ndarray
    Y: np.ndarray
    batch_of_step: np.ndarray
    instant_regret: np.ndarray
    batches: list[BatchRecord]
    active_sets: list[np.ndarray]
    recommendation: int
    step_lambda: np.ndarray
    failures: list[str] = field(default_factory=list)

    @property
    def regret_curve(self) -> np.ndarray:
        return np.cumsum(self.instant_regret)

    @property
    def regret(self) -> float:
        return float(self.instant_regret.sum())

    @property
    def num_batches(self) -> int:
        return len(self.batches)

    @property
    def optimum_survived(self) -> bool:
        return all(b.optimum_active for b in self.batches)

    @property
    def events_held(self) -> bool:
        return all(b.events_held for b in self.batches)

    def info_gain(self) -> float:
        return information_gain(self.config.kernel, self.X, self.config.tau)

    def step_rows(self):
        for n in range(self.X.shape[0]):
            yield {
                "n": n + 1, "batch": int(self.batch_of_step[n]),
                "x_n": " ".join(repr(float(v)) for v in self.X[n]),
                "arm": int(self.indices[n]), "instant_regret": float(self.instant_regret[n]),
            }

    def batch_rows(self):
        for b in self.batches:
            yield {
                "i": b.i, "N_i": b.planned, "length": b.length, "active": b.active_before,
                "active_after": b.active_after, "width": b.width,
                "lambda_max_max": b.lambda_max_max, "lambda_max_median": b.lambda_max_median,
                "events_held": b.events_held, "optimum_active": b.optimum_active,
            }


def run_sbpe(config: BanditConfig, f: RkhsFunction, noise_model, seed: int, noise_seed: int | None = None) -> SbpeRun:
    """Run sparse batched pure exploration for ``config.N`` steps against the objective ``f``.

    ``seed`` drives the inducing-point draws; observation noise comes from
    ``(noise_seed, NOISE, i)`` for batch ``i``.  Confidence events are checked
    afterwards against the known ``f`` (bounds contain ``f`` on the active set
    and every audited ``lambda_max`` is at most ``tau^2``).
    """
    cfg = config
    noise_seed = seed if noise_seed is None else noise_seed
    domain = cfg.domain
    f_dom = f(domain)
    best = float(np.max(f_dom))
    x_star = int(np.argmax(f_dom))
    B = cfg.B
    active = np.arange(domain.shape[0])
    active_sets = [active]
    X_all, idx_all, Y_all, batch_of, lam_all = [], [], [], [], []
    records: list[BatchRecord] = []
    failures: list[str] = []
    l_last = None
    spent = 0
    planned_prev = 1
    i = 0
    while spent < cfg.N:
        i += 1
        planned = _ceil_sqrt(cfg.N * planned_prev)
        planned_prev = planned
        length = min(planned, cfg.N - spent)
        arms = domain[active]
        offset = i * BATCH_STREAM_STRIDE
        Xb, local, steps = design_sequence(
            cfg.kernel, arms, length, cfg.tau, cfg.delta, seed, batches=B,
            stream_offset=offset, oversampling=cfg.oversampling,
        )
        chosen = active[local]
        # observations are collected only once the batch design is fixed
        Yb = f_dom[chosen] + noise_model.sample(_rng.stream(noise_seed, _rng.NOISE, i), length)
        spent += length
        X_all.append(Xb)
        idx_all.append(chosen)
        Y_all.append(Yb)
        batch_of.append(np.full(length, i))
        lams = [s.lambda_max for s in steps]

        Z = select_recursive_rls(
            cfg.kernel, Xb, cfg.tau, delta_schedule(cfg.delta, length, B), seed,
            stream_index=offset + length, oversampling=cfg.oversampling,
        )
        lams.append(Z.lambda_max)
        lam_all.extend(lams)
        sp = SparsePosterior(cfg.kernel, Dataset(Xb, Yb, cfg.tau), Z)
        mu, sd = sp.mean(arms), sp.std(arms)
        w = cfg.width(Z.lambda_max, length)
        if cfg.variant == FINITE:
            lower, upper = mu - w * sd, mu + w * sd
            width = float(w)
        else:
            lower, upper = w.bounds(mu, sd)
            width = float(w.beta_tilde)
        l_last = (active, lower)

        held = bool(np.all(f_dom[active] <= upper) and np.all(f_dom[active] >= lower))
        held = held and max(lams) <= cfg.tau**2
        keep = upper >= np.max(lower)
        emptied = not keep.any()
        if emptied:
            keep = np.zeros_like(keep)
            keep[int(np.argmax(upper))] = True
            failures.append(f"batch {i}: elimination emptied the active set")
        opt_active = bool(np.any(active == x_star))
        records.append(BatchRecord(
            i, planned, length, active.shape[0], int(keep.sum()), width, float(max(lams)),
            float(np.median(lams)), information_gain(cfg.kernel, Xb, cfg.tau), held, opt_active,
            emptied, float(np.sum(best - f_dom[chosen])),
        ))
        active = active[keep]
        active_sets.append(active)

    if not np.any(active == x_star):
        records[-1].optimum_active = False
    X = np.vstack(X_all)
    idx = np.concatenate(idx_all)
    rec_arms, rec_lower = l_last
    recommendation = int(rec_arms[int(np.argmax(rec_lower))])
    return SbpeRun(
        cfg, seed, X, idx, np.concatenate(Y_all), np.concatenate(batch_of),
        best - f_dom[idx], records, active_sets, recommendation, np.asarray(lam_all), failures,
    )


def regret_bound(C_k: float, R: float, tau: float, delta: float, domain_size: int, N: int, gamma: float) -> float:
    """Constant-carrying regret bound with ``gamma`` the (realized) information gain."""
    ll = math.log(math.log(N)) + 2.0
    width = 12.0 * C_k + 4.0 * R / tau * math.sqrt(2.0 * math.log(4.0 * domain_size * ll / delta))
    return width * (math.sqrt(N) + 1.0) * ll * math.sqrt(8.0 * gamma / math.log1p(1.0 / tau**2))


def batch_one_bound(C_k: float, k_max: float, N: int) -> float:
    """``C_k k_max sqrt(N)``: batch-one regret cap."""
    return C_k * k_max * math.sqrt(N)


def post_batch_step_bound(config: BanditConfig, lambda_max: float, info_prev: float, n_prev: int) -> float:
    """Per-step regret cap in batch ``i >= 2`` from batch ``i-1`` statistics."""
    b = config.width(lambda_max, n_prev) if config.variant == FINITE else config.width(lambda_max, n_prev).beta_tilde
    return 4.0 * b * math.sqrt(8.0 * info_prev / (math.log1p(1.0 / config.tau**2) * n_prev))


@dataclass
class RegretSummary:
    N: int
    runs: int
    mean_regret: float
    std_regret: float
    mean_info_gain: float
    normalized_ratio: float
    ratio_no_log: float
    bound: float
    max_batches: int
    optimum_survival: float
    events_held: float


def regret_summary(runs: list[SbpeRun], config: BanditConfig | None = None) -> RegretSummary:
    """Per-horizon statistics of ``R(N)`` with the realized information gain."""
    if not runs:
        raise ValueError("need at least one completed run")
    cfg = config or runs[0].config
    regrets = np.array([r.regret for r in runs])
    infos = np.array([r.info_gain() for r in runs])
    N = cfg.N
    size = cfg.domain.shape[0]
    mean_r, mean_i = float(regrets.mean()), float(infos.mean())
    denom = math.sqrt(N * mean_i) if mean_i > 0 else float("nan")
    return RegretSummary(
        N, len(runs), mean_r, float(regrets.std(ddof=1)) if len(runs) > 1 else 0.0, mean_i,
        mean_r / (denom * math.sqrt(math.log(size / cfg.delta))), mean_r / denom,
        regret_bound(cfg.C_k, cfg.R, cfg.tau, cfg.delta, size, N, mean_i) if N > 2 else float("nan"),
        max(r.num_batches for r in runs),
        float(np.mean([r.optimum_survived for r in runs])),
        float(np.mean([r.events_held for r in runs])),
    )
