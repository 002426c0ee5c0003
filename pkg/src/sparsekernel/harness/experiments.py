"""Experiment cells and sweeps behind the CLI subcommands.

Every cell is a pure function of its arguments (scenario, seed, settings) and
returns plain row dictionaries plus a list of failed assertions, so cells can
run in worker processes and be collected in a fixed order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import rng as _rng
from ..bandit import (
    CONTINUOUS,
    FINITE,
    BanditConfig,
    batch_one_bound,
    post_batch_step_bound,
    regret_summary,
    run_sbpe,
)
from ..confidence import CoverageScenario, discretization_constant, empirical_coverage
from ..inducing import select_recursive_rls
from ..kernels import KernelSpec
from ..noise import LaplaceNoise
from ..posterior import Dataset, ExactPosterior, SparsePosterior, information_gain
from ..regression import make_grid, run_design, sum_of_variances_bound, uniform_error, variance_chain_check
from .config import Scenario


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)


@dataclass
class Result:
    tables: dict[str, Table]
    failures: list[str] = field(default_factory=list)
    runs: list = field(default_factory=list)


def fan_out(fn, tasks: list[tuple], jobs: int = 1) -> list:
    """Apply ``fn`` to each argument tuple; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


# -- regress -------------------------------------------------------------------

REGRESS_STEP_COLUMNS = ("lengthscale", "seed", "j", "x_j", "sigma_bar_max", "m_j", "lambda_max", "jitter", "info_gain")
REGRESS_SUMMARY_COLUMNS = (
    "lengthscale", "seed", "n", "linf_error", "bound", "info_gain", "lambda_hat", "events_held", "violated",
    "chain_lhs", "chain_rhs", "sum_var", "sum_var_bound",
)


def regress_cell(sc: Scenario, seed: int, n_grid: list[int], audit: bool, oversampling: float, refresh: str, uniform_m):
    run = run_design(
        sc.kernel, sc.domain, sc.f, sc.noise, max(n_grid), sc.tau, sc.delta, seed,
        oversampling=oversampling, refresh=refresh, audit=audit, uniform_m=uniform_m,
    )
    ell = sc.kernel.lengthscale if sc.kernel.stationary else None
    steps = [dict(row, seed=seed, lengthscale=ell) for row in run.log_rows()]
    rows, failures = [], []
    for n in n_grid:
        ue = uniform_error(run, sc.f, C_k=sc.C_k, R=sc.noise.R, n=n)
        row = {
            "lengthscale": ell, "seed": seed, "n": n, "linf_error": ue.error, "bound": ue.bound, "info_gain": ue.info_gain,
            "lambda_hat": ue.lambda_hat, "events_held": ue.events_held, "violated": ue.violated,
        }
        if ue.violated:
            failures.append(f"regress ell={ell} seed={seed} n={n}: error {ue.error:.4g} exceeds bound {ue.bound:.4g}")
        if audit:
            lhs, rhs = variance_chain_check(run, n)
            total = sum(s.exact_sigma**2 for s in run.steps[:n])
            cap = sum_of_variances_bound(ue.info_gain, sc.tau, sc.kernel.k_max)
            row.update(chain_lhs=lhs, chain_rhs=rhs, sum_var=total, sum_var_bound=cap)
            if ue.events_held and lhs > rhs + 1e-10:
                failures.append(f"regress seed={seed} n={n}: variance chain violated")
            if total > cap + 1e-10:
                failures.append(f"regress seed={seed} n={n}: sum of variances exceeds its bound")
        rows.append(row)
    return steps, rows, failures


def regress(scenarios: Scenario | list[Scenario], audit: bool = False, jobs: int = 1) -> Result:
    """Design runs for every seed of every scenario (one per swept lengthscale)."""
    scenarios = [scenarios] if isinstance(scenarios, Scenario) else scenarios
    tasks = []
    for sc in scenarios:
        cfg = sc.raw
        n_grid = sorted(cfg.get("n_grid", [50, 100, 200]))
        tasks += [
            (sc, s, n_grid, audit, float(cfg.get("oversampling", 16.0)), cfg.get("refresh", "every"), cfg.get("uniform_m"))
            for s in sc.seeds
        ]
    out = fan_out(regress_cell, tasks, jobs)
    steps = Table(REGRESS_STEP_COLUMNS, [r for o in out for r in o[0]])
    summary = Table(REGRESS_SUMMARY_COLUMNS, [r for o in out for r in o[1]])
    rates = Table(RATE_COLUMNS, rate_table(summary.rows))
    return Result(
        {"regress_steps": steps, "regress_summary": summary, "regress_rates": rates}, [f for o in out for f in o[2]],
    )


def rate_table(rows: list[dict]) -> list[dict]:
    """Seed-averaged error and the normalized sequence ``error * sqrt(n / I)``, per lengthscale."""
    out = []
    for ell in sorted({r.get("lengthscale") for r in rows}, key=lambda v: (v is None, v)):
        group = [r for r in rows if r.get("lengthscale") == ell]
        for n in sorted({r["n"] for r in group}):
            sel = [r for r in group if r["n"] == n]
            err = float(np.mean([r["linf_error"] for r in sel]))
            info = float(np.mean([r["info_gain"] for r in sel]))
            out.append({
                "lengthscale": ell, "n": n, "mean_error": err, "mean_info_gain": info,
                "normalized": err * math.sqrt(n / info),
            })
    return out


RATE_COLUMNS = ("lengthscale", "n", "mean_error", "mean_info_gain", "normalized")


# -- optimize ------------------------------------------------------------------

OPT_STEP_COLUMNS = ("N", "seed", "n", "batch", "x_n", "arm", "instant_regret")
OPT_BATCH_COLUMNS = (
    "N", "seed", "i", "N_i", "length", "active", "active_after", "width",
    "lambda_max_max", "lambda_max_median", "events_held", "optimum_active",
)
OPT_RUN_COLUMNS = (
    "N", "seed", "regret", "info_gain", "batches", "batch_cap", "optimum_survived", "events_held",
    "recommendation", "batch1_regret", "batch1_bound",
)
OPT_SUMMARY_COLUMNS = (
    "N", "runs", "mean_regret", "std_regret", "mean_info_gain", "normalized_ratio", "ratio_no_log",
    "regret_per_step", "bound", "max_batches", "batch_cap", "optimum_survival", "events_held",
)


def optimize_cell(sc: Scenario, N: int, seed: int, variant: str, oversampling: float):
    cfg = BanditConfig(N, sc.domain, sc.kernel, sc.tau, sc.delta, sc.C_k, sc.noise.R, variant, oversampling)
    run = run_sbpe(cfg, sc.f, sc.noise, seed)
    failures = list(run.failures)
    if run.num_batches > cfg.B:
        failures.append(f"optimize N={N} seed={seed}: {run.num_batches} batches exceed cap {cfg.B}")
    sizes = [a.shape[0] for a in run.active_sets]
    if any(b > a for a, b in zip(sizes, sizes[1:])):
        failures.append(f"optimize N={N} seed={seed}: active set grew")
    b1 = run.batches[0].regret
    b1_cap = batch_one_bound(sc.C_k, sc.kernel.k_max, N)
    if b1 > b1_cap:
        failures.append(f"optimize N={N} seed={seed}: batch-1 regret {b1:.4g} above {b1_cap:.4g}")
    if run.events_held:
        if not run.optimum_survived:
            failures.append(f"optimize N={N} seed={seed}: optimum eliminated while events held")
        for prev, cur in zip(run.batches, run.batches[1:]):
            cap = post_batch_step_bound(cfg, prev.lambda_max_max, prev.info_gain, prev.length)
            worst = float(np.max(run.instant_regret[run.batch_of_step == cur.i]))
            if worst > cap:
                failures.append(f"optimize N={N} seed={seed}: batch {cur.i} step regret {worst:.4g} above {cap:.4g}")
    steps = [dict(r, N=N, seed=seed) for r in run.step_rows()]
    batches = [dict(r, N=N, seed=seed) for r in run.batch_rows()]
    summary = {
        "N": N, "seed": seed, "regret": run.regret, "info_gain": run.info_gain(), "batches": run.num_batches,
        "batch_cap": cfg.B, "optimum_survived": run.optimum_survived, "events_held": run.events_held,
        "recommendation": run.recommendation, "batch1_regret": b1, "batch1_bound": b1_cap,
    }
    return steps, batches, summary, failures, run


def optimize(sc: Scenario, jobs: int = 1, keep_runs: bool = False) -> Result:
    cfg = sc.raw
    horizons = sorted(cfg.get("N_grid", [cfg.get("N", 64)]))
    variant = cfg.get("variant", FINITE)
    if variant not in (FINITE, CONTINUOUS):
        raise ValueError(f"unknown variant {variant!r}")
    over = float(cfg.get("oversampling", 16.0))
    tasks = [(sc, N, s, variant, over) for N in horizons for s in sc.seeds]
    out = fan_out(optimize_cell, tasks, jobs)
    summaries = []
    for N in horizons:
        runs = [o[4] for o, t in zip(out, tasks) if t[1] == N]
        s = regret_summary(runs)
        summaries.append({
            "N": N, "runs": s.runs, "mean_regret": s.mean_regret, "std_regret": s.std_regret,
            "mean_info_gain": s.mean_info_gain, "normalized_ratio": s.normalized_ratio,
            "ratio_no_log": s.ratio_no_log, "regret_per_step": s.mean_regret / N, "bound": s.bound,
            "max_batches": s.max_batches, "batch_cap": runs[0].config.B,
            "optimum_survival": s.optimum_survival, "events_held": s.events_held,
        })
    res = Result(
        {
            "optimize_steps": Table(OPT_STEP_COLUMNS, [r for o in out for r in o[0]]),
            "optimize_batches": Table(OPT_BATCH_COLUMNS, [r for o in out for r in o[1]]),
            "optimize_runs": Table(OPT_RUN_COLUMNS, [o[2] for o in out]),
            "optimize_summary": Table(OPT_SUMMARY_COLUMNS, summaries),
        },
        [f for o in out for f in o[3]],
    )
    if keep_runs:
        res.runs = [o[4] for o in out]
    return res


# -- coverage ------------------------------------------------------------------

COVERAGE_COLUMNS = ("trial", "covered_upper", "covered_lower", "width")
COVERAGE_SUMMARY_COLUMNS = (
    "seed", "trials", "delta", "upper", "lower", "both", "std_error", "beta", "width", "m", "lambda_max",
    "uniform_upper", "uniform_lower", "uniform_both", "grid_size",
)


def coverage_scenario(sc: Scenario, seed: int, n: int, grid_resolution: int | None = None, light_tailed: bool = False,
                      oversampling: float = 16.0, query=None) -> CoverageScenario:
    """Fixed design and inducing set, both drawn before any noise."""
    d = sc.kernel.dim
    X = _rng.stream(seed, _rng.DESIGN, 0).random((n, d))
    Z = select_recursive_rls(sc.kernel, X, sc.tau, min(sc.delta, 0.03), seed, oversampling=oversampling)
    q = np.full((1, d), 0.5) if query is None else sc.kernel.points(query)
    grid = None if grid_resolution is None else make_grid([0.0, 1.0], grid_resolution, d)
    disc_c = discretization_constant(sc.kernel) if grid is not None else None
    return CoverageScenario(
        sc.kernel, sc.f, X, Z.Z, sc.tau, sc.noise, q, C_k=sc.C_k, lambda_max=Z.lambda_max, grid=grid,
        disc_c=disc_c, seed=seed, light_tailed=light_tailed, extra={"m": Z.m},
    )


def coverage_cell(sc: Scenario, seed: int, n: int, trials: int, grid_resolution, light_tailed: bool, query,
                  oversampling: float = 16.0):
    cs = coverage_scenario(sc, seed, n, grid_resolution, light_tailed, oversampling, query)
    rep = empirical_coverage(trials, cs, sc.delta)
    target = 1.0 - sc.delta
    failures = []
    if min(rep.upper, rep.lower) < target:
        failures.append(f"coverage seed={seed}: per-side coverage {min(rep.upper, rep.lower):.4f} below {target}")
    row = {
        "seed": seed, "trials": trials, "delta": sc.delta, "upper": rep.upper, "lower": rep.lower,
        "both": rep.both, "std_error": rep.std_error, "beta": rep.beta, "width": rep.width,
        "m": cs.extra["m"], "lambda_max": cs.lambda_max,
    }
    if rep.uniform is not None:
        row.update(uniform_upper=rep.uniform["upper"], uniform_lower=rep.uniform["lower"],
                   uniform_both=rep.uniform["both"], grid_size=cs.grid.shape[0])
        if rep.uniform["both"] < target:
            failures.append(f"coverage seed={seed}: uniform coverage {rep.uniform['both']:.4f} below {target}")
    trial_rows = [
        {"trial": t, "covered_upper": u, "covered_lower": lo, "width": w} for t, u, lo, w in rep.rows
    ]
    return trial_rows, row, failures


def coverage(sc: Scenario, jobs: int = 1) -> Result:
    cfg = sc.raw
    light = isinstance(sc.noise, LaplaceNoise)
    tasks = [
        (sc, s, int(cfg.get("n", 100)), int(cfg.get("trials", 2000)), cfg.get("grid_resolution"), light,
         cfg.get("query"), float(cfg.get("oversampling", 16.0)))
        for s in sc.seeds
    ]
    out = fan_out(coverage_cell, tasks, jobs)
    trials = Table(("seed",) + COVERAGE_COLUMNS, [dict(r, seed=t[1]) for o, t in zip(out, tasks) for r in o[0]])
    summary = Table(COVERAGE_SUMMARY_COLUMNS, [o[1] for o in out])
    return Result({"coverage_trials": trials, "coverage_summary": summary}, [f for o in out for f in o[2]])


# -- bench ---------------------------------------------------------------------

BENCH_COLUMNS = (
    "n", "m_fixed", "exact_fit", "sparse_fit", "sparse_query", "m_info", "sparse_info_fit", "speedup_info",
)


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def loglog_slope(ns, ts) -> float:
    return float(np.polyfit(np.log(ns), np.log(ts), 1)[0])


def bench_scaling(kernel: KernelSpec, n_grid, m_rule: dict, tau: float, seed: int, reps: int = 5, queries: int = 200):
    """Median wall-clock times of exact and sparse fits across ``n_grid``.

    ``m_rule`` holds ``{"fixed": m}`` for the fixed-size sparse fits and
    optionally ``{"info_factor": c}`` for ``m = ceil(c * I(Y_n; F))``.
    Returns ``(rows, slopes)``.
    """
    if list(n_grid) != sorted(n_grid):
        raise ValueError("n_grid must be ascending")
    m_fixed = int(m_rule.get("fixed", 50))
    factor = m_rule.get("info_factor")
    d = kernel.dim
    Q = _rng.stream(seed, _rng.DESIGN, 1).random((queries, d))
    rows = []
    for n in n_grid:
        gen = _rng.stream(seed, _rng.DESIGN, n)
        X = gen.random((n, d))
        Y = gen.standard_normal(n)
        data = Dataset(X, Y, tau)
        Z = X[:m_fixed]
        exact = _median_time(lambda: ExactPosterior(kernel, data), reps)
        sparse = _median_time(lambda: SparsePosterior(kernel, data, Z), reps)
        sp = SparsePosterior(kernel, data, Z)
        query = _median_time(lambda: (sp.mean(Q), sp.std(Q)), reps)
        row = {"n": n, "m_fixed": m_fixed, "exact_fit": exact, "sparse_fit": sparse, "sparse_query": query}
        if factor is not None:
            m = min(n, int(math.ceil(float(factor) * information_gain(kernel, X, tau))))
            Zi = X[:m]
            t = _median_time(lambda: SparsePosterior(kernel, data, Zi), reps)
            row.update(m_info=m, sparse_info_fit=t, speedup_info=exact / t)
        rows.append(row)
    ns = [r["n"] for r in rows]
    slopes = {
        "exact_fit": loglog_slope(ns, [r["exact_fit"] for r in rows]),
        "sparse_fit": loglog_slope(ns, [r["sparse_fit"] for r in rows]),
        "sparse_query_ratio": max(r["sparse_query"] for r in rows) / min(r["sparse_query"] for r in rows),
    }
    return rows, slopes


def bench(sc: Scenario) -> Result:
    cfg = sc.raw
    n_grid = cfg.get("n_grid", [500, 1000, 2000, 4000])
    rows, slopes = bench_scaling(
        sc.kernel, n_grid, cfg.get("m_rule", {"fixed": 50, "info_factor": 1.0}), sc.tau,
        sc.seeds[0], int(cfg.get("reps", 5)),
    )
    failures = []
    checks = cfg.get("assert_slopes")
    if checks:
        lo, hi = checks.get("exact", [2.3, 3.3])
        if not lo <= slopes["exact_fit"] <= hi:
            failures.append(f"bench: exact-fit slope {slopes['exact_fit']:.3f} outside [{lo}, {hi}]")
        lo, hi = checks.get("sparse", [0.8, 1.4])
        if not lo <= slopes["sparse_fit"] <= hi:
            failures.append(f"bench: sparse-fit slope {slopes['sparse_fit']:.3f} outside [{lo}, {hi}]")
    slope_rows = [{"quantity": k, "value": v} for k, v in slopes.items()]
    return Result(
        {"bench": Table(BENCH_COLUMNS, rows), "bench_slopes": Table(("quantity", "value"), slope_rows)},
        failures,
    )


SNAPSHOT_COLUMNS = ("x", "mu", "sigma", "mu_bar", "sigma_bar", "projection", "reduced", "noise")


def posterior_snapshot(kernel: KernelSpec, dataset: Dataset, Z, Q) -> Table:
    """Exact and sparse posterior side by side at query points ``Q``."""
    Q = kernel.points(Q)
    ex = ExactPosterior(kernel, dataset)
    sp = SparsePosterior(kernel, dataset, Z)
    dec = sp.decompose(Q)
    cols = (ex.mean(Q), ex.std(Q), sp.mean(Q), sp.std(Q), dec.projection_term, dec.reduced_prediction_term, dec.noise_term)
    rows = []
    for i in range(Q.shape[0]):
        row = {"x": " ".join(repr(float(v)) for v in Q[i])}
        row.update({c: float(v[i]) for c, v in zip(SNAPSHOT_COLUMNS[1:], cols)})
        rows.append(row)
    return Table(SNAPSHOT_COLUMNS, rows)
