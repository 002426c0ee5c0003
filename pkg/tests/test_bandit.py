import math

import numpy as np
import pytest

from sparsekernel.bandit import (
    BATCH_STREAM_STRIDE,
    CONTINUOUS,
    BanditConfig,
    batch_cap,
    batch_lengths,
    batch_one_bound,
    regret_bound,
    regret_summary,
    run_sbpe,
)
from sparsekernel.harness.oracles import dense_oracle_posterior
from sparsekernel.kernels import KernelSpec, RkhsFunction, sample_rkhs_function
from sparsekernel.noise import GaussianNoise
from sparsekernel.posterior import Dataset
from sparsekernel.regression import design_sequence, make_grid

SE = KernelSpec.squared_exponential(0.1, 1.0, 1)
ARMS = make_grid([0.0, 1.0], 16, 1)


def config(N, domain=ARMS, kernel=SE, **kw):
    base = dict(tau=0.1, delta=0.1, C_k=1.0, R=0.1)
    base.update(kw)
    return BanditConfig(N, domain, kernel, **base)


class TestSchedule:
    def test_n16(self):
        assert batch_lengths(16) == [4, 8, 4]
        assert batch_cap(16) == 3

    def test_n4096(self):
        lengths = batch_lengths(4096)
        assert lengths == [64, 512, 1449, 2071]
        assert sum(lengths) == 4096
        assert len(lengths) <= batch_cap(4096) == 5

    @pytest.mark.parametrize("N", [2, 3, 10, 64, 100, 256, 1000, 1024, 10_000, 10**6])
    def test_count_within_cap(self, N):
        lengths = batch_lengths(N)
        assert sum(lengths) == N
        assert len(lengths) <= batch_cap(N)

    def test_natural_log_cap_too_small(self):
        assert len(batch_lengths(256)) == 4 > math.ceil(math.log(math.log(256))) + 1
        assert batch_cap(256) == 4

    def test_exact_integer_ceiling(self):
        # sqrt(N * N_prev) is an exact square here, so no rounding up
        assert batch_lengths(10_000)[:2] == [100, 1000]

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            config(1)
        with pytest.raises(ValueError):
            config(16, variant="bayesian")
        with pytest.raises(ValueError):
            config(16, delta=1.0)


def five_arm_problem():
    k = KernelSpec.tabulated(np.eye(5))
    dom = np.arange(5.0).reshape(-1, 1)
    values = np.array([0.1, 1.0, 0.2, 0.0, -0.2])
    f = RkhsFunction(dom, values, k)
    return k, dom, f


class TestElimination:
    def test_five_arm_singleton(self):
        k, dom, f = five_arm_problem()
        cfg = BanditConfig(25, dom, k, tau=0.01, delta=0.1, C_k=f.rkhs_norm, R=0.0)
        run = run_sbpe(cfg, f, GaussianNoise(0.0), seed=0)
        # batch one pulls each arm once (ties by index)
        np.testing.assert_array_equal(run.indices[:5], [0, 1, 2, 3, 4])
        data = Dataset(dom, f(dom), 0.01)
        mu, sd, _ = dense_oracle_posterior(k, data, dom, dom)
        np.testing.assert_allclose(mu, f(dom) / (1 + 1e-4), rtol=1e-12)
        np.testing.assert_allclose(sd**2, 1e-4 / (1 + 1e-4), rtol=1e-9)
        b = 2.0 * f.rkhs_norm
        upper, lower = mu + b * sd, mu - b * sd
        expected = np.flatnonzero(upper >= lower.max())
        np.testing.assert_array_equal(expected, [1])
        np.testing.assert_array_equal(run.active_sets[1], expected)
        # lambda_max sits at the 1e-10 jitter floor, adding sqrt(lam)/tau C_k
        assert run.batches[0].width == pytest.approx(b, rel=1e-3)
        assert run.recommendation == 1
        assert np.all(run.indices[5:] == 1)

    def test_constant_objective(self):
        f = RkhsFunction(ARMS[:1], np.zeros(1), SE)
        run = run_sbpe(config(64), f, GaussianNoise(0.1), seed=1)
        assert all(len(a) == ARMS.shape[0] for a in run.active_sets)
        assert run.regret == 0.0

    def test_two_steps(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=2)
        run = run_sbpe(config(2), f, GaussianNoise(0.1), seed=2)
        assert run.regret <= 2 * 1.0 * SE.k_max
        assert run.num_batches <= batch_cap(2)

    def test_replay_ledger(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=3)
        run = run_sbpe(config(64, R=1e-6), f, GaussianNoise(0.0), seed=3)
        vals = f(ARMS)
        replay = 0.0
        for arm in run.indices:
            replay += vals.max() - vals[arm]
        assert run.regret == pytest.approx(replay, abs=1e-12)
        np.testing.assert_allclose(run.regret_curve[-1], replay, atol=1e-12)

    def test_invariants(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=4)
        cfg = config(128)
        run = run_sbpe(cfg, f, GaussianNoise(0.1), seed=4)
        sizes = [len(a) for a in run.active_sets]
        assert all(a >= b >= 1 for a, b in zip(sizes, sizes[1:]))
        for a, b in zip(run.active_sets, run.active_sets[1:]):
            assert set(b) <= set(a)
        assert run.num_batches <= cfg.B
        assert run.batches[0].regret <= batch_one_bound(1.0, 1.0, 128)
        if run.events_held:
            assert run.optimum_survived
        assert len(run.instant_regret) == 128

    def test_within_batch_independence(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=5)
        cfg = config(64)
        a = run_sbpe(cfg, f, GaussianNoise(0.1), seed=5, noise_seed=1)
        b = run_sbpe(cfg, f, GaussianNoise(0.1), seed=5, noise_seed=2)
        first = cfg.lengths[0]
        np.testing.assert_array_equal(a.indices[:first], b.indices[:first])
        # batch two is a function of its active set and the seed only
        active = a.active_sets[1]
        length = a.batches[1].length
        _, local, _ = design_sequence(
            SE, ARMS[active], length, cfg.tau, cfg.delta, 5, batches=cfg.B, stream_offset=2 * BATCH_STREAM_STRIDE,
        )
        np.testing.assert_array_equal(active[local], a.indices[first:first + length])

    def test_continuous_variant(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=6)
        run = run_sbpe(config(32, variant=CONTINUOUS), f, GaussianNoise(0.1), seed=6)
        assert run.num_batches <= batch_cap(32)
        assert all(len(a) >= 1 for a in run.active_sets)

    def test_deterministic(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=7)
        a = run_sbpe(config(64), f, GaussianNoise(0.1), seed=7)
        b = run_sbpe(config(64), f, GaussianNoise(0.1), seed=7)
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.Y, b.Y)


class TestSummary:
    def test_summary_fields(self):
        f = sample_rkhs_function(SE, 5, 1.0, seed=8)
        cfg = config(64)
        runs = [run_sbpe(cfg, f, GaussianNoise(0.1), seed=s) for s in range(3)]
        s = regret_summary(runs, cfg)
        assert s.runs == 3 and s.N == 64
        np.testing.assert_allclose(s.mean_regret, np.mean([r.regret for r in runs]))
        denom = math.sqrt(64 * s.mean_info_gain)
        np.testing.assert_allclose(s.ratio_no_log, s.mean_regret / denom)
        np.testing.assert_allclose(s.normalized_ratio, s.ratio_no_log / math.sqrt(math.log(16 / 0.1)))
        assert s.bound == pytest.approx(regret_bound(1.0, 0.1, 0.1, 0.1, 16, 64, s.mean_info_gain))
        assert s.mean_regret <= s.bound

    def test_empty(self):
        with pytest.raises(ValueError):
            regret_summary([])
