import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_banded

import _brute
from rwre import rng
from rwre.env_model import EnvDistribution, Environment
from rwre.errors import DegenerateInterval, ParityMismatch
from rwre.walker import (ReflectedEnv, couple, couple_batch, hitting_time, hitting_time_after, occupation_probability,
                         reflected_invariant_measure, run, s_marginal_path, sample_nu, trajectory)

# a very deep valley of the q=0.3 law: seed 3, valley 4
VALLEY_SEED, A, B, C, N = 3, 89, 95, 107, 370


@pytest.fixture(scope="module")
def valley_env(q03):
    return Environment(q03, VALLEY_SEED)


def mean_hitting_time_solve(env, start, target, left):
    """E^start[tau(target)] for start < target, reflecting at ``left``, by a banded solve."""
    sites = np.arange(left, target)
    w = env.omega(left, target).astype(float)
    w[0] = 1.0
    n = len(sites)
    # m(x) - w m(x+1) - (1-w) m(x-1) = 1, m(target) = 0
    ab = np.zeros((3, n))
    ab[1] = 1.0
    ab[0, 1:] = -w[:-1]
    ab[2, :-1] = -(1 - w[1:])
    m = solve_banded((1, 1), ab, np.ones(n))
    return m[start - left]


def plain_meetings(env, starts, horizon, seed, run_id=0):
    """Straightforward per-step loop under the same stream contract as ``run``."""
    us = [rng.stream(seed, rng.WALKER, run_id, j).random(horizon) for j in range(len(starts))]
    cache = {}
    pos = list(starts)
    times = [0] if len(set(pos)) == 1 else []
    for t in range(horizon):
        for j in range(len(pos)):
            x = pos[j]
            if x not in cache:
                cache[x] = env.omega_at(x)
            pos[j] = x + 1 if us[j][t] < cache[x] else x - 1
        if len(set(pos)) == 1:
            times.append(t + 1)
    return times, pos


# ---------------------------------------------------------------- run


class TestRun:
    def test_horizon_zero(self, env_q03):
        summary, log = run(env_q03, (0, 0, 0), 0, seed=1)
        assert log.meeting_times.tolist() == [0] and log.meeting_sites.tolist() == [0]
        assert summary.final.tolist() == [0, 0, 0]

    def test_drift_and_parity(self):
        env = Environment(EnvDistribution.constant(0.75), 0)
        finals = []
        for r in range(200):
            summary, _ = run(env, (0,), 1000, seed=5, run_id=r)
            finals.append(int(summary.final[0]))
        assert all(f % 2 == 0 for f in finals)
        assert all(f > 0 for f in finals)

    def test_duplicate_implementation(self, env_q03):
        summary, log = run(env_q03, (0, 2), 100_000, seed=77)
        times, final = plain_meetings(env_q03, (0, 2), 100_000, seed=77)
        assert len(times) > 0
        assert log.meeting_times[0] == times[0]
        assert log.meeting_times.tolist() == times
        assert summary.final.tolist() == final

    def test_meetings_recheckable(self, env_q03):
        starts = (0, 2, -2)
        summary, log = run(env_q03, starts, 20_000, seed=9, run_id=4, checkpoint_stride=1000)
        paths = [trajectory(env_q03, s, 20_000, 9, rng.WALKER, (4, j)) for j, s in enumerate(starts)]
        all_equal = np.flatnonzero((paths[0] == paths[1]) & (paths[1] == paths[2]))
        assert log.meeting_times.tolist() == all_equal.tolist()
        assert np.all(paths[0][log.meeting_times] == log.meeting_sites)
        assert summary.checkpoint_times.tolist() == list(range(0, 20_001, 1000))
        for t, row in zip(summary.checkpoint_times, summary.checkpoints):
            assert [p[t] for p in paths] == row.tolist()
            assert all((x - s - t) % 2 == 0 for x, s in zip(row, starts))
        assert summary.max_site.tolist() == [int(p.max()) for p in paths]
        assert summary.min_site.tolist() == [int(p.min()) for p in paths]

    def test_chunking_invisible(self, env_q03):
        _, a = run(env_q03, (0, 0), 50_000, seed=3)
        _, b = run(env_q03, (0, 0), 50_000, seed=3, chunk=777)
        assert np.array_equal(a.meeting_times, b.meeting_times)

    def test_mixed_parity(self, env_q03):
        with pytest.raises(ParityMismatch):
            run(env_q03, (0, 1), 10, seed=0)
        run(env_q03, (0, 1), 10, seed=0, detect_meetings=False)

    def test_log_counts(self, env_q03):
        _, log = run(env_q03, (0, 0), 200_000, seed=11)
        assert log.count() == len(log.meeting_times)
        assert log.count(before=20_000) <= log.count()
        assert log.count(at_least=100) == int(np.sum(log.meeting_times >= 100))


# ---------------------------------------------------------------- hitting times


class TestHitting:
    def test_start_is_target(self, env_q03):
        assert hitting_time(env_q03, 5, 5, cap=10, seed=0) == 0

    def test_two_sided_one_step(self):
        env = Environment(EnvDistribution.constant(0.7), 0)
        for r in range(100):
            assert hitting_time(env, 1, {0, 2}, cap=10, seed=1, run_id=r) == 1

    def test_cap(self):
        env = Environment(EnvDistribution.constant(0.7), 0)
        assert hitting_time(env, 0, -50, cap=20, seed=0) is None
        assert hitting_time_after(env, 3, -50, cap=20, seed=0) is None

    def test_mean_against_linear_solve(self, valley_env):
        n = 1000
        ts = np.array([hitting_time(valley_env, 0, B, cap=10**7, seed=21, run_id=r) for r in range(n)], dtype=float)
        ref = mean_hitting_time_solve(valley_env, 0, B, left=-600)
        # the left boundary barely matters: V rises steeply to the left
        assert ref == pytest.approx(mean_hitting_time_solve(valley_env, 0, B, left=-900), rel=1e-9)
        se = ts.std(ddof=1) / math.sqrt(n)
        assert abs(ts.mean() - ref) <= 4 * se

    def test_after_composes(self):
        env = Environment(EnvDistribution.constant(0.7), 0)
        n = 2000
        ts = np.array([hitting_time_after(env, 3, 5, cap=10**5, seed=2, run_id=r) for r in range(n)], dtype=float)
        # two levels up at drift 0.4 per step
        assert abs(ts.mean() - 5.0) <= 4 * ts.std(ddof=1) / math.sqrt(n)
        assert np.all(ts % 2 == 0)


# ---------------------------------------------------------------- occupation


class TestOccupation:
    def test_step_zero(self, env_q03):
        assert occupation_probability(env_q03, 4, 4, 0, 10, seed=0) == (1.0, 0.0)

    def test_one_step(self, env_q03):
        p, se = occupation_probability(env_q03, 3, 4, 1, 20_000, seed=1)
        assert abs(p - env_q03.omega_at(3)) <= 4 * se

    def test_parity(self, env_q03):
        with pytest.raises(ParityMismatch):
            occupation_probability(env_q03, 0, 1, 2, 10, seed=0)


# ---------------------------------------------------------------- reflected chain


def balance_residual(renv, mu):
    w = renv.omega_hat()
    n = len(w)
    res = []
    for k in range(n):
        inflow = (w[k - 1] * mu[k - 1] if k > 0 else 0.0) + ((1 - w[k + 1]) * mu[k + 1] if k < n - 1 else 0.0)
        res.append(abs(inflow - mu[k]) / mu[k])
    return max(res)


class TestInvariantMeasure:
    def test_three_sites(self):
        env = Environment(EnvDistribution.constant(0.7), 0)
        renv = ReflectedEnv(env, 0, 2, bottom=0)
        inv = reflected_invariant_measure(renv)
        assert inv.mu_hat / inv.mu_hat[0] == pytest.approx([1, 10 / 3, 7 / 3], rel=1e-13)
        # balance at x = 1: 1 * 1 + (1 - 0) * 7/3
        assert 1 * inv.mu_hat[0] + 1 * inv.mu_hat[2] == pytest.approx(inv.mu_hat[1], rel=1e-13)
        assert inv.nu_hat == pytest.approx([0.3, 0.0, 0.7], abs=1e-14)

    def test_default_bottom_is_argmin(self, valley_env):
        renv = ReflectedEnv(valley_env, A, C)
        assert renv.bottom == B

    def test_degenerate(self, env_q03):
        with pytest.raises(DegenerateInterval):
            reflected_invariant_measure(ReflectedEnv(env_q03, 0, 1))
        with pytest.raises(DegenerateInterval):
            ReflectedEnv(env_q03, 3, 3)

    def test_overrides_only_at_ends(self, valley_env):
        renv = ReflectedEnv(valley_env, A, C)
        w = renv.omega_hat()
        assert w[0] == 1.0 and w[-1] == 0.0
        assert np.array_equal(w[1:-1], valley_env.omega(A + 1, C))

    @given(st.integers(0, 10**6), st.integers(-500, 500), st.integers(2, 80))
    def test_balance_and_normalization(self, seed, a, length):
        env = Environment(EnvDistribution.two_point(0.25, 0.75, 0.3), seed)
        renv = ReflectedEnv(env, a, a + length)
        inv = reflected_invariant_measure(renv)
        assert balance_residual(renv, inv.mu_hat) < 1e-12
        same = (inv.sites - inv.bottom) % 2 == 0
        assert math.fsum(inv.nu_hat) == pytest.approx(1.0, abs=1e-14)
        assert np.all(inv.nu_hat[~same] == 0) and np.all(inv.nu_hat[same] > 0)

    def test_sample_nu(self, valley_env):
        inv = reflected_invariant_measure(ReflectedEnv(valley_env, A, C))
        x = sample_nu(inv, 1000, np.random.default_rng(0))
        assert np.all((x - B) % 2 == 0) and x.min() >= A and x.max() <= C


# ---------------------------------------------------------------- coupling


class TestCoupling:
    def test_start_at_bottom_meets_immediately(self, valley_env):
        r = couple(valley_env, ReflectedEnv(valley_env, A, C), 200, seed=1, s_hat_start=B)
        assert r.tau_meet == 0
        assert not _brute.check_pair(r.s_path, r.s_hat_path, r.tau_meet, r.tau_exit, A, C)

    def test_contract_on_recorded_paths(self, valley_env):
        bt = couple_batch(valley_env, A, B, C, 2 * N, 300, seed=5, record_paths=True)
        met = 0
        for j in range(300):
            tm = int(bt.tau_meet[j])
            te = int(bt.tau_exit[j])
            s, h = bt.s_paths[:, j], bt.s_hat_paths[:, j]
            assert not _brute.check_pair(s, h, tm if tm >= 0 else None, te if te >= 0 else None, A, C)
            met += tm >= 0
        assert met > 250

    def test_checker_detects_corruption(self):
        s = np.array([0, 1, 2, 3, 2])
        h = np.array([2, 1, 0, 1, 2])
        assert "crossing" not in _brute.check_pair(s, h, 1, None, -5, 5)
        assert "glue" in _brute.check_pair(s, h, 1, None, -5, 5)
        h2 = np.array([2, 3, 0, -1, 0])
        assert "crossing" in _brute.check_pair(s, h2, None, None, -5, 5)
        assert "parity" in _brute.check_pair(s, h2 + 1, None, None, -5, 5)
        assert "confinement" in _brute.check_pair(s, h2, None, None, 0, 5)

    def test_s_marginal_untouched(self, valley_env):
        for run_id in range(5):
            on = couple(valley_env, ReflectedEnv(valley_env, A, C), 1000, seed=8, run_id=run_id, coupled=True)
            off = couple(valley_env, ReflectedEnv(valley_env, A, C), 1000, seed=8, run_id=run_id, coupled=False)
            alone = s_marginal_path(valley_env, B, 1000, seed=8, run_id=run_id)
            assert np.array_equal(on.s_path, off.s_path)
            assert np.array_equal(on.s_path, alone)
        on = couple_batch(valley_env, A, B, C, 500, 64, seed=3, record_paths=True)
        off = couple_batch(valley_env, A, B, C, 500, 64, seed=3, coupled=False, record_paths=True)
        assert np.array_equal(on.s_paths, off.s_paths)
        assert np.all(off.tau_meet == -1)

    def test_s_hat_stationary(self, valley_env):
        inv = reflected_invariant_measure(ReflectedEnv(valley_env, A, C))
        k = 2 * (N // 2)
        bt = couple_batch(valley_env, A, B, C, k, 1000, seed=13, checkpoints=[k])
        counts = np.array([np.sum(bt.s_hat_at[0] == x) for x in inv.sites])
        _, p = _brute.chi_square(counts, inv.nu_hat)
        assert p > 0.01

    def test_parity_of_start(self, valley_env):
        with pytest.raises(ParityMismatch):
            couple_batch(valley_env, A, B, C, 10, 4, seed=0, s_hat_start=B + 1)
