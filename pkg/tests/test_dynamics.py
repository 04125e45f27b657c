import numpy as np
import pytest

from metastab.dynamics import (
    AllTimedOut,
    LocalFieldState,
    estimate_hitting,
    level_occupancy,
    mc_step,
    run_to_level,
    sample_on_level,
)
from metastab.exact import FullChain
from metastab.landscape import critical_points
from metastab.lumped import build_chain, log_mean_hitting
from metastab.model import Disorder, ModelParams, SpinConfig, sample_disorder
from metastab.rng import stream


class TestStep:
    def test_infinite_temperature_always_accepts(self):
        pars = ModelParams(N=16, beta=1e-300, h=0.0, p=0.5)
        J = sample_disorder(pars, seed=0)
        st = LocalFieldState(sample_on_level(0.0, 16, stream(1, 0)), J)
        rng = stream(2, 0)
        assert all(mc_step(st, J, pars, rng) for _ in range(200))

    def test_downhill_always_accepted(self):
        """Replay the same proposal stream and check dh <= 0 implies acceptance."""
        from metastab.model import flip_increment

        pars = ModelParams(N=12, beta=1.4, h=0.1, p=0.6)
        J = sample_disorder(pars, seed=3)
        st = LocalFieldState(sample_on_level(0.0, 12, stream(3, 0)), J)
        for i in range(300):
            probe = stream(4, i)
            site = int(probe.integers(12))
            dh, _ = flip_increment(st.config(), J, pars, site)
            accepted = mc_step(st, J, pars, stream(4, i))
            if dh <= 0:
                assert accepted

    def test_one_step_law_matches_rates(self):
        """Empirical transition frequencies out of a pinned state vs the exact law."""
        N = 10
        pars = ModelParams(N=N, beta=1.2, h=0.1, p=0.6)
        J = sample_disorder(pars, seed=11)
        fc = FullChain(J, pars)
        rng = stream(55, 0)
        s0 = int(rng.integers(0, 1 << N))
        R = fc.rates()[s0]
        hold = 1.0 - R.sum()
        trials = 100_000
        sites = rng.integers(0, N, size=trials)
        us = rng.random(trials)
        dH = fc.flip_dH()[s0]
        acc = us < np.exp(-pars.beta * np.maximum(dH[sites], 0.0))
        counts = np.bincount(sites[acc], minlength=N)
        probs = counts / trials
        for l in range(N):
            se = np.sqrt(max(R[l] * (1 - R[l]), 1e-8) / trials)
            assert abs(probs[l] - R[l]) < 4 * se
        se_h = np.sqrt(hold * (1 - hold) / trials)
        assert abs((1 - acc.mean()) - hold) < 4 * se_h
        # the kernel path realises the same law: single-proposal blocks
        hits = np.zeros(N, dtype=int)
        n_kernel = 20_000
        for t in range(n_kernel):
            st = LocalFieldState(SpinConfig.from_index(s0, N), J)
            if mc_step(st, J, pars, stream(66, t)):
                hits[int(np.nonzero(st.spins != SpinConfig.from_index(s0, N).spins)[0][0])] += 1
        for l in range(N):
            se = np.sqrt(max(R[l] * (1 - R[l]), 1e-8) / n_kernel)
            assert abs(hits[l] / n_kernel - R[l]) < 5 * se


class TestCache:
    def test_integrity_after_many_steps(self):
        pars = ModelParams(N=24, beta=1.2, h=0.05, p=0.6)
        J = sample_disorder(pars, seed=21)
        rng = stream(7, 0)
        st = LocalFieldState(sample_on_level(0.0, 24, rng), J)
        run_to_level(st, J, pars, 1.0, 1_000_000, rng)  # unreachable in practice
        assert st.consistent_with(J)


class TestOccupancy:
    def test_matches_exact_level_measure(self):
        """Long-run level frequencies vs the enumerated measure (batch-mean errors)."""
        N = 12
        pars = ModelParams(N=N, beta=1.0, h=0.1, p=0.5)
        J = sample_disorder(pars, seed=31)
        fc = FullChain(J, pars)
        Q = fc.meso_measure()
        rng = stream(8, 0)
        st = LocalFieldState(sample_on_level(0.0, N, rng), J)
        level_occupancy(st, J, pars, 200_000, rng)  # burn-in
        batches = np.array([
            level_occupancy(st, J, pars, 100_000, rng) / 100_000 for _ in range(20)
        ])
        freq = batches.mean(axis=0)
        se = batches.std(axis=0, ddof=1) / np.sqrt(len(batches))
        sel = Q > 1e-4
        assert np.all(np.abs(freq[sel] - Q[sel]) < 4 * np.maximum(se[sel], 1e-6))


class TestSampleOnLevel:
    def test_extremes(self):
        rng = stream(9, 0)
        assert np.all(sample_on_level(1.0, 8, rng).spins == 1)
        assert np.all(sample_on_level(-1.0, 8, rng).spins == -1)

    def test_off_grid_rejected(self):
        with pytest.raises(ValueError):
            sample_on_level(0.15, 10, stream(9, 1))

    def test_per_site_frequency(self):
        rng = stream(10, 0)
        N, draws = 20, 100_000
        counts = np.zeros(N)
        for _ in range(draws):
            counts += sample_on_level(0.0, N, rng).spins > 0
        se = np.sqrt(0.25 / draws)
        assert np.all(np.abs(counts / draws - 0.5) < 4 * se)


class TestEstimateHitting:
    def test_p1_matches_lumped(self):
        ls = critical_points(1.5, 0.1)
        mmN, _, mpN = ls.grid_points(12)
        pars = ModelParams(N=12, beta=1.5, h=0.1, p=1.0)
        est = estimate_hitting(pars, Disorder.complete(12), mmN, mpN,
                               trajectories=4000, step_cap=10**7, master_seed=77)
        tau = np.exp(log_mean_hitting(build_chain(12, 1.5, 0.1), mmN, mpN))
        assert abs(est.mean - tau) < 3 * est.ci95
        assert est.timeouts == 0

    def test_exact_start_matches_solver(self):
        ls = critical_points(1.5, 0.1)
        mmN, _, mpN = ls.grid_points(12)
        pars = ModelParams(N=12, beta=1.5, h=0.1, p=0.5)
        J = sample_disorder(pars, seed=5)
        fc = FullChain(J, pars)
        h = fc.harmonic(mmN, mpN)
        hit = fc.mean_hitting(mmN, mpN, h)
        nu = fc.last_exit_distribution(mmN, mpN, h)
        A = fc.level_states(fc.level_index(mmN))
        est = estimate_hitting(pars, J, mmN, mpN, trajectories=4000, step_cap=10**7,
                               master_seed=78, start_sampler="exact", exact_start=(A, nu))
        assert abs(est.mean - hit.tau_nu_direct) < 3 * est.ci95

    def test_start_on_target_level(self):
        # at m=0, h=0 every flip is downhill, so the chain always leaves the
        # level at the first step and the return time is short but > 1
        pars = ModelParams(N=10, beta=1.0, h=0.0, p=1.0)
        est = estimate_hitting(pars, Disorder.complete(10), 0.0, 0.0,
                               trajectories=500, step_cap=1000, master_seed=1)
        assert est.mean > 1.0
        assert est.mean < 50.0
        assert np.all(est.times >= 1)

    def test_timeouts_reported(self):
        # a one-level move with a one-step cap: completes only when the very
        # first proposal flips upward
        pars = ModelParams(N=12, beta=1.5, h=0.1, p=1.0)
        est = estimate_hitting(pars, Disorder.complete(12), 0.0, 2 / 12,
                               trajectories=200, step_cap=1, master_seed=2)
        assert est.timeouts > 0
        assert est.n_completed > 0
        assert est.n_completed + est.timeouts == 200
        ls = critical_points(1.5, 0.1)
        mmN, _, mpN = ls.grid_points(12)
        with pytest.raises(AllTimedOut):
            estimate_hitting(pars, Disorder.complete(12), mmN, mpN,
                             trajectories=10, step_cap=3, master_seed=3)

    def test_deterministic_replay(self):
        pars = ModelParams(N=12, beta=1.5, h=0.1, p=0.5)
        J = sample_disorder(pars, seed=4)
        a = estimate_hitting(pars, J, -0.5, 0.5, trajectories=100, step_cap=10**6,
                             master_seed=90)
        b = estimate_hitting(pars, J, -0.5, 0.5, trajectories=100, step_cap=10**6,
                             master_seed=90)
        assert np.array_equal(a.times, b.times)
