"""High-throughput Metropolis simulation with hitting-time instrumentation.

Single-flip proposals accepted with probability exp(-beta [dH]_+), evaluated
from an integer local-field cache k_l = sum_i J_{i l} s_i that is updated in
O(N) per accepted flip.  Trajectories consume pre-drawn blocks of site picks
and uniforms from per-trajectory generators keyed by
(master seed, tag, replica, trajectory), so results are bit-identical across
thread counts and platforms.

Hitting times follow the first-positive-time convention: the level test runs
after every attempted step, holds included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import HIT, metropolis_block
from .model import Disorder, ModelParams, SpinConfig, local_fields
from .rng import TAG_DYNAMICS, TAG_START, stream

BLOCK = 1 << 14


class AllTimedOut(RuntimeError):
    """Every trajectory hit the step cap before the target level."""


class LocalFieldState:
    """Spins plus cached integer local fields, kept consistent across flips."""

    __slots__ = ("spins", "fields", "spin_sum")

    def __init__(self, sigma: SpinConfig, J: Disorder):
        self.spins = sigma.spins.copy()
        self.fields = local_fields(sigma, J).astype(np.int64)
        self.spin_sum = sigma.spin_sum

    def config(self) -> SpinConfig:
        return SpinConfig(self.spins.copy())

    def consistent_with(self, J: Disorder) -> bool:
        """Recompute the cache from scratch; exact integer comparison."""
        fresh = local_fields(SpinConfig(self.spins.copy()), J)
        return bool(
            np.array_equal(fresh, self.fields)
            and self.spin_sum == int(self.spins.sum())
        )


def mc_step(state: LocalFieldState, J: Disorder, params: ModelParams,
            rng: np.random.Generator) -> bool:
    """One attempted flip; returns True if accepted.  Python reference path."""
    N = params.N
    site = int(rng.integers(N))
    u = float(rng.random())
    s_l = int(state.spins[site])
    dh = s_l * (2.0 * state.fields[site] / (N * params.p) + 2.0 * params.h)
    if dh <= 0.0 or u < np.exp(-params.beta * dh):
        state.spins[site] = -s_l
        state.spin_sum -= 2 * s_l
        row = J.row_bits()[site]
        j = np.arange(N)
        has = ((row[j >> 6] >> (j & 63).astype(np.uint64)) & np.uint64(1)).astype(bool)
        state.fields[has] -= 2 * s_l
        return True
    return False


def run_to_level(state: LocalFieldState, J: Disorder, params: ModelParams,
                 target_level: float, step_cap: int,
                 rng: np.random.Generator) -> tuple[bool, int]:
    """Advance until the magnetization level is hit or the cap is reached.

    Returns (hit, steps).  Mutates ``state``.
    """
    N = params.N
    target_ssum = int(round((target_level + 1.0) * N)) - N
    if abs((target_level + 1.0) * N / 2.0 - round((target_level + 1.0) * N / 2.0)) > 1e-9:
        raise ValueError(f"target level {target_level} not on the grid")
    rows = J.row_bits()
    inv_np = 1.0 / (N * params.p)
    done = 0
    ssum = state.spin_sum
    while done < step_cap:
        n_prop = int(min(BLOCK, step_cap - done))
        sites = rng.integers(0, N, size=n_prop).astype(np.int64)
        us = rng.random(n_prop)
        status, used, ssum = metropolis_block(
            state.spins, state.fields, ssum, rows, inv_np, params.h, params.beta,
            sites, us, target_ssum,
        )
        done += used
        if status == HIT:
            state.spin_sum = int(ssum)
            return True, done
    state.spin_sum = int(ssum)
    return False, done


def level_occupancy(state: LocalFieldState, J: Disorder, params: ModelParams,
                    steps: int, rng: np.random.Generator) -> np.ndarray:
    """Visit counts per magnetization level over ``steps`` attempted flips."""
    from ._kernels import occupancy_block

    N = params.N
    rows = J.row_bits()
    inv_np = 1.0 / (N * params.p)
    counts = np.zeros(N + 1, dtype=np.int64)
    done = 0
    ssum = state.spin_sum
    while done < steps:
        n_prop = int(min(BLOCK, steps - done))
        sites = rng.integers(0, N, size=n_prop).astype(np.int64)
        us = rng.random(n_prop)
        ssum = occupancy_block(state.spins, state.fields, ssum, rows, inv_np,
                               params.h, params.beta, sites, us, counts)
        done += n_prop
    state.spin_sum = int(ssum)
    return counts


def sample_on_level(m: float, N: int, rng: np.random.Generator) -> SpinConfig:
    """Uniform configuration on the level set {m(sigma) = m}."""
    k = (m + 1.0) * N / 2.0
    ki = int(round(k))
    if abs(k - ki) > 1e-9 * max(1, N) or not 0 <= ki <= N:
        raise ValueError(f"m={m} is not on the N={N} grid")
    spins = -np.ones(N, dtype=np.int8)
    if ki:
        spins[rng.choice(N, size=ki, replace=False)] = 1
    return SpinConfig(spins)


@dataclass
class HittingEstimate:
    """Trajectory-averaged hitting time with normal-approximation error bar.

    Timed-out runs are counted separately and never folded into the mean.
    """

    mean: float
    ci95: float
    n_completed: int
    timeouts: int
    times: np.ndarray


def estimate_hitting(params: ModelParams, J: Disorder, start_level: float,
                     target_level: float, trajectories: int, step_cap: int,
                     master_seed: int, replica: int = 0,
                     start_sampler: str = "uniform",
                     exact_start: tuple[np.ndarray, np.ndarray] | None = None,
                     ) -> HittingEstimate:
    """Independent hitting-time trajectories from a level-set starting law.

    start_sampler="uniform" draws uniformly on the start level (exactly the
    last-exit law at p=1 by symmetry); "exact" draws from a supplied
    distribution ``exact_start = (state_indices, probabilities)`` over that
    level, as produced by the enumerated solver at small N.
    """
    if trajectories < 10:
        raise ValueError("need at least 10 trajectories")
    N = params.N
    times = np.empty(trajectories)
    hits = np.zeros(trajectories, dtype=bool)
    for t in range(trajectories):
        rng_t = stream(master_seed, TAG_DYNAMICS, replica, t)
        if start_sampler == "uniform":
            sigma = sample_on_level(start_level, N, rng_t)
        elif start_sampler == "exact":
            if exact_start is None:
                raise ValueError("exact sampler needs (states, probabilities)")
            states, probs = exact_start
            rng_s = stream(master_seed, TAG_START, replica, t)
            idx = int(rng_s.choice(states.size, p=probs))
            sigma = SpinConfig.from_index(int(states[idx]), N)
        else:
            raise ValueError(f"unknown start sampler {start_sampler!r}")
        state = LocalFieldState(sigma, J)
        hit, steps = run_to_level(state, J, params, target_level, step_cap, rng_t)
        hits[t] = hit
        times[t] = steps
    completed = times[hits]
    if completed.size == 0:
        raise AllTimedOut(f"all {trajectories} trajectories hit the cap {step_cap}")
    mean = float(completed.mean())
    ci95 = float(1.96 * completed.std(ddof=1) / np.sqrt(completed.size)) if completed.size > 1 else np.inf
    return HittingEstimate(
        mean=mean,
        ci95=ci95,
        n_completed=int(completed.size),
        timeouts=int(trajectories - hits.sum()),
        times=times,
    )


def default_step_cap(params: ModelParams) -> int | None:
    """50 N times the sharp mean-hitting prediction, when the double well exists."""
    from .landscape import FewerThanThreeRoots, critical_points
    from .lumped import log_mean_hitting_sharp

    try:
        ls = critical_points(params.beta, params.h)
    except FewerThanThreeRoots:
        return None
    log_tau = log_mean_hitting_sharp(ls, params.N)
    cap = 50.0 * params.N * np.exp(log_tau)
    return int(min(cap, 2**62))
