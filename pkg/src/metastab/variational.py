"""Two-sided capacity bounds and related diagnostics.

Upper bounds come from the Dirichlet principle evaluated on test functions of
the magnetization; lower bounds from the Thomson principle evaluated on an
explicit unit flow whose edge values depend only on the two levels it joins:

    phi(m -> m + 2/N) =  [ (1-m)N/2 * binom(N, (1+m)N/2) ]^{-1}
    phi(m -> m - 2/N) = -[ (1+m)N/2 * binom(N, (1+m)N/2) ]^{-1}

supported between the two target levels.  Antisymmetry is the binomial
recurrence k binom(N,k) = (N-k+1) binom(N,k-1); per-configuration divergence
vanishes because every state at level k has exactly N-k up-moves and k
down-moves; total flux out of the source level is one by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln, logsumexp

from .exact import FullChain
from .landscape import Landscape, WellDecomposition, free_energy_value
from .lumped import build_chain
from .model import Disorder, ModelParams, SpinConfig


@dataclass(frozen=True)
class LevelFlow:
    """Antisymmetric level flow; log magnitudes of the up-edge values.

    ``log_phi_up[k]`` is log phi(m_k -> m_k + 2/N) for k in [k1, k2), -inf
    elsewhere.  Down-edge values follow by antisymmetry.  ``log_scale`` rescales
    the whole flow (nonzero breaks unitarity; used to reject invalid flows).
    """

    N: int
    k1: int
    k2: int
    log_phi_up: np.ndarray
    log_scale: float = 0.0

    def scaled(self, factor: float) -> "LevelFlow":
        return replace(self, log_scale=self.log_scale + float(np.log(factor)))


@dataclass
class FlowReport:
    antisymmetry_err: float
    divergence_err: float
    flux_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.antisymmetry_err, self.divergence_err, self.flux_err) <= self.tol


def _log_binom(N: int, k) -> np.ndarray:
    k = np.asarray(k)
    return gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)


def unit_flow(N: int, m1: float, m2: float) -> LevelFlow:
    """The explicit unit flow from level m1 up to level m2 (m1 < m2)."""
    k1 = int(round((m1 + 1) * N / 2))
    k2 = int(round((m2 + 1) * N / 2))
    if not (0 <= k1 < k2 <= N):
        raise ValueError("need m1 < m2 on the grid")
    log_phi = np.full(N + 1, -np.inf)
    ks = np.arange(k1, k2)
    # (1-m)N/2 = N - k up-moves per state at level k
    log_phi[ks] = -(np.log(N - ks) + _log_binom(N, ks))
    return LevelFlow(N=N, k1=k1, k2=k2, log_phi_up=log_phi)


def validate_flow(flow: LevelFlow, tol: float = 1e-12) -> FlowReport:
    """Check antisymmetry, zero interior divergence and unit flux, in log space."""
    N, k1, k2 = flow.N, flow.k1, flow.k2
    ks = np.arange(k1 + 1, k2 + 1)  # levels carrying a down-edge
    # antisymmetry: k binom(N,k) = (N-k+1) binom(N,k-1), i.e. the down-edge
    # magnitude at level k equals the up-edge magnitude at level k-1
    lhs = np.log(ks) + _log_binom(N, ks)
    rhs = np.log(N - ks + 1) + _log_binom(N, ks - 1)
    anti = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs)))) if ks.size else 0.0

    # interior divergence at level k in (k1, k2): (N-k) phi_up(k) - k phi_down(k)
    kin = np.arange(k1 + 1, k2)
    if kin.size:
        log_out_up = np.log(N - kin) + flow.log_phi_up[kin]
        log_out_dn = np.log(kin) + (-(np.log(kin) + _log_binom(N, kin)))
        div = float(np.max(np.abs(log_out_up - log_out_dn)))
    else:
        div = 0.0

    # unit flux out of level k1: binom(N,k1) * (N-k1) * phi_up(k1) = 1
    log_flux = _log_binom(N, k1) + np.log(N - k1) + flow.log_phi_up[k1] + flow.log_scale
    flux = float(np.abs(log_flux))

    return FlowReport(antisymmetry_err=anti, divergence_err=div, flux_err=flux, tol=tol)


def divergence_full(flow: LevelFlow, solve: FullChain) -> np.ndarray:
    """Net outflow at every configuration strictly between the two levels.

    Full-resolution check of the interior conservation law: iterates actual
    configurations rather than levels.
    """
    sel = (solve.levels > flow.k1) & (solve.levels < flow.k2)
    ks = solve.levels[sel].astype(np.int64)
    up = (solve.N - ks) * np.exp(flow.log_phi_up[ks] + flow.log_scale)
    down = ks * np.exp(-(np.log(ks) + _log_binom(solve.N, ks)) + flow.log_scale)
    return up - down


# -- Dirichlet upper bound ---------------------------------------------------


def dirichlet_upper(solve: FullChain, v: np.ndarray, m1: float, m2: float) -> float:
    """log upper bound on cap(level m1, level m2) from a magnetization test function.

    v is a vector on the grid with v[k1] = 1, v[k2] = 0, values in [0, 1]; the
    full-configuration Dirichlet form of f(s) = v(m(s)) upper-bounds the
    capacity for every admissible v.
    """
    k1, k2 = solve.level_index(m1), solve.level_index(m2)
    v = np.asarray(v, dtype=float)
    if v.shape != (solve.N + 1,):
        raise ValueError("v must have one value per grid level")
    if abs(v[k1] - 1.0) > 1e-12 or abs(v[k2]) > 1e-12:
        raise ValueError("test function must satisfy v(m1)=1, v(m2)=0")
    if (v < -1e-12).any() or (v > 1 + 1e-12).any():
        raise ValueError("test function must take values in [0, 1]")
    f = v[solve.levels]
    d = solve.dirichlet_form(f)
    return float(np.log(d))


# -- Thomson lower bound -----------------------------------------------------


def thomson_lower(solve: FullChain, flow: LevelFlow, validate: bool = True) -> float:
    """log lower bound on the capacity: 1/D(Psi) for the unit level flow.

    D(Psi) = (1/2) sum over ordered neighbour pairs of Psi^2 / (mu p), computed
    in log space over the up-edges (each unordered edge counted once; the two
    orientations contribute equally by reversibility).
    """
    if validate:
        rep = validate_flow(flow)
        if not rep.ok:
            raise ValueError(f"flow failed validation: {rep}")
    beta = solve.params.beta
    dH = solve.flip_dH()
    idx = np.arange(solve.n_states, dtype=np.int64)
    log_mu_hat = solve.log_mu - solve.log_Z
    parts = []
    for l in range(solve.N):
        up = (idx & (1 << l)) == 0  # spin l is -1: flipping raises the level
        ks = solve.levels[up].astype(np.int64)
        active = (ks >= flow.k1) & (ks < flow.k2)
        if not active.any():
            continue
        s_idx = idx[up][active]
        ks = ks[active]
        log_p = -np.log(solve.N) - beta * np.maximum(dH[up, l][active], 0.0)
        log_term = (
            2.0 * (flow.log_phi_up[ks] + flow.log_scale) - log_mu_hat[s_idx] - log_p
        )
        parts.append(logsumexp(log_term))
    log_D = float(logsumexp(np.array(parts)))
    return -log_D


# -- per-configuration transition-ratio bound ---------------------------------


def transition_ratio_bound(
    J: Disorder, params: ModelParams, sigma: SpinConfig, m_prime: float
) -> tuple[float, float, bool]:
    """Check sum over neighbours at level m' of
    exp(-beta [dH_mf]_+) / exp(-beta [dH]_+)
    against e^{2 beta (1+h)} times the neighbour count in that direction.

    Returns (lhs, rhs, lhs <= rhs).
    """
    N, beta, h = params.N, params.beta, params.h
    m = sigma.magnetization()
    k_prime = (m_prime + 1.0) * N / 2.0
    kp = int(round(k_prime))
    if abs(k_prime - kp) > 1e-9 * max(1, N) or not 0 <= kp <= N:
        raise ValueError(f"m'={m_prime} not on the grid")
    k = (sigma.spin_sum + N) // 2
    n_up = N - k
    n_down = k
    if kp == k + 1:
        rhs = n_up * np.exp(2 * beta * (1 + h))
        target_sign = -1
    elif kp == k - 1:
        rhs = n_down * np.exp(2 * beta * (1 + h))
        target_sign = +1
    else:
        return 0.0, 0.0, True  # no neighbours at that level

    from .model import flip_increment

    lhs = 0.0
    for site in range(N):
        if int(sigma.spins[site]) != target_sign:
            continue
        dh, dh_mf = flip_increment(sigma, J, params, site)
        lhs += np.exp(-beta * max(dh_mf, 0.0) + beta * max(dh, 0.0))
    return float(lhs), float(rhs), bool(lhs <= rhs)


# -- super-harmonicity diagnostic ---------------------------------------------


@dataclass
class SuperharmonicReport:
    """Signs and margins of the generator applied to exp(beta N (1-gamma) f(m)).

    ``values`` are the per-point diagnostics (lumped mode: the two-term bracket
    combining up/down moves; full mode: L psi / psi per configuration in the
    band); negative everywhere is the asymptotically expected pattern.
    Violations at small N are admissible and simply listed.
    """

    mode: str
    band: np.ndarray
    values: np.ndarray
    max_value: float
    n_violations: int


def superharmonic_lumped(
    landscape: Landscape, well: WellDecomposition, N: int, gamma: float
) -> SuperharmonicReport:
    """Evaluate the up/down bracket at every band level [m_delta, m_eps).

    G(m) = (e^{2 beta (1-gamma) g(m)} - 1)
           + (r_-/r_+) (e^{-2 beta (1-gamma) g(m - 2/N)} - 1)

    with g(m) = (N/2)[f(m + 2/N) - f(m)] and r_+- the one-step level rates.
    Super-harmonicity of the profile needs G < 0.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must be in (0, 1)")
    beta, h = landscape.beta, landscape.h
    chain = build_chain(N, beta, h)
    grid = chain.grid
    band = (grid >= well.m_delta - 1e-12) & (grid < well.m_eps - 1e-12)
    ks = np.nonzero(band)[0]
    if ks.size == 0:
        raise ValueError("band [m_delta, m_eps) contains no grid point")

    def g(m):
        return N / 2.0 * (
            free_energy_value(m + 2.0 / N, beta, h) - free_energy_value(m, beta, h)
        )

    vals = np.empty(ks.size)
    for i, k in enumerate(ks):
        m = grid[k]
        r_plus = chain.r_up[k]
        r_minus = chain.r_down[k]
        vals[i] = (np.exp(2 * beta * (1 - gamma) * g(m)) - 1.0) + (r_minus / r_plus) * (
            np.exp(-2 * beta * (1 - gamma) * g(m - 2.0 / N)) - 1.0
        )
    return SuperharmonicReport(
        mode="lumped",
        band=grid[ks],
        values=vals,
        max_value=float(vals.max()),
        n_violations=int((vals >= 0).sum()),
    )


def superharmonic_full(
    solve: FullChain, landscape: Landscape,
    well: WellDecomposition | tuple[float, float], gamma: float
) -> SuperharmonicReport:
    """L psi / psi at every configuration in the band, via the exact generator.

    ``well`` may be a grid-adapted decomposition or an explicit (m_lo, m_hi)
    band: at small N the level-set construction often has no interior grid
    point, while the generator diagnostic is still meaningful on any band
    inside (m_star, m_plus).
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must be in (0, 1)")
    N = solve.N
    beta, h = landscape.beta, landscape.h
    m_lo, m_hi = well if isinstance(well, tuple) else (well.m_delta, well.m_eps)
    grid = 2.0 * np.arange(N + 1) / N - 1.0
    phi = np.exp(beta * N * (1 - gamma) * free_energy_value(grid, beta, h, N=None))
    band_levels = (grid >= m_lo - 1e-12) & (grid < m_hi - 1e-12)
    sel = band_levels[solve.levels]
    idx = np.nonzero(sel)[0]
    if idx.size == 0:
        raise ValueError("band contains no configuration")
    nbr = solve._neighbor_index()[idx]
    R = solve.rates()[idx]
    psi = phi[solve.levels]
    lpsi_over_psi = (R * (psi[nbr] - psi[idx][:, None])).sum(axis=1) / psi[idx]
    return SuperharmonicReport(
        mode="full",
        band=grid[solve.levels[idx]],
        values=lpsi_over_psi,
        max_value=float(lpsi_over_psi.max()),
        n_violations=int((lpsi_over_psi >= 0).sum()),
    )
