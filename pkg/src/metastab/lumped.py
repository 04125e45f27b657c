"""Exact 1-D magnetization chain of the mean-field model.

Projecting the single-flip dynamics of the p=1 model onto the magnetization
gives a birth-death chain on the grid with transition probabilities

    r_up(m)   = exp(-beta N [E(m + 2/N) - E(m)]_+) (1 - m)/2
    r_down(m) = exp(-beta N [E(m - 2/N) - E(m)]_+) (1 + m)/2

and unnormalised level weights w(m) = binom(N, (1+m)N/2) exp(-beta N E(m)).
Everything (weights, capacities, hitting times) is handled in log space:
the weights span e^{+-O(N)}.

Hitting times are discrete-time step counts; one step of this chain is one
attempted spin flip of the underlying N-spin chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gammaln, logsumexp

from .landscape import Landscape, gamma_grid


@dataclass(frozen=True)
class MagnetizationChain:
    """Grid, log level weights, transition probabilities and log partition sum."""

    N: int
    beta: float
    h: float
    grid: np.ndarray
    log_w: np.ndarray
    r_up: np.ndarray
    r_down: np.ndarray
    log_Ztilde: float

    def index_of(self, m: float) -> int:
        k = (m + 1.0) * self.N / 2.0
        ki = int(round(k))
        if not 0 <= ki <= self.N or abs(k - ki) > 1e-9 * max(1, self.N):
            raise ValueError(f"m={m} is not on the N={self.N} grid")
        return ki

    @property
    def log_Q(self) -> np.ndarray:
        """Normalised log level measure."""
        return self.log_w - self.log_Ztilde


def build_chain(N: int, beta: float, h: float) -> MagnetizationChain:
    if N < 2:
        raise ValueError("N must be >= 2")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    grid = gamma_grid(N).points
    k = np.arange(N + 1)
    E = -0.5 * grid * grid - h * grid
    log_binom = gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)
    log_w = log_binom - beta * N * E

    dE_up = np.empty(N + 1)
    dE_up[:-1] = N * (E[1:] - E[:-1])
    dE_up[-1] = 0.0
    dE_dn = np.empty(N + 1)
    dE_dn[1:] = N * (E[:-1] - E[1:])
    dE_dn[0] = 0.0

    r_up = np.exp(-beta * np.maximum(dE_up, 0.0)) * (1.0 - grid) / 2.0
    r_down = np.exp(-beta * np.maximum(dE_dn, 0.0)) * (1.0 + grid) / 2.0
    r_up[-1] = 0.0
    r_down[0] = 0.0

    return MagnetizationChain(
        N=N,
        beta=beta,
        h=h,
        grid=grid,
        log_w=log_w,
        r_up=r_up,
        r_down=r_down,
        log_Ztilde=float(logsumexp(log_w)),
    )


# -- capacity ----------------------------------------------------------------


def log_capacity(chain: MagnetizationChain, m1: float, m2: float) -> tuple[float, float]:
    """(log cap, log Z~*cap) between two grid levels.

    cap = [ sum_{m=a}^{b - 2/N} 1/(Q(m) r_up(m)) ]^{-1} with Q the normalised
    level measure; arguments are symmetric (reversibility).
    """
    i, j = chain.index_of(m1), chain.index_of(m2)
    if i == j:
        raise ValueError("m1 and m2 must differ")
    a, b = min(i, j), max(i, j)
    log_terms = -(chain.log_w[a:b]) - np.log(chain.r_up[a:b])
    log_zcap = -logsumexp(log_terms)
    return log_zcap - chain.log_Ztilde, log_zcap


def capacity(chain: MagnetizationChain, m1: float, m2: float) -> float:
    return float(np.exp(log_capacity(chain, m1, m2)[0]))


def log_capacity_sharp(landscape: Landscape, N: int, chain: MagnetizationChain | None = None
                       ) -> tuple[float, float]:
    """(log cap, log Z~*cap) from the saddle-point formula for the metastable pair:

    Z~ cap = exp(-beta N f(m*)) sqrt(beta (-f''(m*))) / (pi N) sqrt((1+m*)/(1-m*)).
    """
    beta = landscape.beta
    ms = landscape.m_star
    log_zcap = (
        -beta * N * landscape.f_at(ms)
        + 0.5 * np.log(beta * (-landscape.fpp_star))
        - np.log(np.pi * N)
        + 0.5 * np.log((1.0 + ms) / (1.0 - ms))
    )
    if chain is None:
        chain = build_chain(N, beta, landscape.h)
    return float(log_zcap - chain.log_Ztilde), float(log_zcap)


# -- mean hitting times --------------------------------------------------------


def log_mean_hitting(chain: MagnetizationChain, a: float, b: float) -> float:
    """log E_a[tau_b] for a < b, reflecting at -1, absorbing at b:

    E_a[tau_b] = sum_{x=a}^{b-2/N} (1/(w(x) r_up(x))) sum_{y<=x} w(y).
    """
    i, j = chain.index_of(a), chain.index_of(b)
    if i >= j:
        raise ValueError("need a < b on the grid")
    prefix = np.logaddexp.accumulate(chain.log_w)
    log_terms = -chain.log_w[i:j] - np.log(chain.r_up[i:j]) + prefix[i:j]
    return float(logsumexp(log_terms))


def mean_hitting_by_solve(chain: MagnetizationChain, a: float, b: float,
                          dps: int | None = None) -> float:
    """E_a[tau_b] from the tridiagonal linear system (independent cross-check).

    Unknowns tau(x) for x < b satisfy
    r_up(x)(tau(x) - tau(x+)) + r_down(x)(tau(x) - tau(x-)) = 1.

    The float64 banded solve is accurate while the barrier is moderate; the
    system's condition number grows like the mean hitting time itself, so for
    large N pass ``dps`` to run a Thomas elimination in ``dps``-digit
    arithmetic instead.
    """
    i, j = chain.index_of(a), chain.index_of(b)
    if i >= j:
        raise ValueError("need a < b on the grid")
    n = j  # unknowns are grid indices 0..j-1
    ru = chain.r_up[:n]
    rd = chain.r_down[:n]
    if dps is None:
        ab = np.zeros((3, n))
        ab[0, 1:] = -ru[:-1]  # superdiagonal
        ab[1, :] = ru + rd  # diagonal
        ab[2, :-1] = -rd[1:]  # subdiagonal
        tau = solve_banded((1, 1), ab, np.ones(n))
        return float(tau[i])

    import mpmath as mp

    with mp.workdps(dps):
        alpha = [mp.mpf(0)] * n
        U = [mp.mpf(0)] * n
        a_prev, u_prev = mp.mpf(0), mp.mpf(0)
        for x in range(n):
            rux, rdx = mp.mpf(ru[x]), mp.mpf(rd[x])
            D = rux + rdx * (1 - u_prev)
            a_prev = (1 + rdx * a_prev) / D
            u_prev = rux / D
            alpha[x], U[x] = a_prev, u_prev
        tau = mp.mpf(0)
        for x in range(n - 1, i - 1, -1):
            tau = alpha[x] + U[x] * tau
        return float(tau)


def log_mean_hitting_sharp(landscape: Landscape, N: int) -> float:
    """log of the sharp large-N formula for E_{m_-(N)}[tau_{m_+(N)}]:

    exp(beta N [f(m*) - f(m_-)]) * (pi/(1+m*)) sqrt((1-m*^2)/(1-m_-^2))
        * N / (beta sqrt(f''(m_-) (-f''(m*)))).
    """
    beta = landscape.beta
    ms, mm = landscape.m_star, landscape.m_minus
    return float(
        beta * N * (landscape.f_at(ms) - landscape.f_at(mm))
        + np.log(np.pi / (1.0 + ms))
        + 0.5 * np.log((1.0 - ms * ms) / (1.0 - mm * mm))
        + np.log(N)
        - np.log(beta)
        - 0.5 * np.log(landscape.fpp_minus * (-landscape.fpp_star))
    )


# -- equilibrium potential ------------------------------------------------------


def equilibrium_potential(chain: MagnetizationChain, m1: float, m2: float) -> np.ndarray:
    """Harmonic profile v with v(m1) = 1, v(m2) = 0 for m1 < m2.

    v(m) = [sum_{y=m}^{m2-} 1/(w r_up)] / [sum_{y=m1}^{m2-} 1/(w r_up)] between
    the endpoints, constant outside.
    """
    i, j = chain.index_of(m1), chain.index_of(m2)
    if i >= j:
        raise ValueError("need m1 < m2 on the grid")
    log_terms = -chain.log_w[i:j] - np.log(chain.r_up[i:j])
    # suffix log-sums: log sum_{y>=x} exp(log_terms[y])
    suffix = np.logaddexp.accumulate(log_terms[::-1])[::-1]
    v = np.zeros(chain.N + 1)
    v[: i + 1] = 1.0
    v[i:j] = np.exp(suffix - suffix[0])
    v[j:] = 0.0
    return v


def log_dirichlet_form(chain: MagnetizationChain, v: np.ndarray) -> float:
    """log of sum over up-edges of Q(m) r_up(m) (v(m) - v(m+2/N))^2."""
    dv = v[1:] - v[:-1]
    sel = dv != 0.0
    if not sel.any():
        return -np.inf
    log_q = chain.log_Q[:-1][sel]
    log_r = np.log(chain.r_up[:-1][sel])
    return float(logsumexp(log_q + log_r + 2.0 * np.log(np.abs(dv[sel]))))
