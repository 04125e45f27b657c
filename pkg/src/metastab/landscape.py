"""Mean-field free-energy landscape on the magnetization interval.

Provides the magnetization grid, the binomial entropy and its large-N
expansion, the free energy f(m) = E(m) + I(m)/beta with closed-form
derivatives, the three fixed points of m = tanh(beta (m + h)), the
level-set well decomposition around the two minima, and the path-counting
lower bound on monotone uphill crossings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import cw_energy_density


class FewerThanThreeRoots(ValueError):
    """m = tanh(beta(m+h)) has fewer than three solutions (h too large for beta)."""


class DeltaTooLarge(ValueError):
    """Requested level offset exceeds min(f(-1), f(m*)) - f(m_-)."""


class EpsTooLarge(ValueError):
    """Requested inner offset pushes m_eps out of the stable well."""


class GridTooCoarse(ValueError):
    """No grid point realises the requested level offset at this N."""


@dataclass(frozen=True)
class MagGrid:
    """The N+1 magnetization values {-1, -1+2/N, ..., 1}."""

    N: int
    points: np.ndarray

    def index_of(self, m: float) -> int:
        """Grid index of an on-grid magnetization (validates membership)."""
        k = (m + 1.0) * self.N / 2.0
        ki = int(round(k))
        if not 0 <= ki <= self.N or abs(k - ki) > 1e-9 * max(1, self.N):
            raise ValueError(f"m={m} is not on the N={self.N} grid")
        return ki


def gamma_grid(N: int) -> MagGrid:
    if N < 1:
        raise ValueError("N must be >= 1")
    pts = 2.0 * np.arange(N + 1) / N - 1.0
    pts.setflags(write=False)
    return MagGrid(N, pts)


def nearest_grid_point(m: float, grid: MagGrid) -> float:
    """Euclidean-nearest grid point; ties (distance exactly 1/N) break toward +1."""
    if not -1.0 <= m <= 1.0:
        raise ValueError(f"m={m} outside [-1, 1]")
    k = (m + 1.0) * grid.N / 2.0
    ki = int(np.floor(k + 0.5))  # half-integers round up, i.e. toward +1
    ki = min(max(ki, 0), grid.N)
    return float(grid.points[ki])


# -- entropy -----------------------------------------------------------------


def entropy_finite(N: int, m: float) -> float:
    """I_N(m) = -(1/N) log binom(N, (1+m)N/2); requires (1+m)N/2 integer."""
    k = (1.0 + m) * N / 2.0
    ki = int(round(k))
    if abs(k - ki) > 1e-9 * max(1, N) or not 0 <= ki <= N:
        raise ValueError(f"m={m} is not on the N={N} grid")
    return -(gammaln(N + 1) - gammaln(ki + 1) - gammaln(N - ki + 1)) / N


def entropy_limit(m) -> float | np.ndarray:
    """I(m) = ((1-m)/2) log((1-m)/2) + ((1+m)/2) log((1+m)/2), with 0 log 0 = 0."""
    m = np.asarray(m, dtype=float)
    a = (1.0 - m) / 2.0
    b = (1.0 + m) / 2.0
    out = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)
    out = out + np.where(b > 0, b * np.log(np.where(b > 0, b, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def stirling_residual(N: int, m: float) -> float:
    """I_N(m) - I(m) minus its stated 1/N expansion; defined for m in (-1, 1).

    The expansion is (1/2N) log((1-m^2)/4) + (log N + log 2 pi)/(2N); the
    residual is O(1/N^2).
    """
    if not -1.0 < m < 1.0:
        raise ValueError("residual defined only for m in (-1, 1)")
    lead = np.log((1.0 - m * m) / 4.0) / (2.0 * N) + (np.log(N) + np.log(2.0 * np.pi)) / (2.0 * N)
    return entropy_finite(N, m) - entropy_limit(m) - lead


def entropy_terms(N: int, m: float) -> tuple[float, float, float]:
    """(I_N, I, stirling_residual) at one grid point; residual is nan at m = +-1."""
    i_n = entropy_finite(N, m)
    i_inf = entropy_limit(m)
    resid = stirling_residual(N, m) if -1.0 < m < 1.0 else float("nan")
    return i_n, i_inf, resid


# -- free energy -------------------------------------------------------------


def free_energy_value(m, beta: float, h: float, N: int | None = None):
    """f(m): limit E(m) + I(m)/beta, or the finite-N version with I_N (grid m only).

    Valid on the closed interval [-1, 1].
    """
    if N is None:
        return _f_limit(m, beta, h)
    return cw_energy_density(m, h) + entropy_finite(N, m) / beta


def _f_limit(m, beta, h):
    m = np.asarray(m, dtype=float)
    val = -0.5 * m * m - h * m + entropy_limit(m) / beta
    return float(val) if val.ndim == 0 else val


def free_energy(m: float, beta: float, h: float, N: int | None = None) -> tuple[float, float, float]:
    """(f, f', f'') at m in (-1, 1).

    The value is the finite-N free energy when N is given (m on the grid),
    otherwise the limit.  The derivatives are always the closed forms of the
    limiting free energy:

        f'  = -m - h + artanh(m)/beta
        f'' = -1 + 1/(beta (1 - m^2))
    """
    if not -1.0 < m < 1.0:
        raise ValueError("derivatives require m strictly inside (-1, 1)")
    f = free_energy_value(m, beta, h, N)
    fp = -m - h + np.arctanh(m) / beta
    fpp = -1.0 + 1.0 / (beta * (1.0 - m * m))
    return float(f), float(fp), float(fpp)


# -- fixed points ------------------------------------------------------------


@dataclass(frozen=True)
class Landscape:
    """The two minima and the saddle of f, with curvature data.

    Labels satisfy m_minus < m_star < m_plus and f(m_plus) <= f(m_minus)
    (strict for h > 0): m_minus is the shallow (metastable) well.
    """

    beta: float
    h: float
    m_minus: float
    m_star: float
    m_plus: float
    fpp_minus: float
    fpp_star: float

    def f_at(self, m) -> float:
        """Limit free energy, valid on [-1, 1]."""
        return _f_limit(m, self.beta, self.h)

    def grid_points(self, N: int) -> tuple[float, float, float]:
        """Nearest grid projections (m_minus(N), m_star(N), m_plus(N))."""
        g = gamma_grid(N)
        return (
            nearest_grid_point(self.m_minus, g),
            nearest_grid_point(self.m_star, g),
            nearest_grid_point(self.m_plus, g),
        )

    @property
    def barrier(self) -> float:
        """f(m_star) - f(m_minus), the exponential cost of leaving the shallow well."""
        return self.f_at(self.m_star) - self.f_at(self.m_minus)


_SCAN_INTERVALS = 10_000
_ROOT_TOL = 1e-12


def critical_points(beta: float, h: float) -> Landscape:
    """Solve m = tanh(beta (m + h)) by bracketed bisection on a uniform scan.

    Requires beta > 1 and h >= 0 small enough that exactly three solutions
    exist; raises FewerThanThreeRoots otherwise.
    """
    if beta <= 1:
        raise FewerThanThreeRoots(f"beta={beta} <= 1: single fixed point only")
    if h < 0:
        raise ValueError("h must be >= 0")

    def g(m):
        return m - np.tanh(beta * (m + h))

    lo, hi = -1.0 + 1e-12, 1.0 - 1e-12
    xs = np.linspace(lo, hi, _SCAN_INTERVALS + 1)
    gs = g(xs)
    roots: list[float] = []
    for i in range(_SCAN_INTERVALS):
        a, b, ga, gb = xs[i], xs[i + 1], gs[i], gs[i + 1]
        if ga == 0.0:
            roots.append(float(a))
            continue
        if ga * gb < 0:
            for _ in range(200):
                c = 0.5 * (a + b)
                gc = g(c)
                if gc == 0.0:
                    a = b = c
                    break
                if (gc > 0) == (ga > 0):
                    a, ga = c, gc
                else:
                    b = c
                if b - a < 1e-15:
                    break
            roots.append(0.5 * (a + b))
    if gs[-1] == 0.0:
        roots.append(float(xs[-1]))
    # merge near-duplicates produced by exact zeros at scan nodes
    roots.sort()
    merged: list[float] = []
    for r in roots:
        if not merged or r - merged[-1] > 4.0 / _SCAN_INTERVALS:
            merged.append(r)
    if len(merged) != 3:
        raise FewerThanThreeRoots(
            f"found {len(merged)} fixed points at beta={beta}, h={h}; "
            "the double-well regime requires h > 0 small enough"
        )
    m_minus, m_star, m_plus = merged
    if max(abs(g(m)) for m in merged) > _ROOT_TOL:
        raise RuntimeError("bisection failed to reach residual tolerance")
    fpp = lambda m: -1.0 + 1.0 / (beta * (1.0 - m * m))
    return Landscape(
        beta=beta,
        h=h,
        m_minus=m_minus,
        m_star=m_star,
        m_plus=m_plus,
        fpp_minus=fpp(m_minus),
        fpp_star=fpp(m_star),
    )


# -- well decomposition ------------------------------------------------------


@dataclass(frozen=True)
class WellDecomposition:
    """Grid-adapted sub-level sets around the two wells.

    U_minus / U_plus are (lo, hi) inclusive grid-index ranges of the connected
    components of {m : f(m) <= f(m_minus) + delta_N} containing each minimum;
    m_delta is the left extreme of the stable-well component, m_eps the grid
    point at depth eps_N inside it, and theta_N = m_plus(N) - m_eps.
    """

    delta: float
    delta_N: float
    m_delta: float
    eps: float
    eps_N: float
    m_eps: float
    theta_N: float
    U_minus: tuple[int, int]
    U_plus: tuple[int, int]


def _component(mask: np.ndarray, k: int) -> tuple[int, int]:
    """Inclusive index range of the True-run of ``mask`` containing position k."""
    if not mask[k]:
        raise ValueError("anchor point not inside the level set")
    lo = k
    while lo > 0 and mask[lo - 1]:
        lo -= 1
    hi = k
    while hi < mask.size - 1 and mask[hi + 1]:
        hi += 1
    return lo, hi


def well_decomposition(
    landscape: Landscape, N: int, delta: float, eps: float
) -> WellDecomposition:
    """Level-set scan of f on the grid, then the grid-adapted delta_N and eps_N.

    delta_N is the largest admissible value f(m) - f(m_minus) over grid points
    of the stable-well component strictly left of m_plus; eps_N likewise for
    f(m) - f(m_plus) capped at eps.
    """
    beta, h = landscape.beta, landscape.h
    f_minus = landscape.f_at(landscape.m_minus)
    f_plus = landscape.f_at(landscape.m_plus)
    f_star = landscape.f_at(landscape.m_star)
    f_edge = landscape.f_at(-1.0)
    delta_max = min(f_edge, f_star) - f_minus
    if not 0 < delta < delta_max:
        raise DeltaTooLarge(
            f"delta={delta} not in (0, {delta_max}) = (0, min(f(-1), f(m*)) - f(m_-))"
        )
    if eps <= 0:
        raise ValueError("eps must be > 0")

    grid = gamma_grid(N)
    fvals = landscape.f_at(grid.points)
    k_minus = grid.index_of(nearest_grid_point(landscape.m_minus, grid))
    k_star = grid.index_of(nearest_grid_point(landscape.m_star, grid))
    k_plus = grid.index_of(nearest_grid_point(landscape.m_plus, grid))

    mask = fvals <= f_minus + delta
    lo_p, hi_p = _component(mask, k_plus)

    # delta_N: deepest admissible level over grid points of the stable
    # component strictly left of the stable minimum (continuum and grid)
    left = np.arange(lo_p, min(hi_p, k_plus - 1) + 1)
    left = left[grid.points[left] < landscape.m_plus]
    bars = fvals[left] - f_minus
    ok = (bars > 0) & (bars <= delta)
    if not ok.any():
        raise GridTooCoarse(
            f"no grid point realises a level in (0, {delta}] left of m_plus at N={N}"
        )
    i_best = left[ok][np.argmax(bars[ok])]
    delta_N = float(fvals[i_best] - f_minus)
    m_delta = float(grid.points[i_best])

    # recompute components at delta_N
    mask_N = fvals <= f_minus + delta_N
    lo_m, hi_m = _component(mask_N, k_minus)
    lo_p, hi_p = _component(mask_N, k_plus)
    if lo_m <= k_star <= hi_m or lo_p <= k_star <= hi_p:
        raise DeltaTooLarge("saddle grid point falls inside a well component")
    if lo_m == 0:
        raise DeltaTooLarge("m = -1 falls inside the shallow-well component")

    # eps_N over the stable component strictly left of m_plus
    if f_plus + eps >= f_minus + delta_N:
        raise EpsTooLarge(
            f"eps={eps} >= delta_N + f(m_-) - f(m_+) = {f_minus + delta_N - f_plus}; "
            "m_eps would leave the stable well"
        )
    inner = np.arange(lo_p, min(hi_p, k_plus - 1) + 1)
    inner = inner[grid.points[inner] < landscape.m_plus]
    depths = fvals[inner] - f_plus
    ok = (depths > 0) & (depths <= eps)
    if not ok.any():
        raise GridTooCoarse(
            f"no grid point realises a depth in (0, {eps}] left of m_plus at N={N}"
        )
    j_best = inner[ok][np.argmax(depths[ok])]
    eps_N = float(fvals[j_best] - f_plus)
    m_eps = float(grid.points[j_best])
    m_plus_N = float(grid.points[k_plus])

    return WellDecomposition(
        delta=delta,
        delta_N=delta_N,
        m_delta=m_delta,
        eps=eps,
        eps_N=eps_N,
        m_eps=m_eps,
        theta_N=m_plus_N - m_eps,
        U_minus=(lo_m, hi_m),
        U_plus=(lo_p, hi_p),
    )


# -- monotone crossing bound -------------------------------------------------


def crossing_rate(N: int, m_plus_N: float, x: float, beta: float, h: float) -> float:
    """Rate function for uphill crossings over a magnetization span x:

    (1/2) [ x (log 2 + beta |2 - 2h| + 1)
            - (1 - m_+ + x) log(1 - m_+ + x) + (1 - m_+) log(1 - m_+) ].
    """
    a = 1.0 - m_plus_N + x
    b = 1.0 - m_plus_N
    la = a * np.log(a) if a > 0 else 0.0
    lb = b * np.log(b) if b > 0 else 0.0
    return 0.5 * (x * (np.log(2.0) + beta * abs(2.0 - 2.0 * h) + 1.0) - la + lb)


@dataclass(frozen=True)
class CrossingBound:
    """Explicit lower bound on reaching the stable level before returning."""

    ell: float
    log_prob_lower: float

    @property
    def prob_lower(self) -> float:
        return float(np.exp(self.log_prob_lower))


def monotone_crossing_bound(
    N: int, m_plus_N: float, theta_N: float, beta: float, h: float
) -> CrossingBound:
    """Counting bound for strictly-increasing paths from level m_+ - theta to m_+.

    prob_lower = (C/N)^k * k! * binom(N(1 - m_+ + theta)/2, k) with
    k = N theta / 2 and C = exp(-beta |2 - 2h|), evaluated in log space.
    """
    if not 0 <= theta_N < 1 + m_plus_N:
        raise ValueError("theta_N must lie in [0, 1 + m_plus_N)")
    k = theta_N * N / 2.0
    ki = int(round(k))
    if abs(k - ki) > 1e-9 * max(1, N):
        raise ValueError(f"N*theta_N/2 = {k} is not an integer; use grid-derived theta_N")
    n_minus = (1.0 - m_plus_N + theta_N) * N / 2.0
    ni = int(round(n_minus))
    log_c = -beta * abs(2.0 - 2.0 * h)
    log_paths = gammaln(ki + 1) + gammaln(ni + 1) - gammaln(ki + 1) - gammaln(ni - ki + 1)
    log_prob = ki * (log_c - np.log(N)) + log_paths
    ell = crossing_rate(N, m_plus_N, theta_N, beta, h)
    return CrossingBound(ell=float(ell), log_prob_lower=float(log_prob))
