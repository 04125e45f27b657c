"""Exhaustive potential theory on the full 2^N configuration space.

Ground truth for everything else: Gibbs weights, harmonic functions,
capacities, last-exit biased starting distributions, mean hitting times and
the level-aggregated (mesoscopic) measure, all computed exactly for N up to
~16 spins.

State indexing: configuration <-> integer index, bit i set <-> spin i is +1.
Level k = number of +1 spins = (1 + m) N / 2.

Hitting times use the first-positive-time convention tau = inf{t > 0 : ...},
so starting inside the target still costs at least one step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .model import Disorder, ModelParams

HARD_CAP = 16
ABSOLUTE_CAP = 20
RESIDUAL_TOL = 1e-10


class NTooLarge(ValueError):
    """State space 2^N exceeds the configured enumeration cap."""


class SolverError(RuntimeError):
    """Linear solve failed to reach the residual tolerance."""


@dataclass
class HittingResult:
    """Per-state expected hitting times plus the two start-averaged evaluations."""

    tau: np.ndarray
    tau_nu_direct: float
    tau_nu_capacity: float


class FullChain:
    """Enumerated Metropolis chain for one disorder realisation."""

    def __init__(self, J: Disorder, params: ModelParams, n_cap: int = HARD_CAP):
        if J.N != params.N:
            raise ValueError("disorder size does not match params")
        N = params.N
        if N > min(n_cap, ABSOLUTE_CAP):
            raise NTooLarge(f"N={N} exceeds cap {min(n_cap, ABSOLUTE_CAP)}")
        if N > HARD_CAP:
            warnings.warn(
                f"N={N}: enumerating 2^{N} states needs ~{(2**N * (N + 2) * 8) >> 20} MB",
                ResourceWarning,
                stacklevel=2,
            )
        self.params = params
        self.J = J
        self.N = N
        self.n_states = 1 << N

        states = np.arange(self.n_states, dtype=np.uint32)
        self.levels = np.bitwise_count(states).astype(np.int16)
        bits = (states[:, None] >> np.arange(N, dtype=np.uint32)) & np.uint32(1)
        spins = (2.0 * bits - 1.0).astype(np.float64)

        Jd = J.to_dense().astype(np.float64)
        pair = np.einsum("si,si->s", spins @ Jd, spins) / 2.0
        S = 2.0 * self.levels.astype(np.float64) - N
        self.H = -pair / (N * params.p) - params.h * S

        self.log_mu = -params.beta * self.H
        self.log_Z = float(logsumexp(self.log_mu))
        self._dH = None
        self._rates = None
        self._nbr = None

    # -- basic structure ---------------------------------------------------

    def level_index(self, m: float) -> int:
        k = (m + 1.0) * self.N / 2.0
        ki = int(round(k))
        if not 0 <= ki <= self.N or abs(k - ki) > 1e-9 * max(1, self.N):
            raise ValueError(f"m={m} is not on the N={self.N} grid")
        return ki

    def level_states(self, k: int) -> np.ndarray:
        return np.nonzero(self.levels == k)[0]

    def flip_dH(self) -> np.ndarray:
        """dH[s, l] = H(s with spin l flipped) - H(s)."""
        if self._dH is None:
            idx = np.arange(self.n_states, dtype=np.int64)
            dH = np.empty((self.n_states, self.N))
            for l in range(self.N):
                dH[:, l] = self.H[idx ^ (1 << l)] - self.H
            self._dH = dH
        return self._dH

    def rates(self) -> np.ndarray:
        """R[s, l] = (1/N) exp(-beta [dH]_+), the flip part of the one-step law."""
        if self._rates is None:
            dH = self.flip_dH()
            self._rates = np.exp(-self.params.beta * np.maximum(dH, 0.0)) / self.N
        return self._rates

    def holding(self) -> np.ndarray:
        return 1.0 - self.rates().sum(axis=1)

    def mu(self) -> np.ndarray:
        """Normalised Gibbs weights."""
        return np.exp(self.log_mu - self.log_Z)

    # -- linear algebra ----------------------------------------------------

    def _neighbor_index(self) -> np.ndarray:
        if self._nbr is None:
            idx = np.arange(self.n_states, dtype=np.int64)
            self._nbr = idx[:, None] ^ (1 << np.arange(self.N, dtype=np.int64))[None, :]
        return self._nbr

    def _solve_absorbing(self, region: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Solve (I - P)|_region x = b, exploiting reversibility.

        The operator is symmetrised by the square-root Gibbs weights, which
        turns every off-diagonal entry into -(1/N) exp(-beta |dH|/2): entries
        stay O(1) regardless of how wildly mu varies.  Conjugate gradients with
        Jacobi preconditioning is tried first, then a sparse direct fallback;
        the unsymmetrised residual is verified either way.
        """
        idx = np.nonzero(region)[0]
        n = idx.size
        pos = np.full(self.n_states, -1, dtype=np.int64)
        pos[idx] = np.arange(n)

        beta = self.params.beta
        nbr = self._neighbor_index()[idx]  # (n, N)
        inside = region[nbr]
        rows = np.repeat(np.arange(n), self.N).reshape(n, self.N)[inside]
        cols = pos[nbr[inside]]
        dH_in = (self.H[nbr] - self.H[idx][:, None])[inside]
        vals_sym = -np.exp(-beta * np.abs(dH_in) / 2.0) / self.N

        # (I - P) diagonal = 1 - holding = total flip rate out of the state
        diag = self.rates()[idx].sum(axis=1)
        A_sym = sp.csr_matrix((vals_sym, (rows, cols)), shape=(n, n))
        A_sym = A_sym + sp.diags(diag)

        href = float(np.median(self.H[idx]))
        s = np.exp(-beta * (self.H[idx] - href) / 2.0)
        b_sym = s * b

        x = None
        if n > 2048:
            M = sp.diags(1.0 / A_sym.diagonal())
            y, info = spla.cg(A_sym, b_sym, rtol=1e-13, atol=0.0, maxiter=50 * n, M=M)
            if info == 0:
                x = y / s
        if x is None:
            y = spla.spsolve(A_sym.tocsc(), b_sym)
            x = y / s

        # verify against the unsymmetrised system
        R_in = np.where(inside, self.rates()[idx], 0.0)
        xs = np.zeros(self.n_states)
        xs[idx] = x
        Ax = diag * x - (R_in * xs[nbr]).sum(axis=1)
        resid = float(np.max(np.abs(Ax - b)))
        if resid > RESIDUAL_TOL:
            raise SolverError(f"absorbing solve residual {resid:.3e} > {RESIDUAL_TOL}")
        return x

    # -- potential theory ----------------------------------------------------

    def harmonic(self, m1: float, m2: float) -> np.ndarray:
        """h(s) = P_s(tau_A < tau_B) with A = level m1, B = level m2; 1 on A, 0 on B."""
        k1, k2 = self.level_index(m1), self.level_index(m2)
        if k1 == k2:
            raise ValueError("levels must differ")
        in_A = self.levels == k1
        in_B = self.levels == k2
        region = ~(in_A | in_B)
        idx = np.nonzero(region)[0]
        nbr = self._neighbor_index()[idx]
        b = (self.rates()[idx] * in_A[nbr]).sum(axis=1)
        h_region = self._solve_absorbing(region, b)
        h = np.zeros(self.n_states)
        h[in_A] = 1.0
        h[idx] = h_region
        # clamp tiny numerical excursions only
        h[(h < 0) & (h > -1e-9)] = 0.0
        h[(h > 1) & (h < 1 + 1e-9)] = 1.0
        return h

    def escape_probability(self, h: np.ndarray, m1: float) -> np.ndarray:
        """P_s(tau_B < tau_A) for s in A, via the one-step identity
        sum_{s'} p(s, s') (1 - h(s'))."""
        k1 = self.level_index(m1)
        A = self.level_states(k1)
        nbr = self._neighbor_index()[A]
        return (self.rates()[A] * (1.0 - h[nbr])).sum(axis=1)

    def capacity(self, m1: float, m2: float, h: np.ndarray | None = None
                 ) -> tuple[float, float]:
        """(cap, cap_dirichlet): escape-probability form and Dirichlet-form cross-check.

        cap = sum_{s in A} mu(s) P_s(tau_B < tau_A); the Dirichlet form of the
        harmonic function must match.
        """
        if h is None:
            h = self.harmonic(m1, m2)
        k1 = self.level_index(m1)
        A = self.level_states(k1)
        esc = self.escape_probability(h, m1)
        mu = self.mu()
        cap = float(mu[A] @ esc)
        cap_dir = self.dirichlet_form(h)
        return cap, cap_dir

    def dirichlet_form(self, f: np.ndarray) -> float:
        """(1/2) sum over ordered neighbour pairs of mu(s) p(s,s') (f(s) - f(s'))^2."""
        mu = self.mu()
        R = self.rates()
        nbr = self._neighbor_index()
        total = 0.0
        for l in range(self.N):
            df = f - f[nbr[:, l]]
            total += float(mu @ (R[:, l] * df * df))
        return 0.5 * total

    def last_exit_distribution(self, m1: float, m2: float, h: np.ndarray | None = None
                               ) -> np.ndarray:
        """Starting law on level m1 biased by mu(s) P_s(tau_B < tau_A), normalised.

        Entries align with ``level_states(level_index(m1))``.
        """
        if h is None:
            h = self.harmonic(m1, m2)
        k1 = self.level_index(m1)
        A = self.level_states(k1)
        esc = self.escape_probability(h, m1)
        w = np.exp(self.log_mu[A] - self.log_mu[A].max()) * esc
        total = w.sum()
        if total <= 0:
            raise SolverError("all escape probabilities vanished; chain not irreducible?")
        return w / total

    def mean_hitting(self, m1: float, m2: float, h: np.ndarray | None = None
                     ) -> HittingResult:
        """Expected hitting times of level m2, plus the two start-averaged values.

        tau_nu_direct averages E_s[tau_B] over the last-exit law on level m1;
        tau_nu_capacity evaluates (sum_s mu(s) h(s)) / cap(A, B).  The two are
        equal by the mean-hitting/capacity identity.
        """
        if h is None:
            h = self.harmonic(m1, m2)
        k2 = self.level_index(m2)
        in_B = self.levels == k2
        region = ~in_B
        idx = np.nonzero(region)[0]
        tau_region = self._solve_absorbing(region, np.ones(idx.size))
        tau = np.zeros(self.n_states)
        tau[idx] = tau_region

        nu = self.last_exit_distribution(m1, m2, h)
        A = self.level_states(self.level_index(m1))
        tau_nu_direct = float(nu @ tau[A])
        cap, _ = self.capacity(m1, m2, h)
        tau_nu_capacity = float(self.harmonic_sum(h) / cap)
        return HittingResult(tau=tau, tau_nu_direct=tau_nu_direct,
                             tau_nu_capacity=tau_nu_capacity)

    def harmonic_sum(self, h: np.ndarray) -> float:
        """sum_s mu(s) h(s) with mu normalised (numerator of the hitting identity)."""
        return float(self.mu() @ h)

    def first_positive_hitting(self, tau: np.ndarray, m2: float) -> np.ndarray:
        """Hitting times under the strict tau > 0 convention for every state.

        ``tau`` (from mean_hitting) is 0 on the target level, the absorbing
        boundary of the linear system; for a start inside the target the
        first-positive time is one step plus the mean over the one-step law.
        """
        k2 = self.level_index(m2)
        out = tau.copy()
        B = self.level_states(k2)
        nbr = self._neighbor_index()[B]
        R = self.rates()[B]
        out[B] = 1.0 + (R * tau[nbr]).sum(axis=1)
        return out

    def meso_measure(self) -> np.ndarray:
        """Level-aggregated measure Q(m) = sum_{s at level m} mu(s), length N+1."""
        mu = self.mu()
        return np.bincount(self.levels, weights=mu, minlength=self.N + 1)
