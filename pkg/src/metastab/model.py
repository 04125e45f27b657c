"""Spin configurations, Bernoulli bond disorder and energy functions.

The system lives on ``N`` Ising spins with symmetric 0/1 couplings ``J_ij``
drawn i.i.d. Bernoulli(p) (zero diagonal), energy

    H(sigma) = -(1/(N p)) sum_{i<j} J_ij sigma_i sigma_j - h sum_i sigma_i.

Averaging over the couplings gives the mean-field pair-sum energy, and the
fluctuation ``Delta`` collects the centred couplings.  Two mean-field variants
are exposed: the pair-sum form and the canonical ``N*E(m)`` form; they differ
by the additive constant 1/2, so the exact decomposition reads

    H(sigma) = N*E(m(sigma)) + 1/2 + Delta(sigma).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import TAG_DISORDER, stream

#: Mean-field critical inverse temperature.
BETA_CRITICAL = 1.0

_HEADER = struct.Struct("<IdQQ")  # N, p, seed, edge_count


@dataclass(frozen=True)
class ModelParams:
    """System parameters: size N, inverse temperature beta, field h, edge probability p."""

    N: int
    beta: float
    h: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {self.p}")


class SpinConfig:
    """Mutable vector of N spins in {-1,+1} with a cached spin sum."""

    __slots__ = ("spins", "spin_sum")

    def __init__(self, spins):
        spins = np.ascontiguousarray(spins, dtype=np.int8)
        if spins.ndim != 1 or spins.size < 1:
            raise ValueError("spins must be a 1-D vector")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spins must be +1 or -1")
        self.spins = spins
        self.spin_sum = int(spins.sum())

    @property
    def N(self) -> int:
        return self.spins.size

    @classmethod
    def all_plus(cls, N: int) -> "SpinConfig":
        return cls(np.ones(N, dtype=np.int8))

    @classmethod
    def all_minus(cls, N: int) -> "SpinConfig":
        return cls(-np.ones(N, dtype=np.int8))

    @classmethod
    def from_index(cls, index: int, N: int) -> "SpinConfig":
        """Configuration whose i-th spin is +1 iff bit i of ``index`` is set."""
        bits = (int(index) >> np.arange(N)) & 1
        return cls((2 * bits - 1).astype(np.int8))

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.spins.copy())

    def flip(self, site: int) -> None:
        """Flip one spin in place, keeping the cached sum consistent."""
        self.spins[site] = -self.spins[site]
        self.spin_sum += 2 * int(self.spins[site])

    def magnetization(self) -> float:
        return self.spin_sum / self.spins.size

    def __repr__(self):  # pragma: no cover
        return f"SpinConfig(N={self.N}, m={self.magnetization():+.4f})"


def magnetization(sigma: SpinConfig) -> float:
    """Empirical magnetization (1/N) sum_i sigma_i."""
    return sigma.magnetization()


def _pair_index(i: np.ndarray, j: np.ndarray, N: int) -> np.ndarray:
    """Linear index of pair (i, j), i < j, in row-major upper-triangle order."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return i * (2 * N - i - 1) // 2 + (j - i - 1)


class Disorder:
    """Symmetric 0/1 coupling matrix, zero diagonal.

    Canonical storage is the upper triangle packed little-endian into uint64
    words (bit k of the triangle is bit ``k & 63`` of word ``k >> 6``).
    """

    __slots__ = ("N", "p", "seed", "words", "edge_count", "_rows")

    def __init__(self, N: int, p: float, seed: int, words: np.ndarray):
        n_bits = N * (N - 1) // 2
        n_words = (n_bits + 63) // 64
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.size != n_words:
            raise ValueError(f"expected {n_words} words for N={N}, got {words.size}")
        if n_bits % 64 and n_words:
            # padding bits must be zero so popcounts stay exact
            pad_mask = np.uint64(((1 << (64 - n_bits % 64)) - 1) << (n_bits % 64))
            if words[-1] & pad_mask:
                raise ValueError("padding bits beyond the triangle must be zero")
        self.N = int(N)
        self.p = float(p)
        self.seed = int(seed)
        self.words = words
        self.words.setflags(write=False)
        self.edge_count = int(np.bitwise_count(words).sum())
        self._rows = None

    # -- access ----------------------------------------------------------

    def get(self, i: int, j: int) -> int:
        """Coupling J_ij (0 or 1); J_ii = 0."""
        if i == j:
            return 0
        if i > j:
            i, j = j, i
        k = int(_pair_index(i, j, self.N))
        return int((self.words[k >> 6] >> np.uint64(k & 63)) & np.uint64(1))

    def upper_bits(self) -> np.ndarray:
        """Upper-triangle entries as a 0/1 vector in row-major pair order."""
        n_bits = self.N * (self.N - 1) // 2
        k = np.arange(n_bits, dtype=np.int64)
        return ((self.words[k >> 6] >> (k & 63).astype(np.uint64)) & np.uint64(1)).astype(np.int8)

    def to_dense(self) -> np.ndarray:
        """Full symmetric int8 matrix (memory O(N^2); small N only)."""
        J = np.zeros((self.N, self.N), dtype=np.int8)
        iu = np.triu_indices(self.N, 1)
        J[iu] = self.upper_bits()
        return J + J.T

    def row_bits(self) -> np.ndarray:
        """(N, ceil(N/64)) uint64 array; row ell holds the bits of column J[ell, :].

        Built lazily and cached; used by simulation kernels for O(N) local-field
        updates without a dense matrix.
        """
        if self._rows is None:
            N = self.N
            W = (N + 63) // 64
            rows = np.zeros((N, W), dtype=np.uint64)
            iu, ju = np.triu_indices(N, 1)
            vals = self.upper_bits().astype(bool)
            ii, jj = iu[vals], ju[vals]
            for a, b in ((ii, jj), (jj, ii)):
                np.bitwise_or.at(
                    rows, (a, (b >> 6).astype(np.int64)),
                    np.left_shift(np.uint64(1), (b & 63).astype(np.uint64)),
                )
            rows.setflags(write=False)
            self._rows = rows
        return self._rows

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Binary container: little-endian header (N, p, seed, edge_count) + packed triangle."""
        n_bits = self.N * (self.N - 1) // 2
        payload = self.words.astype("<u8").tobytes()[: (n_bits + 7) // 8]
        return _HEADER.pack(self.N, self.p, self.seed & (2**64 - 1), self.edge_count) + payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Disorder":
        N, p, seed, edge_count = _HEADER.unpack_from(buf, 0)
        n_bits = N * (N - 1) // 2
        n_bytes = (n_bits + 7) // 8
        payload = buf[_HEADER.size : _HEADER.size + n_bytes]
        if len(payload) != n_bytes:
            raise ValueError("truncated disorder container")
        padded = payload + b"\0" * (-len(payload) % 8)
        words = np.frombuffer(padded, dtype="<u8").astype(np.uint64)
        out = cls(N, p, seed, words)
        if out.edge_count != edge_count:
            raise ValueError("edge_count mismatch: corrupted container")
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Disorder":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def complete(cls, N: int) -> "Disorder":
        """All couplings present (the p=1 mean-field reduction)."""
        n_bits = N * (N - 1) // 2
        words = np.full((n_bits + 63) // 64, ~np.uint64(0), dtype=np.uint64)
        if n_bits % 64:
            words[-1] = np.uint64((1 << (n_bits % 64)) - 1)
        return cls(N, 1.0, -1 & (2**64 - 1), words)

    def __eq__(self, other):
        return (
            isinstance(other, Disorder)
            and self.N == other.N
            and self.p == other.p
            and np.array_equal(self.words, other.words)
        )

    def __repr__(self):  # pragma: no cover
        return f"Disorder(N={self.N}, p={self.p}, seed={self.seed}, edges={self.edge_count})"


def sample_disorder(params: ModelParams, seed: int) -> Disorder:
    """Draw the coupling matrix: each upper-triangle entry Bernoulli(p), symmetrised.

    Deterministic given ``seed`` (an independent stream derived from it).
    """
    rng = stream(seed, TAG_DISORDER)
    n_bits = params.N * (params.N - 1) // 2
    bits = rng.random(n_bits) < params.p
    packed = np.packbits(bits, bitorder="little").tobytes()
    packed += b"\0" * (-len(packed) % 8)
    words = np.frombuffer(packed, dtype="<u8").astype(np.uint64)
    if n_bits == 0:
        words = np.zeros(0, dtype=np.uint64)
    return Disorder(params.N, params.p, seed, words)


# -- energies --------------------------------------------------------------


def _coupled_pair_sum(sigma: SpinConfig, J: Disorder) -> int:
    """sum_{i<j} J_ij sigma_i sigma_j (exact integer)."""
    if sigma.N != J.N:
        raise ValueError(f"dimension mismatch: config N={sigma.N}, disorder N={J.N}")
    s = sigma.spins
    iu, ju = np.triu_indices(J.N, 1)
    prod = (s[iu] * s[ju]).astype(np.int64)
    return int(prod @ J.upper_bits().astype(np.int64))


def local_fields(sigma: SpinConfig, J: Disorder) -> np.ndarray:
    """Integer vector k_ell = sum_i J_{i ell} sigma_i."""
    if sigma.N != J.N:
        raise ValueError("dimension mismatch")
    rows = J.row_bits()
    W = rows.shape[1]
    plus = np.zeros(W, dtype=np.uint64)
    minus = np.zeros(W, dtype=np.uint64)
    idx = np.arange(sigma.N)
    for mask, sel in ((plus, sigma.spins > 0), (minus, sigma.spins < 0)):
        where = idx[sel]
        np.bitwise_or.at(
            mask, (where >> 6).astype(np.int64),
            np.left_shift(np.uint64(1), (where & 63).astype(np.uint64)),
        )
    kp = np.bitwise_count(rows & plus).sum(axis=1).astype(np.int64)
    km = np.bitwise_count(rows & minus).sum(axis=1).astype(np.int64)
    return kp - km


def hamiltonian_rdcw(sigma: SpinConfig, J: Disorder, params: ModelParams) -> float:
    """Disordered energy -(1/(Np)) sum_{i<j} J sigma sigma - h sum sigma."""
    pair = _coupled_pair_sum(sigma, J)
    return -pair / (params.N * params.p) - params.h * sigma.spin_sum


def cw_energy_density(m: float, h: float) -> float:
    """E(m) = -m^2/2 - h m, the mean-field energy per spin at magnetization m."""
    if abs(m) > 1:
        raise ValueError(f"magnetization {m} outside [-1, 1]")
    return -0.5 * m * m - h * m


def hamiltonian_cw_canonical(m: float, h: float, N: int) -> float:
    """Canonical mean-field energy N*E(m)."""
    return N * cw_energy_density(m, h)


def hamiltonian_cw_pairsum(sigma: SpinConfig, h: float) -> float:
    """Pair-sum mean-field energy -(1/N) sum_{i<j} sigma sigma - h sum sigma.

    Equals the canonical form plus 1/2, via sum_{i<j} s_i s_j = (S^2 - N)/2.
    """
    N = sigma.N
    S = sigma.spin_sum
    return -(S * S - N) / (2 * N) - h * S


def delta_term(sigma: SpinConfig, J: Disorder, params: ModelParams) -> float:
    """Coupling fluctuation -(1/(Np)) sum_{i<j} (J_ij - p) sigma_i sigma_j.

    Satisfies H(sigma) = N*E(m) + 1/2 + Delta(sigma) exactly.
    """
    N = params.N
    pair_J = _coupled_pair_sum(sigma, J)
    pair_all = (sigma.spin_sum * sigma.spin_sum - N) // 2
    return -pair_J / (N * params.p) + pair_all / N


def flip_increment(
    sigma: SpinConfig, J: Disorder, params: ModelParams, site: int
) -> tuple[float, float]:
    """Energy increments (dH, dH_cw) for flipping one spin.

    dH    = s_ell * [ (2/(Np)) sum_i J_{i ell} s_i + 2h ]
    dH_cw = s_ell * [ (2/N) (S - s_ell) + 2h ]

    each equal to the corresponding full-energy difference.
    """
    N = params.N
    if not 0 <= site < N:
        raise IndexError(f"site {site} out of range [0, {N})")
    s_l = int(sigma.spins[site])
    rows = J.row_bits()
    W = rows.shape[1]
    plus = np.zeros(W, dtype=np.uint64)
    idx = np.arange(N)[sigma.spins > 0]
    np.bitwise_or.at(
        plus, (idx >> 6).astype(np.int64),
        np.left_shift(np.uint64(1), (idx & 63).astype(np.uint64)),
    )
    row = rows[site]
    kp = int(np.bitwise_count(row & plus).sum())
    deg = int(np.bitwise_count(row).sum())
    k_l = 2 * kp - deg  # sum_i J_{i ell} s_i
    dh = s_l * (2.0 * k_l / (N * params.p) + 2.0 * params.h)
    dh_cw = s_l * (2.0 * (sigma.spin_sum - s_l) / N + 2.0 * params.h)
    return dh, dh_cw
