"""Hot loops: Gray-code state enumeration and Metropolis stepping.

Compiled with numba when available; every kernel has a NumPy/Python fallback
with identical semantics so the package degrades gracefully (slowly) without
it.  The Gray-code walk visits all 2^N states with an O(N) local-field update
per flip, which is what makes exhaustive sums affordable up to N ~ 22.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def _gray_level_logsumexp_impl(A, scale, N):  # pragma: no cover - compiled
    n_states = 1 << N
    spins = np.full(N, -1.0)
    fields = np.zeros(N)
    for j in range(N):
        acc = 0.0
        for i in range(N):
            acc += A[i, j] * spins[i]
        fields[j] = acc
    x = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            x += A[i, j] * spins[i] * spins[j]
    x *= scale

    mx = np.full(N + 1, -np.inf)
    sm = np.zeros(N + 1)
    k = 0
    # state 0 of the Gray walk: all minus
    mx[k] = x
    sm[k] = 1.0
    for i in range(1, n_states):
        t = i
        b = 0
        while t & 1 == 0:
            t >>= 1
            b += 1
        s_old = spins[b]
        x -= 2.0 * scale * s_old * fields[b]
        spins[b] = -s_old
        d = -2.0 * s_old
        for j in range(N):
            fields[j] += A[j, b] * d
        fields[b] -= A[b, b] * d  # A_bb is 0 but keep exactness explicit
        if s_old < 0:
            k += 1
        else:
            k -= 1
        if x <= mx[k]:
            sm[k] += np.exp(x - mx[k])
        else:
            sm[k] = sm[k] * np.exp(mx[k] - x) + 1.0
            mx[k] = x
    return mx, sm


def gray_level_logsumexp(A: np.ndarray, scale: float, N: int) -> np.ndarray:
    """log sum over states at each level k of exp(scale * sum_{i<j} A_ij s_i s_j).

    Returns an (N+1,) vector; level k = number of +1 spins.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    mx, sm = _gray_level_logsumexp_impl(A, float(scale), int(N))
    out = mx + np.log(sm)
    return out


def level_logsumexp_reference(A: np.ndarray, scale: float, N: int) -> np.ndarray:
    """Naive O(N^2)-per-state reference for the Gray-code kernel (small N)."""
    states = np.arange(1 << N, dtype=np.uint32)
    levels = np.bitwise_count(states).astype(np.int64)
    bits = (states[:, None] >> np.arange(N, dtype=np.uint32)) & np.uint32(1)
    s = (2.0 * bits - 1.0).astype(np.float64)
    q = np.einsum("si,si->s", s @ np.asarray(A, dtype=np.float64), s) / 2.0
    x = scale * q
    out = np.full(N + 1, -np.inf)
    for k in range(N + 1):
        sel = levels == k
        if sel.any():
            xm = x[sel].max()
            out[k] = xm + np.log(np.exp(x[sel] - xm).sum())
    return out


# -- Metropolis stepping -------------------------------------------------------

HIT = 1
EXHAUSTED = 0


@njit(cache=True)
def _metropolis_block_impl(spins, fields, ssum, rows, n_words, inv_np, h, beta,
                           sites, us, target_ssum):  # pragma: no cover - compiled
    n_props = sites.shape[0]
    for t in range(n_props):
        l = sites[t]
        s_l = spins[l]
        dh = s_l * (2.0 * inv_np * fields[l] + 2.0 * h)
        acc = dh <= 0.0 or us[t] < np.exp(-beta * dh)
        if acc:
            spins[l] = -s_l
            ssum -= 2 * s_l
            d = -2 * s_l
            base = 0
            for w in range(n_words):
                bits = rows[l, w]
                while bits:
                    low = bits & (~bits + np.uint64(1))
                    j = base
                    v = low
                    while v > np.uint64(1):
                        v >>= np.uint64(1)
                        j += 1
                    fields[j] += d
                    bits ^= low
                base += 64
        if ssum == target_ssum:
            return HIT, t + 1, ssum
    return EXHAUSTED, n_props, ssum


def metropolis_block(spins, fields, ssum, rows, inv_np, h, beta, sites, us, target_ssum):
    """Run one block of proposals; mutates spins/fields, returns (status, used, ssum).

    The hitting check runs after every attempted step (holds included), so a
    trajectory started on the target level registers a hit at its first held
    step: time is strictly positive.
    """
    return _metropolis_block_impl(
        spins, fields, np.int64(ssum), rows, rows.shape[1],
        float(inv_np), float(h), float(beta),
        sites, us, np.int64(target_ssum),
    )


@njit(cache=True)
def _occupancy_block_impl(spins, fields, ssum, rows, n_words, inv_np, h, beta,
                          sites, us, counts):  # pragma: no cover - compiled
    n_props = sites.shape[0]
    N = spins.shape[0]
    for t in range(n_props):
        l = sites[t]
        s_l = spins[l]
        dh = s_l * (2.0 * inv_np * fields[l] + 2.0 * h)
        if dh <= 0.0 or us[t] < np.exp(-beta * dh):
            spins[l] = -s_l
            ssum -= 2 * s_l
            d = -2 * s_l
            base = 0
            for w in range(n_words):
                bits = rows[l, w]
                while bits:
                    low = bits & (~bits + np.uint64(1))
                    j = base
                    v = low
                    while v > np.uint64(1):
                        v >>= np.uint64(1)
                        j += 1
                    fields[j] += d
                    bits ^= low
                base += 64
        counts[(ssum + N) >> 1] += 1
    return ssum


def occupancy_block(spins, fields, ssum, rows, inv_np, h, beta, sites, us, counts):
    """Advance one block while tallying per-level visit counts (post-step)."""
    return _occupancy_block_impl(
        spins, fields, np.int64(ssum), rows, rows.shape[1],
        float(inv_np), float(h), float(beta), sites, us, counts,
    )


if not HAVE_NUMBA:  # pragma: no cover - exercised only without numba

    def _occupancy_block_impl(spins, fields, ssum, rows, n_words, inv_np, h, beta,
                              sites, us, counts):
        N = spins.shape[0]
        for t in range(sites.shape[0]):
            l = int(sites[t])
            s_l = int(spins[l])
            dh = s_l * (2.0 * inv_np * fields[l] + 2.0 * h)
            if dh <= 0.0 or us[t] < np.exp(-beta * dh):
                spins[l] = -s_l
                ssum -= 2 * s_l
                d = -2 * s_l
                for w in range(n_words):
                    bits = int(rows[l, w])
                    base = w * 64
                    while bits:
                        low = bits & -bits
                        fields[base + low.bit_length() - 1] += d
                        bits ^= low
            counts[(ssum + N) >> 1] += 1
        return ssum

    def _metropolis_block_impl(spins, fields, ssum, rows, n_words, inv_np, h, beta,
                               sites, us, target_ssum):
        for t in range(sites.shape[0]):
            l = int(sites[t])
            s_l = int(spins[l])
            dh = s_l * (2.0 * inv_np * fields[l] + 2.0 * h)
            if dh <= 0.0 or us[t] < np.exp(-beta * dh):
                spins[l] = -s_l
                ssum -= 2 * s_l
                d = -2 * s_l
                for w in range(n_words):
                    bits = int(rows[l, w])
                    base = w * 64
                    while bits:
                        low = bits & -bits
                        fields[base + low.bit_length() - 1] += d
                        bits ^= low
            if ssum == target_ssum:
                return HIT, t + 1, ssum
        return EXHAUSTED, sites.shape[0], ssum
