"""Compiled inner loops: Gray-code enumeration and heat-bath dynamics.

The chain RNG is xoshiro256** (Blackman & Vigna) seeded through SplitMix64, kept
in a 4-word uint64 state array owned by each chain, so output depends only on
the chain seed and never on thread scheduling.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

_U64 = np.uint64
_SM_GAMMA = _U64(0x9E3779B97F4A7C15)
_SM_MUL1 = _U64(0xBF58476D1CE4E5B9)
_SM_MUL2 = _U64(0x94D049BB133111EB)


@njit(cache=True)
def splitmix64_next(x):
    z = x + _SM_GAMMA
    z = (z ^ (z >> _U64(30))) * _SM_MUL1
    z = (z ^ (z >> _U64(27))) * _SM_MUL2
    return z ^ (z >> _U64(31))


@njit(cache=True)
def seed_state(seed):
    state = np.empty(4, dtype=np.uint64)
    x = _U64(seed)
    for k in range(4):
        x = x + _SM_GAMMA
        z = (x ^ (x >> _U64(30))) * _SM_MUL1
        z = (z ^ (z >> _U64(27))) * _SM_MUL2
        state[k] = z ^ (z >> _U64(31))
    return state


@njit(inline="always")
def _rotl(x, k):
    return (x << _U64(k)) | (x >> _U64(64 - k))


@njit(inline="always")
def next_u64(state):
    result = _rotl(state[1] * _U64(5), 7) * _U64(9)
    t = state[1] << _U64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@njit(inline="always")
def next_double(state):
    return (next_u64(state) >> _U64(11)) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def next_below(state, n):
    # multiply-shift on the top 32 bits; bias < n / 2**32
    return np.int64(((next_u64(state) >> _U64(32)) * _U64(n)) >> _U64(32))


@njit(cache=True)
def random_doubles(seed, count):
    state = seed_state(seed)
    out = np.empty(count)
    for k in range(count):
        out[k] = next_double(state)
    return out


# --- exact enumeration ----------------------------------------------------------

@njit(cache=True, nogil=True)
def _bond_sums_blocks(sym, diag_total, n, low_bits, blk_start, blk_stop, out):
    block_len = 1 << low_bits
    x = np.empty(n, dtype=np.int64)
    local = np.empty(n, dtype=np.int64)
    for blk in range(blk_start, blk_stop):
        base = blk << low_bits
        for i in range(n):
            x[i] = 1 if (base >> i) & 1 else -1
        for i in range(n):
            acc = 0
            for j in range(n):
                acc += sym[i, j] * x[j]
            local[i] = acc
        k_val = diag_total
        for i in range(n):
            for j in range(i + 1, n):
                k_val += sym[i, j] * x[i] * x[j]
        code = base
        out[code] = k_val
        for g in range(1, block_len):
            site = 0
            while not (g >> site) & 1:
                site += 1
            xs = x[site]
            k_val -= 2 * xs * local[site]
            for j in range(n):
                local[j] -= 2 * xs * sym[j, site]
            x[site] = -xs
            code ^= 1 << site
            out[code] = k_val


def all_bond_sums(adj, threads=1):
    """K(x) = sum_{i,j} eps_ij x_i x_j for every code x in [0, 2**n).

    The high bits of the code fix a block and the low bits are walked in Gray
    order with incrementally maintained local sums.  Blocks are split into
    contiguous index ranges across ``threads``; all arithmetic is integer, so
    the output does not depend on the split.
    """
    adj = np.asarray(adj, dtype=np.int64)
    n = adj.shape[0]
    sym = adj + adj.T
    np.fill_diagonal(sym, 0)
    diag_total = int(np.trace(adj))
    low_bits = min(n, 12)
    n_blocks = 1 << (n - low_bits)
    out = np.empty(1 << n, dtype=np.int32)
    threads = max(1, min(int(threads), n_blocks))
    if threads == 1:
        _bond_sums_blocks(sym, diag_total, n, low_bits, 0, n_blocks, out)
        return out
    bounds = np.linspace(0, n_blocks, threads + 1).astype(np.int64)
    with ThreadPoolExecutor(threads) as pool:
        list(pool.map(lambda k: _bond_sums_blocks(sym, diag_total, n, low_bits,
                                                  bounds[k], bounds[k + 1], out), range(threads)))
    return out


# --- heat-bath dynamics -----------------------------------------------------------

@njit(cache=True, nogil=True)
def initial_local_sums(indptr, indices, weights, x):
    n = x.shape[0]
    local = np.zeros(n, dtype=np.int64)
    for i in range(n):
        acc = 0
        for k in range(indptr[i], indptr[i + 1]):
            acc += weights[k] * x[indices[k]]
        local[i] = acc
    return local


@njit(cache=True, nogil=True)
def glauber_run(indptr, indices, weights, coupling, labels, x, state,
                n_sweeps, burn_in, thinning, record, occupation, config_hist):
    """Random-scan heat-bath updates, ``n_sweeps`` sweeps of N site visits each.

    After every ``thinning``-th post-burn-in sweep the group sums (s1, s2) are
    written to the next row of ``record``.  If ``occupation`` is non-empty
    (length N + 1), every post-burn-in site visit adds one count at index
    (s + N) / 2 of the total magnetization s.  ``config_hist`` works the same
    way for the full configuration code (bit i set iff x_i = +1) and is only
    meant for small N.  Returns (rows written, flips).
    """
    n = x.shape[0]
    local = initial_local_sums(indptr, indices, weights, x)
    lmax = 0
    for i in range(n):
        row = 0
        for k in range(indptr[i], indptr[i + 1]):
            row += weights[k]
        if row > lmax:
            lmax = row
    p_up = np.empty(2 * lmax + 1)
    for v in range(-lmax, lmax + 1):
        p_up[v + lmax] = 1.0 / (1.0 + np.exp(-2.0 * coupling * v))
    s1 = 0
    s2 = 0
    s_all = 0
    for i in range(n):
        s_all += x[i]
        if labels[i] == 1:
            s1 += x[i]
        elif labels[i] == 2:
            s2 += x[i]
    track = occupation.shape[0] > 0
    track_code = config_hist.shape[0] > 0
    code = 0
    if track_code:
        for i in range(n):
            if x[i] == 1:
                code |= 1 << i
    rows = 0
    flips = 0
    for sweep in range(n_sweeps):
        counting = track and sweep >= burn_in
        counting_code = track_code and sweep >= burn_in
        for _ in range(n):
            i = next_below(state, n)
            new = 1 if next_double(state) < p_up[local[i] + lmax] else -1
            if new != x[i]:
                delta = 2 * new
                x[i] = new
                for k in range(indptr[i], indptr[i + 1]):
                    local[indices[k]] += weights[k] * delta
                if labels[i] == 1:
                    s1 += delta
                elif labels[i] == 2:
                    s2 += delta
                s_all += delta
                flips += 1
                if track_code:
                    code ^= 1 << i
            if counting:
                occupation[(s_all + n) >> 1] += 1
            if counting_code:
                config_hist[code] += 1
        done = sweep + 1 - burn_in
        if done > 0 and done % thinning == 0 and rows < record.shape[0]:
            record[rows, 0] = s1
            record[rows, 1] = s2
            rows += 1
    return rows, flips
