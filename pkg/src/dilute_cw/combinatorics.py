"""Exact spin-configuration counts, typical sets and the tail / lower-bound checks.

Exact counts use Python big integers; the ``log_`` variants use log-gamma and
agree with the exact path to ~1e-10 relative where both run (N <= 64).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, logsumexp

from .model import ModelParams, SpinConfig, log_binom, magnetization, overlap, z_cw

EXACT_LIMIT = 64


def in_magnetization_range(n: int, s: int) -> bool:
    return -n <= s <= n and (s + n) % 2 == 0


def nu_count(n: int, s: int) -> int:
    """Number of configurations with magnetization s: C(N, (s+N)/2), 0 off the lattice."""
    if not in_magnetization_range(n, s):
        return 0
    return math.comb(n, (s + n) // 2)


def log_nu_count(n, s):
    """log of :func:`nu_count`; vectorized, -inf off the lattice."""
    n = np.asarray(n)
    s = np.asarray(s)
    on_lattice = (np.abs(s) <= n) & ((s + n) % 2 == 0)
    with np.errstate(invalid="ignore"):
        out = log_binom(n, (s + n) / 2)
    return np.where(on_lattice, out, -np.inf)


def log_de_moivre_laplace(n: int, s):
    """log[2^N / sqrt(pi N / 2) * exp(-s^2 / (2N))], the local-limit approximation."""
    s = np.asarray(s)
    if np.any((s + n) % 2 != 0) or np.any(np.abs(s) > n):
        raise ValueError(f"s must lie in S_N with the parity of N={n}")
    return n * math.log(2) - 0.5 * math.log(0.5 * math.pi * n) - s.astype(float) ** 2 / (2.0 * n)


def de_moivre_laplace_ratio(n: int, s: int) -> float:
    """nu_count / approximation; tends to 1 in the bulk as N grows."""
    return math.exp(float(log_nu_count(n, s)) - float(log_de_moivre_laplace(n, s)))


def _pattern_counts(n, s, t, u):
    """Site-pattern counts (a, b, c, d) for (+,+), (+,-), (-,+), (-,-), or None."""
    nums = (n + s + t + u, n + s - t - u, n - s + t - u, n - s - t + u)
    if any(v % 4 or v < 0 for v in nums):
        return None
    return tuple(v // 4 for v in nums)


def nu_triple(n: int, s: int, t: int, u: int) -> int:
    """Number of configuration pairs with magnetizations (s, t) and overlap u."""
    counts = _pattern_counts(n, s, t, u)
    if counts is None:
        return 0
    a, b, c, d = counts
    return math.comb(n, a) * math.comb(n - a, b) * math.comb(n - a - b, c)


def log_nu_triple(n, s, t, u):
    """log of :func:`nu_triple` via log-gamma; vectorized, -inf where infeasible."""
    n, s, t, u = (np.asarray(v, dtype=np.int64) for v in (n, s, t, u))
    nums = np.stack(np.broadcast_arrays(n + s + t + u, n + s - t - u, n - s + t - u, n - s - t + u))
    ok = np.all((nums % 4 == 0) & (nums >= 0), axis=0)
    counts = np.where(ok, nums // 4, 0)
    out = gammaln(n + 1.0) - gammaln(counts + 1.0).sum(axis=0)
    return np.where(ok, out, -np.inf)


def triple_support(n: int):
    """All (s, t, u) with nu_triple > 0, as an int array of shape (K, 3)."""
    # enumerate pattern counts a + b + c + d = n
    rows = []
    for ca in range(n + 1):
        for cb in range(n + 1 - ca):
            cc = np.arange(n + 1 - ca - cb)
            cd = n - ca - cb - cc
            rows.append(np.column_stack([
                np.full_like(cc, ca + cb) - (cc + cd),
                np.full_like(cc, ca) + cc - cb - cd,
                np.full_like(cc, ca) + cd - cb - cc,
            ]))
    return np.concatenate(rows)


def is_typical(params: ModelParams, config: SpinConfig) -> bool:
    s = magnetization(config)
    return s * s <= params.typical_threshold


def is_typical_pair(params: ModelParams, c1: SpinConfig, c2: SpinConfig) -> bool:
    thr = params.typical_threshold
    s, t, u = magnetization(c1), magnetization(c2), overlap(c1, c2)
    return s * s <= thr and t * t <= thr and u * u <= thr


def atypical_tail_ratio(params: ModelParams, delta: float) -> float:
    """2^-N sum over atypical sectors of nu_{N,s} exp((1 - delta) s^2 / (2N)).

    The bounded test function is taken to be identically one.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = params.n
    s = np.arange(-n, n + 1, 2)
    atypical = s.astype(float) ** 2 > params.typical_threshold
    if not atypical.any():
        return 0.0
    sa = s[atypical]
    lw = log_nu_count(n, sa) + (1.0 - delta) * sa.astype(float) ** 2 / (2.0 * n) - n * math.log(2)
    return float(np.exp(logsumexp(lw)))


def log_triple_bound(n: int, s, t, u, c: float):
    """log of 4^N * C / N^{3/2} * exp(-(s^2 + t^2 + u^2) / (2N))."""
    s, t, u = (np.asarray(v, dtype=float) for v in (s, t, u))
    return 2 * n * math.log(2) + math.log(c) - 1.5 * math.log(n) - (s**2 + t**2 + u**2) / (2.0 * n)


def triple_bound_margin(n: int, s, t, u, c: float):
    """log(bound) - log(nu_triple); positive where the bound holds, +inf where nu = 0."""
    if c <= 0:
        raise ValueError("the constant must be positive")
    return log_triple_bound(n, s, t, u, c) - log_nu_triple(n, s, t, u)


def cw_lower_bound_constant(beta: float) -> float:
    """(1/4) sqrt(pi / (2 (1 - beta)))."""
    return 0.25 * math.sqrt(math.pi / (2.0 * (1.0 - beta)))


def z_cw_lower_bound_margin(params: ModelParams) -> float:
    """log Z_CW - N log 2 - log[(1/4) sqrt(pi / (2(1 - beta)))].

    Positive for every tested N >= 100 at beta <= 0.9 (and already from N = 1
    at beta = 0.5); the bound is asymptotic, so small N may fail near beta = 1.
    """
    if params.beta >= 1:
        raise ValueError("the Z_CW lower bound needs beta < 1")
    return z_cw(params) - params.n * math.log(2) - math.log(cw_lower_bound_constant(params.beta))
