"""Graph-averaged (quenched) moments of the normalized BG weight and the R / T functionals.

With a = beta / (2Np) and t = tanh(a), the normalized weight of a configuration is

    w_eps(x) = exp(a * sum_{i,j} eps_ij x_i x_j) / cosh(a)^{sum eps}.

Edges are independent, so E_eps factorizes over the N^2 ordered pairs.  A pair
with x_i x_j = +1 contributes 1 + p t, one with x_i x_j = -1 contributes
1 - p t, and there are (N^2 + s^2)/2 and (N^2 - s^2)/2 of them.  For two
configurations the pair classes (u, v) = (x_i x_j, y_i y_j) have factors

    (+,+): 1 + p(2t + t^2)   (+,-), (-,+): 1 - p t^2   (-,-): 1 + p(t^2 - 2t).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binomtest

from .combinatorics import in_magnetization_range, log_nu_count, log_nu_triple, nu_triple, triple_support
from .graphs import GraphSample, ReplicaPlan, sample_graph
from .model import (
    ENUMERATION_CAP,
    CapExceeded,
    ModelParams,
    SpinConfig,
    code_magnetization,
    enumerate_bond_sums,
    evaluate_observable,
    magnetization,
    z_cw,
)


@dataclass(frozen=True)
class NormalizedWeightMoment:
    """log E_eps[...] split into pair-class counts and per-pair log factors."""

    log_value: float
    counts: dict
    log_factors: dict

    def reconstruct(self) -> float:
        return math.fsum(self.counts[k] * self.log_factors[k] for k in self.counts)


def _tanh_coupling(params: ModelParams) -> float:
    return math.tanh(params.coupling)


def normalizer_log(params: ModelParams, graph: GraphSample) -> float:
    """log of cosh(beta/(2Np)) raised to the number of edges."""
    return graph.edge_count * math.log(math.cosh(params.coupling))


def first_moment_counts(n: int, s: int) -> dict:
    if not in_magnetization_range(n, s):
        raise ValueError(f"s={s} is not a magnetization for N={n}")
    return {"+": (n * n + s * s) // 2, "-": (n * n - s * s) // 2}


def exact_first_moment_log(params: ModelParams, s: int) -> NormalizedWeightMoment:
    """log E_eps[w_eps(x)] for any x with magnetization s."""
    n, p = params.n, params.p
    t = _tanh_coupling(params)
    counts = first_moment_counts(n, s)
    logs = {"+": math.log1p(p * t), "-": math.log1p(-p * t)}
    return NormalizedWeightMoment(math.fsum(counts[k] * logs[k] for k in counts), counts, logs)


def second_moment_counts(n: int, s1: int, s2: int, r: int) -> dict:
    """Pair-class counts n_uv from sum u = s1^2, sum v = s2^2, sum uv = r^2."""
    if nu_triple(n, s1, s2, r) == 0:
        raise ValueError(f"(s1, s2, r)=({s1}, {s2}, {r}) is not realizable for N={n}")
    nn, a, b, c = n * n, s1 * s1, s2 * s2, r * r
    return {
        "++": (nn + a + b + c) // 4,
        "+-": (nn + a - b - c) // 4,
        "-+": (nn - a + b - c) // 4,
        "--": (nn - a - b + c) // 4,
    }


def exact_second_moment_log(params: ModelParams, s1: int, s2: int, r: int) -> NormalizedWeightMoment:
    """log E_eps[w_eps(x) w_eps(y)] for magnetizations (s1, s2) and overlap r."""
    p = params.p
    t = _tanh_coupling(params)
    counts = second_moment_counts(params.n, s1, s2, r)
    mixed = math.log1p(-p * t * t)
    logs = {"++": math.log1p(p * t * (2 + t)), "+-": mixed, "-+": mixed, "--": math.log1p(p * t * (t - 2))}
    return NormalizedWeightMoment(math.fsum(counts[k] * logs[k] for k in counts), counts, logs)


def first_moment_log_array(params: ModelParams, s) -> np.ndarray:
    """Vectorized log value of :func:`exact_first_moment_log` (float arithmetic)."""
    n, p = params.n, params.p
    t = _tanh_coupling(params)
    s2 = np.asarray(s, dtype=float) ** 2
    return 0.5 * (n * n + s2) * math.log1p(p * t) + 0.5 * (n * n - s2) * math.log1p(-p * t)


def second_moment_log_array(params: ModelParams, s1, s2, r) -> np.ndarray:
    n, p = params.n, params.p
    t = _tanh_coupling(params)
    a, b, c = (np.asarray(v, dtype=float) ** 2 for v in (s1, s2, r))
    nn = float(n * n)
    mixed = math.log1p(-p * t * t)
    return (0.25 * (nn + a + b + c) * math.log1p(p * t * (2 + t))
            + 0.25 * (2 * nn - 2 * c) * mixed
            + 0.25 * (nn - a - b + c) * math.log1p(p * t * (t - 2)))


def residual_c1(params: ModelParams, s: int) -> float:
    """First moment minus its principal part -beta^2/8 + beta s^2/(2N)."""
    n, beta = params.n, params.beta
    return exact_first_moment_log(params, s).log_value - (-beta * beta / 8 + beta * s * s / (2.0 * n))


def residual_c2(params: ModelParams, s1: int, s2: int, r: int) -> float:
    """Second moment minus -beta^2/4 + beta (s1^2 + s2^2)/(2N)."""
    n, beta = params.n, params.beta
    principal = -beta * beta / 4 + beta * (s1 * s1 + s2 * s2) / (2.0 * n)
    return exact_second_moment_log(params, s1, s2, r).log_value - principal


def exhaustive_moment_logs(params: ModelParams, configs: list[SpinConfig]) -> float:
    """log E_eps[prod_k w_eps(x_k)] by summing over every graph on N vertices.

    Independent of the closed forms; feasible for N <= 4 (2^{N^2} graphs).
    """
    n, p, a = params.n, params.p, params.coupling
    if n > 4:
        raise CapExceeded("exhaustive graph enumeration is limited to N <= 4")
    m = n * n
    gcodes = np.arange(1 << m, dtype=np.int64)
    bits = ((gcodes[:, None] >> np.arange(m)) & 1).astype(float)  # (graphs, pairs)
    edges = bits.sum(axis=1)
    if p == 1:
        log_prob = np.where(edges == m, 0.0, -np.inf)
    else:
        log_prob = edges * math.log(p) + (m - edges) * math.log1p(-p)
    total = np.zeros(len(gcodes))
    for c in configs:
        x = c.spins().astype(float)
        xx = np.outer(x, x).ravel()
        total += a * (bits @ xx) - edges * math.log(math.cosh(a))
    return float(logsumexp(log_prob + total))


# --- sector-aggregated oracles for R with f = 1 ---------------------------------

def expected_r(params: ModelParams) -> float:
    """E_eps[R_N(1)] = sum_s nu_s exp(first(s)) / (e^{-beta^2/8} Z_CW)."""
    n = params.n
    s = np.arange(-n, n + 1, 2)
    lw = log_nu_count(n, s) + first_moment_log_array(params, s)
    return math.exp(float(logsumexp(lw)) + params.beta**2 / 8 - z_cw(params))


def expected_r_squared(params: ModelParams) -> float:
    """E_eps[R_N(1)^2] from the second moment summed over (s1, s2, r) sectors."""
    n = params.n
    trip = triple_support(n)
    s1, s2, r = trip.T
    lw = log_nu_triple(n, s1, s2, r) + second_moment_log_array(params, s1, s2, r)
    return math.exp(float(logsumexp(lw)) + params.beta**2 / 4 - 2 * z_cw(params))


def r_variance(params: ModelParams) -> float:
    return expected_r_squared(params) - expected_r(params) ** 2


# --- R and T functionals ---------------------------------------------------------

def _log_weighted_sum(log_base_scale: float, keys: np.ndarray, offset: int, size: int,
                      f_values: np.ndarray) -> float:
    """log sum_x f(x) exp(scale * key(x)) with integer keys, grouped to avoid 2^N exps."""
    sums = np.bincount(keys + offset, weights=f_values, minlength=size)
    k = np.arange(size) - offset
    nz = sums > 0
    if not nz.any():
        return -math.inf
    return float(logsumexp(log_base_scale * k[nz] + np.log(sums[nz])))


@dataclass
class RTValues:
    R: float
    T: float
    log_bg: float
    log_cw: float
    normalizer: float


def _f_values(f, n: int) -> np.ndarray:
    codes = np.arange(1 << n, dtype=np.uint64)
    vals = evaluate_observable(f, codes, n)
    if vals.ndim != 1:
        raise ValueError("f must be scalar-valued")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("f must be bounded and non-negative")
    return vals


def rt_values(params: ModelParams, graph: GraphSample, f, cap: int = ENUMERATION_CAP,
              f_values: np.ndarray | None = None, cw_log: float | None = None) -> RTValues:
    """R_N(f) and T_N(f) on one graph by exact 2^N sweeps.

    ``f_values`` and ``cw_log`` (log E^{mu,CW}(f)) may be passed to reuse work
    across replicas.
    """
    n = params.n
    if n > cap:
        raise CapExceeded(f"n={n} exceeds the enumeration cap {cap}")
    if graph.n != n:
        raise ValueError("graph and params must share N")
    fv = _f_values(f, n) if f_values is None else f_values
    if cw_log is None:
        cw_log = cw_log_expectation(params, fv)
    k = enumerate_bond_sums(graph).astype(np.int64)
    log_bg = _log_weighted_sum(params.coupling, k, n * n, 2 * n * n + 1, fv)
    norm = normalizer_log(params, graph)
    zc = z_cw(params)
    shift = params.beta**2 / 8 - norm
    t_val = math.exp(log_bg + shift - zc) if log_bg > -math.inf else 0.0
    r_val = 1.0 if cw_log == -math.inf else math.exp(log_bg + shift - cw_log)
    return RTValues(r_val, t_val, log_bg, cw_log, norm)


def cw_log_expectation(params: ModelParams, f_values: np.ndarray) -> float:
    """log E^{mu,CW}(f) = log sum_x f(x) exp(beta s^2 / (2N))."""
    n = params.n
    s = code_magnetization(np.arange(1 << n, dtype=np.uint64), n)
    idx = (s + n) // 2
    sums = np.bincount(idx, weights=f_values, minlength=n + 1)
    sec = np.arange(-n, n + 1, 2).astype(float)
    nz = sums > 0
    if not nz.any():
        return -math.inf
    return float(logsumexp(params.beta * sec[nz] ** 2 / (2.0 * n) + np.log(sums[nz])))


def r_functional(params: ModelParams, graph: GraphSample, f, cap: int = ENUMERATION_CAP) -> float:
    return rt_values(params, graph, f, cap).R


def t_functional(params: ModelParams, graph: GraphSample, f, cap: int = ENUMERATION_CAP) -> float:
    return rt_values(params, graph, f, cap).T


# --- concentration experiment ----------------------------------------------------

@dataclass
class ConcentrationResult:
    params: ModelParams
    delta: float
    exceed: int
    replicas: int
    interval: tuple[float, float]
    records: list[dict] = field(repr=False, default_factory=list)

    @property
    def fraction(self) -> float:
        return self.exceed / self.replicas

    def summary(self) -> dict:
        return {
            "n": self.params.n, "p": self.params.p, "beta": self.params.beta,
            "delta": self.delta, "replicas": self.replicas, "exceed": self.exceed,
            "fraction": self.fraction, "wilson95": list(self.interval),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "seed", "R", "T", "edge_count"])
            for rec in self.records:
                w.writerow([rec["replica"], rec["seed"], repr(rec["R"]), repr(rec["T"]), rec["edge_count"]])


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def concentration_experiment(params: ModelParams, f, plan: ReplicaPlan, delta: float,
                             threads: int = 1) -> ConcentrationResult:
    """Monte Carlo estimate of P_eps(|R_N(f) - 1| > delta) over the plan's graph replicas."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = params.n
    if n > ENUMERATION_CAP:
        raise CapExceeded(f"n={n} exceeds the enumeration cap {ENUMERATION_CAP}")
    fv = _f_values(f, n)
    cw_log = cw_log_expectation(params, fv)

    def one(k):
        seed = plan.derived_seeds[k]
        graph = sample_graph(params, seed)
        v = rt_values(params, graph, f, f_values=fv, cw_log=cw_log)
        return {"replica": k, "seed": seed, "R": v.R, "T": v.T, "edge_count": graph.edge_count}

    if threads <= 1:
        records = [one(k) for k in range(plan.replica_count)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, range(plan.replica_count)))
    exceed = sum(abs(rec["R"] - 1.0) > delta for rec in records)
    return ConcentrationResult(params, delta, exceed, plan.replica_count,
                               wilson_interval(exceed, plan.replica_count), records)


def config_first_moment_log(params: ModelParams, config: SpinConfig) -> NormalizedWeightMoment:
    return exact_first_moment_log(params, magnetization(config))
