"""Random-scan heat-bath (Glauber) dynamics for the Bovier-Gayrard measure.

Single-site conditional law.  Flipping x_i changes the bond sum
sum_{k,l} eps_kl x_k x_l only through the off-diagonal terms touching i, so

    P(x_i = +1 | rest) = e^{h_i} / (e^{h_i} + e^{-h_i}),
    h_i = beta / (2Np) * sum_{j != i} (eps_ij + eps_ji) x_j.

The self-loop term eps_ii x_i^2 = eps_ii is constant and drops out.  A sweep is
N updates at uniformly drawn sites (with replacement).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graphs import GraphSample, ReplicaPlan, derive_replica_seed, sample_graph
from .model import ModelParams, SpinConfig, TwoGroupPartition, WeightedLaw, enumerate_log_weights

INITIAL_STATES = ("all-up", "all-down", "uniform-random")
CONFIG_HIST_CAP = 20
_EMPTY = np.zeros(0, dtype=np.int64)


def default_burn_in(n: int, beta: float) -> int:
    """Burn-in sweeps: 10 ln(N) / (1 - beta), at least 100."""
    if beta >= 1:
        raise ValueError("default burn-in is only defined for beta < 1")
    return max(100, math.ceil(10 * math.log(max(n, 2)) / (1.0 - beta)))


@dataclass(frozen=True)
class ChainConfig:
    sweeps: int
    burn_in_sweeps: int = 0
    thinning: int = 1
    seed: int = 0
    initial_state: str = "uniform-random"

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")
        if self.burn_in_sweeps < 0:
            raise ValueError("burn-in cannot be negative")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if self.initial_state not in INITIAL_STATES:
            raise ValueError(f"initial_state must be one of {INITIAL_STATES}")

    @property
    def recorded_samples(self) -> int:
        return max(0, (self.sweeps - self.burn_in_sweeps) // self.thinning)


@dataclass
class ChainResult:
    """Output of :func:`run_chain`.

    ``samples`` holds (s1/sqrt(n1), s2/sqrt(n2)) per recorded sweep, ``sums``
    the raw integer group sums.  ``occupation`` (if requested) counts visits of
    the total magnetization over all post-burn-in site updates, indexed by
    (s + N) / 2.
    """

    samples: np.ndarray
    sums: np.ndarray
    flips: int
    updates: int
    burn_in_sweeps: int
    occupation: np.ndarray | None = None
    config_histogram: np.ndarray | None = field(default=None, repr=False)
    final_state: np.ndarray | None = field(default=None, repr=False)

    @property
    def flip_rate(self) -> float:
        return self.flips / self.updates if self.updates else 0.0

    def ess(self) -> np.ndarray:
        return batch_means_ess(self.samples)

    def diagnostics(self) -> dict:
        return {
            "ess": [float(v) for v in self.ess()],
            "flip_rate": self.flip_rate,
            "burn_in_sweeps": self.burn_in_sweeps,
            "recorded_samples": int(len(self.samples)),
        }


def chain_rng(seed: int) -> np.ndarray:
    """xoshiro256** state for a chain seed."""
    return _kernels.seed_state(np.uint64(int(seed) & (2**64 - 1)))


def initial_spins(n: int, kind: str, seed: int) -> np.ndarray:
    if kind == "all-up":
        return np.ones(n, dtype=np.int64)
    if kind == "all-down":
        return -np.ones(n, dtype=np.int64)
    if kind == "uniform-random":
        # separate stream from the dynamics: seed through the replica mixer
        u = _kernels.random_doubles(np.uint64(derive_replica_seed(seed, 0)), n)
        return np.where(u < 0.5, 1, -1).astype(np.int64)
    raise ValueError(f"unknown initial state {kind!r}")


def local_field(params: ModelParams, graph: GraphSample, config: SpinConfig, i: int) -> float:
    """h_i = beta / (2Np) * sum_{j != i} (eps_ij + eps_ji) x_j."""
    if not 0 <= i < params.n:
        raise IndexError(f"site {i} out of range")
    adj = graph.dense().astype(np.int64)
    x = config.spins().astype(np.int64)
    w = adj[i] + adj[:, i]
    w[i] = 0
    return params.coupling * float(w @ x)


def glauber_sweep(params: ModelParams, graph: GraphSample, config: SpinConfig,
                  rng_state: np.ndarray) -> SpinConfig:
    """One sweep (N random-site heat-bath updates); advances ``rng_state`` in place."""
    x = config.spins().astype(np.int64)
    indptr, indices, weights = graph.symmetric_csr
    _kernels.glauber_run(indptr, indices, weights, params.coupling, np.zeros(params.n, np.int8),
                         x, rng_state, 1, 0, 1, np.zeros((0, 2), np.int64), _EMPTY, _EMPTY)
    return SpinConfig.from_spins(x.tolist())


def run_chain(params: ModelParams, graph: GraphSample, part: TwoGroupPartition,
              chain: ChainConfig, occupation: bool = False,
              config_histogram: bool = False) -> ChainResult:
    """Run one chain on a fixed graph and record the standardized two-group vector.

    ``config_histogram`` (N <= 20) additionally counts every post-burn-in
    configuration visit by code.
    """
    if graph.n != params.n:
        raise ValueError("graph and params must share N")
    labels = part.labels(params.n)
    x = initial_spins(params.n, chain.initial_state, chain.seed)
    state = chain_rng(chain.seed)
    record = np.zeros((chain.recorded_samples, 2), dtype=np.int64)
    occ = np.zeros(params.n + 1, dtype=np.int64) if occupation else _EMPTY
    if config_histogram and params.n > CONFIG_HIST_CAP:
        raise ValueError(f"configuration histogram needs N <= {CONFIG_HIST_CAP}")
    hist = np.zeros(1 << params.n, dtype=np.int64) if config_histogram else _EMPTY
    indptr, indices, weights = graph.symmetric_csr
    rows, flips = _kernels.glauber_run(indptr, indices, weights, params.coupling, labels, x, state,
                                       chain.sweeps, chain.burn_in_sweeps, chain.thinning, record,
                                       occ, hist)
    sums = record[:rows]
    scale = np.array([math.sqrt(part.n1), math.sqrt(part.n2)])
    return ChainResult(
        samples=sums / scale,
        sums=sums,
        flips=int(flips),
        updates=chain.sweeps * params.n,
        burn_in_sweeps=chain.burn_in_sweeps,
        occupation=occ if occupation else None,
        config_histogram=hist if config_histogram else None,
        final_state=x,
    )


@dataclass
class ReplicaRun:
    index: int
    graph_seed: int
    chain_seed: int
    edge_count: int
    result: ChainResult


def run_replicas(params: ModelParams, part: TwoGroupPartition, plan: ReplicaPlan,
                 sweeps: int, burn_in_sweeps: int | None = None, thinning: int = 1,
                 initial_state: str = "uniform-random", occupation: bool = False,
                 threads: int = 1) -> list[ReplicaRun]:
    """One graph realization and one chain per replica of ``plan``.

    Replica k samples its graph from ``plan.derived_seeds[k]`` and runs its chain
    from ``derive_replica_seed(graph_seed, 1)``.  Results come back in replica
    order whatever the thread count.
    """
    burn = default_burn_in(params.n, params.beta) if burn_in_sweeps is None else burn_in_sweeps

    def one(k):
        gseed = plan.derived_seeds[k]
        cseed = derive_replica_seed(gseed, 1)
        graph = sample_graph(params, gseed)
        cfg = ChainConfig(sweeps=burn + sweeps, burn_in_sweeps=burn, thinning=thinning,
                          seed=cseed, initial_state=initial_state)
        res = run_chain(params, graph, part, cfg, occupation=occupation)
        res.final_state = None
        return ReplicaRun(k, gseed, cseed, graph.edge_count, res)

    if threads <= 1:
        return [one(k) for k in range(plan.replica_count)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(one, range(plan.replica_count)))


def occupation_law(occupation, n: int, symmetrize: bool = True) -> WeightedLaw:
    """Law of s / sqrt(N) from magnetization visit counts indexed by (s + N) / 2.

    The BG weight is invariant under x -> -x, so averaging the histogram with
    its mirror image keeps the target law and removes the sign imbalance of a
    finite run.
    """
    occ = np.asarray(occupation, dtype=float)
    if occ.shape != (n + 1,):
        raise ValueError("occupation must have length N + 1")
    if symmetrize:
        occ = occ + occ[::-1]
    if occ.sum() <= 0:
        raise ValueError("empty occupation histogram")
    s = np.arange(-n, n + 1, 2)
    keep = occ > 0
    return WeightedLaw(s[keep] / math.sqrt(n), np.log(occ[keep] / occ.sum()), normalized=True)


def write_samples_csv(runs: list[ReplicaRun], path) -> None:
    """Columns replica,sample_index,s1_std,s2_std."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "sample_index", "s1_std", "s2_std"])
        for run in runs:
            for k, (a, b) in enumerate(run.result.samples):
                w.writerow([run.index, k, repr(float(a)), repr(float(b))])


def batch_means_ess(samples) -> np.ndarray:
    """Effective sample size per coordinate by non-overlapping batch means.

    Batch length floor(sqrt(n)); ESS = n * Var(x) / (b * Var(batch means)).
    A coordinate with zero variance gets ESS = 1.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 100:
        raise ValueError(f"batch-means ESS needs at least 100 samples, got {n}")
    b = int(math.isqrt(n))
    a = n // b
    batches = x[: a * b].reshape(a, b, -1).mean(axis=1)
    var = x.var(axis=0, ddof=1)
    var_bm = b * batches.var(axis=0, ddof=1)
    out = np.ones(x.shape[1])
    ok = (var > 0) & (var_bm > 0)
    out[ok] = n * var[ok] / var_bm[ok]
    return out


# --- exact kernels for small N -------------------------------------------------------

def single_site_kernels(params: ModelParams, graph: GraphSample) -> list[np.ndarray]:
    """Heat-bath kernel P_i on all 2^N states for every site i (small N only)."""
    n = params.n
    lw = enumerate_log_weights(params, graph)
    codes = np.arange(1 << n)
    kernels = []
    for i in range(n):
        partner = codes ^ (1 << i)
        # conditional law of x_i given the rest: compare the two completions
        up = np.where((codes >> i) & 1, codes, partner)
        down = up ^ (1 << i)
        p_up = 1.0 / (1.0 + np.exp(lw[down] - lw[up]))
        p_self = np.where((codes >> i) & 1, p_up, 1.0 - p_up)
        k = np.zeros((1 << n, 1 << n))
        k[codes, codes] = p_self
        k[codes, partner] = 1.0 - p_self
        kernels.append(k)
    return kernels


def transition_matrix(params: ModelParams, graph: GraphSample) -> np.ndarray:
    """Random-scan single-update kernel (1/N) sum_i P_i on all 2^N states."""
    kernels = single_site_kernels(params, graph)
    return sum(kernels) / len(kernels)
