"""Spin configurations, Curie-Weiss / Bovier-Gayrard Gibbs weights and exact laws.

Conventions used throughout the package:

* A configuration of ``n`` spins is stored bit-packed in a Python integer
  ``code``; bit ``i`` set means ``x_i = +1``.
* Pair sums ``sum_{i,j}`` run over all ordered pairs *including* ``i == j``,
  so that ``s**2 == sum_{i,j} x_i x_j`` and self-loop edges contribute.
* Every Gibbs quantity is kept in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _kernels

ENUMERATION_CAP = 24
SECTOR_CAP = 100_000
TWO_GROUP_CAP = 4000


class CapExceeded(ValueError):
    """Raised when an exact computation is requested beyond its size cap."""


@dataclass(frozen=True)
class ModelParams:
    """The model triple (N, beta, p) plus the typicality exponent m."""

    n: int
    beta: float
    p: float = 1.0
    m: float = 0.2
    theorem_mode: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta!r}")
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p!r}")
        if not 0 < self.m < 1:
            raise ValueError(f"m must lie in (0, 1), got {self.m!r}")
        if self.theorem_mode and not self.beta < 1:
            raise ValueError(
                f"theorem mode requires beta < 1 (high-temperature regime), got {self.beta}"
            )

    @property
    def coupling(self) -> float:
        """Per-edge coupling beta / (2 N p)."""
        return self.beta / (2.0 * self.n * self.p)

    @property
    def typical_threshold(self) -> float:
        """N (Np)^m, the bound on squared magnetizations of typical configurations."""
        return self.n * (self.n * self.p) ** self.m

    def replace(self, **changes) -> "ModelParams":
        values = dict(n=self.n, beta=self.beta, p=self.p, m=self.m, theorem_mode=self.theorem_mode)
        values.update(changes)
        return ModelParams(**values)


@dataclass(frozen=True)
class SpinConfig:
    n: int
    code: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a configuration needs at least one spin")
        if self.code < 0 or self.code >> self.n:
            raise ValueError(f"code {self.code} does not fit in {self.n} spins")

    @classmethod
    def from_spins(cls, spins: Sequence[int]) -> "SpinConfig":
        code = 0
        for i, x in enumerate(spins):
            if x == 1:
                code |= 1 << i
            elif x != -1:
                raise ValueError(f"spin {i} is {x!r}, expected -1 or +1")
        return cls(len(spins), code)

    @classmethod
    def all_up(cls, n: int) -> "SpinConfig":
        return cls(n, (1 << n) - 1)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "SpinConfig":
        return cls.from_spins(rng.choice(np.array([-1, 1]), size=n).tolist())

    def spins(self) -> np.ndarray:
        """Spins as an int8 array of +-1."""
        bits = (self.code >> np.arange(self.n, dtype=object)) & 1
        return (2 * bits.astype(np.int8) - 1).astype(np.int8)

    def __len__(self):
        return self.n

    def __neg__(self) -> "SpinConfig":
        return SpinConfig(self.n, self.code ^ ((1 << self.n) - 1))


@dataclass(frozen=True)
class TwoGroupPartition:
    group1: tuple
    group2: tuple

    def __post_init__(self):
        object.__setattr__(self, "group1", tuple(int(i) for i in self.group1))
        object.__setattr__(self, "group2", tuple(int(i) for i in self.group2))
        if not self.group1 or not self.group2:
            raise ValueError("both groups must be non-empty")
        if len(set(self.group1)) != len(self.group1) or len(set(self.group2)) != len(self.group2):
            raise ValueError("groups contain repeated indices")
        if set(self.group1) & set(self.group2):
            raise ValueError("groups must be disjoint")
        if min(self.group1 + self.group2) < 0:
            raise ValueError("negative spin index")

    @classmethod
    def blocks(cls, n: int, n1: int, n2: int | None = None) -> "TwoGroupPartition":
        """Contiguous groups ``[0, n1)`` and ``[n1, n1 + n2)``; ``n2`` defaults to the rest."""
        if n2 is None:
            n2 = n - n1
        if n1 + n2 > n:
            raise ValueError(f"groups of size {n1} + {n2} exceed n={n}")
        return cls(tuple(range(n1)), tuple(range(n1, n1 + n2)))

    @classmethod
    def from_fractions(cls, n: int, alpha1: float, alpha2: float) -> "TwoGroupPartition":
        if alpha1 <= 0 or alpha2 <= 0 or alpha1 + alpha2 > 1 + 1e-12:
            raise ValueError(f"need alpha1, alpha2 > 0 and alpha1 + alpha2 <= 1, got {alpha1}, {alpha2}")
        n1 = max(1, round(alpha1 * n))
        n2 = max(1, round(alpha2 * n)) if alpha1 + alpha2 < 1 - 1e-12 else n - n1
        return cls.blocks(n, n1, n2)

    @property
    def n1(self) -> int:
        return len(self.group1)

    @property
    def n2(self) -> int:
        return len(self.group2)

    def covers(self, n: int) -> bool:
        return self.n1 + self.n2 == n

    def masks(self) -> tuple[int, int]:
        return sum(1 << i for i in self.group1), sum(1 << i for i in self.group2)

    def labels(self, n: int) -> np.ndarray:
        """Per-site group label: 0 outside both groups, else 1 or 2."""
        self.check(n)
        lab = np.zeros(n, dtype=np.int8)
        lab[list(self.group1)] = 1
        lab[list(self.group2)] = 2
        return lab

    def check(self, n: int):
        if max(self.group1 + self.group2) >= n:
            raise IndexError(f"partition index out of range for n={n}")


@dataclass
class WeightedLaw:
    """A finite discrete law: distinct outcomes with matched log-weights.

    Outcomes are a 1-D array for scalar observables or an ``(K, d)`` array for
    vector observables.  Use :meth:`from_log_weights` to build one from raw,
    possibly repeated, outcomes.
    """

    outcomes: np.ndarray
    log_weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.outcomes.ndim not in (1, 2) or len(self.outcomes) != len(self.log_weights):
            raise ValueError("outcomes and log_weights must be matched")
        if len(self.outcomes) == 0:
            raise ValueError("empty law")

    @classmethod
    def from_log_weights(cls, outcomes, log_weights, normalize: bool = True) -> "WeightedLaw":
        outcomes = np.asarray(outcomes, dtype=float)
        log_weights = np.asarray(log_weights, dtype=float)
        axis = 0 if outcomes.ndim == 2 else None
        uniq, inverse = np.unique(outcomes, axis=axis, return_inverse=True)
        inverse = inverse.reshape(-1)
        if len(uniq) < len(outcomes):
            log_weights = grouped_logsumexp(log_weights, inverse, len(uniq))
        law = cls(uniq, log_weights)
        return law.normalize() if normalize else law

    @classmethod
    def point_mass(cls, outcome) -> "WeightedLaw":
        outcome = np.atleast_1d(np.asarray(outcome, dtype=float))
        outcomes = outcome if outcome.size == 1 else outcome[None, :]
        return cls(outcomes, np.zeros(1), normalized=True)

    @property
    def dim(self) -> int:
        return 1 if self.outcomes.ndim == 1 else self.outcomes.shape[1]

    def __len__(self):
        return len(self.outcomes)

    def normalize(self) -> "WeightedLaw":
        lz = logsumexp(self.log_weights)
        return WeightedLaw(self.outcomes, self.log_weights - lz, normalized=True)

    @property
    def probabilities(self) -> np.ndarray:
        lw = self.log_weights if self.normalized else self.normalize().log_weights
        return np.exp(lw)

    def expectation(self, h: Callable[[np.ndarray], np.ndarray] | None = None) -> float | np.ndarray:
        """E h(Y); ``h`` acts on the outcome array and defaults to the identity."""
        values = self.outcomes if h is None else np.asarray(h(self.outcomes), dtype=float)
        return np.tensordot(self.probabilities, values, axes=(0, 0))

    def mean(self) -> np.ndarray:
        return np.asarray(self.expectation())

    def covariance(self) -> np.ndarray:
        centered = self.outcomes - self.mean()
        if centered.ndim == 1:
            return np.array([[np.dot(self.probabilities, centered**2)]])
        return (centered * self.probabilities[:, None]).T @ centered

    def pushforward(self, fn: Callable[[np.ndarray], np.ndarray]) -> "WeightedLaw":
        """Image law under ``fn`` applied row-wise to the outcome array."""
        lw = self.log_weights if self.normalized else self.normalize().log_weights
        return WeightedLaw.from_log_weights(fn(self.outcomes), lw)

    def marginal(self, k: int) -> "WeightedLaw":
        if self.outcomes.ndim == 1:
            if k != 0:
                raise IndexError("scalar law has a single coordinate")
            return self
        return self.pushforward(lambda y: y[:, k])

    def symmetrized(self) -> "WeightedLaw":
        """Average of the law and its image under y -> -y."""
        lw = self.log_weights if self.normalized else self.normalize().log_weights
        outcomes = np.concatenate([self.outcomes, -self.outcomes])
        return WeightedLaw.from_log_weights(outcomes, np.concatenate([lw, lw]) - math.log(2))

    def cdf_breakpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted atoms and the right-continuous CDF value at each (1-D laws only)."""
        if self.outcomes.ndim != 1:
            raise ValueError("CDF breakpoints are defined for scalar laws only")
        order = np.argsort(self.outcomes, kind="stable")
        cum = np.cumsum(self.probabilities[order])
        cum /= cum[-1]
        return self.outcomes[order], cum

    def to_csv(self, path) -> None:
        """Write ``outcome[_k]...,probability`` with 17 significant digits."""
        outcomes = self.outcomes if self.outcomes.ndim == 2 else self.outcomes[:, None]
        if outcomes.shape[1] == 1:
            header = ["outcome"]
        else:
            header = [f"outcome_{k}" for k in range(outcomes.shape[1])]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header + ["probability"]) + "\n")
            for row, prob in zip(outcomes, self.probabilities):
                fh.write(",".join(f"{v:.17g}" for v in (*row, prob)) + "\n")

    @classmethod
    def from_csv(cls, path) -> "WeightedLaw":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        outcomes = data[:, 0] if data.shape[1] == 2 else data[:, :-1]
        with np.errstate(divide="ignore"):
            return cls(outcomes, np.log(data[:, -1]), normalized=True)


def grouped_logsumexp(values: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """log-sum-exp of ``values`` within each integer group label."""
    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, groups, values)
    safe = np.where(np.isfinite(gmax), gmax, 0.0)
    sums = np.bincount(groups, weights=np.exp(values - safe[groups]), minlength=n_groups)
    with np.errstate(divide="ignore"):
        return safe + np.log(sums)


def log_binom(n, k):
    """log C(n, k) via log-gamma; -inf outside 0 <= k <= n."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    k_small = np.minimum(k, n - k)  # evaluate C(n, k) and C(n, n - k) identically
    out = gammaln(n + 1) - gammaln(k_small + 1) - gammaln(n - k_small + 1)
    return np.where((k >= 0) & (k <= n), out, -np.inf)


# --- elementary observables -------------------------------------------------

def magnetization(config: SpinConfig) -> int:
    return 2 * config.code.bit_count() - config.n


def overlap(c1: SpinConfig, c2: SpinConfig) -> int:
    if c1.n != c2.n:
        raise ValueError(f"length mismatch: {c1.n} vs {c2.n}")
    return c1.n - 2 * (c1.code ^ c2.code).bit_count()


def group_sums(config: SpinConfig, part: TwoGroupPartition) -> tuple[int, int]:
    part.check(config.n)
    m1, m2 = part.masks()
    return (2 * (config.code & m1).bit_count() - part.n1,
            2 * (config.code & m2).bit_count() - part.n2)


def cw_log_weight(params: ModelParams, config: SpinConfig) -> float:
    """log mu_CW(x) = beta s^2 / (2N)."""
    if config.n != params.n:
        raise ValueError("configuration length differs from N")
    s = magnetization(config)
    return params.beta * (s * s) / (2.0 * params.n)


def bg_log_weight(params: ModelParams, graph, config: SpinConfig) -> float:
    """log mu_BG(x) = beta / (2Np) * sum_{i,j} eps_ij x_i x_j (self-loops included)."""
    if not (config.n == params.n == graph.n):
        raise ValueError("graph, configuration and params must share N")
    # same operation order as cw_log_weight, so p = 1 on the complete graph agrees bit for bit
    return params.beta * bond_sum(graph, config) / (2.0 * params.n * params.p)


def bond_sum(graph, config: SpinConfig) -> int:
    """Integer sum_{i,j} eps_ij x_i x_j."""
    x = config.spins().astype(np.int64)
    adj = graph.dense().astype(np.int64)
    return int(x @ adj @ x)


# --- exact laws ---------------------------------------------------------------

def _sector_log_weights(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    n = params.n
    s = np.arange(-n, n + 1, 2)
    lw = log_binom(n, (s + n) // 2) + params.beta * s.astype(float) ** 2 / (2.0 * n)
    return s, lw


def z_cw(params: ModelParams, cap: int = SECTOR_CAP) -> float:
    """log Z_CW, summed exactly over magnetization sectors."""
    if params.n > cap:
        raise CapExceeded(f"n={params.n} exceeds the sector cap {cap}")
    return float(logsumexp(_sector_log_weights(params)[1]))


def cw_exact_magnetization_law(params: ModelParams, cap: int = SECTOR_CAP) -> WeightedLaw:
    """Exact law of the magnetization s under the Curie-Weiss measure."""
    if params.n > cap:
        raise CapExceeded(f"n={params.n} exceeds the sector cap {cap}")
    s, lw = _sector_log_weights(params)
    return WeightedLaw(s.astype(float), lw - logsumexp(lw), normalized=True)


def cw_exact_two_group_law(params: ModelParams, part: TwoGroupPartition,
                           cap: int = TWO_GROUP_CAP) -> WeightedLaw:
    """Exact joint law of the group sums (s1, s2) under Curie-Weiss.

    Only covering partitions (n1 + n2 == N) are supported here.
    """
    n = params.n
    if not part.covers(n):
        raise ValueError("exact two-group law requires n1 + n2 == N; use enumeration or MCMC")
    if n > cap:
        raise CapExceeded(f"n={n} exceeds the two-group cap {cap}")
    n1, n2 = part.n1, part.n2
    s1 = np.arange(-n1, n1 + 1, 2)
    s2 = np.arange(-n2, n2 + 1, 2)
    lw1 = log_binom(n1, (s1 + n1) // 2)
    lw2 = log_binom(n2, (s2 + n2) // 2)
    tot = (s1[:, None] + s2[None, :]).astype(float)
    lw = lw1[:, None] + lw2[None, :] + params.beta * tot**2 / (2.0 * n)
    grid1, grid2 = np.meshgrid(s1, s2, indexing="ij")
    outcomes = np.column_stack([grid1.ravel(), grid2.ravel()]).astype(float)
    lw = lw.ravel()
    return WeightedLaw(outcomes, lw - logsumexp(lw), normalized=True)


# --- enumeration ----------------------------------------------------------------

def vectorized(fn):
    """Mark ``fn(codes, n) -> values`` as acting on arrays of configuration codes."""
    fn.vectorized = True
    return fn


def per_config(fn: Callable[[SpinConfig], float]):
    """Lift a SpinConfig -> value function to the vectorized observable protocol."""

    @vectorized
    def wrapped(codes, n):
        return np.array([fn(SpinConfig(n, int(c))) for c in codes], dtype=float)

    return wrapped


def code_magnetization(codes: np.ndarray, n: int) -> np.ndarray:
    return 2 * np.bitwise_count(codes).astype(np.int64) - n


@vectorized
def magnetization_obs(codes, n):
    return code_magnetization(codes, n).astype(float)


@vectorized
def standardized_magnetization_obs(codes, n):
    return code_magnetization(codes, n) / math.sqrt(n)


def constant_obs(c: float):
    @vectorized
    def const(codes, n):
        return np.full(len(codes), float(c))

    return const


def magnetization_indicator_obs(target: int):
    @vectorized
    def indicator(codes, n):
        return (code_magnetization(codes, n) == target).astype(float)

    return indicator


def two_group_obs(part: TwoGroupPartition, scale: str = "sqrt"):
    """(s1, s2) divided by (sqrt(n_k) | n_k | 1) for scale = 'sqrt' | 'mean' | 'none'."""
    m1, m2 = part.masks()
    d1, d2 = {"sqrt": (math.sqrt(part.n1), math.sqrt(part.n2)),
              "mean": (part.n1, part.n2), "none": (1, 1)}[scale]

    @vectorized
    def obs(codes, n):
        part.check(n)
        s1 = 2 * np.bitwise_count(codes & np.uint64(m1)).astype(np.int64) - part.n1
        s2 = 2 * np.bitwise_count(codes & np.uint64(m2)).astype(np.int64) - part.n2
        return np.column_stack([s1 / d1, s2 / d2])

    return obs


def evaluate_observable(observable, codes: np.ndarray, n: int) -> np.ndarray:
    if getattr(observable, "vectorized", False):
        return np.asarray(observable(codes, n), dtype=float)
    return per_config(observable)(codes, n)


def enumerate_log_weights(params: ModelParams, graph=None, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Unnormalized log Gibbs weight of every configuration, indexed by code.

    ``graph=None`` selects Curie-Weiss; otherwise the Bovier-Gayrard weights of
    that graph realization.
    """
    n = params.n
    if n > cap:
        raise CapExceeded(f"n={n} exceeds the enumeration cap {cap}")
    if graph is None:
        s = code_magnetization(np.arange(1 << n, dtype=np.uint64), n).astype(float)
        return params.beta * (s * s) / (2.0 * n)
    if graph.n != n:
        raise ValueError("graph and params must share N")
    return params.beta * enumerate_bond_sums(graph).astype(float) / (2.0 * n * params.p)


def enumerate_bond_sums(graph) -> np.ndarray:
    """sum_{i,j} eps_ij x_i x_j for every configuration code (exact integers)."""
    return _kernels.all_bond_sums(graph.dense())


def enumerate_pushforward(params: ModelParams, observable, graph=None,
                          cap: int = ENUMERATION_CAP) -> WeightedLaw:
    """Exact image law of ``observable`` under CW (graph=None) or BG on ``graph``."""
    lw = enumerate_log_weights(params, graph, cap)
    codes = np.arange(1 << params.n, dtype=np.uint64)
    values = evaluate_observable(observable, codes, params.n)
    return WeightedLaw.from_log_weights(values, lw)
