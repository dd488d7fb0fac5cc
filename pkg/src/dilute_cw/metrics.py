"""Distances between laws and replicate-aware covariance estimation.

One-dimensional laws are handled as CDFs: step CDFs (finite discrete laws or
empirical samples, ties merged) and Gaussian CDFs.  Sup-gaps between a step
CDF and anything else are exact: the supremum is attained, or approached, at
a breakpoint, so scanning right values and left limits at every breakpoint
suffices.  Only Gaussian-vs-Gaussian falls back to numerical maximization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .limits import LimitLaw, gaussian_cdf_1d, gaussian_rect_prob_2d
from .model import WeightedLaw

LEVY_TOL = 1e-12


class StepCDF:
    """Right-continuous step CDF given by sorted atoms and cumulative masses."""

    def __init__(self, points, cumulative):
        points = np.asarray(points, dtype=float)
        cumulative = np.asarray(cumulative, dtype=float)
        if points.ndim != 1 or points.shape != cumulative.shape or len(points) == 0:
            raise ValueError("points and cumulative values must be matched 1-D arrays")
        if np.any(np.diff(points) <= 0):
            raise ValueError("breakpoints must be strictly increasing (sorted, ties merged)")
        if np.any(np.diff(cumulative) < -1e-15) or cumulative[0] < 0 or abs(cumulative[-1] - 1) > 1e-9:
            raise ValueError("cumulative values must be non-decreasing and end at 1")
        self.points = points
        self.cum = np.concatenate([[0.0], np.minimum(cumulative, 1.0)])

    @classmethod
    def from_law(cls, law: WeightedLaw) -> "StepCDF":
        return cls(*law.cdf_breakpoints())

    @classmethod
    def from_samples(cls, samples, weights=None) -> "StepCDF":
        x = np.asarray(samples, dtype=float).ravel()
        w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
        pts, inv = np.unique(x, return_inverse=True)
        mass = np.bincount(inv, weights=w, minlength=len(pts))
        cum = np.cumsum(mass)
        return cls(pts, cum / cum[-1])

    @property
    def breakpoints(self):
        return self.points

    def __call__(self, x):
        return self.cum[np.searchsorted(self.points, x, side="right")]

    def left(self, x):
        return self.cum[np.searchsorted(self.points, x, side="left")]


class GaussianCDF:
    def __init__(self, mean: float = 0.0, variance: float = 1.0):
        if variance <= 0:
            raise ValueError("variance must be positive")
        self.mean = float(mean)
        self.variance = float(variance)

    breakpoints = None

    def __call__(self, x):
        return gaussian_cdf_1d(x, self.mean, self.variance)

    left = __call__


def as_cdf(obj):
    """Coerce a WeightedLaw, (points, cumulative) pair, 1-D LimitLaw or CDF object."""
    if isinstance(obj, (StepCDF, GaussianCDF)):
        return obj
    if isinstance(obj, WeightedLaw):
        return StepCDF.from_law(obj)
    if isinstance(obj, LimitLaw):
        if obj.dim != 1:
            raise ValueError("need a one-dimensional law")
        if obj.kind == "gaussian":
            return GaussianCDF(obj.mean[0], obj.cov[0, 0])
        law = WeightedLaw(obj.atoms[:, 0], np.log(obj.weights), normalized=True)
        return StepCDF.from_law(WeightedLaw.from_log_weights(law.outcomes, law.log_weights))
    if isinstance(obj, tuple) and len(obj) == 2:
        return StepCDF(*obj)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a CDF")


def _sup_gap(a, b, shift: float) -> float:
    """sup_x [A(x - shift) - B(x)] for CDFs A, B."""
    if a.breakpoints is None and b.breakpoints is None:
        return _sup_gap_smooth(a, b, shift)
    cand = []
    if a.breakpoints is not None:
        cand.append(a.breakpoints + shift)
    if b.breakpoints is not None:
        cand.append(b.breakpoints)
    x = np.concatenate(cand)
    right = a(x - shift) - b(x)
    left = a.left(x - shift) - b.left(x)
    return max(0.0, float(right.max()), float(left.max()))


def _sup_gap_smooth(a: GaussianCDF, b: GaussianCDF, shift: float) -> float:
    sd = math.sqrt(max(a.variance, b.variance))
    lo = min(a.mean + shift, b.mean) - 12 * sd
    hi = max(a.mean + shift, b.mean) + 12 * sd
    grid = np.linspace(lo, hi, 4001)
    vals = a(grid - shift) - b(grid)
    k = int(np.argmax(vals))
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(lambda x: -(a(x - shift) - b(x)), bounds=(left, right),
                          method="bounded", options={"xatol": 1e-13})
    return max(0.0, float(vals[k]), float(-res.fun))


def levy_distance_1d(f, g, tol: float = LEVY_TOL) -> float:
    """Levy distance inf{eps: F(x-eps) - eps <= G(x) <= F(x+eps) + eps for all x}.

    Feasibility of eps is monotone, so eps is bisected on [0, 1].
    """
    f, g = as_cdf(f), as_cdf(g)

    def feasible(eps):
        return max(_sup_gap(f, g, eps), _sup_gap(g, f, eps)) <= eps

    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def ks_distance(f, g) -> float:
    """sup_x |F(x) - G(x)|."""
    f, g = as_cdf(f), as_cdf(g)
    return max(_sup_gap(f, g, 0.0), _sup_gap(g, f, 0.0))


def total_variation(p: WeightedLaw, q: WeightedLaw) -> float:
    """Total variation between two finite laws (outcomes matched exactly)."""
    outcomes = np.concatenate([p.outcomes, q.outcomes])
    axis = 0 if outcomes.ndim == 2 else None
    uniq, inv = np.unique(outcomes, axis=axis, return_inverse=True)
    inv = inv.reshape(-1)
    diff = np.zeros(len(uniq))
    np.add.at(diff, inv[: len(p)], p.probabilities)
    np.add.at(diff, inv[len(p):], -q.probabilities)
    return 0.5 * float(np.abs(diff).sum())


# --- 2-D bounded-Lipschitz surrogate ------------------------------------------------

@dataclass(frozen=True)
class TrigMember:
    """cos(w1 y1) cos(w2 y2) (kind='cc') or sin(w1 y1) sin(w2 y2) (kind='ss')."""

    w1: float
    w2: float
    kind: str

    def __call__(self, y):
        y = np.atleast_2d(y)
        if self.kind == "cc":
            return np.cos(self.w1 * y[:, 0]) * np.cos(self.w2 * y[:, 1])
        return np.sin(self.w1 * y[:, 0]) * np.sin(self.w2 * y[:, 1])

    def gaussian_expectation(self, mean, cov) -> float:
        def char_re(w):
            w = np.asarray(w)
            return math.cos(w @ mean) * math.exp(-0.5 * w @ cov @ w)

        plus = char_re([self.w1, self.w2])
        minus = char_re([self.w1, -self.w2])
        return 0.5 * (plus + minus) if self.kind == "cc" else 0.5 * (minus - plus)


@dataclass(frozen=True)
class SmoothBoxMember:
    """prod_k [Phi((y_k - a_k)/tau) - Phi((y_k - b_k)/tau)], a Gaussian-blurred box."""

    box: tuple
    tau: float

    def __call__(self, y):
        y = np.atleast_2d(y)
        out = np.ones(len(y))
        for k, (a, b) in enumerate(self.box):
            out *= gaussian_cdf_1d((y[:, k] - a) / self.tau) - gaussian_cdf_1d((y[:, k] - b) / self.tau)
        return out

    def gaussian_expectation(self, mean, cov) -> float:
        # blurring by N(0, tau^2 I) turns the box into a rectangle probability
        return gaussian_rect_prob_2d(self.box, mean, np.asarray(cov) + self.tau**2 * np.eye(2))


@dataclass(frozen=True)
class TestFamily:
    version: str
    members: tuple

    def __len__(self):
        return len(self.members)


def default_family() -> TestFamily:
    """Family 'bl-v1': 50 trigonometric products on a 5x5 frequency grid plus 9 blurred boxes.

    Frequencies {0.25, 0.5, 1, 1.5, 2} per axis; boxes are the 3x3 cells cut by
    y_k = +-1, blurred with tau = 0.25.  Every member is bounded by 1.
    """
    freqs = (0.25, 0.5, 1.0, 1.5, 2.0)
    members = [TrigMember(w1, w2, kind) for w1 in freqs for w2 in freqs for kind in ("cc", "ss")]
    edges = ((-np.inf, -1.0), (-1.0, 1.0), (1.0, np.inf))
    members += [SmoothBoxMember((e1, e2), 0.25) for e1 in edges for e2 in edges]
    return TestFamily("bl-v1", tuple(members))


def _expectations_2d(obj, family: TestFamily) -> np.ndarray:
    if isinstance(obj, LimitLaw):
        if obj.dim != 2:
            raise ValueError("need a two-dimensional law")
        if obj.kind == "gaussian":
            return np.array([h.gaussian_expectation(obj.mean, obj.cov) for h in family.members])
        return np.array([float(np.dot(obj.weights, h(obj.atoms))) for h in family.members])
    if isinstance(obj, WeightedLaw):
        if obj.dim != 2:
            raise ValueError("need a two-dimensional law")
        prob = obj.probabilities
        return np.array([float(np.dot(prob, h(obj.outcomes))) for h in family.members])
    y = np.asarray(obj, dtype=float)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError("samples must have shape (n, 2)")
    return np.array([float(h(y).mean()) for h in family.members])


def bl_differences(sample_or_law, reference, family: TestFamily | None = None) -> np.ndarray:
    """|E h(sample) - E h(reference)| for every family member h."""
    family = default_family() if family is None else family
    if len(family) == 0:
        raise ValueError("empty test-function family")
    return np.abs(_expectations_2d(sample_or_law, family) - _expectations_2d(reference, family))


def bl_distance_2d(sample_or_law, reference, family: TestFamily | None = None) -> float:
    """Max over a fixed bounded-Lipschitz family of |E h(P) - E h(Q)|.

    A weak-convergence diagnostic, not the Levy-Prokhorov metric itself.
    """
    return float(bl_differences(sample_or_law, reference, family).max())


# --- covariance ----------------------------------------------------------------------

@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    stderr: np.ndarray | None
    per_replicate: np.ndarray
    replicate_ids: np.ndarray

    @property
    def has_error_bars(self) -> bool:
        return self.stderr is not None


def empirical_covariance(samples, replicate_ids) -> CovarianceEstimate:
    """Pooled within-replicate covariance with between-replicate standard errors.

    Each replicate (graph realization) contributes its own sample covariance;
    the pooled matrix is their sample-size-weighted mean and the standard error
    is the spread of the per-replicate matrices over sqrt(#replicates).  A
    single replicate yields ``stderr=None``.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    ids = np.asarray(replicate_ids)
    if len(ids) != len(y):
        raise ValueError("one replicate id per sample is required")
    labels = np.unique(ids)
    covs, counts = [], []
    for lab in labels:
        block = y[ids == lab]
        if len(block) < 2:
            raise ValueError(f"replicate {lab!r} has fewer than two samples")
        covs.append(np.cov(block, rowvar=False, ddof=1).reshape(y.shape[1], y.shape[1]))
        counts.append(len(block))
    covs = np.array(covs)
    w = np.array(counts, dtype=float) / sum(counts)
    pooled = np.tensordot(w, covs, axes=1)
    if len(labels) < 2:
        return CovarianceEstimate(pooled, None, covs, labels)
    se = covs.std(axis=0, ddof=1) / math.sqrt(len(labels))
    return CovarianceEstimate(pooled, se, covs, labels)
