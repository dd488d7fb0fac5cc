"""Limit objects for the two-group observables: LLN mixture, CLT covariance, Gaussians."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import erfc


def m_beta(beta: float, tol: float = 1e-12) -> float:
    """Non-negative solution of x = tanh(beta x) that carries the LLN limit.

    For beta <= 1 the only solution is 0.  For beta > 1 the positive root is
    bracketed away from 0 using x - tanh(beta x) ~ (1 - beta) x + beta^3 x^3 / 3.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if beta <= 1:
        return 0.0
    g = lambda x: x - math.tanh(beta * x)
    lo = 0.5 * math.sqrt(3.0 * (beta - 1.0) / beta**3)
    while g(lo) >= 0:
        lo *= 0.5
    x = optimize.brentq(g, lo, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    if abs(g(x)) > tol:
        raise ArithmeticError(f"root finding for m(beta={beta}) did not reach tolerance")
    return x


@dataclass
class LimitLaw:
    """Either a finite point mixture or a Gaussian on R^d."""

    kind: str
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    atoms: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        if self.kind == "point-mixture":
            self.weights = np.asarray(self.weights, dtype=float)
            self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
            if abs(self.weights.sum() - 1) > 1e-12 or np.any(self.weights < 0):
                raise ValueError("mixture weights must be non-negative and sum to 1")
        elif self.kind == "gaussian":
            self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if not np.allclose(self.cov, self.cov.T, atol=0, rtol=1e-14):
                raise ValueError("covariance must be symmetric")
            if np.linalg.eigvalsh(self.cov).min() < -1e-12:
                raise ValueError("covariance must be positive semi-definite")
        else:
            raise ValueError(f"unknown limit kind {self.kind!r}")

    @classmethod
    def gaussian(cls, mean, cov) -> "LimitLaw":
        return cls("gaussian", mean=mean, cov=cov)

    @classmethod
    def mixture(cls, weights, atoms) -> "LimitLaw":
        return cls("point-mixture", weights=weights, atoms=atoms)

    @property
    def dim(self) -> int:
        return self.mean.size if self.kind == "gaussian" else self.atoms.shape[1]

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.multivariate_normal(self.mean, self.cov, size=size)
        idx = rng.choice(len(self.weights), size=size, p=self.weights)
        return self.atoms[idx]

    def expectation(self, h, order: int = 80) -> float:
        """E h(Y) for ``h`` acting on an (n, d) array.

        Gaussians use tensor Gauss-Hermite quadrature with ``order`` nodes per axis.
        """
        if self.kind == "point-mixture":
            return float(np.dot(self.weights, h(self.atoms)))
        nodes, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / w.sum()
        d = self.dim
        grids = np.meshgrid(*([nodes] * d), indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        wz = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij")).reshape(d, -1), axis=0)
        chol = np.linalg.cholesky(self.cov + 0.0)
        y = self.mean + z @ chol.T
        return float(np.dot(wz, h(y)))


def lln_limit(beta: float) -> LimitLaw:
    """(1/2)(delta_{(-m,-m)} + delta_{(m,m)}); a single atom at the origin when m = 0."""
    m = m_beta(beta)
    if m == 0.0:
        return LimitLaw.mixture([1.0], [[0.0, 0.0]])
    return LimitLaw.mixture([0.5, 0.5], [[-m, -m], [m, m]])


def clt_covariance(alpha1: float, alpha2: float, beta: float) -> np.ndarray:
    """Limit covariance of (s1/sqrt(n1), s2/sqrt(n2)) for group fractions alpha1, alpha2."""
    if beta >= 1:
        raise ValueError("the two-group CLT needs beta < 1")
    if beta < 0 or alpha1 < 0 or alpha2 < 0 or alpha1 + alpha2 > 1 + 1e-12:
        raise ValueError("need beta >= 0, alpha_k >= 0 and alpha1 + alpha2 <= 1")
    k = beta / (1.0 - beta)
    off = math.sqrt(alpha1 * alpha2) * k
    return np.array([[1.0 + alpha1 * k, off], [off, 1.0 + alpha2 * k]])


def clt_limit(alpha1: float, alpha2: float, beta: float) -> LimitLaw:
    return LimitLaw.gaussian(np.zeros(2), clt_covariance(alpha1, alpha2, beta))


def gaussian_cdf_1d(x, mean: float = 0.0, variance: float = 1.0):
    if variance <= 0:
        raise ValueError("variance must be positive")
    z = (np.asarray(x, dtype=float) - mean) / math.sqrt(2.0 * variance)
    return 0.5 * erfc(-z)


def _std_bvn_cdf(x: float, y: float, rho: float) -> tuple[float, float]:
    """P(Z1 <= x, Z2 <= y) for standard normals with correlation rho, plus error bound."""
    if x == -np.inf or y == -np.inf:
        return 0.0, 0.0
    if x == np.inf:
        return float(gaussian_cdf_1d(y)), 0.0
    if y == np.inf:
        return float(gaussian_cdf_1d(x)), 0.0
    r = math.sqrt(1.0 - rho * rho)
    integrand = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) * 0.5 * math.erfc(-(y - rho * z) / (r * math.sqrt(2)))
    lo = max(-40.0, min(x, 0.0) - 40.0)
    val, err = integrate.quad(integrand, lo, x, epsabs=1e-13, epsrel=1e-12, limit=200,
                              points=[0.0] if lo < 0.0 < x else None)
    return val, err


def gaussian_rect_prob_2d(rect, mean, cov, return_error: bool = False):
    """P(a1 < xi1 <= b1, a2 < xi2 <= b2) for xi ~ N(mean, cov).

    ``rect = ((a1, b1), (a2, b2))``; infinite bounds allowed.  Each corner CDF
    is an adaptive 1-D quadrature of the density against the exact conditional
    normal CDF; the summed quadrature error estimate is returned on request.
    """
    cov = np.asarray(cov, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if cov.shape != (2, 2):
        raise ValueError("need a 2x2 covariance")
    sd = np.sqrt(np.diag(cov))
    if np.any(sd <= 0):
        raise ValueError("degenerate covariance")
    rho = cov[0, 1] / (sd[0] * sd[1])
    if 1.0 - rho * rho <= 1e-14:
        raise ValueError("degenerate covariance")
    (a1, b1), (a2, b2) = rect
    z = lambda v, k: (v - mean[k]) / sd[k]
    total, err = 0.0, 0.0
    for x, sx in ((b1, 1), (a1, -1)):
        for y, sy in ((b2, 1), (a2, -1)):
            val, e = _std_bvn_cdf(z(x, 0), z(y, 1), rho)
            total += sx * sy * val
            err += e
    total = min(1.0, max(0.0, total))
    return (total, err) if return_error else total
