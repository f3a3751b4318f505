"""Random-variate generators for the augmentation variables.

All samplers take a :class:`numpy.random.Generator`.  The scalar kernels are
numba-compiled and draw from the generator's own bit stream, so a single
generator threaded through training fully determines every variate and its
``bit_generator.state`` is all a checkpoint needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

__all__ = [
    "PG_TRUNCATION",
    "HINGE_ZETA_EPS",
    "CholeskyError",
    "PrecisionGaussian",
    "make_rng",
    "pg_mean",
    "sample_polya_gamma",
    "sample_polya_gamma_many",
    "sample_inverse_gaussian",
    "sample_hinge_lambda",
    "sample_hinge_lambda_many",
    "sample_precision_gaussian",
]

PG_TRUNCATION = 200
HINGE_ZETA_EPS = 1e-8

_TRUNC = 0.64
_PI = math.pi
_PI2 = math.pi * math.pi


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a precision matrix is not positive definite."""

    def __init__(self, minor: int):
        self.minor = minor
        super().__init__(f"precision matrix is not positive definite: leading minor of order {minor} failed")


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def pg_mean(b: float, c: float) -> float:
    """Analytic mean of PG(b, c)."""
    if abs(c) < 1e-8:
        return b / 4.0
    return b / (2.0 * c) * math.tanh(c / 2.0)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

_jit = numba.njit(cache=True, error_model="numpy")


@_jit
def _log_norm_cdf(x):
    return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))


@_jit
def _pg_coef(n, x):
    # n-th term of the alternating series for the J*(1, 0) density
    k = (n + 0.5) * _PI
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x > 0.0:
        expnt = -1.5 * (math.log(0.5 * _PI) + math.log(x)) + math.log(k) - 2.0 * (n + 0.5) * (n + 0.5) / x
        return math.exp(expnt)
    return 0.0


@_jit
def _mass_texpon(z):
    # probability of the exponential (right) piece of the proposal mixture
    t = _TRUNC
    fz = 0.125 * _PI2 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    qdivp = 4.0 / _PI * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@_jit
def _rtigauss(rng, z):
    # inverse Gaussian IG(1/z, 1) truncated to (0, TRUNC)
    t = _TRUNC
    x = t + 1.0
    if 1.0 / t > z:
        alpha = 0.0
        while rng.random() > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = rng.standard_normal()
            y *= y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@_jit
def _pg1(rng, c):
    """PG(1, c) by the tilted-Jacobi alternating-series method."""
    z = abs(c) * 0.5
    fz = 0.125 * _PI2 + 0.5 * z * z
    p_right = _mass_texpon(z)
    while True:
        if rng.random() < p_right:
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = _rtigauss(rng, z)
        s = _pg_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _pg_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _pg_coef(n, x)
                if y > s:
                    break


@_jit
def _pg_gamma_sum(rng, b, c, trunc):
    # truncated Gamma-convolution representation, with the mean of the
    # discarded tail added back so the first moment stays unbiased
    cc = c * c / (4.0 * _PI2)
    total = 0.0
    for m in range(1, trunc + 1):
        d = (m - 0.5) * (m - 0.5) + cc
        total += rng.standard_gamma(b) / d
    head_mean = 0.0
    for m in range(1, trunc + 1):
        head_mean += 1.0 / ((m - 0.5) * (m - 0.5) + cc)
    head_mean *= b / (2.0 * _PI2)
    hc = abs(c) * 0.5
    if hc < 1e-8:
        full_mean = b / 4.0
    else:
        full_mean = b / (4.0 * hc) * math.tanh(hc)
    return total / (2.0 * _PI2) + (full_mean - head_mean)


@_jit
def _pg(rng, b, c, trunc):
    nb = round(b)
    if abs(b - nb) < 1e-12 and nb >= 1:
        out = 0.0
        for _ in range(int(nb)):
            out += _pg1(rng, c)
        return out
    return _pg_gamma_sum(rng, b, c, trunc)


@_jit
def _pg_many(rng, b, c, trunc, out):
    for i in range(out.shape[0]):
        out[i] = _pg(rng, b[i], c[i], trunc)
    return out


@_jit
def _ig(rng, mu, shape):
    """Inverse Gaussian by transformation with multiple roots."""
    y = rng.standard_normal()
    y *= y
    mu_y = mu * y
    # the two roots multiply to mu^2; take the smaller one as mu^2 / larger
    # to avoid cancellation
    big = mu + mu * mu_y / (2.0 * shape) + mu / (2.0 * shape) * math.sqrt(4.0 * shape * mu_y + mu_y * mu_y)
    x = mu * mu / big
    if rng.random() <= mu / (mu + x):
        return x
    return big


@_jit
def _hinge_lambda(rng, c, zeta, eps):
    az = abs(zeta)
    if az < eps:
        az = eps
    return 1.0 / _ig(rng, 1.0 / (c * az), 1.0)


@_jit
def _hinge_lambda_many(rng, c, zeta, eps, out):
    for i in range(out.shape[0]):
        out[i] = _hinge_lambda(rng, c[i], zeta[i], eps)
    return out


@_jit
def _ig_many(rng, mu, shape, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _ig(rng, mu, shape)
    return out


@_jit
def _pg_repeat(rng, b, c, trunc, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = _pg(rng, b, c, trunc)
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def sample_polya_gamma(b: float, c: float, rng: np.random.Generator, size: int | None = None,
                       trunc: int = PG_TRUNCATION):
    """Draw from PG(b, c).

    Integer ``b`` sums ``b`` exact PG(1, c) draws; any other positive ``b``
    falls back to the truncated sum-of-gammas construction with ``trunc``
    terms.
    """
    if not b > 0:
        raise ValueError(f"PG shape must be positive, got {b}")
    if size is None:
        return float(_pg_repeat(rng, float(b), float(c), trunc, 1)[0])
    return _pg_repeat(rng, float(b), float(c), trunc, int(size))


def sample_polya_gamma_many(b, c, rng: np.random.Generator, trunc: int = PG_TRUNCATION) -> np.ndarray:
    """Elementwise PG(b[i], c[i]) draws."""
    b = np.ascontiguousarray(b, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if b.shape != c.shape:
        raise ValueError("b and c must have the same shape")
    if b.size and not np.all(b > 0):
        raise ValueError("PG shape must be positive")
    return _pg_many(rng, b, c, trunc, np.empty(b.shape[0]))


def sample_inverse_gaussian(mean_mu: float, shape: float, rng: np.random.Generator, size: int | None = None):
    if not (mean_mu > 0 and shape > 0):
        raise ValueError(f"inverse Gaussian needs positive mean and shape, got ({mean_mu}, {shape})")
    if size is None:
        return float(_ig_many(rng, float(mean_mu), float(shape), 1)[0])
    return _ig_many(rng, float(mean_mu), float(shape), int(size))


def sample_hinge_lambda(c: float, zeta: float, rng: np.random.Generator, eps: float = HINGE_ZETA_EPS) -> float:
    """Draw lambda with 1/lambda ~ IG(1 / (c |zeta|), 1); |zeta| is clamped at ``eps``."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    out = np.empty(1)
    return float(_hinge_lambda_many(rng, np.array([float(c)]), np.array([float(zeta)]), eps, out)[0])


def sample_hinge_lambda_many(c, zeta, rng: np.random.Generator, eps: float = HINGE_ZETA_EPS) -> np.ndarray:
    c = np.ascontiguousarray(c, dtype=np.float64)
    zeta = np.ascontiguousarray(zeta, dtype=np.float64)
    if c.size and not np.all(c > 0):
        raise ValueError("c must be positive")
    return _hinge_lambda_many(rng, c, zeta, eps, np.empty(c.shape[0]))


@dataclass
class PrecisionGaussian:
    """Gaussian N(precision^-1 @ linear_term, precision^-1)."""

    precision: np.ndarray
    linear_term: np.ndarray

    def __post_init__(self):
        self.precision = np.atleast_2d(np.asarray(self.precision, dtype=np.float64))
        self.linear_term = np.atleast_1d(np.asarray(self.linear_term, dtype=np.float64))
        d = self.linear_term.shape[0]
        if self.precision.shape != (d, d):
            raise ValueError(f"precision shape {self.precision.shape} does not match dim {d}")
        scale = max(np.abs(self.precision).max(), 1e-300)
        if np.abs(self.precision - self.precision.T).max() > 1e-10 * scale:
            raise ValueError("precision matrix is not symmetric")

    @property
    def dim(self) -> int:
        return self.linear_term.shape[0]

    def cholesky(self) -> np.ndarray:
        chol, info = lapack.dpotrf(self.precision, lower=1, clean=1)
        if info > 0:
            raise CholeskyError(info)
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        return chol

    def mean(self) -> np.ndarray:
        return cho_solve((self.cholesky(), True), self.linear_term)


def sample_precision_gaussian(g: PrecisionGaussian, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Sample via the Cholesky factor L of the precision (L L^T = precision).

    mean solves L L^T m = linear_term, and m + L^-T eps has covariance
    (L L^T)^-1.  The inverse is never formed.
    """
    chol = g.cholesky()
    mean = cho_solve((chol, True), g.linear_term)
    if size is None:
        eps = rng.standard_normal(g.dim)
        return mean + solve_triangular(chol, eps, lower=True, trans="T")
    eps = rng.standard_normal((g.dim, int(size)))
    return (mean[:, None] + solve_triangular(chol, eps, lower=True, trans="T")).T
