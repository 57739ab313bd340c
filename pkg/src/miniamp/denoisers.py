"""Scalar priors, output channels and their Gaussian-tilted moments.

A prior P_X is tilted by a Gaussian factor in natural parameters,

    q(x | A, B) = P_X(x) exp(-A x^2 / 2 + B x) / Z(A, B),

and the denoiser pair is the mean ``eta = d log Z / dB`` and the variance
``eta' = d eta / dB``.  Output channels P(y | z) are handled through
``g_out(y, w, V) = d/dw log Z_z(y, w, V)`` where Z_z integrates the channel
against N(z; w, V).

Every function here is pure and vectorised over numpy arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, expit, log_ndtr

from .errors import DomainError

_SQRT_2 = np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_LOG_2PI = np.log(2.0 * np.pi)

# Past this many standard deviations into the truncated side the variance
# factor 1 - L(u)(u + L(u)) is taken from its asymptotic series.
_ASYMPTOTIC_CUT = 40.0


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input to a scalar denoiser")


def mills_ratio(u):
    """phi(u) / Phi(u), stable for any real u."""
    u = np.asarray(u, dtype=float)
    return _SQRT_2_OVER_PI / erfcx(-u / _SQRT_2)


def truncated_variance_factor(u):
    """1 - L(u) (u + L(u)) with L the inverse Mills ratio.

    This is the variance of a standard normal conditioned on being above -u.
    For u far below zero the direct formula cancels catastrophically, so the
    asymptotic series in 1/u^2 is used there.
    """
    u = np.asarray(u, dtype=float)
    lam = mills_ratio(u)
    direct = 1.0 - lam * (u + lam)
    t = 1.0 / np.maximum(u * u, _ASYMPTOTIC_CUT**2)
    series = t * (1 + t * (-6 + t * (50 + t * (-518 + t * (6354 - 89782 * t)))))
    out = np.where(u < -_ASYMPTOTIC_CUT, series, direct)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class DenoiserOutput:
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class PriorSpec:
    """Separable prior over a scalar parameter.

    Use the named constructors; ``kind`` is one of ``gauss_bernoulli``,
    ``rademacher``, ``gaussian`` and ``truncated_nonneg_gaussian``.
    """

    kind: str
    rho: float = 1.0
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in _PRIOR_KINDS:
            raise DomainError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gauss_bernoulli" and not (0.0 < self.rho <= 1.0):
            raise DomainError("gauss_bernoulli needs rho in (0, 1]")
        if not self.variance > 0.0:
            raise DomainError("prior variance must be positive")

    @classmethod
    def gauss_bernoulli(cls, rho):
        return cls("gauss_bernoulli", rho=float(rho))

    @classmethod
    def rademacher(cls):
        return cls("rademacher")

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0):
        return cls("gaussian", mean=float(mean), variance=float(variance))

    @classmethod
    def truncated_nonneg_gaussian(cls, variance=1.0):
        return cls("truncated_nonneg_gaussian", variance=float(variance))

    def first_moment(self) -> float:
        return float(prior_denoise(self, 0.0, 0.0).mean)

    def second_moment(self) -> float:
        if self.kind == "gauss_bernoulli":
            return self.rho
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "gaussian":
            return self.variance + self.mean**2
        out = prior_denoise(self, 0.0, 0.0)
        return float(out.variance + out.mean**2)

    def prior_variance(self) -> float:
        out = prior_denoise(self, 0.0, 0.0)
        return float(out.variance)

    @property
    def permutation_symmetric(self) -> bool:
        return True

    def denoise(self, A, B):
        return prior_denoise(self, A, B)

    def log_partition(self, A, B):
        return prior_log_partition(self, A, B)


_PRIOR_KINDS = ("gauss_bernoulli", "rademacher", "gaussian", "truncated_nonneg_gaussian")


def _logcosh(b):
    a = np.abs(b)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def _gb_parts(rho, A, B):
    # Slab component after tilting: N(B/(1+A), 1/(1+A)) with log weight
    # log rho - log(1+A)/2 + B^2 / (2 (1+A)).
    prec = 1.0 + A
    m1 = B / prec
    v1 = 1.0 / prec
    log_slab = np.log(rho) - 0.5 * np.log(prec) + 0.5 * B * m1
    log_spike = np.log1p(-rho) if rho < 1.0 else -np.inf
    return m1, v1, log_slab, log_spike


def prior_log_partition(prior: PriorSpec, A, B):
    """log Z(A, B) of the tilted prior (normalised so that Z(0, 0) = 1)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    _check_finite(A, B)
    if np.any(A < 0) and prior.kind != "gaussian":
        raise DomainError("A must be non-negative")
    kind = prior.kind
    if kind == "gauss_bernoulli":
        _, _, log_slab, log_spike = _gb_parts(prior.rho, A, B)
        return np.logaddexp(log_spike, log_slab)
    if kind == "rademacher":
        return -0.5 * A + _logcosh(B)
    if kind == "gaussian":
        m, s = prior.mean, prior.variance
        prec = A + 1.0 / s
        if np.any(prec <= 0):
            raise DomainError("A + 1/variance must be positive")
        lin = B + m / s
        return -0.5 * np.log(s * prec) + 0.5 * (lin * lin / prec - m * m / s)
    # truncated_nonneg_gaussian with zero location
    s = prior.variance
    prec = A + 1.0 / s
    tau = B / np.sqrt(prec)
    return -0.5 * np.log(s * prec) + 0.5 * tau * tau + log_ndtr(tau) - np.log(0.5)


def prior_denoise(prior: PriorSpec, A, B) -> DenoiserOutput:
    """Mean and variance of P_X(x) exp(-A x^2/2 + B x), normalised."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    _check_finite(A, B)
    if np.any(A < 0) and prior.kind != "gaussian":
        raise DomainError("A must be non-negative")
    kind = prior.kind
    if kind == "gauss_bernoulli":
        m1, v1, log_slab, log_spike = _gb_parts(prior.rho, A, B)
        # responsibility of the slab and its complement, both without 1 - p
        logit = log_slab - log_spike
        p = expit(logit)
        q = expit(-logit)
        mean = p * m1
        var = p * v1 + p * q * m1 * m1
        return DenoiserOutput(mean, var)
    if kind == "rademacher":
        t = np.tanh(B) + 0.0 * A
        return DenoiserOutput(t, 1.0 - t * t)
    if kind == "gaussian":
        m, s = prior.mean, prior.variance
        prec = A + 1.0 / s
        if np.any(prec <= 0):
            raise DomainError("A + 1/variance must be positive")
        return DenoiserOutput((B + m / s) / prec, np.broadcast_to(1.0 / prec, np.broadcast(A, B).shape).copy())
    s = prior.variance
    prec = A + 1.0 / s
    sd = 1.0 / np.sqrt(prec)
    tau = B * sd
    mean = sd * (tau + mills_ratio(tau))
    var = sd * sd * truncated_variance_factor(tau)
    return DenoiserOutput(mean, var)


@dataclass(frozen=True)
class ChannelSpec:
    """Output channel P(y | z).

    ``delta`` is the variance assumed by inference, ``delta0`` the one used
    to generate data (defaults to ``delta``).  For probit, ``delta = 0`` is
    the sign (perceptron) channel.
    """

    kind: str
    delta: float
    delta0: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "probit"):
            raise DomainError(f"unknown channel kind {self.kind!r}")
        if self.delta < 0 or (self.delta0 is not None and self.delta0 < 0):
            raise DomainError("channel variances must be >= 0")

    @classmethod
    def gaussian(cls, delta, delta0=None):
        return cls("gaussian", float(delta), None if delta0 is None else float(delta0))

    @classmethod
    def probit(cls, delta, delta0=None):
        return cls("probit", float(delta), None if delta0 is None else float(delta0))

    @property
    def true_delta(self) -> float:
        return self.delta if self.delta0 is None else self.delta0

    @property
    def bayes_optimal(self) -> bool:
        return self.delta0 is None or self.delta0 == self.delta

    def entropy(self) -> float:
        """Differential entropy of the Gaussian noise, 0.5 log(2 pi e delta)."""
        if self.kind != "gaussian":
            raise DomainError("entropy is only defined here for the gaussian channel")
        if self.delta <= 0:
            raise DomainError("entropy needs delta > 0")
        return 0.5 * np.log(2 * np.pi * np.e * self.delta)


def channel_gout(channel: ChannelSpec, y, omega, V):
    """Return ``(g_out, d g_out / d omega)`` at (y, omega, V)."""
    y = np.asarray(y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    V = np.asarray(V, dtype=float)
    _check_finite(y, omega, V)
    tot = channel.delta + V
    if np.any(tot <= 0):
        raise DomainError("delta + V must be positive")
    if channel.kind == "gaussian":
        g = (y - omega) / tot
        return g, np.broadcast_to(-1.0 / tot, g.shape).copy()
    sd = np.sqrt(tot)
    u = y * omega / sd
    lam = mills_ratio(u)
    g = y * lam / sd
    dg = -lam * (u + lam) / tot
    return g, dg


def channel_log_partition(channel: ChannelSpec, y, omega, V):
    """log of the channel integrated against N(z; omega, V)."""
    y = np.asarray(y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    V = np.asarray(V, dtype=float)
    _check_finite(y, omega, V)
    tot = channel.delta + V
    if np.any(tot <= 0):
        raise DomainError("delta + V must be positive")
    if channel.kind == "gaussian":
        r = y - omega
        return -0.5 * (_LOG_2PI + np.log(tot) + r * r / tot)
    return log_ndtr(y * omega / np.sqrt(tot))


def truncated_mean_field_denoise(prior: PriorSpec, A, B, warm_start=None, tol=1e-10, max_sweeps=200):
    """Mean-field denoiser for the R-dimensional non-negative Gaussian prior.

    Coordinates are updated in ascending order,

        U_k <- eta~(A_kk, B_k - 1/2 sum_{l != k} A_kl U_l),

    with the half weight on the coupling kept exactly as in the reference
    update.  ``B`` may be a single R-vector or an (N, R) stack; rows are
    independent and updated together.

    Returns ``(mean, variances, converged)`` where ``variances`` are the
    per-coordinate eta~' values at the fixed point.  Non-convergence after
    ``max_sweeps`` emits a warning and returns the last iterate.
    """
    if prior.kind != "truncated_nonneg_gaussian":
        raise DomainError("mean-field denoiser expects a truncated_nonneg_gaussian prior")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    _check_finite(A, B)
    single = B.ndim == 1
    B2 = np.atleast_2d(B)
    R = A.shape[0]
    if A.shape != (R, R) or B2.shape[1] != R:
        raise DomainError("A must be R x R and B must have R columns")
    if np.any(np.diag(A) <= 0):
        raise DomainError("diagonal of A must be positive")
    if warm_start is None:
        U = prior_denoise(prior, np.diag(A)[None, :], B2).mean.copy()
    else:
        U = np.array(np.atleast_2d(warm_start), dtype=float, copy=True)
    off = A - np.diag(np.diag(A))
    converged = False
    for _ in range(max_sweeps):
        biggest = 0.0
        for k in range(R):
            field = B2[:, k] - 0.5 * U @ off[k]
            new = prior_denoise(prior, A[k, k], field).mean
            biggest = max(biggest, float(np.max(np.abs(new - U[:, k]), initial=0.0)))
            U[:, k] = new
        if biggest < tol:
            converged = True
            break
    if not converged:
        warnings.warn("mean-field denoiser did not converge", RuntimeWarning, stacklevel=2)
    fields = B2 - 0.5 * U @ off.T
    variances = prior_denoise(prior, np.diag(A)[None, :], fields).variance
    if single:
        return U[0], variances[0], converged
    return U, variances, converged


def linear_response_covariance(A, variances):
    """R x R covariance from per-coordinate mean-field variances.

    Diagonal entries are column sums of ``variances`` (N x R); off-diagonal
    entries are -1/2 A_kl sum_i s_ik s_il.
    """
    A = np.asarray(A, dtype=float)
    s = np.atleast_2d(np.asarray(variances, dtype=float))
    R = s.shape[1]
    if A.shape != (R, R):
        raise DomainError("A must be R x R with R the number of variance columns")
    _check_finite(A, s)
    cov = -0.5 * A * (s.T @ s)
    cov = 0.5 * (cov + cov.T)
    np.fill_diagonal(cov, s.sum(axis=0))
    return cov
