"""State evolution for streaming low-rank AMP on the Gaussian mixture model.

Rows of U follow a Gaussian prior, rows of V are uniform one-hot labels and
the data channel is Gaussian with variance ``delta`` (beta = 1/delta).  On
the Bayes-optimal line the recursion over R x R overlap matrices reads

    A_U = (lam_V + alpha_b * m_V(M_U / delta)) / delta
    M_U = E[u eta_U(A_U, B_U)^T]

with m_V(A) = E[v eta_V(A, B_V)^T].  ``lam_V`` accumulates the converged
increments batch after batch.

One-hot expectations under a permutation-symmetric precision reduce to 1-D
integrals through the Gumbel-max identity: if X_c = s 1[c = 1] + sqrt(s) xi_c
then E softmax(X)_1 = P(argmax_c (X_c + G_c) = 1) for i.i.d. Gumbel G, and
E log sum_c exp(X_c) = E max_c (X_c + G_c) - Euler gamma.  The CDF of
sqrt(s) xi + G is a Gaussian convolution of the Gumbel CDF, done on a
uniform grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.signal import fftconvolve
from scipy.special import ndtr

from ..denoisers import PriorSpec
from ..errors import DomainError
from ..quadrature import normal_panels

# Below this signal-to-noise the one-hot integrals use their first-order expansion.
SMALL_S = 1e-10


def ansatz_coefficients(M):
    """(a, b) with M = a I + b J, read from the first row."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 1:
        return float(M[0, 0]), 0.0
    return float(M[0, 0] - M[0, 1]), float(M[0, 1])


def ansatz_matrix(a, b, R):
    return a * np.eye(R) + b * np.ones((R, R))


@dataclass
class OverlapMatrices:
    """Converged overlaps of one batch.

    ``lam_V`` is the sum of the M_V of earlier batches (overlap units; the
    U-side precision is (lam_V + M_V) / delta).
    """

    M_U: np.ndarray
    M_V: np.ndarray
    lam_V: np.ndarray

    @property
    def R(self):
        return self.M_U.shape[0]

    @property
    def a_U(self):
        return ansatz_coefficients(self.M_U)[0]

    @property
    def b_U(self):
        return ansatz_coefficients(self.M_U)[1]

    @property
    def a_V(self):
        return ansatz_coefficients(self.M_V)[0]

    @property
    def b_V(self):
        return ansatz_coefficients(self.M_V)[1]

    def is_symmetric(self, tol=1e-12):
        return all(np.allclose(M, M.T, atol=tol, rtol=0) for M in (self.M_U, self.M_V, self.lam_V))


_GH_Z, _GH_W = hermegauss(48)
_GH_W = _GH_W / _GH_W.sum()
_H = 0.02


def _gumbel_cdf(x):
    return np.exp(-np.exp(-x))


def _gumbel_pdf(x):
    return np.exp(-x - np.exp(-x))


def _grid(s, R):
    sig = np.sqrt(s)
    lo = -6.0 - 9.0 * sig
    hi = s + 9.0 * sig + 40.0 + np.log(R)
    return lo + _H * np.arange(int(np.ceil((hi - lo) / _H)) + 1)


def _smooth(fn, t, sig):
    """E fn(t - sig * xi), xi ~ N(0, 1), on the uniform grid ``t``."""
    if sig <= 2.0:
        return fn(t[:, None] - sig * _GH_Z[None, :]) @ _GH_W
    half = int(np.ceil(9.0 * sig / _H))
    k = _H * np.arange(-half, half + 1)
    kern = _H * np.exp(-0.5 * (k / sig) ** 2) / (sig * np.sqrt(2 * np.pi))
    ext = t[0] + _H * np.arange(-half, len(t) + half)
    return fftconvolve(fn(ext), kern, mode="valid")


def onehot_true_weight(s, R):
    """q(s) = E softmax(s e_1 + sqrt(s) xi)_1 with xi ~ N(0, I_R)."""
    if R == 1:
        return 1.0
    if s < 0:
        raise DomainError("s must be non-negative")
    if s == 0:
        return 1.0 / R
    if s < SMALL_S:
        return 1.0 / R + s * (R - 1) / R**2
    sig = np.sqrt(s)
    t = _grid(s, R)
    F = np.clip(_smooth(_gumbel_cdf, t, sig), 0.0, 1.0)
    f1 = np.clip(_smooth(_gumbel_pdf, t - s, sig), 0.0, None)
    return float(_H * np.sum(f1 * F ** (R - 1)))


def onehot_log_partition_excess(s, R):
    """E log(e^{s + sqrt(s) xi_1} + sum_{c >= 2} e^{sqrt(s) xi_c})."""
    if s < 0:
        raise DomainError("s must be non-negative")
    if s < SMALL_S:
        # first-order expansion of E log-sum-exp around s = 0
        return float(np.log(R) + s / R + 0.5 * s * (1.0 - 1.0 / R))
    sig = np.sqrt(s)
    t = _grid(s, R)
    F = np.clip(_smooth(_gumbel_cdf, t, sig), 0.0, 1.0)
    F1 = np.clip(_smooth(_gumbel_cdf, t - s, sig), 0.0, 1.0)
    FM = F1 * F ** (R - 1)
    # E max = t0 + int_{t0}^inf (1 - F_M) dt with F_M(t0) negligible
    g = 1.0 - FM
    emax = t[0] + _H * (np.sum(g) - 0.5 * (g[0] + g[-1]))
    return float(emax - np.euler_gamma)


def label_accuracy(s, R):
    """P(argmax of the posterior is the true label) = E_z Phi(z + sqrt(s))^(R-1)."""
    z, w = normal_panels()
    return float(np.dot(w, ndtr(z + np.sqrt(max(s, 0.0))) ** (R - 1)))


def _check_prior(prior_U: PriorSpec):
    if prior_U.kind != "gaussian" or prior_U.mean != 0.0:
        raise DomainError("low-rank state evolution supports the zero-mean gaussian prior_U only")


def gaussian_overlap_U(A, variance=1.0):
    """M_U = E[u eta_U(A, B)^T] = s2 A (A + I / s2)^-1 for u ~ N(0, s2 I)."""
    A = np.asarray(A, dtype=float)
    R = A.shape[0]
    M = variance * np.linalg.solve((A + np.eye(R) / variance).T, A.T).T
    return 0.5 * (M + M.T)


def onehot_overlap_ansatz(A_V):
    """m_V(A) = E[v eta_V(A, A v + A^{1/2} xi)^T] for A = a I + b J."""
    R = A_V.shape[0]
    a, _ = ansatz_coefficients(A_V)
    q = onehot_true_weight(max(a, 0.0), R)
    off = (1.0 - q) / (R - 1) if R > 1 else 0.0
    return ansatz_matrix(q - off, off, R) / R


def _sqrtm_psd(A):
    w, Q = np.linalg.eigh(0.5 * (A + A.T))
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def onehot_overlap_full(A_V, order=24):
    """m_V for a general PSD precision, by enumeration of the true label and tensor Gauss-Hermite (R <= 3)."""
    A_V = np.asarray(A_V, dtype=float)
    R = A_V.shape[0]
    if R > 3:
        raise DomainError("full-matrix one-hot expectations are limited to R <= 3")
    z, w = hermegauss(order)
    w = w / w.sum()
    xi = np.array(list(itertools.product(z, repeat=R)))
    wt = np.prod(np.array(list(itertools.product(w, repeat=R))), axis=1)
    S = _sqrtm_psd(A_V)
    M = np.zeros((R, R))
    for k in range(R):
        logits = -0.5 * np.diag(A_V)[None, :] + A_V[:, k][None, :] + xi @ S.T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        M[k] = wt @ p
    return M / R


@dataclass
class LowRankSETrajectory:
    R: int
    delta: float
    alpha_b: float
    batches: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    @property
    def overlap(self):
        """Cluster-discriminating overlap a_U per batch (zero when undetectable)."""
        return np.array([o.a_U for o in self.batches])

    @property
    def centroid_mse(self):
        return np.array([(np.trace(np.eye(self.R)) - np.trace(o.M_U)) / self.R for o in self.batches])

    @property
    def label_accuracy(self):
        return np.array([label_accuracy(o.a_U / self.delta, self.R) for o in self.batches])

    @property
    def alphas(self):
        return self.alpha_b * np.arange(1, len(self.batches) + 1)


class _AnsatzOps:
    """Overlap maps on (a, b) coefficients; exact zeros stay exact by symmetry."""

    def __init__(self, R, var):
        self.R, self.var = R, var

    def U(self, M):
        a, b = M
        R, v = self.R, self.var
        perp = v * v * a / (v * a + 1.0)
        along = v * v * (a + R * b) / (v * (a + R * b) + 1.0)
        return np.array([perp, (along - perp) / R])

    def V(self, M_over_delta):
        R = self.R
        q = onehot_true_weight(max(M_over_delta[0], 0.0), R)
        off = (1.0 - q) / (R - 1) if R > 1 else 0.0
        if M_over_delta[0] <= 0.0:
            q = off = 1.0 / R
        return np.array([q - off, off]) / R

    def seed(self, R):
        return np.array([1.0, 0.0])

    def perp(self, M):
        return M[0]

    def matrix(self, M):
        return ansatz_matrix(M[0], M[1], self.R)

    def coerce(self, M):
        return np.array(ansatz_coefficients(M))


class _FullOps:
    def __init__(self, R, var):
        self.R, self.var = R, var

    def U(self, M):
        return gaussian_overlap_U(M, self.var)

    def V(self, M_over_delta):
        return onehot_overlap_full(M_over_delta)

    def seed(self, R):
        return np.eye(R)

    def perp(self, M):
        return ansatz_coefficients(M)[0]

    def matrix(self, M):
        return np.array(M, dtype=float)

    def coerce(self, M):
        return np.array(M, dtype=float)


def se_lowrank(R, delta, prior_U: PriorSpec, alpha_b, num_batches, use_ansatz=True, seed=1e-6,
               t_max=1000, tol=1e-12, lam_V0=None, M_U0=None):
    """Streaming low-rank state evolution.

    Each batch is first iterated from the overlap implied by the
    accumulated ``lam_V`` plus ``seed`` on the identity part, the
    infinitesimal information carried by a random initialisation.  If the
    seed dies out the batch is re-solved from the unseeded start, so the
    uninformative fixed point is reported exactly instead of as a decayed
    remnant of the seed.  ``lam_V`` accumulates the converged increments.
    ``M_U0`` overrides the first batch's starting overlap.
    """
    if R < 1:
        raise DomainError("R must be >= 1")
    if not delta > 0 or alpha_b < 0:
        raise DomainError("need delta > 0 and alpha_b >= 0")
    _check_prior(prior_U)
    if use_ansatz and not prior_U.permutation_symmetric:
        raise DomainError("the aI + bJ ansatz needs a permutation-symmetric prior")
    ops = _AnsatzOps(R, prior_U.variance) if use_ansatz else _FullOps(R, prior_U.variance)
    lam = ops.coerce(np.zeros((R, R)) if lam_V0 is None else lam_V0)
    traj = LowRankSETrajectory(R=R, delta=float(delta), alpha_b=float(alpha_b))

    def solve(M_U, probe=False):
        its = 0
        M_V = alpha_b * ops.V(M_U / delta)
        for its in range(1, t_max + 1):
            M_V = alpha_b * ops.V(M_U / delta)
            M_new = ops.U((lam + M_V) / delta)
            change = np.max(np.abs(M_new - M_U))
            shrinking = ops.perp(M_new) < ops.perp(M_U)
            M_U = M_new
            if change <= tol:
                break
            if probe and its == 1 and shrinking:
                # the identity part follows a 1-D increasing map, so a first
                # decrease means the seed decays all the way
                return M_U, M_V, -its
        return M_U, M_V, its

    for k in range(num_batches):
        if k == 0 and M_U0 is not None:
            M_U, M_V, its = solve(ops.coerce(M_U0))
        else:
            start = ops.U(lam / delta)
            M_U, M_V, its = solve(start + seed * ops.seed(R), probe=True)
            if its < 0 or ops.perp(M_U) < ops.perp(start) + seed:
                M_U, M_V, extra = solve(start)
                its = abs(its) + extra

        traj.batches.append(OverlapMatrices(ops.matrix(M_U), ops.matrix(M_V), ops.matrix(lam)))
        traj.iterations.append(its)
        lam = lam + M_V
    return traj


def gaussian_log_partition_U(A, variance=1.0):
    """E log Z_U(A, B) for u ~ N(0, s2 I), B ~ N(A u, A): -1/2 logdet(I + s2 A) + s2 tr(A) / 2."""
    A = np.asarray(A, dtype=float)
    sign, logdet = np.linalg.slogdet(np.eye(A.shape[0]) + variance * A)
    if sign <= 0:
        raise DomainError("A must be positive semi-definite")
    return -0.5 * logdet + 0.5 * variance * np.trace(A)


def onehot_log_partition(A_V):
    """E log Z_V(A, A v + A^{1/2} xi) for uniform one-hot v and A = a I + b J."""
    R = A_V.shape[0]
    a, b = ansatz_coefficients(A_V)
    return -np.log(R) - 0.5 * a + 0.5 * b + onehot_log_partition_excess(max(a, 0.0), R)
