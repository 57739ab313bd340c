"""State evolution for AMP / Mini-AMP on generalised linear models.

Gaussian channel: the general (possibly mismatched) recursion tracks the
accumulated precision ``lam``, the accumulated field variance ``gamma``,
the true MSE ``E`` and the estimated variance ``V``:

    lam_k(t)   = lam_{k-1}   + a_b / (D + V_k(t))
    gamma_k(t) = gamma_{k-1} + a_b (D0 + E_k(t)) / (D + V_k(t))^2
    V_k(t+1)   = E eta'(lam_k(t), lam_k(t) x + sqrt(gamma_k(t)) z)
    E_k(t+1)   = E (eta(...) - x)^2

On the Bayes-optimal line gamma = lam and E = V.  Probit channels use the
Bayes-optimal overlap form with lam incremented by a_b * E[-d_w g].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..denoisers import ChannelSpec, PriorSpec, mills_ratio, prior_denoise
from ..quadrature import QuadratureRule, prior_expectation

# Noiseless channels use this in place of delta = 0 in denominators, so that
# an exactly vanishing MSE cannot produce an infinite precision.
NOISELESS_FLOOR = 1e-30


def effective_delta(delta):
    return max(float(delta), NOISELESS_FLOOR)


def denoiser_stats(prior: PriorSpec, lam, gamma, rule=None, true_prior=None):
    """Return (mse, mean posterior variance, overlap E[x eta]) at (lam, gamma)."""
    rule = rule or QuadratureRule()
    p0 = true_prior or prior

    def stats(b):
        out = prior_denoise(prior, lam, b)
        eta = out.mean
        zero = np.zeros_like(eta)
        c0 = np.stack([eta * eta, out.variance, zero])
        c1 = np.stack([-2.0 * eta, zero, eta])
        c2 = np.array([1.0, 0.0, 0.0])[:, None] if eta.ndim == 1 else np.array([1.0, 0.0, 0.0])[:, None, None]
        return c0, c1, c2

    E, V, m = prior_expectation(p0, lam, gamma, stats, rule)
    return max(E, 0.0), max(V, 0.0), m


def channel_precision(channel: ChannelSpec, E, m, rule=None):
    """E[-d_w g] per sample on the Bayes-optimal line, with V = E.

    Gaussian: 1 / (Delta + E).  Probit: the average over y in {-1, +1} and
    w ~ N(0, m) of lambda(u)(u + lambda(u)) / (Delta + E) weighted by
    P(y | w), which simplifies to 2 E_w phi(u)(u + lambda(u)) / (Delta + E)
    with u = w / sqrt(Delta + E).
    """
    tot = effective_delta(channel.delta) + E
    if channel.kind == "gaussian":
        return 1.0 / tot
    rule = rule or QuadratureRule()
    s = np.sqrt(max(m, 0.0) / tot)
    z, w = rule.panels([(0.0, 1.0 / max(s, 1e-300))])
    u = s * z
    lam = mills_ratio(u)
    phi = np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)
    return float(2.0 * np.dot(w, phi * (u + lam))) / tot


@dataclass
class SETrajectory:
    """Per-batch, per-iteration state-evolution history.

    ``E[k]`` holds E_k(1), ..., E_k(T+1) for batch k (0-based list index);
    ``lam[k]`` holds lam_k(1), ..., lam_k(T).  The ``*_final`` arrays hold
    the frozen end-of-batch values.
    """

    alpha_b: float
    lam: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    E: list = field(default_factory=list)
    V: list = field(default_factory=list)

    @property
    def num_batches(self):
        return len(self.E)

    @property
    def lam_final(self):
        return np.array([l[-1] if len(l) else np.nan for l in self.lam])

    @property
    def gamma_final(self):
        return np.array([g[-1] if len(g) else np.nan for g in self.gamma])

    @property
    def E_final(self):
        return np.array([e[-1] for e in self.E])

    @property
    def V_final(self):
        return np.array([v[-1] for v in self.V])

    @property
    def alphas(self):
        return self.alpha_b * np.arange(1, self.num_batches + 1)

    @property
    def iterations(self):
        return np.array([len(l) for l in self.lam])


def _converged(E_new, E_old, tol):
    return abs(E_new - E_old) <= tol * max(E_old, np.finfo(float).tiny)


def se_mini(prior: PriorSpec, channel: ChannelSpec, alpha_b, num_batches, t_max=2000, tol=1e-12,
            rule=None, true_prior=None, lam0=0.0, gamma0=0.0):
    """Mini-AMP state evolution over ``num_batches`` mini-batches.

    Each batch starts from the frozen (lam, gamma) of the previous one, is
    iterated until the relative change of E drops below ``tol`` or for
    ``t_max`` steps, then its last (lam, gamma) are carried forward.
    """
    if alpha_b < 0:
        raise ValueError("alpha_b must be non-negative")
    rule = rule or QuadratureRule()
    matched = channel.bayes_optimal and true_prior is None
    if channel.kind == "probit" and not matched:
        raise ValueError("probit state evolution is implemented on the Bayes-optimal line only")
    delta = effective_delta(channel.delta)
    delta0 = channel.true_delta
    traj = SETrajectory(alpha_b=float(alpha_b))
    lam_prev, gam_prev = float(lam0), float(gamma0)
    for _ in range(num_batches):
        E, V, m = denoiser_stats(prior, lam_prev, gam_prev if not matched else lam_prev, rule, true_prior)
        if matched:
            V = E
        Es, Vs, lams, gams = [E], [V], [], []
        lam_t, gam_t = lam_prev, gam_prev
        for _ in range(t_max):
            if matched:
                lam_t = lam_prev + alpha_b * channel_precision(channel, E, m, rule)
                gam_t = lam_t
                E_new, _, m = denoiser_stats(prior, lam_t, lam_t, rule)
                V_new = E_new
            else:
                lam_t = lam_prev + alpha_b / (delta + V)
                gam_t = gam_prev + alpha_b * (delta0 + E) / (delta + V) ** 2
                E_new, V_new, m = denoiser_stats(prior, lam_t, gam_t, rule, true_prior)
            lams.append(lam_t)
            gams.append(gam_t)
            done = _converged(E_new, E, tol)
            E, V = E_new, V_new
            Es.append(E)
            Vs.append(V)
            if done:
                break
        traj.lam.append(np.array(lams))
        traj.gamma.append(np.array(gams))
        traj.E.append(np.array(Es))
        traj.V.append(np.array(Vs))
        lam_prev, gam_prev = lam_t, gam_t
    return traj


def se_offline(prior: PriorSpec, channel: ChannelSpec, alpha, t_max=2000, tol=1e-12, rule=None, true_prior=None):
    """Offline state evolution: a single batch holding all the data."""
    return se_mini(prior, channel, alpha, 1, t_max=t_max, tol=tol, rule=rule, true_prior=true_prior)


@dataclass
class ODETrajectory:
    alpha: np.ndarray
    lam: np.ndarray
    E: np.ndarray

    def first_alpha_below(self, threshold):
        idx = np.flatnonzero(self.E < threshold)
        return float(self.alpha[idx[0]]) if idx.size else np.inf


def se_adf_ode(prior: PriorSpec, channel: ChannelSpec, alpha_max, step=1e-3, rule=None):
    """Small-batch limit: RK4 integration of d lam / d alpha = E[-d_w g].

    Bayes-optimal line only; returns lam and the MSE on the alpha grid.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rule = rule or QuadratureRule()

    def state(lam):
        E, _, m = denoiser_stats(prior, lam, lam, rule)
        return E, m

    def rhs(lam):
        E, m = state(lam)
        return channel_precision(channel, E, m, rule)

    n = int(np.ceil(alpha_max / step - 1e-9)) if alpha_max > 0 else 0
    alphas = np.linspace(0.0, n * step, n + 1)
    lams = np.empty(n + 1)
    Es = np.empty(n + 1)
    lam = 0.0
    lams[0] = lam
    Es[0] = state(lam)[0]
    for i in range(n):
        k1 = rhs(lam)
        k2 = rhs(lam + 0.5 * step * k1)
        k3 = rhs(lam + 0.5 * step * k2)
        k4 = rhs(lam + step * k3)
        lam = lam + step * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        lams[i + 1] = lam
        Es[i + 1] = state(lam)[0]
    return ODETrajectory(alphas, lams, Es)


def asymptotic_decay_factor(rho, alpha_b):
    """Per-batch MSE contraction 1 - alpha_b / rho of noiseless sparse regression (0 past rho)."""
    if not (0 < rho <= 1) or alpha_b <= 0:
        raise ValueError("need 0 < rho <= 1 and alpha_b > 0")
    return max(1.0 - alpha_b / rho, 0.0)


def asymptotic_mse_slr(rho, alpha_b, alpha, E0=1.0):
    """Large-alpha MSE law E0 * exp(alpha * log(1 - alpha_b/rho) / alpha_b).

    ``E0`` is the prefactor the law leaves undetermined (returned as is at
    alpha = 0).  The result is exactly 0 once alpha_b >= rho and alpha > 0.
    """
    factor = asymptotic_decay_factor(rho, alpha_b)
    if alpha == 0:
        return float(E0)
    if factor == 0.0:
        return 0.0
    return float(E0 * np.exp(np.log(factor) * alpha / alpha_b))
