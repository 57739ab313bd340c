"""Replica potentials, streaming MMSE and phase diagrams.

The potential over a candidate MSE ``E`` is

    i(E) = (a/2) [log(1 + E/D) - E/(D + E)] + I(Lam(E)) + c

where I(Lam) is the mutual information of the scalar channel
r = x + z / sqrt(Lam), Lam(E) = lam + a/(D + E), and c = 0 offline or
-a/2 per mini-batch.  The -E/(D+E) sign is the one that makes the
stationary points coincide with the state-evolution fixed points (see the
README).  Global minimisers give the MMSE; local minima that AMP gets stuck
in mark a computational gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import ndtr

from .denoisers import ChannelSpec, PriorSpec, channel_log_partition, prior_log_partition
from .errors import DomainError
from .quadrature import QuadratureRule, prior_expectation
from .state_evolution.glm import denoiser_stats, effective_delta, se_mini
from .state_evolution.lowrank import gaussian_log_partition_U, onehot_log_partition


def scalar_mutual_information(prior: PriorSpec, lam, rule=None):
    """I(x; x + z/sqrt(lam)) = E[lam x^2 / 2 - log Z(lam, lam x + sqrt(lam) z)]."""
    if lam <= 0:
        return 0.0
    return prior_expectation(prior, lam, lam, lambda b: (-prior_log_partition(prior, lam, b), 0.0, 0.5 * lam), rule)


def _check(delta, E):
    if not delta > 0:
        raise DomainError("the replica potential needs delta > 0")
    if not E > 0:
        raise DomainError("E must be positive")


def _gaussian_part(alpha, delta, E):
    return 0.5 * alpha * (np.log1p(E / delta) - E / (delta + E))


def irs_offline(prior: PriorSpec, delta, alpha, E, rule=None):
    """Offline replica mutual information for the Gaussian channel.

    The trailing -1/2 of the textbook form cancels against the Gaussian
    normalisation inside the log-expectation, leaving I(Lam) exactly.
    """
    _check(delta, E)
    lam = alpha / (delta + E)
    return _gaussian_part(alpha, delta, E) + scalar_mutual_information(prior, lam, rule)


def irs_mini(prior: PriorSpec, delta, alpha_b, lam, E, rule=None):
    """Per-mini-batch potential given side information of precision ``lam``."""
    _check(delta, E)
    if lam < 0:
        raise DomainError("lam must be non-negative")
    Lam = lam + alpha_b / (delta + E)
    return _gaussian_part(alpha_b, delta, E) + scalar_mutual_information(prior, Lam, rule) - 0.5 * alpha_b


@dataclass(frozen=True)
class GridSpec:
    """Log-spaced E grid; ``upper`` defaults to twice the prior second moment."""

    lower: float = 1e-12
    upper: float | None = None
    points: int = 400

    def grid(self, prior):
        upper = self.upper if self.upper is not None else 2.0 * prior.second_moment()
        return np.logspace(np.log10(self.lower), np.log10(upper), self.points)


@dataclass
class LandscapeScan:
    E: np.ndarray
    values: np.ndarray
    minima: list
    global_min: tuple
    lam: float
    transition: bool = False

    @property
    def n_minima(self):
        return len(self.minima)


def potential_slope(prior: PriorSpec, delta, alpha_b, lam, E, rule=None):
    """d irs_mini / dE = alpha_b (E - mmse(Lam)) / (2 (delta + E)^2)."""
    _check(delta, E)
    Lam = lam + alpha_b / (delta + E)
    return 0.5 * alpha_b * (E - denoiser_stats(prior, Lam, Lam, rule)[0]) / (delta + E) ** 2


def _refine(f, prior, delta, alpha_b, lam, E, i, rule):
    lo, hi = E[max(i - 1, 0)], E[min(i + 1, len(E) - 1)]

    def g(e):
        Lam = lam + alpha_b / (delta + e)
        return e - denoiser_stats(prior, Lam, Lam, rule)[0]

    glo, ghi = g(lo), g(hi)
    if glo < 0 < ghi:
        e = brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    else:
        res = minimize_scalar(lambda t: f(np.exp(t)), bounds=(np.log(lo), np.log(hi)), method="bounded",
                              options={"xatol": 1e-10})
        e = float(np.exp(res.x))
    return float(e), float(f(e))


def scan_landscape(prior: PriorSpec, delta, alpha_b, lam, grid_spec=GridSpec(), rule=None, coexistence_tol=1e-12):
    """Sample irs_mini over the E grid and locate its local minima."""
    rule = rule or QuadratureRule()
    E = grid_spec.grid(prior)
    f = lambda e: irs_mini(prior, delta, alpha_b, lam, e, rule)
    vals = np.array([f(e) for e in E])
    idx = [i for i in range(1, len(E) - 1) if vals[i] < vals[i - 1] and vals[i] < vals[i + 1]]
    # A minimum sitting on the grid boundary counts when it is below its neighbour.
    if vals[0] < vals[1]:
        idx.insert(0, 0)
    if vals[-1] < vals[-2]:
        idx.append(len(E) - 1)
    minima = []
    for i in idx:
        if 0 < i < len(E) - 1:
            minima.append(_refine(f, prior, delta, alpha_b, lam, E, i, rule))
        else:
            minima.append((float(E[i]), float(vals[i])))
    minima.sort()
    best = min(v for _, v in minima)
    near = [(e, v) for e, v in minima if v - best <= coexistence_tol * max(1.0, abs(best))]
    glob = min(near)
    return LandscapeScan(E, vals, minima, glob, float(lam), transition=len(near) > 1)


def classify(scan: LandscapeScan, E_amp, rel_tol=1e-3, abs_tol=1e-9):
    """'optimal' when AMP sits at the global minimum, 'transition' at coexistence."""
    if scan.transition:
        return "transition"
    E_glob = scan.global_min[0]
    return "optimal" if abs(E_amp - E_glob) <= rel_tol * E_glob + abs_tol else "suboptimal"


@dataclass
class MMSECurve:
    lam: np.ndarray
    mmse: np.ndarray
    scans: list = field(default_factory=list, repr=False)


def mmse_recursion(prior: PriorSpec, delta, alpha_b, num_batches, grid_spec=GridSpec(), rule=None, keep_scans=False):
    """Streaming MMSE: global minimiser of irs_mini batch after batch.

    lam_k = lam_{k-1} + alpha_b / (delta + MMSE_k).
    """
    lam = 0.0
    lams, mmses, scans = [], [], []
    for _ in range(num_batches):
        scan = scan_landscape(prior, delta, alpha_b, lam, grid_spec, rule)
        E = scan.global_min[0]
        lam = lam + alpha_b / (delta + E)
        lams.append(lam)
        mmses.append(E)
        if keep_scans:
            scans.append(scan)
    return MMSECurve(np.array(lams), np.array(mmses), scans)


@dataclass
class PhaseDiagram:
    alpha_b: np.ndarray
    batches: np.ndarray
    mmse: np.ndarray
    amp: np.ndarray
    label: np.ndarray

    def rows(self):
        for i, ab in enumerate(self.alpha_b):
            for k, b in enumerate(self.batches):
                yield float(ab), int(b), float(self.mmse[i, k]), float(self.amp[i, k]), str(self.label[i, k])


def phase_diagram(prior: PriorSpec, delta, alpha_bs, num_batches, grid_spec=GridSpec(), rule=None,
                  zero_threshold=1e-6, t_max=2000, rel_tol=1e-3):
    """Tabulate MMSE and Mini-AMP MSE over (alpha_b, batch index)."""
    alpha_bs = np.asarray(alpha_bs, dtype=float)
    mm = np.empty((len(alpha_bs), num_batches))
    amp = np.empty_like(mm)
    lab = np.empty(mm.shape, dtype=object)
    ch = ChannelSpec.gaussian(delta)
    for i, ab in enumerate(alpha_bs):
        mm[i] = mmse_recursion(prior, delta, ab, num_batches, grid_spec, rule).mmse
        amp[i] = se_mini(prior, ch, ab, num_batches, t_max=t_max, rule=rule).E_final
        for k in range(num_batches):
            if amp[i, k] < zero_threshold and mm[i, k] < zero_threshold:
                lab[i, k] = "zero"
            elif amp[i, k] <= mm[i, k] * (1 + rel_tol) + 1e-9:
                lab[i, k] = "optimal"
            else:
                lab[i, k] = "suboptimal"
    return PhaseDiagram(alpha_bs, np.arange(1, num_batches + 1), mm, amp, lab)


def _check_overlap(prior, m):
    rho = prior.second_moment()
    if not (0.0 <= m <= rho):
        raise DomainError(f"overlap m={m} outside [0, {rho}]")
    return rho


def channel_free_entropy(channel: ChannelSpec, m, V, rule=None):
    """E_{y, w, z} log Z_z(y, w, V) with w ~ N(0, m), z ~ N(w, V), y ~ P0(y | z)."""
    rule = rule or QuadratureRule()
    delta0 = channel.true_delta
    if channel.kind == "gaussian":
        d = effective_delta(channel.delta)
        return -0.5 * (np.log(2 * np.pi * (d + V)) + (delta0 + V) / (d + V))
    sm = np.sqrt(max(m, 0.0))
    width = np.sqrt(max(min(delta0, effective_delta(channel.delta)) + V, 1e-300)) / max(sm, 1e-300)
    z, wts = rule.panels([(0.0, width)])
    w = sm * z
    total = 0.0
    for y in (-1.0, 1.0):
        p = ndtr(y * w / np.sqrt(delta0 + V)) if delta0 + V > 0 else (y * w > 0).astype(float)
        lz = channel_log_partition(channel, y, w, V)
        total += np.dot(wts, p * lz)
    return float(total)


def replica_free_energy_glm(prior: PriorSpec, channel: ChannelSpec, m, m_hat, alpha, rule=None):
    """phi(m, m_hat) = m m_hat / 2 - E log Z_x(m_hat, b) - alpha E log Z_z(y, w, rho - m)."""
    rule = rule or QuadratureRule()
    rho = _check_overlap(prior, m)
    if m_hat < 0:
        raise DomainError("m_hat must be non-negative")
    psi = prior_expectation(prior, m_hat, m_hat, lambda b: (prior_log_partition(prior, m_hat, b), 0.0, 0.0), rule)
    return 0.5 * m * m_hat - psi - alpha * channel_free_entropy(channel, m, rho - m, rule)


def replica_free_energy_glm_stream(prior: PriorSpec, channel: ChannelSpec, m, lam, lam_prev, alpha_b, rule=None):
    """Streaming free energy parameterised by the accumulated precision ``lam``."""
    rule = rule or QuadratureRule()
    rho = _check_overlap(prior, m)
    psi = prior_expectation(prior, lam, lam, lambda b: (prior_log_partition(prior, lam, b), 0.0, 0.0), rule)
    return 0.5 * m * (lam - lam_prev) - psi - alpha_b * channel_free_entropy(channel, m, rho - m, rule)


def free_energy_of_overlap(prior: PriorSpec, channel: ChannelSpec, m, alpha, rule=None):
    """phi(m) with m_hat eliminated through its stationarity condition (Gaussian channel)."""
    if channel.kind != "gaussian":
        raise DomainError("closed-form m_hat elimination is only available for the gaussian channel")
    rho = _check_overlap(prior, m)
    m_hat = alpha / (effective_delta(channel.delta) + rho - m)
    return replica_free_energy_glm(prior, channel, m, m_hat, alpha, rule)


def replica_free_energy_lowrank(M_U, M_V, beta, alpha, prior_U: PriorSpec | None = None):
    """(beta/2) Tr M_U M_V^T - E log Z_U(beta M_V) - alpha E log Z_V(beta M_U).

    Gaussian prior on U rows, uniform one-hot V rows; ``M_V`` already
    carries its factor alpha.  Matrices must follow the aI + bJ ansatz on
    the V side.
    """
    var = 1.0 if prior_U is None else prior_U.variance
    M_U = np.asarray(M_U, dtype=float)
    M_V = np.asarray(M_V, dtype=float)
    return (0.5 * beta * np.trace(M_U @ M_V.T) - gaussian_log_partition_U(beta * M_V, var)
            - alpha * onehot_log_partition(beta * M_U))


def replica_free_energy_lowrank_stream(M_U, lam_V, lam_V_prev, beta, alpha_b, prior_U: PriorSpec | None = None):
    """Streaming variant driven by the accumulated overlap ``lam_V``."""
    var = 1.0 if prior_U is None else prior_U.variance
    M_U = np.asarray(M_U, dtype=float)
    inc = np.asarray(lam_V, dtype=float) - np.asarray(lam_V_prev, dtype=float)
    return (0.5 * beta * np.trace(M_U @ inc.T) - gaussian_log_partition_U(beta * np.asarray(lam_V, dtype=float), var)
            - alpha_b * onehot_log_partition(beta * M_U))


def undetectability_threshold(R, delta):
    """alpha_c = R^2 Delta^2 for Gaussian-mixture clustering."""
    if R < 1 or delta < 0:
        raise DomainError("need R >= 1 and delta >= 0")
    return float(R * R * delta * delta)


def min_irs(prior: PriorSpec, delta, alpha, grid_spec=GridSpec(), rule=None):
    """(min_E i(E), argmin) for the offline Gaussian-channel potential."""
    scan = scan_landscape(prior, delta, alpha, 0.0, grid_spec, rule)
    E, v = scan.global_min
    # scan_landscape evaluates the per-batch form; undo its -alpha/2 shift
    return v + 0.5 * alpha, E
