"""Inference engines for generalised linear models y ~ P(y | Phi x).

Two AMP paths are provided.  The Gaussian-likelihood fast path keeps a
single scalar precision A and variance V per iteration; GAMP keeps them per
component and supports any channel.  Streaming (Mini-AMP) runs either path
batch by batch with the prior replaced by the effective prior

    P_X(x) exp(-Lam x^2 / 2 + Theta x)

built from the converged (A, B) of earlier batches.  ADF is GAMP with one
sample and one iteration per step; the mean-field VB baseline is the same
machinery with the posterior variances dropped from the residual.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .denoisers import ChannelSpec, PriorSpec, channel_gout, prior_denoise
from .errors import DivergenceError, DomainError
from .state_evolution.glm import effective_delta


@dataclass
class GlmProblem:
    Phi: np.ndarray
    y: np.ndarray
    prior: PriorSpec
    channel: ChannelSpec
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        M, N = self.Phi.shape
        if self.y.shape[0] != M:
            raise DomainError(f"y has {self.y.shape[0]} entries but Phi has {M} rows")
        if N == 0:
            raise DomainError("Phi needs at least one column")
        if not (np.all(np.isfinite(self.Phi)) and np.all(np.isfinite(self.y))):
            raise DomainError("Phi and y must be finite")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
            if self.x0.shape[0] != N:
                raise DomainError("x0 length does not match the columns of Phi")

    @property
    def M(self):
        return self.Phi.shape[0]

    @property
    def N(self):
        return self.Phi.shape[1]

    @property
    def alpha(self):
        return self.M / self.N

    def split(self, batch_size):
        """Consecutive row blocks of ``batch_size`` rows (last one may be shorter)."""
        if batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        return [GlmProblem(self.Phi[i:i + batch_size], self.y[i:i + batch_size], self.prior, self.channel, self.x0)
                for i in range(0, self.M, batch_size)]


@dataclass(frozen=True)
class StreamAccumulator:
    """Natural parameters of the effective prior: sums of past (A, B)."""

    Lam: float | np.ndarray
    Theta: np.ndarray
    batches_processed: int = 0

    @classmethod
    def empty(cls, N, vector=False):
        return cls(np.zeros(N) if vector else 0.0, np.zeros(N), 0)

    @property
    def is_vector(self):
        return np.ndim(self.Lam) > 0

    def accumulate(self, A, B):
        if np.any(np.asarray(A) < 0):
            raise DomainError("accumulated precision increments must be non-negative")
        Lam = self.Lam + A
        if not self.is_vector and np.ndim(A) == 0:
            Lam = float(Lam)
        return StreamAccumulator(Lam, self.Theta + B, self.batches_processed + 1)

    def as_vector(self):
        if self.is_vector:
            return self
        return StreamAccumulator(np.full(self.Theta.shape, self.Lam), self.Theta.copy(), self.batches_processed)


@dataclass
class AmpState:
    x_hat: np.ndarray
    V: float | np.ndarray
    A: float | np.ndarray
    B: np.ndarray
    t: int
    z: np.ndarray | None = None
    g: np.ndarray | None = None


@dataclass
class AmpRunReport:
    """Per-batch traces: ``iteration_mse[k][t]`` is the MSE after iteration t of batch k (t = 0 is the start)."""

    batch_mse: list = field(default_factory=list)
    iteration_mse: list = field(default_factory=list)
    iteration_V: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    trajectories: list | None = None
    delta_hat: list = field(default_factory=list)

    def _start_batch(self, record):
        self.iteration_mse.append([])
        self.iteration_V.append([])
        if record:
            if self.trajectories is None:
                self.trajectories = []
            self.trajectories.append([])

    def _log(self, x_hat, V, x0, record):
        if x0 is not None:
            self.iteration_mse[-1].append(float(np.mean((x_hat - x0) ** 2)))
        self.iteration_V[-1].append(float(np.mean(V)))
        if record:
            self.trajectories[-1].append(x_hat.copy())

    def _end_batch(self, x_hat, x0, its, ok, t0):
        self.batch_mse.append(float(np.mean((x_hat - x0) ** 2)) if x0 is not None else float("nan"))
        self.iterations.append(its)
        self.converged.append(ok)
        self.wall_time.append(time.perf_counter() - t0)


def _check_design(Phi):
    M, N = Phi.shape
    if M * N >= 1000:
        col = float(np.mean(Phi * Phi)) * N
        if not 0.8 < col < 1.25:
            warnings.warn(f"Phi entries have variance {col:.3g}/N; the fast path assumes 1/N", RuntimeWarning,
                          stacklevel=3)


def _finite_or_raise(state, report, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite state at iteration {state.t}", last_state=state, report=report)


def _blend(new, old, damping):
    return new if damping == 1.0 else damping * new + (1.0 - damping) * old


def _amp_scalar_batch(Phi, y, prior, delta, acc, t_max, tol, x0, report, record, damping=1.0):
    """One batch of the scalar-variance AMP; returns (x_hat, A, B, V)."""
    t0 = time.perf_counter()
    M, N = Phi.shape
    alpha = M / N
    d = effective_delta(delta)
    out = prior_denoise(prior, acc.Lam, acc.Theta)
    x_hat = np.broadcast_to(out.mean, (N,)).astype(float)
    V = float(np.mean(out.variance))
    z = np.zeros(M)
    V_prev = V
    A, B = 0.0, np.zeros(N)
    report._start_batch(record)
    report._log(x_hat, V, x0, record)
    state = AmpState(x_hat, V, A, B, 0, z=z)
    ok = False
    t = 0
    for t in range(1, t_max + 1):
        onsager = z * (V / (d + V_prev)) if t > 1 else 0.0
        z = y - Phi @ x_hat + onsager
        A = alpha / (d + V)
        B = A * x_hat + Phi.T @ z / (d + V)
        _finite_or_raise(state, report, B)
        out = prior_denoise(prior, acc.Lam + A, acc.Theta + B)
        x_new = _blend(out.mean, x_hat, damping)
        V_new = _blend(float(np.mean(out.variance)), V, damping)
        _finite_or_raise(state, report, x_new, V_new, z)
        step = float(np.mean(np.abs(x_new - x_hat)))
        V_prev, V, x_hat = V, V_new, x_new
        state = AmpState(x_hat, V, A, B, t, z=z)
        report._log(x_hat, V, x0, record)
        if step < tol:
            ok = True
            break
    report._end_batch(x_hat, x0, t, ok, t0)
    return x_hat, A, B, V


def _gamp_batch(Phi, y, prior, channel, acc, t_max, tol, x0, report, record, damping=1.0):
    """One batch of vector GAMP; ``acc`` must hold a vector Lam.

    For probit channels the iteration also stops once the mean posterior
    variance falls below 1e-8 of the prior's.  At that point every margin
    is huge in units of sqrt(delta + V), the messages g and dg underflow,
    and one more step would wipe out the estimate: exact recovery is not a
    fixed point of the finite-size iteration, which otherwise cycles.
    """
    t0 = time.perf_counter()
    M, N = Phi.shape
    collapse = 1e-8 * prior.prior_variance() if channel.kind == "probit" else 0.0
    Phi2 = Phi * Phi
    out = prior_denoise(prior, acc.Lam, acc.Theta)
    x_hat = np.broadcast_to(out.mean, (N,)).astype(float)
    s_hat = np.broadcast_to(out.variance, (N,)).astype(float)
    g = np.zeros(M)
    A, B = np.zeros(N), np.zeros(N)
    report._start_batch(record)
    report._log(x_hat, s_hat, x0, record)
    state = AmpState(x_hat, s_hat, A, B, 0, g=g)
    ok = False
    t = 0
    if M == 0:
        report._end_batch(x_hat, x0, 0, True, t0)
        return x_hat, A, B, s_hat
    for t in range(1, t_max + 1):
        V = Phi2 @ s_hat
        omega = Phi @ x_hat - V * g
        if channel.kind == "gaussian" and channel.delta == 0:
            V = np.maximum(V, effective_delta(0.0))
        g, dg = channel_gout(channel, y, omega, V)
        A = -(Phi2.T @ dg)
        B = Phi.T @ g + A * x_hat
        _finite_or_raise(state, report, A, B)
        out = prior_denoise(prior, acc.Lam + A, acc.Theta + B)
        x_new = _blend(out.mean, x_hat, damping)
        s_new = _blend(out.variance, s_hat, damping)
        _finite_or_raise(state, report, x_new, s_new)
        step = float(np.mean(np.abs(x_new - x_hat)))
        x_hat, s_hat = x_new, s_new
        state = AmpState(x_hat, s_hat, A, B, t, g=g)
        report._log(x_hat, s_hat, x0, record)
        if step < tol or float(np.mean(s_hat)) < collapse:
            ok = True
            break
    report._end_batch(x_hat, x0, t, ok, t0)
    return x_hat, A, B, s_hat


def amp_offline_gaussian(problem: GlmProblem, t_max=200, tol=1e-13, record=False, damping=1.0):
    """Offline AMP with scalar variances for a Gaussian channel."""
    if problem.channel.kind != "gaussian":
        raise DomainError("the scalar fast path needs a gaussian channel")
    _check_design(problem.Phi)
    report = AmpRunReport()
    acc = StreamAccumulator.empty(problem.N)
    x_hat, *_ = _amp_scalar_batch(problem.Phi, problem.y, problem.prior, problem.channel.delta, acc, t_max, tol,
                                  problem.x0, report, record, damping)
    return x_hat, report


def gamp(problem: GlmProblem, t_max=200, tol=1e-13, record=False, damping=1.0):
    """Offline GAMP with per-component variances, any supported channel."""
    report = AmpRunReport()
    acc = StreamAccumulator.empty(problem.N, vector=True)
    x_hat, *_ = _gamp_batch(problem.Phi, problem.y, problem.prior, problem.channel, acc, t_max, tol, problem.x0,
                            report, record, damping)
    return x_hat, report


def mini_amp(batches, prior: PriorSpec | None = None, channel: ChannelSpec | None = None, t_max=200, tol=1e-13,
             engine="auto", accumulator: StreamAccumulator | None = None, record=False, damping=1.0):
    """Streaming AMP over a sequence of GlmProblem batches sharing the columns.

    ``engine`` is ``"fast"`` (scalar variances, Gaussian channel),
    ``"gamp"`` (vector variances) or ``"auto"``.  ``t_max`` may be an int or
    a per-batch sequence.  Returns (x_hat, accumulator, report).
    """
    batches = list(batches)
    if not batches:
        raise DomainError("need at least one batch")
    prior = prior or batches[0].prior
    channel = channel or batches[0].channel
    N = batches[0].N
    if any(b.N != N for b in batches):
        raise DomainError("all batches must share the number of columns")
    if engine == "auto":
        engine = "fast" if channel.kind == "gaussian" else "gamp"
    if engine not in ("fast", "gamp"):
        raise DomainError(f"unknown engine {engine!r}")
    if engine == "fast" and channel.kind != "gaussian":
        raise DomainError("the scalar fast path needs a gaussian channel")
    t_maxes = [t_max] * len(batches) if np.ndim(t_max) == 0 else list(t_max)
    acc = accumulator or StreamAccumulator.empty(N, vector=(engine == "gamp"))
    if engine == "gamp":
        acc = acc.as_vector()
    report = AmpRunReport()
    x_hat = prior_denoise(prior, acc.Lam, acc.Theta).mean * np.ones(N)
    for k, batch in enumerate(batches):
        try:
            if engine == "fast":
                if batch.M:
                    _check_design(batch.Phi)
                x_hat, A, B, _ = _amp_scalar_batch(batch.Phi, batch.y, prior, channel.delta, acc, t_maxes[k], tol,
                                                   batch.x0, report, record, damping)
            else:
                x_hat, A, B, _ = _gamp_batch(batch.Phi, batch.y, prior, channel, acc, t_maxes[k], tol, batch.x0,
                                             report, record, damping)
        except DivergenceError as err:
            err.report = report
            raise
        acc = acc.accumulate(A, B)
    return x_hat, acc, report


def adf(Phi, y, prior: PriorSpec, channel: ChannelSpec, x0=None, accumulator: StreamAccumulator | None = None,
        record_every=0):
    """Assumed density filtering: one sample, one GAMP step, accumulate.

    Rows of ``Phi`` that are identically zero carry no information and are
    skipped.  With ``record_every = n > 0`` the MSE after every n-th sample
    is returned in the report's ``batch_mse`` list.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    M, N = Phi.shape
    acc = (accumulator or StreamAccumulator.empty(N, vector=True)).as_vector()
    Lam, Theta = acc.Lam.copy(), acc.Theta.copy()
    report = AmpRunReport()
    out = prior_denoise(prior, Lam, Theta)
    x_hat, s_hat = out.mean * np.ones(N), out.variance * np.ones(N)
    for k in range(M):
        phi = Phi[k]
        if np.any(phi != 0.0):
            V = float(phi * phi @ s_hat)
            if channel.kind == "gaussian" and channel.delta == 0:
                V = max(V, effective_delta(0.0))
            g, dg = channel_gout(channel, y[k], float(phi @ x_hat), V)
            A = -(phi * phi) * dg
            B = phi * g + A * x_hat
            Lam += A
            Theta += B
            out = prior_denoise(prior, Lam, Theta)
            if not (np.all(np.isfinite(out.mean)) and np.all(np.isfinite(out.variance))):
                raise DivergenceError(f"non-finite state at sample {k}", last_state=x_hat, report=report)
            x_hat, s_hat = out.mean, out.variance
        if record_every and x0 is not None and (k + 1) % record_every == 0:
            report.batch_mse.append(float(np.mean((x_hat - x0) ** 2)))
    return x_hat, StreamAccumulator(Lam, Theta, acc.batches_processed + M), report


def _vb_batch(Phi, y, prior, delta, acc, t_max, tol, order, x0, report, x_start=None):
    t0 = time.perf_counter()
    M, N = Phi.shape
    d = effective_delta(delta)
    col2 = np.einsum("ij,ij->j", Phi, Phi)
    A = col2 / d
    out = prior_denoise(prior, acc.Lam, acc.Theta)
    x_hat = (np.broadcast_to(out.mean, (N,)) if x_start is None else x_start).astype(float).copy()
    s_hat = np.broadcast_to(out.variance, (N,)).astype(float).copy()
    r = y - Phi @ x_hat
    Lam = np.broadcast_to(acc.Lam, (N,))
    report._start_batch(False)
    report._log(x_hat, s_hat, x0, False)
    ok = False
    t = 0
    for t in range(1, t_max + 1):
        old = x_hat.copy()
        if order == "sequential":
            for i in range(N):
                ci = Phi[:, i]
                b = (ci @ r + col2[i] * x_hat[i]) / d
                o = prior_denoise(prior, Lam[i] + A[i], acc.Theta[i] + b)
                r -= ci * (o.mean - x_hat[i])
                x_hat[i] = o.mean
                s_hat[i] = o.variance
        else:
            B = Phi.T @ r / d + A * x_hat
            o = prior_denoise(prior, Lam + A, acc.Theta + B)
            x_hat, s_hat = o.mean, o.variance
            r = y - Phi @ x_hat
        if not np.all(np.isfinite(x_hat)):
            raise DivergenceError(f"non-finite VB state at sweep {t}", last_state=old, report=report)
        report._log(x_hat, s_hat, x0, False)
        if np.mean(np.abs(x_hat - old)) < tol:
            ok = True
            break
    B = Phi.T @ (y - Phi @ x_hat) / d + A * x_hat
    report._end_batch(x_hat, x0, t, ok, t0)
    return x_hat, s_hat, A, B


def vb_mean_field(batches, prior: PriorSpec | None = None, delta=None, learn_noise=False, t_max=200, tol=1e-13,
                  order="sequential", accumulator: StreamAccumulator | None = None):
    """Mean-field VB, offline (one GlmProblem) or streaming (a sequence).

    Coordinates are updated in ascending order (``order="parallel"``
    updates all of them at once, which is GAMP with V = 0).  With
    ``learn_noise`` the noise variance is re-estimated after each batch as
    (|y - Phi x|^2 + sum_i |Phi_i|^2 s_i) / M and used for the next one.
    Returns (x_hat, accumulator, report).
    """
    if isinstance(batches, GlmProblem):
        batches = [batches]
    batches = list(batches)
    prior = prior or batches[0].prior
    if batches[0].channel.kind != "gaussian":
        raise DomainError("mean-field VB is implemented for the gaussian channel")
    if order not in ("sequential", "parallel"):
        raise DomainError(f"unknown update order {order!r}")
    delta = batches[0].channel.delta if delta is None else float(delta)
    N = batches[0].N
    acc = (accumulator or StreamAccumulator.empty(N, vector=True)).as_vector()
    report = AmpRunReport()
    x_hat = prior_denoise(prior, acc.Lam, acc.Theta).mean * np.ones(N)
    for batch in batches:
        x_hat, s_hat, A, B = _vb_batch(batch.Phi, batch.y, prior, delta, acc, t_max, tol, order, batch.x0, report)
        acc = acc.accumulate(A, B)
        if learn_noise and batch.M:
            res = batch.y - batch.Phi @ x_hat
            delta = float((res @ res + np.einsum("ij,ij->j", batch.Phi, batch.Phi) @ s_hat) / batch.M)
        report.delta_hat.append(delta)
    return x_hat, acc, report
