"""Low-rank AMP for Gaussian-mixture clustering, batch and streaming.

Data columns are points: Y = U V^T / sqrt(N) + sqrt(Delta) W with Y of shape
N x M_b, centroids U (N x R) and one-hot labels V (M_b x R).  The Gaussian
likelihood gives the effective channel J = Y / (sqrt(N) Delta) and
beta = 1 / (N Delta).  One AMP step reads

    B_U = J V^t - beta U^{t-1} Sigma_V^t        A_U = beta V^tT V^t
    U^t = eta_U(Lam + A_U, Theta + B_U)         Sigma_U = sum_i Cov(U_i)
    B_V = J^T U^t - beta V^t Sigma_U            A_V = beta U^tT U^t
    V^{t+1} = eta_V(A_V, B_V)                   Sigma_V = sum_j Cov(V_j)

where (Lam, Theta) are the accumulated natural parameters of U from the
batches already seen; they are zero for a single offline batch.  With this
normalisation A_U is O(alpha_b / Delta), matching the overlap scale of the
low-rank state evolution.
"""

from __future__ import annotations

import itertools
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .denoisers import PriorSpec, linear_response_covariance, truncated_mean_field_denoise
from .errors import DivergenceError, DomainError

STOP_TOL = 1e-7
MAX_ITERATIONS = 50
INIT_BATCHES = 5
EXHAUSTIVE_MAX_R = 8


@dataclass
class LowRankProblem:
    Y: np.ndarray
    R: int
    delta: float
    prior_U: PriorSpec = field(default_factory=PriorSpec.gaussian)

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.R < 1:
            raise DomainError("R must be >= 1")
        if not np.all(np.isfinite(self.Y)):
            raise DomainError("Y must be finite")
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if self.prior_U.kind not in ("gaussian", "truncated_nonneg_gaussian"):
            raise DomainError("prior_U must be gaussian or truncated_nonneg_gaussian")

    @property
    def N(self):
        return self.Y.shape[0]

    @property
    def M(self):
        return self.Y.shape[1]


@dataclass(frozen=True)
class EffectiveChannel:
    J: np.ndarray
    beta: float

    @classmethod
    def gaussian(cls, Y, delta):
        N = Y.shape[0]
        return cls(Y / (np.sqrt(N) * delta), 1.0 / (N * delta))


@dataclass(frozen=True)
class ClusterAccumulator:
    """Accumulated natural parameters of the centroid posterior."""

    Lam: np.ndarray
    Theta: np.ndarray
    batches_processed: int = 0

    @classmethod
    def empty(cls, N, R):
        return cls(np.zeros((R, R)), np.zeros((N, R)), 0)

    @property
    def shape(self):
        return self.Theta.shape

    def accumulate(self, A, B):
        A = np.asarray(A, dtype=float)
        if not np.allclose(A, A.T, atol=1e-10 * (1.0 + np.abs(A).max())):
            raise DomainError("A_U must be symmetric")
        if np.linalg.eigvalsh(0.5 * (A + A.T)).min() < -1e-10 * (1.0 + np.abs(A).max()):
            raise DomainError("A_U must be positive semidefinite")
        return ClusterAccumulator(self.Lam + 0.5 * (A + A.T), self.Theta + B, self.batches_processed + 1)


@dataclass
class LowRankState:
    U_hat: np.ndarray
    Sigma_U: np.ndarray
    V_hat: np.ndarray
    Sigma_V: np.ndarray
    A_U: np.ndarray | None = None
    B_U: np.ndarray | None = None
    A_V: np.ndarray | None = None
    B_V: np.ndarray | None = None
    t: int = 0
    converged: bool = False


def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def onehot_denoise_V(A, B):
    """Posterior over the R basis vectors with weights exp(-A_kk / 2 + B_k).

    ``B`` may be one R-vector or an (M, R) stack; the covariance
    diag(p) - p p^T is returned with the matching leading shape.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise DomainError("onehot_denoise_V needs finite inputs")
    p = _softmax_rows(B - 0.5 * np.diag(A))
    cov = p[..., :, None] * (np.eye(p.shape[-1]) - p[..., None, :])
    return p, cov


def _eta_V(A, B):
    p = _softmax_rows(B - 0.5 * np.diag(A))
    return p, np.diag(p.sum(axis=0)) - p.T @ p


def _eta_U(prior, A, B, warm_start=None):
    """Posterior means (N x R) and summed covariance of the centroids."""
    N, R = B.shape
    if prior.kind == "gaussian":
        P = np.eye(R) / prior.variance + A
        C = np.linalg.inv(P)
        C = 0.5 * (C + C.T)
        mean = (B + prior.mean / prior.variance) @ C
        return mean, N * C
    # diagonal floor keeps the coordinate denoiser defined when a cluster
    # carries no weight yet
    A = A + np.diag(np.maximum(1e-12 - np.diag(A), 0.0))
    mean, var, _ = truncated_mean_field_denoise(prior, A, B, warm_start=warm_start)
    return mean, linear_response_covariance(A, var)


def _check_state(state, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite low-rank AMP state at iteration {state.t}", last_state=state)


def initial_state(problem: LowRankProblem, acc: ClusterAccumulator, V_init=None, U_init=None):
    """Starting point of a batch.

    Without ``V_init`` the labels start from the posterior given the
    centroids implied by ``acc`` (uniform when the accumulator is empty).
    """
    N, R = problem.N, problem.R
    ch = EffectiveChannel.gaussian(problem.Y, problem.delta)
    if U_init is None:
        if acc.batches_processed:
            U_init, _ = _eta_U(problem.prior_U, acc.Lam, acc.Theta)
        else:
            U_init = np.zeros((N, R))
    U_init = np.asarray(U_init, dtype=float)
    if V_init is None:
        V_hat, Sigma_V = _eta_V(ch.beta * U_init.T @ U_init, ch.J.T @ U_init)
    else:
        V_hat = np.asarray(V_init, dtype=float)
        Sigma_V = np.diag(V_hat.sum(axis=0)) - V_hat.T @ V_hat
    return LowRankState(U_init, np.zeros((R, R)), V_hat, Sigma_V)


def lowrank_amp_batch(problem: LowRankProblem, acc: ClusterAccumulator | None = None, t_max=MAX_ITERATIONS,
                      tol=STOP_TOL, V_init=None, U_init=None, record=False):
    """Run low-rank AMP on one batch; returns (state, updated accumulator, trace).

    Stops once mean|dU| + mean|dV| < ``tol`` or after ``t_max`` steps.
    ``trace`` lists (U_hat, V_hat) per iteration when ``record`` is set.
    """
    N, M, R = problem.N, problem.M, problem.R
    acc = acc or ClusterAccumulator.empty(N, R)
    if acc.shape != (N, R):
        raise DomainError(f"accumulator has shape {acc.shape}, batch needs {(N, R)}")
    ch = EffectiveChannel.gaussian(problem.Y, problem.delta)
    state = initial_state(problem, acc, V_init, U_init)
    U_prev, V_hat, Sigma_V = state.U_hat, state.V_hat, state.Sigma_V
    trace = []
    for t in range(1, t_max + 1):
        B_U = ch.J @ V_hat - ch.beta * U_prev @ Sigma_V
        A_U = ch.beta * V_hat.T @ V_hat
        U_hat, Sigma_U = _eta_U(problem.prior_U, acc.Lam + A_U, acc.Theta + B_U, warm_start=U_prev)
        B_V = ch.J.T @ U_hat - ch.beta * V_hat @ Sigma_U
        A_V = ch.beta * U_hat.T @ U_hat
        _check_state(state, U_hat, B_V, A_V)
        V_new, Sigma_V_new = _eta_V(A_V, B_V)
        change = np.mean(np.abs(U_hat - U_prev)) + np.mean(np.abs(V_new - V_hat))
        state = LowRankState(U_hat, Sigma_U, V_new, Sigma_V_new, A_U, B_U, A_V, B_V, t, change < tol)
        if record:
            trace.append((U_hat.copy(), V_new.copy()))
        U_prev, V_hat, Sigma_V = U_hat, V_new, Sigma_V_new
        if state.converged:
            break
    return state, acc.accumulate(state.A_U, state.B_U), trace


def lowrank_amp(problem: LowRankProblem, t_max=MAX_ITERATIONS, tol=STOP_TOL, V_init=None, U_init=None, record=False):
    """Offline low-rank AMP: a single batch with an empty accumulator."""
    state, _, trace = lowrank_amp_batch(problem, None, t_max, tol, V_init, U_init, record)
    return state, trace


def kmeans_pp_centers(X, R, rng: np.random.Generator):
    """k-means++ seeding on the rows of ``X``."""
    M = X.shape[0]
    idx = [int(rng.integers(M))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, R):
        total = d2.sum()
        j = int(rng.choice(M, p=d2 / total)) if total > 0 else int(rng.integers(M))
        idx.append(j)
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return X[idx].copy()


def _sq_distances(X, C):
    return np.sum(X * X, axis=1)[:, None] - 2.0 * X @ C.T + np.sum(C * C, axis=1)[None, :]


def nearest_center(X, C):
    # argmin returns the lowest index on ties
    return np.argmin(_sq_distances(X, C), axis=1)


@dataclass
class ClusterReport:
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    delta_hat: list = field(default_factory=list)
    centroid_mse: list = field(default_factory=list)
    zero_one_loss: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)


def gmm_stream_cluster(batches, R, prior_U: PriorSpec | None = None, delta=None, learn_noise=False,
                       init_batches=INIT_BATCHES, t_max=MAX_ITERATIONS, tol=STOP_TOL, seed=0, truth=None):
    """Streaming clustering of column batches with Mini-AMP.

    During the first ``init_batches`` batches the labels are initialised from
    k-means++ centres drawn from the batch; after the first batch the centres
    are matched to the current centroid estimate so the accumulated
    information keeps its labelling.  Later batches start from the posterior
    given the current centroids.  ``delta`` is the noise variance; with
    ``learn_noise`` it is re-estimated from the residual after every batch
    (starting from the first batch's variance when ``delta`` is None).
    ``truth`` = (U0, labels per batch) enables per-batch loss tracking.

    Returns (U_hat, labels per batch, report).
    """
    prior_U = prior_U or PriorSpec.gaussian()
    if delta is None and not learn_noise:
        raise DomainError("delta is required unless learn_noise is set")
    rng = np.random.default_rng(seed)
    acc = None
    U_hat = None
    labels_out = []
    report = ClusterReport()
    for k, Y in enumerate(batches):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] == 0:
            warnings.warn(f"batch {k} is empty and was skipped", RuntimeWarning, stacklevel=2)
            report.skipped.append(k)
            labels_out.append(np.zeros(0, dtype=int))
            continue
        t0 = time.perf_counter()
        N = Y.shape[0]
        if acc is None:
            acc = ClusterAccumulator.empty(N, R)
            if delta is None:
                delta = float(np.var(Y))
        elif acc.shape[0] != N:
            raise DomainError(f"batch {k} has {N} rows, expected {acc.shape[0]}")
        problem = LowRankProblem(Y, R, delta, prior_U)
        V_init = U_init = None
        if k < init_batches:
            C = kmeans_pp_centers(Y.T, R, rng)
            if U_hat is not None:
                _, perm = linear_sum_assignment(_sq_distances(U_hat.T / np.sqrt(N), C))
                C = C[perm]
            V_init = np.eye(R)[nearest_center(Y.T, C)]
            U_init = np.sqrt(N) * C.T
        state, acc, _ = lowrank_amp_batch(problem, acc, t_max, tol, V_init=V_init, U_init=U_init)
        U_hat = state.U_hat
        labels = np.argmax(state.V_hat, axis=1)
        labels_out.append(labels)
        report.iterations.append(state.t)
        report.converged.append(state.converged)
        if learn_noise:
            resid = Y - U_hat @ state.V_hat.T / np.sqrt(N)
            delta = max(float(np.mean(resid * resid)), np.finfo(float).tiny)
        report.delta_hat.append(float(delta))
        if truth is not None:
            U0, labels0 = truth
            mse, loss = permutation_matched_losses(U_hat, labels, U0, labels0[k])
            report.centroid_mse.append(mse)
            report.zero_one_loss.append(loss)
        report.wall_time.append(time.perf_counter() - t0)
    return U_hat, labels_out, report


@dataclass
class KMeansReport:
    first_pass_labels: list = field(default_factory=list)
    counts: np.ndarray | None = None


def minibatch_kmeans(batches, R, seed=0, second_pass=True, init_variance=1e-3):
    """Mini-batch k-means with per-centre learning rate 1 / count.

    Centres start as N(0, ``init_variance``) draws.  Each batch is assigned
    to the nearest centres first, then every point moves its centre by
    (x - c) / count.  With ``second_pass`` the returned labels are
    recomputed from the final centres.  Returns (centres R x N, labels per
    batch, report).
    """
    batches = [np.atleast_2d(np.asarray(Y, dtype=float)) for Y in batches]
    rng = np.random.default_rng(seed)
    N = batches[0].shape[0]
    C = np.sqrt(init_variance) * rng.standard_normal((R, N))
    counts = np.zeros(R)
    report = KMeansReport()
    for Y in batches:
        X = Y.T
        if X.shape[0] == 0:
            report.first_pass_labels.append(np.zeros(0, dtype=int))
            continue
        lab = nearest_center(X, C)
        for x, c in zip(X, lab):
            counts[c] += 1.0
            C[c] += (x - C[c]) / counts[c]
        report.first_pass_labels.append(lab)
    report.counts = counts
    if second_pass:
        labels = [nearest_center(Y.T, C) if Y.shape[1] else np.zeros(0, dtype=int) for Y in batches]
    else:
        labels = report.first_pass_labels
    return C, labels, report


def permutation_matched_losses(U_hat, labels_hat, U0, labels0):
    """(centroid MSE per entry, 0-1 label loss) under the best relabelling.

    A single permutation of the estimated clusters serves both metrics.  For
    R <= 8 all permutations are searched, minimising the 0-1 loss with the
    centroid MSE as tie-break; larger R uses an assignment on the centroid
    distances.  ``U_hat`` may be None, in which case the MSE is nan.
    """
    labels_hat = np.asarray(labels_hat, dtype=int)
    labels0 = np.asarray(labels0, dtype=int)
    if labels_hat.shape != labels0.shape:
        raise DomainError("label vectors differ in length")
    if U_hat is not None:
        U_hat = np.asarray(U_hat, dtype=float)
        U0 = np.asarray(U0, dtype=float)
        R = U0.shape[1]
        # D[k, l] = squared distance between estimated column k and true column l
        D = _sq_distances(U_hat.T, U0.T)
        scale = U0.size
    else:
        R = int(max(labels_hat.max(initial=0), labels0.max(initial=0))) + 1
        D = np.zeros((R, R))
        scale = 1
    M = labels0.size
    conf = np.zeros((R, R))
    np.add.at(conf, (labels_hat, labels0), 1.0)
    if R <= EXHAUSTIVE_MAX_R:
        perms = np.array(list(itertools.permutations(range(R))))
        rows = np.arange(R)
        hits = conf[rows, perms].sum(axis=1)
        dist = D[rows, perms].sum(axis=1)
        order = np.lexsort((dist, -hits))
        best = perms[order[0]]
    else:
        _, best = linear_sum_assignment(D)
    loss = 1.0 - conf[np.arange(R), best].sum() / M if M else 0.0
    mse = float(D[np.arange(R), best].sum() / scale) if U_hat is not None else float("nan")
    return mse, float(loss)
