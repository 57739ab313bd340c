"""Synthetic data for the GLM and Gaussian-mixture experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..denoisers import ChannelSpec, PriorSpec
from ..errors import DomainError
from ..glm_amp import GlmProblem
from .rng import stream


def sample_prior(prior: PriorSpec, size, rng: np.random.Generator):
    if prior.kind == "gauss_bernoulli":
        return rng.standard_normal(size) * (rng.random(size) < prior.rho)
    if prior.kind == "rademacher":
        return np.where(rng.random(size) < 0.5, 1.0, -1.0)
    if prior.kind == "gaussian":
        return prior.mean + np.sqrt(prior.variance) * rng.standard_normal(size)
    return np.abs(np.sqrt(prior.variance) * rng.standard_normal(size))


def sample_channel(channel: ChannelSpec, z, rng: np.random.Generator):
    noise = np.sqrt(channel.true_delta) * rng.standard_normal(z.shape)
    if channel.kind == "gaussian":
        return z + noise
    return np.where(z + noise >= 0, 1.0, -1.0)


def generate_glm(N, M, prior: PriorSpec, channel: ChannelSpec, rng: np.random.Generator, x0=None):
    """One GLM instance with Phi_ij ~ N(0, 1/N); ``x0`` is drawn from the prior unless given."""
    if N < 1 or M < 0:
        raise DomainError("need N >= 1 and M >= 0")
    if x0 is None:
        x0 = sample_prior(prior, N, rng)
    Phi = rng.standard_normal((M, N)) / np.sqrt(N)
    y = sample_channel(channel, Phi @ x0, rng)
    return GlmProblem(Phi, y, prior, channel, x0)


def batch_size(N, alpha_b):
    M_b = int(round(alpha_b * N))
    if M_b < 1:
        raise DomainError(f"alpha_b={alpha_b} gives an empty batch at N={N}")
    return M_b


def generate_glm_stream(N, alpha_b, num_batches, prior: PriorSpec, channel: ChannelSpec, seed, experiment="glm"):
    """Batches sharing one ground truth; batch k uses its own random stream."""
    x0 = sample_prior(prior, N, stream(seed, experiment, 0))
    M_b = batch_size(N, alpha_b)
    return [generate_glm(N, M_b, prior, channel, stream(seed, experiment, k + 1), x0=x0) for k in range(num_batches)]


@dataclass
class GmmData:
    """Y is N x M (columns are data points), U the N x R centroids, labels in {0..R-1}."""

    Y: np.ndarray
    U: np.ndarray
    labels: np.ndarray
    delta: float

    @property
    def V(self):
        R = self.U.shape[1]
        return np.eye(R)[self.labels]


def generate_gmm(N, M, R, delta, rng: np.random.Generator, U=None, prior_U: PriorSpec | None = None):
    """Y = U V^T / sqrt(N) + sqrt(delta) W with uniform one-hot rows of V."""
    if N < 1 or M < 0 or R < 1 or delta < 0:
        raise DomainError("need N >= 1, M >= 0, R >= 1, delta >= 0")
    if U is None:
        U = sample_prior(prior_U or PriorSpec.gaussian(), (N, R), rng)
    labels = rng.integers(0, R, size=M)
    Y = U[:, labels] / np.sqrt(N) + np.sqrt(delta) * rng.standard_normal((N, M))
    return GmmData(Y, U, labels, float(delta))


def generate_gmm_stream(N, alpha_b, num_batches, R, delta, seed, experiment="gmm", prior_U=None):
    U = sample_prior(prior_U or PriorSpec.gaussian(), (N, R), stream(seed, experiment, 0))
    M_b = batch_size(N, alpha_b)
    return [generate_gmm(N, M_b, R, delta, stream(seed, experiment, k + 1), U=U) for k in range(num_batches)]
