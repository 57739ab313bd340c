"""Streaming approximate message passing for GLMs and low-rank clustering."""

from .denoisers import ChannelSpec, PriorSpec, channel_gout, prior_denoise
from .errors import ConfigError, DivergenceError, DomainError
from .glm_amp import GlmProblem, StreamAccumulator, adf, amp_offline_gaussian, gamp, mini_amp, vb_mean_field
from .lowrank_amp import (ClusterAccumulator, LowRankProblem, gmm_stream_cluster, lowrank_amp, lowrank_amp_batch,
                          minibatch_kmeans, onehot_denoise_V, permutation_matched_losses)
from .quadrature import QuadratureRule

__all__ = [
    "ChannelSpec", "PriorSpec", "channel_gout", "prior_denoise",
    "ConfigError", "DivergenceError", "DomainError",
    "GlmProblem", "StreamAccumulator", "adf", "amp_offline_gaussian", "gamp", "mini_amp", "vb_mean_field",
    "ClusterAccumulator", "LowRankProblem", "gmm_stream_cluster", "lowrank_amp", "lowrank_amp_batch",
    "minibatch_kmeans", "onehot_denoise_V", "permutation_matched_losses",
    "QuadratureRule",
]
