"""Deterministic performance predictions for the AMP engines."""

from .glm import SETrajectory, asymptotic_mse_slr, denoiser_stats, se_adf_ode, se_mini, se_offline
from .lowrank import LowRankSETrajectory, se_lowrank

__all__ = ["SETrajectory", "asymptotic_mse_slr", "denoiser_stats", "se_adf_ode", "se_mini", "se_offline",
           "LowRankSETrajectory", "se_lowrank"]
