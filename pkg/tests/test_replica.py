import numpy as np
import pytest

from miniamp.denoisers import ChannelSpec, PriorSpec
from miniamp.errors import DomainError
from miniamp.replica import (GridSpec, classify, free_energy_of_overlap, irs_mini, irs_offline, min_irs,
                             mmse_recursion, phase_diagram, potential_slope, replica_free_energy_glm,
                             replica_free_energy_lowrank, replica_free_energy_lowrank_stream, scan_landscape,
                             undetectability_threshold)
from miniamp.state_evolution.glm import channel_precision, denoiser_stats, se_mini, se_offline
from miniamp.state_evolution.lowrank import ansatz_coefficients, ansatz_matrix, se_lowrank

GB = PriorSpec.gauss_bernoulli(0.3)


@pytest.mark.parametrize("E", [1e-6, 1e-3, 0.05, 0.4])
def test_potential_slope_matches_finite_difference(E):
    h = 1e-4 * E
    num = (irs_mini(GB, 0.01, 0.35, 2.0, E + h) - irs_mini(GB, 0.01, 0.35, 2.0, E - h)) / (2 * h)
    assert potential_slope(GB, 0.01, 0.35, 2.0, E) == pytest.approx(num, rel=1e-5)


def test_offline_potential_is_batch_potential_without_side_information():
    assert irs_offline(GB, 0.02, 0.7, 0.1) == pytest.approx(irs_mini(GB, 0.02, 0.7, 0.0, 0.1) + 0.35, rel=1e-14)


def test_gaussian_prior_potential_closed_form():
    prior = PriorSpec.gaussian()
    delta, alpha, E = 0.3, 0.8, 0.2
    lam = alpha / (delta + E)
    ref = 0.5 * alpha * (np.log1p(E / delta) - E / (delta + E)) + 0.5 * np.log1p(lam)
    assert irs_offline(prior, delta, alpha, E) == pytest.approx(ref, rel=1e-13)


def test_potential_domain():
    with pytest.raises(DomainError):
        irs_offline(GB, 0.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        irs_mini(GB, 0.1, 1.0, -1.0, 0.1)


def test_landscape_two_minima_then_one():
    curve = mmse_recursion(GB, 1e-8, 0.35, 4, keep_scans=True)
    counts = [s.n_minima for s in curve.scans]
    assert counts[0] == 2 and counts[-1] == 1


def test_landscape_minima_are_fixed_points():
    scan = scan_landscape(GB, 1e-8, 0.35, 0.0)
    for E, _ in scan.minima:
        if E > scan.E[0]:
            Lam = 0.35 / (1e-8 + E)
            assert E == pytest.approx(denoiser_stats(GB, Lam, Lam)[0], rel=1e-9)


def test_classify_labels():
    # the hard phase opens at the third batch of size 0.35
    curve = mmse_recursion(GB, 1e-8, 0.35, 3, keep_scans=True)
    E_amp = se_mini(GB, ChannelSpec.gaussian(1e-8), 0.35, 3).E_final
    assert classify(curve.scans[0], E_amp[0]) == "optimal"
    assert classify(curve.scans[2], E_amp[2]) == "suboptimal"


def test_min_irs_and_offline_mmse():
    value, E = min_irs(GB, 0.01, 1.2)
    assert value == pytest.approx(irs_offline(GB, 0.01, 1.2, E), rel=1e-12)
    E_se = se_offline(GB, ChannelSpec.gaussian(0.01), 1.2).E_final[0]
    assert E == pytest.approx(E_se, rel=1e-6)


def test_phase_diagram_regions():
    pd = phase_diagram(GB, 1e-8, [0.2, 0.35, 0.6], 3, grid_spec=GridSpec(points=200))
    assert list(pd.label[0]) == ["optimal"] * 3
    assert list(pd.label[1]) == ["optimal", "optimal", "suboptimal"]
    assert list(pd.label[2]) == ["zero"] * 3


@pytest.mark.parametrize("channel,prior,alpha", [
    (ChannelSpec.gaussian(0.01), GB, 0.8),
    (ChannelSpec.probit(0.0), PriorSpec.rademacher(), 1.2),
    (ChannelSpec.probit(0.1), PriorSpec.gauss_bernoulli(0.5), 2.0),
], ids=["gauss", "sign", "probit"])
def test_glm_free_energy_stationary_at_se_fixed_point(channel, prior, alpha):
    E = se_offline(prior, channel, alpha, tol=1e-14).E_final[0]
    rho = prior.second_moment()
    m = rho - E
    m_hat = alpha * channel_precision(channel, E, m)
    h = 1e-6
    dm = (replica_free_energy_glm(prior, channel, m + h, m_hat, alpha)
          - replica_free_energy_glm(prior, channel, m - h, m_hat, alpha)) / (2 * h)
    dmh = (replica_free_energy_glm(prior, channel, m, m_hat + h, alpha)
           - replica_free_energy_glm(prior, channel, m, m_hat - h, alpha)) / (2 * h)
    assert abs(dm) < 1e-6 and abs(dmh) < 1e-6


def test_glm_free_energy_and_potential_differ_by_noise_entropy():
    delta, alpha, E = 0.05, 0.9, 0.1
    ch = ChannelSpec.gaussian(delta)
    phi = free_energy_of_overlap(GB, ch, 0.3 - E, alpha)
    assert irs_offline(GB, delta, alpha, E) - phi == pytest.approx(-alpha * ch.entropy(), abs=1e-12)


@pytest.mark.parametrize("R,delta,alpha_b", [(3, 0.15, 0.6), (5, 0.1, 0.3)])
def test_lowrank_stream_free_energy_stationary(R, delta, alpha_b):
    traj = se_lowrank(R, delta, PriorSpec.gaussian(), alpha_b, 3)
    for o in traj.batches:
        x0 = np.array([*ansatz_coefficients(o.M_U), *ansatz_coefficients(o.lam_V + o.M_V)])

        def f(x):
            return replica_free_energy_lowrank_stream(ansatz_matrix(x[0], x[1], R), ansatz_matrix(x[2], x[3], R),
                                                      o.lam_V, 1 / delta, alpha_b)

        h = 1e-6
        grad = [(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(4)]
        assert np.max(np.abs(grad)) < 1e-6


def test_lowrank_offline_free_energy_stationary():
    R, delta, alpha = 3, 0.15, 0.6
    o = se_lowrank(R, delta, PriorSpec.gaussian(), alpha, 1).batches[0]
    x0 = np.array([*ansatz_coefficients(o.M_U), *ansatz_coefficients(o.M_V)])

    def f(x):
        return replica_free_energy_lowrank(ansatz_matrix(x[0], x[1], R), ansatz_matrix(x[2], x[3], R),
                                           1 / delta, alpha)

    h = 1e-6
    grad = [(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(4)]
    assert np.max(np.abs(grad)) < 1e-6


def test_undetectability_threshold():
    assert undetectability_threshold(5, 0.1) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        undetectability_threshold(0, 0.1)


def test_mmse_never_exceeds_se():
    ch = ChannelSpec.gaussian(1e-4)
    se = se_mini(GB, ch, 0.35, 6).E_final
    mm = mmse_recursion(GB, 1e-4, 0.35, 6).mmse
    assert np.all(mm <= se + 1e-9)


def _min_potential_derivative(delta, alpha):
    """Central difference of min_E i over the noise precision 1/delta."""
    g = 1.0 / delta
    h = 1e-4 * g
    return (min_irs(GB, 1.0 / (g + h), alpha)[0] - min_irs(GB, 1.0 / (g - h), alpha)[0]) / (2 * h)


@pytest.mark.parametrize("delta", [0.01, 0.1, 0.5, 1.0])
def test_potential_derivative_is_half_output_mmse(delta):
    alpha = 0.8
    E = min_irs(GB, delta, alpha)[1]
    y_mmse = E / (1.0 + E / delta)
    assert _min_potential_derivative(delta, alpha) == pytest.approx(0.5 * alpha * y_mmse, rel=1e-4)


def test_output_mmse_in_unit_noise_form():
    # E / (1 + delta E) agrees with the output MMSE only when delta = 1
    alpha = 0.8
    E1 = min_irs(GB, 1.0, alpha)[1]
    assert _min_potential_derivative(1.0, alpha) == pytest.approx(0.5 * alpha * E1 / (1.0 + E1), rel=1e-4)
    E = min_irs(GB, 0.1, alpha)[1]
    assert _min_potential_derivative(0.1, alpha) < 0.5 * 0.5 * alpha * E / (1.0 + 0.1 * E)


def test_potential_minus_free_energy_constant_in_overlap():
    delta, alpha = 0.05, 0.9
    ch = ChannelSpec.gaussian(delta)
    diffs = [irs_offline(GB, delta, alpha, E) - free_energy_of_overlap(GB, ch, 0.3 - E, alpha)
             for E in (0.01, 0.05, 0.1, 0.2, 0.29)]
    assert np.ptp(diffs) < 1e-9


def test_landscape_stable_under_grid_refinement():
    coarse = scan_landscape(GB, 1e-8, 0.35, 0.0, GridSpec(points=200))
    fine = scan_landscape(GB, 1e-8, 0.35, 0.0, GridSpec(points=400))
    assert coarse.n_minima == fine.n_minima == 2
    for (a, _), (b, _) in zip(coarse.minima, fine.minima):
        assert a == pytest.approx(b, rel=1e-6)


def test_minima_attract_state_evolution_started_nearby():
    scan = scan_landscape(GB, 1e-4, 0.35, 5.0)
    for E_min, _ in scan.minima:
        E = 1.05 * E_min
        for _ in range(3000):
            Lam = 5.0 + 0.35 / (1e-4 + E)
            E = denoiser_stats(GB, Lam, Lam)[0]
        assert E == pytest.approx(E_min, rel=1e-5)


@pytest.mark.parametrize("R,delta,expected", [(1, 1.0, 1.0), (3, 0.0, 0.0)])
def test_undetectability_threshold_trivial(R, delta, expected):
    assert undetectability_threshold(R, delta) == expected


def test_argmin_limits():
    assert min_irs(GB, 1e-8, 1e-4)[1] == pytest.approx(0.3, rel=1e-3)
    assert min_irs(GB, 1e-8, 2.0)[1] < 1e-6


def test_hard_phase_upper_edge():
    pd = phase_diagram(GB, 1e-8, [0.48, 0.5], 3)
    assert pd.label[0, 0] == "suboptimal"
    assert pd.label[1, 0] == "zero"
