import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavityjumps.errors import DegenerateDataError, ParameterError
from cavityjumps.nms import (NmsModelParams, SpectrumData, _rate_to_probability, fit_spectrum,
                             mean_scattered_photons, model_spectrum, readout_jump_probability,
                             scattering_rate_grid, simulate_cycles, simulate_spectrum_data,
                             spectrum_peaks, transfer_probability)
from cavityjumps.params import default_params
from cavityjumps.qmodel import weak_drive_response

GRID = np.arange(-22.0, 10.0 + 1e-9, 1.0)


def test_rate_equation_identities():
    assert _rate_to_probability(0.0, 70.0, 0.5) == 0.0
    assert _rate_to_probability(math.log(2) / 35.0, 70.0, 0.5) == pytest.approx(0.5, rel=1e-14)


def test_transfer_probability_zero_drive():
    p = default_params().replace(delta_ca_mhz=10.0)
    assert transfer_probability(p, 0.0) == 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(-25, 10), st.floats(6, 12), st.floats(1e-3, 0.2), st.floats(1.05, 3.0))
def test_transfer_monotone(dpc, g, n_ph, factor):
    p = default_params().replace(g_mhz=g, delta_ca_mhz=10.0, delta_pc_mhz=dpc)
    base = transfer_probability(p, n_ph)
    assert 0 <= base <= 1
    assert transfer_probability(p, n_ph * factor) >= base
    assert transfer_probability(p, n_ph, pulse_us=70 * factor) >= base
    assert transfer_probability(p, n_ph, branch=min(0.5 * factor, 0.99)) >= base


def test_transfer_saturates():
    p = default_params().replace(delta_ca_mhz=10.0, delta_pc_mhz=-5.0)
    assert transfer_probability(p, 0.062, pulse_us=1e6) == pytest.approx(1.0, abs=1e-9)


def test_grid_matches_single_point():
    # same photon cutoff as the single-point solve
    m = NmsModelParams(g_low_mhz=9.0, g_high_mhz=9.0, n_nodes=1, n_fock=6)
    dets = np.array([-12.0, -3.0, 5.0])
    spec = model_spectrum(m, dets)
    for det, value in zip(dets, spec.p_f3):
        p = default_params().replace(g_mhz=9.0, delta_ca_mhz=10.0, delta_pc_mhz=det)
        single = transfer_probability(p, 0.062)
        assert value == pytest.approx(0.13 + 0.87 * single, rel=1e-9)


def test_background_floor():
    m = NmsModelParams()
    spec = model_spectrum(m, GRID)
    assert np.all(spec.p_f3 >= m.background)
    flat = model_spectrum(m.replace(n_ph=0.0), GRID)
    np.testing.assert_allclose(flat.p_f3, m.background, atol=1e-15)


def test_double_peaked_shape():
    m = NmsModelParams()
    fine = np.arange(-30.0, 20.0, 0.1)
    peaks = spectrum_peaks(fine, model_spectrum(m, fine).p_f3)
    assert len(peaks) == 2
    assert 18 <= abs(peaks[0] - peaks[1]) <= 24
    # the weak-excitation dressed states bracket the peaks for the mean coupling
    gbar = 9.0
    dressed = np.sort(np.roots([1, m.delta_ca_mhz, -gbar**2]))
    assert np.sort(peaks)[0] == pytest.approx(dressed[0], abs=3.0)
    assert np.sort(peaks)[1] == pytest.approx(dressed[1], abs=3.0)
    # asymmetric: the peak closer to the bare cavity is higher
    assert abs(peaks[0]) < abs(peaks[1])


def test_quadrature_converged():
    m = NmsModelParams()
    a = model_spectrum(m, GRID).p_f3
    b = model_spectrum(m.replace(n_nodes=65), GRID).p_f3
    assert np.abs(a - b).max() < 1e-6


def test_grid_rate_matches_linear_response_at_weak_drive():
    m = NmsModelParams(n_ph=1e-7)
    rate = scattering_rate_grid(m, GRID)
    g, _ = m.g_nodes()
    for i in (0, 16, 32):
        p = default_params().replace(g_mhz=g[i], delta_ca_mhz=10.0, n_empty=1e-7)
        pe = weak_drive_response(p, GRID)[1]
        np.testing.assert_allclose(rate[i], 2 * 2 * math.pi * 2.6 * pe, rtol=1e-6)


def test_noiseless_recovery():
    truth = NmsModelParams()
    clean = model_spectrum(truth, GRID)
    data = SpectrumData(GRID, clean.p_f3, np.full(len(GRID), 300))
    fit = fit_spectrum(data)
    assert fit.n_ph == pytest.approx(0.062, abs=1e-8)
    assert fit.delta_ca_mhz == pytest.approx(10.0, abs=1e-8)
    assert fit.chi2 < 1e-12


def test_noisy_recovery():
    data = simulate_spectrum_data(NmsModelParams(), GRID, 300, seed=3)
    fit = fit_spectrum(data)
    assert abs(fit.n_ph - 0.062) < 3 * fit.n_ph_err + 1e-3
    assert abs(fit.delta_ca_mhz - 10.0) < 3 * fit.delta_ca_err + 0.2
    assert fit.n_ph_err > 0 and fit.delta_ca_err > 0
    assert fit.covariance.shape == (2, 2)


def test_mirror_flips_detuning():
    truth = NmsModelParams()
    mirrored = -GRID[::-1]
    # model symmetry: simultaneous sign flip of all detunings
    flipped = model_spectrum(truth.replace(delta_ca_mhz=-10.0), mirrored).p_f3
    np.testing.assert_allclose(flipped, model_spectrum(truth, GRID).p_f3[::-1], rtol=1e-9)
    data = simulate_spectrum_data(truth, GRID, 300, seed=4)
    fit = fit_spectrum(data)
    mirror = SpectrumData(mirrored, data.p_f3[::-1], data.n_cycles[::-1])
    back = fit_spectrum(mirror)
    assert back.delta_ca_mhz == pytest.approx(-fit.delta_ca_mhz, abs=1e-6)
    assert back.n_ph == pytest.approx(fit.n_ph, rel=1e-6)


def test_degenerate_data():
    rng = np.random.default_rng(0)
    flat = SpectrumData(GRID, rng.binomial(300, 0.13, len(GRID)) / 300, np.full(len(GRID), 300))
    with pytest.raises(DegenerateDataError):
        fit_spectrum(flat)
    with pytest.raises(DegenerateDataError):
        fit_spectrum(SpectrumData(GRID[:5], np.full(5, 0.3), np.full(5, 300)))


def test_validation():
    with pytest.raises(ParameterError):
        NmsModelParams(branch_to_f3=1.0)
    with pytest.raises(ParameterError):
        NmsModelParams(g_low_mhz=12, g_high_mhz=6)
    with pytest.raises(ParameterError):
        NmsModelParams(background=1.0)
    with pytest.raises(ParameterError):
        SpectrumData(GRID[:2], np.array([0.1, 1.2]), None)


def test_mean_scattered_photons_at_peaks():
    m = NmsModelParams()
    fine = np.arange(-30.0, 20.0, 0.1)
    photons = mean_scattered_photons(m, fine)
    peaks = spectrum_peaks(fine, model_spectrum(m, fine).p_f3)
    at_peaks = np.interp(peaks, fine, photons)
    assert 1 <= at_peaks.max() <= 3


def test_background_cross_check():
    # one jump within the 2 ms readout is as likely as the measured floor
    p = readout_jump_probability()
    assert p == pytest.approx(1 - math.exp(-0.212))
    assert 0.13 < p < 0.25


def test_simulate_cycles_smoke():
    dets = np.array([-15.0, -5.0, 0.0, 5.0])
    a = simulate_cycles(NmsModelParams(), dets, 40, seed=5)
    b = simulate_cycles(NmsModelParams(), dets, 40, seed=5)
    np.testing.assert_array_equal(a.p_f3, b.p_f3)
    assert np.all((0 <= a.p_f3) & (a.p_f3 <= 1))


def test_spectrum_csv_roundtrip(tmp_path):
    data = simulate_spectrum_data(NmsModelParams(), GRID, 300, seed=6)
    data.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "detuning_mhz,p_f3,n_cycles"
    back = SpectrumData.from_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.p_f3, data.p_f3)
    np.testing.assert_array_equal(back.n_cycles, data.n_cycles)
