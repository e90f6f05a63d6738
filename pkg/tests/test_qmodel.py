import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import null_space

from cavityjumps.errors import DimensionError, ParameterError, TruncationError
from cavityjumps.params import cooperativity, default_params
from cavityjumps.qmodel import (HilbertConfig, SteadyStateSweep, build_liouvillian, scattering_rate,
                                steady_state, transmission_spectrum, weak_drive_response)

TWO_PI = 2 * math.pi


def dense_oracle(p, n_fock, n_atoms, eta_mhz):
    """Independent steady state: column-stacked dense Lindbladian and its null space."""
    a1 = np.diag(np.sqrt(np.arange(1, n_fock)), 1)
    sm1 = np.array([[0, 1], [0, 0]], dtype=complex)
    ia = np.eye(2**n_atoms)
    a = np.kron(a1, ia)
    sms = []
    for i in range(n_atoms):
        op = np.array([[1.0]])
        for j in range(n_atoms):
            op = np.kron(op, sm1 if i == j else np.eye(2))
        sms.append(np.kron(np.eye(n_fock), op))
    w = TWO_PI
    H = -w * p.delta_pc_mhz * a.conj().T @ a + w * eta_mhz * (a + a.conj().T)
    for sm in sms:
        H = H - w * (p.delta_pc_mhz + p.delta_ca_mhz) * sm.conj().T @ sm
        H = H + w * p.g_mhz * (a.conj().T @ sm + a @ sm.conj().T)
    d = H.shape[0]
    eye = np.eye(d)
    # vec(A X B) = (B^T kron A) vec(X), column stacking
    L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for c, rate in [(a, p.kappa_mhz)] + [(sm, p.gamma_mhz) for sm in sms]:
        c = math.sqrt(2 * w * rate) * c
        cdc = c.conj().T @ c
        L += np.kron(c.conj(), c) - 0.5 * np.kron(eye, cdc) - 0.5 * np.kron(cdc.T, eye)
    v = null_space(L)[:, 0]
    rho = v.reshape(d, d, order="F")
    rho /= np.trace(rho)
    return rho, a, sms, L


@pytest.mark.parametrize("n_atoms, dpc", [(1, 0.0), (1, -7.3), (2, 3.1)])
def test_matches_dense_oracle(n_atoms, dpc):
    p = default_params().replace(g_mhz=8.0, delta_ca_mhz=5.0, delta_pc_mhz=dpc, n_atoms=n_atoms)
    nf = 5 if n_atoms == 1 else 4
    eta = p.drive_eta_mhz()
    rho, a, sms, _ = dense_oracle(p, nf, n_atoms, eta)
    s = steady_state(build_liouvillian(p, HilbertConfig(nf, n_atoms)), check_tail=False)
    assert np.abs(s.rho - rho).max() < 1e-10
    assert s.n_photon == pytest.approx(np.trace(a.conj().T @ a @ rho).real, rel=1e-9)
    for i, sm in enumerate(sms):
        assert s.p_excited[i] == pytest.approx(np.trace(sm.conj().T @ sm @ rho).real, rel=1e-9)


def test_steady_state_invariants():
    p = default_params().replace(delta_pc_mhz=-9.0)
    s = steady_state(build_liouvillian(p))
    assert abs(np.trace(s.rho) - 1) < 1e-10
    assert np.abs(s.rho - s.rho.conj().T).max() < 1e-10
    assert np.linalg.eigvalsh(s.rho).min() > -1e-9
    assert s.residual < 1e-10
    assert s.tail_population < 1e-6


def test_dimension():
    L = build_liouvillian(default_params(), HilbertConfig(2, 1))
    assert L.hilbert.dim == 4 and L.shape == (16, 16)
    assert HilbertConfig(6, 2).dim == 24
    with pytest.raises(DimensionError):
        build_liouvillian(default_params(), HilbertConfig(40, 2))
    with pytest.raises(ParameterError):
        HilbertConfig(1, 1)


def test_undriven_is_vacuum():
    s = steady_state(build_liouvillian(default_params(), drive_eta_mhz=0.0))
    assert s.n_photon == pytest.approx(0, abs=1e-14)
    assert scattering_rate(s, default_params()) == pytest.approx(0, abs=1e-6)


def test_zero_coupling_factorizes():
    p = default_params().replace(g_mhz=0.0)
    s = steady_state(build_liouvillian(p, HilbertConfig(8)))
    nf, na = s.hilbert.n_fock, s.hilbert.atom_dim
    r = s.rho.reshape(nf, na, nf, na)
    field = np.einsum("iaja->ij", r)
    atom = np.einsum("iaib->ab", r)
    assert np.abs(s.rho - np.kron(field, atom)).max() < 1e-12
    # nothing drives the atom directly
    assert scattering_rate(s, p) == 0.0


@pytest.mark.parametrize("dpc", [0.0, 0.3, -1.7])
def test_empty_cavity_closed_form(dpc):
    p = default_params().replace(g_mhz=0.0, delta_pc_mhz=dpc)
    eta = 0.15
    s = steady_state(build_liouvillian(p, drive_eta_mhz=eta, h=HilbertConfig(12)))
    k, d, e = TWO_PI * p.kappa_mhz, TWO_PI * dpc, TWO_PI * eta
    assert s.n_photon == pytest.approx(e * e / (k * k + d * d), rel=1e-9)


def test_blocking_on_resonance():
    p = default_params().replace(delta_ca_mhz=0.0)
    s = steady_state(build_liouvillian(p))
    assert s.transmission < 0.01
    # weak-excitation value |kg/(kg + g^2)|^2 = 1/(1 + 2 C1)^2
    c1 = cooperativity(p)
    assert float(weak_drive_response(p)[0]) == pytest.approx(1 / (1 + 2 * c1) ** 2, rel=1e-12)


@pytest.mark.parametrize("dca, dpc", [(0.0, 0.0), (44.0, 0.0), (10.0, -12.0), (10.0, 8.0)])
def test_weak_drive_closed_form(dca, dpc):
    p = default_params().replace(delta_ca_mhz=dca, delta_pc_mhz=dpc, n_empty=1e-7)
    s = steady_state(build_liouvillian(p))
    t, pe, nph = weak_drive_response(p)
    assert s.transmission == pytest.approx(float(t), rel=1e-6)
    assert s.p_excited[0] == pytest.approx(float(pe), rel=1e-6)
    assert s.n_photon == pytest.approx(float(nph), rel=1e-6)


def test_weak_drive_deviation_is_saturation():
    # the departure from linear response grows in proportion to the drive power
    base = default_params().replace(delta_ca_mhz=0.0)
    t0 = float(weak_drive_response(base)[0])
    dev = [steady_state(build_liouvillian(base.replace(n_empty=n))).transmission / t0 - 1
           for n in (1e-4, 1e-3)]
    assert dev[1] / dev[0] == pytest.approx(10, rel=1e-2)


def test_weak_drive_linearity():
    # weak-excitation operating point of the spectrum measurement
    p = default_params().replace(n_empty=0.062)
    eta = p.drive_eta_mhz()
    n1 = steady_state(build_liouvillian(p, drive_eta_mhz=eta)).n_photon
    n2 = steady_state(build_liouvillian(p, drive_eta_mhz=eta / 2)).n_photon
    assert n1 / n2 == pytest.approx(4.0, rel=1e-3)


def test_truncation_convergence():
    p = default_params()
    n6 = steady_state(build_liouvillian(p, HilbertConfig(6))).n_photon
    n8 = steady_state(build_liouvillian(p, HilbertConfig(8))).n_photon
    assert abs(n8 - n6) < 1e-8


def test_truncation_error():
    p = default_params().replace(g_mhz=0.0, n_empty=2.0)
    with pytest.raises(TruncationError):
        steady_state(build_liouvillian(p, HilbertConfig(3)))


def _random_rho(rng, d):
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20), st.floats(0, 15), st.sampled_from([1, 2]))
def test_generator_preserves_trace_and_hermiticity(seed, dpc, g, n_atoms):
    rng = np.random.default_rng(seed)
    p = default_params().replace(delta_pc_mhz=dpc, g_mhz=g, n_atoms=n_atoms)
    L = build_liouvillian(p, HilbertConfig(4, n_atoms))
    rho = _random_rho(rng, L.hilbert.dim)
    out = L.apply(rho)
    assert abs(np.trace(out)) < 1e-12 * max(1.0, np.abs(out).max())
    assert np.abs(out - out.conj().T).max() < 1e-12 * max(1.0, np.abs(out).max())


@settings(max_examples=15, deadline=None)
@given(st.floats(-25, 25), st.floats(0, 13), st.floats(-20, 50))
def test_steady_state_properties(dpc, g, dca):
    p = default_params().replace(delta_pc_mhz=dpc, g_mhz=g, delta_ca_mhz=dca)
    s = steady_state(build_liouvillian(p, HilbertConfig(8)))
    assert abs(np.trace(s.rho) - 1) < 1e-10
    assert np.abs(s.rho - s.rho.conj().T).max() < 1e-10
    assert np.linalg.eigvalsh(s.rho).min() > -1e-9
    assert s.transmission >= 0
    assert np.all(scattering_rate(s, p) >= 0)


def test_transmission_at_most_one_with_absorbing_atom():
    p = default_params()
    sp_ = transmission_spectrum(p, np.linspace(-30, 30, 61), hilbert=HilbertConfig(8))
    assert np.all(sp_.transmission <= 1 + 1e-9)


def test_scattering_off_resonant_bound():
    p = default_params().replace(g_mhz=0.0)
    s = steady_state(build_liouvillian(p, HilbertConfig(8)))
    eta = TWO_PI * p.drive_eta_mhz()
    bound = 2 * TWO_PI * p.gamma_mhz * eta**2 / (TWO_PI * p.delta_ca_mhz) ** 2 * 1e6
    assert scattering_rate(s, p) < bound


def test_empty_cavity_lorentzian():
    p = default_params().replace(g_mhz=0.0)
    dets = np.linspace(-3, 3, 13)
    spec = transmission_spectrum(p, dets, hilbert=HilbertConfig(8))
    np.testing.assert_allclose(spec.transmission, 0.4**2 / (0.4**2 + dets**2), rtol=1e-6)
    assert dets[np.argmax(spec.transmission)] == 0.0


def _peaks(x, y):
    i = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])) + 1
    return x[i]


def _oracle_peaks(p, n_atoms=1):
    x = np.linspace(-25, 25, 50001)
    t = weak_drive_response(p, x, n_atoms=n_atoms)[0]
    return _peaks(x, t)


@pytest.mark.parametrize("n_atoms", [1, 2])
def test_vacuum_rabi_splitting(n_atoms):
    p = default_params().replace(delta_ca_mhz=0.0, n_empty=1e-4, n_atoms=n_atoms)
    expect = _oracle_peaks(p, n_atoms)
    geff = p.g_mhz * math.sqrt(n_atoms)
    assert len(expect) == 2
    np.testing.assert_allclose(np.abs(expect), math.sqrt(geff**2 - p.kappa_mhz**2 / 2 - 0.0), atol=0.3)
    x = np.linspace(-geff - 1, -geff + 1, 201)
    spec = transmission_spectrum(p, np.concatenate([x, -x[::-1]]))
    found = _peaks(spec.detuning_mhz, spec.transmission)
    np.testing.assert_allclose(found, expect, atol=0.011)


def test_split_scattering_spectrum():
    p = default_params().replace(g_mhz=12.0, delta_ca_mhz=10.0, n_empty=1e-4)
    x = np.linspace(-25, 25, 5001)
    spec = transmission_spectrum(p, x)
    found = _peaks(x, spec.p_excited)
    # dressed states: roots of dpc (dpc + dca) = g^2
    dressed = np.roots([1, p.delta_ca_mhz, -p.g_mhz**2])
    assert len(found) == 2
    np.testing.assert_allclose(np.sort(found), np.sort(dressed), atol=0.2)


def test_two_atoms_per_atom_rates():
    p = default_params().replace(n_atoms=2)
    s = steady_state(build_liouvillian(p))
    r = scattering_rate(s, p)
    assert r.shape == (2,) and r[0] == pytest.approx(r[1], rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 13), st.floats(-20, 50), st.floats(-25, 25), st.floats(0.01, 0.2),
       st.sampled_from([1, 2]))
def test_sweep_matches_full_solve(g, dca, dpc, eta, n_atoms):
    h = HilbertConfig(6, n_atoms)
    sweep = SteadyStateSweep(0.4, 2.6, h)
    n, pe, _ = sweep.observables(g, dca, dpc, eta, check_tail=False)
    p = default_params().replace(g_mhz=g, delta_ca_mhz=dca, delta_pc_mhz=dpc, n_atoms=n_atoms)
    s = steady_state(build_liouvillian(p, h, drive_eta_mhz=eta), check_tail=False)
    assert float(n) == pytest.approx(s.n_photon, rel=1e-8, abs=1e-14)
    np.testing.assert_allclose(pe, s.p_excited, rtol=1e-8, atol=1e-14)


def test_spectrum_csv(tmp_path):
    spec = transmission_spectrum(default_params(), [-1.0, 0.0, 1.0])
    spec.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "detuning_mhz,transmission,p_excited,scattering_rate_per_s"
    assert len(lines) == 4
    assert list(spec)[1][0] == 0.0
