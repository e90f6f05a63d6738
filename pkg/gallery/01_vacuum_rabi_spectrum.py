"""Transmission of the driven atom-cavity system.

Solves the master-equation steady state along a probe scan, first for the
empty cavity and then with one coupled atom, and prints where the vacuum
Rabi peaks sit. On resonance the atom blocks the cavity.
"""

import numpy as np

from cavityjumps.nms import spectrum_peaks
from cavityjumps.params import cooperativity, default_params
from cavityjumps.qmodel import HilbertConfig, build_liouvillian, steady_state, transmission_spectrum

p = default_params().replace(delta_ca_mhz=0.0)
dets = np.linspace(-30, 30, 241)

# the bare cavity holds more photons and needs a larger Fock space
empty = transmission_spectrum(p.replace(g_mhz=0.0), dets, hilbert=HilbertConfig(12))
coupled = transmission_spectrum(p, dets)

print(f"C1 = {cooperativity(p):.1f}")
print("empty cavity peak (MHz):", spectrum_peaks(dets, empty.transmission))
print("coupled atom peaks (MHz):", spectrum_peaks(dets, coupled.transmission))

# blocking at zero detuning
s = steady_state(build_liouvillian(p))
print(f"on-resonance transmission {s.transmission:.2e}, atom excitation {s.p_excited[0]:.2e}")

# a coarse text plot of the split spectrum
for d, t in zip(dets[::10], coupled.transmission[::10]):
    print(f"{d:7.1f} MHz  {'#' * int(60 * t / coupled.transmission.max())}")
