"""Spectroscopy by state transfer, and fitting it.

A probe pulse either leaves the atom in F=4 or pumps it to F=3; the
transfer probability against probe detuning maps out the normal modes.
The script simulates a spectrum with 300 cycles per point, fits the
intracavity photon number and the atom-cavity detuning, and reports the
mean number of photons scattered at the two peaks.
"""

import numpy as np

from cavityjumps.nms import (NmsModelParams, fit_spectrum, mean_scattered_photons, model_spectrum,
                             simulate_spectrum_data, spectrum_peaks)

truth = NmsModelParams()
dets = np.arange(-22.0, 10.5, 0.5)
data = simulate_spectrum_data(truth, dets, n_cycles=300, seed=3)

fit = fit_spectrum(data)
print(f"n_ph = {fit.n_ph:.4f} +- {fit.n_ph_err:.4f}  (truth {truth.n_ph})")
print(f"delta_ca = {fit.delta_ca_mhz:.2f} +- {fit.delta_ca_err:.2f} MHz  (truth {truth.delta_ca_mhz})")
print(f"chi2/dof = {fit.chi2:.1f}/{fit.dof}")

fine = np.arange(-30.0, 20.0, 0.05)
peaks = spectrum_peaks(fine, model_spectrum(fit.model, fine).p_f3)
for d, n in zip(peaks, np.interp(peaks, fine, mean_scattered_photons(fit.model, fine))):
    print(f"peak at {d:6.2f} MHz scatters {n:.2f} photons on average")
