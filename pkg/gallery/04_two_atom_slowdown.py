"""Two atoms share the cavity field and jump more slowly.

With two coupled atoms each one scatters fewer photons, so its jump rate
drops from r1 to r2. The script compares the ensemble-mean transmission of
simulated traces with the conditional model and with the two
constant-rate alternatives.
"""

import numpy as np

from cavityjumps.telegraph import simulate_two_atom_ensemble
from cavityjumps.twoatom import (TwoAtomModel, bin_averaged, constant_rate_curve, default_levels,
                                 ensemble_transmission, expected_transmission)

counts = default_levels()
levels = default_levels(normalized=True)
print(f"transmission with one atom {levels.rate_low:.3f}, with two {levels.rate_low2:.3f}")

m = TwoAtomModel(68.0, 28.0, levels)
edges = np.arange(0.0, 121.0)
traces = simulate_two_atom_ensemble(m.r1, m.r2, counts, 2000, 120.0, seed=4)
mean, sem = ensemble_transmission(traces, counts)

model = bin_averaged(lambda t: expected_transmission(m, t), edges)
alt1 = bin_averaged(lambda t: constant_rate_curve(m.r1, levels, t), edges)
alt2 = bin_averaged(lambda t: constant_rate_curve(m.r2, levels, t), edges)
print(f"RMS(simulation - model) = {np.sqrt(np.mean((mean - model) ** 2)):.4f}")
print(" t_ms   sim    model  R=68   R=28")
for i in range(0, 120, 10):
    print(f"{edges[i]:5.0f}  {mean[i]:.3f}  {model[i]:.3f}  {alt1[i]:.3f}  {alt2[i]:.3f}")
