"""Physical parameters and unit conventions.

Every frequency-valued field is an ordinary frequency in MHz (the physical
angular frequency is ``2*pi*value`` rad/us).  Conversion to angular units
happens only inside solver entry points, through :func:`to_angular`.
Quantum-jump rates are in s^-1.

The decay constants ``kappa_mhz`` and ``gamma_mhz`` are half linewidths
(amplitude decay rates): the cavity linewidth is ``2*kappa`` and the
atomic population decays at ``2*gamma``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError

TWO_PI = 2.0 * math.pi


def to_angular(freq_mhz):
    """MHz (ordinary) -> rad/us."""
    return TWO_PI * freq_mhz


def per_us_to_per_s(rate):
    return rate * 1e6


def per_s_to_per_ms(rate):
    return rate * 1e-3


@dataclass(frozen=True)
class SystemParams:
    """Validated atom-cavity parameter set.

    Attributes
    ----------
    g_mhz : float
        Atom-cavity coupling (MHz).
    kappa_mhz, gamma_mhz : float
        Cavity field and atomic dipole decay rates (MHz, half linewidths).
    delta_ca_mhz : float
        Cavity-atom detuning (omega_c - omega_a)/2pi. Positive means the
        cavity is blue of the atomic line.
    delta_pc_mhz : float
        Probe-cavity detuning (omega_p - omega_c)/2pi.
    n_empty : float
        On-resonance intra-cavity photon number of the empty cavity. Sets
        the probe drive strength.
    det_eff : float
        Overall photon detection efficiency.
    bin_ms : float
        Photon-count binning time.
    n_atoms : int
        Number of coupled atoms, 1 or 2.
    """

    g_mhz: float = 10.0
    kappa_mhz: float = 0.4
    gamma_mhz: float = 2.6
    delta_ca_mhz: float = 44.0
    delta_pc_mhz: float = 0.0
    n_empty: float = 0.3
    det_eff: float = 0.013
    bin_ms: float = 2.0
    n_atoms: int = 1

    def __post_init__(self):
        for name in ("g_mhz", "kappa_mhz", "gamma_mhz", "delta_ca_mhz",
                     "delta_pc_mhz", "n_empty", "det_eff", "bin_ms"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        # g = 0 is allowed: it is the empty-cavity reference
        if self.g_mhz < 0:
            raise ParameterError("g_mhz must be non-negative")
        for name in ("kappa_mhz", "gamma_mhz", "n_empty", "bin_ms"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 < self.det_eff <= 1:
            raise ParameterError("det_eff must lie in (0, 1]")
        if self.n_atoms not in (1, 2):
            raise ParameterError("n_atoms must be 1 or 2")

    def replace(self, **changes) -> SystemParams:
        return dataclasses.replace(self, **changes)

    @property
    def delta_pa_mhz(self) -> float:
        """Probe-atom detuning, delta_pc + delta_ca."""
        return self.delta_pc_mhz + self.delta_ca_mhz

    def drive_eta_mhz(self, n_photon=None) -> float:
        """Drive amplitude giving ``n_photon`` in the resonant empty cavity.

        eta**2 = n * kappa**2, the steady state of a driven damped cavity.
        """
        n = self.n_empty if n_photon is None else n_photon
        return math.sqrt(n) * self.kappa_mhz

    def empty_count_rate_per_ms(self) -> float:
        """Detected counts/ms for the empty, resonantly driven cavity.

        Photons leave the cavity at the energy decay rate ``2*kappa``
        (angular), scaled by the detection efficiency.
        """
        out_flux_per_us = 2.0 * to_angular(self.kappa_mhz) * self.n_empty
        return out_flux_per_us * 1e3 * self.det_eff


@dataclass(frozen=True)
class JumpRates:
    """Quantum-jump rates between the hyperfine ground states (s^-1).

    ``r_3to4 = 0`` means the repumper is off and F=3 is absorbing.
    """

    r_4to3: float = 106.0
    r_3to4: float = 42.0

    def __post_init__(self):
        if not (math.isfinite(self.r_4to3) and self.r_4to3 > 0):
            raise ParameterError("r_4to3 must be positive")
        if not (math.isfinite(self.r_3to4) and self.r_3to4 >= 0):
            raise ParameterError("r_3to4 must be non-negative")

    @property
    def total(self) -> float:
        return self.r_4to3 + self.r_3to4

    @property
    def p_f4(self) -> float:
        """Stationary probability of F=4."""
        return self.r_3to4 / self.total

    def per_ms(self) -> tuple[float, float]:
        return per_s_to_per_ms(self.r_4to3), per_s_to_per_ms(self.r_3to4)


def default_params() -> SystemParams:
    """Parameter set of the single-atom telegraph experiment."""
    return SystemParams()


def cooperativity(p: SystemParams) -> float:
    """Single-atom cooperativity g**2 / (2 kappa gamma)."""
    return p.g_mhz**2 / (2.0 * p.kappa_mhz * p.gamma_mhz)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(SystemParams)}


def parse_config_text(text: str) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Returns ``{key: (raw_value, line_number)}``. Duplicate keys and lines
    without ``=`` raise :class:`ParameterError` carrying the 1-based line
    number.
    """
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ParameterError(f"empty key or value in {raw.strip()!r}", line=lineno)
        if key in out:
            raise ParameterError(f"duplicate key {key!r}", line=lineno)
        out[key] = (value, lineno)
    return out


def params_from_entries(entries, base: SystemParams | None = None) -> SystemParams:
    """Build :class:`SystemParams` from parsed config entries.

    ``entries`` maps field names to ``(raw_value, line_number)``.
    """
    base = base or default_params()
    changes = {}
    for key, (value, lineno) in entries.items():
        if key not in _FIELD_TYPES:
            raise ParameterError(f"unknown parameter {key!r}", line=lineno)
        try:
            changes[key] = int(value) if key == "n_atoms" else float(value)
        except ValueError:
            raise ParameterError(f"cannot parse {key} = {value!r}", line=lineno) from None
    try:
        return base.replace(**changes)
    except ParameterError as exc:
        bad = next((k for k in changes if k in str(exc)), None)
        raise ParameterError(str(exc), line=entries[bad][1] if bad else None) from None


def load_params(path: str | Path) -> SystemParams:
    """Read a :class:`SystemParams` from a flat key-value file.

    Keys missing from the file keep their defaults; unknown keys are an
    error.
    """
    return params_from_entries(parse_config_text(Path(path).read_text()))
