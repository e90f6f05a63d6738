"""Conditional spin dynamics of two atoms in the cavity.

With the repumper off, two atoms start in F=4. While both couple, each
jumps to F=3 at ``r2``, so the pair leaves (4,4) at ``2*r2``. The remaining
coupled atom then jumps at ``r1``, and (3,3) is absorbing::

    p44(t)  = exp(-2 r2 t)
    pone(t) = 2 r2 / (r1 - 2 r2) * (exp(-2 r2 t) - exp(-r1 t))
    p33(t)  = 1 - p44 - pone

``pone`` is evaluated as ``2 r2 t exp(-min(r1, 2 r2) t) * phi(|r1 - 2 r2| t)``
with ``phi(x) = (1 - exp(-x)) / x``, which stays accurate through
``r1 = 2 r2`` and never overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ._io import write_csv
from .errors import NonPhysicalError, ParameterError
from .params import SystemParams
from .qmodel import HilbertConfig, build_liouvillian, scattering_rate, steady_state
from .telegraph import LevelModel

# Effective coupling of atoms held off the cavity axis, chosen so that the
# per-atom scattering ratio (two atoms vs one) equals 28/68 at the
# detection detuning. See operating_point().
OFF_AXIS_G_MHZ = 4.137
TWO_ATOM_DET_EFF = 0.045
TWO_ATOM_BIN_MS = 1.0
N_FOCK = 8


def operating_point(g_mhz: float = OFF_AXIS_G_MHZ) -> SystemParams:
    """Parameters of the two-atom measurement (1 ms bins, 4.5% detection)."""
    return SystemParams(g_mhz=g_mhz, det_eff=TWO_ATOM_DET_EFF, bin_ms=TWO_ATOM_BIN_MS, n_atoms=2)


def coupled_response(p: SystemParams, n_fock: int = N_FOCK):
    """Transmission and per-atom scattering rate with one and two coupled atoms.

    Returns ``(t1, t2, s1, s2)``: normalized transmissions and per-atom
    scattering rates (s^-1) for one and two equally coupled atoms.
    """
    out = []
    for n in (1, 2):
        q = p.replace(n_atoms=n)
        s = steady_state(build_liouvillian(q, HilbertConfig(n_fock, n)))
        out.append((s.transmission, float(np.atleast_1d(scattering_rate(s, q))[0])))
    (t1, s1), (t2, s2) = out
    return t1, t2, s1, s2


def default_levels(p: SystemParams | None = None, normalized: bool = False) -> LevelModel:
    """Count-rate levels for 0, 1 and 2 coupled atoms from the quantum model.

    ``normalized`` returns transmissions relative to the empty cavity
    instead of counts/ms.
    """
    p = p or operating_point()
    t1, t2, _, _ = coupled_response(p)
    high = 1.0 if normalized else p.empty_count_rate_per_ms()
    return LevelModel.from_transmissions(high, t1, t2)


_DEFAULT_LEVELS = None


def _default_normalized_levels():
    global _DEFAULT_LEVELS
    if _DEFAULT_LEVELS is None:
        _DEFAULT_LEVELS = default_levels(normalized=True)
    return _DEFAULT_LEVELS


@dataclass
class TwoAtomModel:
    """Conditional jump rates (s^-1) and transmission levels.

    ``levels`` gives T0, T1, T2 as ``rate_high``, ``rate_low`` and
    ``rate_low2``; the default is the normalized quantum-model levels at
    :func:`operating_point`.
    """

    r1: float = 68.0
    r2: float = 28.0
    levels: LevelModel = field(default_factory=_default_normalized_levels)

    def __post_init__(self):
        for name in ("r1", "r2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive")


def _phi(x):
    """(1 - exp(-x)) / x with the removable point at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


def _check_times(t_ms):
    t = np.asarray(t_ms, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ParameterError("times must be finite and non-negative")
    return t * 1e-3


def populations(m: TwoAtomModel, t_ms):
    """``(p44, pone, p33)`` at times ``t_ms`` (ms)."""
    t = _check_times(t_ms)
    a, b = 2.0 * m.r2, m.r1
    p44 = np.exp(-a * t)
    pone = a * t * np.exp(-min(a, b) * t) * _phi(abs(b - a) * t)
    p33 = 1.0 - p44 - pone
    # p33 by subtraction loses relative accuracy at small t
    early = (a + b) * t < 1e-3
    if np.any(early):
        p33 = np.where(early, _p33_series(a, b, t), p33)
    return p44, pone, p33


def _p33_series(a, b, t):
    # p33 = a b t^2 / 2 - a b (a + b) t^3 / 6 + ...
    return a * b * t * t / 2.0 * (1.0 - (a + b) * t / 3.0 + (a * a + a * b + b * b) * t * t / 12.0)


def expected_transmission(m: TwoAtomModel, t_ms, normalize: bool = True):
    """``T2 p44 + T1 pone + T0 p33``, relative to T0 when ``normalize``."""
    p44, pone, p33 = populations(m, t_ms)
    lv = m.levels
    t = lv.rate_low2 * p44 + lv.rate_low * pone + lv.rate_high * p33
    return t / lv.rate_high if normalize else t


def constant_rate_curve(r: float, levels: LevelModel | None = None, t_ms=None, normalize: bool = True):
    """Transmission when the per-atom jump rate ignores the other atom."""
    m = TwoAtomModel(r, r, levels or _default_normalized_levels())
    return expected_transmission(m, t_ms, normalize)


def bin_averaged(fn, t_edges_ms, order: int = 8):
    """Average of ``fn(t)`` over each interval of ``t_edges_ms``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.asarray(t_edges_ms, dtype=float)
    lo, hi = edges[:-1, None], edges[1:, None]
    t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    return (fn(t) @ w) / 2.0


def curves(m: TwoAtomModel, t_ms):
    """Coupled curve and the two constant-rate comparisons."""
    return (expected_transmission(m, t_ms),
            constant_rate_curve(m.r1, m.levels, t_ms),
            constant_rate_curve(m.r2, m.levels, t_ms))


def write_curves(path, m: TwoAtomModel, t_ms, comment=None):
    t = np.asarray(t_ms, dtype=float)
    write_csv(path, ["t_ms", "T_coupled", "T_const_r1", "T_const_r2"], zip(t, *curves(m, t)), comment)


def ensemble_transmission(traces, levels: LevelModel):
    """Per-bin mean normalized transmission and its standard error.

    Background counts are subtracted before dividing by the empty-cavity
    level.
    """
    counts = np.array([tr.counts for tr in traces], dtype=float)
    bin_ms = traces[0].bin_ms
    norm = levels.rate_high * bin_ms
    values = (counts - levels.background * bin_ms) / norm
    n = len(traces)
    sem = values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(values.shape[1], np.nan)
    return values.mean(axis=0), sem


def extract_r2_from_levels(initial_t1: float, initial_t2: float, r1: float,
                           p: SystemParams | None = None, g_max_mhz: float = 30.0) -> float:
    """Per-atom jump rate with both atoms coupled.

    The effective coupling ``g`` is chosen so that the quantum model
    reproduces the measured normalized transmissions for one and two
    coupled atoms (least squares over both). The jump rate scales with the
    per-atom scattering rate, so ``r2 = r1 * S2 / S1`` at that coupling.

    Raises
    ------
    NonPhysicalError
        Transmissions outside ``(0, 1]``, two atoms transmitting more than
        one, or a scattering ratio outside ``(0, 1]``.
    """
    t1, t2 = float(initial_t1), float(initial_t2)
    if not (0 < t2 <= 1 and 0 < t1 <= 1):
        raise NonPhysicalError("transmission levels must lie in (0, 1]")
    if t2 > t1:
        raise NonPhysicalError("two coupled atoms cannot transmit more than one")
    if not r1 > 0:
        raise ParameterError("r1 must be positive")
    p = p or operating_point()

    def cost(g):
        m1, m2, _, _ = coupled_response(p.replace(g_mhz=g))
        return (m1 - t1) ** 2 + (m2 - t2) ** 2

    g = minimize_scalar(cost, bounds=(0.0, g_max_mhz), method="bounded", options={"xatol": 1e-6}).x
    _, _, s1, s2 = coupled_response(p.replace(g_mhz=g))
    return scale_rate(r1, s1, s2)


def scale_rate(r1: float, s1: float, s2: float) -> float:
    """``r1 * s2 / s1`` for per-atom scattering rates ``s1`` (one atom) and
    ``s2`` (two atoms), guarded against non-physical ratios."""
    if not s1 > 0:
        raise NonPhysicalError("single-atom scattering rate vanishes")
    ratio = s2 / s1
    if not 0 < ratio <= 1 + 1e-12:
        raise NonPhysicalError(f"scattering ratio {ratio:.4g} outside (0, 1]")
    return r1 * min(ratio, 1.0)
