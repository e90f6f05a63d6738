"""Normal-mode splitting read out through the atomic ground-state population.

A weak probe pulse of duration ``pulse_us`` drives the atom-cavity system.
Each scattered photon leaves the atom in F=3 with probability
``branch_to_f3``; with the excited state adiabatically eliminated the F=4
population obeys ``dP4/dt = -branch * R_sc * P4``, so::

    P_f3 = 1 - exp(-branch * R_sc * t_pulse)

``R_sc`` is the steady-state scattering rate from :mod:`cavityjumps.qmodel`
with the drive calibrated to the empty-cavity photon number ``n_ph``.
The transfer probability is averaged over a uniform distribution of the
coupling ``g`` and combined with an erroneous-detection floor ``bg``::

    p = bg + (1 - bg) * <P_f3>_g
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateDataError, FitDivergedError, ParameterError, SolverError, TruncationError
from .params import JumpRates, SystemParams, to_angular
from .qmodel import HilbertConfig, SteadyStateSweep, build_liouvillian, linear_response, steady_state


@dataclass(frozen=True)
class NmsModelParams:
    """Model of the normal-mode-splitting spectrum.

    ``n_ph`` and ``delta_ca_mhz`` are the fit parameters; the rest is held
    fixed during fits. ``g_low_mhz == g_high_mhz`` gives a single coupling.
    """

    n_ph: float = 0.062
    delta_ca_mhz: float = 10.0
    pulse_us: float = 70.0
    branch_to_f3: float = 0.5
    g_low_mhz: float = 6.0
    g_high_mhz: float = 12.0
    background: float = 0.13
    kappa_mhz: float = 0.4
    gamma_mhz: float = 2.6
    n_nodes: int = 33
    n_fock: int = 4

    def __post_init__(self):
        if not self.n_ph >= 0:
            raise ParameterError("n_ph must be non-negative")
        if not 0 < self.branch_to_f3 < 1:
            raise ParameterError("branch_to_f3 must lie in (0, 1)")
        if not 0 < self.g_low_mhz <= self.g_high_mhz:
            raise ParameterError("need 0 < g_low <= g_high")
        if not 0 <= self.background < 1:
            raise ParameterError("background must lie in [0, 1)")
        if self.pulse_us < 0:
            raise ParameterError("pulse_us must be non-negative")
        if self.n_nodes < 1:
            raise ParameterError("n_nodes must be positive")

    def replace(self, **changes) -> NmsModelParams:
        return dataclasses.replace(self, **changes)

    def eta_mhz(self, n_ph=None):
        n = self.n_ph if n_ph is None else n_ph
        return np.sqrt(n) * self.kappa_mhz

    def g_nodes(self):
        """Gauss-Legendre nodes and weights (summing to 1) over the g range."""
        return _g_nodes(self.g_low_mhz, self.g_high_mhz, self.n_nodes)


@lru_cache(maxsize=32)
def _g_nodes(g_low, g_high, n_nodes):
    if g_low == g_high:
        return np.array([g_low]), np.array([1.0])
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return 0.5 * (g_high + g_low) + 0.5 * (g_high - g_low) * x, 0.5 * w


@dataclass
class SpectrumData:
    """F=3 population versus probe-cavity detuning.

    ``n_cycles`` is the number of experimental cycles per point; it sets
    the binomial weights in fits. Modelled spectra carry ``n_cycles=None``.
    """

    detunings_mhz: np.ndarray
    p_f3: np.ndarray
    n_cycles: np.ndarray | None = None

    def __post_init__(self):
        self.detunings_mhz = np.asarray(self.detunings_mhz, dtype=float)
        self.p_f3 = np.asarray(self.p_f3, dtype=float)
        if self.detunings_mhz.shape != self.p_f3.shape:
            raise ParameterError("detunings and p_f3 differ in length")
        if np.any((self.p_f3 < 0) | (self.p_f3 > 1)):
            raise ParameterError("p_f3 must lie in [0, 1]")
        if self.n_cycles is not None:
            self.n_cycles = np.broadcast_to(np.asarray(self.n_cycles, dtype=int),
                                            self.p_f3.shape).copy()

    def to_csv(self, path, comment=None):
        from ._io import write_csv

        cycles = self.n_cycles if self.n_cycles is not None else np.zeros(len(self.p_f3), int)
        write_csv(path, ["detuning_mhz", "p_f3", "n_cycles"],
                  zip(self.detunings_mhz, self.p_f3, cycles), comment)

    @classmethod
    def from_csv(cls, path) -> SpectrumData:
        from ._io import parse_columns, read_csv

        header, rows = read_csv(path)
        if header != ["detuning_mhz", "p_f3", "n_cycles"]:
            raise ParameterError(f"unexpected spectrum header {header}")
        dets, p_f3, cycles = parse_columns(path, rows, [float, float, int])
        return cls(dets, p_f3, cycles)


@lru_cache(maxsize=8)
def _sweep(kappa_mhz, gamma_mhz, n_fock):
    return SteadyStateSweep(kappa_mhz, gamma_mhz, HilbertConfig(n_fock=n_fock))


def _rate_to_probability(rate_per_us, pulse_us, branch):
    return -np.expm1(-branch * rate_per_us * pulse_us)


def transfer_probability(p: SystemParams, n_ph: float, pulse_us: float = 70.0,
                         branch: float = 0.5, hilbert: HilbertConfig | None = None) -> float:
    """F=4 -> F=3 transfer probability of one pulse at the parameters ``p``.

    The scattering rate comes from a full steady-state solve with the
    drive set to ``sqrt(n_ph) * kappa``; ``p.g_mhz``, ``p.delta_ca_mhz``
    and ``p.delta_pc_mhz`` fix the operating point.
    """
    if n_ph == 0:
        return 0.0
    h = hilbert or HilbertConfig(n_fock=6, n_atoms=1)
    s = steady_state(build_liouvillian(p.replace(n_atoms=1), h, p.drive_eta_mhz(n_ph)))
    rate_per_us = 2.0 * to_angular(p.gamma_mhz) * max(float(s.p_excited[0]), 0.0)
    return float(_rate_to_probability(rate_per_us, pulse_us, branch))


MAX_FOCK = 10


def scattering_rate_grid(m: NmsModelParams, detunings_mhz, n_ph=None, delta_ca_mhz=None):
    """Scattering rate (1/us) on the (g node, detuning) grid.

    ``n_ph`` and ``delta_ca_mhz`` may be 1-D arrays of equal length, in
    which case a leading parameter-set axis is added. Starts at
    ``m.n_fock`` and raises the photon cutoff until the Fock tail check
    passes.
    """
    g, _ = m.g_nodes()
    n_ph = m.n_ph if n_ph is None else n_ph
    dca = m.delta_ca_mhz if delta_ca_mhz is None else delta_ca_mhz
    batched = np.ndim(n_ph) > 0 or np.ndim(dca) > 0
    eta = np.atleast_1d(m.eta_mhz(n_ph))[:, None, None]
    dca = np.atleast_1d(np.asarray(dca, dtype=float))[:, None, None]
    dets = np.asarray(detunings_mhz, dtype=float)[None, None, :]
    for n_fock in range(m.n_fock, MAX_FOCK + 1):
        sweep = _sweep(m.kappa_mhz, m.gamma_mhz, n_fock)
        try:
            rate = sweep.scattering_rate_per_us(g[None, :, None], dca, dets, eta)
            break
        except TruncationError:
            if n_fock == MAX_FOCK:
                raise
    return rate if batched else rate[0]


def _model_values(m: NmsModelParams, dets, n_ph, dca):
    """Model spectrum; vectorized over equal-length ``n_ph``/``dca`` arrays."""
    _, w = m.g_nodes()
    rate = scattering_rate_grid(m, dets, np.atleast_1d(n_ph), np.atleast_1d(dca))
    p_bar = np.einsum("g,pgk->pk", w, _rate_to_probability(rate, m.pulse_us, m.branch_to_f3))
    out = m.background + (1.0 - m.background) * p_bar
    return out if np.ndim(n_ph) > 0 or np.ndim(dca) > 0 else out[0]


def model_spectrum(m: NmsModelParams, detunings_mhz) -> SpectrumData:
    """g-averaged F=3 population including the detection background."""
    dets = np.asarray(detunings_mhz, dtype=float)
    return SpectrumData(dets, _model_values(m, dets, m.n_ph, m.delta_ca_mhz))


def mean_scattered_photons(m: NmsModelParams, detunings_mhz):
    """g-averaged number of photons scattered during one pulse, per detuning."""
    _, w = m.g_nodes()
    return w @ (scattering_rate_grid(m, detunings_mhz) * m.pulse_us)


def simulate_spectrum_data(m: NmsModelParams, detunings_mhz, n_cycles, seed) -> SpectrumData:
    """Binomially sampled spectrum around :func:`model_spectrum`."""
    model = model_spectrum(m, detunings_mhz)
    rng = np.random.default_rng(seed)
    cycles = np.broadcast_to(np.asarray(n_cycles, dtype=int), model.p_f3.shape)
    hits = rng.binomial(cycles, model.p_f3)
    return SpectrumData(model.detunings_mhz, hits / cycles, cycles)


def simulate_cycles(m: NmsModelParams, detunings_mhz, n_cycles, seed,
                    rates: JumpRates | None = None, detect_ms: float = 2.0,
                    low_counts_per_ms: float = 4.0, high_counts_per_ms: float = 20.0) -> SpectrumData:
    """Cycle-by-cycle simulation of pulse, then a single-bin state readout.

    Each cycle draws ``g`` uniformly from the configured range, transfers
    the atom to F=3 with the pulse probability, then reads the state from
    one ``detect_ms`` count bin while the atom keeps jumping at ``rates``.
    A bin counts as F=3 when its counts exceed the midpoint of the two
    levels. The detection background is not an input here: it emerges from
    jumps and Poisson noise during the readout.
    """
    from .telegraph import LevelModel, bin_counts, sample_spin_path

    rates = rates or JumpRates()
    level = LevelModel(rate_high=high_counts_per_ms, rate_low=low_counts_per_ms)
    threshold = 0.5 * (high_counts_per_ms + low_counts_per_ms) * detect_ms
    dets = np.asarray(detunings_mhz, dtype=float)
    cycles = np.broadcast_to(np.asarray(n_cycles, dtype=int), dets.shape)
    rng = np.random.default_rng(seed)
    sweep = _sweep(m.kappa_mhz, m.gamma_mhz, m.n_fock)
    p_f3 = np.empty(len(dets))
    for i, (det, n) in enumerate(zip(dets, cycles)):
        g = rng.uniform(m.g_low_mhz, m.g_high_mhz, size=n)
        rate = sweep.scattering_rate_per_us(g, m.delta_ca_mhz, det, m.eta_mhz())
        in_f3 = rng.random(n) < _rate_to_probability(rate, m.pulse_us, m.branch_to_f3)
        seen_f3 = 0
        for start_f3 in in_f3:
            sub = int(rng.integers(2**63))
            path = sample_spin_path(rates, detect_ms, 3 if start_f3 else 4, sub)
            counts = bin_counts(path, level, 1.0, detect_ms, sub + 1).counts
            seen_f3 += counts[0] > threshold
        p_f3[i] = seen_f3 / n
    return SpectrumData(dets, p_f3, cycles)


@dataclass
class SpectrumFit:
    """Result of :func:`fit_spectrum`.

    ``covariance`` is ordered ``(n_ph, delta_ca_mhz)`` and is the inverse
    of the weighted normal matrix (binomial weights are absolute, so it is
    not rescaled by the reduced chi-square).
    """

    n_ph: float
    n_ph_err: float
    delta_ca_mhz: float
    delta_ca_err: float
    covariance: np.ndarray
    chi2: float
    dof: int
    n_evals: int
    model: NmsModelParams = field(repr=False)

    def to_dict(self):
        return {"n_ph": self.n_ph, "n_ph_err": self.n_ph_err,
                "delta_ca_mhz": self.delta_ca_mhz, "delta_ca_err": self.delta_ca_err,
                "covariance": self.covariance.tolist(), "chi2": self.chi2, "dof": self.dof,
                "n_evals": self.n_evals,
                "fixed": {k: v for k, v in dataclasses.asdict(self.model).items()
                          if k not in ("n_ph", "delta_ca_mhz")}}


def _sigmas(data: SpectrumData):
    if data.n_cycles is None:
        raise ParameterError("fitting needs n_cycles for binomial weights")
    n = data.n_cycles.astype(float)
    p = np.clip(data.p_f3, 0.5 / n, 1 - 0.5 / n)
    return np.sqrt(p * (1 - p) / n)


def _linear_model(fixed: NmsModelParams, dets, n_ph, dca):
    """Spectrum with the linear-response scattering rate (no saturation)."""
    g, w = fixed.g_nodes()
    dca = np.atleast_1d(dca)
    _, beta = linear_response(g[None, :, None], fixed.kappa_mhz, fixed.gamma_mhz,
                              dca[:, None, None], dets[None, None, :], fixed.eta_mhz(n_ph))
    rate = 2 * to_angular(fixed.gamma_mhz) * np.abs(beta) ** 2
    p = np.einsum("g,dgk->dk", w, _rate_to_probability(rate, fixed.pulse_us, fixed.branch_to_f3))
    return fixed.background + (1 - fixed.background) * p


def _start_point(data: SpectrumData, fixed: NmsModelParams, sigma):
    """Seed for the full fit from the linear-response model.

    A coarse grid fixes the sign of the cavity-atom detuning (set by the
    peak asymmetry); a continuous fit of the same cheap model then lands
    close enough that the full model converges in a few iterations.
    """
    dets = data.detunings_mhz
    dca_grid = np.linspace(-25.0, 25.0, 51)
    best = (np.inf, None)
    for n in np.geomspace(1e-3, 1.0, 31):
        chi2 = np.sum(((_linear_model(fixed, dets, n, dca_grid) - data.p_f3) / sigma) ** 2, axis=1)
        i = int(np.argmin(chi2))
        if chi2[i] < best[0]:
            best = (chi2[i], (n, dca_grid[i]))
    n0, d0 = best[1]
    res = least_squares(
        lambda th: (_linear_model(fixed, dets, math.exp(th[0]), th[1])[0] - data.p_f3) / sigma,
        [math.log(n0), d0], method="lm", x_scale=[0.05, 1.0])
    return (math.exp(res.x[0]), float(res.x[1])) if res.success else (n0, d0)


def fit_spectrum(data: SpectrumData, fixed: NmsModelParams | None = None,
                 start=None, tol: float = 1e-10) -> SpectrumFit:
    """Weighted least-squares fit of ``n_ph`` and ``delta_ca_mhz``.

    Everything except the two fit parameters is taken from ``fixed``.

    Raises
    ------
    DegenerateDataError
        Fewer than 6 points, or data statistically consistent with a flat
        line.
    FitDivergedError
        The optimizer did not converge or the normal matrix is singular.
    """
    fixed = fixed or NmsModelParams()
    if len(data.p_f3) < 6:
        raise DegenerateDataError("need at least 6 detuning points")
    sigma = _sigmas(data)
    wmean = np.average(data.p_f3, weights=sigma**-2)
    chi2_flat = np.sum(((data.p_f3 - wmean) / sigma) ** 2)
    n = len(data.p_f3)
    if chi2_flat <= (n - 1) + 3 * math.sqrt(2 * (n - 1)):
        raise DegenerateDataError("spectrum is consistent with a flat line")

    x0 = start if start is not None else _start_point(data, fixed, sigma)
    # n_ph is fitted on a log scale to keep it positive
    evals = 0

    def residuals(theta):
        nonlocal evals
        theta = np.atleast_2d(theta)
        evals += len(theta)
        model = _model_values(fixed, data.detunings_mhz, np.exp(theta[:, 0]), theta[:, 1])
        return (model - data.p_f3) / sigma

    theta0 = np.array([math.log(x0[0]), x0[1]])
    try:
        theta, jac = _gauss_newton(residuals, theta0, tol)
    except FitDivergedError:
        theta, jac = None, None
    except SolverError as exc:
        raise FitDivergedError(f"spectrum fit failed: {exc}") from exc
    if theta is None:
        try:
            res = least_squares(lambda th: residuals(th)[0], theta0, method="lm",
                                xtol=tol, ftol=tol, gtol=tol, x_scale=[0.05, 1.0])
        except SolverError as exc:
            raise FitDivergedError(f"spectrum fit failed: {exc}") from exc
        if not res.success:
            raise FitDivergedError(f"spectrum fit did not converge: {res.message}")
        theta, jac = res.x, res.jac
    r = residuals(theta)[0]
    n_ph, dca = math.exp(theta[0]), float(theta[1])
    jac = jac.copy()
    jac[:, 0] /= n_ph  # d/d(log n) -> d/dn
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError as exc:
        raise FitDivergedError("singular normal matrix") from exc
    return SpectrumFit(n_ph, float(np.sqrt(cov[0, 0])), dca, float(np.sqrt(cov[1, 1])), cov,
                       float(r @ r), n - 2, evals, fixed.replace(n_ph=n_ph, delta_ca_mhz=dca))


_FD_STEPS = np.array([1e-6, 1e-5])


def _gauss_newton(residuals, theta, tol, max_iter=50):
    """Gauss-Newton with forward-difference Jacobian and step halving.

    ``residuals`` maps a stack of parameter vectors to a stack of residual
    vectors, so every trial point is evaluated together with its two
    Jacobian perturbations in one batched model call. Converges when every
    step component is below ``tol`` (relative to ``max(1, |theta|)``).
    Returns ``(theta, jacobian)``.
    """
    probe = np.vstack([np.zeros(2), np.diag(_FD_STEPS)])

    def evaluate(theta):
        r_all = residuals(theta + probe)
        r = r_all[0]
        return r, ((r_all[1:] - r) / _FD_STEPS[:, None]).T, r @ r

    r, jac, chi2 = evaluate(theta)
    for _ in range(max_iter):
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            raise FitDivergedError("non-finite Gauss-Newton step")
        if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(theta))):
            return theta + step, jac
        for _ in range(30):
            r_new, jac_new, chi2_new = evaluate(theta + step)
            if chi2_new <= chi2 * (1 + 1e-12):
                break
            step = 0.5 * step
        else:
            raise FitDivergedError("Gauss-Newton step halving failed")
        theta, r, jac, chi2 = theta + step, r_new, jac_new, chi2_new
    raise FitDivergedError("Gauss-Newton did not converge")


def spectrum_peaks(detunings_mhz, values):
    """Detunings of interior local maxima, sorted by height (highest first)."""
    v = np.asarray(values)
    idx = [i for i in range(1, len(v) - 1) if v[i] > v[i - 1] and v[i] >= v[i + 1]]
    idx.sort(key=lambda i: -v[i])
    return np.asarray(detunings_mhz)[idx]


def readout_jump_probability(rate_4to3_per_s: float = 106.0, detect_ms: float = 2.0) -> float:
    """Chance of at least one F=4 -> F=3 jump within the readout window."""
    return -math.expm1(-rate_4to3_per_s * detect_ms * 1e-3)
