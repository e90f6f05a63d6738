"""Driven, damped Tavis-Cummings model and its steady state.

The model lives in the frame rotating at the probe frequency (hbar = 1,
angular units rad/us)::

    H = -dpc a^dag a + sum_i [ -dpa s_i^+ s_i^- + g_i (a^dag s_i^- + a s_i^+) ]
        + eta (a + a^dag)

with ``dpa = dpc + dca``, and Lindblad dissipators ``sqrt(2 kappa) a`` and
``sqrt(2 gamma) s_i^-``.  Density matrices are vectorized row-major
(``rho.reshape(-1)``), for which ``vec(A rho B) = kron(A, B.T) vec(rho)``.

Atoms in the dark F=3 state are not part of the model; a configuration
with ``k`` bright atoms is built with ``n_atoms = k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, ParameterError, SolverError, TruncationError
from .params import SystemParams, per_us_to_per_s, to_angular

MAX_LIOUVILLE_DIM = 4096
TAIL_TOL = 1e-6
RESIDUAL_TOL = 1e-10
PSD_TOL = -1e-9


@dataclass(frozen=True)
class HilbertConfig:
    """Fock-space cutoff and number of two-level atoms."""

    n_fock: int = 6
    n_atoms: int = 1

    def __post_init__(self):
        if self.n_fock < 2:
            raise ParameterError("n_fock must be >= 2")
        if self.n_atoms not in (1, 2):
            raise ParameterError("n_atoms must be 1 or 2")

    @property
    def dim(self) -> int:
        return self.n_fock * 2**self.n_atoms

    @property
    def atom_dim(self) -> int:
        return 2**self.n_atoms


def _operators(h: HilbertConfig):
    """Sparse a, [sigma_i^-], and the total excitation number (diagonal)."""
    nf, na = h.n_fock, h.n_atoms
    a1 = sp.diags(np.sqrt(np.arange(1, nf)), 1, format="csr")
    sm1 = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    eye2 = sp.identity(2, format="csr")
    a = sp.kron(a1, sp.identity(2**na), format="csr")
    sms = []
    for i in range(na):
        ops = [eye2] * na
        ops[i] = sm1
        atom_op = ops[0]
        for op in ops[1:]:
            atom_op = sp.kron(atom_op, op, format="csr")
        sms.append(sp.kron(sp.identity(nf), atom_op, format="csr"))
    return a, sms


def _excitation_diagonal(h: HilbertConfig) -> np.ndarray:
    photons = np.repeat(np.arange(h.n_fock), h.atom_dim)
    atoms = np.tile([bin(k).count("1") for k in range(h.atom_dim)], h.n_fock)
    return (photons + atoms).astype(float)


def _spre(op, d):
    return sp.kron(op, sp.identity(d), format="csr")


def _spost(op, d):
    return sp.kron(sp.identity(d), op.T, format="csr")


def _dissipator(c, d):
    cdc = (c.conj().T @ c).tocsr()
    return (sp.kron(c, c.conj(), format="csr")
            - 0.5 * _spre(cdc, d) - 0.5 * _spost(cdc, d))


def _commutator(op, d):
    """Superoperator of rho -> -i [op, rho]."""
    return -1j * (_spre(op, d) - _spost(op, d))


@dataclass
class Liouvillian:
    """Lindblad generator acting on row-major vectorized density matrices.

    ``matrix`` is the full superoperator. The parts it is assembled from
    are kept so that steady states can be differentiated with respect to
    the probe detuning, the cavity-atom detuning, and the drive amplitude
    without rebuilding: ``dL/d(dpc)`` equals ``dL/d(dca)`` restricted to
    the atom terms plus the photon-number term.
    """

    matrix: sp.csr_matrix
    hilbert: HilbertConfig
    params: SystemParams
    drive_eta_mhz: float
    couplings_mhz: tuple
    d_detuning_pc: sp.csr_matrix = field(repr=False)
    d_detuning_ca: sp.csr_matrix = field(repr=False)
    d_drive: sp.csr_matrix = field(repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, vec):
        return self.matrix @ vec

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Return L(rho) as a matrix."""
        d = self.hilbert.dim
        return (self.matrix @ rho.reshape(-1)).reshape(d, d)


def build_liouvillian(p: SystemParams, h: HilbertConfig | None = None,
                      drive_eta_mhz: float | None = None, couplings_mhz=None,
                      max_dim: int = MAX_LIOUVILLE_DIM) -> Liouvillian:
    """Assemble the Lindblad superoperator for ``p``.

    Parameters
    ----------
    p : SystemParams
        Frequencies in MHz; converted to rad/us here.
    h : HilbertConfig, optional
        Defaults to ``n_fock=6`` and ``p.n_atoms`` atoms.
    drive_eta_mhz : float, optional
        Probe drive amplitude. Defaults to the value that puts ``p.n_empty``
        photons in the resonantly driven empty cavity.
    couplings_mhz : sequence of float, optional
        Per-atom couplings; defaults to ``p.g_mhz`` for every atom.
    max_dim : int
        Cap on the Liouville-space dimension ``dim**2``.
    """
    h = h or HilbertConfig(n_atoms=p.n_atoms)
    d = h.dim
    if d * d > max_dim:
        raise DimensionError(f"Liouville dimension {d * d} exceeds cap {max_dim}")
    eta_mhz = p.drive_eta_mhz() if drive_eta_mhz is None else drive_eta_mhz
    if couplings_mhz is None:
        couplings_mhz = (p.g_mhz,) * h.n_atoms
    couplings_mhz = tuple(float(c) for c in couplings_mhz)
    if len(couplings_mhz) != h.n_atoms:
        raise ParameterError("need one coupling per atom")

    kappa, gamma = to_angular(p.kappa_mhz), to_angular(p.gamma_mhz)
    dpc, dpa = to_angular(p.delta_pc_mhz), to_angular(p.delta_pa_mhz)
    eta = to_angular(eta_mhz)

    a, sms = _operators(h)
    ad = a.conj().T.tocsr()
    n_ph = (ad @ a).tocsr()
    n_at = sp.csr_matrix((d, d))
    h_int = sp.csr_matrix((d, d), dtype=complex)
    for g, sm in zip(couplings_mhz, sms):
        n_at = n_at + sm.conj().T @ sm
        h_int = h_int + to_angular(g) * (ad @ sm + a @ sm.conj().T)
    h_drive = (a + ad).tocsr()

    hamiltonian = -dpc * n_ph - dpa * n_at + h_int + eta * h_drive
    lmat = _commutator(hamiltonian.tocsr(), d)
    lmat = lmat + _dissipator(np.sqrt(2 * kappa) * a, d)
    for sm in sms:
        lmat = lmat + _dissipator(np.sqrt(2 * gamma) * sm, d)

    # derivatives per MHz of the respective frequency
    d_ca = _commutator(-to_angular(1.0) * n_at.tocsr(), d)
    d_pc = _commutator(-to_angular(1.0) * (n_ph + n_at).tocsr(), d)
    d_eta = _commutator(to_angular(1.0) * h_drive, d)
    return Liouvillian(lmat.tocsr(), h, p, float(eta_mhz), couplings_mhz,
                       d_pc.tocsr(), d_ca.tocsr(), d_eta.tocsr())


@dataclass
class SteadyState:
    """Steady-state density matrix and derived observables.

    ``p_excited`` holds one entry per atom. ``transmission`` is the
    photon number relative to the resonantly driven empty cavity at the
    same drive, ``n_photon * kappa**2 / eta**2``.
    """

    rho: np.ndarray
    n_photon: float
    p_excited: np.ndarray
    transmission: float
    hilbert: HilbertConfig
    residual: float
    tail_population: float


def _trace_row(d):
    row = np.zeros(d * d, dtype=complex)
    row[np.arange(d) * (d + 1)] = 1.0
    return row


def _constrained(lmat, d):
    """Replace the first row (the rho_00 equation) by the trace functional."""
    lil = lmat.tolil(copy=True)
    lil[0, :] = _trace_row(d)
    return lil.tocsc()


def _observables(rho, h: HilbertConfig):
    d, nf, ad = h.dim, h.n_fock, h.atom_dim
    diag = np.real(np.diag(rho))
    photon_pop = diag.reshape(nf, ad).sum(axis=1)
    n_photon = float(np.dot(np.arange(nf), photon_pop))
    atom_pop = diag.reshape(nf, ad).sum(axis=0)
    p_exc = np.empty(h.n_atoms)
    for i in range(h.n_atoms):
        bit = h.n_atoms - 1 - i
        mask = np.array([(k >> bit) & 1 for k in range(ad)], dtype=bool)
        p_exc[i] = atom_pop[mask].sum()
    return n_photon, p_exc, float(photon_pop[-1])


def steady_state(L: Liouvillian, check_tail: bool = True) -> SteadyState:
    """Solve ``L(rho) = 0`` with ``tr(rho) = 1`` by a sparse direct solve.

    Raises
    ------
    SolverError
        Singular system, residual above 1e-10, or a state that is not
        positive semidefinite.
    TruncationError
        Top Fock level holds more than 1e-6 population.
    """
    h = L.hilbert
    d = h.dim
    a_mat = _constrained(L.matrix, d)
    rhs = np.zeros(d * d, dtype=complex)
    rhs[0] = 1.0
    with np.errstate(all="raise"):
        try:
            x = spla.spsolve(a_mat, rhs)
        except (RuntimeError, FloatingPointError) as exc:
            raise SolverError(f"steady-state solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("steady-state solve produced non-finite values")
    return _finish(x, L, check_tail)


def _finish(x, L: Liouvillian, check_tail=True) -> SteadyState:
    h = L.hilbert
    d = h.dim
    rho = x.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(L.matrix @ rho.reshape(-1)))
    if residual > RESIDUAL_TOL:
        raise SolverError(f"steady-state residual {residual:.3e} above {RESIDUAL_TOL}")
    if np.linalg.eigvalsh(rho).min() < PSD_TOL:
        raise SolverError("steady state is not positive semidefinite")
    n_photon, p_exc, tail = _observables(rho, h)
    if check_tail and tail > TAIL_TOL:
        raise TruncationError(
            f"top Fock level population {tail:.2e} > {TAIL_TOL}; increase n_fock")
    eta2 = L.drive_eta_mhz**2
    transmission = n_photon * L.params.kappa_mhz**2 / eta2 if eta2 > 0 else 0.0
    return SteadyState(rho, n_photon, p_exc, transmission, h, residual, tail)


def scattering_rate(s: SteadyState, p: SystemParams):
    """Photon scattering rate ``2 gamma <s^+ s^->`` in s^-1.

    Returns a float for one atom and an array of per-atom rates for two.
    """
    rates = per_us_to_per_s(2.0 * to_angular(p.gamma_mhz) * s.p_excited)
    rates = np.clip(rates, 0.0, None)
    return float(rates[0]) if s.hilbert.n_atoms == 1 else rates


def linear_response(g_mhz, kappa_mhz, gamma_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz, n_atoms=1):
    """Weak-drive cavity amplitude and per-atom dipole amplitude.

    All arguments broadcast. ``N`` identical atoms couple to the mode with
    ``g sqrt(N)``. Units cancel, so MHz are used directly.
    """
    g = np.asarray(g_mhz, dtype=float)
    dpc = np.asarray(delta_pc_mhz, dtype=float)
    dpa = dpc + delta_ca_mhz
    atom = gamma_mhz - 1j * dpa
    denom = (kappa_mhz - 1j * dpc) * atom + n_atoms * g * g
    alpha = -1j * eta_mhz * atom / denom
    beta = -1j * g * alpha / atom
    return alpha, beta


def weak_drive_response(p: SystemParams, delta_pc_mhz=None, n_atoms=None,
                        drive_eta_mhz=None):
    """Linear-response transmission and excitation for the parameters ``p``.

    Returns ``(transmission, p_excited_per_atom, n_photon)``, broadcasting
    over ``delta_pc_mhz``. Transmission is
    ``|kappa (gamma - i dpa) / ((kappa - i dpc)(gamma - i dpa) + N g^2)|^2``.
    """
    dpc = p.delta_pc_mhz if delta_pc_mhz is None else delta_pc_mhz
    n = p.n_atoms if n_atoms is None else n_atoms
    eta = p.drive_eta_mhz() if drive_eta_mhz is None else drive_eta_mhz
    alpha, beta = linear_response(p.g_mhz, p.kappa_mhz, p.gamma_mhz, p.delta_ca_mhz, dpc, 1.0, n)
    transmission = np.abs(alpha * p.kappa_mhz) ** 2
    return transmission, eta**2 * np.abs(beta) ** 2, eta**2 * np.abs(alpha) ** 2


@dataclass
class Spectrum:
    """Steady-state observables along a probe-detuning scan."""

    detuning_mhz: np.ndarray
    transmission: np.ndarray
    p_excited: np.ndarray
    scattering_rate_per_s: np.ndarray
    n_photon: np.ndarray

    def __iter__(self):
        """Yield ``(detuning, transmission, p_excited)`` triples."""
        for row in zip(self.detuning_mhz, self.transmission, self.p_excited):
            yield row

    def __len__(self):
        return len(self.detuning_mhz)

    def to_csv(self, path, comment=None):
        """Two-atom rows carry the mean over atoms."""
        from ._io import write_csv

        rate = self.scattering_rate_per_s
        pe = self.p_excited
        if pe.ndim > 1:
            pe, rate = pe.mean(axis=1), rate.mean(axis=1)
        write_csv(path, ["detuning_mhz", "transmission", "p_excited", "scattering_rate_per_s"],
                  zip(self.detuning_mhz, self.transmission, pe, rate), comment)


def transmission_spectrum(p: SystemParams, detunings_mhz, drive_eta_mhz=None,
                          hilbert: HilbertConfig | None = None,
                          couplings_mhz=None) -> Spectrum:
    """Scan the probe-cavity detuning and solve the steady state at each point.

    ``p.delta_pc_mhz`` is ignored; the scan values replace it. For two
    atoms ``p_excited`` and the scattering rate have one column per atom.
    """
    dets = np.asarray(detunings_mhz, dtype=float)
    if not np.all(np.isfinite(dets)):
        raise ParameterError("detunings must be finite")
    h = hilbert or HilbertConfig(n_atoms=p.n_atoms)
    base = build_liouvillian(p.replace(delta_pc_mhz=0.0, n_atoms=h.n_atoms), h,
                             drive_eta_mhz, couplings_mhz)
    trans, pexc, rates, nph = [], [], [], []
    for det in dets:
        L = _shift_probe(base, det)
        s = steady_state(L)
        trans.append(s.transmission)
        pexc.append(s.p_excited)
        rates.append(per_us_to_per_s(2.0 * to_angular(p.gamma_mhz) * s.p_excited))
        nph.append(s.n_photon)
    squeeze = (lambda x: x[:, 0]) if h.n_atoms == 1 else (lambda x: x)
    return Spectrum(dets, np.array(trans), squeeze(np.array(pexc)),
                    squeeze(np.clip(np.array(rates), 0, None)), np.array(nph))


def _shift_probe(L: Liouvillian, delta_pc_mhz: float) -> Liouvillian:
    """Liouvillian with the probe detuning moved by ``delta_pc_mhz``."""
    return Liouvillian(
        (L.matrix + delta_pc_mhz * L.d_detuning_pc).tocsr(), L.hilbert,
        L.params.replace(delta_pc_mhz=L.params.delta_pc_mhz + delta_pc_mhz),
        L.drive_eta_mhz, L.couplings_mhz, L.d_detuning_pc, L.d_detuning_ca, L.d_drive)


class SteadyStateSweep:
    """Batched steady states over (g, dca, dpc, eta) for identical atoms.

    The undriven Liouvillian conserves the excitation-number difference
    ``k = N(ket) - N(bra)`` of each matrix unit ``|s><t|``; the drive only
    couples ``k`` to ``k +- 1``.  The generator is therefore block
    tridiagonal in ``k``, and all diagonal observables live in the
    ``k = 0`` block.  Eliminating the outer sectors by Schur complements
    leaves one small system per parameter point, so thousands of points
    are solved with batched ``numpy.linalg.solve`` calls on blocks of a
    few dozen rows.  The result is exact up to round-off (no
    perturbative truncation in the drive).

    Because ``L(rho^dag) = L(rho)^dag``, sector ``-k`` is the complex
    conjugate of sector ``k`` under transposition of matrix units, so only
    the ``k > 0`` chain is eliminated explicitly.

    Frequencies are given in MHz, as everywhere else.
    """

    def __init__(self, kappa_mhz: float, gamma_mhz: float, hilbert: HilbertConfig | None = None):
        self.hilbert = h = hilbert or HilbertConfig()
        self.kappa_mhz, self.gamma_mhz = kappa_mhz, gamma_mhz
        d = h.dim
        a, sms = _operators(h)
        ad = a.conj().T.tocsr()
        n_ph = (ad @ a).tocsr()
        n_at = sum((sm.conj().T @ sm for sm in sms), sp.csr_matrix((d, d))).tocsr()
        coupling = sum((ad @ sm + a @ sm.conj().T for sm in sms), sp.csr_matrix((d, d)))
        w = to_angular(1.0)
        diss = _dissipator(np.sqrt(2 * to_angular(kappa_mhz)) * a, d)
        for sm in sms:
            diss = diss + _dissipator(np.sqrt(2 * to_angular(gamma_mhz)) * sm, d)
        diss_g = {"diss": diss.toarray().astype(complex),
                  "g": _commutator(w * coupling.tocsr(), d).toarray()}
        drive = _commutator(w * (a + ad).tocsr(), d).toarray()
        # detuning superoperators are diagonal
        diag_pc = _commutator(-w * (n_ph + n_at).tocsr(), d).diagonal()
        diag_ca = _commutator(-w * n_at, d).diagonal()

        exc = _excitation_diagonal(h).astype(int)
        sector = (exc[:, None] - exc[None, :]).reshape(-1)
        self.k_max = k_max = int(sector.max())
        idx = {k: np.flatnonzero(sector == k) for k in range(-k_max, k_max + 1)}
        self._check_structure(diss_g, drive, diag_pc, diag_ca, sector)

        keep = range(0, k_max + 1)
        self._diss = {k: diss_g["diss"][np.ix_(idx[k], idx[k])] for k in keep}
        self._g = {k: diss_g["g"][np.ix_(idx[k], idx[k])] for k in keep}
        self._pc = {k: diag_pc[idx[k]] for k in keep}
        self._ca = {k: diag_ca[idx[k]] for k in keep}
        # drive blocks between sectors k and k+1
        self._up = {k: drive[np.ix_(idx[k], idx[k + 1])] for k in range(k_max)}
        self._down = {k: drive[np.ix_(idx[k + 1], idx[k])] for k in range(k_max)}

        idx0 = idx[0]
        where = {v: i for i, v in enumerate(idx0)}
        s, t = np.divmod(idx0, d)
        self._transpose0 = np.array([where[tt * d + ss] for ss, tt in zip(s, t)])
        self._diag_pos = np.array([where[q * d + q] for q in range(d)])
        self._trace_pos = self._diag_pos[0]

    @staticmethod
    def _check_structure(diss_g, drive, diag_pc, diag_ca, sector):
        same = sector[:, None] == sector[None, :]
        adjacent = np.abs(sector[:, None] - sector[None, :]) == 1
        for m in diss_g.values():
            if np.any(m[~same] != 0):
                raise AssertionError("undriven Liouvillian mixes excitation sectors")
        if np.any(drive[~adjacent] != 0):
            raise AssertionError("drive couples non-adjacent sectors")

    def _sector_matrix(self, k, g, dca, dpc):
        m = self._diss[k] + g[:, None, None] * self._g[k]
        diag = dpc[:, None] * self._pc[k] + dca[:, None] * self._ca[k]
        i = np.arange(m.shape[-1])
        m[:, i, i] += diag
        return m

    @staticmethod
    def _left(const, x):
        """``const @ x[b]`` for every batch entry, as one GEMM."""
        return np.tensordot(const, x, axes=([1], [1])).transpose(1, 0, 2)

    def _outer_contribution(self, g, dca, dpc, eta):
        """Schur contribution of sectors 1..k_max to the k=0 block.

        Every drive block carries one factor of eta, so each elimination
        step contributes ``eta**2 * up @ S^-1 @ down``.
        """
        eta2 = (eta * eta)[:, None, None]
        schur = self._sector_matrix(self.k_max, g, dca, dpc)
        for k in range(self.k_max - 1, 0, -1):
            x = np.linalg.solve(schur, self._down[k])
            schur = self._sector_matrix(k, g, dca, dpc) - eta2 * self._left(self._up[k], x)
        x = np.linalg.solve(schur, self._down[0])
        return eta2 * self._left(self._up[0], x)

    def populations(self, g_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz):
        """Diagonal of the steady-state density matrix.

        Arguments broadcast against each other; the result has the
        broadcast shape plus one trailing axis of length ``hilbert.dim``.
        """
        g, dca, dpc, eta = np.broadcast_arrays(
            *(np.asarray(x, dtype=float) for x in (g_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz)))
        shape = g.shape
        g, dca, dpc, eta = (x.reshape(-1) for x in (g, dca, dpc, eta))
        mat = self._sector_matrix(0, g, dca, dpc)
        if self.k_max > 0:
            plus = self._outer_contribution(g, dca, dpc, eta)
            tp = self._transpose0
            mat -= plus
            mat -= plus[:, tp[:, None], tp[None, :]].conj()
        mat[:, self._trace_pos, :] = 0.0
        mat[:, self._trace_pos, self._diag_pos] = 1.0
        rhs = np.zeros(mat.shape[:2] + (1,), dtype=complex)
        rhs[:, self._trace_pos] = 1.0
        x = np.linalg.solve(mat, rhs)[..., 0]
        pops = np.real(x[:, self._diag_pos])
        return pops.reshape(shape + (self.hilbert.dim,))

    def observables(self, g_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz, check_tail=True):
        """Return ``(n_photon, p_excited_per_atom, tail_population)`` arrays."""
        h = self.hilbert
        pops = self.populations(g_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz)
        by_photon = pops.reshape(pops.shape[:-1] + (h.n_fock, h.atom_dim))
        photon_pop = by_photon.sum(axis=-1)
        atom_pop = by_photon.sum(axis=-2)
        n_photon = photon_pop @ np.arange(h.n_fock)
        masks = [np.array([(k >> (h.n_atoms - 1 - i)) & 1 for k in range(h.atom_dim)], bool)
                 for i in range(h.n_atoms)]
        p_exc = np.stack([atom_pop[..., m].sum(axis=-1) for m in masks], axis=-1)
        tail = photon_pop[..., -1]
        if check_tail and np.any(tail > TAIL_TOL):
            raise TruncationError(
                f"top Fock level population {tail.max():.2e} > {TAIL_TOL}; increase n_fock")
        return n_photon, p_exc, tail

    def scattering_rate_per_us(self, g_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz, check_tail=True):
        """Photon scattering rate of the first atom, ``2 gamma p_e`` in 1/us."""
        _, p_exc, _ = self.observables(g_mhz, delta_ca_mhz, delta_pc_mhz, eta_mhz, check_tail)
        return 2.0 * to_angular(self.gamma_mhz) * np.clip(p_exc[..., 0], 0.0, None)
