"""Synthetic photon-count telegraph traces.

A continuous-time Markov chain switches the atom (or pair of atoms)
between hyperfine configurations; each configuration fixes the expected
detected count rate through a :class:`LevelModel`. Photon counts in each
time bin are Poisson distributed around the time-weighted mean rate, so a
jump inside a bin produces an intermediate mean.

Seeds: every function taking ``seed`` accepts anything
``numpy.random.default_rng`` accepts. Ensembles derive the stream of trace
``i`` from ``(seed, i)`` so traces are independent of ensemble size and
ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._io import parse_columns, read_csv, write_csv, write_json
from .errors import ParameterError
from .params import JumpRates

F3, F4 = 3, 4


@dataclass(frozen=True)
class LevelModel:
    """Expected detected count rates (counts/ms) per configuration.

    ``rate_high`` applies with no atom coupled (empty cavity or atom in
    F=3), ``rate_low`` with one coupled atom and ``rate_low2`` with two.
    ``rate_low2`` defaults to ``rate_low``. ``background`` is added on top
    of every level.

    The defaults describe the single-atom telegraph experiment: 20
    counts/ms at high transmission and a coupled level at 20% of that.
    """

    rate_high: float = 20.0
    rate_low: float = 4.0
    rate_low2: float | None = None
    background: float = 0.0

    def __post_init__(self):
        if self.rate_low2 is None:
            object.__setattr__(self, "rate_low2", self.rate_low)
        vals = (self.rate_high, self.rate_low, self.rate_low2, self.background)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError("level rates must be finite")
        if not self.rate_high > self.rate_low >= self.rate_low2 >= 0:
            raise ParameterError("need rate_high > rate_low >= rate_low2 >= 0")
        if self.background < 0:
            raise ParameterError("background must be non-negative")

    def rate(self, n_coupled):
        """Count rate for ``n_coupled`` atoms in F=4 (array friendly)."""
        table = np.array([self.rate_high, self.rate_low, self.rate_low2])
        return table[np.asarray(n_coupled)]

    @classmethod
    def from_transmissions(cls, rate_high, t1, t2=None, background=0.0) -> LevelModel:
        """Levels from an empty-cavity rate and normalized transmissions."""
        return cls(rate_high, rate_high * t1, None if t2 is None else rate_high * t2, background)


@dataclass
class CountTrace:
    """Binned photon counts. Bin ``i`` covers ``t0_ms + [i, i+1) * bin_ms``."""

    bin_ms: float
    counts: np.ndarray
    t0_ms: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or len(counts) < 1:
            raise ParameterError("counts must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ParameterError("counts must be non-negative integers")
        if not self.bin_ms > 0:
            raise ParameterError("bin_ms must be positive")
        self.counts = counts.astype(np.int64)

    def __len__(self):
        return len(self.counts)

    @property
    def times_ms(self):
        """Left edge of every bin."""
        return self.t0_ms + self.bin_ms * np.arange(len(self.counts))

    def segment(self, start, stop) -> CountTrace:
        """Bins ``start..stop`` inclusive, with the time origin kept."""
        return CountTrace(self.bin_ms, self.counts[start:stop + 1],
                          self.t0_ms + start * self.bin_ms, dict(self.meta))

    def to_csv(self, path, comment=None):
        write_csv(path, ["t_ms", "counts"], zip(self.times_ms, self.counts), comment)

    @classmethod
    def from_csv(cls, path) -> CountTrace:
        header, rows = read_csv(path)
        if header[:2] != ["t_ms", "counts"]:
            raise ParameterError(f"{path}: expected header 't_ms,counts'")
        t, counts = (np.array(c) for c in parse_columns(path, rows, [float, int]))
        if len(t) < 1:
            raise ParameterError(f"{path}: no data rows")
        bin_ms = float(t[1] - t[0]) if len(t) > 1 else 1.0
        if len(t) > 2 and not np.allclose(np.diff(t), bin_ms, rtol=1e-9, atol=1e-12):
            raise ParameterError(f"{path}: times are not evenly spaced")
        return cls(bin_ms, counts, float(t[0]))


@dataclass
class SpinPath:
    """Piecewise-constant jump record on ``[0, duration_ms)``.

    ``times_ms[k]`` is when ``states[k]`` begins; ``times_ms[0] == 0``.
    For a single atom the states are 3 and 4. Iterating yields
    ``(time_ms, state)`` pairs.
    """

    times_ms: np.ndarray
    states: np.ndarray
    duration_ms: float

    def __iter__(self):
        return iter(zip(self.times_ms.tolist(), self.states.tolist()))

    def __len__(self):
        return len(self.times_ms)

    @property
    def n_jumps(self):
        return len(self.times_ms) - 1

    def n_coupled(self):
        """Number of atoms in F=4 during each segment."""
        return (self.states == F4).astype(int)

    def dwell_times(self):
        """``(state, duration)`` of every complete dwell (edges excluded)."""
        d = np.diff(self.times_ms)[1:]
        return self.states[1:-1], d

    def occupancy(self, bin_ms, n_bins=None, weight=None):
        """Time-average of ``weight`` per segment over consecutive bins.

        ``weight`` defaults to the F=4 indicator.
        """
        if weight is None:
            weight = (self.states == F4).astype(float)
        n_bins = n_bins if n_bins is not None else _n_bins(self.duration_ms, bin_ms)
        edges = bin_ms * np.arange(n_bins + 1)
        return np.diff(_cumulative(self.times_ms, weight, self.duration_ms, edges)) / bin_ms


@dataclass
class ConfigPath(SpinPath):
    """Jump record whose states count the atoms in F=4 (two-atom chain)."""

    def n_coupled(self):
        return self.states.astype(int)

    def occupancy(self, bin_ms, n_bins=None, weight=None):
        if weight is None:
            weight = self.states.astype(float)
        return super().occupancy(bin_ms, n_bins, weight)


def _n_bins(duration_ms, bin_ms):
    n = int(math.floor(duration_ms / bin_ms + 1e-9))
    if n < 1:
        raise ParameterError("path shorter than one bin")
    return n


def _cumulative(times, values, duration, at):
    """Integral of the step function ``values`` on ``[0, at]``."""
    knots = np.append(times, duration)
    cum = np.concatenate([[0.0], np.cumsum(values * np.diff(knots))])
    return np.interp(at, knots, cum)


def sample_spin_path(rates: JumpRates, duration_ms: float, initial_state=None, seed=None) -> SpinPath:
    """Exact sample of the two-state jump process F=4 <-> F=3.

    Waiting times are exponential with the exit rate of the current state.
    ``initial_state`` is 3, 4, or ``None`` to draw it from the stationary
    distribution. A zero repump rate makes F=3 absorbing.
    """
    if not duration_ms > 0:
        raise ParameterError("duration_ms must be positive")
    rng = np.random.default_rng(seed)
    if initial_state is None:
        initial_state = F4 if rng.random() < rates.p_f4 else F3
    if initial_state not in (F3, F4):
        raise ParameterError("initial_state must be 3, 4 or None")
    r43, r34 = rates.per_ms()
    # states alternate, so draw waiting times in chunks with alternating scales
    exit_rate = np.array([r43, r34] if initial_state == F4 else [r34, r43])
    times = [np.zeros(1)]
    t = 0.0
    k = 0
    while True:
        chunk = int(duration_ms * (r43 + r34)) + 64
        rate = exit_rate[(k + np.arange(chunk)) % 2]
        # a zero or subnormal rate gives an infinite wait
        with np.errstate(divide="ignore", over="ignore"):
            waits = rng.standard_exponential(chunk) / rate
        ends = t + np.cumsum(waits)
        inside = ends < duration_ms
        n_in = int(np.argmin(inside)) if not inside.all() else chunk
        times.append(ends[:n_in])
        if n_in < chunk:
            break
        t = ends[-1]
        k += chunk
    times = np.concatenate(times)
    other = F3 if initial_state == F4 else F4
    states = np.where(np.arange(len(times)) % 2 == 0, initial_state, other)
    return SpinPath(times, states, float(duration_ms))


def bin_counts(path: SpinPath, level: LevelModel, det_eff: float = 1.0,
               bin_ms: float = 2.0, seed=None, t0_ms: float = 0.0) -> CountTrace:
    """Poisson photon counts for consecutive bins along ``path``.

    The mean of each bin is the time integral of the configuration's count
    rate scaled by ``det_eff``, plus background times ``bin_ms``. Level
    rates are normally already detected rates, in which case ``det_eff``
    is 1; other values thin the signal (not the background).
    """
    if not 0 < det_eff <= 1:
        raise ParameterError("det_eff must lie in (0, 1]")
    means = expected_bin_means(path, level, bin_ms, det_eff)
    counts = np.random.default_rng(seed).poisson(means)
    return CountTrace(bin_ms, counts, t0_ms)


def expected_bin_means(path: SpinPath, level: LevelModel, bin_ms: float, det_eff: float = 1.0):
    """Noise-free mean counts per bin along ``path``."""
    rate = det_eff * level.rate(path.n_coupled())
    n = _n_bins(path.duration_ms, bin_ms)
    edges = bin_ms * np.arange(n + 1)
    return np.diff(_cumulative(path.times_ms, rate, path.duration_ms, edges)) + level.background * bin_ms


def jump_probability(rate_per_s: float, interval_ms: float) -> float:
    """Probability of at least one jump in ``interval_ms`` at a constant rate."""
    if rate_per_s < 0 or interval_ms < 0:
        raise ParameterError("rate and interval must be non-negative")
    return -math.expm1(-rate_per_s * interval_ms * 1e-3)


def trace_seed(seed, index: int):
    """Per-trace seed material derived from ``(seed, index)``."""
    base = np.random.SeedSequence(seed).entropy
    return np.random.SeedSequence([base, index]).generate_state(4)


def sample_two_atom_path(r1: float, r2: float, duration_ms: float, seed=None) -> ConfigPath:
    """Three-configuration chain starting with both atoms in F=4.

    Both in F=4 each atom jumps at ``r2`` (exit ``2*r2``); with one atom
    left in F=4 it jumps at ``r1``; both in F=3 is absorbing. Rates in s^-1.
    """
    if r1 < 0 or r2 < 0:
        raise ParameterError("rates must be non-negative")
    rng = np.random.default_rng(seed)
    with np.errstate(divide="ignore"):
        waits = rng.standard_exponential(2) / np.array([2 * r2, r1]) * 1e3
    ends = np.cumsum(waits)
    n = int(np.searchsorted(ends, duration_ms))
    times = np.concatenate([[0.0], ends[:n]])
    return ConfigPath(times, np.array([2, 1, 0])[: n + 1], float(duration_ms))


def simulate_two_atom_ensemble(r1: float, r2: float, level: LevelModel, n_traces: int,
                               duration_ms: float, seed, bin_ms: float = 1.0,
                               return_paths: bool = False):
    """Count traces for ``n_traces`` independent atom pairs.

    Trace ``i`` uses the stream derived from ``(seed, i)``. Returns a list
    of :class:`CountTrace`, plus the paths when ``return_paths`` is set.
    """
    if n_traces < 1:
        raise ParameterError("n_traces must be at least 1")
    traces, paths = [], []
    for i in range(n_traces):
        rng = np.random.default_rng(trace_seed(seed, i))
        path = sample_two_atom_path(r1, r2, duration_ms, rng)
        trace = bin_counts(path, level, 1.0, bin_ms, rng)
        trace.meta = {"index": i, "r1": r1, "r2": r2}
        traces.append(trace)
        paths.append(path)
    return (traces, paths) if return_paths else traces


def simulate_telegraph_ensemble(rates: JumpRates, level: LevelModel, n_traces: int,
                                duration_ms: float, seed, bin_ms: float = 2.0,
                                pad_bins: int = 0, initial_state=F4, noiseless_pad: bool = False):
    """Single-atom telegraph traces with optional empty-cavity padding.

    The atom is present for ``duration_ms`` and is inserted in F=4 (pumped)
    unless ``initial_state`` says otherwise. ``pad_bins`` empty-cavity bins
    precede and follow the atom; with ``noiseless_pad`` they hold the
    rounded mean count instead of a Poisson draw. Each trace's ``meta``
    records the seed index, the insertion and removal bins, and
    ``truth_f4``, the F=4 occupancy of every bin of the atom-present
    segment.
    """
    if n_traces < 1:
        raise ParameterError("n_traces must be at least 1")
    if pad_bins < 0:
        raise ParameterError("pad_bins must be non-negative")
    traces = []
    for i in range(n_traces):
        rng = np.random.default_rng(trace_seed(seed, i))
        path = sample_spin_path(rates, duration_ms, initial_state, rng)
        body = bin_counts(path, level, 1.0, bin_ms, rng).counts
        pad_mean = (level.rate(0) + level.background) * bin_ms
        if noiseless_pad:
            pad = np.full((2, pad_bins), int(round(pad_mean)))
        else:
            pad = rng.poisson(pad_mean, size=(2, pad_bins))
        counts = np.concatenate([pad[0], body, pad[1]])
        meta = {"index": i, "insertion_index": pad_bins,
                "removal_index": pad_bins + len(body) - 1,
                "truth_f4": path.occupancy(bin_ms, len(body))}
        traces.append(CountTrace(bin_ms, counts, 0.0, meta))
    return traces


def write_ensemble(traces, out_dir, manifest: dict, prefix="trace", comment=None):
    """Write traces as ``<prefix>_NNNN.csv`` plus ``manifest.json``.

    Array-valued metadata is left out of the manifest.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    files = []
    for i, tr in enumerate(traces):
        name = f"{prefix}_{i:04d}.csv"
        tr.to_csv(out_dir / name, comment)
        files.append(name)
    scalar_meta = [{k: v for k, v in tr.meta.items() if not isinstance(v, np.ndarray)} for tr in traces]
    write_json(out_dir / "manifest.json", {**manifest, "files": files, "traces": scalar_meta})
    return files
