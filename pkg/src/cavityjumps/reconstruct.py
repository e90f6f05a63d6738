"""Spin-state reconstruction from photon-count traces.

The pooled count histogram is fitted with two Gaussians, one per
transmission level. Each level gets a 1% misclassification threshold:

* ``theta_f4``: 1% of the high (F=3) Gaussian lies below it,
* ``theta_f3``: 1% of the low (F=4) Gaussian lies above it.

A bin is F=4 when its count is at most ``theta_f4`` and below
``theta_f3``, F=3 when it is at least ``theta_f3`` and above ``theta_f4``,
and ambiguous otherwise. With well separated levels ``theta_f3`` lies below
``theta_f4``, so the ambiguous bins are those in ``[theta_f3, theta_f4]``
that either Gaussian could have produced. Ambiguous bins are then resolved
from their unambiguous neighbours.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import norm

from ._io import parse_columns, read_csv, write_csv, write_json
from .errors import AllAmbiguousError, FitDivergedError, NoAtomError, ParameterError, UnimodalError
from .telegraph import CountTrace

MISCLASS = 0.01
MIN_BINS = 1000

# codes in SpinTrace.states
STATE_F4, STATE_F3 = 0, 1

# resolution rules
RULE_F4 = "f4"
RULE_F3 = "f3"
RULE_NOISE = "noise"            # single ambiguous bin, equal neighbours
RULE_JUMP = "jump"              # single ambiguous bin, different neighbours
RULE_RUN_EQUAL = "run_equal"    # ambiguous run, equal neighbours
RULE_RUN_SPLIT = "run_split"    # ambiguous run, split at its midpoint
RULE_ENDPOINT = "endpoint"      # ambiguous run touching a trace edge


@dataclass
class HistogramFit:
    """Two-Gaussian decomposition of a count histogram (counts/bin units)."""

    mu_low: float
    sigma_low: float
    weight_low: float
    mu_high: float
    sigma_high: float
    weight_high: float
    theta_f4: float
    theta_f3: float
    n_bins: int = 0
    empirical: bool = False

    @property
    def ambiguous_interval(self):
        """Closed count interval that neither threshold claims alone."""
        return min(self.theta_f3, self.theta_f4), max(self.theta_f3, self.theta_f4)

    def region(self, counts):
        """Per-bin code: 0 for F=4, 1 for F=3, -1 for ambiguous."""
        c = np.asarray(counts, dtype=float)
        f4 = (c <= self.theta_f4) & (c < self.theta_f3)
        f3 = (c >= self.theta_f3) & (c > self.theta_f4)
        return np.where(f4, STATE_F4, np.where(f3, STATE_F3, -1))

    def density(self, counts):
        c = np.asarray(counts, dtype=float)
        return (self.weight_low * norm.pdf(c, self.mu_low, self.sigma_low)
                + self.weight_high * norm.pdf(c, self.mu_high, self.sigma_high))

    def to_json(self, path):
        write_json(path, asdict(self))


def gaussian_thresholds(mu_low, sigma_low, mu_high, sigma_high, misclass=MISCLASS):
    """``(theta_f4, theta_f3)`` from the inverse normal CDF."""
    theta_f4 = norm.ppf(misclass, mu_high, sigma_high)
    theta_f3 = norm.ppf(1.0 - misclass, mu_low, sigma_low)
    return float(theta_f4), float(theta_f3)


def _pooled_counts(traces):
    if isinstance(traces, CountTrace) or (isinstance(traces, np.ndarray) and traces.ndim == 1):
        traces = [traces]
    counts = [np.asarray(t.counts if isinstance(t, CountTrace) else t) for t in traces]
    return np.concatenate(counts) if counts else np.zeros(0, dtype=int)


def _smoothed_maxima(hist, width):
    kernel = np.exp(-0.5 * (np.arange(-3 * width, 3 * width + 1) / width) ** 2)
    smooth = np.convolve(hist, kernel / kernel.sum(), mode="same")
    inner = (smooth[1:-1] > smooth[:-2]) & (smooth[1:-1] >= smooth[2:])
    idx = np.flatnonzero(inner) + 1
    return idx[np.argsort(smooth[idx])[::-1]], smooth


def _initial_guess(counts):
    """Split at the largest gap between the two dominant smoothed maxima."""
    hist = np.bincount(counts)
    width = max(1.0, 0.03 * counts.max())
    peaks, smooth = _smoothed_maxima(np.pad(hist, 1), width)
    peaks = peaks - 1
    if len(peaks) < 2:
        raise UnimodalError("count histogram has a single maximum")
    lo, hi = sorted(peaks[:2])
    split = lo + int(np.argmin(smooth[lo + 1:hi + 2]))
    low, high = counts[counts <= split], counts[counts > split]
    guesses = []
    for part in (low, high):
        guesses += [part.mean(), max(part.std(), 0.5), len(part) / len(counts)]
    return np.array(guesses)


def fit_histogram(traces, empirical_thresholds: bool = False, misclass: float = MISCLASS) -> HistogramFit:
    """Least-squares two-Gaussian fit to the pooled 1-count histogram.

    Parameters
    ----------
    traces : CountTrace or sequence of CountTrace (or raw count arrays)
    empirical_thresholds : bool
        Take the thresholds as empirical quantiles of the counts assigned to
        each component (posterior > 1/2) instead of the fitted Gaussians.
    misclass : float
        Tail mass defining both thresholds.

    Raises
    ------
    UnimodalError
        The peaks are closer than twice the summed widths, or the smoothed
        histogram has one maximum.
    FitDivergedError
        The optimizer fails or returns unusable widths.
    """
    counts = _pooled_counts(traces)
    if len(counts) < MIN_BINS:
        raise ParameterError(f"need at least {MIN_BINS} bins, got {len(counts)}")
    hist = np.bincount(counts).astype(float)
    x = np.arange(len(hist), dtype=float)
    n = len(counts)
    start = _initial_guess(counts)
    # Poisson errors on the bin contents, floored at one count
    sigma_h = np.sqrt(np.maximum(hist, 1.0))

    def residuals(theta):
        ml, sl, wl, mh, sh, wh = theta
        model = n * (wl * norm.pdf(x, ml, sl) + wh * norm.pdf(x, mh, sh))
        return (model - hist) / sigma_h

    lower = [-np.inf, 0.05, 0.0, -np.inf, 0.05, 0.0]
    try:
        res = least_squares(residuals, start, bounds=(lower, np.inf), x_scale="jac")
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitDivergedError(f"histogram fit failed: {exc}") from None
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitDivergedError(f"histogram fit did not converge: {res.message}")
    ml, sl, wl, mh, sh, wh = res.x
    if ml > mh:
        ml, sl, wl, mh, sh, wh = mh, sh, wh, ml, sl, wl
    if abs(mh - ml) < 2.0 * (sl + sh):
        raise UnimodalError(f"peaks at {ml:.3g} and {mh:.3g} are not separated")
    if empirical_thresholds:
        post_high = wh * norm.pdf(counts, mh, sh)
        high = post_high > wl * norm.pdf(counts, ml, sl)
        if high.all() or not high.any():
            raise FitDivergedError("empirical thresholds need counts in both components")
        theta_f4 = float(np.quantile(counts[high], misclass))
        theta_f3 = float(np.quantile(counts[~high], 1.0 - misclass))
    else:
        theta_f4, theta_f3 = gaussian_thresholds(ml, sl, mh, sh, misclass)
    return HistogramFit(float(ml), float(sl), float(wl), float(mh), float(sh), float(wh),
                        theta_f4, theta_f3, n, empirical_thresholds)


@dataclass
class SpinTrace:
    """Reconstructed state per bin, 0 for F=4 and 1 for F=3.

    ``rules[i]`` names the rule that decided bin ``i``; ``ambiguous`` marks
    bins that were resolved from context.
    """

    bin_ms: float
    states: np.ndarray
    rules: np.ndarray
    t0_ms: float = 0.0

    def __len__(self):
        return len(self.states)

    @property
    def ambiguous(self):
        return ~np.isin(self.rules, [RULE_F4, RULE_F3])

    @property
    def ambiguous_fraction(self):
        return float(self.ambiguous.mean())

    @property
    def x_f4(self):
        """Indicator of F=4 per bin."""
        return (self.states == STATE_F4).astype(float)

    @property
    def times_ms(self):
        return self.t0_ms + self.bin_ms * np.arange(len(self.states))

    def to_csv(self, path, comment=None):
        write_csv(path, ["t_ms", "state", "rule"], zip(self.times_ms, self.states, self.rules), comment)

    @classmethod
    def from_csv(cls, path) -> SpinTrace:
        header, rows = read_csv(path)
        if header[:3] != ["t_ms", "state", "rule"]:
            raise ParameterError(f"{path}: expected header 't_ms,state,rule'")
        if not rows:
            raise ParameterError(f"{path}: no data rows")
        t, states, rules = (np.array(c) for c in parse_columns(path, rows, [float, int, str]))
        if not np.isin(states, [STATE_F4, STATE_F3]).all():
            raise ParameterError(f"{path}: states must be 0 (F=4) or 1 (F=3)")
        bin_ms = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(bin_ms, states.astype(np.int8), rules, float(t[0]))


def classify(trace: CountTrace, fit: HistogramFit) -> SpinTrace:
    """Threshold each bin and resolve ambiguous bins from context.

    A run of ``k`` ambiguous bins between unambiguous neighbours takes the
    neighbours' state when they agree. Otherwise the jump goes in the run:
    the first ``k // 2`` bins take the previous state and the rest the
    subsequent one, so a single ambiguous bin joins the subsequent state.
    A run touching either end of the trace takes its only neighbour's state.
    """
    region = fit.region(trace.counts)
    known = np.flatnonzero(region >= 0)
    if len(known) == 0:
        raise AllAmbiguousError("trace has no unambiguous bin")
    states = region.copy()
    rules = np.where(region == STATE_F4, RULE_F4, RULE_F3).astype(object)
    amb = region < 0
    if amb.any():
        # run boundaries of consecutive ambiguous bins
        edges = np.diff(np.concatenate([[0], amb.astype(int), [0]]))
        for start, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            k = stop - start
            prev = region[start - 1] if start > 0 else None
            nxt = region[stop] if stop < len(region) else None
            if prev is None or nxt is None:
                states[start:stop] = nxt if prev is None else prev
                rules[start:stop] = RULE_ENDPOINT
            elif prev == nxt:
                states[start:stop] = prev
                rules[start:stop] = RULE_NOISE if k == 1 else RULE_RUN_EQUAL
            else:
                half = start + k // 2
                states[start:half] = prev
                states[half:stop] = nxt
                rules[start:stop] = RULE_JUMP if k == 1 else RULE_RUN_SPLIT
    return SpinTrace(trace.bin_ms, states.astype(np.int8), rules.astype(str), trace.t0_ms)


def detect_presence(trace: CountTrace, fit: HistogramFit, min_high: int = 3) -> tuple[int, int]:
    """First and last bin of the atom-coupled segment.

    The coupled segment runs from the first to the last bin in the F=4
    region. It must be bounded on both sides by at least ``min_high``
    bins above the F=4 region, the sustained empty-cavity level that marks
    the trace start and end.

    Raises
    ------
    NoAtomError
        No F=4 bin, or the F=4 bins are not enclosed by high segments.
    """
    region = fit.region(trace.counts)
    low = np.flatnonzero(region == STATE_F4)
    if len(low) == 0:
        raise NoAtomError("no bin at the coupled-atom level")
    first, last = int(low[0]), int(low[-1])
    if first < min_high or len(region) - 1 - last < min_high:
        raise NoAtomError(f"coupled segment is not bounded by {min_high} high bins on each side")
    return first, last


def ambiguous_fraction(spin_traces) -> float:
    """Fraction of bins resolved from context, pooled over traces."""
    amb = sum(int(s.ambiguous.sum()) for s in spin_traces)
    return amb / sum(len(s) for s in spin_traces)
