"""Command-line front end.

Every subcommand reads an optional flat ``key = value`` config. Bare keys
set :class:`~cavityjumps.params.SystemParams` fields, ``jumps.*`` sets the
jump rates and ``<command>.*`` the options of the running command. ``seed``
and ``name`` are top-level keys. Command-line flags override the config.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_csv, write_json
from .errors import CavityJumpsError, ParameterError, TruncationError
from .params import JumpRates, SystemParams, parse_config_text, params_from_entries

ENV_OUT = "CAVITYJUMPS_OUT"
DEFAULT_OUT = "cavityjumps_out"
COMMANDS = ("spectrum", "telegraph", "reconstruct", "rates", "nms", "twoatom")
STOCHASTIC = {"telegraph", "nms", "twoatom"}
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# command options: key -> (parser, default)
OPTIONS = {
    "spectrum": {
        "span_mhz": (float, 60.0), "center_mhz": (float, 0.0), "points": (int, 601),
        "n_fock": (int, 6),
    },
    "telegraph": {
        "n_traces": (int, 163), "duration_ms": (float, 400.0), "pad_bins": (int, 10),
        "rate_high": (float, 20.0), "rate_low": (float, 4.0), "background": (float, 0.0),
        "max_lag_ms": (float, 30.0), "trim_ms": (float, 20.0), "n_boot": (int, 200),
        "write_traces": (_bool, True), "empirical_thresholds": (_bool, False),
    },
    "reconstruct": {
        "input": (str, None), "empirical_thresholds": (_bool, False), "segment": (str, "detect"),
    },
    "rates": {
        "input": (str, None), "max_lag_ms": (float, 30.0), "trim_ms": (float, 20.0),
    },
    "nms": {
        "n_ph": (float, 0.062), "delta_ca_mhz": (float, 10.0), "pulse_us": (float, 70.0),
        "branch_to_f3": (float, 0.5), "g_low_mhz": (float, 6.0), "g_high_mhz": (float, 12.0),
        "background": (float, 0.13), "n_nodes": (int, 33),
        "det_min_mhz": (float, -22.0), "det_max_mhz": (float, 10.0), "det_step_mhz": (float, 0.5),
        "n_cycles": (int, 300), "data": (str, None), "full_cycle": (_bool, False),
    },
    "twoatom": {
        "r1": (float, 68.0), "r2": (float, 28.0), "n_traces": (int, 169),
        "duration_ms": (float, 120.0), "bin_ms": (float, 1.0), "g_mhz": (float, None),
        "det_eff": (float, 0.045),
    },
}
TOP_LEVEL = {"seed": (int, None), "name": (str, None)}


@dataclass
class Scenario:
    """Fully validated inputs of one invocation."""

    command: str
    params: SystemParams = field(default_factory=SystemParams)
    rates: JumpRates = field(default_factory=JumpRates)
    options: dict = field(default_factory=dict)
    seed: int | None = None
    name: str | None = None
    output_dir: Path = Path(DEFAULT_OUT)
    timestamp: bool = True


def _parse_value(parser, raw, key, lineno):
    if parser is str:
        return raw
    try:
        return parser(raw)
    except ValueError:
        raise ParameterError(f"cannot parse {key} = {raw!r}", line=lineno) from None


def load_scenario(command: str, config_text: str | None = None, overrides: dict | None = None) -> Scenario:
    """Parse and validate a config for ``command``.

    ``overrides`` maps ``(block, key)`` to values taken from command-line
    flags; ``block`` is ``None`` for system parameters and top-level keys.
    """
    entries = parse_config_text(config_text) if config_text else {}
    param_entries, jump_entries, options, top = {}, {}, {}, {}
    schema = OPTIONS[command]
    for key, (raw, lineno) in entries.items():
        block, _, leaf = key.rpartition(".")
        if block == "":
            if key in TOP_LEVEL:
                top[key] = _parse_value(TOP_LEVEL[key][0], raw, key, lineno)
            else:
                param_entries[key] = (raw, lineno)
        elif block == "params":
            param_entries[leaf] = (raw, lineno)
        elif block == "jumps":
            if leaf not in ("r_4to3", "r_3to4"):
                raise ParameterError(f"unknown jump-rate key {key!r}", line=lineno)
            jump_entries[leaf] = _parse_value(float, raw, key, lineno)
        elif block == command:
            if leaf not in schema:
                raise ParameterError(f"unknown option {key!r} for {command}", line=lineno)
            options[leaf] = _parse_value(schema[leaf][0], raw, key, lineno)
        elif block in COMMANDS:
            raise ParameterError(f"block {block!r} does not belong to command {command!r}", line=lineno)
        else:
            raise ParameterError(f"unknown block {block!r}", line=lineno)
    params = params_from_entries(param_entries)
    for (block, key), value in (overrides or {}).items():
        if value is None:
            continue
        if block is None and key in TOP_LEVEL:
            top[key] = value
        elif block is None:
            params = params.replace(**{key: value})
        else:
            options[key] = value
    try:
        rates = JumpRates(**jump_entries)
    except ParameterError as exc:
        line = next((entries[f"jumps.{k}"][1] for k in jump_entries if k in str(exc)), None)
        raise ParameterError(str(exc), line=line) from None
    full = {k: options.get(k, default) for k, (_, default) in schema.items()}
    stochastic = command in STOCHASTIC and not (command == "nms" and full["data"])
    if stochastic and top.get("seed") is None:
        raise ParameterError(f"command {command!r} needs a seed (--seed or 'seed = N')")
    _validate_options(command, full)
    return Scenario(command, params, rates, full, top.get("seed"), top.get("name"))


def _validate_options(command, o):
    def positive(*names):
        for n in names:
            if o[n] is None or not o[n] > 0:
                raise ParameterError(f"{command}.{n} must be positive")

    if command == "spectrum":
        positive("span_mhz", "points", "n_fock")
        if o["n_fock"] < 2:
            raise ParameterError("spectrum.n_fock must be at least 2")
    elif command == "telegraph":
        positive("n_traces", "duration_ms", "max_lag_ms")
        if o["pad_bins"] < 3:
            raise ParameterError("telegraph.pad_bins must be at least 3 to detect the atom")
        from .telegraph import LevelModel

        LevelModel(o["rate_high"], o["rate_low"], None, o["background"])
    elif command in ("reconstruct", "rates"):
        if not o["input"]:
            raise ParameterError(f"{command} needs an input directory ({command}.input or --input)")
        if command == "reconstruct" and o["segment"] not in ("detect", "all"):
            raise ParameterError("reconstruct.segment must be 'detect' or 'all'")
        if command == "rates":
            positive("max_lag_ms")
    elif command == "nms":
        from .nms import NmsModelParams

        NmsModelParams(**{k: o[k] for k in ("n_ph", "delta_ca_mhz", "pulse_us", "branch_to_f3",
                                             "g_low_mhz", "g_high_mhz", "background", "n_nodes")})
        positive("det_step_mhz", "n_cycles")
        if not o["det_max_mhz"] > o["det_min_mhz"]:
            raise ParameterError("nms.det_max_mhz must exceed nms.det_min_mhz")
    elif command == "twoatom":
        positive("r1", "r2", "n_traces", "duration_ms", "bin_ms", "det_eff")


class _Writer:
    """Writes outputs with an optional timestamp header."""

    def __init__(self, out_dir: Path, timestamp: bool):
        self.out_dir = out_dir
        self.stamp = (datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
                      if timestamp else None)
        self.files = []

    @property
    def comment(self):
        return f"generated {self.stamp}" if self.stamp else None

    def path(self, name):
        self.files.append(name)
        return self.out_dir / name

    def json(self, name, payload):
        if self.stamp:
            payload = {**payload, "generated": self.stamp}
        write_json(self.path(name), payload)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows, self.comment)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _header(sc: Scenario):
    return {"command": sc.command, "name": sc.name, "seed": sc.seed, "version": __version__,
            "params": _jsonable(sc.params), "options": _jsonable(sc.options)}


# commands -----------------------------------------------------------------

def cmd_spectrum(sc: Scenario, w: _Writer):
    from .nms import spectrum_peaks
    from .qmodel import HilbertConfig, transmission_spectrum

    o, p = sc.options, sc.params
    dets = o["center_mhz"] + np.linspace(-o["span_mhz"], o["span_mhz"], o["points"])
    n_fock = o["n_fock"]
    while True:
        try:
            spec = transmission_spectrum(p, dets, hilbert=HilbertConfig(n_fock, p.n_atoms))
            break
        except TruncationError:
            # grow the photon cutoff until the tail check passes
            if n_fock >= 16:
                raise
            n_fock += 2
    spec.to_csv(w.path("spectrum.csv"), w.comment)
    per_atom = np.atleast_2d(spec.p_excited.T).T[:, 0]
    w.json("spectrum_summary.json", {
        **_header(sc), "n_fock_used": n_fock,
        "transmission_peaks_mhz": spectrum_peaks(dets, spec.transmission).tolist(),
        "scattering_peaks_mhz": spectrum_peaks(dets, per_atom).tolist(),
        "max_transmission": float(spec.transmission.max()),
    })


def _telegraph_levels(o):
    from .telegraph import LevelModel

    return LevelModel(o["rate_high"], o["rate_low"], None, o["background"])


def _reconstruct(traces, fit, segment="detect"):
    from .reconstruct import classify, detect_presence

    spins, bounds = [], []
    for tr in traces:
        if segment == "detect":
            a, b = detect_presence(tr, fit)
        else:
            a, b = 0, len(tr) - 1
        spins.append(classify(tr.segment(a, b), fit))
        bounds.append((a, b))
    return spins, bounds


def _rate_outputs(spins, o, w, seed=None, n_boot=0):
    from .rates import autocovariance, bootstrap_rates, dwell_time_rates, fit_rates

    curve = autocovariance(spins, o["max_lag_ms"], trim_ms=o["trim_ms"])
    curve.to_csv(w.path("correlation.csv"), w.comment)
    corr = fit_rates(curve)
    out = {"correlation": corr.to_dict()}
    if n_boot:
        sd43, sd34 = bootstrap_rates(spins, o["max_lag_ms"], n_boot, seed, o["trim_ms"])
        out["correlation"]["bootstrap_stderr_4to3"] = sd43
        out["correlation"]["bootstrap_stderr_3to4"] = sd34
    try:
        out["dwell"] = dwell_time_rates(spins).to_dict()
    except CavityJumpsError as exc:
        out["dwell"] = {"error": str(exc)}
    return out


def cmd_telegraph(sc: Scenario, w: _Writer):
    from .reconstruct import ambiguous_fraction, fit_histogram
    from .telegraph import simulate_telegraph_ensemble, write_ensemble

    o, p = sc.options, sc.params
    level = _telegraph_levels(o)
    traces = simulate_telegraph_ensemble(sc.rates, level, o["n_traces"], o["duration_ms"], sc.seed,
                                         p.bin_ms, o["pad_bins"])
    if o["write_traces"]:
        manifest = {**_header(sc), "rates": _jsonable(sc.rates), "level": _jsonable(level)}
        if w.stamp:
            manifest["generated"] = w.stamp
        files = write_ensemble(traces, w.out_dir / "traces", manifest, comment=w.comment)
        w.files += [f"traces/{f}" for f in files] + ["traces/manifest.json"]
    fit = fit_histogram(traces, o["empirical_thresholds"])
    w.json("histogram_fit.json", _jsonable(fit))
    spins, bounds = _reconstruct(traces, fit)
    truth_bounds = [(t.meta["insertion_index"], t.meta["removal_index"]) for t in traces]
    est = _rate_outputs(spins, o, w, sc.seed, o["n_boot"])
    w.json("summary.json", {
        **_header(sc),
        "truth": {"r_4to3": sc.rates.r_4to3, "r_3to4": sc.rates.r_3to4, "p_f4": sc.rates.p_f4},
        "estimates": est,
        "ambiguous_fraction": ambiguous_fraction(spins),
        "insertion_detected_exactly": float(np.mean([b[0] == t[0] for b, t in zip(bounds, truth_bounds)])),
        "level": _jsonable(level),
    })


def _trace_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ParameterError(f"input directory {directory} does not exist")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ParameterError(f"no CSV files in {directory}")
    return files


def cmd_reconstruct(sc: Scenario, w: _Writer):
    from .reconstruct import ambiguous_fraction, fit_histogram
    from .telegraph import CountTrace

    o = sc.options
    files = _trace_files(o["input"])
    traces = [CountTrace.from_csv(f) for f in files]
    fit = fit_histogram(traces, o["empirical_thresholds"])
    w.json("histogram_fit.json", _jsonable(fit))
    spins, bounds = _reconstruct(traces, fit, o["segment"])
    for f, s in zip(files, spins):
        s.to_csv(w.path(f"spin/{f.stem}.csv"), w.comment)
    w.json("summary.json", {
        **_header(sc), "inputs": [f.name for f in files],
        "segments": [list(b) for b in bounds],
        "ambiguous_fraction": ambiguous_fraction(spins),
    })


def cmd_rates(sc: Scenario, w: _Writer):
    from .reconstruct import SpinTrace

    spins = [SpinTrace.from_csv(f) for f in _trace_files(sc.options["input"])]
    est = _rate_outputs(spins, sc.options, w)
    w.json("rates.json", {**_header(sc), **est})


def cmd_nms(sc: Scenario, w: _Writer):
    from .nms import (NmsModelParams, SpectrumData, fit_spectrum, mean_scattered_photons,
                      model_spectrum, simulate_cycles, simulate_spectrum_data, spectrum_peaks)

    o, p = sc.options, sc.params
    m = NmsModelParams(**{k: o[k] for k in ("n_ph", "delta_ca_mhz", "pulse_us", "branch_to_f3",
                                            "g_low_mhz", "g_high_mhz", "background", "n_nodes")},
                       kappa_mhz=p.kappa_mhz, gamma_mhz=p.gamma_mhz)
    if o["data"]:
        data = SpectrumData.from_csv(o["data"])
    else:
        dets = np.arange(o["det_min_mhz"], o["det_max_mhz"] + 1e-9, o["det_step_mhz"])
        if o["full_cycle"]:
            data = simulate_cycles(m, dets, o["n_cycles"], sc.seed, sc.rates)
        else:
            data = simulate_spectrum_data(m, dets, o["n_cycles"], sc.seed)
        data.to_csv(w.path("spectrum_data.csv"), w.comment)
    fit = fit_spectrum(data, m)
    fine = np.linspace(data.detunings_mhz.min(), data.detunings_mhz.max(), 321)
    curve = model_spectrum(fit.model, fine)
    w.csv("model.csv", ["detuning_mhz", "p_f3"], zip(fine, curve.p_f3))
    peaks = spectrum_peaks(fine, curve.p_f3)
    w.json("fit.json", {
        **_header(sc), "fit": fit.to_dict(),
        "truth": None if o["data"] else {"n_ph": m.n_ph, "delta_ca_mhz": m.delta_ca_mhz},
        "model_peaks_mhz": peaks.tolist(),
        "mean_scattered_photons_at_peaks": [float(v) for v in mean_scattered_photons(fit.model, peaks)],
    })


def cmd_twoatom(sc: Scenario, w: _Writer):
    from .telegraph import simulate_two_atom_ensemble
    from .twoatom import (OFF_AXIS_G_MHZ, TwoAtomModel, bin_averaged, default_levels,
                          ensemble_transmission, expected_transmission, extract_r2_from_levels,
                          operating_point, write_curves)

    o = sc.options
    p = operating_point(o["g_mhz"] or OFF_AXIS_G_MHZ).replace(det_eff=o["det_eff"], bin_ms=o["bin_ms"])
    counts = default_levels(p)
    levels = default_levels(p, normalized=True)
    m = TwoAtomModel(o["r1"], o["r2"], levels)
    t = np.arange(0.0, o["duration_ms"] + 1e-9, 0.5)
    write_curves(w.path("curves.csv"), m, t, w.comment)
    traces = simulate_two_atom_ensemble(m.r1, m.r2, counts, o["n_traces"], o["duration_ms"], sc.seed,
                                        o["bin_ms"])
    mean, sem = ensemble_transmission(traces, counts)
    edges = o["bin_ms"] * np.arange(len(mean) + 1)
    expect = bin_averaged(lambda tt: expected_transmission(m, tt), edges)
    w.csv("ensemble.csv", ["t_ms", "T_mc", "sem", "T_coupled_bin"],
          zip(0.5 * (edges[:-1] + edges[1:]), mean, sem, expect))
    w.json("summary.json", {
        **_header(sc), "g_eff_mhz": p.g_mhz, "levels_counts_per_ms": _jsonable(counts),
        "levels_normalized": _jsonable(levels),
        "r2_from_levels": extract_r2_from_levels(levels.rate_low, levels.rate_low2, m.r1, p),
        "rms_mc_vs_model": float(np.sqrt(np.mean((mean - expect) ** 2))),
    })


HANDLERS = {"spectrum": cmd_spectrum, "telegraph": cmd_telegraph, "reconstruct": cmd_reconstruct,
            "rates": cmd_rates, "nms": cmd_nms, "twoatom": cmd_twoatom}


def build_parser():
    ap = argparse.ArgumentParser(prog="cavityjumps", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed for stochastic commands")
    common.add_argument("--out", type=Path, help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    common.add_argument("--no-timestamp", action="store_true", help="omit generation timestamps")
    helps = {
        "spectrum": "steady-state transmission and scattering spectrum",
        "telegraph": "simulate, reconstruct and analyse single-atom telegraph traces",
        "reconstruct": "reconstruct spin states from count-trace CSVs",
        "rates": "jump rates from reconstructed spin-trace CSVs",
        "nms": "model and fit the normal-mode spectrum read out via F=3 population",
        "twoatom": "two-atom conditional dynamics curves and Monte-Carlo overlay",
    }
    subs = {name: sub.add_parser(name, parents=[common], help=text) for name, text in helps.items()}
    subs["spectrum"].add_argument("--g", type=float, dest="g_mhz", help="coupling g (MHz)")
    subs["spectrum"].add_argument("--delta-ca", type=float, dest="delta_ca_mhz", help="cavity-atom detuning (MHz)")
    subs["spectrum"].add_argument("--n-atoms", type=int, dest="n_atoms")
    subs["spectrum"].add_argument("--span", type=float, dest="span_mhz", help="half-width of the scan (MHz)")
    subs["spectrum"].add_argument("--points", type=int)
    for name in ("reconstruct", "rates"):
        subs[name].add_argument("--input", help="directory of input CSV files")
    subs["reconstruct"].add_argument("--empirical-thresholds", action="store_const", const=True,
                                     help="empirical instead of fitted-Gaussian thresholds")
    subs["nms"].add_argument("--data", help="fit this spectrum CSV instead of simulating")
    subs["nms"].add_argument("--full-cycle", action="store_const", const=True,
                             help="simulate each experimental cycle including the state readout")
    subs["twoatom"].add_argument("--n-traces", type=int, dest="n_traces")
    return ap


_PARAM_FLAGS = {"g_mhz", "delta_ca_mhz", "n_atoms"}
_OPTION_FLAGS = {"span_mhz", "points", "input", "empirical_thresholds", "data", "full_cycle", "n_traces"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out or Path(os.environ.get(ENV_OUT) or DEFAULT_OUT)
    try:
        text = args.config.read_text() if args.config else None
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    flags = vars(args)
    overrides = {(None, "seed"): args.seed}
    overrides.update({(None, k): flags[k] for k in _PARAM_FLAGS if k in flags})
    overrides.update({(args.command, k): flags[k] for k in _OPTION_FLAGS if k in flags})
    try:
        sc = load_scenario(args.command, text, overrides)
    except ParameterError as exc:
        where = f"{args.config}: " if args.config and exc.line is not None else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    sc.output_dir = out_dir / args.command
    sc.timestamp = not args.no_timestamp
    writer = _Writer(sc.output_dir, sc.timestamp)
    try:
        HANDLERS[args.command](sc, writer)
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CavityJumpsError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(writer.files)} files to {sc.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
