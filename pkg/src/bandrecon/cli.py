"""Command-line entry point: ``bandrecon <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 input parse or I/O failure,
4 saturation too dense to declip, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .declip import Flag, InverseTable, SaturatedStream, WindowConfig, declip_stream, isolated_pattern
from .errors import DenseSaturationError, IllConditionedError
from .kernel import BandSpec, gram_matrix, kernel_value
from .ofdm import parse_key_values

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DENSE, EXIT_NUMERIC = 0, 2, 3, 4, 5

log = logging.getLogger("bandrecon")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# Experiment override flags.  Each maps one-to-one onto a config-file key
# (dashes become underscores).
EXPERIMENT_FLAGS = [
    ("--taps", "IDFT size"),
    ("--carriers", "comma-separated active subcarriers"),
    ("--qam", "QAM order"),
    ("--mode", "wireline or wireless"),
    ("--cp", "cyclic prefix length"),
    ("--dc-zeroed", "true/false"),
    ("--band", "lo:hi in rad/sample, e.g. 0:pi/2"),
    ("--window-n", "neighbours per regression"),
    ("--margin", "max saturated samples ranked ahead of the farthest neighbour, or none"),
    ("--epsilon", "regularization, or none for the default"),
    ("--cr", "target clipping ratio, or none to disable clipping"),
    ("--snr-db", "channel SNR in dB, inf for noiseless"),
    ("--adc-bits", "converter resolution, or none"),
    ("--sinad-db", "converter SINAD in dB, or none"),
    ("--loss-db", "synthetic insertion loss at the top carrier, or none"),
    ("--channel-csv", "measured response freq_hz,mag_db[,phase_rad]"),
    ("--sample-rate", "sample rate in Hz"),
    ("--cyclic", "true/false: treat each symbol as periodic when declipping"),
]
LAYOUT_KEYS = ("taps", "mode", "carriers")


def _key(flag: str) -> str:
    return flag[2:].replace("-", "_")


def apply_overrides(exp: harness.ExperimentConfig, overrides: dict) -> harness.ExperimentConfig:
    """Apply string overrides keyed like the config file.

    Changing the subcarrier layout without naming a band re-derives a
    lowpass band reaching the highest occupied carrier.  Changing taps or
    mode without naming carriers selects the default carrier set.
    """
    if not overrides:
        return exp
    unknown = set(overrides) - {_key(f) for f, _ in EXPERIMENT_FLAGS} - {"preset"}
    if unknown:
        raise CliError(EXIT_USAGE, f"unknown setting(s): {', '.join(sorted(unknown))}")
    flat = exp.to_flat()
    flat.update(overrides)
    if ("taps" in overrides or "mode" in overrides) and "carriers" not in overrides:
        flat["carriers"] = None
    layout_changed = any(k in overrides for k in LAYOUT_KEYS)
    try:
        if layout_changed and "band" not in overrides:
            flat["band"] = None
        return harness.ExperimentConfig.from_flat(flat)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_USAGE, f"invalid setting: {exc}") from None


def experiment_from_args(args) -> harness.ExperimentConfig:
    file_settings = {}
    if getattr(args, "config", None):
        try:
            file_settings = parse_key_values(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(EXIT_INPUT, f"{args.config}: {exc.strerror}") from None
        except ValueError as exc:
            raise CliError(EXIT_INPUT, f"{args.config}: {exc}") from None
    name = args.preset or file_settings.get("preset") or "ideal-case"
    try:
        exp = harness.get_preset(name)
    except KeyError as exc:
        raise CliError(EXIT_USAGE, exc.args[0]) from None
    settings = {k: v for k, v in file_settings.items() if k != "preset"}
    for flag, _ in EXPERIMENT_FLAGS:
        value = getattr(args, _key(flag))
        if value is not None:
            settings[_key(flag)] = value
    exp = apply_overrides(exp, settings)
    if exp.name != name:
        exp = exp.replace(name=name)
    return exp


def config_text(exp: harness.ExperimentConfig) -> str:
    lines = []
    for key, value in exp.to_flat().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = "none"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# --- declip ---------------------------------------------------------------

def read_stream_csv(path):
    """Parse ``index,location,value,flag`` (the location column, or any of
    its cells, may be omitted).  Returns (header line, header, rows, stream,
    order) where ``order[k]`` is the file row of stream position ``k``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc.strerror}") from None
    lines = text.splitlines()
    if not lines:
        raise CliError(EXIT_INPUT, f"{path}:1: empty file")
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    if header not in (["index", "location", "value", "flag"], ["index", "value", "flag"]):
        raise CliError(EXIT_INPUT, f"{path}:1: header must be index,location,value,flag")
    has_loc = "location" in header
    rows, locs, vals, flags = [], [], [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = [f.strip() for f in next(csv.reader([line]))]
        if len(fields) != len(header):
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        rec = dict(zip(header, fields))
        try:
            index = int(rec["index"])
        except ValueError:
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: bad index {rec['index']!r}") from None
        try:
            loc = float(rec["location"]) if has_loc and rec["location"] else float(index)
            val = float(rec["value"])
        except ValueError:
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: non-numeric location or value") from None
        if not (math.isfinite(loc) and math.isfinite(val)):
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: location and value must be finite")
        try:
            flag = Flag.from_token(rec["flag"])
        except ValueError:
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: bad flag {rec['flag']!r} (want ok, lo or hi)") from None
        rows.append((lineno, line, rec))
        locs.append(loc)
        vals.append(val)
        flags.append(int(flag))
    if not rows:
        raise CliError(EXIT_INPUT, f"{path}: no samples")
    order = np.argsort(np.asarray(locs), kind="stable")
    try:
        stream = SaturatedStream.from_unsorted(locs, vals, flags)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None
    return lines[0], header, rows, stream, order


def cmd_declip(args) -> int:
    band = _band(args.band)
    window = _window(args)
    header_line, header, rows, stream, order = read_stream_csv(args.input)
    table = None
    if args.table:
        try:
            table = InverseTable.load(args.table)
        except OSError as exc:
            raise CliError(EXIT_INPUT, f"{args.table}: {exc.strerror}") from None
        except (ValueError, KeyError) as exc:
            raise CliError(EXIT_INPUT, f"{args.table}: {exc}") from None
    try:
        report = declip_stream(stream, band, window, table=table,
                               frame_len=args.frame_len, period=args.period)
    except DenseSaturationError as exc:
        raise CliError(EXIT_DENSE, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    except ArithmeticError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None

    estimated = {}
    pos = np.searchsorted(stream.locations, report.locations)
    for p, v in zip(pos, report.values):
        estimated[int(order[p])] = float(v)
    out = io.StringIO()
    out.write(header_line + "\n")
    writer = csv.writer(out, lineterminator="\n")
    for i, (_, line, rec) in enumerate(rows):
        if i in estimated:
            rec = dict(rec, value=repr(estimated[i]), flag="est")
            writer.writerow([rec[h] for h in header])
        else:
            out.write(line + "\n")
    _write_text(args.output, out.getvalue())

    summary = f"{len(report)} estimated, {report.skipped} skipped"
    if len(report):
        summary += (f", {report.inside_threshold_count} inside thresholds"
                    f", max condition {float(report.condition_numbers.max()):.3g}")
    print(summary)
    return EXIT_OK


# --- simulate / sweep ---------------------------------------------------------

def cmd_simulate(args) -> int:
    exp = experiment_from_args(args)
    seed = harness.trial_seed(args.seed, 0, args.trial)
    try:
        result = harness.run_trial(exp, seed, keep_traces=True)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    except ArithmeticError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    if args.out_dir:
        harness.emit_artifacts([result], args.out_dir)
    print(harness.result_json(result))
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:step`` (stop included when hit)."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ValueError
            start, stop, step = parts
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 12) for k in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_USAGE, f"invalid axis values {text!r}") from None


def cmd_sweep(args) -> int:
    exp = experiment_from_args(args)
    values = _parse_values(args.values)
    try:
        spec = harness.SweepSpec(exp, args.axis, tuple(values), args.trials,
                                 base_seed=args.seed, first_trial=args.first_trial)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None

    def progress(row):
        log.info("%s=%g: %d trials, BER sat %.3g declip %.3g base %.3g",
                 row.axis, row.value, row.trials, row.ber_sat, row.ber_declip, row.ber_base)

    out = harness.sweep(spec, workers=args.workers, on_row=progress, keep_results=args.keep_results)
    rows, results = (out if args.keep_results else (out, None))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(harness.SUMMARY_HEADER)
    for row in rows:
        writer.writerow(row.csv_fields())
    if args.out_dir:
        dest = Path(args.out_dir)
        dest.mkdir(parents=True, exist_ok=True)
        (dest / "summary.csv").write_text(buf.getvalue())
        hist = {repr(r.value): {str(k): r.clipped_hist[k] for k in sorted(r.clipped_hist)} for r in rows}
        (dest / "clipped_histogram.json").write_text(json.dumps(hist, indent=1, sort_keys=True) + "\n")
        if results is not None:
            with open(dest / "results.jsonl", "w") as fh:
                for point in results:
                    for r in point:
                        fh.write(harness.result_json(r) + "\n")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# --- kernel / tables ----------------------------------------------------------

def _band(text: str) -> BandSpec:
    try:
        return BandSpec.parse(text)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid band: {exc}") from None


def _window(args) -> WindowConfig:
    try:
        return WindowConfig(args.window_n, _opt_int(args.margin), _opt_float(args.epsilon))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None


def _opt_int(v):
    return None if v is None or str(v).lower() == "none" else int(v)


def _opt_float(v):
    return None if v is None or str(v).lower() == "none" else float(v)


def cmd_kernel(args) -> int:
    band = _band(args.band)
    if args.locations:
        locs = _parse_values(args.locations)
    else:
        locs = _parse_values(args.range)
    t = np.asarray(locs, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.gram:
        try:
            R = gram_matrix(band, t)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
        w.writerow(["t"] + [repr(float(v)) for v in t])
        for i, ti in enumerate(t):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in R[i]])
    else:
        w.writerow(["t", "phi"])
        for ti, v in zip(t, kernel_value(band, t)):
            w.writerow([repr(float(ti)), repr(float(v))])
    _write_text(args.output, buf.getvalue())
    return EXIT_OK


def cmd_tables(args) -> int:
    band = _band(args.band)
    window = _window(args)
    eps = window.resolved_epsilon(band)
    patterns = args.pattern or [",".join(str(o) for o in isolated_pattern(window.window_n))]
    table = InverseTable(band, window.window_n, eps)
    try:
        for p in patterns:
            table.add([float(v) for v in p.split(",")])
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid pattern: {exc}") from None
    except IllConditionedError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    _write_text(args.output, table.to_json() + "\n")
    log.info("wrote %d pattern(s)", len(table))
    return EXIT_OK


def cmd_presets(args) -> int:
    for name, exp in harness.PRESETS.items():
        o = exp.ofdm
        print(f"{name}: {o.mode}, {o.n_taps} taps, {len(o.active_carriers)} carriers, "
              f"{o.qam_order}-QAM, cp {o.cp_len}, N={exp.window.window_n}, CR {exp.cr_target}")
    return EXIT_OK


def cmd_dump_config(args) -> int:
    _write_text(args.output, config_text(experiment_from_args(args)))
    return EXIT_OK


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc.strerror}") from None


# --- parser -------------------------------------------------------------------

def _add_experiment_flags(p):
    p.add_argument("--preset", help=f"one of: {', '.join(harness.PRESETS)}")
    p.add_argument("--config", help="key = value file; flags override it")
    for flag, help_text in EXPERIMENT_FLAGS:
        p.add_argument(flag, dest=_key(flag), help=help_text)


def _add_window_flags(p):
    p.add_argument("--band", default="0:pi", help="lo:hi in rad/sample (default 0:pi)")
    p.add_argument("--window-n", type=int, default=8)
    p.add_argument("--margin", default=None)
    p.add_argument("--epsilon", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandrecon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("declip", help="estimate saturated rows of a sample CSV")
    p.add_argument("input")
    p.add_argument("-o", "--output", default="-")
    _add_window_flags(p)
    p.add_argument("--frame-len", type=int, help="samples per frame; windows stay inside frames")
    p.add_argument("--period", type=float, help="treat each frame as one period of this length")
    p.add_argument("--table", help="precomputed inverse table (JSON)")
    p.set_defaults(func=cmd_declip)

    p = sub.add_parser("simulate", help="one seeded OFDM trial")
    _add_experiment_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trial", type=int, default=0, help="trial index under --seed")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over one axis")
    _add_experiment_flags(p)
    p.add_argument("--axis", choices=harness.AXES, default="cr")
    p.add_argument("--values", required=True, help="a,b,c or start:stop:step")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--first-trial", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--keep-results", action="store_true", help="also write results.jsonl")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("kernel", help="kernel values or Gram matrix as CSV")
    p.add_argument("--band", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--locations", help="comma-separated offsets")
    g.add_argument("--range", help="start:stop:step")
    p.add_argument("--gram", action="store_true", help="emit the Gram matrix instead of phi(t)")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("tables", help="precompute inverse lookup tables")
    _add_window_flags(p)
    p.add_argument("--pattern", action="append",
                   help="comma-separated integer offsets; repeatable (default: isolated sample)")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("presets", help="list experiment presets")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("dump-config", help="write a preset with overrides as a config file")
    _add_experiment_flags(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"bandrecon: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
