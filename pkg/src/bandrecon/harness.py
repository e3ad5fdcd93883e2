"""Seeded Monte-Carlo trials and parameter sweeps.

A trial draws one OFDM symbol, passes it through the configured
impairments and decodes three receive paths from identical bits and
noise: no saturation (baseline), saturated, and saturated then declipped.

Seeds: trial ``i`` of sweep point ``j`` runs with
``trial_seed(base_seed, j, i)``, the first 64-bit word of
``numpy.random.SeedSequence([base_seed, j, i])``.  Inside a trial the seed
is split with ``SeedSequence(seed).spawn(3)`` into bit, channel-noise and
ADC-noise streams.  Results therefore do not depend on worker count or
on how a sweep is partitioned.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import channel as ch
from .declip import (
    InverseTable,
    SaturatedStream,
    WindowConfig,
    declip_stream,
)
from .errors import DenseSaturationError
from .kernel import BandSpec
from .ofdm import (
    WIRELESS,
    OfdmConfig,
    parse_bool,
    demodulate,
    merge_iq,
    modulate,
    rail_papr,
    random_frame,
)

AXES = ("cr", "window_n", "snr_db")
CHUNK = 250


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a trial needs besides its seed.

    ``cr_target=None`` disables saturation.  ``loss_db`` selects the
    synthetic insertion-loss channel (that much attenuation at the highest
    active carrier); ``channel_csv`` loads a measured response instead.
    ``cyclic`` lets the declipper treat each symbol as one period of the
    IDFT output.
    """

    name: str
    ofdm: OfdmConfig
    band: BandSpec
    window: WindowConfig
    cr_target: float | None = None
    snr_db: float = math.inf
    adc_bits: int | None = None
    sinad_db: float | None = None
    loss_db: float | None = None
    channel_csv: str | None = None
    sample_rate: float = 24e9
    cyclic: bool = True

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_axis(self, axis: str, value) -> "ExperimentConfig":
        if axis == "cr":
            return self.replace(cr_target=float(value))
        if axis == "window_n":
            return self.replace(window=dataclasses.replace(self.window, window_n=int(value)))
        if axis == "snr_db":
            return self.replace(snr_db=float(value))
        raise ValueError(f"unknown axis {axis!r}; choose from {', '.join(AXES)}")

    def response(self) -> ch.ChannelResponse | None:
        if self.channel_csv:
            return ch.load_response_csv(self.channel_csv)
        if self.loss_db is None:
            return None
        n = self.ofdm.n_taps
        top = max(min(k, n - k) for k in self.ofdm.active_carriers)
        f_ref = top * self.sample_rate / n
        return ch.synthetic_insertion_loss(self.loss_db, f_ref, self.sample_rate / 2)

    def to_flat(self) -> dict:
        """Flat mapping whose keys mirror the command-line flags."""
        o, w = self.ofdm, self.window
        return {
            "preset": self.name,
            "taps": o.n_taps,
            "carriers": list(o.active_carriers),
            "qam": o.qam_order,
            "mode": o.mode,
            "cp": o.cp_len,
            "dc_zeroed": o.dc_zeroed,
            "band": str(self.band),
            "window_n": w.window_n,
            "margin": w.margin,
            "epsilon": w.epsilon,
            "cr": self.cr_target,
            "snr_db": self.snr_db,
            "adc_bits": self.adc_bits,
            "sinad_db": self.sinad_db,
            "loss_db": self.loss_db,
            "channel_csv": self.channel_csv,
            "sample_rate": self.sample_rate,
            "cyclic": self.cyclic,
        }

    @classmethod
    def from_flat(cls, d: dict) -> "ExperimentConfig":
        """Inverse of ``to_flat``; values may be strings.  A missing band
        becomes lowpass up to the highest occupied carrier."""
        def opt(key, conv):
            v = d.get(key)
            if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none")):
                return None
            return conv(v)

        carriers = d.get("carriers")
        if isinstance(carriers, str):
            carriers = None if carriers.strip().lower() in ("", "none") else carriers.split(",")
        ofdm = OfdmConfig(
            n_taps=int(d["taps"]),
            active_carriers=None if carriers is None else tuple(int(c) for c in carriers),
            qam_order=int(d["qam"]),
            mode=str(d["mode"]),
            cp_len=int(d["cp"]),
            dc_zeroed=parse_bool(d["dc_zeroed"]),
        )
        band = d.get("band")
        if band is None or str(band).strip().lower() in ("", "none"):
            band = _lowpass_for(ofdm)
        elif not isinstance(band, BandSpec):
            band = BandSpec.parse(str(band))
        window = WindowConfig(int(d["window_n"]), opt("margin", int), opt("epsilon", float))
        return cls(
            name=str(d.get("preset", "custom")),
            ofdm=ofdm,
            band=band,
            window=window,
            cr_target=opt("cr", float),
            snr_db=_snr(opt("snr_db", float)),
            adc_bits=opt("adc_bits", int),
            sinad_db=opt("sinad_db", float),
            loss_db=opt("loss_db", float),
            channel_csv=opt("channel_csv", str),
            sample_rate=float(d.get("sample_rate", 24e9)),
            cyclic=parse_bool(d.get("cyclic", True)),
        )


def _snr(v):
    return math.inf if v is None else v


def _lowpass_for(ofdm: OfdmConfig) -> BandSpec:
    return BandSpec.lowpass(ofdm.max_bin_frequency)


def _presets() -> dict[str, ExperimentConfig]:
    wireless = OfdmConfig(32, None, 64, WIRELESS, 0, True)
    wireline = OfdmConfig(32, None, 64, "wireline", 0, True)
    link = OfdmConfig(32, tuple(range(7)), 64, "wireline", 4, False)
    return {
        "ideal-case": ExperimentConfig(
            "ideal-case", wireless, BandSpec(math.pi / 32, math.pi / 2),
            WindowConfig(8, None, 0.0), cr_target=1.0),
        "quality-wireline": ExperimentConfig(
            "quality-wireline", wireline, _lowpass_for(wireline), WindowConfig(10), cr_target=1.66),
        "quality-wireless": ExperimentConfig(
            "quality-wireless", wireless, _lowpass_for(wireless), WindowConfig(10), cr_target=1.31),
        "robustness": ExperimentConfig(
            "robustness", wireless, _lowpass_for(wireless), WindowConfig(8),
            cr_target=1.31, snr_db=20.0),
        "wireline-link": ExperimentConfig(
            "wireline-link", link, _lowpass_for(link), WindowConfig(8), cr_target=2.03,
            adc_bits=7, sinad_db=41.0, loss_db=11.0, sample_rate=24e9),
    }


PRESETS = _presets()


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def trial_seed(base_seed: int, point: int, trial: int) -> int:
    state = np.random.SeedSequence([int(base_seed), int(point), int(trial)]).generate_state(1, np.uint64)
    return int(state[0])


# --- single trial -------------------------------------------------------

@dataclass
class TrialResult:
    """Outcome of one trial.  PAPR values pool the real rails and are taken
    at the converter input, before and after clipping."""

    seed: int
    preset: str
    config: dict
    n_bits: int
    errors_saturated: int
    errors_declipped: int
    errors_baseline: int
    cr_target: float | None
    gamma: float | None
    achieved_cr: float | None
    papr_original: float
    papr_saturated: float
    n_clipped: int
    clipped_per_channel: list
    n_estimated: int
    n_skipped: int
    declip_failed: bool
    inside_threshold_count: int
    max_condition: float
    traces: dict | None = field(default=None, repr=False, compare=False)

    @property
    def ber_saturated(self) -> float:
        return self.errors_saturated / self.n_bits

    @property
    def ber_declipped(self) -> float:
        return self.errors_declipped / self.n_bits

    @property
    def ber_baseline(self) -> float:
        return self.errors_baseline / self.n_bits

    def to_record(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "traces"}
        d["ber_saturated"] = self.ber_saturated
        d["ber_declipped"] = self.ber_declipped
        d["ber_baseline"] = self.ber_baseline
        return d


def ber(tx_bits, rx_bits) -> float:
    """Fraction of differing bits."""
    a = np.asarray(tx_bits).reshape(-1)
    b = np.asarray(rx_bits).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"bit streams differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("empty bit streams")
    return int(np.count_nonzero(a != b)) / a.size


_TABLES: dict = {}


def _table_for(band: BandSpec, window: WindowConfig) -> InverseTable:
    eps = window.resolved_epsilon(band)
    key = (band, window.window_n, eps)
    table = _TABLES.get(key)
    if table is None:
        table = _TABLES[key] = InverseTable(band, window.window_n, eps, grow=True)
    return table


def run_trial(exp: ExperimentConfig, seed: int, *, keep_traces: bool = False) -> TrialResult:
    """One seeded transmission through baseline, saturated and declipped paths."""
    cfg = exp.ofdm
    n, cp = cfg.n_taps, cfg.cp_len
    bit_ss, noise_ss, adc_ss = np.random.SeedSequence(seed).spawn(3)
    frame = random_frame(np.random.default_rng(bit_ss), cfg)
    tx = modulate(frame, cfg)

    response = exp.response()
    if response is not None:
        body = ch.apply_channel(tx[cp:], response, exp.sample_rate)
        rx_clean = np.concatenate([body[n - cp:], body]) if cp else body
    else:
        rx_clean = tx

    gamma = None if exp.cr_target is None else ch.gamma_for_target_cr(rx_clean, exp.cr_target)
    rx = ch.awgn(rx_clean, exp.snr_db, seed=noise_ss) if math.isfinite(exp.snr_db) else rx_clean

    rails = [rx.real, rx.imag] if np.iscomplexobj(rx) else [rx]
    step = None
    if exp.adc_bits is not None:
        if gamma is None:
            raise ValueError("an ADC model needs a clipping level (cr)")
        adc_rng = np.random.default_rng(adc_ss)
        if exp.sinad_db is not None:
            s = ch.adc_noise_std(exp.adc_bits, gamma, exp.sinad_db)
            rails = [r + adc_rng.standard_normal(r.size) * s for r in rails]
        step = 2.0 * gamma / 2**exp.adc_bits

    locations = np.arange(-cp, n, dtype=float)
    base_rails, sat_rails, dec_rails, flag_rails, clip_rails = [], [], [], [], []
    clipped_counts = []
    n_est = n_skip = inside = 0
    failed = False
    max_cond = 0.0
    table = _table_for(exp.band, exp.window)
    for r in rails:
        base = r if step is None else np.round(r / step) * step
        base_rails.append(base)
        if gamma is None:
            sat_rails.append(base)
            dec_rails.append(base)
            clip_rails.append(np.asarray(r, dtype=float))
            flag_rails.append(np.zeros(r.size, dtype=np.int8))
            clipped_counts.append(0)
            continue
        stream = ch.clip(r, ch.SaturationThresholds(-gamma, gamma), locations)
        clip_rails.append(stream.values)
        if step is not None:
            q = ch.quantize(stream.values, exp.adc_bits, gamma)
            stream = SaturatedStream(locations, np.where(stream.saturated, stream.values, q),
                                     stream.flags, -gamma, gamma)
        nclip = int(np.count_nonzero(stream.flags))
        clipped_counts.append(nclip)
        sat_rails.append(stream.values)
        flag_rails.append(stream.flags)
        if nclip == 0:
            dec_rails.append(stream.values)
            continue
        try:
            rep = declip_stream(stream, exp.band, exp.window, table=table,
                                period=float(n) if exp.cyclic else None)
        except DenseSaturationError:
            failed = True
            dec_rails.append(stream.values)
            continue
        dec_rails.append(rep.apply(stream))
        n_est += len(rep)
        n_skip += rep.skipped
        inside += rep.inside_threshold_count
        if rep.condition_numbers.size:
            max_cond = max(max_cond, float(rep.condition_numbers.max()))

    def assemble(rs):
        return merge_iq(rs[0], rs[1]) if len(rs) == 2 else rs[0]

    sig_base, sig_sat, sig_dec = assemble(base_rails), assemble(sat_rails), assemble(dec_rails)
    decoded = []
    frames = []
    for sig in (sig_base, sig_sat, sig_dec):
        fr = demodulate(sig, cfg)
        if response is not None:
            fr = ch.equalize(fr, response, cfg, exp.sample_rate)
        frames.append(fr)
        decoded.append(fr.decode_bits(cfg))
    bits = frame.bits
    errs = [int(np.count_nonzero(d != bits)) for d in decoded]
    n_clipped = int(sum(clipped_counts))
    result = TrialResult(
        seed=int(seed),
        preset=exp.name,
        config=exp.to_flat(),
        n_bits=int(bits.size),
        errors_saturated=errs[1],
        errors_declipped=errs[2],
        errors_baseline=errs[0],
        cr_target=exp.cr_target,
        gamma=gamma,
        achieved_cr=None if gamma is None else ch.clipping_ratio(gamma, sig_sat),
        papr_original=rail_papr(np.concatenate(rails)),
        papr_saturated=rail_papr(np.concatenate(clip_rails)),
        n_clipped=n_clipped,
        clipped_per_channel=clipped_counts,
        n_estimated=n_est,
        n_skipped=n_skip,
        declip_failed=failed,
        inside_threshold_count=inside,
        max_condition=max_cond,
    )
    if keep_traces:
        result.traces = {
            "original": [np.asarray(r, dtype=float) for r in rails],
            "saturated": [np.asarray(r, dtype=float) for r in sat_rails],
            "declipped": [np.asarray(r, dtype=float) for r in dec_rails],
            "flags": flag_rails,
            "locations": locations,
            "tx_symbols": frame.data_symbols(cfg),
            "rx_symbols": [fr.data_symbols(cfg) for fr in frames],
        }
    return result


# --- sweeps -------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    experiment: ExperimentConfig
    axis: str
    values: tuple
    trials: int
    base_seed: int = 0
    first_trial: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; choose from {', '.join(AXES)}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep needs at least one axis value")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("axis values must be finite")
        if len(set(vals)) != len(vals):
            raise ValueError("axis values must be distinct")
        if self.axis == "window_n" and any(v != int(v) or v < 1 for v in vals):
            raise ValueError("window_n values must be positive integers")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "values", vals)


def wilson_interval(errors: int, total: int, z: float = 1.96) -> tuple[float, float]:
    if total <= 0:
        return 0.0, 1.0
    p = errors / total
    denom = 1 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class SweepRow:
    axis: str
    value: float
    trials: int = 0
    bits: int = 0
    errors_saturated: int = 0
    errors_declipped: int = 0
    errors_baseline: int = 0
    declip_failures: int = 0
    skipped: int = 0
    clipped_hist: Counter = field(default_factory=Counter)
    cr_sum: Fraction = Fraction(0)
    cr_count: int = 0

    @property
    def ber_sat(self) -> float:
        return self.errors_saturated / self.bits if self.bits else 0.0

    @property
    def ber_declip(self) -> float:
        return self.errors_declipped / self.bits if self.bits else 0.0

    @property
    def ber_base(self) -> float:
        return self.errors_baseline / self.bits if self.bits else 0.0

    def ci(self, which: str = "declipped") -> tuple[float, float]:
        return wilson_interval(getattr(self, f"errors_{which}"), self.bits)

    @property
    def mean_achieved_cr(self) -> float | None:
        return float(self.cr_sum / self.cr_count) if self.cr_count else None

    def add(self, r: TrialResult) -> None:
        self.trials += 1
        self.bits += r.n_bits
        self.errors_saturated += r.errors_saturated
        self.errors_declipped += r.errors_declipped
        self.errors_baseline += r.errors_baseline
        self.declip_failures += int(r.declip_failed)
        self.skipped += r.n_skipped
        self.clipped_hist[r.n_clipped] += 1
        if r.achieved_cr is not None:
            self.cr_sum += Fraction(r.achieved_cr)
            self.cr_count += 1

    def merge(self, other: "SweepRow") -> "SweepRow":
        if (self.axis, self.value) != (other.axis, other.value):
            raise ValueError("cannot merge rows of different sweep points")
        out = SweepRow(self.axis, self.value)
        for f in ("trials", "bits", "errors_saturated", "errors_declipped", "errors_baseline",
                  "declip_failures", "skipped", "cr_sum", "cr_count"):
            setattr(out, f, getattr(self, f) + getattr(other, f))
        out.clipped_hist = self.clipped_hist + other.clipped_hist
        return out

    def csv_fields(self) -> list:
        lo, hi = self.ci()
        return [self.axis, repr(self.value), self.trials, repr(self.ber_sat),
                repr(self.ber_declip), repr(self.ber_base), repr(lo), repr(hi)]


SUMMARY_HEADER = ["axis", "value", "trials", "ber_sat", "ber_declip", "ber_base", "ci_lo", "ci_hi"]


def _run_chunk(args) -> tuple[int, SweepRow, list | None]:
    exp, axis, value, point, base_seed, start, stop, keep = args
    row = SweepRow(axis, value)
    kept = [] if keep else None
    e = exp.with_axis(axis, value)
    for i in range(start, stop):
        r = run_trial(e, trial_seed(base_seed, point, i))
        row.add(r)
        if keep:
            kept.append(r)
    return point, row, kept


def sweep(spec: SweepSpec, workers: int = 1, on_row=None, keep_results: bool = False):
    """Aggregate ``spec.trials`` trials at each axis value.

    Returns the list of SweepRow (and the per-trial results when
    ``keep_results``).  ``on_row`` is called with each finished row, in
    axis order.
    """
    jobs = []
    stop_all = spec.first_trial + spec.trials
    for j, value in enumerate(spec.values):
        for start in range(spec.first_trial, stop_all, CHUNK):
            jobs.append((spec.experiment, spec.axis, value, j, spec.base_seed,
                         start, min(start + CHUNK, stop_all), keep_results))
    workers = max(1, int(workers or 1))
    if workers == 1:
        outputs = map(_run_chunk, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or workers))
        outputs = pool.map(_run_chunk, jobs)
    rows = [SweepRow(spec.axis, v) for v in spec.values]
    results: list[list] = [[] for _ in spec.values]
    remaining = Counter(j[3] for j in jobs)
    try:
        for point, row, kept in outputs:
            rows[point] = rows[point].merge(row)
            if kept:
                results[point].extend(kept)
            remaining[point] -= 1
            if remaining[point] == 0 and on_row is not None:
                on_row(rows[point])
    finally:
        if pool is not None:
            pool.shutdown()
    if keep_results:
        return rows, results
    return rows


# --- artifacts ------------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def result_json(r: TrialResult) -> str:
    rec = r.to_record()
    for k, v in rec.items():
        if isinstance(v, float) and not math.isfinite(v):
            rec[k] = repr(v)
    cfg = dict(rec["config"])
    for k, v in cfg.items():
        if isinstance(v, float) and not math.isfinite(v):
            cfg[k] = repr(v)
    rec["config"] = cfg
    return json.dumps(rec, sort_keys=True, default=_json_default)


RESULT_COLUMNS = [
    "seed", "preset", "n_bits", "ber_saturated", "ber_declipped", "ber_baseline",
    "cr_target", "gamma", "achieved_cr", "papr_original", "papr_saturated",
    "n_clipped", "n_estimated", "n_skipped", "declip_failed", "inside_threshold_count",
]


def write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow(row.csv_fields())


def emit_artifacts(results, destination, rows=None) -> list[Path]:
    """Write results.jsonl, results.csv, constellation.csv and trace.csv
    (plus summary.csv when sweep ``rows`` are given) under ``destination``.

    Constellation and trace files take their data from the first result
    that carries traces; without one they hold only a header.
    """
    results = list(results)
    if not results and not rows:
        raise ValueError("nothing to emit")
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    written = []

    path = dest / "results.jsonl"
    with open(path, "w") as fh:
        for r in results:
            fh.write(result_json(r) + "\n")
    written.append(path)

    path = dest / "results.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            rec = r.to_record()
            w.writerow([_cell(rec[c]) for c in RESULT_COLUMNS])
    written.append(path)

    traced = next((r for r in results if r.traces), None)
    path = dest / "constellation.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["carrier", "tx_real", "tx_imag", "base_real", "base_imag",
                    "sat_real", "sat_imag", "declip_real", "declip_imag"])
        if traced is not None:
            t = traced.traces
            carriers = traced.config["carriers"]
            for idx, k in enumerate(carriers):
                row = [k, t["tx_symbols"][idx]]
                row += [s[idx] for s in t["rx_symbols"]]
                flat = [k]
                for z in row[1:]:
                    flat += [repr(float(z.real)), repr(float(z.imag))]
                w.writerow(flat)
    written.append(path)

    path = dest / "trace.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "location", "channel", "original", "saturated", "declipped", "flag"])
        if traced is not None:
            t = traced.traces
            names = ["I", "Q"] if len(t["original"]) == 2 else ["real"]
            tokens = {-1: "lo", 0: "ok", 1: "hi"}
            for c, name in enumerate(names):
                for i, loc in enumerate(t["locations"]):
                    w.writerow([i, repr(float(loc)), name, repr(float(t["original"][c][i])),
                                repr(float(t["saturated"][c][i])), repr(float(t["declipped"][c][i])),
                                tokens[int(t["flags"][c][i])]])
    written.append(path)

    if rows:
        path = dest / "summary.csv"
        write_summary_csv(rows, path)
        written.append(path)
    return written


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v
