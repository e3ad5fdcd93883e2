"""Impairments between transmitter and reconstruction: hard clipping,
mid-tread quantization, AWGN, frequency-dependent insertion loss, and
per-subcarrier equalization."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .declip import Flag, SaturatedStream
from .ofdm import OfdmConfig, SymbolFrame


@dataclass(frozen=True)
class SaturationThresholds:
    t0: float
    t1: float

    def __post_init__(self):
        if not float(self.t0) < float(self.t1):
            raise ValueError(f"need t0 < t1, got ({self.t0}, {self.t1})")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))

    @classmethod
    def symmetric(cls, gamma: float) -> "SaturationThresholds":
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        return cls(-gamma, gamma)


def clip(signal, thr: SaturationThresholds, locations=None) -> SaturatedStream:
    """Hard-limit a real signal; values at or beyond a threshold take the
    threshold value and are flagged."""
    x = np.asarray(signal, dtype=float).reshape(-1)
    flags = np.zeros(x.size, dtype=np.int8)
    lo = x <= thr.t0
    hi = x >= thr.t1
    flags[lo] = Flag.LOW
    flags[hi] = Flag.HIGH
    values = np.where(lo, thr.t0, np.where(hi, thr.t1, x))
    if locations is None:
        locations = np.arange(x.size, dtype=float)
    return SaturatedStream(locations, values, flags, thr.t0, thr.t1)


def rms(x) -> float:
    x = np.asarray(x)
    return math.sqrt(float(np.mean(np.abs(x) ** 2))) if x.size else 0.0


def clipping_ratio(gamma: float, clipped) -> float:
    """``gamma`` over the root-mean-square of the clipped signal.

    ``clipped`` is a SaturatedStream or an array (complex allowed, in which
    case the RMS is taken over the complex magnitude).
    """
    values = clipped.values if isinstance(clipped, SaturatedStream) else np.asarray(clipped)
    r = rms(values)
    if r == 0:
        raise ValueError("clipping ratio undefined for a zero-RMS signal")
    return gamma / r


def gamma_for_target_cr(signal, target_cr: float) -> float:
    """Threshold that gives ``target_cr`` against the unclipped RMS."""
    if not target_cr > 0:
        raise ValueError(f"target CR must be positive, got {target_cr}")
    r = rms(signal)
    if r == 0:
        raise ValueError("signal is all zero")
    return target_cr * r


def awgn(signal, snr_db: float, seed=None) -> np.ndarray:
    """Add white Gaussian noise at ``snr_db`` relative to the mean signal
    power.  Complex signals get independent noise on each rail, the total
    variance split evenly.  ``snr_db = inf`` returns a copy."""
    x = np.asarray(signal)
    if x.size == 0:
        raise ValueError("empty signal")
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    power = float(np.mean(np.abs(x) ** 2))
    var = power / 10 ** (snr_db / 10)
    rng = np.random.default_rng(seed)
    if np.iscomplexobj(x):
        s = math.sqrt(var / 2)
        noise = rng.standard_normal(x.shape) * s + 1j * (rng.standard_normal(x.shape) * s)
    else:
        noise = rng.standard_normal(x.shape) * math.sqrt(var)
    return x + noise


def quantize(signal, bits: int, full_scale: float) -> np.ndarray:
    """Mid-tread quantizer with ``2**bits`` levels ``k * step`` over
    ``[-full_scale, full_scale)``, ``step = 2 full_scale / 2**bits``.
    Out-of-range inputs land on the extreme levels.  Complex inputs are
    quantized per rail."""
    if bits < 1 or int(bits) != bits:
        raise ValueError(f"bits must be a positive integer, got {bits}")
    if not full_scale > 0:
        raise ValueError("full_scale must be positive")
    x = np.asarray(signal)
    if np.iscomplexobj(x):
        return quantize(x.real, bits, full_scale) + 1j * quantize(x.imag, bits, full_scale)
    step = 2.0 * full_scale / 2**bits
    half = 2 ** (bits - 1)
    k = np.clip(np.round(np.asarray(x, dtype=float) / step), -half, half - 1)
    return k * step


def adc_noise_std(bits: int, full_scale: float, sinad_db: float) -> float:
    """Extra Gaussian noise that brings a full-scale sine through a
    ``bits`` quantizer down to ``sinad_db``.

    The quantizer's own error is measured on a densely sampled full-scale
    sine, so the top-code clamp is accounted for along with the step."""
    t = (np.arange(8192) + 0.5) / 8192
    sine = full_scale * np.sin(2 * np.pi * t)
    p_quant = float(np.mean((quantize(sine, bits, full_scale) - sine) ** 2))
    p_total = (full_scale**2 / 2) / 10 ** (sinad_db / 10)
    p_extra = p_total - p_quant
    if p_extra < 0:
        raise ValueError(f"{bits}-bit quantization alone is worse than {sinad_db} dB SINAD")
    return math.sqrt(p_extra)


@dataclass(frozen=True)
class ChannelResponse:
    """Sampled one-sided channel response.

    Magnitude (dB) is interpolated linearly in frequency and held constant
    outside the grid.  Without a phase column the response has linear phase
    ``-2 pi f delay_s`` (zero by default).  Negative frequencies use the
    conjugate, as for any real channel.
    """

    freqs_hz: np.ndarray
    mag_db: np.ndarray
    phase_rad: np.ndarray | None = None
    delay_s: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=float).reshape(-1)
        m = np.asarray(self.mag_db, dtype=float).reshape(-1)
        if f.size == 0 or f.shape != m.shape:
            raise ValueError("need matching, nonempty frequency and magnitude columns")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ValueError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(m)):
            raise ValueError("magnitudes must be finite")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "mag_db", m)
        if self.phase_rad is not None:
            p = np.asarray(self.phase_rad, dtype=float).reshape(-1)
            if p.shape != f.shape:
                raise ValueError("phase column length differs")
            object.__setattr__(self, "phase_rad", p)

    @classmethod
    def flat(cls, f_max_hz: float = 1.0) -> "ChannelResponse":
        return cls(np.array([0.0, f_max_hz]), np.zeros(2))

    def at(self, freqs_hz) -> np.ndarray:
        f = np.asarray(freqs_hz, dtype=float)
        af = np.abs(f)
        mag = 10 ** (np.interp(af, self.freqs_hz, self.mag_db) / 20)
        if self.phase_rad is not None:
            ph = np.interp(af, self.freqs_hz, self.phase_rad)
        else:
            ph = -2 * np.pi * af * self.delay_s
        return mag * np.exp(1j * np.sign(f) * ph)

    def covers(self, freqs_hz) -> bool:
        return bool(np.all(np.abs(np.asarray(freqs_hz)) <= self.freqs_hz[-1] * (1 + 1e-12)))


def synthetic_insertion_loss(loss_db: float, f_ref_hz: float, f_max_hz: float,
                             points: int = 257, skin_fraction: float = 0.5) -> ChannelResponse:
    """``mag_db(f) = -(a sqrt(f) + b f)`` with ``loss_db`` of attenuation at
    ``f_ref_hz``; ``skin_fraction`` of it comes from the square-root term."""
    if not 0 < f_ref_hz <= f_max_hz:
        raise ValueError("need 0 < f_ref_hz <= f_max_hz")
    a = skin_fraction * loss_db / math.sqrt(f_ref_hz)
    b = (1 - skin_fraction) * loss_db / f_ref_hz
    f = np.linspace(0.0, f_max_hz, points)
    return ChannelResponse(f, -(a * np.sqrt(f) + b * f))


def load_response_csv(path) -> ChannelResponse:
    """Read ``freq_hz,mag_db[,phase_rad]``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["freq_hz", "mag_db"] or header[2:] not in ([], ["phase_rad"]):
            raise ValueError(f"{path}: header must be freq_hz,mag_db[,phase_rad], got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    data = np.asarray(rows, dtype=float).reshape(-1, len(header))
    phase = data[:, 2] if len(header) == 3 else None
    return ChannelResponse(data[:, 0], data[:, 1], phase)


def write_response_csv(path, response: ChannelResponse) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_phase = response.phase_rad is not None
        w.writerow(["freq_hz", "mag_db"] + (["phase_rad"] if has_phase else []))
        for i, f in enumerate(response.freqs_hz):
            row = [repr(float(f)), repr(float(response.mag_db[i]))]
            if has_phase:
                row.append(repr(float(response.phase_rad[i])))
            w.writerow(row)


def apply_channel(signal, response: ChannelResponse, sample_rate: float) -> np.ndarray:
    """Multiply the DFT of ``signal`` by the response at each bin frequency.

    The operation is circular over the signal length, which is what a
    channel shorter than the cyclic prefix does to one OFDM symbol.
    """
    x = np.asarray(signal)
    n = x.size
    X = np.fft.fft(x)
    f = np.fft.fftfreq(n, 1.0 / sample_rate)
    used = np.abs(X) > 1e-12 * max(np.abs(X).max(), 1e-300)
    if not response.covers(f[used]):
        raise ValueError("channel response does not cover the signal band")
    H = response.at(f)
    if n % 2 == 0:
        H[n // 2] = H[n // 2].real  # keep real signals real
    y = np.fft.ifft(X * H)
    return y.real if not np.iscomplexobj(x) else y


def carrier_frequencies(config: OfdmConfig, sample_rate: float) -> np.ndarray:
    n = config.n_taps
    return np.fft.fftfreq(n, 1.0 / sample_rate)[list(config.active_carriers)]


def equalize(frame: SymbolFrame, response: ChannelResponse, config: OfdmConfig,
             sample_rate: float) -> SymbolFrame:
    """Divide each active carrier (and its mirror in wireline mode) by the
    channel response at that carrier."""
    f = np.fft.fftfreq(config.n_taps, 1.0 / sample_rate)
    bins = config.occupied_bins
    H = response.at(f[bins])
    if config.n_taps % 2 == 0:
        H = np.where(bins == config.n_taps // 2, H.real, H)
    if np.any(np.abs(H) == 0):
        k = int(bins[np.flatnonzero(np.abs(H) == 0)[0]])
        raise ValueError(f"channel response is zero at carrier {k}; cannot invert")
    X = frame.spectrum.copy()
    X[bins] = X[bins] / H
    return SymbolFrame(X, frame.bits)
