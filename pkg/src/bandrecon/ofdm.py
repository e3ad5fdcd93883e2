"""OFDM baseband: Gray-mapped square QAM, subcarrier assembly, unitary
IDFT/DFT with cyclic prefix, and PAPR.

Wireline mode builds a Hermitian spectrum so the time signal is real.
Self-conjugate bins (DC and, for even sizes, the Nyquist bin) then carry
only the in-phase axis of the constellation.  Wireless mode keeps a
complex signal whose I and Q rails are processed separately downstream.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WIRELINE = "wireline"
WIRELESS = "wireless"
MODES = (WIRELINE, WIRELESS)


def _default_carriers(n_taps: int, mode: str) -> tuple[int, ...]:
    half = n_taps // 4
    if mode == WIRELINE:
        return tuple(range(1, half + 1))
    return tuple(range(1, half + 1)) + tuple(range(n_taps - half, n_taps))


@dataclass(frozen=True)
class OfdmConfig:
    n_taps: int = 32
    active_carriers: tuple[int, ...] | None = None
    qam_order: int = 64
    mode: str = WIRELESS
    cp_len: int = 0
    dc_zeroed: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = int(self.n_taps)
        if n != self.n_taps or n < 2:
            raise ValueError(f"n_taps must be an integer >= 2, got {self.n_taps}")
        carriers = self.active_carriers
        if carriers is None:
            carriers = _default_carriers(n, self.mode)
        carriers = tuple(sorted(int(k) for k in carriers))
        if not carriers:
            raise ValueError("at least one active carrier is required")
        if len(set(carriers)) != len(carriers):
            raise ValueError("active carriers must be distinct")
        if carriers[0] < 0 or carriers[-1] >= n:
            raise ValueError(f"active carriers must lie in [0, {n})")
        if self.dc_zeroed and 0 in carriers:
            raise ValueError("carrier 0 is active but dc_zeroed is set")
        if self.mode == WIRELINE:
            for k in carriers:
                m = (n - k) % n
                if m != k and m in carriers:
                    raise ValueError(
                        f"wireline carriers {k} and {m} are mirrors; list one of each pair")
        K = int(round(math.log2(self.qam_order))) if self.qam_order > 0 else 0
        if K < 2 or K % 2 or 2**K != self.qam_order:
            raise ValueError(f"qam_order must be an even power of 2 (4, 16, 64, ...), got {self.qam_order}")
        if not 0 <= int(self.cp_len) <= n or int(self.cp_len) != self.cp_len:
            raise ValueError(f"cp_len must be an integer in [0, {n}]")
        object.__setattr__(self, "n_taps", n)
        object.__setattr__(self, "active_carriers", carriers)
        object.__setattr__(self, "cp_len", int(self.cp_len))
        object.__setattr__(self, "dc_zeroed", bool(self.dc_zeroed))

    @property
    def bits_per_point(self) -> int:
        return int(round(math.log2(self.qam_order)))

    @property
    def frame_len(self) -> int:
        return self.n_taps + self.cp_len

    def is_real_only(self, k: int) -> bool:
        return self.mode == WIRELINE and (self.n_taps - k) % self.n_taps == k

    @property
    def bits_per_frame(self) -> int:
        K = self.bits_per_point
        return sum(K // 2 if self.is_real_only(k) else K for k in self.active_carriers)

    @property
    def occupied_bins(self) -> np.ndarray:
        """Bins allowed to be nonzero, mirrors included in wireline mode."""
        bins = set(self.active_carriers)
        if self.mode == WIRELINE:
            bins |= {(self.n_taps - k) % self.n_taps for k in self.active_carriers}
        return np.array(sorted(bins), dtype=int)

    @property
    def max_bin_frequency(self) -> float:
        """Largest occupied |frequency| in radians per sample."""
        n = self.n_taps
        return max(2 * math.pi * min(k, n - k) / n for k in self.active_carriers)

    def to_dict(self) -> dict:
        return {
            "n_taps": self.n_taps,
            "active_carriers": list(self.active_carriers),
            "qam_order": self.qam_order,
            "mode": self.mode,
            "cp_len": self.cp_len,
            "dc_zeroed": self.dc_zeroed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OfdmConfig":
        return cls(
            n_taps=int(d["n_taps"]),
            active_carriers=tuple(int(k) for k in d["active_carriers"]),
            qam_order=int(d["qam_order"]),
            mode=str(d["mode"]),
            cp_len=int(d["cp_len"]),
            dc_zeroed=parse_bool(d["dc_zeroed"]),
        )

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OfdmConfig":
        d = parse_key_values(text)
        missing = {"n_taps", "active_carriers", "qam_order", "mode", "cp_len", "dc_zeroed"} - set(d)
        if missing:
            raise ValueError(f"config text lacks keys: {', '.join(sorted(missing))}")
        d["active_carriers"] = [int(v) for v in d["active_carriers"].split(",") if v.strip()]
        return cls.from_dict(d)


def parse_key_values(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# --- QAM ---------------------------------------------------------------

class _Axis:
    """Per-axis reflected Gray labelling of ``L`` amplitude levels."""

    def __init__(self, order: int):
        K = int(round(math.log2(order)))
        if order < 4 or K % 2 or 2**K != order:
            raise ValueError(f"order must be an even power of 2 (4, 16, 64, ...), got {order}")
        self.bits = K // 2
        L = 2**self.bits
        index = np.arange(L)
        gray = index ^ (index >> 1)
        amps = (L - 1) - 2 * index  # label 0 sits at the positive extreme
        self.amp_of_label = np.empty(L)
        self.amp_of_label[gray] = amps
        self.scale = math.sqrt(2 * (L * L - 1) / 3)
        self.weights = 1 << np.arange(self.bits - 1, -1, -1)

    def encode(self, bits: np.ndarray) -> np.ndarray:
        labels = bits.reshape(-1, self.bits) @ self.weights
        return self.amp_of_label[labels] / self.scale

    def decode(self, x: np.ndarray) -> np.ndarray:
        d = np.abs(x[:, None] * self.scale - self.amp_of_label[None, :])
        # argmin takes the first minimum, i.e. the smallest label on ties
        labels = np.argmin(d, axis=1)
        return ((labels[:, None] & self.weights[None, :]) > 0).astype(np.uint8).reshape(-1)


_AXES: dict[int, _Axis] = {}


def _axis(order: int) -> _Axis:
    ax = _AXES.get(order)
    if ax is None:
        ax = _AXES[order] = _Axis(order)
    return ax


def _as_bits(bits) -> np.ndarray:
    b = np.asarray(bits).reshape(-1)
    if b.size and not np.all((b == 0) | (b == 1)):
        raise ValueError("bits must be 0 or 1")
    return b.astype(np.int64)


def qam_encode(bits, order: int) -> np.ndarray:
    """Map bits to unit-average-energy Gray QAM points.

    Each group of ``log2(order)`` bits is split in half: the first half
    labels the in-phase level, the second the quadrature level.
    """
    ax = _axis(order)
    b = _as_bits(bits)
    K = 2 * ax.bits
    if b.size % K:
        raise ValueError(f"{b.size} bits is not a multiple of {K}")
    b = b.reshape(-1, 2, ax.bits)
    return ax.encode(b[:, 0]) + 1j * ax.encode(b[:, 1])


def qam_decode(points, order: int) -> np.ndarray:
    """Minimum-distance slicing back to bits (ties go to the smaller label)."""
    ax = _axis(order)
    z = np.asarray(points, dtype=complex).reshape(-1)
    i_bits = ax.decode(z.real).reshape(-1, ax.bits)
    q_bits = ax.decode(z.imag).reshape(-1, ax.bits)
    return np.concatenate([i_bits, q_bits], axis=1).reshape(-1)


def pam_encode(bits, order: int) -> np.ndarray:
    """In-phase axis of the ``order``-QAM constellation only (real points)."""
    ax = _axis(order)
    b = _as_bits(bits)
    if b.size % ax.bits:
        raise ValueError(f"{b.size} bits is not a multiple of {ax.bits}")
    return ax.encode(b)


def pam_decode(points, order: int) -> np.ndarray:
    return _axis(order).decode(np.asarray(points, dtype=complex).reshape(-1).real)


# --- frames and (de)modulation ----------------------------------------

@dataclass
class SymbolFrame:
    """Full ``n_taps`` spectrum of one OFDM symbol plus its source bits."""

    spectrum: np.ndarray
    bits: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.spectrum = np.asarray(self.spectrum, dtype=complex).reshape(-1)

    @classmethod
    def from_bits(cls, bits, config: OfdmConfig) -> "SymbolFrame":
        b = _as_bits(bits)
        if b.size != config.bits_per_frame:
            raise ValueError(f"frame carries {config.bits_per_frame} bits, got {b.size}")
        n = config.n_taps
        X = np.zeros(n, dtype=complex)
        real_only = [config.is_real_only(k) for k in config.active_carriers]
        if not any(real_only):
            X[list(config.active_carriers)] = qam_encode(b, config.qam_order)
        else:
            K = config.bits_per_point
            pos = 0
            for k, ro in zip(config.active_carriers, real_only):
                take = K // 2 if ro else K
                chunk = b[pos:pos + take]
                pos += take
                X[k] = pam_encode(chunk, config.qam_order)[0] if ro else qam_encode(chunk, config.qam_order)[0]
        if config.mode == WIRELINE:
            for k in config.active_carriers:
                m = (n - k) % n
                if m != k:
                    X[m] = np.conj(X[k])
        return cls(X, b.astype(np.uint8))

    def data_symbols(self, config: OfdmConfig) -> np.ndarray:
        return self.spectrum[list(config.active_carriers)]

    def decode_bits(self, config: OfdmConfig) -> np.ndarray:
        syms = self.data_symbols(config)
        real_only = [config.is_real_only(k) for k in config.active_carriers]
        if not any(real_only):
            return qam_decode(syms, config.qam_order)
        parts = [pam_decode(s, config.qam_order) if ro else qam_decode(s, config.qam_order)
                 for s, ro in zip(syms, real_only)]
        return np.concatenate(parts)


def random_frame(rng: np.random.Generator, config: OfdmConfig) -> SymbolFrame:
    return SymbolFrame.from_bits(rng.integers(0, 2, config.bits_per_frame), config)


def modulate(frame: SymbolFrame, config: OfdmConfig) -> np.ndarray:
    """Unitary IDFT of the frame spectrum with the cyclic prefix prepended."""
    n = config.n_taps
    X = frame.spectrum
    if X.size != n:
        raise ValueError(f"spectrum has {X.size} bins, config expects {n}")
    idle = np.ones(n, dtype=bool)
    idle[config.occupied_bins] = False
    if np.any(X[idle] != 0):
        raise ValueError("frame has energy on inactive carriers")
    x = np.fft.ifft(X) * math.sqrt(n)
    if config.mode == WIRELINE:
        mirror = np.conj(X[(-np.arange(n)) % n])
        if np.max(np.abs(X - mirror)) > 1e-12 * max(1.0, np.max(np.abs(X))):
            raise ValueError("wireline frame is not Hermitian-symmetric")
        x = x.real
    if config.cp_len:
        x = np.concatenate([x[-config.cp_len:], x])
    return x


def demodulate(signal, config: OfdmConfig) -> SymbolFrame:
    """Drop the cyclic prefix and take the unitary DFT.  Inactive bins are
    kept, so distortion energy stays visible."""
    x = np.asarray(signal)
    if x.ndim != 1 or x.size != config.frame_len:
        raise ValueError(f"expected {config.frame_len} samples, got {x.size}")
    return SymbolFrame(np.fft.fft(x[config.cp_len:]) / math.sqrt(config.n_taps))


def out_of_band_energy(frame: SymbolFrame, config: OfdmConfig) -> float:
    idle = np.ones(config.n_taps, dtype=bool)
    idle[config.occupied_bins] = False
    return float(np.sum(np.abs(frame.spectrum[idle]) ** 2))


def split_iq(signal) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(signal)
    return np.real(x).astype(float), np.imag(x).astype(float)


def merge_iq(i, q) -> np.ndarray:
    i = np.asarray(i, dtype=float)
    q = np.asarray(q, dtype=float)
    if i.shape != q.shape:
        raise ValueError(f"I has shape {i.shape}, Q has {q.shape}")
    return i + 1j * q


def papr(signal) -> float:
    """Peak over mean instantaneous power, linear scale, sample peaks."""
    p = np.abs(np.asarray(signal)) ** 2
    if p.size == 0:
        raise ValueError("empty signal")
    mean = p.mean()
    if mean == 0:
        raise ValueError("PAPR undefined for an all-zero signal")
    return float(p.max() / mean)


def rail_papr(signal) -> float:
    """PAPR of the real rails pooled together (I and Q samples for a
    complex signal), which is what a pair of real converters sees."""
    x = np.asarray(signal)
    if np.iscomplexobj(x):
        x = np.concatenate([x.real.reshape(-1), x.imag.reshape(-1)])
    return papr(x)


def write_signal_csv(path, signal) -> None:
    x = np.asarray(signal, dtype=complex).reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "real", "imag"])
        for i, v in enumerate(x):
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))])


def read_signal_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.zeros(len(rows), dtype=complex)
    for r in rows:
        out[int(r["index"])] = complex(float(r["real"]), float(r["imag"]))
    return out


def load_config(path) -> OfdmConfig:
    return OfdmConfig.from_text(Path(path).read_text())
