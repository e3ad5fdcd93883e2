"""Sliding-window reconstruction of saturated samples.

Each saturated sample is estimated independently from its ``window_n``
nearest unsaturated neighbours: one regularized kernel regression over the
neighbours, then one kernel evaluation at the saturated location.
Unsaturated samples are never modified and estimates are never fed back
as regression inputs.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DenseSaturationError,
    IllConditionedError,
    IllConditionedWindowWarning,
)
from .kernel import BandSpec, gram_matrix, kernel_value
from .reconstruct import (
    DEFAULT_EPSILON_SCALE,
    SampleSet,
    cho_solve_lower,
    cholesky,
    condition_estimate,
)

CONDITION_WARNING = 1e12


class Flag(IntEnum):
    OK = 0
    LOW = -1
    HIGH = 1

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Flag":
        try:
            return _FROM_TOKEN[token]
        except KeyError:
            raise ValueError(f"unknown flag {token!r} (expected ok, lo or hi)") from None


_TOKENS = {Flag.OK: "ok", Flag.LOW: "lo", Flag.HIGH: "hi"}
_FROM_TOKEN = {v: k for k, v in _TOKENS.items()}


@dataclass(frozen=True)
class SaturatedStream:
    """Sampled values with per-sample saturation flags.

    ``flags`` holds Flag codes (-1 low, 0 ok, +1 high).  Low-clipped samples
    all carry the same value ``t0`` and high-clipped ones ``t1``.
    """

    locations: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    t0: float | None = None
    t1: float | None = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        fl = np.asarray(self.flags, dtype=np.int8).reshape(-1)
        if not (loc.size == val.size == fl.size):
            raise ValueError("locations, values and flags differ in length")
        if loc.size > 1 and not np.all(np.diff(loc) > 0):
            raise ValueError("locations must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise ValueError("values must be finite")
        if np.any((fl < -1) | (fl > 1)):
            raise ValueError("flags must be -1, 0 or 1")
        t0 = _level(val[fl == Flag.LOW], self.t0, "low")
        t1 = _level(val[fl == Flag.HIGH], self.t1, "high")
        if t0 is not None and t1 is not None and not t0 < t1:
            raise ValueError(f"thresholds must satisfy t0 < t1, got ({t0}, {t1})")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "flags", fl)
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "t1", t1)

    @classmethod
    def from_unsorted(cls, locations, values, flags, t0=None, t1=None) -> "SaturatedStream":
        loc = np.asarray(locations, dtype=float).reshape(-1)
        order = np.argsort(loc, kind="stable")
        return cls(loc[order], np.asarray(values, float).reshape(-1)[order],
                   np.asarray(flags).reshape(-1)[order], t0, t1)

    @classmethod
    def gridded(cls, values, flags, t0=None, t1=None) -> "SaturatedStream":
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(np.arange(values.size, dtype=float), values, flags, t0, t1)

    def __len__(self):
        return self.locations.size

    @property
    def saturated(self) -> np.ndarray:
        return self.flags != Flag.OK


def _level(vals, declared, side):
    if vals.size and np.any(vals != vals[0]):
        raise ValueError(f"{side}-clipped samples must share one threshold value")
    if declared is not None:
        declared = float(declared)
        if vals.size and vals[0] != declared:
            raise ValueError(f"{side}-clipped value {vals[0]} differs from threshold {declared}")
        return declared
    return float(vals[0]) if vals.size else None


@dataclass(frozen=True)
class WindowConfig:
    """``window_n`` neighbours per regression.

    ``margin`` bounds how many saturated samples may sit among the
    ``window_n + margin`` samples nearest to the target; ``None`` searches
    the whole batch.  ``epsilon=None`` selects ``1e-8 * phi(0)``.
    """

    window_n: int = 8
    margin: int | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if int(self.window_n) != self.window_n or self.window_n < 1:
            raise ValueError(f"window_n must be a positive integer, got {self.window_n}")
        if self.margin is not None and (int(self.margin) != self.margin or self.margin < 0):
            raise ValueError(f"margin must be a nonnegative integer, got {self.margin}")
        if self.epsilon is not None and not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    def resolved_epsilon(self, band: BandSpec) -> float:
        # trace(R)/N equals phi(0) for every window
        return DEFAULT_EPSILON_SCALE * band.peak if self.epsilon is None else float(self.epsilon)


@dataclass
class DeclipReport:
    locations: np.ndarray
    values: np.ndarray
    condition_numbers: np.ndarray
    skipped_locations: np.ndarray
    inside_threshold_count: int = 0
    table_hits: int = 0
    table_misses: int = 0

    @property
    def skipped(self) -> int:
        return int(self.skipped_locations.size)

    @property
    def estimates(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.values.tolist()))

    def __len__(self):
        return int(self.locations.size)

    def apply(self, stream: SaturatedStream) -> np.ndarray:
        """Stream values with the estimates substituted in place."""
        out = stream.values.copy()
        if self.locations.size:
            idx = np.searchsorted(stream.locations, self.locations)
            out[idx] = self.values
        return out

    def estimated_mask(self, stream: SaturatedStream) -> np.ndarray:
        mask = np.zeros(len(stream), dtype=bool)
        mask[np.searchsorted(stream.locations, self.locations)] = True
        return mask


def partition(stream: SaturatedStream) -> tuple[SampleSet, np.ndarray]:
    """Split by flag into (unsaturated samples, saturated locations)."""
    ok = ~stream.saturated
    return SampleSet(stream.locations[ok], stream.values[ok]), stream.locations[~ok]


def _nearest(pool: np.ndarray, target: float, n: int) -> np.ndarray:
    """Indices of the ``n`` entries of sorted ``pool`` closest to ``target``,
    in order of increasing distance; equidistant entries resolve to the
    earlier location."""
    i = int(np.searchsorted(pool, target))
    lo, hi = max(0, i - n), min(pool.size, i + n)
    cand = pool[lo:hi]
    order = np.lexsort((cand, np.abs(cand - target)))[:n]
    return order + lo


def nearest_neighbors(unsaturated: SampleSet, target: float, n: int) -> SampleSet:
    """The ``n`` unsaturated samples nearest to ``target``, closest first."""
    if n < 1:
        raise ValueError("n must be positive")
    if len(unsaturated) < n:
        raise DenseSaturationError(len(unsaturated), n)
    order = np.argsort(unsaturated.locations, kind="stable")
    loc = unsaturated.locations[order]
    sel = _nearest(loc, float(target), n)
    return SampleSet(loc[sel], unsaturated.values[order][sel])


class InverseTable:
    """Pre-inverted regression matrices keyed by integer neighbour offsets.

    A key is the sorted tuple ``node - target`` for one window on a unit
    grid.  With ``grow=True`` missing patterns are computed on first use;
    the entry for a given pattern is the same whichever call creates it.
    """

    def __init__(self, band: BandSpec, window_n: int, epsilon: float, grow: bool = False):
        self.band = band
        self.window_n = int(window_n)
        self.epsilon = float(epsilon)
        self.grow = grow
        self._entries: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray, float]] = {}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, pattern):
        return tuple(pattern) in self._entries

    def patterns(self) -> list[tuple[int, ...]]:
        return sorted(self._entries)

    def matrix(self, pattern) -> np.ndarray:
        return self._entries[tuple(pattern)][0]

    def add(self, pattern) -> None:
        key = _check_pattern(pattern, self.window_n)
        if key in self._entries:
            return
        self._entries[key] = self._compute(key)

    def lookup(self, key: tuple[int, ...]):
        """(inverse, interpolation weights, condition) or None."""
        entry = self._entries.get(key)
        if entry is None and self.grow:
            entry = self._entries[key] = self._compute(key)
        return entry

    def _compute(self, key):
        offsets = np.asarray(key, dtype=float)
        R = gram_matrix(self.band, offsets)
        A = R + self.epsilon * np.eye(offsets.size)
        c = cholesky(A)
        inv = cho_solve_lower(c, np.eye(offsets.size))
        inv = 0.5 * (inv + inv.T)
        # estimate at offset 0 is e . inv y with e_n = phi(0 - offset_n)
        weights = inv @ kernel_value(self.band, -offsets)
        return inv, weights, condition_estimate(A, c)

    def to_json(self) -> str:
        doc = {
            "band": [self.band.omega0, self.band.omega1],
            "window_n": self.window_n,
            "epsilon": self.epsilon,
            "entries": [
                {"offsets": list(k), "inverse": self._entries[k][0].tolist()}
                for k in self.patterns()
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "InverseTable":
        doc = json.loads(text)
        table = cls(BandSpec(*doc["band"]), doc["window_n"], doc["epsilon"])
        for entry in doc["entries"]:
            key = _check_pattern(entry["offsets"], table.window_n)
            inv = np.asarray(entry["inverse"], dtype=float)
            if inv.shape != (len(key), len(key)):
                raise ValueError(f"inverse for {key} has shape {inv.shape}")
            offsets = np.asarray(key, dtype=float)
            weights = inv @ kernel_value(table.band, -offsets)
            A = gram_matrix(table.band, offsets) + table.epsilon * np.eye(len(key))
            cond = float(np.abs(A).sum(axis=0).max() * np.abs(inv).sum(axis=0).max())
            table._entries[key] = (inv, weights, cond)
        return table

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "InverseTable":
        return cls.from_json(Path(path).read_text())


def _check_pattern(pattern, n) -> tuple[int, ...]:
    arr = np.asarray(pattern, dtype=float).reshape(-1)
    if arr.size != n:
        raise ValueError(f"pattern {tuple(pattern)} has {arr.size} offsets, window needs {n}")
    if not np.all(arr == np.round(arr)):
        raise ValueError(f"pattern {tuple(pattern)} has non-integer offsets")
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        raise ValueError(f"pattern {tuple(pattern)} must be sorted and distinct")
    return tuple(int(v) for v in arr)


def isolated_pattern(window_n: int) -> tuple[int, ...]:
    """Offsets selected around a lone saturated sample on a dense grid."""
    before = (window_n + 1) // 2
    after = window_n - before
    return tuple(range(-before, 0)) + tuple(range(1, after + 1))


def precompute_inverse_tables(band: BandSpec, window_n: int, offset_patterns,
                              epsilon: float | None = None) -> InverseTable:
    """Build a read-only table of ``(R + eps I)^-1`` for each offset pattern."""
    eps = WindowConfig(window_n, epsilon=epsilon).resolved_epsilon(band)
    table = InverseTable(band, window_n, eps)
    for pattern in offset_patterns:
        table.add(pattern)
    return table


def _periodic_pool(loc, val, period):
    """Pool extended by one period on each side; a shifted copy never
    displaces a sample already present at the same location."""
    ext_loc = np.concatenate([loc, loc - period, loc + period])
    ext_val = np.concatenate([val, val, val])
    _, first = np.unique(ext_loc, return_index=True)
    first.sort()
    ext_loc, ext_val = ext_loc[first], ext_val[first]
    order = np.argsort(ext_loc, kind="stable")
    return ext_loc[order], ext_val[order]


@dataclass
class _Acc:
    locations: list = field(default_factory=list)
    values: list = field(default_factory=list)
    conds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    inside: int = 0
    hits: int = 0
    misses: int = 0


def declip_stream(stream: SaturatedStream, band: BandSpec, config: WindowConfig, *,
                  table: InverseTable | None = None, frame_len: int | None = None,
                  period: float | None = None) -> DeclipReport:
    """Estimate every saturated sample of ``stream``.

    ``frame_len`` splits the stream into consecutive frames of that many
    samples; windows never cross a frame boundary.  ``period`` declares each
    frame to be one period of a periodic signal, so neighbours may be taken
    from the frame's own samples shifted by +/- ``period``.

    Raises DenseSaturationError when a frame holding saturated samples has
    fewer than ``window_n`` unsaturated ones.  Windows whose solve fails, or
    that exceed ``margin``, are skipped and counted.
    """
    n = config.window_n
    eps = config.resolved_epsilon(band)
    if table is not None:
        if table.window_n != n or table.band != band or table.epsilon != eps:
            raise ValueError("lookup table was built for a different band, window or epsilon")
    acc = _Acc()
    size = len(stream)
    step = size if not frame_len else int(frame_len)
    for start in range(0, size, max(step, 1)):
        sl = slice(start, min(start + step, size))
        _declip_frame(stream, sl, band, config, eps, table, period, acc)
    return DeclipReport(
        locations=np.asarray(acc.locations, dtype=float),
        values=np.asarray(acc.values, dtype=float),
        condition_numbers=np.asarray(acc.conds, dtype=float),
        skipped_locations=np.asarray(acc.skipped, dtype=float),
        inside_threshold_count=acc.inside,
        table_hits=acc.hits,
        table_misses=acc.misses,
    )


def _declip_frame(stream, sl, band, config, eps, table, period, acc):
    loc = stream.locations[sl]
    val = stream.values[sl]
    fl = stream.flags[sl]
    sat = np.flatnonzero(fl)
    if sat.size == 0:
        return
    n = config.window_n
    ok = fl == 0
    pool_loc, pool_val = loc[ok], val[ok]
    if pool_loc.size < n:
        raise DenseSaturationError(int(pool_loc.size), n)
    sat_loc = loc[sat]
    if period:
        pool_loc, pool_val = _periodic_pool(pool_loc, pool_val, float(period))
        if config.margin is not None:
            sat_loc = np.unique(np.concatenate([sat_loc, sat_loc - period, sat_loc + period]))
    t0 = -np.inf if stream.t0 is None else stream.t0
    t1 = np.inf if stream.t1 is None else stream.t1
    eye = None
    for k in sat:
        tau = loc[k]
        sel = _nearest(pool_loc, tau, n)
        if config.margin is not None and _margin_exceeded(pool_loc, sel, sat_loc, tau, n, config.margin):
            acc.skipped.append(tau)
            continue
        sel.sort()
        nodes = pool_loc[sel]
        y = pool_val[sel]
        entry = None
        try:
            if table is not None:
                offsets = nodes - tau
                if np.all(offsets == np.round(offsets)):
                    entry = table.lookup(tuple(int(o) for o in offsets))
                    if entry is None:
                        acc.misses += 1
                    else:
                        acc.hits += 1
            if entry is not None:
                est = float(entry[1] @ y)
                cond = entry[2]
            else:
                if eye is None:
                    eye = np.eye(n)
                A = gram_matrix(band, nodes) + eps * eye
                c = cholesky(A)
                alpha = cho_solve_lower(c, y)
                est = float(kernel_value(band, tau - nodes) @ alpha)
                cond = condition_estimate(A, c)
        except IllConditionedError:
            acc.skipped.append(tau)
            continue
        if cond > CONDITION_WARNING:
            warnings.warn(f"window at {tau} has condition number {cond:.3g}",
                          IllConditionedWindowWarning, stacklevel=3)
        if (fl[k] > 0 and est < t1) or (fl[k] < 0 and est > t0):
            acc.inside += 1
        acc.locations.append(tau)
        acc.values.append(est)
        acc.conds.append(cond)


def _margin_exceeded(pool_loc, sel, sat_loc, tau, n, margin) -> bool:
    """True when more than ``margin`` saturated samples rank ahead of the
    farthest selected neighbour (same distance-then-location order)."""
    far = pool_loc[sel[-1]]
    d_far = abs(far - tau)
    d = np.abs(sat_loc - tau)
    ahead = (d < d_far) | ((d == d_far) & (sat_loc < far))
    ahead &= sat_loc != tau
    return int(np.count_nonzero(ahead)) > margin
