"""Acceptance checks.  Each test records one PASS/FAIL line; the lines are
repeated in the terminal summary of the pytest run."""
import math
import time
import warnings

import numpy as np
import pytest

from bandrecon import BandSpec, SampleSet, fit_norm, interpolate, kernel_value, regress
from bandrecon.channel import apply_channel, equalize, synthetic_insertion_loss
from bandrecon.kernel import gram_matrix
from bandrecon.harness import SweepSpec, get_preset, run_trial, sweep, trial_seed
from bandrecon.ofdm import demodulate, modulate, random_frame
from bandrecon.reconstruct import cholesky
from oracles import min_norm_kkt, quad_phi

pytestmark = pytest.mark.slow

IDEAL_TRIALS = 2000
MAX_CLIPPED_PER_RAIL = 5


def random_band(rng, min_width=0.25):
    """Band edges on [0, pi] at least ``min_width * pi`` wide."""
    lo = rng.uniform(0.0, 1.0 - min_width)
    return BandSpec(lo * math.pi, min(lo + rng.uniform(min_width, 1.0), 1.0) * math.pi)


@pytest.fixture(scope="module")
def ideal_run():
    exp = get_preset("ideal-case")
    start = time.perf_counter()
    results = [run_trial(exp, trial_seed(0, 0, i)) for i in range(IDEAL_TRIALS)]
    return results, time.perf_counter() - start


def test_ideal_case_recovery(ideal_run, verdict):
    results, elapsed = ideal_run
    qualifying = [r for r in results
                  if max(r.clipped_per_channel) <= MAX_CLIPPED_PER_RAIL
                  and r.n_skipped == 0 and not r.declip_failed]
    clipped = [r for r in qualifying if r.n_clipped > 0]
    with_errors = [r for r in qualifying if r.errors_declipped]
    silent_clips = [r for r in clipped if r.errors_saturated == 0]
    ok = (len(qualifying) >= 200 and not with_errors and not silent_clips and elapsed < 10.0)
    verdict(1, ok, f"{len(qualifying)} qualifying trials ({len(clipped)} with clipping); "
                   f"{len(with_errors)} with declipped errors "
                   f"({sum(r.errors_declipped for r in with_errors)} bits); "
                   f"{len(silent_clips)} clipped trials with saturated BER 0; {elapsed:.1f} s")
    assert len(qualifying) >= 200
    assert elapsed < 10.0
    assert not with_errors, "declipped BER must be exactly 0 on every qualifying trial"
    assert not silent_clips, "saturated BER must be positive whenever a sample clips"


def test_wireline_quality(verdict):
    exp = get_preset("quality-wireline")
    assert exp.window.window_n == 10 and exp.cr_target == 1.66
    start = time.perf_counter()
    row = sweep(SweepSpec(exp, "cr", (1.66,), 100_000))[0]
    elapsed = time.perf_counter() - start
    hist = row.clipped_hist
    counts = np.repeat(list(hist), list(hist.values()))
    mean_clipped, median_clipped = float(counts.mean()), float(np.median(counts))
    at_most_3 = float(np.mean(counts <= 3))
    ok = row.ber_declip < 1e-3 and median_clipped <= 3
    verdict(2, ok, f"declipped BER {row.ber_declip:.3g} (saturated {row.ber_sat:.3g}) over {row.trials} trials; "
                   f"clipped per 32: median {median_clipped:g}, mean {mean_clipped:.2f}, "
                   f"{at_most_3:.1%} of trials <= 3; {elapsed:.0f} s")
    assert median_clipped <= 3
    assert row.ber_declip < 1e-3


def test_wireless_quality(verdict):
    exp = get_preset("quality-wireless")
    assert exp.window.window_n == 10
    rows = sweep(SweepSpec(exp, "cr", (1.31, 1.5, 1.75, 2.0), 10_000))
    bad = [r for r in rows if not (r.ber_declip < 1e-3 and r.ber_declip <= 0.1 * r.ber_sat)]
    detail = "; ".join(f"CR {r.value}: sat {r.ber_sat:.3g} declip {r.ber_declip:.3g}" for r in rows)
    verdict(3, not bad, detail)
    for r in rows:
        assert r.ber_declip < 1e-3
        assert r.ber_declip <= 0.1 * r.ber_sat


def test_robustness(verdict):
    exp = get_preset("robustness")
    assert exp.cr_target == 1.31 and exp.window.window_n == 8
    rows = sweep(SweepSpec(exp, "snr_db", (10.0, 15.0, 20.0, 25.0, 30.0), 10_000))

    def within_factor_2(r):
        return r.ber_base / 2 <= r.ber_declip <= 2 * r.ber_base

    bad = [r for r in rows if not within_factor_2(r)]
    detail = "; ".join(f"{r.value:g} dB: declip {r.ber_declip:.3g} base {r.ber_base:.3g}" for r in rows)
    verdict(4, not bad, detail)
    assert not bad, f"outside factor 2 at SNR {[r.value for r in bad]}"


def test_exact_interpolation(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        # no narrower than the narrowest preset band (3pi/8)
        band = random_band(rng, 0.375)
        nodes = np.sort(rng.choice(128, n, replace=False)).astype(float)
        y = rng.standard_normal(n)
        fit = regress(SampleSet(nodes, y), band, 0.0)
        worst = max(worst, float(np.max(np.abs(interpolate(fit, nodes) - y)) / np.max(np.abs(y))))
    verdict(5, worst <= 1e-8, f"max relative node residual {worst:.2e} over 1000 trials")
    assert worst <= 1e-8


def test_minimum_norm_oracle(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        band = BandSpec(rng.uniform(0.0, 1.0), rng.uniform(1.8, math.pi))
        n = int(rng.integers(2, 13))
        nodes = np.sort(rng.choice(np.arange(80) / 4, n, replace=False))
        y = rng.standard_normal(n)
        extra = rng.uniform(-4, 24, int(rng.integers(1, 9)))
        ref, _ = min_norm_kkt(band.omega0, band.omega1, nodes, y, extra)
        got = fit_norm(regress(SampleSet(nodes, y), band, 0.0))
        worst = max(worst, abs(got - ref) / ref)
    verdict(6, worst <= 1e-6, f"max relative norm gap {worst:.2e} over 100 instances")
    assert worst <= 1e-6


def test_kernel_correctness(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        band = random_band(rng)
        t = rng.uniform(-64, 64)
        worst = max(worst, abs(kernel_value(band, t) - quad_phi(band.omega0, band.omega1, t)))
    failures = 0
    for _ in range(1000):
        band = random_band(rng)
        nodes = rng.choice(128, int(rng.integers(1, 33)), replace=False).astype(float)
        try:
            cholesky(gram_matrix(band, nodes))
        except ArithmeticError:
            failures += 1
    ok = worst <= 1e-9 and failures == 0
    verdict(7, ok, f"max |closed form - quadrature| {worst:.2e}; {failures}/1000 Cholesky failures")
    assert worst <= 1e-9
    assert failures == 0


def test_distributional_substitutes(ideal_run, verdict):
    results, _ = ideal_run
    mean_sat = float(np.mean([r.ber_saturated for r in results]))
    link = [run_trial(get_preset("wireline-link"), trial_seed(0, 0, i)) for i in range(1000)]
    clipped = [r for r in results + link if r.n_clipped]
    papr_bad = [r for r in clipped if not r.papr_original > r.papr_saturated]

    exp = get_preset("wireline-link")
    cfg, fs = exp.ofdm, exp.sample_rate
    resp = synthetic_insertion_loss(11.0, max(cfg.active_carriers) * fs / cfg.n_taps, fs / 2)
    top = max(cfg.active_carriers)
    rng = np.random.default_rng(8)
    gap, top_db = 0.0, []
    for _ in range(100):
        frame = random_frame(rng, cfg)
        body = apply_channel(modulate(frame, cfg)[cfg.cp_len:], resp, fs)
        rx = np.concatenate([body[-cfg.cp_len:], body])
        got = demodulate(rx, cfg)
        top_db.append(20 * math.log10(abs(got.spectrum[top]) / abs(frame.spectrum[top])))
        eq = equalize(got, resp, cfg, fs)
        gap = max(gap, float(np.max(np.abs(eq.data_symbols(cfg) - frame.data_symbols(cfg)))))
    loss_err = max(abs(v + 11.0) for v in top_db)

    ok = mean_sat > 0.05 and not papr_bad and gap <= 1e-8 and loss_err <= 1e-9
    verdict(8, ok, f"mean saturated BER {mean_sat:.3f}; PAPR drop on {len(clipped) - len(papr_bad)}/{len(clipped)} "
                   f"clipped trials; top-carrier loss error {loss_err:.1e} dB; equalizer gap {gap:.1e}")
    assert mean_sat > 0.05
    assert not papr_bad
    assert loss_err <= 1e-9
    assert gap <= 1e-8


def test_complexity_trend(verdict):
    rng = np.random.default_rng(9)
    band = BandSpec.lowpass(math.pi / 2)
    medians = {}
    for n in (8, 16, 32, 64):
        samples = [SampleSet(np.sort(rng.choice(4 * n, n, replace=False)).astype(float), rng.standard_normal(n))
                   for _ in range(500)]
        regress(samples[0], band)
        times = []
        for s in samples:
            t0 = time.perf_counter()
            regress(s, band)
            times.append(time.perf_counter() - t0)
        medians[n] = float(np.median(times))
    ns = sorted(medians)
    increasing = all(medians[a] < medians[b] for a, b in zip(ns, ns[1:]))
    ratios = [medians[b] / medians[a] for a, b in zip(ns, ns[1:])]
    detail = ", ".join(f"N={n}: {medians[n] * 1e6:.0f} us" for n in ns)
    detail += "; doubling ratios " + ", ".join(f"{r:.2f}" for r in ratios)
    if not all(r >= 3 for r in ratios):
        warnings.warn(f"per-window time grows slower than N^1.58 at this size ({detail})")
        detail += " (ratio >= 3 not met: warning only)"
    verdict(9, increasing, detail)
    assert increasing
