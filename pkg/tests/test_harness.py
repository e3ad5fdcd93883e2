import csv
import json
import math

import numpy as np
import pytest

from bandrecon import harness
from bandrecon.harness import (
    PRESETS,
    SweepRow,
    SweepSpec,
    ber,
    emit_artifacts,
    get_preset,
    run_trial,
    sweep,
    trial_seed,
    wilson_interval,
)
from oracles import wilson


class TestBer:
    def test_identical(self):
        assert ber([0, 1, 1, 0], [0, 1, 1, 0]) == 0.0

    def test_complement(self):
        a = np.array([0, 1, 1, 0, 1])
        assert ber(a, 1 - a) == 1.0

    def test_one_flip(self):
        assert ber([0] * 8, [0] * 7 + [1]) == 0.125

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ber([0, 1], [0])

    def test_empty(self):
        with pytest.raises(ValueError):
            ber([], [])


class TestSeeds:
    def test_documented_derivation(self):
        ref = int(np.random.SeedSequence([7, 2, 5]).generate_state(1, np.uint64)[0])
        assert trial_seed(7, 2, 5) == ref

    def test_distinct(self):
        seeds = {trial_seed(0, j, i) for j in range(3) for i in range(200)}
        assert len(seeds) == 600


class TestPresets:
    def test_all_shipped(self):
        assert set(PRESETS) == {"ideal-case", "quality-wireline", "quality-wireless", "robustness", "wireline-link"}

    def test_unknown_lists_names(self):
        with pytest.raises(KeyError, match="ideal-case"):
            get_preset("nope")

    def test_ideal_case(self):
        e = get_preset("ideal-case")
        assert (e.ofdm.n_taps, len(e.ofdm.active_carriers), e.ofdm.qam_order) == (32, 16, 64)
        assert e.window.window_n == 8 and e.window.epsilon == 0.0 and math.isinf(e.snr_db)

    def test_robustness(self):
        e = get_preset("robustness")
        assert e.cr_target == 1.31 and e.window.window_n == 8

    def test_wireline_link(self):
        e = get_preset("wireline-link")
        assert e.ofdm.active_carriers == tuple(range(7)) and not e.ofdm.dc_zeroed
        assert e.ofdm.cp_len == 4 and e.adc_bits == 7 and e.sinad_db == 41.0 and e.loss_db == 11.0
        r = e.response()
        top = 6 * e.sample_rate / 32
        assert 20 * math.log10(abs(r.at(top))) == pytest.approx(-11.0, abs=1e-9)

    @pytest.mark.parametrize("name", list(PRESETS))
    def test_flat_round_trip(self, name):
        e = get_preset(name)
        assert harness.ExperimentConfig.from_flat(e.to_flat()) == e

    @pytest.mark.parametrize("name", list(PRESETS))
    def test_flat_round_trip_as_strings(self, name):
        e = get_preset(name)
        flat = {k: ("none" if v is None else ",".join(map(str, v)) if isinstance(v, list) else str(v))
                for k, v in e.to_flat().items()}
        assert harness.ExperimentConfig.from_flat(flat) == e


class TestRunTrial:
    @pytest.mark.parametrize("name", list(PRESETS))
    def test_deterministic(self, name):
        a = run_trial(get_preset(name), 123)
        b = run_trial(get_preset(name), 123)
        assert a == b
        assert harness.result_json(a) == harness.result_json(b)

    @pytest.mark.parametrize("name", list(PRESETS))
    def test_no_clipping_all_paths_agree(self, name):
        e = get_preset(name).replace(cr_target=10.0)
        for i in range(20):
            r = run_trial(e, trial_seed(1, 0, i))
            assert r.n_clipped == 0
            assert r.errors_saturated == r.errors_declipped == r.errors_baseline

    def test_disabled_clipping(self):
        r = run_trial(get_preset("robustness").replace(cr_target=None), 5)
        assert r.gamma is None and r.achieved_cr is None and r.n_clipped == 0
        assert r.errors_saturated == r.errors_declipped == r.errors_baseline

    def test_ideal_case_recovers_isolated_trace(self):
        r = run_trial(get_preset("ideal-case"), trial_seed(0, 0, 12))
        assert r.clipped_per_channel[0] == 5
        assert r.ber_saturated > 0.05 and r.ber_declipped == 0.0

    @pytest.mark.parametrize("name", list(PRESETS))
    def test_invariants(self, name):
        e = get_preset(name)
        for i in range(30):
            r = run_trial(e, trial_seed(2, 0, i))
            for b in (r.ber_saturated, r.ber_declipped, r.ber_baseline):
                assert 0.0 <= b <= 1.0
            assert r.n_bits == e.ofdm.bits_per_frame
            assert r.n_clipped == sum(r.clipped_per_channel) >= 0
            assert r.n_estimated + r.n_skipped <= r.n_clipped
            if math.isinf(e.snr_db) and e.adc_bits is None:
                # clipping only lowers RMS; receiver noise can raise it
                assert r.achieved_cr >= e.cr_target * (1 - 1e-12)
            if r.n_clipped:
                assert r.papr_original > r.papr_saturated

    def test_dense_saturation_is_recorded(self):
        e = get_preset("ideal-case").replace(cr_target=0.05)
        r = run_trial(e, 1)
        assert r.declip_failed
        assert r.errors_declipped == r.errors_saturated

    def test_traces(self):
        e = get_preset("wireline-link")
        r = run_trial(e, 3, keep_traces=True)
        t = r.traces
        assert len(t["original"]) == 1 and t["original"][0].size == 36
        assert t["locations"][0] == -4.0
        assert len(t["rx_symbols"]) == 3
        assert run_trial(e, 3).traces is None

    def test_adc_requires_clipping_level(self):
        with pytest.raises(ValueError):
            run_trial(get_preset("wireline-link").replace(cr_target=None), 0)

    def test_measured_channel_csv(self, tmp_path):
        e = get_preset("wireline-link")
        from bandrecon.channel import write_response_csv
        p = tmp_path / "ch.csv"
        write_response_csv(p, e.response())
        e2 = e.replace(loss_db=None, channel_csv=str(p))
        a, b = run_trial(e, 9), run_trial(e2, 9)
        assert (a.errors_declipped, a.gamma) == (b.errors_declipped, pytest.approx(b.gamma, rel=1e-12))


class TestWilson:
    @pytest.mark.parametrize("k, n", [(0, 10), (3, 100), (50, 100), (100, 100), (7, 100000)])
    def test_matches_reference(self, k, n):
        assert wilson_interval(k, n) == pytest.approx(wilson(k, n), abs=1e-15)

    def test_contains_estimate(self):
        lo, hi = wilson_interval(13, 1000)
        assert lo < 0.013 < hi


class TestSweep:
    def exp(self):
        return get_preset("robustness")

    def test_spec_validation(self):
        e = self.exp()
        for bad in [dict(axis="qam", values=(1,)), dict(axis="cr", values=()),
                    dict(axis="cr", values=(1.0, 1.0)), dict(axis="cr", values=(math.inf,)),
                    dict(axis="window_n", values=(2.5,)), dict(axis="cr", values=(1,), trials=0)]:
            kw = dict(trials=1) | bad
            with pytest.raises(ValueError):
                SweepSpec(e, **kw)

    def test_single_trial_rows_equal_trials(self):
        e = self.exp()
        spec = SweepSpec(e, "snr_db", (15.0, 25.0), 1, base_seed=4)
        rows = sweep(spec)
        for j, row in enumerate(rows):
            r = run_trial(e.with_axis("snr_db", row.value), trial_seed(4, j, 0))
            assert row.trials == 1
            assert row.ber_sat == r.ber_saturated
            assert row.ber_declip == r.ber_declipped
            assert row.ber_base == r.ber_baseline
            assert row.mean_achieved_cr == r.achieved_cr

    def test_split_runs_merge(self):
        e = self.exp()
        whole = sweep(SweepSpec(e, "cr", (1.2, 1.5), 60, base_seed=9))
        a = sweep(SweepSpec(e, "cr", (1.2, 1.5), 25, base_seed=9))
        b = sweep(SweepSpec(e, "cr", (1.2, 1.5), 35, base_seed=9, first_trial=25))
        for w, x, y in zip(whole, a, b):
            m = x.merge(y)
            assert m.csv_fields() == w.csv_fields()
            assert m.clipped_hist == w.clipped_hist
            assert m.mean_achieved_cr == w.mean_achieved_cr

    def test_workers_do_not_change_output(self):
        spec = SweepSpec(self.exp(), "window_n", (6, 8), 40, base_seed=2)
        serial = sweep(spec, workers=1)
        parallel = sweep(spec, workers=2)
        assert [r.csv_fields() for r in serial] == [r.csv_fields() for r in parallel]

    def test_rows_reported_incrementally(self):
        seen = []
        sweep(SweepSpec(self.exp(), "cr", (1.3, 1.6, 2.0), 5), on_row=lambda r: seen.append(r.value))
        assert seen == [1.3, 1.6, 2.0]

    def test_keep_results(self):
        rows, results = sweep(SweepSpec(self.exp(), "cr", (1.3,), 4), keep_results=True)
        assert len(results[0]) == 4
        assert sum(r.errors_declipped for r in results[0]) == rows[0].errors_declipped

    def test_baseline_monotone_in_snr(self):
        rows = sweep(SweepSpec(self.exp(), "snr_db", (5, 10, 15, 20, 25, 30), 300))
        base = [r.ber_base for r in rows]
        assert all(b <= a for a, b in zip(base, base[1:]))

    def test_merge_rejects_other_points(self):
        with pytest.raises(ValueError):
            SweepRow("cr", 1.0).merge(SweepRow("cr", 2.0))


class TestEmitArtifacts:
    def test_files_and_schema(self, tmp_path):
        r = run_trial(get_preset("ideal-case"), 7, keep_traces=True)
        paths = emit_artifacts([r], tmp_path)
        names = sorted(p.name for p in paths)
        assert names == ["constellation.csv", "results.csv", "results.jsonl", "trace.csv"]
        lines = (tmp_path / "results.jsonl").read_text().splitlines()
        assert len(lines) == 1
        rec = json.loads(lines[0])
        for key in ("seed", "config", "n_bits", "ber_saturated", "ber_declipped", "ber_baseline",
                    "achieved_cr", "papr_original", "papr_saturated", "n_clipped", "n_skipped", "declip_failed"):
            assert key in rec
        with open(tmp_path / "constellation.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 16
        with open(tmp_path / "trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 2 * 32

    def test_header_only_without_traces(self, tmp_path):
        r = run_trial(get_preset("ideal-case"), 7)
        emit_artifacts([r], tmp_path)
        assert len((tmp_path / "constellation.csv").read_text().splitlines()) == 1
        assert len((tmp_path / "trace.csv").read_text().splitlines()) == 1

    def test_byte_identical_reruns(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            r = run_trial(get_preset("wireline-link"), 11, keep_traces=True)
            emit_artifacts([r], tmp_path / sub)
            outs.append({p.name: p.read_bytes() for p in (tmp_path / sub).iterdir()})
        assert outs[0] == outs[1]

    def test_summary_with_rows(self, tmp_path):
        rows = sweep(SweepSpec(get_preset("robustness"), "cr", (1.3,), 3))
        emit_artifacts([], tmp_path, rows=rows)
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0] == "axis,value,trials,ber_sat,ber_declip,ber_base,ci_lo,ci_hi"
        assert len(lines) == 2

    def test_nothing_to_emit(self, tmp_path):
        with pytest.raises(ValueError):
            emit_artifacts([], tmp_path)
