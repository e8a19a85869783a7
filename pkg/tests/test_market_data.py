"""Tape ingestion, the three calibrators, and the generate-then-recover
round trip."""

import json

import numpy as np
import pytest

from optliq import (CalibrationError, DataError, ModelParams, ParameterError,
                    TapeFormat, TradeTape, calibrate_gamma,
                    calibrate_intensity, calibrate_sigma, calibrate_tape,
                    load_tape, quote_surface, solve_grid, synthetic_tape)

HEADER = "ts,price,size,bid,ask\n"


def write_tape(tmp_path, rows, name="tape.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "".join(rows))
    return path


GOOD_ROWS = [
    "1.0,100.6,120,99.5,100.5\n",
    "2.5,100.7,80,99.6,100.6\n",
    "4.0,99.4,100,99.4,100.4\n",
]


class TestLoadTape:
    def test_three_row_fixture(self, tmp_path):
        tape = load_tape(write_tape(tmp_path, GOOD_ROWS))
        assert len(tape) == 3
        assert tape.ats == pytest.approx ((120 + 80 + 100) / 3)
        assert tape[1].price == 100.7
        assert tape[2].best_ask == 100.4

    def test_tick_size_conversion(self, tmp_path):
        path = write_tape(tmp_path, GOOD_ROWS)
        half = load_tape(path, TapeFormat(tick_size=0.5))
        assert half[0].price == pytest.approx(201.2)
        assert half[0].best_bid == pytest.approx(199.0)

    def test_empty_file_rejected(self, tmp_path):
        with pytest.raises(DataError, match="no data rows"):
            load_tape(write_tape(tmp_path, []))
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(DataError):
            load_tape(empty)

    def test_malformed_row_names_line(self, tmp_path):
        rows = GOOD_ROWS[:1] + ["2.5,abc,80,99.6,100.6\n"] + GOOD_ROWS[2:]
        with pytest.raises(DataError, match="line 3"):
            load_tape(write_tape(tmp_path, rows))

    def test_crossed_quote_names_record(self, tmp_path):
        rows = GOOD_ROWS[:2] + ["4.0,99.4,100,100.4,99.4\n"]
        with pytest.raises(DataError, match="bid >= ask at record 2"):
            load_tape(write_tape(tmp_path, rows))

    def test_unsorted_timestamps_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not sorted"):
            load_tape(write_tape(tmp_path, [GOOD_ROWS[1], GOOD_ROWS[0]]))

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("ts,price,size\n1.0,100.0,10\n")
        with pytest.raises(DataError, match="missing columns"):
            load_tape(path)

    def test_write_csv_round_trip(self, tmp_path):
        tape = synthetic_tape(600.0, sigma=0.2, big_a=0.2, k=0.3, seed=5,
                              tick_size=0.5)
        path = tmp_path / "rt.csv"
        tape.write_csv(path)
        back = load_tape(path, TapeFormat(tick_size=0.5))
        assert np.array_equal(back.ts, tape.ts)
        assert np.array_equal(back.price, tape.price)
        assert np.array_equal(back.bid, tape.bid)


class TestCalibrateSigma:
    def test_constant_mid_gives_zero(self, tmp_path):
        rows = [f"{t},100.4,50,99.5,100.5\n" for t in range(0, 400, 2)]
        tape = load_tape(write_tape(tmp_path, rows))
        assert calibrate_sigma(tape, 1.0) == 0.0

    def test_recovers_generator_volatility(self):
        tape = synthetic_tape(36_000.0, sigma=0.3, big_a=0.1, k=0.3, seed=7)
        assert 0.27 <= calibrate_sigma(tape, 1.0) <= 0.33

    def test_tick_rescaling_halves_estimate(self, tmp_path):
        tape = synthetic_tape(3600.0, sigma=0.3, big_a=0.2, k=0.3, seed=11)
        path = tmp_path / "scale.csv"
        tape.write_csv(path)
        one = calibrate_sigma(load_tape(path), 1.0)
        two = calibrate_sigma(load_tape(path, TapeFormat(tick_size=2.0)), 1.0)
        assert two == pytest.approx(one / 2, rel=1e-12)

    def test_short_span_rejected(self, tmp_path):
        tape = load_tape(write_tape(tmp_path, GOOD_ROWS))
        with pytest.raises(CalibrationError, match="span"):
            calibrate_sigma(tape, 1.0)


class TestCalibrateIntensity:
    def test_recovers_generator_law(self):
        tape = synthetic_tape(36_000.0, sigma=0.3, big_a=0.1, k=0.3, seed=13)
        fits, dropped = calibrate_intensity(tape)
        assert not dropped
        (fit,) = fits.values()
        assert 0.08 <= fit.a_hat <= 0.12
        assert 0.25 <= fit.k_hat <= 0.35

    def test_flat_rates_flagged_unusable(self):
        # every print lands far above the whole offset grid, so all counts
        # coincide and the decay estimate collapses to zero
        n = 200
        ts = np.linspace(0, 2000, n)
        mid = np.full(n, 500.0)
        tape = TradeTape(ts=ts, price=mid + 10.0, size=np.full(n, 100.0),
                         bid=mid - 0.5, ask=mid + 0.5)
        fits, dropped = calibrate_intensity(tape)
        assert fits == {}
        assert "non-positive decay" in dropped[1]

    def test_single_spread_gives_single_bucket(self):
        tape = synthetic_tape(10_000.0, sigma=0.1, big_a=0.2, k=0.3, seed=3,
                              spread_schedule=2.0)
        fits, _ = calibrate_intensity(tape)
        assert list(fits) == [2]

    def test_buckets_partition_the_tape(self):
        tape = synthetic_tape(
            20_000.0, sigma=0.1, big_a=0.3, k=0.3, seed=9,
            spread_schedule=[(0.0, 1.0), (5000.0, 2.0), (10_000.0, 1.0),
                             (15_000.0, 3.0)])
        fits, dropped = calibrate_intensity(tape, n_min=10)
        n_assigned = (sum(f.n_obs for f in fits.values())
                      + sum(int(r.split()[1]) for r in dropped.values()
                            if r.startswith("only") and "prints <" in r))
        assert set(fits) | set(dropped) == {1, 2, 3}
        assert n_assigned == len(tape)

    def test_window_selects_recent_records(self):
        tape = synthetic_tape(
            20_000.0, sigma=0.1, big_a=0.2, k=0.3, seed=4,
            spread_schedule=[(0.0, 1.0), (10_000.0, 2.0)])
        fits, _ = calibrate_intensity(tape, window=5000.0)
        assert list(fits) == [2]  # the early spread-1 regime is out of window

    def test_guards(self):
        tape = synthetic_tape(1000.0, sigma=0.1, big_a=0.2, k=0.3, seed=2)
        with pytest.raises(ParameterError):
            calibrate_intensity(tape, distance_grid=[0.5, 1.0])
        with pytest.raises(ParameterError):
            calibrate_intensity(tape, distance_grid=[-1.0, 0.5, 1.0])


class TestCalibrateGamma:
    def test_recovers_reference_risk_aversion(self, ref_params):
        gamma = calibrate_gamma(0.1, 0.3, 0.3, 0.0, 3.0, 300.0,
                                target_quote=10.6095)
        assert gamma == pytest.approx(0.05, abs=1e-3)

    def test_first_quote_decreasing_in_gamma(self):
        quotes = []
        for gamma in (1e-4, 0.01, 0.05, 0.5, 5.0):
            p = ModelParams(gamma=gamma, q_max=1)
            surface = quote_surface(solve_grid(p, 2000))
            quotes.append(surface.quote(0, 1))
        assert np.all(np.diff(quotes) < 0)

    def test_unattainable_target_reports_interval(self):
        with pytest.raises(CalibrationError, match="attainable"):
            calibrate_gamma(0.1, 0.3, 0.3, 0.0, 3.0, 300.0, target_quote=50.0)

    def test_deterministic(self):
        args = (0.1, 0.3, 0.3, 0.0, 3.0, 300.0)
        assert calibrate_gamma(*args) == calibrate_gamma(*args)


class TestRoundTrip:
    def test_generate_then_recover_all_parameters(self):
        # ten simulated hours with the reference market law
        tape = synthetic_tape(36_000.0, sigma=0.3, big_a=0.1, k=0.3, seed=101)
        result = calibrate_tape(tape, sampling_dt=1.0, gamma_target=1.0)
        assert abs(result.sigma_hat - 0.3) <= 0.03
        (fit,) = result.buckets.values()
        assert abs(fit.a_hat - 0.1) <= 0.02
        assert abs(fit.k_hat - 0.3) <= 0.06
        assert result.gamma_hat is not None and result.gamma_hat > 0

    def test_json_serialisation(self, tmp_path):
        tape = synthetic_tape(36_000.0, sigma=0.3, big_a=0.1, k=0.3, seed=101)
        result = calibrate_tape(tape, gamma_target=1.0)
        path = tmp_path / "calib.json"
        result.to_json(path)
        data = json.loads(path.read_text())
        assert set(data) == {"sigma_hat", "gamma_hat", "buckets", "dropped"}
        bucket = next(iter(data["buckets"].values()))
        assert set(bucket) == {"A_hat", "k_hat", "n_obs"}
