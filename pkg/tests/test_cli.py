import csv
import json

import numpy as np
import pytest

from crossed_lmm.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    # intercept-only records whose OLS residuals reproduce the worked
    # three-record case (centered statistics are shift invariant)
    path.write_text("row_id,col_id,y\nr1,c1,1.0\nr1,c2,3.0\nr2,c1,5.0\n")
    return str(path)


class TestFitCommand:
    def test_toy_fit_json(self, tmp_path, capsys):
        out_path = tmp_path / "fit.json"
        code, _, err = run(
            capsys, "fit", "--input", toy_csv(tmp_path), "--output", str(out_path)
        )
        # eps_r = 2/3 > 1/2 flags a degenerate design: exit 2, not failure
        assert code == 2
        assert "degenerate" in err
        payload = json.loads(out_path.read_text())
        assert payload["profile"]["n"] == 3
        assert payload["profile"]["r"] == 2
        assert payload["profile"]["c"] == 2
        assert payload["sigma2"]["raw_a"] == pytest.approx(0.0, abs=1e-12)
        assert payload["sigma2"]["raw_b"] == pytest.approx(-6.0, abs=1e-12)
        assert payload["sigma2"]["raw_e"] == pytest.approx(8.0, abs=1e-12)
        assert payload["sigma2"]["a"] == 0.0 and payload["sigma2"]["b"] == 0.0

    def test_json_round_trip_idempotent(self, tmp_path, capsys):
        out_path = tmp_path / "fit.json"
        run(capsys, "fit", "--input", toy_csv(tmp_path), "--output", str(out_path))
        text = out_path.read_text()
        parsed = json.loads(text)
        assert json.dumps(parsed, indent=2) + "\n" == text

    def test_missing_file_exit_1(self, tmp_path, capsys):
        code, _, err = run(capsys, "fit", "--input", str(tmp_path / "missing.csv"))
        assert code == 1
        assert "missing.csv" in err

    def test_corrupt_field_reports_line(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("row_id,col_id,y\nr1,c1,1.0\nr2,c1,zap\n")
        code, _, err = run(capsys, "fit", "--input", str(path))
        assert code == 1
        assert "line 3" in err

    def test_noiseless_linear_file(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        path = tmp_path / "lin.csv"
        with open(path, "w") as fh:
            fh.write("row_id,col_id,y,x1\n")
            for k in range(40):
                x1 = rng.normal()
                fh.write(f"r{k % 6},c{k % 5},{3.0 + 2.0 * x1!r},{x1!r}\n")
        out_path = tmp_path / "fit.json"
        code, _, _ = run(capsys, "fit", "--input", str(path), "--output", str(out_path))
        assert code == 0
        payload = json.loads(out_path.read_text())
        np.testing.assert_allclose(payload["beta"], [3.0, 2.0], atol=1e-10)

    def test_both_compare_note_is_not_exit_2(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        path = tmp_path / "lin.csv"
        with open(path, "w") as fh:
            fh.write("row_id,col_id,y,x1\n")
            for k in range(60):
                x1 = rng.normal()
                fh.write(f"r{k % 8},c{k % 7},{rng.normal()!r},{x1!r}\n")
        code, _, err = run(capsys, "fit", "--input", str(path),
                           "--mode", "both-compare")
        assert code == 0
        assert "both-compare" in err

    def test_short_record_reports_missing_field(self, tmp_path, capsys):
        path = tmp_path / "short.csv"
        path.write_text("row_id,col_id,y,x1\nr1,c1,1.0,0.5\nr2,c2\n")
        code, _, err = run(capsys, "fit", "--input", str(path))
        assert code == 1
        assert "line 3" in err and "missing field" in err

    def test_dedup_keep_last(self, tmp_path, capsys):
        path = tmp_path / "dup.csv"
        path.write_text(
            "row_id,col_id,y\nr1,c1,1.0\nr1,c2,2.0\nr2,c1,4.0\nr1,c1,9.0\n"
        )
        out_path = tmp_path / "fit.json"
        code, _, _ = run(capsys, "fit", "--input", str(path), "--output",
                         str(out_path), "--dedup", "keep-last")
        payload = json.loads(out_path.read_text())
        assert payload["profile"]["n"] == 3
        assert code in (0, 2)

    def test_dedup_error_policy(self, tmp_path, capsys):
        path = tmp_path / "dup.csv"
        path.write_text("row_id,col_id,y\nr1,c1,1.0\nr1,c1,9.0\n")
        code, _, err = run(capsys, "fit", "--input", str(path), "--dedup", "error")
        assert code == 1
        assert "repeated" in err

    def test_shard_flags_agree(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        path = tmp_path / "data.csv"
        with open(path, "w") as fh:
            fh.write("row_id,col_id,y,x1\n")
            for k in range(200):
                fh.write(
                    f"r{rng.integers(12)},c{rng.integers(12)},{rng.normal()!r},{rng.normal()!r}\n"
                )
        out1, out8 = tmp_path / "s1.json", tmp_path / "s8.json"
        run(capsys, "fit", "--input", str(path), "--output", str(out1), "--shards", "1")
        run(capsys, "fit", "--input", str(path), "--output", str(out8), "--shards", "8")
        p1 = json.loads(out1.read_text())
        p8 = json.loads(out8.read_text())
        np.testing.assert_allclose(p8["beta"], p1["beta"], rtol=1e-9)
        np.testing.assert_allclose(p8["se"], p1["se"], rtol=1e-9)


class TestSimulateStudyBench:
    def test_simulate_then_fit_roundtrip(self, tmp_path, capsys):
        data = tmp_path / "sim.csv"
        code, _, _ = run(
            capsys, "simulate", "--rows", "30", "--cols", "30", "--fill-count", "400",
            "--p", "2", "--beta", "1.5,-0.5,2.0", "--vc", "0,0,0.0001",
            "--seed", "9", "--output", str(data),
        )
        assert code == 0
        out = tmp_path / "fit.json"
        code, _, _ = run(capsys, "fit", "--input", str(data), "--output", str(out))
        assert code == 0
        payload = json.loads(out.read_text())
        np.testing.assert_allclose(payload["beta"], [1.5, -0.5, 2.0], atol=0.01)

    def test_study_csv_shape_and_slopes(self, tmp_path, capsys):
        out = tmp_path / "study.csv"
        code, stdout, _ = run(
            capsys, "study", "--grid", "100,400", "--reps", "3", "--p", "1",
            "--seed", "2", "--output", str(out),
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        # header + 2 grid cells x (p + 4) params
        assert len(rows) == 1 + 2 * (1 + 4)
        assert "slope" in stdout

    def test_single_cell_study(self, tmp_path, capsys):
        out = tmp_path / "study.csv"
        code, stdout, _ = run(
            capsys, "study", "--grid", "100", "--reps", "2", "--p", "0",
            "--output", str(out),
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 4
        assert "slope" not in stdout  # single size: no slope fit

    def test_bench_single_size(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code, stdout, _ = run(
            capsys, "bench", "--sizes", "400", "--p", "1", "--output", str(out)
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["N", "secs"]
        assert len(rows) == 2
        assert "slope" not in stdout

    def test_bench_reports_slope(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code, stdout, _ = run(
            capsys, "bench", "--sizes", "400,1600", "--p", "1",
            "--output", str(out), "--track-memory",
        )
        assert code == 0
        assert "slope time" in stdout
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["N", "secs", "peak_fit_bytes"]
        assert int(rows[1][2]) > 0

    def test_bench_estimates_deterministic(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        run(capsys, "bench", "--sizes", "400", "--seed", "3", "--output", str(out))
        first = list(csv.reader(open(out)))[1][0]
        run(capsys, "bench", "--sizes", "400", "--seed", "3", "--output", str(out))
        second = list(csv.reader(open(out)))[1][0]
        assert first == second  # same N; timings may differ but sizes agree


class TestVerifyCommand:
    def test_well_formed_file(self, tmp_path, capsys):
        data = tmp_path / "sim.csv"
        run(
            capsys, "simulate", "--rows", "25", "--cols", "20", "--fill-count",
            "140", "--p", "2", "--vc", "1,0.5,1", "--seed", "4",
            "--output", str(data),
        )
        code, stdout, _ = run(capsys, "verify", "--input", str(data))
        assert code == 0
        assert "max relative discrepancy" in stdout

    def test_corrupted_file(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("row_id,col_id,y\nr1,c1,1.0\nr1,c2,bogus\n")
        code, _, err = run(capsys, "verify", "--input", str(path))
        assert code == 1
        assert "line 3" in err

    def test_oversized_input_downsamples(self, tmp_path, capsys):
        data = tmp_path / "big.csv"
        run(
            capsys, "simulate", "--rows", "60", "--cols", "60", "--fill-count",
            "2000", "--p", "1", "--vc", "1,0.5,1", "--seed", "5",
            "--output", str(data),
        )
        code, stdout, err = run(
            capsys, "verify", "--input", str(data), "--max-n", "300", "--seed", "1"
        )
        assert code == 0
        assert "max relative discrepancy" in stdout


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_thread_env_var_overrides_shard_default(monkeypatch):
    from crossed_lmm.cli import _default_shards

    monkeypatch.setenv("CROSSED_LMM_THREADS", "3")
    assert _default_shards() == 3
    monkeypatch.delenv("CROSSED_LMM_THREADS")
    assert _default_shards() >= 1
