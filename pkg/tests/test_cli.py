import json

import numpy as np
import pytest

from structcal import cli
from structcal.calibrators import CalibratorParams, apply, fit
from structcal.cli import main, read_predictions, write_predictions
from structcal.exceptions import NonFiniteError
from structcal.metrics import evaluate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def synth_dir(tmp_path, capsys, preset="multiclass-equal-cov", seed=0, **sizes):
    out = tmp_path / f"{preset}-{seed}"
    args = ["synth", "--preset", preset, "--out-dir", out, "--seed", seed, "--n-mc", 10_000]
    for key, val in {"n_train": 50, "n_cal": 300, "n_test": 500, **sizes}.items():
        args += [f"--{key.replace('_', '-')}", val]
    code, _, err = run(capsys, *args)
    assert code == 0, err
    return out


@pytest.fixture
def data(tmp_path, capsys):
    return synth_dir(tmp_path, capsys)


class TestFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(3), size=10)
        y = rng.integers(0, 3, 10)
        write_predictions(tmp_path / "a.csv", p, y)
        back = read_predictions(tmp_path / "a.csv")
        np.testing.assert_array_equal(back["p"], p)
        np.testing.assert_array_equal(back["y"], y)

    def test_logit_columns(self, tmp_path, capsys):
        (tmp_path / "z.csv").write_text("z_0,z_1,y\n0,0,0\n1.0986122886681098,-1.0986122886681098,1\n")
        code, out, _ = run(capsys, "eval", tmp_path / "z.csv", "--metric", "logloss")
        assert code == 0
        assert json.loads(out)["logloss"] == pytest.approx((np.log(2) - np.log(0.1)) / 2)

    def test_bad_files(self, tmp_path, capsys):
        (tmp_path / "mixed.csv").write_text("p_0,z_1\n0.5,0.5\n")
        (tmp_path / "gap.csv").write_text("p_0,p_2\n0.5,0.5\n")
        (tmp_path / "label.csv").write_text("p_0,p_1,y\n0.5,0.5,2\n")
        for name in ("mixed.csv", "gap.csv", "label.csv", "missing.csv"):
            code, _, err = run(capsys, "eval", tmp_path / name)
            assert code == 2 and err.startswith("structcal: error")


class TestFit:
    def test_defaults_recorded(self, data, capsys):
        code, out, _ = run(capsys, "fit", data / "cal.csv")
        assert code == 0
        pen = json.loads(out)["fit_options"]["penalty"]
        assert (pen["rho"], pen["tau"]) == (1.0, 1.0)
        assert pen["lambda_b"] == pen["lambda_v"] == pen["lambda_M"] == 1.0

    def test_binary_on_three_classes(self, data, capsys):
        code, _, err = run(capsys, "fit", data / "cal.csv", "--method", "binary-quadratic")
        assert code == 2 and "binary method requires k=2" in err

    def test_huge_off_diagonal(self, data, tmp_path, capsys):
        code, out, _ = run(capsys, "fit", data / "cal.csv", "--penalty", "lasso",
                           "--lambda-off-diagonal", "1e8")
        assert code == 0
        M = np.array(json.loads(out)["M"])
        np.testing.assert_array_equal(M, 0.0)
        # ridge shrinks multiplicatively: numerically zero, not exactly zero
        code, out, _ = run(capsys, "fit", data / "cal.csv", "--lambda-off-diagonal", "1e8")
        assert np.abs(np.array(json.loads(out)["M"])).max() < 1e-6

    def test_missing_labels(self, tmp_path, capsys):
        (tmp_path / "nolab.csv").write_text("p_0,p_1\n0.5,0.5\n")
        code, _, err = run(capsys, "fit", tmp_path / "nolab.csv")
        assert code == 2 and "labels" in err

    def test_numeric_failure(self, data, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise NonFiniteError("diverged")

        monkeypatch.setattr(cli, "fit", boom)
        code, _, err = run(capsys, "fit", data / "cal.csv")
        assert code == 3 and "diverged" in err

    def test_bad_flag(self, data, capsys):
        code, _, _ = run(capsys, "fit", data / "cal.csv", "--method", "isotonic")
        assert code == 2

    def test_help(self, capsys):
        code, out, _ = run(capsys, "fit", "--help")
        assert code == 0 and "--lambda-off-diagonal" in out


class TestApply:
    def test_identity(self, data, tmp_path, capsys):
        params = tmp_path / "id.json"
        params.write_text(CalibratorParams("ts", k=3, alpha=1.0).to_json())
        assert run(capsys, "apply", params, data / "test.csv", tmp_path / "o1.csv")[0] == 0
        assert run(capsys, "apply", params, tmp_path / "o1.csv", tmp_path / "o2.csv")[0] == 0
        src = read_predictions(data / "test.csv")
        o1, o2 = read_predictions(tmp_path / "o1.csv"), read_predictions(tmp_path / "o2.csv")
        np.testing.assert_allclose(o1["p"], src["p"], atol=1e-9)
        np.testing.assert_array_equal(o1["y"], src["y"])
        np.testing.assert_allclose(o2["p"], o1["p"], atol=1e-12)

    def test_rowwise(self, data, tmp_path, capsys):
        run(capsys, "fit", data / "cal.csv", "-o", tmp_path / "sms.json")
        src = read_predictions(data / "test.csv")
        perm = np.random.default_rng(0).permutation(len(src["y"]))
        write_predictions(tmp_path / "shuffled.csv", src["p"][perm], src["y"][perm])
        run(capsys, "apply", tmp_path / "sms.json", data / "test.csv", tmp_path / "a.csv")
        run(capsys, "apply", tmp_path / "sms.json", tmp_path / "shuffled.csv", tmp_path / "b.csv")
        a, b = read_predictions(tmp_path / "a.csv"), read_predictions(tmp_path / "b.csv")
        np.testing.assert_array_equal(b["p"], a["p"][perm])

    def test_k_mismatch(self, data, tmp_path, capsys):
        params = tmp_path / "k4.json"
        params.write_text(CalibratorParams("ts", k=4, alpha=1.0).to_json())
        code, _, err = run(capsys, "apply", params, data / "test.csv", tmp_path / "o.csv")
        assert code == 2 and "k=4" in err


class TestEval:
    def test_uniform(self, tmp_path, capsys):
        write_predictions(tmp_path / "u.csv", np.full((8, 4), 0.25), np.arange(8) % 4)
        code, out, _ = run(capsys, "eval", tmp_path / "u.csv")
        rep = json.loads(out)
        assert code == 0 and rep["logloss"] == pytest.approx(np.log(4)) and rep["n"] == 8

    def test_one_hot(self, tmp_path, capsys):
        y = np.arange(6) % 3
        write_predictions(tmp_path / "h.csv", np.eye(3)[y], y)
        code, out, _ = run(capsys, "eval", tmp_path / "h.csv", "--metric", "brier")
        rep = json.loads(out)
        assert rep["brier"] == 0.0 and "logloss" not in rep

    def test_before_after(self, data, capsys):
        code, out, _ = run(capsys, "eval", "--before", data / "test.csv", "--after", data / "test.csv")
        rel = json.loads(out)["relative_improvement"]
        assert code == 0 and rel == {"brier": 0.0, "logloss": 0.0}

    def test_labels_file(self, tmp_path, capsys):
        write_predictions(tmp_path / "p.csv", np.full((4, 2), 0.5))
        (tmp_path / "y.csv").write_text("y\n0\n1\n1\n0\n")
        code, out, _ = run(capsys, "eval", tmp_path / "p.csv", "--labels", tmp_path / "y.csv")
        assert code == 0 and json.loads(out)["brier"] == pytest.approx(0.5)

    def test_missing_labels(self, tmp_path, capsys):
        write_predictions(tmp_path / "p.csv", np.full((4, 2), 0.5))
        assert run(capsys, "eval", tmp_path / "p.csv")[0] == 2


class TestSynth:
    def test_binary_oracle_numbers(self, tmp_path, capsys):
        out = synth_dir(tmp_path, capsys, "binary-unequal-variance")
        doc = json.loads((out / "oracle.json").read_text())
        c = doc["coefficients"]
        np.testing.assert_allclose([c["a"], c["b"], c["c"]], [-0.375, 1.25, 0.3181], atol=1e-4)
        assert doc["kind"] == "binary"
        assert len(read_predictions(out / "cal.csv")["y"]) == 300

    def test_equal_cov_flag(self, data):
        assert json.loads((data / "oracle.json").read_text())["quadratic_term_constant"] is True

    def test_byte_identical(self, tmp_path, capsys):
        a = synth_dir(tmp_path / "a", capsys, seed=3)
        b = synth_dir(tmp_path / "b", capsys, seed=3)
        for name in ("train.csv", "cal.csv", "test.csv", "oracle.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_spec_file(self, tmp_path, capsys):
        spec = {"priors": [0.5, 0.5], "means": [[0.0], [1.0]], "covariances": [[[1.0]], [[2.0]]],
                "weights": [1.0]}
        (tmp_path / "spec.json").write_text(json.dumps(spec))
        code, _, _ = run(capsys, "synth", tmp_path / "spec.json", "--out-dir", tmp_path / "o",
                         "--n-train", 10, "--n-cal", 10, "--n-test", 10, "--n-mc", 10_000)
        assert code == 0

    def test_invalid_spec(self, tmp_path, capsys):
        spec = {"priors": [0.7, 0.7], "means": [[0.0], [1.0]], "covariances": [[[1.0]], [[2.0]]],
                "weights": [1.0]}
        (tmp_path / "bad.json").write_text(json.dumps(spec))
        code, _, _ = run(capsys, "synth", tmp_path / "bad.json", "--out-dir", tmp_path / "o")
        assert code == 2


class TestSweep:
    def grid(self, tmp_path, obj):
        path = tmp_path / "grid.json"
        path.write_text(json.dumps(obj))
        return path

    def test_single_point(self, data, tmp_path, capsys):
        grid = self.grid(tmp_path, [{"method": "ts"}])
        code, out, _ = run(capsys, "sweep", data / "cal.csv", "--grid", grid, "--cal-frac", 0.5)
        recs = json.loads(out)["records"]
        assert code == 0 and len(recs) == 1 and recs[0]["rank"] == 1

    def test_cartesian_and_dedupe(self, data, tmp_path, capsys):
        grid = self.grid(tmp_path, {"axes": {"rho": [0.0, 1.0], "tau": [0.5, 1.0, 1.0]}, "configs": [{}]})
        code, out, _ = run(capsys, "sweep", data / "cal.csv", "--grid", grid, "--cal-frac", 0.5)
        recs = json.loads(out)["records"]
        assert len(recs) == 4
        objs = [r["objective"] for r in recs]
        assert objs == sorted(objs)

    def test_defaults_beat_unregularized_ms(self, tmp_path, capsys):
        d = synth_dir(tmp_path, capsys, "many-class-small-n", n_cal=200)
        grid = self.grid(tmp_path, [{}, {"method": "ms", "lambda_intercept": 0,
                                         "lambda_diagonal": 0, "lambda_off_diagonal": 0}])
        _, out, _ = run(capsys, "sweep", d / "cal.csv", "--grid", grid, "--cal-frac", 0.5)
        recs = json.loads(out)["records"]
        assert recs[0]["config"]["method"] == "sms" and recs[1]["config"]["method"] == "ms"

    def test_fewer_samples_than_classes(self, tmp_path, capsys):
        d = synth_dir(tmp_path, capsys, "many-class-small-n", n_cal=8)
        grid = self.grid(tmp_path, {"axes": {"method": ["ts", "svs", "sms", "vs", "ms"]}})
        _, out, _ = run(capsys, "sweep", d / "cal.csv", "--grid", grid, "--cal-frac", 0.5)
        recs = json.loads(out)["records"]
        assert len(recs) == 5 and all("error" not in r for r in recs)

    def test_split_column(self, data, tmp_path, capsys):
        src = read_predictions(data / "cal.csv")
        split = np.arange(len(src["y"])) % 2
        write_predictions(tmp_path / "s.csv", src["p"], src["y"], split)
        code, out, _ = run(capsys, "sweep", tmp_path / "s.csv", "--grid", self.grid(tmp_path, [{}]))
        doc = json.loads(out)
        assert code == 0 and doc["n_fit"] == doc["n_held_out"] == 150

    def test_errors(self, data, tmp_path, capsys):
        assert run(capsys, "sweep", data / "cal.csv", "--grid", self.grid(tmp_path, []),
                   "--cal-frac", 0.5)[0] == 2
        assert run(capsys, "sweep", data / "cal.csv", "--grid", self.grid(tmp_path, {"axes": {"rho": []}}),
                   "--cal-frac", 0.5)[0] == 2
        # no split column and no --cal-frac
        assert run(capsys, "sweep", data / "cal.csv", "--grid", self.grid(tmp_path, [{}]))[0] == 2
        assert run(capsys, "sweep", data / "cal.csv", "--grid", self.grid(tmp_path, [{"lambda": 1}]),
                   "--cal-frac", 0.5)[0] == 2


class TestBench:
    def config(self, tmp_path, obj):
        path = tmp_path / "bench.json"
        path.write_text(json.dumps(obj))
        return path

    def test_two_methods(self, data, tmp_path, capsys):
        cfg = self.config(tmp_path, {
            "datasets": [{"id": "eq", "cal": str(data / "cal.csv"), "test": str(data / "test.csv")}],
            "methods": ["ts", "sms"], "metrics": ["logloss"]})
        code, out, _ = run(capsys, "bench", cfg)
        recs = json.loads(out)["records"]
        assert code == 0 and len(recs) == 2
        for r in recs:
            assert {"dataset_id", "method", "metric", "before", "after", "relative_improvement",
                    "fit_time_ms", "fit_time_ms_per_1000", "n_cal", "k"} <= set(r)
            # per-1000 normalization times n / 1000 recovers the wall time
            assert r["fit_time_ms_per_1000"] * r["n_cal"] / 1000 == pytest.approx(r["fit_time_ms"])

    def test_ts_improves_miscalibrated_preset(self, tmp_path, capsys):
        cfg = self.config(tmp_path, {
            "datasets": [{"id": f"m{s}", "preset": "many-class-small-n", "seed": s, "n_test": 2000}
                         for s in range(3)],
            "methods": ["ts"]})
        _, out, _ = run(capsys, "bench", cfg, "--quantiles", "--omit-timing")
        doc = json.loads(out)
        assert all(r["relative_improvement"] <= 0 for r in doc["records"])
        assert set(doc["quantiles"]["ts"]["logloss"]) == {"10", "25", "50", "75", "90"}

    def test_failure_isolation(self, data, tmp_path, capsys):
        cfg = self.config(tmp_path, {
            "datasets": [{"id": "eq", "cal": str(data / "cal.csv"), "test": str(data / "test.csv")}],
            "methods": ["ts", "binary-affine"], "metrics": ["logloss"]})
        code, out, _ = run(capsys, "bench", cfg, "--omit-timing")
        recs = {r["method"]: r for r in json.loads(out)["records"]}
        assert code == 0
        assert "error" in recs["binary-affine"] and "error" not in recs["ts"]

    def test_all_fail(self, data, tmp_path, capsys):
        cfg = self.config(tmp_path, {
            "datasets": [{"id": "eq", "cal": str(data / "cal.csv"), "test": str(data / "test.csv")}],
            "methods": ["binary-affine"]})
        assert run(capsys, "bench", cfg, "--omit-timing")[0] == 3

    def test_empty(self, tmp_path, capsys):
        assert run(capsys, "bench", self.config(tmp_path, {"datasets": []}))[0] == 2

    def test_missing_file(self, tmp_path, capsys):
        cfg = self.config(tmp_path, {"datasets": [{"id": "x", "cal": "nope.csv", "test": "nope.csv"}]})
        assert run(capsys, "bench", cfg)[0] == 2

    def test_error_bar_formula(self):
        recs = [{"method": "ts", "dataset_id": d, "model": m, "fit_time_ms_per_1000": t}
                for (d, m, t) in [("a", "x", 1.0), ("a", "y", 2.0), ("b", "x", 3.0), ("b", "y", 6.0)]]
        row = cli.timing_table(recs)["ts"]
        assert row["mean_ms_per_1000"] == 3.0
        assert row["error_bar"] == pytest.approx(np.std([1, 2, 3, 6], ddof=1) / np.sqrt(2 * 2))

    def test_threads_do_not_change_output(self, data, tmp_path, capsys, monkeypatch):
        cfg = self.config(tmp_path, {
            "datasets": [{"id": f"d{i}", "cal": str(data / "cal.csv"), "test": str(data / "test.csv")}
                         for i in range(3)],
            "methods": ["ts", "svs"]})
        outs = []
        for threads in ("1", "3"):
            monkeypatch.setenv("CALIB_THREADS", threads)
            outs.append(run(capsys, "bench", cfg, "--omit-timing")[1])
        assert outs[0] == outs[1]
        monkeypatch.setenv("CALIB_THREADS", "zero")
        assert run(capsys, "bench", cfg, "--omit-timing")[0] == 2


class TestRoundTrip:
    def test_matches_library(self, data, tmp_path, capsys):
        run(capsys, "fit", data / "cal.csv", "-o", tmp_path / "p.json")
        run(capsys, "apply", tmp_path / "p.json", data / "test.csv", tmp_path / "out.csv")
        _, out, _ = run(capsys, "eval", tmp_path / "out.csv")
        cal, test = read_predictions(data / "cal.csv"), read_predictions(data / "test.csv")
        lib = evaluate(apply(fit("sms", cal["p"], cal["y"]), test["p"]), test["y"])
        rep = json.loads(out)
        assert rep["logloss"] == lib.logloss and rep["brier"] == lib.brier
