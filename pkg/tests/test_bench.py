import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conceptalign import ExperimentConfig, ToyConfig, run_experiment, sweep, verify_theory
from conceptalign.bench import EstimatorSpec, resolve_lambda, run_cell
from conceptalign.cli import main
from conceptalign.glasso import lambda0


def small_config(**toy_overrides):
    toy = dict(n=120, d=3, rho=0.0, sigma=0.5, mode="wellspecified", seed=0)
    toy.update(toy_overrides)
    return ExperimentConfig(
        toy=ToyConfig(**toy),
        estimators=(EstimatorSpec(name="linear"),),
        lambda_grid=(0.02, 0.1),
        seeds=(0, 1),
        baselines=("pearson",),
    )


def read_rows(path):
    with open(path) as handle:
        return list(csv.DictReader(handle))


def strip_times(rows):
    return [{k: v for k, v in row.items() if k != "time_ms"} for row in rows]


class TestConfigValidation:
    def test_empty_lambda_grid(self):
        with pytest.raises(ValueError, match="lambda_grid"):
            ExperimentConfig(toy=ToyConfig(n=100, d=2),
                             estimators=(EstimatorSpec(name="linear"),),
                             lambda_grid=(), seeds=(0,))

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            ExperimentConfig(toy=ToyConfig(n=100, d=2),
                             estimators=(EstimatorSpec(name="linear"),),
                             lambda_grid=(-0.1,), seeds=(0,))

    def test_empty_seeds(self):
        with pytest.raises(ValueError, match="seeds"):
            ExperimentConfig(toy=ToyConfig(n=100, d=2),
                             estimators=(EstimatorSpec(name="linear"),),
                             lambda_grid=(0.1,), seeds=())

    def test_unknown_baseline(self):
        with pytest.raises(ValueError, match="baseline"):
            ExperimentConfig(toy=ToyConfig(n=100, d=2),
                             estimators=(EstimatorSpec(name="linear"),),
                             lambda_grid=(0.1,), seeds=(0,), baselines=("kendall",))

    def test_unknown_estimator(self):
        with pytest.raises(ValueError, match="estimator"):
            EstimatorSpec(name="forest")

    def test_symbolic_lambda(self):
        config = small_config()
        lam = resolve_lambda("4lambda0", config.toy, config.estimators[0])
        n_train = int(round(120 * 0.8))
        assert lam == pytest.approx(4 * lambda0(0.5, n_train, 1, 3, 0.05))
        with pytest.raises(ValueError):
            ExperimentConfig(toy=ToyConfig(n=100, d=2),
                             estimators=(EstimatorSpec(name="linear"),),
                             lambda_grid=("2lambda0",), seeds=(0,))

    def test_seeds_default_to_ten(self):
        config = ExperimentConfig.from_jsonable({
            "toy": {"n": 100, "d": 2},
            "estimators": [{"name": "linear"}],
            "lambda_grid": [0.1],
        })
        assert config.seeds == tuple(range(10))


class TestRunExperiment:
    def test_row_grid_and_best_marking(self, tmp_path):
        config = small_config()
        rows = run_experiment(config, out_dir=tmp_path)
        # 1 estimator x 2 seeds x 2 lambdas + 2 baseline rows
        assert len(rows) == 6
        assert all(row["status"] == "ok" for row in rows)
        for seed in (0, 1):
            flagged = [r for r in rows if r["seed"] == seed and r["best"]]
            assert len(flagged) == 1 and flagged[0]["estimator"] == "linear"
        baseline = [r for r in rows if r["estimator"] == "pearson"]
        assert len(baseline) == 2 and all(r["lambda"] is None for r in baseline)

    def test_metric_columns_deterministic(self, tmp_path):
        config = small_config()
        run_experiment(config, out_dir=tmp_path / "a")
        run_experiment(config, out_dir=tmp_path / "b")
        rows_a = strip_times(read_rows(tmp_path / "a" / "results.csv"))
        rows_b = strip_times(read_rows(tmp_path / "b" / "results.csv"))
        assert rows_a == rows_b

    def test_resume_skips_completed_cells(self, tmp_path, monkeypatch):
        config = small_config()
        first = run_experiment(config, out_dir=tmp_path)

        def boom(args):
            raise AssertionError("cell recomputed despite manifest")

        monkeypatch.setattr("conceptalign.bench._cell_worker", boom)
        second = run_experiment(config, out_dir=tmp_path)
        assert strip_times(first) == strip_times(second)

    def test_config_change_rejected_in_same_dir(self, tmp_path):
        run_experiment(small_config(), out_dir=tmp_path)
        other = small_config(sigma=0.9)
        with pytest.raises(ValueError, match="different config"):
            run_experiment(other, out_dir=tmp_path)

    def test_failures_recorded_not_raised(self):
        # Logistic estimator on a continuous dataset cannot run.
        config = ExperimentConfig(
            toy=ToyConfig(n=120, d=3, rho=0.0, sigma=0.5, mode="misspecified", seed=0),
            estimators=(EstimatorSpec(name="logistic"),),
            lambda_grid=(0.05,), seeds=(0,),
        )
        rows = run_experiment(config)
        assert len(rows) == 1
        assert rows[0]["status"].startswith("error:")
        assert rows[0]["mpe"] is None

    def test_parallel_jobs_match_serial(self, tmp_path):
        config = small_config()
        serial = run_experiment(config, out_dir=tmp_path / "s", jobs=1)
        parallel = run_experiment(config, out_dir=tmp_path / "p", jobs=2)
        assert strip_times(serial) == strip_times(parallel)


class TestEstimators:
    def test_two_stage(self):
        config = ExperimentConfig(
            toy=ToyConfig(n=600, d=4, rho=0.0, sigma=0.3, mode="misspecified", seed=3),
            estimators=(EstimatorSpec.from_jsonable({"name": "two_stage"}),),
            lambda_grid=(0.01,), seeds=(3,),
        )
        result = run_cell(config, config.estimators[0], 3, 0.01)
        assert result.status == "ok"
        assert result.report.mpe == 0.0
        assert result.report.r2_diag > 0.5

    def test_kernel_estimator_with_landmarks(self):
        config = ExperimentConfig(
            toy=ToyConfig(n=300, d=3, rho=0.0, sigma=0.3, mode="misspecified", seed=4),
            estimators=(EstimatorSpec.from_jsonable(
                {"name": "kernel", "kernel": {"kind": "laplacian"}, "m": 20}),),
            lambda_grid=(0.05,), seeds=(4,),
        )
        result = run_cell(config, config.estimators[0], 4, 0.05)
        assert result.status == "ok"
        assert result.report.mpe == 0.0

    def test_rff_estimator(self):
        config = ExperimentConfig(
            toy=ToyConfig(n=400, d=3, rho=0.0, sigma=0.3, mode="misspecified", seed=5),
            estimators=(EstimatorSpec.from_jsonable({"name": "rff", "n_features": 8}),),
            lambda_grid=(0.05,), seeds=(5,),
        )
        result = run_cell(config, config.estimators[0], 5, 0.05)
        assert result.status == "ok"

    def test_logistic_estimator_binary_pipeline(self):
        config = ExperimentConfig(
            toy=ToyConfig(n=400, d=5, rho=0.3, sigma=0.3, mode="misspecified",
                          seed=6, binary=True),
            estimators=(EstimatorSpec.from_jsonable({"name": "logistic"}),),
            lambda_grid=(0.01,), seeds=(6,),
        )
        result = run_cell(config, config.estimators[0], 6, 0.01)
        assert result.status == "ok"
        report = result.report
        assert report.concept_acc is not None and report.concept_acc > 0.6
        assert report.label_acc is not None
        assert report.ois is not None and report.nis is not None
        assert report.r2_diag is None


class TestRunExperimentTrends:
    def test_calibrated_lambda_recovers_exactly(self, tmp_path):
        config = ExperimentConfig(
            toy=ToyConfig(n=1250, d=20, rho=0.0, sigma=1.0, mode="wellspecified", seed=0),
            estimators=(EstimatorSpec(name="linear"),),
            lambda_grid=("4lambda0",),
            seeds=tuple(range(10)),
        )
        rows = run_experiment(config, out_dir=tmp_path)
        mpes = [row["mpe"] for row in rows if row["status"] == "ok"]
        assert len(mpes) == 10
        assert float(np.mean(mpes)) == 0.0


class TestSweepTrends:
    def test_rho_sweep_stays_accurate_to_point_eight(self, tmp_path):
        config = ExperimentConfig(
            toy=ToyConfig(n=800, d=20, rho=0.0, sigma=1.0, mode="misspecified", seed=0),
            estimators=(EstimatorSpec.from_jsonable(
                {"name": "spline", "knots": 4, "degree": 3}),),
            lambda_grid=(0.001, 0.01, 0.1),
            seeds=tuple(range(5)),
        )
        rows = sweep("rho", config, tmp_path, values=(0.0, 0.4, 0.8))
        for value in (0.0, 0.4, 0.8):
            medians = [r["mpe"] for r in rows
                       if r["axis_value"] == value and r["seed"] == "p50"]
            assert medians and medians[0] <= 0.05, f"rho={value}: median {medians}"

    def test_n_sweep_median_mpe_non_increasing(self, tmp_path):
        config = ExperimentConfig(
            toy=ToyConfig(n=1250, d=10, rho=0.0, sigma=1.0, mode="misspecified", seed=0),
            estimators=(EstimatorSpec.from_jsonable(
                {"name": "spline", "knots": 4, "degree": 3}),),
            lambda_grid=(0.001, 0.01, 0.1),
            seeds=tuple(range(5)),
        )
        rows = sweep("n", config, tmp_path, values=(65, 125, 1250))
        medians = []
        for value in (65, 125, 1250):
            medians += [r["mpe"] for r in rows
                        if r["axis_value"] == value and r["seed"] == "p50"]
        assert len(medians) == 3
        assert all(a >= b for a, b in zip(medians, medians[1:])), medians


class TestSweep:
    def test_single_value_degenerates_to_run(self, tmp_path):
        config = small_config()
        rows = sweep("rho", config, tmp_path, values=(0.0,))
        cells = [r for r in rows if r["status"] == "ok"]
        summaries = [r for r in rows if r["status"] == "summary"]
        assert len(cells) == 6
        assert {r["seed"] for r in summaries} == {"p25", "p50", "p75"}
        path = tmp_path / "sweep_rho.csv"
        with open(path) as handle:
            header = handle.readline().strip().split(",")
        assert header == ["axis", "axis_value", "estimator", "seed", "lambda", "mpe",
                          "r2", "concept_acc", "label_acc", "ois", "nis", "time_ms",
                          "status", "best"]

    def test_axis_values(self, tmp_path):
        config = small_config()
        rows = sweep("n", config, tmp_path, values=(120, 200))
        assert {r["axis_value"] for r in rows} == {120, 200}
        with pytest.raises(ValueError, match="axis"):
            sweep("bananas", config, tmp_path)


class TestVerifyTheory:
    def test_validation(self):
        toy = ToyConfig(n=500, d=3, rho=0.0, sigma=1.0, seed=0)
        with pytest.raises(ValueError):
            verify_theory(0, 0.1, 2.0, toy)
        with pytest.raises(ValueError):
            verify_theory(10, 1.5, 2.0, toy)
        with pytest.raises(ValueError):
            verify_theory(10, 0.1, 1.0, toy)

    def test_weaker_delta_also_passes(self):
        toy = ToyConfig(n=2000, d=3, rho=0.0, sigma=1.0, seed=5)
        report = verify_theory(50, 0.5, 2.0, toy)
        assert report.freq_permutation >= report.level_permutation - 3 * np.sqrt(
            report.level_permutation * (1 - report.level_permutation) / 50)
        assert report.all_pass
        assert report.c == pytest.approx(1 + 24 / 7)

    def test_report_serializes(self):
        toy = ToyConfig(n=1000, d=2, rho=0.0, sigma=1.0, seed=6)
        report = verify_theory(20, 0.3, 2.0, toy)
        blob = json.dumps(report.to_jsonable())
        assert "freq_permutation" in blob


@pytest.fixture
def cli_config(tmp_path):
    cfg = {
        "toy": {"n": 120, "d": 3, "rho": 0.0, "sigma": 0.5, "mode": "wellspecified",
                "features": {"kind": "identity"}, "seed": 0},
        "estimators": [{"name": "linear"}],
        "lambda_grid": ["4lambda0", 0.05],
        "seeds": [0, 1],
        "baselines": ["pearson", "spearman"],
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestCli:
    def test_generate(self, cli_config, tmp_path):
        out = tmp_path / "data"
        assert main(["generate", "--config", str(cli_config), "--out", str(out)]) == 0
        for seed in (0, 1):
            base = out / f"dataset_seed{seed}"
            assert (base / "M_train.csv").exists()
            assert (base / "manifest.json").exists()

    def test_fit_evaluate_round_trip(self, cli_config, tmp_path):
        out = tmp_path / "run"
        assert main(["fit", "--config", str(cli_config), "--out", str(out)]) == 0
        assert (out / "results.csv").exists()
        assert (out / "models" / "linear_seed0.json").exists()
        assert main(["evaluate", "--config", str(cli_config), "--out", str(out)]) == 0
        evaluation = json.loads((out / "evaluation.json").read_text())
        assert {row["seed"] for row in evaluation} == {0, 1}
        assert all(row["mpe"] == 0.0 for row in evaluation)

    def test_seeds_override(self, cli_config, tmp_path):
        out = tmp_path / "run"
        assert main(["fit", "--config", str(cli_config), "--out", str(out),
                     "--seeds", "5"]) == 0
        rows = read_rows(out / "results.csv")
        assert {row["seed"] for row in rows} == {"5"}

    def test_sweep(self, cli_config, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cli_config), "--out", str(out),
                     "--axis", "rho", "--values", "0.0", "0.4"]) == 0
        assert (out / "sweep_rho.csv").exists()

    def test_verify_theory(self, cli_config, tmp_path):
        out = tmp_path / "vt"
        code = main(["verify-theory", "--config", str(cli_config), "--out", str(out),
                     "--trials", "30", "--delta", "0.3"])
        assert code == 0
        report = json.loads((out / "theory_report.json").read_text())
        assert report["all_pass"]

    def test_missing_config_is_exit_1(self, tmp_path):
        assert main(["fit", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 1

    def test_invalid_config_is_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"toy": {"n": 100, "d": 2}, "estimators": [],
                                   "lambda_grid": [0.1], "seeds": [0]}))
        assert main(["fit", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_partial_failure_is_exit_2(self, tmp_path):
        cfg = {
            "toy": {"n": 120, "d": 3, "rho": 0.0, "sigma": 0.5, "mode": "misspecified",
                    "seed": 0},
            "estimators": [{"name": "logistic"}],
            "lambda_grid": [0.05],
            "seeds": [0],
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["fit", "--config", str(path), "--out", str(tmp_path / "out")]) == 2

    def test_console_module_entry(self, cli_config, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "conceptalign.cli", "generate",
             "--config", str(cli_config), "--out", str(tmp_path / "sub")],
            capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr
