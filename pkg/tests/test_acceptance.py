"""Acceptance gate: one test per headline criterion, each printing a PASS
line with the measured quantity when it holds.

Run `pytest tests/test_acceptance.py -v -s` to see the per-criterion lines.
The heavier criteria (correlated spline recovery, the binary pipeline) take
a couple of minutes combined.
"""

import itertools
import math
import time
import warnings

import numpy as np
import pytest

from conceptalign import (
    FeatureSpec,
    GroupLassoProblem,
    KernelSpec,
    ToyConfig,
    correlation_matching,
    expand,
    fit_all_concepts,
    fit_group_lasso,
    fit_kernel_concepts,
    gram,
    lambda0,
    make_toy_dataset,
    match_permutation,
    mpe,
    run_experiment,
    standardize_groups,
    verify_theory,
)
from conceptalign.bench import EstimatorSpec, ExperimentConfig, run_cell
from conceptalign.glasso import objective_value

from tests.conftest import exactly_orthonormal_design

warnings.filterwarnings("ignore", category=UserWarning)

SPLINE = FeatureSpec.spline(4, 3)
LAMBDA_GRID = (0.001, 0.01, 0.1)


def _best_mpe_over_grid(dataset, spec, grid):
    std = standardize_groups(expand(dataset.M_train, spec))
    best = 1.0
    for lam in grid:
        norm_matrix, _ = fit_all_concepts(std, dataset.C_train, lam)
        best = min(best, mpe(match_permutation(norm_matrix), dataset.true_permutation))
    return best


def test_criterion_1_wellspecified_linear_recovery():
    start = time.perf_counter()
    exact = 0
    for seed in range(10):
        dataset = make_toy_dataset(ToyConfig(n=1250, d=20, rho=0.0, sigma=1.0,
                                             mode="wellspecified", seed=seed))
        std = standardize_groups(expand(dataset.M_train, FeatureSpec.identity()))
        lam = 4.0 * lambda0(1.0, dataset.M_train.n_samples, 1, 20, 0.05)
        norm_matrix, _ = fit_all_concepts(std, dataset.C_train, lam)
        exact += mpe(match_permutation(norm_matrix), dataset.true_permutation) == 0.0
    elapsed = time.perf_counter() - start
    assert exact >= 9, f"exact recovery in only {exact}/10 seeds"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 1 PASS: linear recovery exact in {exact}/10 seeds, {elapsed:.1f}s")


def test_criterion_2_misspecified_spline_recovery():
    bests = []
    for seed in range(10):
        dataset = make_toy_dataset(ToyConfig(n=1250, d=60, rho=0.0, sigma=1.0,
                                             mode="misspecified", seed=seed))
        bests.append(_best_mpe_over_grid(dataset, SPLINE, LAMBDA_GRID))
    median = float(np.median(bests))
    assert median <= 0.05, f"median best-lambda MPE {median:.3f}"
    print(f"\nACCEPTANCE 2 PASS: spline misspecified median MPE {median:.3f} <= 0.05")


def test_criterion_3_correlation_robustness():
    bests = []
    for seed in range(10):
        dataset = make_toy_dataset(ToyConfig(n=1250, d=60, rho=0.8, sigma=1.0,
                                             mode="misspecified", seed=seed))
        bests.append(_best_mpe_over_grid(dataset, SPLINE, LAMBDA_GRID))
    median = float(np.median(bests))
    assert median <= 0.10, f"median best-lambda MPE {median:.3f} at rho=0.8"
    print(f"\nACCEPTANCE 3 PASS: rho=0.8 median MPE {median:.3f} <= 0.10")


def test_criterion_4_recovery_guarantee_monte_carlo():
    toy = ToyConfig(n=4000, d=5, rho=0.0, sigma=1.0, mode="wellspecified", seed=123)
    report = verify_theory(trials=200, delta=0.1, a=2.0, toy=toy)
    assert report.pass_bound, f"bound frequency {report.freq_bound:.4f}"
    assert report.pass_argmax, f"argmax frequency {report.freq_argmax:.4f}"
    assert report.pass_permutation, f"recovery frequency {report.freq_permutation:.4f}"
    print(f"\nACCEPTANCE 4 PASS: bound {report.freq_bound:.3f} >= {report.level_concept:.3f}-3SE, "
          f"recovery {report.freq_permutation:.3f} >= {report.level_permutation:.3f}-3SE "
          f"({report.regenerations} regenerations)")


def _vectorized_brute_force(design, target, groups, lam, span=5.0):
    n = design.shape[0]
    lo = np.array([-span, -span])
    hi = np.array([span, span])
    weights = np.sqrt(np.asarray(groups.group_sizes, dtype=float))
    best = None
    for _ in range(12):
        g0 = np.linspace(lo[0], hi[0], 41)
        g1 = np.linspace(lo[1], hi[1], 41)
        grid = np.array(np.meshgrid(g0, g1, indexing="ij")).reshape(2, -1)
        residual = target[:, None] - design @ grid
        values = np.einsum("ij,ij->j", residual, residual) / n
        values += lam * (weights[0] * np.abs(grid[0]) + weights[1] * np.abs(grid[1]))
        best = grid[:, values.argmin()]
        width = (hi - lo) / 40
        lo, hi = best - width, best + width
    return objective_value(design, target, best, groups, lam)


def test_criterion_5_solver_optimality():
    rng = np.random.default_rng(2024)
    checked_oracle = 0
    for trial in range(100):
        if trial % 3 == 0:
            d, p = 2, 1
        else:
            d = int(rng.integers(1, 6))
            p = int(rng.integers(1, 4))
        n = 80
        design, groups = exactly_orthonormal_design(n, [p] * d, seed=trial)
        beta_true = np.zeros(d * p)
        beta_true[:p] = rng.normal(size=p)
        target = design @ beta_true + 0.3 * rng.normal(size=n)
        lam = float(rng.choice([0.01, 0.05, 0.2, 0.5]))
        fit = fit_group_lasso(GroupLassoProblem(design, target, groups, lam))
        assert fit.kkt_residual <= 1e-6, f"trial {trial}: residual {fit.kkt_residual:.2e}"
        if d == 2 and p == 1:
            oracle = _vectorized_brute_force(design, target, groups, lam)
            assert fit.objective_value <= oracle + 1e-4, \
                f"trial {trial}: solver {fit.objective_value:.8f} vs oracle {oracle:.8f}"
            checked_oracle += 1
    assert checked_oracle >= 30
    print(f"\nACCEPTANCE 5 PASS: 100 certified fits, {checked_oracle} brute-force "
          f"objective checks within 1e-4")


def test_criterion_6_matching_oracle():
    rng = np.random.default_rng(7)
    for d in range(1, 8):
        perms = np.array(list(itertools.permutations(range(d))))
        rows = np.arange(d)
        for _ in range(100):
            N = rng.normal(size=(d, d))
            values = N[rows, perms].sum(axis=1)
            assert values[values.argmax()] == pytest.approx(
                sum(N[i, j] for i, j in enumerate(match_permutation(N))), rel=1e-12)
    print("\nACCEPTANCE 6 PASS: assignment equals exhaustive search, 100 matrices "
          "per d = 1..7")


def test_criterion_7_kernel_identities():
    dataset = make_toy_dataset(ToyConfig(n=120, d=3, rho=0.0, sigma=0.3,
                                         mode="misspecified", seed=31))
    spec = KernelSpec("rbf")
    M = dataset.M_train.values
    n_train = dataset.M_train.n_samples

    norm_exact, fits, bases = fit_kernel_concepts(dataset.C_train, dataset.M_train,
                                                  spec, lam=0.05, m=None)
    worst_norm_gap = 0.0
    worst_pred_gap = 0.0
    for i, fit in enumerate(fits):
        prediction_gram = np.zeros(n_train)
        prediction_factor = np.zeros(n_train)
        for j in range(3):
            K = gram(spec, M[:, j])
            c = fit.coefficients[j]
            k_norm = math.sqrt(max(c @ K @ c, 0.0))
            worst_norm_gap = max(worst_norm_gap,
                                 abs(np.linalg.norm(fit.gammas[j]) - k_norm))
            prediction_gram += K @ c
            prediction_factor += bases[j].factor @ fit.gammas[j]
        worst_pred_gap = max(worst_pred_gap,
                             float(np.abs(prediction_gram - prediction_factor).max()))
    assert worst_norm_gap < 1e-8
    assert worst_pred_gap < 1e-8

    norm_full, _, _ = fit_kernel_concepts(dataset.C_train, dataset.M_train, spec,
                                          lam=0.05, m=n_train)
    nystrom_gap = float(np.abs(norm_exact - norm_full).max())
    assert nystrom_gap < 1e-6
    print(f"\nACCEPTANCE 7 PASS: norm identity gap {worst_norm_gap:.1e}, representer "
          f"gap {worst_pred_gap:.1e}, full-landmark gap {nystrom_gap:.1e}")


def test_criterion_8_kernel_consistency_trend():
    spec = KernelSpec("laplacian")
    monotone = 0
    for seed in range(10):
        path = []
        for n in (125, 500, 2000):
            dataset = make_toy_dataset(ToyConfig(n=n, d=8, rho=0.0, sigma=0.5,
                                                 mode="misspecified", seed=seed))
            lam = n ** -0.25
            norm_matrix, _, _ = fit_kernel_concepts(dataset.C_train, dataset.M_train,
                                                    spec, lam, m=20, seed=seed)
            path.append(mpe(match_permutation(norm_matrix), dataset.true_permutation))
        monotone += all(a >= b for a, b in zip(path, path[1:]))
    assert monotone >= 8, f"MPE non-increasing in only {monotone}/10 seeds"
    print(f"\nACCEPTANCE 8 PASS: kernel MPE non-increasing in n for {monotone}/10 seeds")


def test_criterion_9_baseline_sanity():
    # Noiseless monotone data: rank correlation is exactly one on the true
    # pairs, so the Spearman baseline must recover the permutation.
    for seed in range(5):
        dataset = make_toy_dataset(ToyConfig(n=500, d=10, rho=0.0, sigma=0.0,
                                             mode="misspecified", seed=seed))
        spearman = correlation_matching(dataset.C_train, dataset.M_train, "spearman")
        assert mpe(spearman, dataset.true_permutation) == 0.0

    # Correlated wellspecified data: the regularized fit must not lose to the
    # Pearson baseline.
    glasso_errors, pearson_errors = [], []
    for seed in range(10):
        dataset = make_toy_dataset(ToyConfig(n=1250, d=20, rho=0.8, sigma=1.0,
                                             mode="wellspecified", seed=seed))
        std = standardize_groups(expand(dataset.M_train, FeatureSpec.identity()))
        lam = 4.0 * lambda0(1.0, dataset.M_train.n_samples, 1, 20, 0.05)
        norm_matrix, _ = fit_all_concepts(std, dataset.C_train, lam)
        glasso_errors.append(mpe(match_permutation(norm_matrix), dataset.true_permutation))
        pearson = correlation_matching(dataset.C_train, dataset.M_train, "pearson")
        pearson_errors.append(mpe(pearson, dataset.true_permutation))
    assert np.median(glasso_errors) <= np.median(pearson_errors)
    print(f"\nACCEPTANCE 9 PASS: Spearman exact on noiseless data; median MPE "
          f"{np.median(glasso_errors):.3f} (group lasso) <= {np.median(pearson_errors):.3f} (Pearson)")


def test_criterion_10_binary_pipeline():
    # sigma is not pinned by the criterion; at sigma = 1 even the Bayes
    # predictor sits near 0.78 mean accuracy for this generator, so the
    # pipeline is exercised at sigma = 0.25 where the target is meaningful.
    estimator = EstimatorSpec.from_jsonable({"name": "logistic"})
    accs, niss = [], []
    for seed in range(10):
        config = ExperimentConfig(
            toy=ToyConfig(n=2000, d=20, rho=0.5, sigma=0.25, mode="misspecified",
                          binary=True, test_rho=0.0, seed=seed),
            estimators=(estimator,), lambda_grid=(0.01,), seeds=(seed,),
        )
        result = run_cell(config, estimator, seed, 0.01)
        assert result.status == "ok", result.status
        accs.append(result.report.concept_acc)
        niss.append(result.report.nis)
    mean_acc = float(np.mean(accs))
    max_nis = float(np.max(niss))
    assert mean_acc >= 0.85, f"mean concept accuracy {mean_acc:.3f}"
    assert max_nis <= 0.05, f"max NIS {max_nis:.4f}"
    print(f"\nACCEPTANCE 10 PASS: concept accuracy {mean_acc:.3f} >= 0.85, "
          f"NIS <= {max_nis:.4f}")


def test_criterion_11_determinism(tmp_path):
    config = ExperimentConfig(
        toy=ToyConfig(n=300, d=5, rho=0.2, sigma=0.7, mode="misspecified", seed=0),
        estimators=(EstimatorSpec(name="linear"),
                    EstimatorSpec.from_jsonable({"name": "spline", "knots": 4, "degree": 3})),
        lambda_grid=(0.01, 0.1), seeds=(0, 1, 2), baselines=("pearson", "spearman"),
    )
    run_experiment(config, out_dir=tmp_path / "a")
    run_experiment(config, out_dir=tmp_path / "b")

    def metric_lines(path):
        lines = (path / "results.csv").read_text().splitlines()
        header = lines[0].split(",")
        drop = header.index("time_ms")
        return [",".join(tok for k, tok in enumerate(line.split(",")) if k != drop)
                for line in lines]

    lines_a = metric_lines(tmp_path / "a")
    lines_b = metric_lines(tmp_path / "b")
    assert lines_a == lines_b
    print(f"\nACCEPTANCE 11 PASS: {len(lines_a) - 1} result rows byte-identical "
          "across reruns (wall time excluded)")
