"""Benchmark command line: generate / fit / evaluate / sweep / verify-theory.

Exit codes: 0 full success, 1 configuration errors, 2 partial cell failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, metrics
from .align import AlignmentModel
from .bench import ExperimentConfig
from .data import SampleMatrix
from .synthgen import make_toy_dataset


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _load_config(path, seeds_override=None) -> ExperimentConfig:
    config = ExperimentConfig.from_file(path)
    if seeds_override:
        config = replace(config, seeds=seeds_override)
    return config


def _cmd_generate(args) -> int:
    config = _load_config(args.config, args.seeds)
    out = Path(args.out)
    for seed in config.seeds:
        dataset = make_toy_dataset(replace(config.toy, seed=seed))
        dataset.export_csv(out / f"dataset_seed{seed}")
        print(f"wrote {out / f'dataset_seed{seed}'}")
    return 0


def _rows_exit_code(rows) -> int:
    failed = [r for r in rows if r["status"] not in ("ok", "summary")]
    if failed:
        print(f"{len(failed)} of {len(rows)} cells failed", file=sys.stderr)
        return 2
    return 0


def _cmd_fit(args) -> int:
    config = _load_config(args.config, args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = bench.run_experiment(config, out_dir=out, jobs=args.jobs)
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    # Persist the model of the best lambda per (estimator, seed).
    for row in rows:
        if not row["best"]:
            continue
        estimator = next(e for e in config.estimators if e.label == row["estimator"])
        result = bench.run_cell(config, estimator, row["seed"], row["lambda"])
        if result.model_json is not None:
            path = models_dir / f"{row['estimator']}_seed{row['seed']}.json"
            path.write_text(result.model_json)
            print(f"wrote {path}")
    return _rows_exit_code(rows)


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config, args.seeds)
    out = Path(args.out)
    models_dir = Path(args.models) if args.models else out / "models"
    if not models_dir.is_dir():
        print(f"no models directory at {models_dir}; run fit first", file=sys.stderr)
        return 1
    rows = []
    for path in sorted(models_dir.glob("*.json")):
        stem = path.stem
        label, _, seed_part = stem.rpartition("_seed")
        try:
            seed = int(seed_part)
        except ValueError:
            continue
        model = AlignmentModel.load(path)
        dataset = make_toy_dataset(replace(config.toy, seed=seed))
        predicted = model.predict(dataset.M_test)
        row = {"estimator": label, "seed": seed,
               "mpe": metrics.mpe(model.permutation, dataset.true_permutation)}
        if dataset.C_train_bin is not None:
            pred_bin = SampleMatrix((predicted.values >= 0.5).astype(float), predicted.names)
            row["concept_acc"] = float((pred_bin.values == dataset.C_test_bin.values).mean())
        else:
            row["r2"] = metrics.r2_diagonal(dataset.C_test, predicted)
        rows.append(row)
        print(json.dumps(row, sort_keys=True))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "evaluation.json", "w") as handle:
        json.dump(rows, handle, indent=2, sort_keys=True)
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config, args.seeds)
    values = tuple(float(v) for v in args.values) if args.values else None
    if values is not None and args.axis in ("dim", "n"):
        values = tuple(int(v) for v in values)
    rows = bench.sweep(args.axis, config, args.out, values=values, jobs=args.jobs)
    print(f"wrote {Path(args.out) / f'sweep_{args.axis}.csv'}")
    return _rows_exit_code(rows)


def _cmd_verify_theory(args) -> int:
    config = _load_config(args.config, args.seeds)
    if args.trials < 1:
        print("trials must be >= 1", file=sys.stderr)
        return 1
    report = bench.verify_theory(args.trials, args.delta, args.a, config.toy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "theory_report.json", "w") as handle:
        json.dump(report.to_jsonable(), handle, indent=2, sort_keys=True)
    for name, freq, level, ok in (
        ("error-bound", report.freq_bound, report.level_concept, report.pass_bound),
        ("argmax", report.freq_argmax, report.level_concept, report.pass_argmax),
        ("permutation", report.freq_permutation, report.level_permutation, report.pass_permutation),
    ):
        print(f"{name}: frequency {freq:.4f} vs level {level:.4f} -> "
              f"{'PASS' if ok else 'FAIL'}")
    print(f"regenerations: {report.regenerations}")
    return 0 if report.all_pass else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptalign",
        description="Synthetic alignment benchmark runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=_parse_seeds, default=None,
                       help="override config seeds, e.g. '0,1,2'")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker count (grid commands only)")

    p = sub.add_parser("generate", help="write toy datasets as CSV")
    common(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("fit", help="run the (estimator, seed, lambda) grid and save models")
    common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("evaluate", help="evaluate saved models on regenerated test data")
    common(p)
    p.add_argument("--models", default=None, help="models directory (default <out>/models)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="sweep one axis and emit plot-ready CSV")
    common(p)
    p.add_argument("--axis", required=True, choices=bench.SWEEP_AXES)
    p.add_argument("--values", nargs="*", default=None, help="axis values (defaults per axis)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("verify-theory", help="Monte Carlo check of the recovery guarantee")
    common(p)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--a", type=float, default=2.0)
    p.set_defaults(func=_cmd_verify_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
