"""Toy data generation: equicorrelated Gaussian machine variables, concepts
built either linearly in the chosen features (wellspecified) or through
random monotone diffeomorphisms (misspecified), plus binarization and
downstream labels for the classification pipeline.

By construction every concept reads exactly one machine variable: C_i depends
only on M_{pi(i)} and its own noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import Permutation
from .data import SampleMatrix
from .features import FeatureSpec, expand, standardize_groups
from .glasso import lambda0


@dataclass(frozen=True)
class ToyConfig:
    """Settings of one synthetic dataset draw.

    ``split`` is the train fraction (0.8 for continuous runs, 0.5 for the
    binary pipeline so both classes reach the test set).  ``test_rho``
    decouples the test-set correlation from the training one (the binary
    pipeline trains at rho and tests at 0); None means same as ``rho``.
    """

    n: int
    d: int
    rho: float = 0.0
    sigma: float = 1.0
    mode: str = "wellspecified"
    features: FeatureSpec = field(default_factory=FeatureSpec.identity)
    seed: int = 0
    split: float | None = None
    binary: bool = False
    test_rho: float | None = None
    signal_range: tuple[float, float] = (16.0, 32.0)  # |beta*| range in lambda0 units
    delta: float = 0.05  # delta inside the lambda0 used for signal scaling

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.test_rho is not None and not 0.0 <= self.test_rho < 1.0:
            raise ValueError("test_rho must lie in [0, 1)")
        if self.n < 10:
            raise ValueError("need n >= 10")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.mode not in ("wellspecified", "misspecified"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.split is not None and not 0.0 < self.split <= 1.0:
            raise ValueError("split must lie in (0, 1]")

    @property
    def train_fraction(self) -> float:
        if self.split is not None:
            return self.split
        return 0.5 if self.binary else 0.8

    def to_jsonable(self) -> dict:
        return {
            "n": self.n, "d": self.d, "rho": self.rho, "sigma": self.sigma,
            "mode": self.mode, "features": self.features.to_jsonable(),
            "seed": self.seed, "split": self.split, "binary": self.binary,
            "test_rho": self.test_rho, "signal_range": list(self.signal_range),
            "delta": self.delta,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ToyConfig":
        return cls(
            n=int(obj["n"]), d=int(obj["d"]), rho=float(obj.get("rho", 0.0)),
            sigma=float(obj.get("sigma", 1.0)), mode=obj.get("mode", "wellspecified"),
            features=FeatureSpec.from_jsonable(obj.get("features", {"kind": "identity"})),
            seed=int(obj.get("seed", 0)),
            split=None if obj.get("split") is None else float(obj["split"]),
            binary=bool(obj.get("binary", False)),
            test_rho=None if obj.get("test_rho") is None else float(obj["test_rho"]),
            signal_range=tuple(obj.get("signal_range", (16.0, 32.0))),
            delta=float(obj.get("delta", 0.05)),
        )


# Strictly increasing smooth maps used in the misspecified generator.
DIFFEOMORPHISMS: dict[str, callable] = {
    "identity": lambda x: x,
    "cubic": lambda x: x + x ** 3 / 3.0,
    "sinh": np.sinh,
    "tanh_tilt": lambda x: np.tanh(x) + 0.1 * x,
    "exp_odd": lambda x: np.sign(x) * (np.exp(np.abs(x)) - 1.0),
    "arctan_tilt": lambda x: np.arctan(x) + 0.05 * x,
}


@dataclass
class ToyDataset:
    """Generated data split into train/test plus the generating ground truth."""

    M_train: SampleMatrix
    M_test: SampleMatrix
    C_train: SampleMatrix
    C_test: SampleMatrix
    true_permutation: Permutation
    true_params: dict
    C_train_bin: SampleMatrix | None = None
    C_test_bin: SampleMatrix | None = None
    y_train: np.ndarray | None = None
    y_test: np.ndarray | None = None
    label_columns: tuple[int, ...] | None = None
    label_threshold: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.true_permutation)

    def export_csv(self, directory) -> None:
        """One CSV per matrix plus a JSON manifest with config and truth."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.M_train.to_csv(directory / "M_train.csv")
        self.M_test.to_csv(directory / "M_test.csv")
        self.C_train.to_csv(directory / "C_train.csv")
        self.C_test.to_csv(directory / "C_test.csv")
        manifest = {
            "true_permutation": list(self.true_permutation),
            "true_params": self.true_params,
            "info": self.info,
            "binary": self.C_train_bin is not None,
        }
        if self.C_train_bin is not None:
            self.C_train_bin.to_csv(directory / "C_train_bin.csv")
            self.C_test_bin.to_csv(directory / "C_test_bin.csv")
            np.savetxt(directory / "y_train.csv", self.y_train, fmt="%d", header="y", comments="")
            np.savetxt(directory / "y_test.csv", self.y_test, fmt="%d", header="y", comments="")
            manifest["label_columns"] = list(self.label_columns)
            manifest["label_threshold"] = self.label_threshold
        with open(directory / "manifest.json", "w") as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)

    @classmethod
    def load_csv(cls, directory) -> "ToyDataset":
        directory = Path(directory)
        with open(directory / "manifest.json") as handle:
            manifest = json.load(handle)
        dataset = cls(
            M_train=SampleMatrix.from_csv(directory / "M_train.csv"),
            M_test=SampleMatrix.from_csv(directory / "M_test.csv"),
            C_train=SampleMatrix.from_csv(directory / "C_train.csv"),
            C_test=SampleMatrix.from_csv(directory / "C_test.csv"),
            true_permutation=Permutation(tuple(manifest["true_permutation"])),
            true_params=manifest["true_params"],
            info=manifest.get("info", {}),
        )
        if manifest.get("binary"):
            dataset.C_train_bin = SampleMatrix.from_csv(directory / "C_train_bin.csv")
            dataset.C_test_bin = SampleMatrix.from_csv(directory / "C_test_bin.csv")
            dataset.y_train = np.loadtxt(directory / "y_train.csv", skiprows=1, ndmin=1)
            dataset.y_test = np.loadtxt(directory / "y_test.csv", skiprows=1, ndmin=1)
            dataset.label_columns = tuple(manifest["label_columns"])
            dataset.label_threshold = manifest["label_threshold"]
        return dataset


def sample_correlated_gaussian(n: int, d: int, rho: float, seed) -> SampleMatrix:
    """n draws of N(0, (1 - rho) I + rho 11'): sqrt(1-rho) z + sqrt(rho) g 1."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    g = rng.standard_normal((n, 1))
    values = math.sqrt(1.0 - rho) * z + math.sqrt(rho) * g
    return SampleMatrix(values, tuple(f"m{j}" for j in range(d)))


def _split_rows(n: int, n_train: int):
    if not 1 <= n_train <= n:
        raise ValueError(f"invalid train size {n_train} for {n} rows")
    return slice(0, n_train), slice(n_train, n)


def gen_wellspecified(M, spec: FeatureSpec, sigma: float, seed, *,
                      n_train: int | None = None, delta: float = 0.05,
                      signal_range: tuple[float, float] = (16.0, 32.0)) -> ToyDataset:
    """Concepts linear in the standardized features of one machine variable.

    Feature transforms are fitted on the training rows, each true coefficient
    block has norm uniform in ``signal_range`` times lambda0 (computed at the
    training size), the permutation is uniform, and the noise is N(0, sigma^2).
    With sigma = 0 the coefficient norms are scaled as if sigma were 1, since
    lambda0 is linear in sigma and would otherwise zero out the signal.
    """
    M = M if isinstance(M, SampleMatrix) else SampleMatrix(np.asarray(M, dtype=float))
    n, d = M.values.shape
    if n_train is None:
        n_train = int(n * 0.8)
    train_rows, test_rows = _split_rows(n, n_train)

    expansion = standardize_groups(expand(M.take_rows(train_rows), spec))
    p = spec.features_per_variable
    lam0 = lambda0(sigma if sigma > 0 else 1.0, n_train, p, d, delta)

    rng = np.random.default_rng(seed)
    betas = []
    for _ in range(d):
        direction = rng.standard_normal(p)
        direction /= np.linalg.norm(direction)
        radius = rng.uniform(signal_range[0] * lam0, signal_range[1] * lam0)
        betas.append(radius * direction)
    pi = Permutation(tuple(rng.permutation(d)))
    noise = rng.normal(0.0, sigma, size=(n, d))

    design_all = expansion.transform_new(M)
    C = np.empty((n, d))
    for i in range(d):
        j = pi[i]
        C[:, i] = design_all[:, expansion.groups.block(j)] @ betas[j] + noise[:, i]
    C_table = SampleMatrix(C, tuple(f"c{i}" for i in range(d)))

    return ToyDataset(
        M_train=M.take_rows(train_rows),
        M_test=M.take_rows(test_rows),
        C_train=C_table.take_rows(train_rows),
        C_test=C_table.take_rows(test_rows),
        true_permutation=pi,
        true_params={
            "mode": "wellspecified",
            "lambda0": lam0,
            "beta": [b.tolist() for b in betas],
        },
        info={"sigma": sigma, "features": spec.to_jsonable(), "n_train": n_train},
    )


def gen_misspecified(M, sigma: float, seed, *, n_train: int | None = None) -> ToyDataset:
    """Concepts w_j f_j(M_j) + noise for random monotone f_j, w_j ~ U[-2, 2]."""
    M = M if isinstance(M, SampleMatrix) else SampleMatrix(np.asarray(M, dtype=float))
    n, d = M.values.shape
    if n_train is None:
        n_train = int(n * 0.8)
    train_rows, test_rows = _split_rows(n, n_train)

    rng = np.random.default_rng(seed)
    names = list(DIFFEOMORPHISMS)
    f_idx = rng.integers(0, len(names), size=d)
    weights = rng.uniform(-2.0, 2.0, size=d)
    pi = Permutation(tuple(rng.permutation(d)))
    noise = rng.normal(0.0, sigma, size=(n, d))

    C = np.empty((n, d))
    for i in range(d):
        j = pi[i]
        f = DIFFEOMORPHISMS[names[f_idx[j]]]
        C[:, i] = weights[j] * f(M.values[:, j]) + noise[:, i]
    C_table = SampleMatrix(C, tuple(f"c{i}" for i in range(d)))

    return ToyDataset(
        M_train=M.take_rows(train_rows),
        M_test=M.take_rows(test_rows),
        C_train=C_table.take_rows(train_rows),
        C_test=C_table.take_rows(test_rows),
        true_permutation=pi,
        true_params={
            "mode": "misspecified",
            "diffeomorphisms": [names[k] for k in f_idx],
            "weights": weights.tolist(),
        },
        info={"sigma": sigma, "n_train": n_train},
    )


def binarize_midpoint(C) -> SampleMatrix:
    """Per column: 1 where the value is at or below the midpoint of its range."""
    table = C if isinstance(C, SampleMatrix) else SampleMatrix(np.asarray(C, dtype=float))
    lo = table.values.min(axis=0)
    hi = table.values.max(axis=0)
    if np.any(hi <= lo):
        bad = int(np.flatnonzero(hi <= lo)[0])
        raise ValueError(f"column {bad} is constant; midpoint binarization undefined")
    midpoint = 0.5 * (lo + hi)
    return SampleMatrix((table.values <= midpoint).astype(float), table.names)


def make_downstream_labels(C_bin, seed) -> tuple[np.ndarray, int, np.ndarray]:
    """Random classification task over k = max(1, min(3, d//5)) binary concepts.

    y = 1 when the selected concepts sum to at least max(1, d//10).
    """
    table = C_bin if isinstance(C_bin, SampleMatrix) else SampleMatrix(np.asarray(C_bin, dtype=float))
    d = table.values.shape[1]
    if d < 1:
        raise ValueError("need at least one concept column")
    k = max(1, min(3, d // 5))
    threshold = max(1, d // 10)
    rng = np.random.default_rng(seed)
    columns = np.sort(rng.choice(d, size=k, replace=False))
    y = (table.values[:, columns].sum(axis=1) >= threshold).astype(float)
    return columns, threshold, y


def make_toy_dataset(config: ToyConfig) -> ToyDataset:
    """Draw a full dataset from a :class:`ToyConfig` (deterministic per seed).

    Machine variables come from the equicorrelated Gaussian; the binary
    pipeline additionally draws the test block at ``test_rho`` (default 0),
    binarizes concepts at midpoints of the pooled range, and attaches the
    downstream labels.
    """
    n_train = int(round(config.n * config.train_fraction))
    n_train = min(max(n_train, 1), config.n)
    if config.binary:
        test_rho = 0.0 if config.test_rho is None else config.test_rho
        M_train = sample_correlated_gaussian(n_train, config.d, config.rho, [config.seed, 0])
        M_test = sample_correlated_gaussian(config.n - n_train, config.d, test_rho, [config.seed, 1])
        M = SampleMatrix(np.vstack([M_train.values, M_test.values]), M_train.names)
    elif config.test_rho is not None and config.test_rho != config.rho:
        M_train = sample_correlated_gaussian(n_train, config.d, config.rho, [config.seed, 0])
        M_test = sample_correlated_gaussian(config.n - n_train, config.d, config.test_rho, [config.seed, 1])
        M = SampleMatrix(np.vstack([M_train.values, M_test.values]), M_train.names)
    else:
        M = sample_correlated_gaussian(config.n, config.d, config.rho, [config.seed, 0])

    if config.mode == "wellspecified":
        dataset = gen_wellspecified(
            M, config.features, config.sigma, config.seed, n_train=n_train,
            delta=config.delta, signal_range=config.signal_range,
        )
    else:
        dataset = gen_misspecified(M, config.sigma, config.seed, n_train=n_train)
    dataset.info["config"] = config.to_jsonable()

    if config.binary:
        pooled = SampleMatrix(
            np.vstack([dataset.C_train.values, dataset.C_test.values]),
            dataset.C_train.names,
        )
        pooled_bin = binarize_midpoint(pooled)
        dataset.C_train_bin = pooled_bin.take_rows(slice(0, n_train))
        dataset.C_test_bin = pooled_bin.take_rows(slice(n_train, config.n))
        columns, threshold, y = make_downstream_labels(pooled_bin, [config.seed, 2])
        dataset.label_columns = tuple(int(c) for c in columns)
        dataset.label_threshold = int(threshold)
        dataset.y_train = y[:n_train]
        dataset.y_test = y[n_train:]
    return dataset
