"""Evaluation metrics: permutation error, diagonal R^2, accuracies, and the
impurity scores (how much each concept leaks into the others).

The impurity estimators are deliberately simple and fully specified here:
held-out performance of one-variable predictors (oracle impurity) or
leave-one-out joint predictors (niche impurity), on a seeded 50/50 internal
split, with binary performance rescaled so that majority-class guessing
scores 0 and perfect prediction scores 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import LinearRegression, LogisticRegression

from .data import as_values


@dataclass
class MetricReport:
    """One evaluated pipeline cell; optional fields stay None when unused."""

    mpe: float
    r2_diag: float | None = None
    concept_acc: float | None = None
    label_acc: float | None = None
    ois: float | None = None
    nis: float | None = None
    wall_time_ms: dict[str, float] = field(default_factory=dict)


def mpe(estimated, truth) -> float:
    """Fraction of positions where the two permutations disagree."""
    est = np.asarray(list(estimated), dtype=int)
    ref = np.asarray(list(truth), dtype=int)
    if est.shape != ref.shape:
        raise ValueError(f"permutation lengths differ: {est.shape[0]} vs {ref.shape[0]}")
    return float(np.mean(est != ref))


def r2_diagonal(C_test, C_pred) -> float:
    """Mean over concepts of 1 - SSE/SST, SST around each test column's mean."""
    truth = as_values(C_test)
    pred = as_values(C_pred)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {pred.shape}")
    sse = np.sum((truth - pred) ** 2, axis=0)
    sst = np.sum((truth - truth.mean(axis=0)) ** 2, axis=0)
    if np.any(sst == 0):
        bad = int(np.flatnonzero(sst == 0)[0])
        raise ValueError(f"true concept column {bad} is constant; R^2 undefined")
    return float(np.mean(1.0 - sse / sst))


def accuracies(C_bin_true, C_bin_pred, y_true, y_pred) -> tuple[float, float]:
    """(mean cell-wise concept agreement, label agreement)."""
    ct = as_values(C_bin_true)
    cp = as_values(C_bin_pred)
    if ct.shape != cp.shape:
        raise ValueError(f"concept shape mismatch: {ct.shape} vs {cp.shape}")
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError("label vectors have different lengths")
    return float(np.mean(ct == cp)), float(np.mean(y_true == y_pred))


def _is_binary(column: np.ndarray) -> bool:
    return bool(np.all(np.isin(column, (0.0, 1.0))))


def _held_out_performance(X_train, y_train, X_eval, y_eval, binary: bool) -> float:
    """Rescaled held-out score of a predictor X -> y; 0 at chance, 1 at perfect."""
    if binary:
        classes = np.unique(y_train)
        prior = np.mean(y_eval == (np.bincount(y_eval.astype(int), minlength=2).argmax()))
        if classes.size < 2 or prior >= 1.0:
            warnings.warn("degenerate binary target in impurity split: chance-level entry")
            return 0.0
        model = LogisticRegression(max_iter=1000)
        model.fit(X_train, y_train)
        acc = float(np.mean(model.predict(X_eval) == y_eval))
        return float(np.clip((acc - prior) / (1.0 - prior), 0.0, 1.0))
    if np.ptp(y_eval) == 0 or np.ptp(y_train) == 0:
        warnings.warn("degenerate continuous target in impurity split: chance-level entry")
        return 0.0
    model = LinearRegression()
    model.fit(X_train, y_train)
    pred = model.predict(X_eval)
    sst = float(np.sum((y_eval - y_eval.mean()) ** 2))
    sse = float(np.sum((y_eval - pred) ** 2))
    return float(np.clip(1.0 - sse / sst, 0.0, 1.0))


def _impurity_split(n: int, split_seed) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(split_seed).permutation(n)
    half = n // 2
    return order[:half], order[half:]


def _impurity_matrix(sources: np.ndarray, targets: np.ndarray,
                     train_rows: np.ndarray, eval_rows: np.ndarray) -> np.ndarray:
    d_src, d_tgt = sources.shape[1], targets.shape[1]
    out = np.zeros((d_src, d_tgt))
    for j in range(d_tgt):
        target = targets[:, j]
        binary = _is_binary(target)
        for i in range(d_src):
            X = sources[:, [i]]
            out[i, j] = _held_out_performance(
                X[train_rows], target[train_rows], X[eval_rows], target[eval_rows], binary
            )
    return out


def ois(C_pred, C_true, split_seed=0) -> float:
    """Oracle impurity: ||Pi_hat - Pi||_F / d.

    Pi_hat[i, j] is the held-out performance of a one-variable predictor from
    predicted concept i to true concept j; Pi uses true concept i instead.
    """
    pred = as_values(C_pred)
    truth = as_values(C_true)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    n, d = truth.shape
    if n < 40:
        raise ValueError(f"impurity scores need n >= 40 for the internal split, got {n}")
    train_rows, eval_rows = _impurity_split(n, split_seed)
    pi_hat = _impurity_matrix(pred, truth, train_rows, eval_rows)
    pi = _impurity_matrix(truth, truth, train_rows, eval_rows)
    return float(np.linalg.norm(pi_hat - pi) / d)


def nis(C_pred, C_true, split_seed=0) -> float:
    """Niche impurity: mean over j of the leave-one-out leakage excess.

    For each target concept j, a joint predictor from all predicted concepts
    except j is compared with the oracle predictor from the true concepts
    except j; only positive excess counts.
    """
    pred = as_values(C_pred)
    truth = as_values(C_true)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    n, d = truth.shape
    if n < 40:
        raise ValueError(f"impurity scores need n >= 40 for the internal split, got {n}")
    if d < 2:
        raise ValueError("niche impurity needs at least two concepts")
    train_rows, eval_rows = _impurity_split(n, split_seed)
    excess = []
    for j in range(d):
        rest = [k for k in range(d) if k != j]
        target = truth[:, j]
        binary = _is_binary(target)
        perf_pred = _held_out_performance(
            pred[np.ix_(train_rows, rest)], target[train_rows],
            pred[np.ix_(eval_rows, rest)], target[eval_rows], binary,
        )
        perf_true = _held_out_performance(
            truth[np.ix_(train_rows, rest)], target[train_rows],
            truth[np.ix_(eval_rows, rest)], target[eval_rows], binary,
        )
        excess.append(max(0.0, perf_pred - perf_true))
    return float(np.mean(excess))
