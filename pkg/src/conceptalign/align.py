"""Permutation recovery from group norms, correlation baselines, and the
assembled alignment model mapping machine variables to concepts."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .data import SampleMatrix, as_values
from .features import FeatureExpansion, FittedFeatureMap
from .glasso import GroupLassoFit
from .kernels import GroupKernelBasis, KernelFit, KernelSpec, gram


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0..d-1}; ``mapping[i]`` is the matched index of i."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(x) for x in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"not a bijection on 0..{len(mapping) - 1}: {mapping}")
        object.__setattr__(self, "mapping", mapping)

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, i: int) -> int:
        return self.mapping[i]

    def __iter__(self):
        return iter(self.mapping)


def _assignment_value(N: np.ndarray) -> float:
    if N.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(N.max() - N)
    return float(N[rows, cols].sum())


def match_permutation(N) -> Permutation:
    """Maximize sum_i N[i, pi(i)] over permutations (assignment problem).

    Solved in O(d^3) as a minimization of max(N) - N.  Among maximizers the
    lexicographically smallest mapping is returned, fixed one row at a time.
    """
    N = np.asarray(N, dtype=float)
    if N.ndim != 2 or N.shape[0] != N.shape[1]:
        raise ValueError(f"group-norm matrix must be square, got shape {N.shape}")
    if not np.all(np.isfinite(N)):
        raise ValueError("group-norm matrix must be finite")
    d = N.shape[0]
    tol = 1e-9 * float(np.abs(N).max()) * d
    remaining = _assignment_value(N)
    available = list(range(d))
    mapping = []
    for i in range(d):
        for j in available:
            rest = [c for c in available if c != j]
            tail = _assignment_value(N[np.ix_(range(i + 1, d), rest)])
            if N[i, j] + tail >= remaining - tol:
                mapping.append(j)
                available.remove(j)
                remaining -= N[i, j]
                break
    return Permutation(tuple(mapping))


class NaiveAssignment(NamedTuple):
    mapping: np.ndarray
    is_bijection: bool


def naive_assignment(N) -> NaiveAssignment:
    """Row-wise argmax of the norm matrix; may fail to be a permutation."""
    N = np.asarray(N, dtype=float)
    mapping = N.argmax(axis=1)
    return NaiveAssignment(mapping, len(set(mapping.tolist())) == N.shape[0])


def _abs_correlation(C: np.ndarray, M: np.ndarray) -> np.ndarray:
    out = np.zeros((C.shape[1], M.shape[1]))
    C_c = C - C.mean(axis=0)
    M_c = M - M.mean(axis=0)
    C_s = np.linalg.norm(C_c, axis=0)
    M_s = np.linalg.norm(M_c, axis=0)
    dead = [("concept", i) for i in np.flatnonzero(C_s == 0)]
    dead += [("machine", j) for j in np.flatnonzero(M_s == 0)]
    for kind, idx in dead:
        warnings.warn(f"zero-variance {kind} column {idx}: correlations set to 0")
    ok_c = C_s > 0
    ok_m = M_s > 0
    num = C_c[:, ok_c].T @ M_c[:, ok_m]
    out[np.ix_(ok_c, ok_m)] = np.abs(num / np.outer(C_s[ok_c], M_s[ok_m]))
    return out


def correlation_matching(C, M, method: str = "pearson") -> Permutation:
    """Match concepts to machine variables by |correlation| and assignment.

    Spearman uses Pearson on average ranks, so monotone transformed pairs
    correlate to exactly 1.
    """
    C_v = as_values(C)
    M_v = as_values(M)
    if C_v.shape[0] != M_v.shape[0]:
        raise ValueError("concept and machine tables need equal row counts")
    if method == "spearman":
        C_v = np.apply_along_axis(rankdata, 0, C_v)
        M_v = np.apply_along_axis(rankdata, 0, M_v)
    elif method != "pearson":
        raise ValueError(f"unknown correlation method {method!r}")
    return match_permutation(_abs_correlation(C_v, M_v))


@dataclass
class ConceptRegressor:
    """Single-concept predictor using only the matched machine variable.

    For ``linear``/``logistic`` kinds: value = intercept + standardized
    feature block of the matched variable dotted with ``coef`` (passed through
    a sigmoid for logistic).  For ``kernel``: value = intercept +
    sum_l kappa(x, x_ref_l) dual_coef_l.
    """

    kind: str
    group: int
    intercept: float = 0.0
    feature_map: FittedFeatureMap | None = None
    mean: np.ndarray | None = None
    whiten: np.ndarray | None = None
    coef: np.ndarray | None = None
    kernel: KernelSpec | None = None
    x_ref: np.ndarray | None = None
    dual_coef: np.ndarray | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "kernel":
            raw = self.intercept + gram(self.kernel, x, self.x_ref) @ self.dual_coef
            return raw
        block = (self.feature_map(x) - self.mean) @ self.whiten
        raw = self.intercept + block @ self.coef
        if self.kind == "logistic":
            return 1.0 / (1.0 + np.exp(-raw))
        return raw

    def to_jsonable(self) -> dict:
        obj = {"kind": self.kind, "group": self.group, "intercept": self.intercept}
        if self.kind == "kernel":
            obj["kernel"] = self.kernel.to_jsonable()
            obj["x_ref"] = self.x_ref.tolist()
            obj["dual_coef"] = self.dual_coef.tolist()
        else:
            obj["feature_map"] = self.feature_map.to_jsonable()
            obj["mean"] = self.mean.tolist()
            obj["whiten"] = self.whiten.tolist()
            obj["coef"] = self.coef.tolist()
        return obj

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ConceptRegressor":
        kind = obj["kind"]
        if kind == "kernel":
            return cls(
                kind=kind, group=int(obj["group"]), intercept=float(obj["intercept"]),
                kernel=KernelSpec.from_jsonable(obj["kernel"]),
                x_ref=np.asarray(obj["x_ref"], dtype=float),
                dual_coef=np.asarray(obj["dual_coef"], dtype=float),
            )
        return cls(
            kind=kind, group=int(obj["group"]), intercept=float(obj["intercept"]),
            feature_map=FittedFeatureMap.from_jsonable(obj["feature_map"]),
            mean=np.asarray(obj["mean"], dtype=float),
            whiten=np.asarray(obj["whiten"], dtype=float),
            coef=np.asarray(obj["coef"], dtype=float),
        )


@dataclass
class AlignmentModel:
    """Estimated permutation plus one hard-sparsified regressor per concept.

    Concept i is predicted from machine variable ``permutation[i]`` only; all
    other groups' coefficients are dropped at assembly time.
    """

    permutation: Permutation
    regressors: list[ConceptRegressor]
    concept_names: tuple[str, ...] = ()

    FORMAT_VERSION = 1

    def __post_init__(self):
        if not self.concept_names:
            self.concept_names = tuple(f"c{i}" for i in range(len(self.regressors)))

    def predict(self, M_new) -> SampleMatrix:
        values = as_values(M_new)
        d_machine = max((reg.group for reg in self.regressors), default=-1) + 1
        if values.shape[1] < d_machine:
            raise ValueError(
                f"model expects at least {d_machine} machine variables, got {values.shape[1]}"
            )
        columns = [reg.predict(values[:, reg.group]) for reg in self.regressors]
        out = np.column_stack(columns) if columns else np.zeros((values.shape[0], 0))
        if values.shape[0] == 0:
            out = np.zeros((0, len(self.regressors)))
        return SampleMatrix(out, self.concept_names)

    def to_json(self) -> str:
        return json.dumps({
            "version": self.FORMAT_VERSION,
            "permutation": list(self.permutation),
            "concept_names": list(self.concept_names),
            "regressors": [reg.to_jsonable() for reg in self.regressors],
        })

    @classmethod
    def from_json(cls, text: str) -> "AlignmentModel":
        obj = json.loads(text)
        if obj.get("version") != cls.FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {obj.get('version')!r}")
        return cls(
            permutation=Permutation(tuple(obj["permutation"])),
            regressors=[ConceptRegressor.from_jsonable(r) for r in obj["regressors"]],
            concept_names=tuple(obj["concept_names"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as handle:
            handle.write(self.to_json())

    @classmethod
    def load(cls, path) -> "AlignmentModel":
        with open(path) as handle:
            return cls.from_json(handle.read())


def build_alignment_model(fits: list[GroupLassoFit], permutation: Permutation,
                          expansion: FeatureExpansion, target_means=None,
                          logistic: bool = False,
                          concept_names: tuple[str, ...] = ()) -> AlignmentModel:
    """Assemble per-concept regressors, keeping only the matched group.

    ``expansion`` supplies the fitted feature maps and standardization
    transforms of the training design.  ``target_means`` (squared loss only)
    become per-concept intercepts, so a zero coefficient block predicts the
    training mean of that concept.
    """
    if len(fits) != len(permutation):
        raise ValueError("need one fit per concept")
    if not expansion.standardized:
        raise ValueError("expansion must be standardized before model assembly")
    if target_means is None:
        target_means = np.zeros(len(fits))
    regressors = []
    for i, fit in enumerate(fits):
        j = permutation[i]
        transform = expansion.transforms[j]
        regressors.append(ConceptRegressor(
            kind="logistic" if logistic else "linear",
            group=j,
            intercept=fit.intercept if logistic else float(target_means[i]),
            feature_map=expansion.column_maps[j],
            mean=transform.mean.copy(),
            whiten=transform.whiten.copy(),
            coef=np.asarray(fit.beta[expansion.groups.block(j)], dtype=float).copy(),
        ))
    return AlignmentModel(permutation, regressors, tuple(concept_names))


def build_kernel_alignment_model(fits: list[KernelFit], permutation: Permutation,
                                 bases: list[GroupKernelBasis], target_means=None,
                                 targets=None,
                                 concept_names: tuple[str, ...] = ()) -> AlignmentModel:
    """Kernel counterpart of :func:`build_alignment_model`.

    Kernel fitted values are not mean-zero on the training data, so when the
    training ``targets`` are given, each concept's intercept is set to the
    mean residual of its kept block (the optimal constant offset); otherwise
    ``target_means`` is used verbatim as the intercepts.
    """
    if len(fits) != len(permutation):
        raise ValueError("need one fit per concept")
    if targets is not None:
        target_values = as_values(targets)
        target_means = np.empty(len(fits))
        for i, fit in enumerate(fits):
            j = permutation[i]
            kept = bases[j].factor @ fit.gammas[j]
            target_means[i] = float(np.mean(target_values[:, i] - kept))
    elif target_means is None:
        target_means = np.zeros(len(fits))
    regressors = []
    for i, fit in enumerate(fits):
        j = permutation[i]
        basis = bases[j]
        regressors.append(ConceptRegressor(
            kind="kernel",
            group=j,
            intercept=float(target_means[i]),
            kernel=basis.spec,
            x_ref=basis.x_ref.copy(),
            dual_coef=basis.dual_coefficients(fit.gammas[j]),
        ))
    return AlignmentModel(permutation, regressors, tuple(concept_names))


def predict_concepts(model: AlignmentModel, M_new) -> SampleMatrix:
    """Predicted concept table; probabilities in [0, 1] for logistic models."""
    return model.predict(M_new)
