"""Per-variable feature expansion and group-wise standardization.

Each scalar machine variable is mapped through the same element-wise feature
map (identity, B-spline basis, or random Fourier features), giving a block
design matrix with one group of columns per variable.  Groups are then
centered and whitened so that every group has empirical covariance I, which
is the preprocessing the group-sparse solver relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .data import as_values

EIG_RTOL = 1e-10  # relative eigenvalue floor below which a group is declared degenerate


@dataclass(frozen=True)
class FeatureSpec:
    """Element-wise feature map applied to every machine variable.

    kind is one of ``identity``, ``spline`` (uniform knots over the empirical
    range, ``knots + degree - 1`` basis functions) or ``rff`` (random Fourier
    features approximating exp(-gamma (x - y)^2), ``n_features`` columns).
    """

    kind: str
    knots: int = 4
    degree: int = 3
    n_features: int = 8
    gamma: float = 1.0
    seed: int = 0

    @classmethod
    def identity(cls) -> "FeatureSpec":
        return cls(kind="identity")

    @classmethod
    def spline(cls, knots: int = 4, degree: int = 3) -> "FeatureSpec":
        if knots < 2:
            raise ValueError("spline needs at least 2 knots")
        if degree < 1:
            raise ValueError("spline degree must be >= 1")
        return cls(kind="spline", knots=knots, degree=degree)

    @classmethod
    def rff(cls, n_features: int = 8, gamma: float = 1.0, seed: int = 0) -> "FeatureSpec":
        if n_features < 1:
            raise ValueError("rff needs at least one feature")
        if gamma <= 0:
            raise ValueError("rff bandwidth gamma must be positive")
        return cls(kind="rff", n_features=n_features, gamma=gamma, seed=seed)

    @property
    def features_per_variable(self) -> int:
        if self.kind == "identity":
            return 1
        if self.kind == "spline":
            return self.knots + self.degree - 1
        if self.kind == "rff":
            return self.n_features
        raise ValueError(f"unknown feature kind {self.kind!r}")

    def to_jsonable(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "spline":
            return {"kind": "spline", "knots": self.knots, "degree": self.degree}
        return {
            "kind": "rff",
            "n_features": self.n_features,
            "gamma": self.gamma,
            "seed": self.seed,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "FeatureSpec":
        kind = obj["kind"]
        if kind == "identity":
            return cls.identity()
        if kind == "spline":
            return cls.spline(int(obj["knots"]), int(obj["degree"]))
        if kind == "rff":
            return cls.rff(int(obj["n_features"]), float(obj["gamma"]), int(obj["seed"]))
        raise ValueError(f"unknown feature kind {kind!r}")


@dataclass(frozen=True)
class GroupStructure:
    """Partition of design columns into contiguous per-variable groups."""

    offsets: tuple[int, ...]

    def __post_init__(self):
        offsets = tuple(int(o) for o in self.offsets)
        if len(offsets) < 2 or offsets[0] != 0:
            raise ValueError("offsets must start at 0 and delimit at least one group")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("offsets must be strictly increasing")
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_sizes(cls, sizes) -> "GroupStructure":
        return cls(tuple(np.concatenate([[0], np.cumsum(sizes)]).astype(int)))

    @property
    def n_groups(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_columns(self) -> int:
        return self.offsets[-1]

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.offsets, self.offsets[1:]))

    @property
    def p_min(self) -> int:
        return min(self.group_sizes)

    @property
    def p_max(self) -> int:
        return max(self.group_sizes)

    def block(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j + 1])


def spline_features(x, knots: int, degree: int) -> np.ndarray:
    """B-spline basis of ``x`` with uniform knots over [min(x), max(x)].

    Returns an ``n x (knots + degree - 1)`` matrix.  Points outside the knot
    range are evaluated by extrapolating the boundary polynomial pieces.
    """
    basis = fit_spline_basis(x, knots, degree)
    return basis(np.asarray(x, dtype=float))


def rff_features(x, n_features: int, gamma: float, seed) -> np.ndarray:
    """Random Fourier features sqrt(2/p) cos(w_t x + b_t) for the RBF kernel.

    Frequencies are N(0, 2*gamma) so that E[z(x) . z(y)] = exp(-gamma (x-y)^2);
    output is deterministic given the seed.
    """
    basis = fit_rff_basis(n_features, gamma, seed)
    return basis(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class FittedFeatureMap:
    """A feature map frozen at fit time so new data maps identically.

    For splines this pins the knot vector (derived from the training range);
    for random Fourier features it pins the sampled frequencies and phases.
    """

    kind: str
    knot_vector: np.ndarray | None = None
    degree: int = 0
    drop_index: int = -1
    omega: np.ndarray | None = None
    phase: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        if self.kind == "identity":
            return 1
        if self.kind == "spline":
            return len(self.knot_vector) - self.degree - 2
        return len(self.omega)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("feature input contains non-finite values")
        if self.kind == "identity":
            return x[:, None].copy()
        if self.kind == "spline":
            full = len(self.knot_vector) - self.degree - 1
            spline = BSpline(self.knot_vector, np.eye(full), self.degree, extrapolate=True)
            return np.delete(spline(x), self.drop_index, axis=1)
        return np.sqrt(2.0 / self.n_features) * np.cos(np.outer(x, self.omega) + self.phase)

    def to_jsonable(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "spline":
            return {"kind": "spline", "knot_vector": self.knot_vector.tolist(),
                    "degree": self.degree, "drop_index": self.drop_index}
        return {"kind": "rff", "omega": self.omega.tolist(), "phase": self.phase.tolist()}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "FittedFeatureMap":
        kind = obj["kind"]
        if kind == "identity":
            return cls(kind="identity")
        if kind == "spline":
            return cls(kind="spline", knot_vector=np.asarray(obj["knot_vector"]),
                       degree=int(obj["degree"]), drop_index=int(obj["drop_index"]))
        return cls(kind="rff", omega=np.asarray(obj["omega"]), phase=np.asarray(obj["phase"]))


def fit_spline_basis(x, knots: int, degree: int) -> FittedFeatureMap:
    """Uniform-knot B-spline basis of exactly ``knots + degree - 1`` functions.

    Built from ``knots + 1`` uniformly spaced knots over [min(x), max(x)] with
    clamped boundaries, dropping the middle basis function.  The drop removes
    the constant vector from the basis span, which would otherwise make the
    centered group covariance exactly singular (the clamped basis is a
    partition of unity) and break the whitening step downstream.  Boundary
    behavior and polynomial extrapolation are unaffected.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples to place spline knots")
    if knots < 2 or degree < 1:
        raise ValueError("need knots >= 2 and degree >= 1")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature input contains non-finite values")
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        raise ValueError("zero-width knot range")
    interior = np.linspace(lo, hi, knots + 1)
    knot_vector = np.concatenate([np.full(degree, lo), interior, np.full(degree, hi)])
    full = knots + degree
    return FittedFeatureMap(kind="spline", knot_vector=knot_vector, degree=degree,
                            drop_index=full // 2)


def fit_rff_basis(n_features: int, gamma: float, seed) -> FittedFeatureMap:
    if n_features < 1:
        raise ValueError("rff needs at least one feature")
    if gamma <= 0:
        raise ValueError("rff bandwidth gamma must be positive")
    rng = np.random.default_rng(seed)
    omega = rng.normal(0.0, math.sqrt(2.0 * gamma), size=n_features)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n_features)
    return FittedFeatureMap(kind="rff", omega=omega, phase=phase)


RFF_COND_FLOOR = 1e-9  # relative eigenvalue floor a drawn basis must clear


def _fit_column_map(x, spec: FeatureSpec, column: int) -> FittedFeatureMap:
    if spec.kind == "identity":
        return FittedFeatureMap(kind="identity")
    if spec.kind == "spline":
        return fit_spline_basis(x, spec.knots, spec.degree)
    if spec.kind == "rff":
        # Independent deterministic stream per column so expansion order and
        # parallel schedule cannot change the result.  Draws whose low
        # frequencies make the basis numerically collinear on this column's
        # range (several near-affine cosines) are rejected and redrawn from
        # the next derived stream; identifiability within the group is a hard
        # requirement of the whitening step downstream.
        for attempt in range(50):
            basis = fit_rff_basis(spec.n_features, spec.gamma, [spec.seed, column, attempt])
            if len(x) <= spec.n_features:
                return basis  # the n > p check happens at standardization
            block = basis(x)
            centered = block - block.mean(axis=0)
            eigvals = np.linalg.eigvalsh(centered.T @ centered / len(x))
            if eigvals[0] > RFF_COND_FLOOR * max(eigvals[-1], 1e-300):
                return basis
        raise ValueError(
            f"random Fourier basis stayed degenerate on this input after 50 draws "
            f"(p={spec.n_features} may be too large for the data range)"
        )
    raise ValueError(f"unknown feature kind {spec.kind!r}")


@dataclass
class GroupTransform:
    """Centering vector and whitening matrix of one group, fixed at fit time."""

    mean: np.ndarray
    whiten: np.ndarray

    def apply(self, block: np.ndarray) -> np.ndarray:
        return (block - self.mean) @ self.whiten

    def to_jsonable(self) -> dict:
        return {"mean": self.mean.tolist(), "whiten": self.whiten.tolist()}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "GroupTransform":
        return cls(np.asarray(obj["mean"]), np.asarray(obj["whiten"]))


@dataclass
class FeatureExpansion:
    """Expanded design matrix plus everything needed to map new data.

    ``design`` is ``n x sum(p_j)``; ``column_maps[j]`` is the fitted feature
    map of variable j; ``transforms[j]`` is the group's standardization
    (present only after :func:`standardize_groups`).
    """

    design: np.ndarray
    groups: GroupStructure
    column_maps: list[FittedFeatureMap]
    transforms: list[GroupTransform] | None = None

    @property
    def n_samples(self) -> int:
        return self.design.shape[0]

    @property
    def standardized(self) -> bool:
        return self.transforms is not None

    def group_design(self, j: int) -> np.ndarray:
        return self.design[:, self.groups.block(j)]

    def group_features(self, j: int, x_new) -> np.ndarray:
        """Feature block of variable j for new data, standardized if fitted."""
        block = self.column_maps[j](np.asarray(x_new, dtype=float))
        if self.transforms is not None:
            block = self.transforms[j].apply(block)
        return block

    def transform_new(self, M_new) -> np.ndarray:
        """Full design for new data under the recorded maps and transforms."""
        values = as_values(M_new)
        if values.shape[1] != self.groups.n_groups:
            raise ValueError(
                f"expected {self.groups.n_groups} variables, got {values.shape[1]}"
            )
        return np.hstack([self.group_features(j, values[:, j]) for j in range(self.groups.n_groups)])


def expand(M, spec: FeatureSpec) -> FeatureExpansion:
    """Apply the same element-wise feature map to every machine variable.

    Returns the unstandardized block design ``[phi(M_1) | ... | phi(M_d)]``
    with a :class:`GroupStructure` recording each variable's column block.
    """
    values = as_values(M)
    n, d = values.shape
    if n < 2 or d < 1:
        raise ValueError(f"need at least 2 samples and 1 variable, got shape {values.shape}")
    maps = []
    blocks = []
    for j in range(d):
        try:
            fitted = _fit_column_map(values[:, j], spec, j)
            blocks.append(fitted(values[:, j]))
        except ValueError as exc:
            raise ValueError(f"column {j}: {exc}") from exc
        maps.append(fitted)
    groups = GroupStructure.from_sizes([b.shape[1] for b in blocks])
    return FeatureExpansion(np.hstack(blocks), groups, maps)


def _inverse_sqrt_psd(cov: np.ndarray, j: int) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] <= EIG_RTOL * max(eigvals[-1], 0.0):
        raise ValueError(
            f"identifiability fails within group {j}: covariance eigenvalue ratio "
            f"{eigvals[0]:.3e} / {eigvals[-1]:.3e} below {EIG_RTOL:g}"
        )
    return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T


def standardize_groups(expansion: FeatureExpansion) -> FeatureExpansion:
    """Center each group and whiten it by the symmetric inverse square root.

    After this, every group satisfies mean(Phi_j) = 0 and (1/n) Phi_j' Phi_j = I.
    The per-group transforms are recorded so held-out data maps identically.
    """
    n = expansion.n_samples
    groups = expansion.groups
    design = np.empty_like(expansion.design)
    transforms = []
    for j in range(groups.n_groups):
        block = expansion.group_design(j)
        p_j = block.shape[1]
        if n <= p_j:
            raise ValueError(f"group {j}: need n > p_j ({n} <= {p_j})")
        mean = block.mean(axis=0)
        centered = block - mean
        cov = centered.T @ centered / n
        whiten = _inverse_sqrt_psd(cov, j)
        design[:, groups.block(j)] = centered @ whiten
        transforms.append(GroupTransform(mean=mean, whiten=whiten))
    return FeatureExpansion(design, groups, expansion.column_maps, transforms)


@dataclass(frozen=True)
class IncoherenceReport:
    """Cross-group correlation diagnostic against the incoherence bounds.

    ``max_diagonal`` is the largest |(S_jj')_tt| over group pairs, and
    ``max_offdiagonal`` the largest |(S_jj')_tt'| with t != t'.  The bounds
    checked are sqrt(p_min/p_max)/(14 a) for diagonal entries and the same
    divided by sqrt(p_j p_j') for off-diagonal entries of each pair.
    """

    a: float
    max_diagonal: float
    diagonal_pair: tuple[int, int] | None
    max_offdiagonal: float
    offdiagonal_pair: tuple[int, int] | None
    diagonal_bound: float
    offdiagonal_bound_at_max: float | None
    diagonal_ok: bool
    offdiagonal_ok: bool

    @property
    def satisfied(self) -> bool:
        return self.diagonal_ok and self.offdiagonal_ok


def check_incoherence(expansion: FeatureExpansion, a: float) -> IncoherenceReport:
    """Diagnostic check of the cross-group covariance bounds for a given a > 1.

    Never raises on violation; the result is advisory only.
    """
    if a <= 1:
        raise ValueError("incoherence constant a must be > 1")
    groups = expansion.groups
    n = expansion.n_samples
    scale = math.sqrt(groups.p_min / groups.p_max) / (14.0 * a)

    max_diag, diag_pair = 0.0, None
    max_off, off_pair = 0.0, None
    diag_ok, off_ok = True, True
    off_bound_at_max = None
    for j in range(groups.n_groups):
        for k in range(j + 1, groups.n_groups):
            block = expansion.group_design(j).T @ expansion.group_design(k) / n
            diag = np.abs(np.diagonal(block))
            if diag.size and diag.max() > max_diag:
                max_diag, diag_pair = float(diag.max()), (j, k)
            if diag.size and diag.max() > scale:
                diag_ok = False
            off = np.abs(block).copy()
            np.fill_diagonal(off, 0.0)
            pair_bound = scale / math.sqrt(block.shape[0] * block.shape[1])
            if off.max() > max_off:
                max_off, off_pair = float(off.max()), (j, k)
                off_bound_at_max = pair_bound
            if off.max() > pair_bound:
                off_ok = False
    return IncoherenceReport(
        a=a,
        max_diagonal=max_diag,
        diagonal_pair=diag_pair,
        max_offdiagonal=max_off,
        offdiagonal_pair=off_pair,
        diagonal_bound=scale,
        offdiagonal_bound_at_max=off_bound_at_max,
        diagonal_ok=diag_ok,
        offdiagonal_ok=off_ok,
    )
