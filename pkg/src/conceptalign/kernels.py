"""Kernelized alignment: Gram matrices, Cholesky reparametrization, Nystrom
landmarks, and the kernel Group Lasso fit.

The kernel objective per concept is

    (1/n) ||C_i - sum_j K_j c^j||^2 + lambda * sum_j ||c^j||_{K_j},

which, writing K_j = L_j L_j' and gamma^j = L_j' c^j, is an ordinary Group
Lasso in gamma with unit group weights.  Group norms transfer exactly:
||gamma^j|| = sqrt(c^j' K_j c^j).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .data import as_values
from .features import GroupStructure
from .glasso import SolverOptions, group_norms, solve_group_lasso


@dataclass(frozen=True)
class KernelSpec:
    """One of the closed-form kernels: polynomial, rbf, laplacian, cosine."""

    kind: str
    degree: int = 3
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "rbf", "laplacian", "cosine"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        if self.kind == "rbf" and self.gamma <= 0:
            raise ValueError("rbf bandwidth gamma must be positive")

    def to_jsonable(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "gamma": self.gamma}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "KernelSpec":
        return cls(obj["kind"], int(obj.get("degree", 3)), float(obj.get("gamma", 1.0)))


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"kernel input must be 1-D or 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("kernel input contains non-finite values")
    return x


def gram(spec: KernelSpec, x, x2=None) -> np.ndarray:
    """Exact Gram matrix kappa(x_i, y_j); symmetric when ``x2`` is omitted.

    kappa_pol = (1 + <x,y>)^deg, kappa_rbf = exp(-gamma ||x-y||^2),
    kappa_lap = exp(-||x-y||), kappa_cos = cos(<x,y>).
    """
    symmetric = x2 is None
    a = _as_points(x)
    b = a if symmetric else _as_points(x2)
    if a.shape[1] != b.shape[1]:
        raise ValueError("kernel inputs have mismatched dimensionality")

    if spec.kind in ("polynomial", "cosine"):
        inner = a @ b.T
        K = (1.0 + inner) ** spec.degree if spec.kind == "polynomial" else np.cos(inner)
    else:
        sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
        K = np.exp(-spec.gamma * sq) if spec.kind == "rbf" else np.exp(-np.sqrt(sq))
    if symmetric:
        K = 0.5 * (K + K.T)
    return K


class CholeskyFactor(NamedTuple):
    L: np.ndarray
    jitter: float


def chol_psd(K, start_jitter: float = 1e-12, max_jitter: float = 1e-6) -> CholeskyFactor:
    """Lower Cholesky factor of a PSD matrix, adding escalating diagonal jitter.

    On failure the diagonal is inflated by eps * trace(K)/n with eps stepping
    start_jitter -> max_jitter in factors of 10; the applied eps is returned.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("Gram matrix must be square")
    if not np.allclose(K, K.T, atol=1e-12, rtol=0.0):
        raise ValueError("Gram matrix must be symmetric")
    scale = np.trace(K) / K.shape[0]
    try:
        return CholeskyFactor(np.linalg.cholesky(K), 0.0)
    except np.linalg.LinAlgError:
        pass
    eps = start_jitter
    while eps <= max_jitter * (1.0 + 1e-12):
        try:
            L = np.linalg.cholesky(K + eps * scale * np.eye(K.shape[0]))
            return CholeskyFactor(L, eps)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise ValueError("Gram matrix not PSD within jitter budget")


def nystrom_landmarks(spec: KernelSpec, x, m: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniform landmark subsample and reduced features F with F F' ~ K.

    F = K_{n,m} chol(K_{m,m})^{-T}; with m = n the approximation is exact.
    """
    pts = _as_points(x)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=m, replace=False))
    ref = pts[indices]
    K_nm = gram(spec, pts, ref)
    L_mm = chol_psd(gram(spec, ref)).L
    reduced = solve_triangular(L_mm, K_nm.T, lower=True).T
    return indices, reduced


@dataclass
class GroupKernelBasis:
    """Per-variable kernel design block, exact or Nystrom-reduced.

    ``factor`` is the Group Lasso design block (chol(K) or the Nystrom F);
    ``x_ref`` holds the points the dual coefficients attach to (all training
    points, or the landmarks); ``ref_chol`` converts gamma back to those dual
    coefficients via c = ref_chol^{-T} gamma.
    """

    spec: KernelSpec
    x_ref: np.ndarray
    factor: np.ndarray
    ref_chol: np.ndarray
    landmark_indices: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.factor.shape[1]

    def dual_coefficients(self, gamma: np.ndarray) -> np.ndarray:
        return solve_triangular(self.ref_chol.T, gamma, lower=False)

    def predict(self, x_new, dual_coef: np.ndarray) -> np.ndarray:
        return gram(self.spec, np.asarray(x_new, dtype=float), self.x_ref) @ dual_coef


def build_kernel_basis(spec: KernelSpec, x, m: int | None = None, seed=0) -> GroupKernelBasis:
    """Exact Cholesky basis, or a Nystrom basis when m < n is given."""
    pts = _as_points(x)
    n = pts.shape[0]
    if m is None or m >= n:
        L = chol_psd(gram(spec, pts)).L
        return GroupKernelBasis(spec=spec, x_ref=pts, factor=L, ref_chol=L)
    indices, reduced = nystrom_landmarks(spec, pts, m, seed)
    L_mm = chol_psd(gram(spec, pts[indices])).L
    return GroupKernelBasis(
        spec=spec, x_ref=pts[indices], factor=reduced, ref_chol=L_mm,
        landmark_indices=indices,
    )


@dataclass
class KernelFit:
    """Kernel Group Lasso solution for one concept.

    ``gammas[j]`` are the reparametrized coordinates; ``coefficients[j]`` the
    dual coefficients on the reference points (for exact groups these satisfy
    beta_j = sum_l kappa(., x_l) c_l).  group_norms[j] = ||gamma^j|| equals
    ||c^j||_{K_j}.
    """

    coefficients: list[np.ndarray]
    gammas: list[np.ndarray]
    group_norms: np.ndarray
    lam: float
    objective_value: float
    iterations: int
    kkt_residual: float
    landmark_indices: list[np.ndarray | None] | None = None


def fit_kernel_group_lasso(target, grams: list, lam: float,
                           opts: SolverOptions | None = None) -> KernelFit:
    """Solve the kernel Group Lasso given per-group Gram matrices.

    Each entry of ``grams`` is either an n x n Gram matrix (factored here by
    Cholesky) or a pre-reduced n x m Nystrom factor (used as the design block
    directly, with coefficients reported in the reduced coordinates).
    Group weights are uniform (unweighted ||gamma||_{2,1}).
    """
    target = np.asarray(target, dtype=float).ravel()
    n = target.shape[0]
    factors = []
    chols = []
    for j, G in enumerate(grams):
        G = np.asarray(G, dtype=float)
        if G.shape[0] != n:
            raise ValueError(f"group {j}: matrix has {G.shape[0]} rows, target has {n}")
        if G.shape[0] == G.shape[1]:
            L = chol_psd(G).L
            factors.append(L)
            chols.append(L)
        else:
            factors.append(G)
            chols.append(None)
    return _fit_on_factors(target, factors, chols, lam, opts)


def _fit_on_factors(target, factors, chols, lam, opts) -> KernelFit:
    groups = GroupStructure.from_sizes([f.shape[1] for f in factors])
    design = np.hstack(factors)
    gamma, obj, iters, res = solve_group_lasso(
        design, target, groups, lam, opts,
        group_weights=np.ones(groups.n_groups), assume_whitened=False,
    )
    gammas = [gamma[groups.block(j)] for j in range(groups.n_groups)]
    coefficients = []
    for g, L in zip(gammas, chols):
        if L is None:
            coefficients.append(g.copy())
        else:
            coefficients.append(solve_triangular(L.T, g, lower=False))
    return KernelFit(
        coefficients=coefficients,
        gammas=gammas,
        group_norms=group_norms(gamma, groups),
        lam=lam,
        objective_value=float(obj),
        iterations=int(iters),
        kkt_residual=float(res),
    )


def fit_kernel_concepts(C, M, spec: KernelSpec, lam: float, m: int | None = 20,
                        seed=0, opts: SolverOptions | None = None,
                        ) -> tuple[np.ndarray, list[KernelFit], list[GroupKernelBasis]]:
    """Fit the kernel Group Lasso for every concept column.

    ``m`` caps the Nystrom landmark count per group (None for exact Grams);
    the default of 20 keeps the per-group design at min(n, 20) columns.
    Returns the group-norm matrix N[i, j] = ||gamma_i^j||, the per-concept
    fits, and the shared per-group bases.
    """
    C_values = as_values(C)
    M_values = as_values(M)
    if C_values.shape[0] != M_values.shape[0]:
        raise ValueError("concept and machine tables need equal row counts")
    d = M_values.shape[1]
    bases = [
        build_kernel_basis(spec, M_values[:, j], m=m, seed=[seed, j])
        for j in range(d)
    ]
    factors = [b.factor for b in bases]
    chols = [b.ref_chol for b in bases]
    fits = []
    for i in range(C_values.shape[1]):
        fit = _fit_on_factors(C_values[:, i], factors, chols, lam, opts)
        fit.landmark_indices = [b.landmark_indices for b in bases]
        fits.append(fit)
    norm_matrix = np.vstack([fit.group_norms for fit in fits])
    return norm_matrix, fits, bases
