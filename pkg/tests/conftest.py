import numpy as np
import pytest

from conceptalign import FeatureSpec, GroupStructure, expand, standardize_groups


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def whitened_identity_design(n, d, seed=0, rho=0.0):
    """Standardized identity-feature design plus its expansion."""
    from conceptalign import sample_correlated_gaussian

    M = sample_correlated_gaussian(n, d, rho, seed)
    return standardize_groups(expand(M, FeatureSpec.identity())), M


def exactly_orthonormal_design(n, sizes, seed=0):
    """Design whose groups satisfy (1/n) X_j' X_j = I to machine precision."""
    rng = np.random.default_rng(seed)
    P = sum(sizes)
    Q, _ = np.linalg.qr(rng.normal(size=(n, P)))
    X = np.sqrt(n) * Q[:, :P]
    return X, GroupStructure.from_sizes(sizes)
