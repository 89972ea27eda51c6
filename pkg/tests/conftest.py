"""Shared fixtures and small model factories used across the test suite."""

import numpy as np
import pytest

from koopman_robust import (
    VAN_DER_POL,
    NoiseSpec,
    SnapshotSet,
    TrainingConfig,
    build_poly_dictionary,
    fit_koopman,
    generate_training_data,
)


def make_operator(Q: int, seed: int, radius: float = 0.9) -> np.ndarray:
    """Random real Q x Q matrix rescaled to the given spectral radius.

    Redraws until every eigenvalue gap clears the degeneracy guard by a
    wide margin, so spectral tests never trip it by bad luck.
    """
    rng = np.random.default_rng(seed)
    while True:
        K = rng.standard_normal((Q, Q))
        lam = np.linalg.eigvals(K)
        gaps = np.abs(lam[:, None] - lam[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() > 1e-2 * np.abs(lam).max():
            return K * (radius / np.abs(lam).max())


def linear_snapshots(seed: int, n_state: int = 3, n_input: int = 1, M: int = 500):
    """Trajectory of a random stable discrete linear system x+ = Ax + Bu.

    Returns (snapshots, A, B) so tests can compare against the true map.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_state, n_state))
    A *= 0.9 / np.abs(np.linalg.eigvals(A)).max()
    B = rng.standard_normal((n_state, n_input))
    U = rng.uniform(-1.0, 1.0, size=(n_input, M + 1))
    X = np.empty((n_state, M + 1))
    X[:, 0] = rng.uniform(-1.0, 1.0, size=n_state)
    for m in range(M):
        X[:, m + 1] = A @ X[:, m] + B @ U[:, m]
    return SnapshotSet(X=X, U=U), A, B


def fit_random_model(seed: int, n_state: int = 2, degree: int = 2, M: int = 80):
    """Small trained model on random stable linear-system data."""
    for attempt in range(10):
        snaps, _, _ = linear_snapshots(seed + 1000 * attempt, n_state=n_state, M=M)
        dictionary = build_poly_dictionary(n_state, 1, degree)
        try:
            return fit_koopman(snaps, dictionary)
        except Exception:
            continue
    raise RuntimeError("could not build a non-degenerate random model")


@pytest.fixture(scope="session")
def vdp_clean():
    """Noise-free forced Van der Pol trajectory, M=2000 transitions."""
    cfg = TrainingConfig(M=2000, Ts=0.01, noise=NoiseSpec.zero(2), seed=7)
    clean, _ = generate_training_data(VAN_DER_POL, cfg)
    return clean


@pytest.fixture(scope="session")
def vdp_dict():
    return build_poly_dictionary(2, 1, 3)


@pytest.fixture(scope="session")
def vdp_model(vdp_clean, vdp_dict):
    return fit_koopman(vdp_clean, vdp_dict)
