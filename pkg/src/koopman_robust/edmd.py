"""Koopman operator estimation from snapshot data.

Given snapshots (x_m, u_m) and a dictionary, the one-step operator K is
the least-squares solution of Psi_{m+1} ~ Psi_m K, obtained through the
empirical Gram matrices

    G = (1/M) sum_m Psi_m^T Psi_m,      A = (1/M) sum_m Psi_m^T Psi_{m+1},

as K = pinv(G) A.  The spectral decomposition of K provides eigenvalues,
biorthogonal left/right eigenvector pairs, and the reassembly matrix F
used for fast prediction.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dictionary import Dictionary, evaluate, evaluate_batch
from .errors import DegenerateSpectrumError, NonFiniteDataError

Array = np.ndarray

DEFAULT_SVD_TOL = 1e-10
DEFAULT_DEGENERACY_TOL = 1e-8
DEFAULT_IMAG_TOL = 1e-8


@dataclass
class SnapshotSet:
    """A contiguous trajectory of M+1 state/input snapshots.

    X has shape (n_state, M+1) and U (n_input, M+1); column m holds the
    values at step m.  Consecutive columns must be genuine one-step pairs
    of the underlying system, since every Gram-matrix sum runs over the
    pairs (m, m+1).
    """

    X: Array
    U: Array

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        if self.X.ndim != 2 or self.U.ndim != 2:
            raise ValueError("X and U must be 2-D arrays")
        if self.X.shape[1] != self.U.shape[1]:
            raise ValueError(
                f"X has {self.X.shape[1]} columns but U has {self.U.shape[1]}"
            )
        if self.X.shape[1] < 2:
            raise ValueError("need at least two snapshots (one transition)")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.U))):
            raise NonFiniteDataError("snapshots contain non-finite values")

    @property
    def n_state(self) -> int:
        return self.X.shape[0]

    @property
    def n_input(self) -> int:
        return self.U.shape[0]

    @property
    def M(self) -> int:
        """Number of transitions (columns minus one)."""
        return self.X.shape[1] - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = (
                ["m"]
                + [f"x{i + 1}" for i in range(self.n_state)]
                + [f"u{i + 1}" for i in range(self.n_input)]
            )
            writer.writerow(header)
            for m in range(self.X.shape[1]):
                row = [str(m)]
                row += [format(v, ".17g") for v in self.X[:, m]]
                row += [format(v, ".17g") for v in self.U[:, m]]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SnapshotSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n_state = sum(1 for h in header if h.startswith("x"))
            n_input = sum(1 for h in header if h.startswith("u"))
            rows = [row for row in reader if row]
        X = np.array([[float(r[1 + i]) for r in rows] for i in range(n_state)])
        U = np.array(
            [[float(r[1 + n_state + i]) for r in rows] for i in range(n_input)]
        ).reshape(n_input, len(rows))
        return cls(X=X, U=U)


def compute_g_a(snapshots: SnapshotSet, dictionary: Dictionary) -> tuple[Array, Array]:
    """Empirical Gram matrices (G, A), each of shape (Q, Q)."""
    if dictionary.n_state != snapshots.n_state or dictionary.n_input != snapshots.n_input:
        raise ValueError("dictionary dimensions do not match snapshots")
    M = snapshots.M
    Q = dictionary.size
    if M < Q:
        warnings.warn(
            f"fewer transitions (M={M}) than observables (Q={Q}); "
            "the least-squares problem is underdetermined",
            UserWarning,
            stacklevel=2,
        )
    Psi = evaluate_batch(dictionary, snapshots.X, snapshots.U)
    G = Psi[:M].T @ Psi[:M] / M
    G = (G + G.T) / 2  # exact symmetry
    A = Psi[:M].T @ Psi[1:] / M
    return G, A


def truncated_pinv(G: Array, rel_tol: float = DEFAULT_SVD_TOL) -> tuple[Array, int]:
    """SVD pseudoinverse dropping singular values below rel_tol * s_max.

    Returns the pseudoinverse and the retained rank.
    """
    U, s, Vt = np.linalg.svd(G)
    if s[0] == 0.0:
        return np.zeros_like(G.T), 0
    rank = int(np.sum(s > rel_tol * s[0]))
    pinv = (Vt[:rank].T / s[:rank]) @ U[:, :rank].T
    return pinv, rank


def estimate_koopman(G: Array, A: Array, svd_tol: float = DEFAULT_SVD_TOL) -> Array:
    """Least-squares Koopman matrix K = pinv(G) A."""
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    if G.shape[0] != G.shape[1] or G.shape != A.shape:
        raise ValueError("G and A must be square with matching shape")
    pinv, rank = truncated_pinv(G, svd_tol)
    if rank == 0:
        raise ValueError("Gram matrix is identically zero; no data to regress on")
    return pinv @ A


def eigendecompose(
    K: Array, degeneracy_tol: float = DEFAULT_DEGENERACY_TOL
) -> tuple[Array, Array, Array]:
    """Eigenvalues and biorthogonal eigenvector pairs of K.

    Returns (eigvals, right_vecs, left_vecs) where right_vecs[:, q] is
    xi_q with K xi_q = lam_q xi_q, left_vecs[:, q] is w_q with
    w_q^* K = lam_q w_q^*, and w_q^* xi_p = delta_qp.

    Eigenvalues are ordered by descending magnitude; complex conjugate
    pairs are adjacent with the positive-imaginary member first.  Raises
    DegenerateSpectrumError when any pair of eigenvalues is closer than
    degeneracy_tol, since the downstream perturbation formulas divide by
    the gaps.
    """
    K = np.asarray(K)
    lam, Xi = np.linalg.eig(K)
    order = np.lexsort((-lam.imag, -lam.real, -np.abs(lam)))
    lam = lam[order]
    Xi = Xi[:, order].astype(complex)

    gaps = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(gaps, np.inf)
    min_gap = gaps.min()
    if min_gap < degeneracy_tol:
        raise DegenerateSpectrumError(
            f"minimum eigenvalue gap {min_gap:.3e} is below {degeneracy_tol:.1e}; "
            "perturbation formulas would divide by a vanishing gap"
        )

    # Canonical scaling: pivot entry of each right eigenvector made real
    # positive, and the negative-imaginary member of each conjugate pair
    # stored as the exact conjugate of its partner.
    q = 0
    Qn = len(lam)
    while q < Qn:
        v = Xi[:, q]
        pivot = int(np.argmax(np.abs(v)))
        if lam[q].imag == 0.0:
            v = v.real / v.real[pivot] * np.abs(v[pivot])
            Xi[:, q] = v / np.linalg.norm(v)
            q += 1
        else:
            phase = v[pivot] / np.abs(v[pivot])
            v = v / phase
            v = v / np.linalg.norm(v)
            Xi[:, q] = v
            if q + 1 < Qn and np.isclose(lam[q + 1], lam[q].conjugate()):
                Xi[:, q + 1] = v.conj()
                q += 2
            else:
                q += 1
    W = np.linalg.inv(Xi).conj().T
    return lam, Xi, W


def compute_B(dictionary: Dictionary, snapshots: SnapshotSet | None = None) -> Array:
    """Readout matrix recovering [x; u] from the lifted vector: Psi B = [x, u].

    For identity-prefix dictionaries B is an exact 0/1 selector.  Otherwise
    it is solved by least squares over the provided snapshots and the fit
    must be essentially exact (the state and input coordinates must lie in
    the dictionary's span).
    """
    Q = dictionary.size
    n_out = dictionary.n_state + dictionary.n_input
    if dictionary.identity_prefix:
        B = np.zeros((Q, n_out))
        B[:n_out, :] = np.eye(n_out)
        return B
    if snapshots is None:
        raise ValueError("snapshots are required when the dictionary has no identity prefix")
    Psi = evaluate_batch(dictionary, snapshots.X, snapshots.U)
    target = np.vstack([snapshots.X, snapshots.U]).T
    B, _, _, _ = np.linalg.lstsq(Psi, target, rcond=None)
    residual = np.abs(Psi @ B - target).max()
    if residual > 1e-8:
        raise ValueError(
            f"state/input coordinates are not in the dictionary span "
            f"(readout residual {residual:.3e})"
        )
    return B


def compute_F(eigvals: Array, right_vecs: Array, left_vecs: Array, B: Array) -> Array:
    """Reassembly matrix F = sum_q xi_q lam_q (w_q^* B), shape (Q, n_state+n_input)."""
    WB = left_vecs.conj().T @ B
    return right_vecs @ (eigvals[:, None] * WB)


@dataclass
class KoopmanModel:
    """A trained Koopman model with its spectral decomposition."""

    K: Array
    G: Array
    A: Array
    eigvals: Array
    right_vecs: Array
    left_vecs: Array
    B: Array
    F: Array
    dictionary: Dictionary
    svd_tol: float = DEFAULT_SVD_TOL
    degeneracy_tol: float = DEFAULT_DEGENERACY_TOL
    modes: Array = field(init=False)

    def __post_init__(self):
        # columns are the output-space modes v_q = (w_q^* B)^T
        self.modes = self.B.T @ self.left_vecs.conj()
        for arr in (self.K, self.G, self.A, self.eigvals, self.right_vecs,
                    self.left_vecs, self.B, self.F, self.modes):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return self.K.shape[0]

    @property
    def n_state(self) -> int:
        return self.dictionary.n_state

    @property
    def n_input(self) -> int:
        return self.dictionary.n_input

    @property
    def dict_spec(self) -> dict:
        return self.dictionary.spec


def fit_koopman(
    snapshots: SnapshotSet,
    dictionary: Dictionary,
    svd_tol: float = DEFAULT_SVD_TOL,
    degeneracy_tol: float = DEFAULT_DEGENERACY_TOL,
) -> KoopmanModel:
    """Estimate K from snapshots and assemble the full model."""
    G, A = compute_g_a(snapshots, dictionary)
    K = estimate_koopman(G, A, svd_tol)
    eigvals, right_vecs, left_vecs = eigendecompose(K, degeneracy_tol)
    B = compute_B(dictionary, snapshots)
    F = compute_F(eigvals, right_vecs, left_vecs, B)
    return KoopmanModel(
        K=K, G=G, A=A, eigvals=eigvals, right_vecs=right_vecs,
        left_vecs=left_vecs, B=B, F=F, dictionary=dictionary,
        svd_tol=svd_tol, degeneracy_tol=degeneracy_tol,
    )


def _check_imag(values: Array, imag_tol: float) -> Array:
    residue = np.abs(values.imag).max()
    scale = 1.0 + np.abs(values.real).max()
    if residue > imag_tol * scale:
        raise ValueError(
            f"imaginary residue {residue:.3e} exceeds tolerance; "
            "spectral data is inconsistent"
        )
    return values.real


def predict(model: KoopmanModel, x: Array, u: Array, imag_tol: float = DEFAULT_IMAG_TOL) -> Array:
    """One-step state prediction via the reassembly matrix F."""
    psi = evaluate(model.dictionary, x, u)
    full = psi.astype(complex) @ model.F
    return _check_imag(full, imag_tol)[: model.n_state]


def predict_mode_sum(
    model: KoopmanModel, x: Array, u: Array, imag_tol: float = DEFAULT_IMAG_TOL
) -> Array:
    """One-step state prediction as the explicit sum over spectral modes.

    Mathematically identical to predict(); kept separate so the two
    evaluation routes can be compared in tests.
    """
    psi = evaluate(model.dictionary, x, u)
    phi = psi.astype(complex) @ model.right_vecs  # eigenfunction values
    full = model.modes @ (model.eigvals * phi)
    return _check_imag(full, imag_tol)[: model.n_state]
