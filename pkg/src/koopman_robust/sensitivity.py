"""First-order sensitivity of a trained Koopman model to measurement noise.

The chain has three layers, all computed offline:

  1. snapshot level: derivatives of the Gram matrices G and A with
     respect to each state measurement, combined through the
     Golub-Pereyra pseudoinverse derivative into the operator
     perturbation delta_K^i per state coordinate;
  2. spectral level: first-order sensitivities of eigenvalues and of the
     left/right eigenvectors to entries of K;
  3. prediction level: the induced one-step prediction error for an
     arbitrary lifted point, assembled online from the precomputed
     tensors in O(Q^2) per step.

Everything here consumes only training data and noise statistics; no
function accepts run-time state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .dictionary import Dictionary, evaluate_batch, jacobian_state_batch
from .edmd import KoopmanModel, SnapshotSet, truncated_pinv
from .errors import DegenerateSpectrumError

Array = np.ndarray

DEFAULT_CHUNK = 8192
DEFAULT_IMAG_TOL = 1e-8


# ---------------------------------------------------------------------------
# noise description
# ---------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    """Per-coordinate measurement-noise statistics for the state snapshots.

    family is "gaussian" (mean, std per coordinate) or "uniform" (low,
    high per coordinate).  Inputs are exogenous and never carry noise.

    substitution selects how delta_K handles the unknown realization:
    "resample" draws n_samples full noise matrices from the distribution
    and averages the resulting operator perturbations, "mean" substitutes
    the expected value at every snapshot.  Draws are seeded so artifacts
    are reproducible.
    """

    family: str
    mean: Optional[Array] = None
    std: Optional[Array] = None
    low: Optional[Array] = None
    high: Optional[Array] = None
    n_samples: int = 5
    substitution: str = "resample"
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.substitution not in ("resample", "mean"):
            raise ValueError(f"unknown substitution mode {self.substitution!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.family == "gaussian":
            if self.mean is None or self.std is None:
                raise ValueError("gaussian noise needs mean and std")
            self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            self.std = np.atleast_1d(np.asarray(self.std, dtype=float))
            if self.mean.shape != self.std.shape:
                raise ValueError("mean and std must have matching shape")
            if np.any(self.std < 0):
                raise ValueError("std must be nonnegative")
        else:
            if self.low is None or self.high is None:
                raise ValueError("uniform noise needs low and high")
            self.low = np.atleast_1d(np.asarray(self.low, dtype=float))
            self.high = np.atleast_1d(np.asarray(self.high, dtype=float))
            if self.low.shape != self.high.shape:
                raise ValueError("low and high must have matching shape")
            if np.any(self.high < self.low):
                raise ValueError("high must be >= low")

    @classmethod
    def gaussian(cls, mean, std, **kwargs) -> "NoiseSpec":
        return cls(family="gaussian", mean=mean, std=std, **kwargs)

    @classmethod
    def uniform(cls, low, high, **kwargs) -> "NoiseSpec":
        return cls(family="uniform", low=low, high=high, **kwargs)

    @classmethod
    def zero(cls, n_state: int, **kwargs) -> "NoiseSpec":
        z = np.zeros(n_state)
        return cls(family="uniform", low=z, high=z.copy(), **kwargs)

    @property
    def n_state(self) -> int:
        params = self.mean if self.family == "gaussian" else self.low
        return params.shape[0]

    @property
    def expected_value(self) -> Array:
        if self.family == "gaussian":
            return self.mean.copy()
        return (self.low + self.high) / 2

    @property
    def is_zero(self) -> bool:
        if self.family == "gaussian":
            return not (np.any(self.mean) or np.any(self.std))
        return not (np.any(self.low) or np.any(self.high))

    def sample(self, rng: np.random.Generator, n_points: int) -> Array:
        """Draw one noise matrix of shape (n_state, n_points)."""
        shape = (self.n_state, n_points)
        if self.family == "gaussian":
            return self.mean[:, None] + self.std[:, None] * rng.standard_normal(shape)
        return rng.uniform(self.low[:, None], self.high[:, None], size=shape)

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "n_samples": self.n_samples,
            "substitution": self.substitution,
            "seed": self.seed,
        }
        for name in ("mean", "std", "low", "high"):
            value = getattr(self, name)
            if value is not None:
                out[name] = [float(v) for v in value]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        return cls(**data)


# ---------------------------------------------------------------------------
# snapshot-level derivatives
# ---------------------------------------------------------------------------

def pinv_derivative(G: Array, G_pinv: Array, dG: Array) -> Array:
    """Directional derivative of the pseudoinverse along dG.

    Valid while the rank of G is locally constant.  For invertible G the
    projector terms vanish and this reduces to -G^-1 dG G^-1.
    """
    identity = np.eye(G.shape[0])
    dGH = dG.conj().T
    GpH = G_pinv.conj().T
    term1 = -G_pinv @ dG @ G_pinv
    term2 = G_pinv @ GpH @ dGH @ (identity - G @ G_pinv)
    term3 = (identity - G_pinv @ G) @ dGH @ GpH @ G_pinv
    return term1 + term2 + term3


def _check_snapshot_index(snapshots: SnapshotSet, m: int, coord: int) -> None:
    if not 0 <= m <= snapshots.M:
        raise IndexError(f"snapshot index {m} outside [0, {snapshots.M}]")
    if not 0 <= coord < snapshots.n_state:
        raise IndexError(f"state coordinate {coord} outside [0, {snapshots.n_state})")


def partial_G(snapshots: SnapshotSet, dictionary: Dictionary, m: int, coord: int) -> Array:
    """d G / d x_m[coord].  Zero for the final snapshot, which only enters A."""
    _check_snapshot_index(snapshots, m, coord)
    Q = dictionary.size
    M = snapshots.M
    if m == M:
        return np.zeros((Q, Q))
    psi_m = evaluate_batch(dictionary, snapshots.X[:, m : m + 1], snapshots.U[:, m : m + 1])[0]
    jac_col = jacobian_state_batch(
        dictionary, snapshots.X[:, m : m + 1], snapshots.U[:, m : m + 1], coord
    )[0]
    return (np.outer(jac_col, psi_m) + np.outer(psi_m, jac_col)) / M


def partial_A(snapshots: SnapshotSet, dictionary: Dictionary, m: int, coord: int) -> Array:
    """d A / d x_m[coord].

    Snapshot m appears in the pair (m, m+1) through its conjugated factor
    and in (m-1, m) through the shifted factor; the first and last
    snapshots keep only one of the two terms.
    """
    _check_snapshot_index(snapshots, m, coord)
    Q = dictionary.size
    M = snapshots.M
    jac_col = jacobian_state_batch(
        dictionary, snapshots.X[:, m : m + 1], snapshots.U[:, m : m + 1], coord
    )[0]
    out = np.zeros((Q, Q))
    if m <= M - 1:
        psi_next = evaluate_batch(
            dictionary, snapshots.X[:, m + 1 : m + 2], snapshots.U[:, m + 1 : m + 2]
        )[0]
        out += np.outer(jac_col, psi_next)
    if m >= 1:
        psi_prev = evaluate_batch(
            dictionary, snapshots.X[:, m - 1 : m], snapshots.U[:, m - 1 : m]
        )[0]
        out += np.outer(psi_prev, jac_col)
    return out / M


def _weighted_gram_derivatives(
    snapshots: SnapshotSet,
    dictionary: Dictionary,
    weights: Array,
    chunk: int = DEFAULT_CHUNK,
) -> tuple[Array, Array]:
    """Noise-weighted sums of the per-snapshot G and A derivatives.

    weights has shape (n_state, M+1); entry (i, m) multiplies the
    derivative with respect to x_m[coord=i].  Returns (sum_dG, sum_dA) of
    shape (n_state, Q, Q).  Accumulation is chunked in a fixed order so
    results are deterministic and memory stays O(chunk * Q).
    """
    M = snapshots.M
    Q = dictionary.size
    n_state = snapshots.n_state
    Psi = evaluate_batch(dictionary, snapshots.X, snapshots.U)
    sum_dG = np.zeros((n_state, Q, Q))
    sum_dA = np.zeros((n_state, Q, Q))
    for start in range(0, M + 1, chunk):
        stop = min(start + chunk, M + 1)
        for i in range(n_state):
            DJ = jacobian_state_batch(
                dictionary, snapshots.X[:, start:stop], snapshots.U[:, start:stop], i
            )
            # pairs (m, m+1) with m in [start, min(stop, M))
            lead_stop = min(stop, M)
            if lead_stop > start:
                w = weights[i, start:lead_stop, None]
                WJ = DJ[: lead_stop - start] * w
                P_here = Psi[start:lead_stop]
                half = WJ.T @ P_here
                sum_dG[i] += half + half.T
                sum_dA[i] += WJ.T @ Psi[start + 1 : lead_stop + 1]
            # pairs (m-1, m) with m in [max(start, 1), stop)
            lag_start = max(start, 1)
            if stop > lag_start:
                w = weights[i, lag_start:stop, None]
                WJ = DJ[lag_start - start :] * w
                sum_dA[i] += Psi[lag_start - 1 : stop - 1].T @ WJ
    return sum_dG / M, sum_dA / M


def delta_K(
    snapshots: SnapshotSet,
    dictionary: Dictionary,
    model: KoopmanModel,
    noise: Union[NoiseSpec, Array],
    chunk: int = DEFAULT_CHUNK,
) -> Array:
    """First-order operator perturbation delta_K^i per state coordinate.

    Returns an array of shape (n_state, Q, Q).  noise may be an explicit
    realization of shape (n_state, M+1), in which case the perturbation
    for that exact noise matrix is returned, or a NoiseSpec, in which
    case the realization is substituted according to its mode.  A zero
    spec short-circuits to exact zeros.

    The perturbation is linear in the noise, so the resample average is
    computed by averaging the draws first; the result is identical to
    averaging the per-draw perturbations.
    """
    n_state = snapshots.n_state
    if isinstance(noise, NoiseSpec):
        if noise.n_state != n_state:
            raise ValueError("noise spec dimension does not match snapshots")
        if noise.is_zero:
            Q = dictionary.size
            return np.zeros((n_state, Q, Q))
        if noise.substitution == "mean":
            realization = np.repeat(
                noise.expected_value[:, None], snapshots.M + 1, axis=1
            )
        else:
            rng = np.random.default_rng(noise.seed)
            draws = [noise.sample(rng, snapshots.M + 1) for _ in range(noise.n_samples)]
            realization = np.mean(draws, axis=0)
    else:
        realization = np.asarray(noise, dtype=float)
        if realization.shape != (n_state, snapshots.M + 1):
            raise ValueError(
                f"noise realization has shape {realization.shape}, "
                f"expected ({n_state}, {snapshots.M + 1})"
            )

    sum_dG, sum_dA = _weighted_gram_derivatives(snapshots, dictionary, realization, chunk)
    G_pinv, _ = truncated_pinv(model.G, model.svd_tol)
    out = np.empty((n_state, model.size, model.size))
    for i in range(n_state):
        out[i] = pinv_derivative(model.G, G_pinv, sum_dG[i]) @ model.A + G_pinv @ sum_dA[i]
    return out


# ---------------------------------------------------------------------------
# spectral-level sensitivities
# ---------------------------------------------------------------------------

@dataclass
class EigenSensitivity:
    """First-order sensitivities of the spectral decomposition to entries of K.

    c_lambda[q][a, b] is the derivative of eigenvalue q with respect to
    K[a, b].  The eigenvector derivatives factor through the gap tensor

        U[q] = sum_{j != q} outer(xi_j, conj(w_j)) / (lam_q - lam_j),

    from which c_xi(q, a, b) = U[q][:, a] * xi_q[b] and
    c_w(q, a, b) = conj(w_q[a]) * U[q][b, :] (the derivative of the row
    vector w_q^*).  UB caches U[q] @ B for the prediction-level terms.
    """

    eigvals: Array
    right_vecs: Array
    left_vecs: Array
    c_lambda: Array
    U: Array
    UB: Array

    @property
    def size(self) -> int:
        return self.eigvals.shape[0]

    def h_matrix(self, q: int, j: int) -> Array:
        """Gap-scaled outer product H_qj = outer(conj(w_q), xi_j) / (lam_j - lam_q)."""
        if q == j:
            raise ValueError("H is defined only for distinct eigenvalue indices")
        gap = self.eigvals[j] - self.eigvals[q]
        return np.outer(self.left_vecs[:, q].conj(), self.right_vecs[:, j]) / gap

    def c_xi(self, q: int, a: int, b: int) -> Array:
        """Derivative of right eigenvector q with respect to K[a, b]."""
        return self.U[q][:, a] * self.right_vecs[b, q]

    def c_w(self, q: int, a: int, b: int) -> Array:
        """Derivative of the row vector w_q^* with respect to K[a, b]."""
        return self.left_vecs[a, q].conj() * self.U[q][b, :]


def eigen_sensitivities(
    model: KoopmanModel, degeneracy_tol: Optional[float] = None
) -> EigenSensitivity:
    """Assemble the spectral sensitivity tensors for a trained model."""
    lam = model.eigvals
    Xi = model.right_vecs
    W = model.left_vecs
    Q = model.size
    tol = model.degeneracy_tol if degeneracy_tol is None else degeneracy_tol

    gaps = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < tol:
        raise DegenerateSpectrumError(
            f"minimum eigenvalue gap {gaps.min():.3e} is below {tol:.1e}"
        )

    c_lambda = np.einsum("aq,bq->qab", W.conj(), Xi)
    U = np.empty((Q, Q, Q), dtype=complex)
    WH = W.conj().T
    for q in range(Q):
        inv_gap = np.zeros(Q, dtype=complex)
        mask = np.arange(Q) != q
        inv_gap[mask] = 1.0 / (lam[q] - lam[mask])
        U[q] = (Xi * inv_gap[None, :]) @ WH
    UB = U @ model.B.astype(complex)
    return EigenSensitivity(
        eigvals=lam, right_vecs=Xi, left_vecs=W, c_lambda=c_lambda, U=U, UB=UB
    )


# ---------------------------------------------------------------------------
# bundle and prediction-level assembly
# ---------------------------------------------------------------------------

@dataclass
class KoopmanSensitivity:
    """Offline sensitivity artifacts attached to a trained model.

    delta_K stacks the per-coordinate operator perturbations.  eigen is
    None when the noise spec is exactly zero, in which case every error
    estimate is identically zero and the spectral tensors are never
    needed.  The _online_* fields are fixed contractions of the spectral
    tensors with sum_i delta_K^i, precomputed so the per-step error
    estimate costs a few small mat-vecs.
    """

    delta_K: Array
    noise: NoiseSpec
    source_model: KoopmanModel
    eigen: Optional[EigenSensitivity] = None
    _online_D1: Array = field(init=False, default=None, repr=False)
    _online_beta: Array = field(init=False, default=None, repr=False)
    _online_E3: Array = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.delta_K = np.asarray(self.delta_K, dtype=float)
        self.delta_K.flags.writeable = False
        if self.eigen is not None:
            dk = self.delta_K_total
            e = self.eigen
            C1 = e.left_vecs.conj().T @ dk
            self._online_D1 = np.einsum("qb,qbn->qn", C1, e.UB)
            self._online_beta = np.einsum("qb,bq->q", C1, e.right_vecs)
            DXi = dk @ e.right_vecs
            self._online_E3 = np.einsum("qca,aq->qc", e.U, DXi)

    @property
    def delta_K_total(self) -> Array:
        return self.delta_K.sum(axis=0)

    @property
    def is_zero(self) -> bool:
        return self.eigen is None or not np.any(self.delta_K)

    # convenience pass-throughs to the spectral tensors
    @property
    def c_lambda(self) -> Array:
        self._require_eigen()
        return self.eigen.c_lambda

    def h_matrix(self, q: int, j: int) -> Array:
        self._require_eigen()
        return self.eigen.h_matrix(q, j)

    def c_xi(self, q: int, a: int, b: int) -> Array:
        self._require_eigen()
        return self.eigen.c_xi(q, a, b)

    def c_w(self, q: int, a: int, b: int) -> Array:
        self._require_eigen()
        return self.eigen.c_w(q, a, b)

    def _require_eigen(self):
        if self.eigen is None:
            raise ValueError("spectral tensors were skipped for zero noise")


def build_sensitivity(
    model: KoopmanModel,
    snapshots: SnapshotSet,
    noise: NoiseSpec,
    chunk: int = DEFAULT_CHUNK,
) -> KoopmanSensitivity:
    """delta_K plus spectral tensors for a model trained on these snapshots."""
    dK = delta_K(snapshots, model.dictionary, model, noise, chunk)
    eigen = None if noise.is_zero else eigen_sensitivities(model)
    return KoopmanSensitivity(delta_K=dK, noise=noise, source_model=model, eigen=eigen)


def mode_term_derivative(
    model: KoopmanModel,
    sens: Union[KoopmanSensitivity, EigenSensitivity],
    psi: Array,
    a: int,
    b: int,
) -> Array:
    """Derivative of the mode-sum prediction with respect to K[a, b].

    Sums the product rule over all modes: the term from the output modes
    (through w_q^*), from the eigenvalues, and from the eigenfunctions
    (through xi_q).  Returns a complex vector over the stacked
    state+input output coordinates.
    """
    eigen = sens.eigen if isinstance(sens, KoopmanSensitivity) else sens
    if eigen is None:
        raise ValueError("spectral tensors were skipped for zero noise")
    lam = model.eigvals
    Xi = model.right_vecs
    W = model.left_vecs
    V = model.modes
    psi = np.asarray(psi, dtype=complex)
    phi = psi @ Xi
    term_w = np.einsum("q,qn,q,q->n", W[a].conj(), eigen.UB[:, b, :], lam, phi)
    term_lam = V @ (W[a].conj() * Xi[b] * phi)
    s = np.einsum("qc,c->q", eigen.U[:, :, a], psi)
    term_xi = V @ (lam * Xi[b] * s)
    return term_w + term_lam + term_xi


def prediction_error(
    model: KoopmanModel,
    sens: KoopmanSensitivity,
    psi: Array,
    imag_tol: float = DEFAULT_IMAG_TOL,
) -> Array:
    """Estimated one-step prediction error at a lifted point.

    Contracts the mode-sum derivative with the total operator
    perturbation sum_i delta_K^i, entry by entry over (a, b), and keeps
    the state coordinates.  With a zero perturbation the result is
    exactly zero.
    """
    n_state = model.n_state
    if sens.is_zero:
        return np.zeros(n_state)
    eigen = sens.eigen
    lam = model.eigvals
    psi_c = np.asarray(psi, dtype=complex)
    phi = psi_c @ eigen.right_vecs
    term_w = (lam * phi) @ sens._online_D1
    term_lam = model.modes @ (phi * sens._online_beta)
    term_xi = model.modes @ (lam * (sens._online_E3 @ psi_c))
    full = term_w + term_lam + term_xi
    residue = np.abs(full.imag).max()
    if residue > imag_tol * (1.0 + np.abs(full.real).max()):
        raise ValueError(
            f"imaginary residue {residue:.3e} in the error estimate; "
            "spectral data is inconsistent"
        )
    return full.real[:n_state]
