"""Offline training and online deployment of sensitivity-aware models.

train_offline does all the heavy lifting once: Gram matrices, operator
estimate, spectral decomposition, and the noise-sensitivity tensors.
step_online then produces a one-step prediction plus its estimated
noise-induced error in constant time per step, and run_closed_loop wires
both into a simulated feedback loop.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import edmd
from .dictionary import Dictionary, build_dictionary, evaluate
from .edmd import KoopmanModel, SnapshotSet
from .errors import NonFiniteDataError
from .sensitivity import (
    EigenSensitivity,
    KoopmanSensitivity,
    NoiseSpec,
    delta_K,
    eigen_sensitivities,
    prediction_error,
)
from .systems import ContinuousSystem, rk4_step

Array = np.ndarray

ARTIFACT_FORMAT = 1


@dataclass
class TrainedArtifacts:
    """Everything the online phase needs: model, sensitivities, provenance."""

    model: KoopmanModel
    sens: KoopmanSensitivity
    noise: NoiseSpec
    meta: dict = field(default_factory=dict)


def _run_stage(name: str, timings: dict, fn):
    start = time.perf_counter()
    try:
        result = fn()
    except Exception as exc:
        exc.args = (f"stage '{name}': {exc}",) + (() if not exc.args else exc.args[1:])
        raise
    timings[name] = time.perf_counter() - start
    return result


def train_offline(
    snapshots: SnapshotSet,
    dictionary: Dictionary,
    noise: NoiseSpec,
    svd_tol: float = edmd.DEFAULT_SVD_TOL,
    degeneracy_tol: float = edmd.DEFAULT_DEGENERACY_TOL,
    chunk: int = 8192,
    realization: Optional[Array] = None,
) -> TrainedArtifacts:
    """Run the full offline pipeline in stage order.

    Stages: Gram matrices, operator estimate, spectral decomposition,
    readout, operator sensitivity, spectral sensitivity.  Exceptions are
    re-raised with the failing stage prepended.  For an exactly zero
    noise spec the spectral sensitivity tensors are skipped; every error
    estimate is identically zero in that case.

    When the actual per-snapshot perturbations are known (e.g. a
    harness injected them), pass them as ``realization`` with shape
    (n_state, M+1); the operator sensitivity then uses them directly
    instead of substituting statistics drawn from ``noise``.
    """
    timings: dict = {}
    G, A = _run_stage("gram", timings, lambda: edmd.compute_g_a(snapshots, dictionary))
    K = _run_stage("operator", timings, lambda: edmd.estimate_koopman(G, A, svd_tol))
    eigvals, right_vecs, left_vecs = _run_stage(
        "spectrum", timings, lambda: edmd.eigendecompose(K, degeneracy_tol)
    )
    B = _run_stage("readout", timings, lambda: edmd.compute_B(dictionary, snapshots))
    F = _run_stage(
        "reassembly", timings, lambda: edmd.compute_F(eigvals, right_vecs, left_vecs, B)
    )
    model = KoopmanModel(
        K=K, G=G, A=A, eigvals=eigvals, right_vecs=right_vecs, left_vecs=left_vecs,
        B=B, F=F, dictionary=dictionary, svd_tol=svd_tol, degeneracy_tol=degeneracy_tol,
    )
    perturbation = noise if realization is None else realization
    dK = _run_stage(
        "operator_sensitivity",
        timings,
        lambda: delta_K(snapshots, dictionary, model, perturbation, chunk),
    )
    eigen: Optional[EigenSensitivity] = None
    if not noise.is_zero:
        eigen = _run_stage(
            "spectral_sensitivity", timings, lambda: eigen_sensitivities(model)
        )
    sens = KoopmanSensitivity(delta_K=dK, noise=noise, source_model=model, eigen=eigen)
    meta = {
        "M": snapshots.M,
        "Q": dictionary.size,
        "timings": timings,
    }
    return TrainedArtifacts(model=model, sens=sens, noise=noise, meta=meta)


def step_online(artifacts: TrainedArtifacts, x: Array, u: Array) -> tuple[Array, Array]:
    """One online step: (predicted next state, estimated prediction error).

    The dictionary is evaluated once and shared by the prediction and the
    error estimate.
    """
    model = artifacts.model
    psi = evaluate(model.dictionary, x, u)
    full = psi.astype(complex) @ model.F
    residue = np.abs(full.imag).max()
    if residue > edmd.DEFAULT_IMAG_TOL * (1.0 + np.abs(full.real).max()):
        raise ValueError(f"imaginary residue {residue:.3e} in online prediction")
    x_pred = full.real[: model.n_state]
    delta = prediction_error(model, artifacts.sens, psi)
    return x_pred, delta


@dataclass
class TrajectoryLog:
    """Closed-loop run record; one row per applied input."""

    Ts: float
    x: Array          # (n_state, n_steps + 1)
    u: Array          # (n_input, n_steps)
    x_pred: Array     # (n_state, n_steps); column t predicts x[:, t+1]
    delta_x_pred: Array  # (n_state, n_steps)
    reference: Array  # (n_state, n_steps + 1)

    @property
    def n_steps(self) -> int:
        return self.u.shape[1]

    def to_csv(self, path) -> None:
        n_state = self.x.shape[0]
        n_input = self.u.shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["step", "t"]
            header += [f"x{i + 1}" for i in range(n_state)]
            header += [f"u{i + 1}" for i in range(n_input)]
            header += [f"x_pred{i + 1}" for i in range(n_state)]
            header += [f"delta_x_pred{i + 1}" for i in range(n_state)]
            header += [f"reference{i + 1}" for i in range(n_state)]
            writer.writerow(header)
            for t in range(self.n_steps):
                row = [str(t), format(t * self.Ts, ".17g")]
                for block in (
                    self.x[:, t], self.u[:, t], self.x_pred[:, t],
                    self.delta_x_pred[:, t], self.reference[:, t],
                ):
                    row += [format(v, ".17g") for v in block]
                writer.writerow(row)


def run_closed_loop(
    artifacts: TrainedArtifacts,
    system: ContinuousSystem,
    controller: Callable,
    reference: Array,
    n_steps: int,
    Ts: float,
    x0: Array,
) -> TrajectoryLog:
    """Simulate feedback control with model predictions in the loop.

    controller(x, ref_window, x_pred_prev, delta_prev) -> u, where
    ref_window is a view of the reference from the next step onward (at
    least one column; shrinks near the end of the run), and x_pred_prev /
    delta_prev are the model prediction of the current state and its
    error estimate produced at the previous step.  The plant itself
    advances by RK4 on the true dynamics.
    """
    reference = np.asarray(reference, dtype=float)
    n_state, n_input = system.dim_state, system.dim_input
    last = reference.shape[1] - 1

    x_hist = np.empty((n_state, n_steps + 1))
    u_hist = np.empty((n_input, n_steps))
    pred_hist = np.empty((n_state, n_steps))
    delta_hist = np.empty((n_state, n_steps))

    x = np.asarray(x0, dtype=float)
    x_hist[:, 0] = x
    x_pred_prev = x.copy()
    delta_prev = np.zeros(n_state)
    for t in range(n_steps):
        ref_window = reference[:, min(t + 1, last):]
        u = np.asarray(controller(x, ref_window, x_pred_prev, delta_prev), dtype=float)
        x_pred_prev, delta_prev = step_online(artifacts, x, u)
        x = rk4_step(system, x, u, Ts)
        if not np.all(np.isfinite(x)):
            raise NonFiniteDataError(f"closed-loop state diverged at step {t + 1}")
        u_hist[:, t] = u
        pred_hist[:, t] = x_pred_prev
        delta_hist[:, t] = delta_prev
        x_hist[:, t + 1] = x
    return TrajectoryLog(
        Ts=Ts,
        x=x_hist,
        u=u_hist,
        x_pred=pred_hist,
        delta_x_pred=delta_hist,
        reference=reference[:, : n_steps + 1].copy(),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_artifacts(artifacts: TrainedArtifacts, path) -> None:
    """Write a trained-artifact file (numpy archive with a JSON header)."""
    model = artifacts.model
    header = {
        "format": ARTIFACT_FORMAT,
        "dict_spec": model.dict_spec,
        "svd_tol": model.svd_tol,
        "degeneracy_tol": model.degeneracy_tol,
        "noise": artifacts.noise.to_dict(),
        "meta": artifacts.meta,
        "has_eigen": artifacts.sens.eigen is not None,
    }
    arrays = {
        "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        "K": model.K, "G": model.G, "A": model.A,
        "eigvals": model.eigvals,
        "right_vecs": model.right_vecs, "left_vecs": model.left_vecs,
        "B": model.B, "F": model.F,
        "delta_K": artifacts.sens.delta_K,
    }
    if artifacts.sens.eigen is not None:
        eigen = artifacts.sens.eigen
        arrays.update(c_lambda=eigen.c_lambda, U=eigen.U, UB=eigen.UB)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_artifacts(path) -> TrainedArtifacts:
    """Rebuild TrainedArtifacts from a file written by save_artifacts."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != ARTIFACT_FORMAT:
            raise ValueError(f"unsupported artifact format: {header.get('format')!r}")
        dictionary = build_dictionary(header["dict_spec"])
        model = KoopmanModel(
            K=data["K"], G=data["G"], A=data["A"],
            eigvals=data["eigvals"],
            right_vecs=data["right_vecs"], left_vecs=data["left_vecs"],
            B=data["B"], F=data["F"],
            dictionary=dictionary,
            svd_tol=header["svd_tol"], degeneracy_tol=header["degeneracy_tol"],
        )
        noise = NoiseSpec.from_dict(header["noise"])
        eigen = None
        if header["has_eigen"]:
            eigen = EigenSensitivity(
                eigvals=model.eigvals,
                right_vecs=model.right_vecs,
                left_vecs=model.left_vecs,
                c_lambda=data["c_lambda"],
                U=data["U"],
                UB=data["UB"],
            )
        sens = KoopmanSensitivity(
            delta_K=data["delta_K"], noise=noise, source_model=model, eigen=eigen
        )
    return TrainedArtifacts(model=model, sens=sens, noise=noise, meta=header["meta"])
