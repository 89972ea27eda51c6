"""Benchmark plants, integration, and training-data generation.

Two continuous-time systems are bundled: a forced Van der Pol oscillator
and a differential-drive unicycle.  Trajectories are integrated with
classical RK4 under zero-order-hold inputs and packaged as snapshot sets,
optionally with additive measurement noise on the recorded states (the
simulated plant itself always evolves noise-free).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .edmd import SnapshotSet
from .errors import NonFiniteDataError
from .sensitivity import NoiseSpec

Array = np.ndarray


@dataclass(frozen=True)
class ContinuousSystem:
    """A continuous-time control system dx/dt = f(x, u)."""

    name: str
    dim_state: int
    dim_input: int
    derivative: Callable[[Array, Array], Array]


def vdp_derivative(x: Array, u: Array) -> Array:
    """Forced Van der Pol oscillator."""
    x1, x2 = x
    return np.array([2.0 * x2, -0.8 * x1 + 2.0 * x2 - 10.0 * x1 * x1 * x2 + u[0]])


def unicycle_derivative(x: Array, u: Array) -> Array:
    """Differential-drive kinematics: state (x, y, heading), input (v, omega)."""
    theta = x[2]
    return np.array([u[0] * np.cos(theta), u[0] * np.sin(theta), u[1]])


VAN_DER_POL = ContinuousSystem("van_der_pol", 2, 1, vdp_derivative)
UNICYCLE = ContinuousSystem("unicycle", 3, 2, unicycle_derivative)


def rk4_step(system: ContinuousSystem, x: Array, u: Array, dt: float) -> Array:
    """One classical Runge-Kutta step with the input held constant."""
    f = system.derivative
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(system: ContinuousSystem, x0: Array, U: Array, dt: float) -> Array:
    """Roll out M = U.shape[1] - 1 steps; returns states of shape (dim, M+1).

    The final input column is not applied; it is carried along so the
    snapshot set has an input associated with every recorded state.
    """
    n_cols = U.shape[1]
    X = np.empty((system.dim_state, n_cols))
    X[:, 0] = x0
    x = np.asarray(x0, dtype=float)
    for m in range(n_cols - 1):
        x = rk4_step(system, x, U[:, m], dt)
        if not np.all(np.isfinite(x)):
            raise NonFiniteDataError(f"trajectory diverged at step {m + 1}")
        X[:, m + 1] = x
    return X


@dataclass
class TrainingConfig:
    """How to excite the plant and what measurement noise to add.

    input_policy "uniform" redraws the input independently every step;
    "chattering" holds each draw for `hold` steps.  input_low/input_high
    bound each input channel.  x0 defaults to 0.5 in every coordinate.
    The injected noise realization is drawn from a stream derived from
    `seed`, independent of the NoiseSpec's own seed (which is reserved
    for the resampling done by the sensitivity analysis).
    """

    M: int
    Ts: float
    noise: NoiseSpec
    seed: int
    x0: Optional[Array] = None
    input_policy: str = "uniform"
    input_low: Array | float = -1.0
    input_high: Array | float = 1.0
    hold: int = 10

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be positive")
        if self.Ts <= 0:
            raise ValueError("Ts must be positive")
        if self.input_policy not in ("uniform", "chattering"):
            raise ValueError(f"unknown input policy {self.input_policy!r}")
        if self.hold < 1:
            raise ValueError("hold must be at least 1")


def _draw_inputs(config: TrainingConfig, dim_input: int, rng: np.random.Generator) -> Array:
    low = np.broadcast_to(np.asarray(config.input_low, dtype=float), (dim_input,))
    high = np.broadcast_to(np.asarray(config.input_high, dtype=float), (dim_input,))
    n_cols = config.M + 1
    if config.input_policy == "uniform":
        return rng.uniform(low[:, None], high[:, None], size=(dim_input, n_cols))
    n_blocks = -(-n_cols // config.hold)
    draws = rng.uniform(low[:, None], high[:, None], size=(dim_input, n_blocks))
    return np.repeat(draws, config.hold, axis=1)[:, :n_cols]


def generate_training_data(
    system: ContinuousSystem, config: TrainingConfig
) -> tuple[SnapshotSet, SnapshotSet]:
    """Simulate one trajectory and return (clean, noisy) snapshot sets.

    Both sets share the exact same input sequence; only the recorded
    states of the noisy set are perturbed.  With a zero noise spec the
    two sets are identical.
    """
    if config.noise.n_state != system.dim_state:
        raise ValueError("noise spec dimension does not match the system")
    root = np.random.SeedSequence(entropy=config.seed)
    input_seq, noise_seq = root.spawn(2)
    rng_inputs = np.random.default_rng(input_seq)

    x0 = (
        np.full(system.dim_state, 0.5)
        if config.x0 is None
        else np.asarray(config.x0, dtype=float)
    )
    if x0.shape != (system.dim_state,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({system.dim_state},)")

    U = _draw_inputs(config, system.dim_input, rng_inputs)
    X = simulate(system, x0, U, config.Ts)
    clean = SnapshotSet(X=X, U=U)
    if config.noise.is_zero:
        return clean, SnapshotSet(X=X.copy(), U=U.copy())
    rng_noise = np.random.default_rng(noise_seq)
    delta = config.noise.sample(rng_noise, config.M + 1)
    return clean, SnapshotSet(X=X + delta, U=U.copy())
