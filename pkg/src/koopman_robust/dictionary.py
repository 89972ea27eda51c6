"""Observable dictionaries used to lift states and inputs.

A dictionary is an ordered list of scalar observables psi_q(x, u).  The
lifted representation of a point is the row vector
Psi = [psi_1, ..., psi_Q].  Every observable carries an analytic gradient
with respect to the state so that downstream sensitivity code never falls
back on numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteDataError

Array = np.ndarray


@dataclass(frozen=True)
class Observable:
    """A scalar function of (x, u) plus its state gradient.

    eval maps (x, u) -> float; grad_state maps (x, u) -> array of shape
    (n_state,).  Only state derivatives are needed: inputs are exogenous
    and never perturbed.
    """

    eval: Callable[[Array, Array], float]
    grad_state: Callable[[Array, Array], Array]
    name: str = ""


@dataclass
class Dictionary:
    """Ordered observable list with dimension metadata.

    identity_prefix means observables[0:n_state+n_input] are exactly the
    state coordinates followed by the input coordinates, which lets the
    readout matrix B be a 0/1 selector.

    spec is a plain-dict description sufficient to rebuild the dictionary
    (used when artifacts are serialized).  exponents is present for
    monomial dictionaries and enables vectorized evaluation; generic
    dictionaries leave it as None and fall back to per-observable loops.
    """

    observables: list[Observable]
    n_state: int
    n_input: int
    identity_prefix: bool
    spec: dict = field(default_factory=dict)
    exponents: Optional[Array] = None

    @property
    def size(self) -> int:
        return len(self.observables)

    def __len__(self) -> int:
        return len(self.observables)


def evaluate(dictionary: Dictionary, x: Array, u: Array) -> Array:
    """Lift a single point: returns Psi(x, u) with shape (Q,)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (dictionary.n_state,):
        raise ValueError(f"state has shape {x.shape}, expected ({dictionary.n_state},)")
    if u.shape != (dictionary.n_input,):
        raise ValueError(f"input has shape {u.shape}, expected ({dictionary.n_input},)")
    if dictionary.exponents is not None:
        z = np.concatenate([x, u])
        out = np.prod(z[None, :] ** dictionary.exponents, axis=1)
    else:
        out = np.array([obs.eval(x, u) for obs in dictionary.observables], dtype=float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteDataError("observable evaluation produced non-finite values")
    return out


def jacobian_state(dictionary: Dictionary, x: Array, u: Array) -> Array:
    """Analytic Jacobian d Psi / d x at one point, shape (Q, n_state)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if dictionary.exponents is not None:
        z = np.concatenate([x, u])
        E = dictionary.exponents
        jac = np.empty((dictionary.size, dictionary.n_state))
        for i in range(dictionary.n_state):
            Ei = E.copy()
            Ei[:, i] = np.maximum(Ei[:, i] - 1, 0)
            jac[:, i] = E[:, i] * np.prod(z[None, :] ** Ei, axis=1)
        return jac
    return np.stack([obs.grad_state(x, u) for obs in dictionary.observables])


def evaluate_batch(dictionary: Dictionary, X: Array, U: Array) -> Array:
    """Lift many points at once.

    X has shape (n_state, n_points) and U (n_input, n_points); the result
    has shape (n_points, Q) with one lifted row per point.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    n = X.shape[1]
    if dictionary.exponents is not None:
        Z = np.vstack([X, U]) if dictionary.n_input else X
        out = np.empty((n, dictionary.size))
        for q, exps in enumerate(dictionary.exponents):
            col = np.ones(n)
            for j, e in enumerate(exps):
                if e == 1:
                    col = col * Z[j]
                elif e > 1:
                    col = col * Z[j] ** e
            out[:, q] = col
    else:
        out = np.empty((n, dictionary.size))
        for m in range(n):
            out[m] = evaluate(dictionary, X[:, m], U[:, m])
    if not np.all(np.isfinite(out)):
        raise NonFiniteDataError("observable evaluation produced non-finite values")
    return out


def jacobian_state_batch(dictionary: Dictionary, X: Array, U: Array, coord: int) -> Array:
    """d Psi / d x_coord for many points: shape (n_points, Q)."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    n = X.shape[1]
    if dictionary.exponents is not None:
        Z = np.vstack([X, U]) if dictionary.n_input else X
        E = dictionary.exponents
        out = np.empty((n, dictionary.size))
        for q, exps in enumerate(E):
            e_i = exps[coord]
            if e_i == 0:
                out[:, q] = 0.0
                continue
            col = np.full(n, float(e_i))
            for j, e in enumerate(exps):
                p = e - 1 if j == coord else e
                if p == 1:
                    col = col * Z[j]
                elif p > 1:
                    col = col * Z[j] ** p
            out[:, q] = col
        return out
    out = np.empty((n, dictionary.size))
    for m in range(n):
        out[m] = jacobian_state(dictionary, X[:, m], U[:, m])[:, coord]
    return out


def _monomial_name(exps: Array, n_state: int) -> str:
    parts = []
    for j, e in enumerate(exps):
        if e == 0:
            continue
        var = f"x{j + 1}" if j < n_state else f"u{j - n_state + 1}"
        parts.append(var if e == 1 else f"{var}^{e}")
    return "*".join(parts) if parts else "1"


def _make_monomial(exps: Array, n_state: int) -> Observable:
    exps = np.asarray(exps, dtype=int)

    def _eval(x, u, _e=exps):
        z = np.concatenate([x, u])
        return float(np.prod(z ** _e))

    def _grad(x, u, _e=exps, _nx=n_state):
        z = np.concatenate([x, u])
        g = np.zeros(_nx)
        for i in range(_nx):
            if _e[i] == 0:
                continue
            lowered = _e.copy()
            lowered[i] -= 1
            g[i] = _e[i] * np.prod(z ** lowered)
        return g

    return Observable(eval=_eval, grad_state=_grad, name=_monomial_name(exps, n_state))


def build_poly_dictionary(n_state: int, n_input: int, max_degree: int) -> Dictionary:
    """All monomials in (x, u) up to total degree max_degree.

    Ordering: the state and input coordinates themselves come first (the
    identity prefix), then the constant, then the remaining monomials in
    graded lexicographic order.  The constant is always included.
    """
    if n_state < 1:
        raise ValueError("n_state must be at least 1")
    if n_input < 0:
        raise ValueError("n_input must be nonnegative")
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    n_vars = n_state + n_input
    rows = []
    for j in range(n_vars):
        e = np.zeros(n_vars, dtype=int)
        e[j] = 1
        rows.append(e)
    rows.append(np.zeros(n_vars, dtype=int))  # constant
    for degree in range(2, max_degree + 1):
        for combo in combinations_with_replacement(range(n_vars), degree):
            e = np.zeros(n_vars, dtype=int)
            for j in combo:
                e[j] += 1
            rows.append(e)
    exponents = np.stack(rows)
    observables = [_make_monomial(e, n_state) for e in exponents]
    return Dictionary(
        observables=observables,
        n_state=n_state,
        n_input=n_input,
        identity_prefix=True,
        spec={"type": "poly", "degree": max_degree, "n_state": n_state, "n_input": n_input},
        exponents=exponents,
    )


def build_identity_dictionary(n_state: int, n_input: int) -> Dictionary:
    """Just the state and input coordinates (no constant, no products)."""
    n_vars = n_state + n_input
    exponents = np.eye(n_vars, dtype=int)
    observables = [_make_monomial(e, n_state) for e in exponents]
    return Dictionary(
        observables=observables,
        n_state=n_state,
        n_input=n_input,
        identity_prefix=True,
        spec={"type": "identity", "n_state": n_state, "n_input": n_input},
        exponents=exponents,
    )


def build_dictionary(spec: dict) -> Dictionary:
    """Rebuild a dictionary from its serialized description."""
    kind = spec.get("type")
    if kind == "poly":
        return build_poly_dictionary(spec["n_state"], spec["n_input"], spec["degree"])
    if kind == "identity":
        return build_identity_dictionary(spec["n_state"], spec["n_input"])
    raise ValueError(f"unknown dictionary spec type: {kind!r}")
