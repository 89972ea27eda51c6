"""Shared exception types."""


class DegenerateSpectrumError(RuntimeError):
    """Raised when eigenvalues are too close for first-order perturbation
    formulas to be trusted (the inter-eigenvalue gaps enter as divisors)."""


class NonFiniteDataError(ValueError):
    """Raised when snapshots, lifted observables, or a simulated trajectory
    contain NaN or infinity."""
