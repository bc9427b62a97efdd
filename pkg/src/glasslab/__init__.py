"""glasslab: spin-glass order, transport bounds, and replica solvers for
random p-local qubit ensembles."""

__version__ = "0.1.0"

__all__ = [
    "analytic",
    "cli",
    "exactq",
    "glass",
    "pauli",
    "replica",
    "rng",
    "transport",
    "errors",
]
