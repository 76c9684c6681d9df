"""Wasserstein-ball projections, exact transport oracles and Wasserstein PGD."""

from ._wproj import (
    Classifier,
    IoError,
    NumericalFailure,
    ParameterError,
    ParseError,
    ShapeError,
    SolverError,
    conjugate,
    exact_distance,
    exact_projection,
    generate_blobs,
    lambert_w,
    lambert_w_log,
    pgd_attack,
    project,
)

__all__ = [
    "Classifier",
    "IoError",
    "NumericalFailure",
    "ParameterError",
    "ParseError",
    "ShapeError",
    "SolverError",
    "conjugate",
    "exact_distance",
    "exact_projection",
    "generate_blobs",
    "lambert_w",
    "lambert_w_log",
    "pgd_attack",
    "project",
]
