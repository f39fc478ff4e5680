"""Hamiltonian, gradient and magnetic flows on Kähler spaces of constant
holomorphic sectional curvature, with the complex-line reduction of
magnetic trajectories to a scalar ODE."""

from kflows.geometry import (
    DomainError,
    SpaceSpec,
    UnsupportedOperation,
    christoffel,
    hol_sect_curvature,
    metric,
    potential,
    psi,
    ricci,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "SpaceSpec",
    "UnsupportedOperation",
    "christoffel",
    "hol_sect_curvature",
    "metric",
    "potential",
    "psi",
    "ricci",
]
