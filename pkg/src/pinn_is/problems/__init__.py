from .base import LossGraph, PDEProblem, PointData, Term, UnknownRegionError
from .diffusion import DiffusionProblem, diffusion_reference
from .elasticity import (
    ElasticityProblem,
    ManufacturedSolution,
    MaterialProperties,
    elasticity_residuals,
)
from .planestress import PlaneStressProblem

__all__ = [
    "DiffusionProblem",
    "ElasticityProblem",
    "LossGraph",
    "ManufacturedSolution",
    "MaterialProperties",
    "PDEProblem",
    "PlaneStressProblem",
    "PointData",
    "Term",
    "UnknownRegionError",
    "diffusion_reference",
    "elasticity_residuals",
]
