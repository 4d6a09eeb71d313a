from .geometry import GeometryError, ScannerGeometry
from .projector import back_project, check_mu, forward_project, mlem_reconstruct, poisson_loglik
from .system_matrix import (
    SystemMatrix,
    attenuation_factors,
    build_system_matrix,
    load_system_matrix,
    save_system_matrix,
)

__all__ = [
    "GeometryError",
    "ScannerGeometry",
    "SystemMatrix",
    "attenuation_factors",
    "back_project",
    "build_system_matrix",
    "check_mu",
    "forward_project",
    "load_system_matrix",
    "mlem_reconstruct",
    "poisson_loglik",
    "save_system_matrix",
]
