from .core import (
    Mesh,
    MeshError,
    SurfaceGeometry,
    SurfaceNormalField,
    VolumeGeometry,
    cavity_volume,
    cavity_volume_and_gradient,
    check_jacobians,
    closed_surface_flux,
    face_parents,
    reference_normals,
    surface_geometry,
    volume_geometry,
)
from .generate import generate_box, generate_ellipsoid_shell, generate_half_ellipsoid
from .gmsh import load_gmsh, write_gmsh

__all__ = [
    "Mesh",
    "MeshError",
    "SurfaceGeometry",
    "SurfaceNormalField",
    "VolumeGeometry",
    "cavity_volume",
    "cavity_volume_and_gradient",
    "check_jacobians",
    "closed_surface_flux",
    "face_parents",
    "generate_box",
    "generate_ellipsoid_shell",
    "generate_half_ellipsoid",
    "load_gmsh",
    "reference_normals",
    "surface_geometry",
    "volume_geometry",
    "write_gmsh",
]
