"""Height-field proxy meshes, BVH intersection and recursive subdivision tracing."""

from .backward import surface_backward
from .bvh import Bvh, build_bvh, build_bvh_from_boxes, intersect_mesh, intersect_mesh_brute, intersect_triangle
from .mesh import (MeshError, ProxyMesh, build_proxy, child_faces, face_normals, grid_faces, interpolate_normal,
                   load_obj, parent_face, save_obj, validate_heightfield_mesh, vertex_normals)
from .tracing import SurfaceHits, TraceResult, dense_trace, recursive_subdivision_trace, trace_mesh

__all__ = [
    "Bvh", "MeshError", "ProxyMesh", "SurfaceHits", "TraceResult",
    "build_bvh", "build_bvh_from_boxes", "build_proxy", "child_faces", "dense_trace", "face_normals",
    "grid_faces", "interpolate_normal", "intersect_mesh", "intersect_mesh_brute", "intersect_triangle",
    "load_obj", "parent_face", "recursive_subdivision_trace", "save_obj", "surface_backward",
    "trace_mesh", "validate_heightfield_mesh", "vertex_normals",
]
