"""Mesh-driven transport of Gaussians via per-triangle deformation gradients.

Each triangle carries a frame E = [tangent | bitangent | normal] built from
its edge vectors and unit normal; the deformation gradient between a
canonical and a deformed pose is J = E_deformed @ inv(E_canonical), so rigid
motions yield the rotation itself. Gaussians bound to a triangle move with
the barycentric anchor plus J applied to their offset; orientations compose
with the rotational polar factor of J (J may contain shear, and the polar
factor is the closest rotation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import GaussianCloud, matrix_to_quat, quat_multiply, quat_to_matrix
from .errors import FormatError, InvalidInputError

AREA_EPS = 1e-12


@dataclass
class TexelBinding:
    tex_width: int
    tex_height: int
    active_mask: np.ndarray    # (H, W) bool
    triangle: np.ndarray       # (T,) int triangle per active texel
    bary: np.ndarray           # (T, 3) barycentric weights, sum to 1

    @property
    def texel_count(self) -> int:
        return self.triangle.shape[0]


@dataclass
class CorrespondenceMesh:
    vertices: np.ndarray       # (V, 3)
    triangles: np.ndarray      # (F, 3) int
    uv: np.ndarray             # (V, 2) in [0, 1]^2
    texel_binding: TexelBinding = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.uv = np.ascontiguousarray(self.uv, dtype=np.float64).reshape(-1, 2)
        if self.uv.shape[0] != self.vertices.shape[0]:
            raise InvalidInputError("uv count must match vertex count")
        if self.triangles.size and self.triangles.max() >= self.vertices.shape[0]:
            raise InvalidInputError("triangle index out of range")

    def with_vertices(self, vertices) -> "CorrespondenceMesh":
        return CorrespondenceMesh(vertices, self.triangles, self.uv, self.texel_binding)


def frenet_frame(tri_vertices) -> np.ndarray:
    """Frame [tangent | bitangent | unit normal] of one triangle (rows of input)."""
    v = np.asarray(tri_vertices, dtype=np.float64).reshape(3, 3)
    t = v[1] - v[0]
    b = v[2] - v[0]
    n = np.cross(t, b)
    area2 = np.linalg.norm(n)
    if area2 * 0.5 <= AREA_EPS:
        raise InvalidInputError("degenerate triangle (area below 1e-12)")
    return np.stack([t, b, n / area2], axis=1)


def frenet_frames(vertices, triangles):
    """Frames for all triangles: (F, 3, 3); degenerate ones flagged."""
    v = np.asarray(vertices, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    p0, p1, p2 = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    t = p1 - p0
    b = p2 - p0
    n = np.cross(t, b)
    norm = np.linalg.norm(n, axis=1)
    degenerate = norm * 0.5 <= AREA_EPS
    n_unit = n / np.where(degenerate, 1.0, norm)[:, None]
    frames = np.stack([t, b, n_unit], axis=2)
    return frames, degenerate


def deformation_gradient(canonical, deformed) -> np.ndarray:
    """J = deformed_frame @ inv(canonical_frame); rigid motion gives the rotation."""
    e = np.asarray(canonical, dtype=np.float64).reshape(3, 3)
    eh = np.asarray(deformed, dtype=np.float64).reshape(3, 3)
    if abs(np.linalg.det(e)) < AREA_EPS:
        raise InvalidInputError("singular canonical frame")
    return eh @ np.linalg.inv(e)


def _polar_rotations(j):
    """Rotational polar factor per matrix in (F, 3, 3), det +1."""
    u, _, vt = np.linalg.svd(j)
    r = u @ vt
    neg = np.linalg.det(r) < 0
    if np.any(neg):
        u = u.copy()
        u[neg, :, -1] *= -1.0
        r = u @ vt
    return r


def compute_texel_binding(mesh: CorrespondenceMesh, tex_width, tex_height) -> TexelBinding:
    """Rasterize triangles into the UV grid (texel-center sampling, ties to the
    lowest triangle index) and record (triangle, barycentric) per covered texel."""
    tri_uv = np.ascontiguousarray(mesh.uv[mesh.triangles])  # (F, 3, 2)
    tri_idx, bary = kernels.rasterize_uv(tri_uv, int(tex_width), int(tex_height))
    mask = tri_idx >= 0
    return TexelBinding(tex_width, tex_height, mask,
                        tri_idx[mask].copy(), bary[mask].copy())


def _anchor_points(mesh: CorrespondenceMesh, binding: TexelBinding):
    corners = mesh.vertices[mesh.triangles[binding.triangle]]  # (T, 3, 3)
    return np.einsum("tc,tcd->td", binding.bary, corners)


def apply_deformation(cloud: GaussianCloud, mesh_canon: CorrespondenceMesh,
                      mesh_def: CorrespondenceMesh, propagate_stretch=True):
    """Carry a canonical cloud onto a deformed pose of the same mesh.

    Positions move with the barycentric anchor plus J times the canonical
    offset; rotations compose with the polar rotation of J; when J is not a
    rotation and `propagate_stretch` is on, the per-axis stretch of the polar
    symmetric factor (expressed in the Gaussian's own axes) is added in log
    space. Texels whose deformed triangle is degenerate fall back to pure
    translation and are counted in the returned stats. Triangles that did not
    move at all pass their Gaussians through untouched.
    """
    binding = mesh_canon.texel_binding
    if binding is None:
        raise InvalidInputError("canonical mesh has no texel binding")
    if mesh_def.triangles.shape != mesh_canon.triangles.shape or np.any(
            mesh_def.triangles != mesh_canon.triangles):
        raise InvalidInputError("meshes must share topology")
    if cloud.count != binding.texel_count:
        raise InvalidInputError("cloud size does not match texel binding")

    frames_c, degen_c = frenet_frames(mesh_canon.vertices, mesh_canon.triangles)
    if np.any(degen_c[binding.triangle]):
        bad = int(binding.triangle[np.nonzero(degen_c[binding.triangle])[0][0]])
        raise InvalidInputError(f"degenerate canonical triangle {bad}")
    frames_d, degen_d = frenet_frames(mesh_def.vertices, mesh_def.triangles)

    tri_c = mesh_canon.vertices[mesh_canon.triangles]
    tri_d = mesh_def.vertices[mesh_def.triangles]
    unchanged_tri = np.all(tri_c == tri_d, axis=(1, 2))

    jall = np.einsum("fij,fjk->fik", frames_d,
                     np.linalg.inv(frames_c))  # (F, 3, 3)
    rot_polar = _polar_rotations(jall)
    quat_polar = np.stack([matrix_to_quat(r) for r in rot_polar])

    t_idx = binding.triangle
    j = jall[t_idx]
    rp = rot_polar[t_idx]
    anchors_c = _anchor_points(mesh_canon, binding)
    anchors_d = _anchor_points(mesh_def, binding)
    offsets = cloud.positions - anchors_c

    fallback = degen_d[t_idx]
    passthrough = unchanged_tri[t_idx]

    new_pos = anchors_d + np.einsum("tij,tj->ti", j, offsets)
    new_pos[fallback] = cloud.positions[fallback] + (anchors_d - anchors_c)[fallback]

    new_rot = quat_multiply(quat_polar[t_idx], cloud.rotations)
    new_rot[fallback] = cloud.rotations[fallback]

    new_ls = cloud.log_scales.copy()
    if propagate_stretch:
        sym = np.einsum("tji,tjk->tik", rp, j)  # polar symmetric factor R^T J
        rg = quat_to_matrix(cloud.rotations)
        local = np.einsum("tji,tjk,tkl->til", rg, sym, rg)
        stretch = np.maximum(np.einsum("tii->ti", local), 1e-12)
        keep = ~(fallback | passthrough)
        new_ls[keep] += np.log(stretch[keep])

    new_pos[passthrough] = cloud.positions[passthrough]
    new_ls[passthrough] = cloud.log_scales[passthrough]

    out = GaussianCloud(new_pos, new_rot, new_ls,
                        cloud.opacity_logits.copy(), cloud.colors.copy())
    # construction renormalizes; restore untouched texels bitwise afterwards
    out.rotations[passthrough] = cloud.rotations[passthrough]
    out.positions[passthrough] = cloud.positions[passthrough]
    out.log_scales[passthrough] = cloud.log_scales[passthrough]
    return out, {"degenerate_fallback": int(np.count_nonzero(fallback))}


# ---------------------------------------------------------------------------
# OBJ I/O (v / vt / f with uv indices)

def save_obj(mesh: CorrespondenceMesh, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.uv:
        lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
    for f in mesh.triangles:
        a, b, c = (int(i) + 1 for i in f)
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path) -> CorrespondenceMesh:
    vertices, uvs, faces, face_uvs = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError(f"obj line {lineno}: only triangles are supported")
                vi, ti = [], []
                for token in parts[1:]:
                    bits = token.split("/")
                    vi.append(int(bits[0]) - 1)
                    ti.append(int(bits[1]) - 1 if len(bits) > 1 and bits[1] else int(bits[0]) - 1)
                faces.append(vi)
                face_uvs.append(ti)
    vertices = np.asarray(vertices, dtype=np.float64)
    uvs = np.asarray(uvs, dtype=np.float64) if uvs else np.zeros((len(vertices), 2))
    per_vertex_uv = np.zeros((len(vertices), 2))
    seen = np.zeros(len(vertices), dtype=bool)
    for vi, ti in zip(faces, face_uvs):
        for v, t in zip(vi, ti):
            if not seen[v]:
                per_vertex_uv[v] = uvs[t]
                seen[v] = True
    return CorrespondenceMesh(vertices, np.asarray(faces, dtype=np.int64), per_vertex_uv)
