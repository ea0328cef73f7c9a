"""Deterministic synthetic scenes: a bumpy sphere-band "face proxy" animated
by sinusoidal blend fields, with Gaussians bound to its UV texels.

Every byte of the output is a pure function of the seed; per-frame randomness
comes from streams seeded with (seed, frame index), so parallel generation
cannot change results. This is the known-answer oracle for every other stage:
meshes drive clouds through the deformation module, clouds render to target
images, projected coefficients pair with synthetic features.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .core import GaussianCloud, logit, matrix_to_quat, orbit_camera, save_camera, save_ply
from .deform import CorrespondenceMesh, apply_deformation, compute_texel_binding
from .errors import InvalidInputError
from .images import write_pfm
from .renderer import RenderSettings, render_forward


@dataclass(frozen=True)
class BlendField:
    amplitude: float
    frequency: float   # cycles over the whole sequence
    phase: float
    center: tuple      # unit direction of the bump on the sphere
    width: float       # angular falloff in radians


def default_motion(seed=0, count=12, amplitude=0.06):
    rng = np.random.default_rng((seed, 101))
    fields = []
    for i in range(count):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        fields.append(BlendField(
            amplitude=amplitude * float(rng.uniform(0.5, 1.5)),
            frequency=float(rng.integers(1, 5)),
            phase=float(rng.uniform(0, 2 * np.pi)),
            center=tuple(float(v) for v in d),
            width=float(rng.uniform(0.35, 0.9)),
        ))
    return fields


@dataclass
class SynthSpec:
    seed: int = 0
    tex_resolution: int = 32
    frame_count: int = 20
    camera_count: int = 3
    image_width: int = 64
    image_height: int = 64
    mesh_rows: int = 12
    mesh_cols: int = 18
    motion: list = None
    position_noise: float = 0.0     # per-frame jitter on gaussian positions
    opacity_amplitude: float = 0.0  # blend-field modulation of opacity logits
    gem_components: int = 8
    feature_dim: int = 2048
    feature_noise: float = 0.0

    def __post_init__(self):
        if self.motion is None:
            self.motion = default_motion(self.seed)

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "seed", "tex_resolution", "frame_count", "camera_count", "image_width",
            "image_height", "mesh_rows", "mesh_cols", "position_noise",
            "opacity_amplitude", "gem_components", "feature_dim", "feature_noise")}
        d["motion"] = [vars(f) | {"center": list(f.center)} for f in self.motion]
        return d

    @staticmethod
    def from_json(d: dict) -> "SynthSpec":
        motion = [BlendField(m["amplitude"], m["frequency"], m["phase"],
                             tuple(m["center"]), m["width"])
                  for m in d.get("motion", [])] or None
        keys = {k: d[k] for k in d if k != "motion"}
        return SynthSpec(motion=motion, **keys)


@dataclass
class SynthSequence:
    spec: SynthSpec
    canonical_mesh: CorrespondenceMesh     # binding attached
    frame_vertices: list                    # per frame (V, 3)
    clouds: list                            # per frame GaussianCloud
    cameras: list

    @property
    def frame_meshes(self):
        return [self.canonical_mesh.with_vertices(v) for v in self.frame_vertices]


def _face_proxy_mesh(rows, cols, seed):
    """Sphere band with asymmetric radial bumps; bijective UVs on [0,1]^2."""
    rng = np.random.default_rng((seed, 55))
    v = np.linspace(0.2, 0.8, rows + 1)
    u = np.linspace(0.0, 1.0, cols + 1)
    uu, vv = np.meshgrid(u, v)
    theta = np.pi * vv           # polar angle from +y
    phi = 2.0 * np.pi * uu * (300.0 / 360.0)  # open band, no seam weld needed
    dirs = np.stack([np.sin(theta) * np.sin(phi), np.cos(theta),
                     np.sin(theta) * np.cos(phi)], axis=-1)
    radius = np.ones_like(theta)
    for _ in range(5):
        c = rng.normal(size=3)
        c /= np.linalg.norm(c)
        ang = np.arccos(np.clip(dirs @ c, -1.0, 1.0))
        radius += float(rng.uniform(0.05, 0.18)) * np.exp(-(ang / float(rng.uniform(0.3, 0.7))) ** 2)
    verts = (radius[..., None] * dirs).reshape(-1, 3)
    uv = np.stack([uu, vv], axis=-1).reshape(-1, 2)

    tris = []
    stride = cols + 1
    for r in range(rows):
        for c in range(cols):
            a = r * stride + c
            tris.append([a, a + 1, a + stride])
            tris.append([a + 1, a + stride + 1, a + stride])
    return CorrespondenceMesh(verts, np.asarray(tris, dtype=np.int64), uv)


def _vertex_normals(mesh: CorrespondenceMesh):
    v, tri = mesh.vertices, mesh.triangles
    fn = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])
    normals = np.zeros_like(v)
    for k in range(3):
        np.add.at(normals, tri[:, k], fn)
    return normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)


def _displace(mesh, motion, t):
    normals = _vertex_normals(mesh)
    dirs = mesh.vertices / np.maximum(np.linalg.norm(mesh.vertices, axis=1, keepdims=True), 1e-12)
    disp = np.zeros(len(mesh.vertices))
    for f in motion:
        ang = np.arccos(np.clip(dirs @ np.asarray(f.center), -1.0, 1.0))
        weight = np.exp(-(ang / f.width) ** 2)
        disp += f.amplitude * np.sin(2.0 * np.pi * f.frequency * t + f.phase) * weight
    return mesh.vertices + disp[:, None] * normals


def _canonical_cloud(mesh: CorrespondenceMesh, binding, seed):
    from .deform import frenet_frames

    corners = mesh.vertices[mesh.triangles[binding.triangle]]
    positions = np.einsum("tc,tcd->td", binding.bary, corners)
    frames, _ = frenet_frames(mesh.vertices, mesh.triangles)
    quats = []
    scales = []
    for f in binding.triangle:
        e = frames[f]
        t = e[:, 0] / np.linalg.norm(e[:, 0])
        n = e[:, 2]
        b = np.cross(n, t)
        quats.append(matrix_to_quat(np.stack([t, b, n], axis=1)))
        edge = np.linalg.norm(e[:, 0])
        scales.append([0.45 * edge, 0.45 * edge, 0.12 * edge])
    rng = np.random.default_rng((seed, 7))
    t_count = binding.texel_count
    mask_idx = np.nonzero(binding.active_mask.reshape(-1))[0]
    u = (mask_idx % binding.tex_width + 0.5) / binding.tex_width
    v = (mask_idx // binding.tex_width + 0.5) / binding.tex_height
    colors = np.stack([
        0.5 + 0.45 * np.sin(2 * np.pi * (2 * u + 0.1)),
        0.5 + 0.45 * np.sin(2 * np.pi * (3 * v + 0.4)),
        0.5 + 0.45 * np.sin(2 * np.pi * (u + v)),
    ], axis=1)
    colors = np.clip(colors + rng.normal(scale=0.02, size=(t_count, 3)), 0.0, 1.0)
    return GaussianCloud(positions, np.asarray(quats), np.log(np.asarray(scales)),
                         logit(np.full(t_count, 0.85)), colors)


def generate_sequence(spec: SynthSpec) -> SynthSequence:
    if spec.frame_count < 1:
        raise InvalidInputError("frame_count must be >= 1")
    mesh = _face_proxy_mesh(spec.mesh_rows, spec.mesh_cols, spec.seed)
    binding = compute_texel_binding(mesh, spec.tex_resolution, spec.tex_resolution)
    mesh.texel_binding = binding
    canon_cloud = _canonical_cloud(mesh, binding, spec.seed)

    anchor_dirs = canon_cloud.positions / np.maximum(
        np.linalg.norm(canon_cloud.positions, axis=1, keepdims=True), 1e-12)
    frame_vertices = []
    clouds = []
    for f in range(spec.frame_count):
        t = f / max(spec.frame_count, 1)
        verts = _displace(mesh, spec.motion, t)
        frame_vertices.append(verts)
        deformed, _ = apply_deformation(canon_cloud, mesh, mesh.with_vertices(verts))
        if spec.opacity_amplitude > 0.0:
            wobble = np.zeros(deformed.count)
            for fld in spec.motion:
                ang = np.arccos(np.clip(anchor_dirs @ np.asarray(fld.center), -1.0, 1.0))
                wobble += (np.sin(2.0 * np.pi * fld.frequency * t + fld.phase)
                           * np.exp(-(ang / fld.width) ** 2))
            deformed.opacity_logits = deformed.opacity_logits \
                + spec.opacity_amplitude * wobble
        if spec.position_noise > 0.0:
            rng = np.random.default_rng((spec.seed, f))
            deformed.positions += rng.normal(scale=spec.position_noise,
                                             size=deformed.positions.shape)
        clouds.append(deformed)

    cameras = []
    for c in range(spec.camera_count):
        az = 2.0 * np.pi * c / max(spec.camera_count, 1) * 0.25 - np.pi * 0.125
        cameras.append(orbit_camera(spec.image_width, spec.image_height, 45.0,
                                    az, 0.15, 4.0))
    return SynthSequence(spec, mesh, frame_vertices, clouds, cameras)


def render_ground_truth(seq: SynthSequence, cameras=None,
                        settings: RenderSettings = RenderSettings(),
                        background=(0.0, 0.0, 0.0)):
    """Render every (frame, camera) pair: list over frames of lists over cameras."""
    cameras = seq.cameras if cameras is None else cameras
    out = []
    for cloud in seq.clouds:
        row = []
        for cam in cameras:
            img, _ = render_forward(cloud, cam, background, settings)
            row.append(img)
        out.append(row)
    return out


def synthesize_features(coefficients, feature_dim, seed, noise=0.0):
    """Random linear lift of coefficient vectors into feature space.

    The lift bias acts as the neutral feature (zero coefficients map to it),
    so a learnable feature -> coefficient mapping exists by construction.
    Returns (features (N, F), neutral (F,)).
    """
    rows = np.stack([k.concat() for k in coefficients])
    k_dim = rows.shape[1]
    rng = np.random.default_rng((seed, 909))
    lift = rng.normal(scale=1.0 / np.sqrt(max(k_dim, 1)), size=(k_dim, feature_dim))
    neutral = rng.normal(scale=0.5, size=feature_dim)
    features = neutral[None, :] + rows @ lift
    if noise > 0.0:
        features = features + rng.normal(scale=noise, size=features.shape)
    return features, neutral


# ---------------------------------------------------------------------------
# dataset directory layout:
# spec.json, meshes/frame_%04d.obj, clouds/frame_%04d.ply, cams/cam_%02d.json,
# images/f%04d_c%02d.pfm, coeffs.bin, features.bin

def write_dataset(path, seq: SynthSequence, images=None) -> None:
    from .deform import save_obj

    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "spec.json"), "w") as fh:
        json.dump(seq.spec.to_json(), fh, indent=1)
    for sub in ("meshes", "clouds", "cams", "images"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    for f, mesh in enumerate(seq.frame_meshes):
        save_obj(mesh, os.path.join(path, "meshes", f"frame_{f:04d}.obj"))
    for f, cloud in enumerate(seq.clouds):
        save_ply(cloud, os.path.join(path, "clouds", f"frame_{f:04d}.ply"))
    for c, cam in enumerate(seq.cameras):
        save_camera(cam, os.path.join(path, "cams", f"cam_{c:02d}.json"))
    if images is not None:
        for f, row in enumerate(images):
            for c, img in enumerate(row):
                write_pfm(img, os.path.join(path, "images", f"f{f:04d}_c{c:02d}.pfm"))


def load_dataset_clouds(path):
    from .core import load_ply

    clouds_dir = os.path.join(path, "clouds")
    if not os.path.isdir(clouds_dir):
        raise FileNotFoundError(f"no clouds directory under {path}")
    names = sorted(n for n in os.listdir(clouds_dir) if n.endswith(".ply"))
    return [load_ply(os.path.join(clouds_dir, n)) for n in names]


def load_dataset_cameras(path):
    from .core import load_camera

    cams_dir = os.path.join(path, "cams")
    if not os.path.isdir(cams_dir):
        raise FileNotFoundError(f"no cams directory under {path}")
    names = sorted(n for n in os.listdir(cams_dir) if n.endswith(".json"))
    return [load_camera(os.path.join(cams_dir, n)) for n in names]


def load_dataset_spec(path) -> SynthSpec:
    with open(os.path.join(path, "spec.json")) as fh:
        return SynthSpec.from_json(json.load(fh))
