"""Gaussian primitives, cameras, and the covariance/projection math.

A cloud stores raw (unconstrained) parameters: natural-log scales and
pre-sigmoid opacity logits. Activations (exp, sigmoid) are applied at render
time, which keeps linear models and gradient descent over these attributes
unconstrained.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError

QUAT_NORM_TOL = 1e-6
DEFAULT_NEAR_PLANE = 0.01
DEFAULT_LOWPASS = 0.3
DET_EPS = 1e-12


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z convention)

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InvalidInputError("zero-norm quaternion")
    return q / n


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - z * w)
    m[..., 0, 2] = 2.0 * (x * z + y * w)
    m[..., 1, 0] = 2.0 * (x * y + z * w)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - x * w)
    m[..., 2, 0] = 2.0 * (x * z - y * w)
    m[..., 2, 1] = 2.0 * (y * z + x * w)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_multiply(a, b):
    """Hamilton product a*b, both (..., 4) in (w, x, y, z)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def align_quat_signs(quats, reference):
    """Flip quaternion signs so each row has non-negative dot with its reference row."""
    quats = np.asarray(quats, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    dots = np.sum(quats * reference, axis=-1, keepdims=True)
    return np.where(dots < 0.0, -quats, quats)


# ---------------------------------------------------------------------------
# domain types

@dataclass
class GaussianCloud:
    """Fixed-size set of 3D Gaussian primitives.

    positions       (N, 3) world units
    rotations       (N, 4) unit quaternions (w, x, y, z)
    log_scales      (N, 3) natural log of per-axis scale
    opacity_logits  (N,)   pre-sigmoid opacity
    colors          (N, 3) RGB in [0, 1]
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(n, 3)
        for name in ("positions", "rotations", "log_scales", "opacity_logits", "colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInputError(f"non-finite values in {name}")
        # renormalize: linear ops on quaternion components are not norm-preserving
        self.rotations = quat_normalize(self.rotations)
        if self.colors.size and (self.colors.min() < -1e-9 or self.colors.max() > 1.0 + 1e-9):
            raise InvalidInputError("colors outside [0, 1]")
        self.colors = np.clip(self.colors, 0.0, 1.0)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.rotations.copy(),
                             self.log_scales.copy(), self.opacity_logits.copy(),
                             self.colors.copy())

    @staticmethod
    def empty() -> "GaussianCloud":
        z = np.zeros((0, 3))
        return GaussianCloud(z, np.zeros((0, 4)), z.copy(), np.zeros(0), z.copy())


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera transform.

    Camera space is x right, y down, z forward; a point is visible when its
    camera-space z exceeds the near plane. Pixel (row r, col c) samples the
    image plane at (c + 0.5, r + 0.5).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.ascontiguousarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "world_to_camera", m)
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("non-finite world_to_camera")
        r = m[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise InvalidInputError("world_to_camera rotation is not orthonormal")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def to_camera_space(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def to_json(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "worldToCamera": [float(v) for v in self.world_to_camera.reshape(-1)],
        }

    @staticmethod
    def from_json(data: dict) -> "Camera":
        try:
            w2c = np.asarray(data["worldToCamera"], dtype=np.float64).reshape(4, 4)
            return Camera(int(data["width"]), int(data["height"]),
                          float(data["fx"]), float(data["fy"]),
                          float(data["cx"]), float(data["cy"]), w2c)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad camera json: {exc}") from exc


def save_camera(cam: Camera, path) -> None:
    with open(path, "w") as fh:
        json.dump(cam.to_json(), fh, indent=1)


def load_camera(path) -> Camera:
    with open(path) as fh:
        return Camera.from_json(json.load(fh))


def look_at_camera(width, height, fov_deg, position, target=(0.0, 0.0, 0.0),
                   up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at `position` looking at `target`; fov is the horizontal field of view."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-12:  # looking straight along up: pick another hint
        upv = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, upv)
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ position
    fx = 0.5 * width / np.tan(np.radians(fov_deg) * 0.5)
    return Camera(width, height, fx, fx, width * 0.5, height * 0.5, w2c)


def orbit_camera(width, height, fov_deg, azimuth, elevation, distance,
                 target=(0.0, 0.0, 0.0)) -> Camera:
    """Orbit pose: azimuth/elevation in radians around a target, world up +y.

    The viewer implements the identical convention, so poses are exchangeable.
    """
    target = np.asarray(target, dtype=np.float64)
    ce = np.cos(elevation)
    pos = target + distance * np.array([ce * np.sin(azimuth),
                                        np.sin(elevation),
                                        ce * np.cos(azimuth)])
    return look_at_camera(width, height, fov_deg, pos, target)


# ---------------------------------------------------------------------------
# covariance construction and projection

def covariance3d(rotation, log_scale) -> np.ndarray:
    """World-space covariance R diag(exp(2*log_scale)) R^T of one Gaussian."""
    rotation = np.asarray(rotation, dtype=np.float64)
    log_scale = np.asarray(log_scale, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(log_scale))):
        raise InvalidInputError("non-finite rotation or log_scale")
    r = quat_to_matrix(quat_normalize(rotation))
    m = r * np.exp(log_scale)[None, :]
    return m @ m.T


@dataclass(frozen=True)
class ProjectedSplat:
    cov2d: np.ndarray   # (2, 2) symmetric, low-pass floor included
    center: np.ndarray  # (2,) pixel coordinates
    depth: float        # camera-space z


def project_covariance(cov, mean, cam: Camera, near=DEFAULT_NEAR_PLANE,
                       lowpass=DEFAULT_LOWPASS):
    """Project a world covariance to the image plane.

    Uses the local affine approximation of perspective projection (Jacobian at
    the camera-space mean). Returns None when the point is behind the near
    plane (culled, not an error). `lowpass` is added to the diagonal so every
    splat stays at least about a pixel wide.
    """
    cov = np.asarray(cov, dtype=np.float64).reshape(3, 3)
    pc = cam.to_camera_space(np.asarray(mean, dtype=np.float64).reshape(3))
    x, y, z = pc
    if z <= near:
        return None
    j = np.array([[cam.fx / z, 0.0, -cam.fx * x / (z * z)],
                  [0.0, cam.fy / z, -cam.fy * y / (z * z)]])
    m = j @ cam.rotation
    cov2 = m @ cov @ m.T + lowpass * np.eye(2)
    center = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    return ProjectedSplat(cov2, center, float(z))


def eval_gaussian2d(cov2, center, pixel) -> float:
    """exp(-0.5 * d^T cov2^-1 d); 0.0 for a near-singular covariance (skipped)."""
    cov2 = np.asarray(cov2, dtype=np.float64).reshape(2, 2)
    a, b, c = cov2[0, 0], cov2[0, 1], cov2[1, 1]
    det = a * c - b * b
    if det <= DET_EPS:
        return 0.0
    d = np.asarray(pixel, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    maha = (c * d[0] * d[0] - 2.0 * b * d[0] * d[1] + a * d[1] * d[1]) / det
    return float(np.exp(-0.5 * maha))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p, eps=1e-7):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# PLY import/export
#
# Scales and opacity are stored activated (world scale, [0,1] opacity) so the
# files are consumable by generic splat tooling; loading converts back to
# log/logit storage.

_PLY_PROPS = ["x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
              "scale_0", "scale_1", "scale_2", "opacity",
              "red", "green", "blue"]


def save_ply(cloud: GaussianCloud, path) -> None:
    n = cloud.count
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in _PLY_PROPS]
    header.append("end_header")
    data = np.empty((n, len(_PLY_PROPS)), dtype="<f4")
    data[:, 0:3] = cloud.positions
    data[:, 3:7] = cloud.rotations
    data[:, 7:10] = np.exp(cloud.log_scales)
    data[:, 10] = sigmoid(cloud.opacity_logits)
    data[:, 11:14] = cloud.colors
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise FormatError("ply: missing end_header")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if not header or header[0].strip() != "ply":
        raise FormatError("ply: bad magic")
    if not any(h.strip() == "format binary_little_endian 1.0" for h in header):
        raise FormatError("ply: only binary_little_endian 1.0 is supported")
    count = None
    props = []
    for line in header:
        mt = re.match(r"element vertex (\d+)", line.strip())
        if mt:
            count = int(mt.group(1))
        mt = re.match(r"property float(?:32)? (\w+)", line.strip())
        if mt:
            props.append(mt.group(1))
    if count is None:
        raise FormatError("ply: missing vertex element")
    missing = [p for p in _PLY_PROPS if p not in props]
    if missing:
        raise FormatError(f"ply: missing properties {missing}")
    want = count * len(props) * 4
    if len(body) < want:
        raise FormatError("ply: truncated payload")
    data = np.frombuffer(body[:want], dtype="<f4").reshape(count, len(props)).astype(np.float64)
    col = {p: data[:, i] for i, p in enumerate(props)}
    positions = np.stack([col["x"], col["y"], col["z"]], axis=1)
    rotations = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    scales = np.stack([col[f"scale_{i}"] for i in range(3)], axis=1)
    if np.any(scales <= 0):
        raise FormatError("ply: non-positive scale")
    colors = np.clip(np.stack([col["red"], col["green"], col["blue"]], axis=1), 0.0, 1.0)
    return GaussianCloud(positions, rotations, np.log(scales),
                         logit(col["opacity"]), colors)
