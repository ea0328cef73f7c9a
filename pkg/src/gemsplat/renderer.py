"""Tile-based forward splatting and the analytic backward pass.

The forward projects every Gaussian to a 2D splat (local affine approximation
of perspective), sorts splats by camera-space depth with index tie-breaks,
bins them to 16x16 tiles, and alpha-composites front-to-back per pixel. The
backward applies the chain rule through compositing, the 2D Gaussian, the
projection, covariance construction, and the activations (exp on scales,
sigmoid on opacity, quaternion normalization), producing gradients for every
raw cloud parameter. Culled and near-singular splats get exactly zero
gradient.

Tiles are processed serially in fixed index order, so results never depend on
scheduling; a single call is not reentrant with its own state but distinct
calls are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import Camera, GaussianCloud, DET_EPS, DEFAULT_LOWPASS, DEFAULT_NEAR_PLANE, sigmoid
from .errors import ContractViolationError
from .images import ImageBuffer


@dataclass(frozen=True)
class RenderSettings:
    near: float = DEFAULT_NEAR_PLANE
    lowpass: float = DEFAULT_LOWPASS
    tile_size: int = 16
    alpha_clamp: float = 0.999
    min_transmittance: float = 1e-4
    cutoff_sigmas: float = 3.0


@dataclass
class SortedSplatList:
    """Per-splat state retained from a forward call for the backward pass."""

    camera: Camera
    settings: RenderSettings
    background: np.ndarray
    count: int
    culled: np.ndarray          # (N,) bool
    singular: np.ndarray        # (N,) bool
    order: np.ndarray           # depth-sorted indices of composited splats
    pc: np.ndarray              # (N, 3) camera-space positions
    centers: np.ndarray         # (N, 2) pixel centers
    cov2d: np.ndarray           # (N, 3) upper (a, b, c), lowpass included
    det: np.ndarray             # (N,)
    cinv: np.ndarray            # (N, 3) inverse upper
    alpha0: np.ndarray          # (N,) sigmoid(opacity_logit)
    bbox: np.ndarray            # (N, 4) int64 cmin, cmax, rmin, rmax
    tile_offsets: np.ndarray
    tile_list: np.ndarray
    n_tx: int
    n_ty: int
    transmittance: np.ndarray   # (H, W) leftover after compositing
    weight_sum: np.ndarray      # (H, W) sum of composited weights
    # raw inputs, needed to rebuild jacobians in the backward pass
    positions: np.ndarray = field(repr=False, default=None)
    rotations: np.ndarray = field(repr=False, default=None)
    log_scales: np.ndarray = field(repr=False, default=None)
    colors: np.ndarray = field(repr=False, default=None)


@dataclass
class RenderGradients:
    d_positions: np.ndarray
    d_rotations: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_colors: np.ndarray


@dataclass(frozen=True)
class RenderStats:
    culled: int
    skipped_singular: int
    max_splats_per_tile: int


def _batch_quat_matrices(qhat):
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    r = np.empty((qhat.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - z * w)
    r[:, 0, 2] = 2 * (x * z + y * w)
    r[:, 1, 0] = 2 * (x * y + z * w)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - x * w)
    r[:, 2, 0] = 2 * (x * z - y * w)
    r[:, 2, 1] = 2 * (y * z + x * w)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _quat_matrix_jacobian(qhat):
    """d(rotation matrix)/d(unit quaternion): (K, 4, 3, 3)."""
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    k = qhat.shape[0]
    jac = np.zeros((k, 4, 3, 3))
    o = np.zeros(k)
    jac[:, 0] = 2 * np.stack([np.stack([o, -z, y], -1),
                              np.stack([z, o, -x], -1),
                              np.stack([-y, x, o], -1)], 1)
    jac[:, 1] = 2 * np.stack([np.stack([o, y, z], -1),
                              np.stack([y, -2 * x, -w], -1),
                              np.stack([z, w, -2 * x], -1)], 1)
    jac[:, 2] = 2 * np.stack([np.stack([-2 * y, x, w], -1),
                              np.stack([x, o, z], -1),
                              np.stack([-w, z, -2 * y], -1)], 1)
    jac[:, 3] = 2 * np.stack([np.stack([-2 * z, -w, x], -1),
                              np.stack([w, -2 * z, y], -1),
                              np.stack([x, y, o], -1)], 1)
    return jac


def render_forward_arrays(positions, rotations, log_scales, opacity_logits, colors,
                          cam: Camera, background=(0.0, 0.0, 0.0),
                          settings: RenderSettings = RenderSettings()):
    """Forward splatting over raw attribute arrays (no cloud construction)."""
    positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
    log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
    opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
    colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(n, 3)
    background = np.asarray(background, dtype=np.float64).reshape(3)

    rw = cam.rotation
    pc = positions @ rw.T + cam.translation
    culled = pc[:, 2] <= settings.near
    z_safe = np.where(culled, 1.0, pc[:, 2])

    qn = np.linalg.norm(rotations, axis=1, keepdims=True)
    qhat = rotations / np.maximum(qn, 1e-300)
    rg = _batch_quat_matrices(qhat)
    s = np.exp(log_scales)
    mm = rg * s[:, None, :]
    cov3 = mm @ np.transpose(mm, (0, 2, 1))

    x, y = pc[:, 0], pc[:, 1]
    inv_z = 1.0 / z_safe
    jproj = np.zeros((n, 2, 3))
    jproj[:, 0, 0] = cam.fx * inv_z
    jproj[:, 1, 1] = cam.fy * inv_z
    jproj[:, 0, 2] = -cam.fx * x * inv_z * inv_z
    jproj[:, 1, 2] = -cam.fy * y * inv_z * inv_z
    m2 = jproj @ rw
    cov2_full = m2 @ cov3 @ np.transpose(m2, (0, 2, 1))
    a = cov2_full[:, 0, 0] + settings.lowpass
    b = cov2_full[:, 0, 1]
    c = cov2_full[:, 1, 1] + settings.lowpass
    cov2d = np.stack([a, b, c], axis=1)
    det = a * c - b * b
    singular = (~culled) & (det <= DET_EPS)
    visible = ~(culled | singular)

    centers = np.stack([cam.fx * x * inv_z + cam.cx, cam.fy * y * inv_z + cam.cy], axis=1)
    det_safe = np.where(det <= DET_EPS, 1.0, det)
    cinv = np.stack([c, -b, a], axis=1) / det_safe[:, None]
    alpha0 = sigmoid(opacity_logits)

    rx = settings.cutoff_sigmas * np.sqrt(np.maximum(a, 0.0))
    ry = settings.cutoff_sigmas * np.sqrt(np.maximum(c, 0.0))
    bbox = np.empty((n, 4), dtype=np.int64)
    with np.errstate(invalid="ignore"):
        bbox[:, 0] = np.ceil(centers[:, 0] - rx - 0.5)
        bbox[:, 1] = np.floor(centers[:, 0] + rx - 0.5)
        bbox[:, 2] = np.ceil(centers[:, 1] - ry - 0.5)
        bbox[:, 3] = np.floor(centers[:, 1] + ry - 0.5)

    vis_idx = np.nonzero(visible)[0]
    order = vis_idx[np.argsort(pc[vis_idx, 2], kind="stable")]

    tile = settings.tile_size
    n_tx = (cam.width + tile - 1) // tile
    n_ty = (cam.height + tile - 1) // tile
    offsets, lst = kernels.bin_splats(order, bbox[:, 0], bbox[:, 1], bbox[:, 2], bbox[:, 3],
                                      n_tx, n_ty, tile, cam.width, cam.height)
    img, trans, wsum = kernels.composite_forward(
        offsets, lst, n_tx, n_ty, tile,
        bbox[:, 0].copy(), bbox[:, 1].copy(), bbox[:, 2].copy(), bbox[:, 3].copy(),
        centers, cinv, alpha0, colors, background,
        cam.width, cam.height, settings.alpha_clamp, settings.min_transmittance)

    sorted_list = SortedSplatList(
        camera=cam, settings=settings, background=background, count=n,
        culled=culled, singular=singular, order=order, pc=pc, centers=centers,
        cov2d=cov2d, det=det, cinv=cinv, alpha0=alpha0, bbox=bbox,
        tile_offsets=offsets, tile_list=lst, n_tx=n_tx, n_ty=n_ty,
        transmittance=trans, weight_sum=wsum,
        positions=positions, rotations=rotations, log_scales=log_scales, colors=colors)
    return ImageBuffer(img, background), sorted_list


def render_forward(cloud: GaussianCloud, cam: Camera, background=(0.0, 0.0, 0.0),
                   settings: RenderSettings = RenderSettings()):
    return render_forward_arrays(cloud.positions, cloud.rotations, cloud.log_scales,
                                 cloud.opacity_logits, cloud.colors, cam, background, settings)


def render_backward(sorted_list: SortedSplatList, cam: Camera, d_pixels) -> RenderGradients:
    """Gradients of sum(d_pixels * image) w.r.t. every raw cloud parameter."""
    if isinstance(d_pixels, ImageBuffer):
        d_pixels = d_pixels.pixels
    d_pixels = np.ascontiguousarray(d_pixels, dtype=np.float64)
    st = sorted_list
    if cam is not st.camera and not np.array_equal(cam.world_to_camera, st.camera.world_to_camera):
        raise ContractViolationError("camera does not match the forward call")
    if d_pixels.shape != (cam.height, cam.width, 3):
        raise ContractViolationError(
            f"gradient shape {d_pixels.shape} does not match image {(cam.height, cam.width, 3)}")

    n = st.count
    zeros = RenderGradients(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
                            np.zeros(n), np.zeros((n, 3)))
    if st.order.size == 0:
        return zeros

    g_center, g_cinv, g_alpha0, g_color = kernels.composite_backward(
        st.tile_offsets, st.tile_list, st.n_tx, st.n_ty, st.settings.tile_size,
        st.bbox[:, 0].copy(), st.bbox[:, 1].copy(), st.bbox[:, 2].copy(), st.bbox[:, 3].copy(),
        st.centers, st.cinv, st.alpha0, st.colors, st.background,
        cam.width, cam.height, st.settings.alpha_clamp, st.settings.min_transmittance,
        d_pixels)

    idx = st.order
    k = idx.size
    a = st.cov2d[idx, 0]
    b = st.cov2d[idx, 1]
    c = st.cov2d[idx, 2]
    det = st.det[idx]
    det2 = det * det

    # cinv = (c, -b, a) / det  ->  3x3 jacobian w.r.t. (a, b, c)
    jci = np.empty((k, 3, 3))
    jci[:, 0, 0] = -c * c / det2
    jci[:, 0, 1] = 2 * b * c / det2
    jci[:, 0, 2] = 1.0 / det - a * c / det2
    jci[:, 1, 0] = b * c / det2
    jci[:, 1, 1] = -2 * b * b / det2 - 1.0 / det
    jci[:, 1, 2] = a * b / det2
    jci[:, 2, 0] = 1.0 / det - a * c / det2
    jci[:, 2, 1] = 2 * a * b / det2
    jci[:, 2, 2] = -a * a / det2
    g_cov2d = np.einsum("kj,kji->ki", g_cinv[idx], jci)

    # rebuild per-splat geometry for the chain below
    rw = cam.rotation
    pc = st.pc[idx]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    inv_z = 1.0 / z
    qn = np.linalg.norm(st.rotations[idx], axis=1)
    qhat = st.rotations[idx] / qn[:, None]
    rg = _batch_quat_matrices(qhat)
    s = np.exp(st.log_scales[idx])
    mm = rg * s[:, None, :]
    cov3 = mm @ np.transpose(mm, (0, 2, 1))
    jproj = np.zeros((k, 2, 3))
    jproj[:, 0, 0] = cam.fx * inv_z
    jproj[:, 1, 1] = cam.fy * inv_z
    jproj[:, 0, 2] = -cam.fx * x * inv_z ** 2
    jproj[:, 1, 2] = -cam.fy * y * inv_z ** 2
    m2 = jproj @ rw

    # cov2d = m2 cov3 m2^T (+ lowpass): gradients w.r.t. cov3 and m2
    ga, gb, gc = g_cov2d[:, 0], g_cov2d[:, 1], g_cov2d[:, 2]
    m0 = m2[:, 0, :]
    m1 = m2[:, 1, :]
    g_sigma = (ga[:, None, None] * np.einsum("ki,kj->kij", m0, m0)
               + gb[:, None, None] * np.einsum("ki,kj->kij", m0, m1)
               + gc[:, None, None] * np.einsum("ki,kj->kij", m1, m1))
    sig_m0 = np.einsum("kij,kj->ki", cov3, m0)
    sig_m1 = np.einsum("kij,kj->ki", cov3, m1)
    g_m2 = np.empty((k, 2, 3))
    g_m2[:, 0, :] = 2 * ga[:, None] * sig_m0 + gb[:, None] * sig_m1
    g_m2[:, 1, :] = gb[:, None] * sig_m0 + 2 * gc[:, None] * sig_m1

    # m2 = jproj @ rw: pull gradient back onto the projection jacobian
    g_jproj = np.einsum("kij,lj->kil", g_m2, rw)
    g_pc = np.zeros((k, 3))
    g_pc[:, 0] += g_jproj[:, 0, 2] * (-cam.fx * inv_z ** 2)
    g_pc[:, 1] += g_jproj[:, 1, 2] * (-cam.fy * inv_z ** 2)
    g_pc[:, 2] += (g_jproj[:, 0, 0] * (-cam.fx * inv_z ** 2)
                   + g_jproj[:, 1, 1] * (-cam.fy * inv_z ** 2)
                   + g_jproj[:, 0, 2] * (2 * cam.fx * x * inv_z ** 3)
                   + g_jproj[:, 1, 2] * (2 * cam.fy * y * inv_z ** 3))
    # pixel center path: du/dpc equals the projection jacobian
    g_pc += np.einsum("kij,ki->kj", jproj, g_center[idx])
    g_pos = g_pc @ rw

    # cov3 = mm mm^T
    g_mm = np.einsum("kij,kjl->kil", g_sigma + np.transpose(g_sigma, (0, 2, 1)), mm)
    g_rg = g_mm * s[:, None, :]
    g_s = np.einsum("kij,kij->kj", rg, g_mm)
    g_ls = g_s * s

    jq = _quat_matrix_jacobian(qhat)
    g_qhat = np.einsum("kij,ktij->kt", g_rg, jq)
    # normalization jacobian (I - qhat qhat^T) / |q|
    proj = np.eye(4)[None] - np.einsum("ki,kj->kij", qhat, qhat)
    g_q = np.einsum("kij,kj->ki", proj, g_qhat) / qn[:, None]

    g_logit = g_alpha0[idx] * st.alpha0[idx] * (1.0 - st.alpha0[idx])

    out = zeros
    out.d_positions[idx] = g_pos
    out.d_rotations[idx] = g_q
    out.d_log_scales[idx] = g_ls
    out.d_opacity_logits[idx] = g_logit
    out.d_colors[idx] = g_color[idx]
    return out


def render_stats(sorted_list: SortedSplatList) -> RenderStats:
    per_tile = np.diff(sorted_list.tile_offsets)
    non_culled = ~sorted_list.culled
    return RenderStats(
        culled=int(np.count_nonzero(sorted_list.culled)),
        skipped_singular=int(np.count_nonzero(non_culled & (sorted_list.det <= DET_EPS))),
        max_splats_per_tile=int(per_tile.max()) if per_tile.size else 0)
