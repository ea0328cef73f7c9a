"""Photometric refinement of eigenmodel bases and coefficient fitting.

Both paths minimize (1 - omega) * L1 + omega * D-SSIM between renders and
target images, back-propagated through the splatting renderer. Refinement
descends on means, basis rows, and the color texture with coefficients held
fixed, re-orthogonalizing each basis by QR every `orthogonalize_every` steps
(and once at the end); stored coefficients are re-projected after every QR
pass since the basis rotates inside its span. Fitting freezes the model and
descends on the coefficients only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .core import Camera
from .eigenmodel import (MODALITIES, CoefficientVector, EigenBasis, GemModel,
                         evaluate_attributes, orthogonalize)
from .errors import GemError, InvalidInputError
from .images import ImageBuffer
from .optim import Adam
from .renderer import RenderSettings, render_backward, render_forward_arrays

DEFAULT_LR_SCALES = {"position": 1.0, "rotation": 0.1, "scale": 0.1, "opacity": 0.5}


@dataclass(frozen=True)
class RefineConfig:
    omega: float = 0.2              # D-SSIM weight
    zeta: float = 0.0               # perceptual weight; only used via the hook
    lam: float = 1e-2               # weight of mean squared position offset
    gamma: float = 1e-3             # weight of mean squared activated scale
    step_size: float = 5e-4
    steps: int = 1000
    orthogonalize_every: int = 1000
    batch: int = 1
    lr_scales: dict = field(default_factory=lambda: dict(DEFAULT_LR_SCALES))
    # basis rows live at O(1/sqrt(D)) magnitude; full-size steps on them act
    # like huge relative perturbations and the L1 sign-gradient noise ball
    # then erodes the model, so basis updates run an order slower
    basis_lr_scale: float = 0.1
    perceptual_hook: object = None  # callable(render, target) -> (loss, pixel grad)
    render_settings: RenderSettings = RenderSettings()

    def __post_init__(self):
        if not 0.0 <= self.omega < 1.0:
            raise InvalidInputError("omega must be in [0, 1)")
        if min(self.zeta, self.lam, self.gamma, self.step_size) < 0:
            raise InvalidInputError("weights must be non-negative")
        if self.orthogonalize_every < 1:
            raise InvalidInputError("orthogonalize_every must be >= 1")


@dataclass
class TrainingFrame:
    coefficients: CoefficientVector
    camera: Camera
    target: ImageBuffer


def photometric_loss(render, target, cfg: RefineConfig):
    """Loss value, pixel gradient, and the (l1, dssim) parts.

    Identical buffers short-circuit to an exactly-zero gradient; without this,
    last-ulp render noise would feed sign() and the adaptive optimizer would
    amplify it to full-size steps, destroying the fixed point.
    """
    a = render.pixels if isinstance(render, ImageBuffer) else np.asarray(render, dtype=np.float64)
    b = target.pixels if isinstance(target, ImageBuffer) else np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"render {a.shape} vs target {b.shape}")
    if np.array_equal(a, b):
        return 0.0, np.zeros_like(a), {"l1": 0.0, "dssim": 0.0}
    diff = a - b
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - cfg.omega) * np.sign(diff) / diff.size
    if cfg.omega > 0.0:
        ds, ds_grad = metrics.dssim(a, b, gradient=True)
        grad += cfg.omega * ds_grad
    else:
        ds = 0.0
    loss = (1.0 - cfg.omega) * l1 + cfg.omega * ds
    if cfg.perceptual_hook is not None and cfg.zeta > 0.0:
        p_loss, p_grad = cfg.perceptual_hook(a, b)
        loss += cfg.zeta * p_loss
        grad += cfg.zeta * p_grad
    return loss, grad, {"l1": l1, "dssim": ds}


def _render_from_attrs(attrs, color, camera, target, settings):
    return render_forward_arrays(attrs["position"], attrs["rotation"], attrs["scale"],
                                 attrs["opacity"][:, 0], color, camera,
                                 target.background, settings)


def render_reconstruction(model: GemModel, k: CoefficientVector, camera: Camera,
                          background=(0.0, 0.0, 0.0),
                          settings: RenderSettings = RenderSettings()) -> ImageBuffer:
    """Render coefficients through the exact forward path refinement uses.

    Targets produced this way are bitwise-reproducible fixed points of
    refine_bases and fit_coefficients (raw attributes, single quaternion
    normalization inside the renderer).
    """
    attrs = evaluate_attributes(model, k)
    img, _ = render_forward_arrays(attrs["position"], attrs["rotation"], attrs["scale"],
                                   attrs["opacity"][:, 0], model.color_texture, camera,
                                   background, settings)
    return img


def _training_psnr(params, color, frames, coeffs, settings):
    vals = []
    for frame, k in zip(frames, coeffs):
        attrs = _reconstruct(params, k)
        img, _ = _render_from_attrs(attrs, np.clip(color, 0.0, 1.0), frame.camera,
                                    frame.target, settings)
        vals.append(metrics.psnr(img, frame.target))
    return float(np.mean(vals))


def _reconstruct(params, k: CoefficientVector):
    out = {}
    for mod in MODALITIES:
        mean, basis, dim = params[mod]
        kb = getattr(k, mod)
        vec = mean + kb @ basis if kb.size else mean.copy()
        out[mod] = vec.reshape(-1, dim)
    return out


def _frame_gradients(params, color, frame: TrainingFrame, k: CoefficientVector,
                     cfg: RefineConfig, t_count):
    """Loss and gradients of one training frame w.r.t. means, bases, and color.

    The position-offset regularizer depends on (position - mean) which is
    independent of the mean itself, so it contributes to basis gradients only.
    Color entries pinned at the [0,1] clip only receive inward gradients.
    """
    attrs = _reconstruct(params, k)
    color_act = np.clip(color, 0.0, 1.0)
    img, sorted_list = _render_from_attrs(attrs, color_act, frame.camera,
                                          frame.target, cfg.render_settings)
    loss, gpix, parts = photometric_loss(img, frame.target, cfg)
    grads = render_backward(sorted_list, frame.camera, gpix)
    attr_grads = {"position": grads.d_positions, "rotation": grads.d_rotations,
                  "scale": grads.d_log_scales,
                  "opacity": grads.d_opacity_logits[:, None]}
    if cfg.lam > 0.0:
        offs = attrs["position"] - params["position"][0].reshape(-1, 3)
        loss += cfg.lam * float(np.mean(np.sum(offs ** 2, axis=1)))
        attr_grads["position"] = attr_grads["position"] + 2.0 * cfg.lam * offs / t_count
    if cfg.gamma > 0.0:
        s2 = np.exp(2.0 * attrs["scale"])
        loss += cfg.gamma * float(np.mean(np.sum(s2, axis=1)))
        attr_grads["scale"] = attr_grads["scale"] + 2.0 * cfg.gamma * s2 / t_count
    g_mean = {}
    g_basis = {}
    for mod in MODALITIES:
        gx = attr_grads[mod].reshape(-1)
        if mod == "position" and cfg.lam > 0.0:
            g_mean[mod] = grads.d_positions.reshape(-1).copy()
        else:
            g_mean[mod] = gx.copy()
        kb = getattr(k, mod)
        g_basis[mod] = np.outer(kb, gx) if kb.size else np.zeros((0, gx.size))
    live = ((color > 0.0) & (color < 1.0)) | ((color <= 0.0) & (grads.d_colors < 0)) \
        | ((color >= 1.0) & (grads.d_colors > 0))
    g_color = np.where(live, grads.d_colors, 0.0)
    return loss, parts, g_mean, g_basis, g_color, metrics.psnr(img, frame.target)


def refine_bases(model: GemModel, train, cfg: RefineConfig):
    """Descend means, bases, and color against training images.

    Returns (refined model, history) where history carries one row per step
    (step, l1, dssim, total, psnr) plus a checkpoint list with the
    training-set PSNR right before and after every QR pass.
    """
    frames = list(train)
    if any(f.coefficients is None for f in frames):
        raise InvalidInputError("every training frame needs coefficients")
    params = {}
    for mod in MODALITIES:
        b = model.bases[mod]
        params[mod] = (b.mean.copy(), b.basis.copy(), b.dim)
    color = model.color_texture.copy()
    coeffs = [f.coefficients.copy() for f in frames]
    t_count = model.texel_count

    flat_params = []
    lrs = []
    for mod in MODALITIES:
        scale = cfg.lr_scales.get(mod, 1.0) * cfg.step_size
        flat_params += [params[mod][0], params[mod][1]]
        lrs += [scale, scale * cfg.basis_lr_scale]
    flat_params.append(color)
    lrs.append(cfg.step_size)
    opt = Adam(flat_params, lrs)

    history = []
    checkpoints = []
    settings = cfg.render_settings
    if cfg.steps == 0:
        out = model.copy()
        return out, {"steps": history, "checkpoints": checkpoints}

    for step in range(cfg.steps):
        g_mean = {mod: np.zeros_like(params[mod][0]) for mod in MODALITIES}
        g_basis = {mod: np.zeros_like(params[mod][1]) for mod in MODALITIES}
        g_color = np.zeros_like(color)
        tot = l1_v = ds_v = psnr_v = 0.0
        for j in range(cfg.batch):
            fi = (step * cfg.batch + j) % len(frames)
            loss, parts, gm, gb, gc, frame_psnr = _frame_gradients(
                params, color, frames[fi], coeffs[fi], cfg, t_count)
            if not np.isfinite(loss):
                raise GemError(f"non-finite loss at step {step} (frame {fi}): {parts}")
            for mod in MODALITIES:
                g_mean[mod] += gm[mod]
                g_basis[mod] += gb[mod]
            g_color += gc
            tot += loss
            l1_v += parts["l1"]
            ds_v += parts["dssim"]
            psnr_v += frame_psnr
        inv = 1.0 / cfg.batch
        grad_list = []
        for mod in MODALITIES:
            grad_list += [g_mean[mod] * inv, g_basis[mod] * inv]
        grad_list.append(g_color * inv)
        opt.step(grad_list)
        history.append({"step": step, "l1": l1_v * inv, "dssim": ds_v * inv,
                        "total": tot * inv, "psnr": psnr_v * inv})

        if (step + 1) % cfg.orthogonalize_every == 0 or step == cfg.steps - 1:
            before = _training_psnr(params, color, frames, coeffs, settings)
            for mod in MODALITIES:
                mean, basis, dim = params[mod]
                if basis.shape[0] == 0:
                    continue
                new_basis = orthogonalize(basis)
                transfer = new_basis @ basis.T
                for k in coeffs:
                    setattr(k, mod, transfer @ getattr(k, mod))
                basis[:] = new_basis
            after = _training_psnr(params, color, frames, coeffs, settings)
            checkpoints.append({"step": step, "psnr_before": before, "psnr_after": after})

    bases = {mod: EigenBasis(mod, params[mod][0], params[mod][1],
                             model.bases[mod].stddev.copy())
             for mod in MODALITIES}
    refined = GemModel(model.tex_width, model.tex_height, model.active_mask.copy(),
                       bases, np.clip(color, 0.0, 1.0))
    return refined, {"steps": history, "checkpoints": checkpoints,
                     "coefficients": coeffs}


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "l1", "dssim", "total", "psnr"])
        writer.writeheader()
        for row in history["steps"]:
            writer.writerow(row)


def save_checkpoint(model: GemModel, history, cfg: RefineConfig, path) -> None:
    """Model in the binary format plus a JSON sidecar of optimizer state flags."""
    import json

    from .eigenmodel import save_gem

    save_gem(model, path)
    last = history["steps"][-1] if history["steps"] else {}
    sidecar = {
        "optimizer": "adam",
        "betas": [0.9, 0.999],
        "eps": 1e-8,
        "steps_completed": len(history["steps"]),
        "step_size": cfg.step_size,
        "basis_lr_scale": cfg.basis_lr_scale,
        "lr_scales": cfg.lr_scales,
        "omega": cfg.omega,
        "zeta": cfg.zeta,
        "lam": cfg.lam,
        "gamma": cfg.gamma,
        "batch": cfg.batch,
        "orthogonalize_every": cfg.orthogonalize_every,
        "final": {k: last.get(k) for k in ("l1", "dssim", "total", "psnr")},
        "qr_checkpoints": history["checkpoints"],
    }
    with open(f"{path}.json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


@dataclass(frozen=True)
class FitConfig:
    steps: int = 300
    step_size: float = 0.05         # in units of each coefficient's stddev
    omega: float = 0.2
    clamp_sigmas: float = 4.0       # wider than the regressor's 3 sigma output
    render_settings: RenderSettings = RenderSettings()


def fit_coefficients(model: GemModel, targets, init: CoefficientVector,
                     cfg: FitConfig = FitConfig()):
    """Analysis-by-synthesis: recover coefficients for target views.

    `targets` is a list of (Camera, ImageBuffer). The model is frozen; the
    chain rule through reconstruction is the linear basis map. Coefficients
    are clamped to +-clamp_sigmas * stddev after every step; zero-variance
    coefficients stay pinned because their step size is zero. Deterministic.
    """
    targets = list(targets)
    if not targets:
        raise InvalidInputError("need at least one target view")
    k = init.copy()
    loss_cfg = RefineConfig(omega=cfg.omega, lam=0.0, gamma=0.0, steps=0)
    blocks = [getattr(k, mod) for mod in MODALITIES]
    sigmas = [model.bases[mod].stddev for mod in MODALITIES]
    lrs = [cfg.step_size * s for s in sigmas]
    bounds = [cfg.clamp_sigmas * s for s in sigmas]
    opt = Adam(blocks, lrs)
    losses = []
    for _ in range(cfg.steps):
        total = 0.0
        grads = [np.zeros_like(b) for b in blocks]
        attrs = evaluate_attributes(model, k)
        for camera, target in targets:
            img, sorted_list = _render_from_attrs(attrs, model.color_texture, camera,
                                                  target, cfg.render_settings)
            loss, gpix, _ = photometric_loss(img, target, loss_cfg)
            total += loss
            g = render_backward(sorted_list, camera, gpix)
            attr_grads = {"position": g.d_positions, "rotation": g.d_rotations,
                          "scale": g.d_log_scales, "opacity": g.d_opacity_logits[:, None]}
            for bi, mod in enumerate(MODALITIES):
                basis = model.bases[mod].basis
                if basis.shape[0]:
                    grads[bi] += basis @ attr_grads[mod].reshape(-1)
        opt.step(grads)
        for b, bound in zip(blocks, bounds):
            np.clip(b, -bound, bound, out=b)
        losses.append(total)
    return k, losses
