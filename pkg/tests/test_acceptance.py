"""Acceptance criteria, one test each, with stated tolerances and runtimes.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
PASS/FAIL lines. Criterion 12 (viewer golden test) lives with the frontend
package; everything here runs without it.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from brute import render_brute_cloud
from conftest import random_cloud
from gemsplat import metrics
from gemsplat.core import Camera, GaussianCloud, orbit_camera
from gemsplat.deform import (apply_deformation, compute_texel_binding,
                             deformation_gradient, frenet_frame)
from gemsplat.eigenmodel import (MODALITIES, CoefficientVector, EigenBasis, GemModel,
                                 distill, evaluate, model_stddevs, payload_layout,
                                 pca_fit, project, serialize)
from gemsplat.refine import (FitConfig, RefineConfig, TrainingFrame, fit_coefficients,
                             refine_bases, render_reconstruction)
from gemsplat.regress import (TrainHyper, _mlp_forward, build_feature_pca,
                              init_regressor, mlp_loss_and_gradients, regress, train)
from gemsplat.renderer import render_backward, render_forward, render_forward_arrays
from gemsplat.synth import SynthSpec, default_motion, generate_sequence


@contextmanager
def criterion(num, desc):
    try:
        yield
    except BaseException:
        print(f"\n[acceptance] criterion {num:02d} FAIL - {desc}", flush=True)
        raise
    print(f"\n[acceptance] criterion {num:02d} PASS - {desc}", flush=True)


def sin_angles(b1, b2):
    residual = b1 - (b1 @ b2.T) @ b2
    return np.arcsin(np.clip(np.linalg.svd(residual, compute_uv=False), -1.0, 1.0))


def training_psnr(model, frames):
    vals = [metrics.psnr(render_reconstruction(model, f.coefficients, f.camera,
                                               f.target.background), f.target)
            for f in frames]
    return float(np.mean(vals))


# -- shared heavy artifacts ---------------------------------------------------

@pytest.fixture(scope="module")
def refine_run():
    """One 5k-step refinement of a position-perturbed 32^2-texture model,
    shared by criteria 2 and 6."""
    spec = SynthSpec(seed=21, tex_resolution=32, frame_count=12, camera_count=2,
                     image_width=32, image_height=32, mesh_rows=14, mesh_cols=20,
                     motion=default_motion(21, count=16))
    seq = generate_sequence(spec)
    mask = seq.canonical_mesh.texel_binding.active_mask
    clean = distill(seq.clouds, 10, 32, 32, mask)
    frames = []
    for cloud in seq.clouds:
        k = project(clean, cloud)
        for cam in seq.cameras:
            frames.append(TrainingFrame(k.copy(), cam,
                                        render_reconstruction(clean, k, cam)))
    noisy = clean.copy()
    rng = np.random.default_rng(99)
    pos_mean = noisy.bases["position"].mean
    bbox = float(np.ptp(pos_mean))
    pos_mean += rng.normal(scale=0.01 * bbox, size=pos_mean.shape)
    psnr_before = training_psnr(noisy, frames)
    cfg = RefineConfig(steps=5000, step_size=5e-4, orthogonalize_every=1000,
                       lam=1e-4, gamma=1e-5, batch=2)
    start = time.perf_counter()
    refined, history = refine_bases(noisy, frames, cfg)
    elapsed = time.perf_counter() - start
    psnr_after = training_psnr(refined, frames)
    return {"refined": refined, "history": history, "elapsed": elapsed,
            "psnr_before": psnr_before, "psnr_after": psnr_after,
            "frame_count": len(frames)}


def test_c01_pca_oracle_equivalence():
    with criterion(1, "pcaFit matches covariance-eigendecomposition brute force"):
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        x = rng.normal(size=(8, 20))
        m = 5
        res = pca_fit(x, m)
        xc = x - x.mean(axis=0)
        w, v = np.linalg.eigh(xc.T @ xc / (x.shape[0] - 1))
        order = np.argsort(w)[::-1][:m]
        oracle_basis = v[:, order].T
        oracle_sigma = np.sqrt(np.maximum(w[order], 0.0))
        elapsed = time.perf_counter() - start
        assert np.max(sin_angles(res.basis, oracle_basis)) < 1e-8
        assert np.max(np.abs(res.stddev - oracle_sigma) / oracle_sigma) < 1e-9
        assert elapsed < 1.0


def test_c02_orthonormality_after_refinement(refine_run):
    with criterion(2, "all bases orthonormal within 1e-5 after 5k refine steps"):
        for mod in MODALITIES:
            assert refine_run["refined"].bases[mod].orthonormality_error() <= 1e-5
        assert refine_run["elapsed"] < 600.0


def test_c03_renderer_matches_brute_force():
    with criterion(3, "tiled forward equals brute-force per-pixel reference"):
        rng = np.random.default_rng(33)
        w2c = np.eye(4)
        w2c[2, 3] = 2.0
        cam = Camera(64, 64, 70.0, 70.0, 32.0, 32.0, w2c)
        for scene in range(20):
            n = int(rng.integers(5, 51))
            cloud = random_cloud(rng, n)
            bg = rng.uniform(0.0, 0.4, size=3)
            img, sl = render_forward(cloud, cam, background=tuple(bg))
            ref = render_brute_cloud(cloud, cam, background=tuple(bg))
            assert np.max(np.abs(img.pixels - ref)) < 1e-6, f"scene {scene}"
            conservation = sl.weight_sum + sl.transmittance
            assert np.max(np.abs(conservation - 1.0)) < 1e-6, f"scene {scene}"


def test_c04_gradient_fidelity():
    with criterion(4, "analytic gradients match central finite differences"):
        start = time.perf_counter()
        rng = np.random.default_rng(44)
        w2c = np.eye(4)
        w2c[2, 3] = 2.0
        cam = Camera(16, 16, 40.0, 40.0, 8.0, 8.0, w2c)
        cloud = random_cloud(rng, 10, spread=0.25, scale_lo=0.2, scale_hi=0.6,
                             logit_lo=-1.0, logit_hi=0.5)
        arrays = [cloud.positions, cloud.rotations, cloud.log_scales,
                  cloud.opacity_logits, cloud.colors]
        d_loss = rng.normal(size=(16, 16, 3))

        def loss():
            img, _ = render_forward_arrays(*arrays, cam, (0.2, 0.3, 0.1))
            return float(np.sum(img.pixels * d_loss))

        _, sl = render_forward_arrays(*arrays, cam, (0.2, 0.3, 0.1))
        g = render_backward(sl, cam, d_loss)
        grads = [g.d_positions, g.d_rotations, g.d_log_scales,
                 g.d_opacity_logits, g.d_colors]
        sizes = [a.size for a in arrays]
        h = 1e-4
        # sample across every parameter family
        picks = list(rng.choice(sum(sizes), size=25, replace=False))
        picks += [0, sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + sizes[2],
                  sum(sizes) - 1]
        for pick in picks:
            which = 0
            local = int(pick)
            while local >= sizes[which]:
                local -= sizes[which]
                which += 1
            flat = arrays[which].reshape(-1)
            orig = flat[local]
            flat[local] = orig + h
            up = loss()
            flat[local] = orig - h
            down = loss()
            flat[local] = orig
            fd = (up - down) / (2 * h)
            an = grads[which].reshape(-1)[local]
            err = abs(fd - an)
            assert err < 1e-6 or err / max(abs(fd), abs(an)) < 1e-3, \
                f"family {which} index {local}: fd={fd:.3e} an={an:.3e}"
        assert time.perf_counter() - start < 120.0


def test_c05_compression_trend():
    with criterion(5, "PSNR grows with component count (10 -> 30 -> 50)"):
        start = time.perf_counter()
        spec = SynthSpec(seed=55, tex_resolution=16, frame_count=100, camera_count=1,
                         image_width=64, image_height=64, mesh_rows=12, mesh_cols=18,
                         motion=default_motion(55, count=24), position_noise=0.003)
        seq = generate_sequence(spec)
        mask = seq.canonical_mesh.texel_binding.active_mask
        cam = seq.cameras[0]
        eval_ids = list(range(0, 100, 10))
        targets = {}
        for f in eval_ids:
            img, _ = render_forward(seq.clouds[f], cam)
            targets[f] = img
        psnr_by_m = {}
        for m in (10, 30, 50):
            model = distill(seq.clouds, m, 16, 16, mask)
            vals = []
            for f in eval_ids:
                recon = evaluate(model, project(model, seq.clouds[f]))
                img, _ = render_forward(recon, cam)
                vals.append(metrics.psnr(img, targets[f]))
            psnr_by_m[m] = float(np.mean(vals))
        elapsed = time.perf_counter() - start
        print(f"\n[acceptance] compression trend psnr: {psnr_by_m} ({elapsed:.1f}s)")
        assert psnr_by_m[30] >= psnr_by_m[10] + 0.5
        assert psnr_by_m[50] >= psnr_by_m[30]
        assert elapsed < 300.0


def test_c06_refinement_recovers_noise(refine_run):
    with criterion(6, "refinement recovers >= 1 dB and QR never drops PSNR > 0.1 dB"):
        gained = refine_run["psnr_after"] - refine_run["psnr_before"]
        print(f"\n[acceptance] refinement psnr {refine_run['psnr_before']:.2f} -> "
              f"{refine_run['psnr_after']:.2f} dB (+{gained:.2f})")
        assert gained >= 1.0
        for cp in refine_run["history"]["checkpoints"]:
            assert cp["psnr_after"] >= cp["psnr_before"] - 0.1


def test_c07_size_formula():
    with criterion(7, "serialized sizes match the exact formula at production scale"):
        layout = payload_layout(128, 128, 128 * 128, 10)
        assert layout["basis"] == 16384 * 11 * 10 * 4
        assert abs(layout["total"] / (7 * 2 ** 20) - 1.0) < 0.20
        layout = payload_layout(256, 256, 256 * 256, 50)
        assert layout["basis"] == 65536 * 11 * 50 * 4
        assert abs(layout["total"] / (138 * 2 ** 20) - 1.0) < 0.20
        # formula is exact against a real payload
        rng = np.random.default_rng(7)
        clouds = [random_cloud(rng, 25) for _ in range(8)]
        model = distill(clouds, 4, 5, 5, np.ones((5, 5), dtype=bool))
        expect = payload_layout(5, 5, 25, model.component_counts())
        assert len(serialize(model)) == expect["total"]


def test_c08_analysis_by_synthesis():
    with criterion(8, "3-view fits recover known coefficients within 5%"):
        spec = SynthSpec(seed=88, tex_resolution=12, frame_count=10, camera_count=3,
                         image_width=32, image_height=32, mesh_rows=10, mesh_cols=14)
        seq = generate_sequence(spec)
        mask = seq.canonical_mesh.texel_binding.active_mask
        model = distill(seq.clouds, 4, 12, 12, mask)
        sigma = model_stddevs(model)
        rng = np.random.default_rng(888)
        cams = seq.cameras
        for trial in range(10):
            k_star = CoefficientVector.from_concat(
                rng.uniform(-1.0, 1.0, sigma.size) * sigma, model)
            targets = [(cam, render_reconstruction(model, k_star, cam)) for cam in cams]
            k_fit, _ = fit_coefficients(model, targets, CoefficientVector.zeros_for(model),
                                        FitConfig(steps=250, step_size=0.12, omega=0.0))
            rel = (np.linalg.norm(k_fit.concat() - k_star.concat())
                   / np.linalg.norm(k_star.concat()))
            assert rel < 0.05, f"trial {trial}: relative error {rel:.4f}"


def test_c09_regressor():
    with criterion(9, "regressor bound exact, 50-pair MSE < 1e-4, FD gradients"):
        rng = np.random.default_rng(9)
        clouds = []
        base = random_cloud(rng, 16)
        for _ in range(12):
            c = base.copy()
            c.positions = c.positions + rng.normal(scale=0.08, size=(16, 3))
            c.log_scales = c.log_scales + rng.normal(scale=0.05, size=(16, 3))
            c.opacity_logits = c.opacity_logits + rng.normal(scale=0.1, size=16)
            q = c.rotations + rng.normal(scale=0.02, size=(16, 4))
            clouds.append(GaussianCloud(c.positions, q, c.log_scales,
                                        c.opacity_logits, c.colors))
        gem = distill(clouds, 3, 4, 4, np.ones((4, 4), dtype=bool))
        sigma = model_stddevs(gem)
        k_dim = sigma.size
        lift = rng.normal(size=(k_dim, 96))
        neutral = rng.normal(size=96)
        ks = rng.uniform(-2.0, 2.0, size=(60, k_dim)) * sigma
        feats = neutral + ks @ lift
        pca = build_feature_pca(feats, 0, components=k_dim)
        reg = init_regressor(pca, gem, seed=90)

        # exact output bound on 1e4 random inputs
        wild = rng.normal(scale=20.0, size=(10_000, 96))
        kappa = (wild - pca.neutral - pca.mean) @ pca.basis.T
        out, _ = _mlp_forward(reg.weights, kappa)
        preds = reg.output_scale * np.tanh(out)
        assert np.all(np.abs(preds) <= 3.0 * sigma[None, :])
        one = regress(reg, wild[17])
        assert np.allclose(one.concat(), preds[17], atol=1e-12)

        # 50 synthetic pairs reach MSE < 1e-4
        pairs = [(feats[i], CoefficientVector.from_concat(ks[i], gem)) for i in range(50)]
        reg, losses = train(reg, pairs, TrainHyper(steps=3000, lr=2e-3))
        print(f"\n[acceptance] regressor mse {losses[0]:.2e} -> {losses[-1]:.2e}")
        assert losses[-1] < 1e-4

        # analytic gradients vs finite differences on 20 random weights
        batch_f = np.stack([pca.coefficients(f) for f, _ in pairs[:8]])
        batch_t = np.stack([k.concat() for _, k in pairs[:8]])
        _, grads = mlp_loss_and_gradients(reg, batch_f, batch_t)
        flat = [arr for wb in reg.weights for arr in wb]
        flat_g = [arr for wb in grads for arr in wb]
        h = 1e-6
        for _ in range(20):
            pi = int(rng.integers(len(flat)))
            idx = int(rng.integers(flat[pi].size))
            arr = flat[pi].reshape(-1)
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = mlp_loss_and_gradients(reg, batch_f, batch_t)
            arr[idx] = orig - h
            down, _ = mlp_loss_and_gradients(reg, batch_f, batch_t)
            arr[idx] = orig
            fd = (up - down) / (2 * h)
            an = flat_g[pi].reshape(-1)[idx]
            err = abs(fd - an)
            assert err < 1e-9 or err / max(abs(fd), abs(an)) < 1e-4


def test_c10_deformation():
    with criterion(10, "identity bitwise, rigid render-equivariance, affine oracle"):
        rng = np.random.default_rng(10)
        from test_deform import bound_cloud, rotation_matrix, square_mesh

        mesh = square_mesh()
        cloud = bound_cloud(mesh, rng=rng)
        same, _ = apply_deformation(cloud, mesh, mesh.with_vertices(mesh.vertices.copy()))
        assert np.array_equal(same.positions, cloud.positions)
        assert np.array_equal(same.rotations, cloud.rotations)
        assert np.array_equal(same.log_scales, cloud.log_scales)

        r = rotation_matrix([0.4, 0.9, -0.1], 0.7)
        t = np.array([0.3, -0.2, 0.5])
        moved, _ = apply_deformation(cloud, mesh, mesh.with_vertices(mesh.vertices @ r.T + t))
        w2c = np.eye(4)
        w2c[:3, 3] = [-0.5, -0.5, 2.5]
        cam = Camera(32, 32, 40.0, 40.0, 16.0, 16.0, w2c)
        base, _ = render_forward(cloud, cam, background=(0.1, 0.1, 0.1))
        rigid = np.eye(4)
        rigid[:3, :3] = r
        rigid[:3, 3] = t
        comp = Camera(32, 32, 40.0, 40.0, 16.0, 16.0, w2c @ np.linalg.inv(rigid))
        eq, _ = render_forward(moved, comp, background=(0.1, 0.1, 0.1))
        assert np.max(np.abs(eq.pixels - base.pixels)) < 1e-6

        for _ in range(50):
            tri_a = rng.normal(size=(3, 3))
            tri_b = rng.normal(size=(3, 3))
            e = frenet_frame(tri_a)
            eh = frenet_frame(tri_b)
            j = deformation_gradient(e, eh)
            oracle, *_ = np.linalg.lstsq(e.T, eh.T, rcond=None)
            assert np.max(np.abs(j - oracle.T)) < 1e-9


def test_c11_performance():
    with criterion(11, "evaluate < 20 ms at (128^2, M=50); distill 200x16k < 60 s"):
        rng = np.random.default_rng(11)
        t = 128 * 128
        mask = np.ones((128, 128), dtype=bool)
        bases = {}
        for mod in MODALITIES:
            from gemsplat.eigenmodel import MODALITY_DIMS
            dim = MODALITY_DIMS[mod]
            d = dim * t
            raw = rng.normal(size=(50, d))
            q, _ = np.linalg.qr(raw.T)
            mean = rng.normal(scale=0.1, size=d)
            if mod == "rotation":
                mean = np.tile([1.0, 0, 0, 0], t) + 0.01 * mean
            bases[mod] = EigenBasis(mod, mean, q.T, np.linspace(1.0, 0.1, 50))
        model = GemModel(128, 128, mask, bases, rng.uniform(0.2, 0.8, size=(t, 3)))
        k = CoefficientVector(*[rng.normal(size=50) * 0.05 for _ in MODALITIES])
        evaluate(model, k)  # warm-up
        best = min(_timed(lambda: evaluate(model, k)) for _ in range(5))
        print(f"\n[acceptance] evaluate(128^2, M=50): {best * 1e3:.2f} ms")
        assert best < 0.020

        frames = []
        for _ in range(200):
            rot = rng.normal(size=(t, 4))
            rot /= np.linalg.norm(rot, axis=1, keepdims=True)
            frames.append(GaussianCloud(rng.normal(scale=0.3, size=(t, 3)), rot,
                                        np.log(rng.uniform(0.05, 0.2, size=(t, 3))),
                                        rng.uniform(-1, 1, size=t),
                                        rng.uniform(0, 1, size=(t, 3))))
        start = time.perf_counter()
        distill(frames, 50, 128, 128, mask)
        elapsed = time.perf_counter() - start
        print(f"[acceptance] distill 200 x 16384 texels: {elapsed:.1f} s")
        assert elapsed < 60.0


def _timed(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start
