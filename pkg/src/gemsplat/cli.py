"""The `gem` command line: one binary, one subcommand per pipeline stage.

Option precedence is flags > --config JSON > built-in defaults; unknown
config keys are rejected and every run echoes its fully-resolved config to
stderr. Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import metrics, regress, synth
from .core import load_camera, load_ply, orbit_camera, save_ply
from .eigenmodel import (MODALITIES, CoefficientVector, distill, evaluate,
                         load_gem, model_stddevs, payload_layout, project, save_gem)
from .errors import GemError
from .images import ImageBuffer, load_image, save_image, write_ppm
from .refine import (FitConfig, RefineConfig, TrainingFrame, fit_coefficients,
                     refine_bases, save_checkpoint, write_history_csv)
from .renderer import render_forward
from .serve import create_server


def _resolve_config(args, parser_defaults):
    """Merge flags over config-file values over defaults; echo the result."""
    resolved = dict(parser_defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(parser_defaults)
        if unknown:
            raise GemError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in parser_defaults:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    print(f"resolved config: {json.dumps(resolved, default=str)}", file=sys.stderr)
    return argparse.Namespace(**resolved)


def _load_coeff_json(path, model):
    with open(path) as fh:
        data = json.load(fh)
    return CoefficientVector(*[np.asarray(data.get(m, []), dtype=np.float64)
                               for m in MODALITIES])


def _save_coeff_json(k, path):
    with open(path, "w") as fh:
        json.dump({m: list(getattr(k, m)) for m in MODALITIES}, fh, indent=1)


# -- subcommand implementations ----------------------------------------------

def cmd_synth(ns):
    spec = synth.SynthSpec(seed=ns.seed, tex_resolution=ns.tex_resolution,
                           frame_count=ns.frames, camera_count=ns.cameras,
                           image_width=ns.size, image_height=ns.size,
                           position_noise=ns.position_noise,
                           opacity_amplitude=ns.opacity_amplitude,
                           gem_components=ns.components,
                           feature_dim=ns.feature_dim)
    seq = synth.generate_sequence(spec)
    images = synth.render_ground_truth(seq)
    synth.write_dataset(ns.out, seq, images)
    model = distill(seq.clouds, min(spec.gem_components, spec.frame_count - 1),
                    spec.tex_resolution, spec.tex_resolution,
                    seq.canonical_mesh.texel_binding.active_mask)
    coeffs = [project(model, c) for c in seq.clouds]
    regress.save_coefficients(coeffs, f"{ns.out}/coeffs.bin")
    features, _ = synth.synthesize_features(coeffs, spec.feature_dim, spec.seed,
                                            spec.feature_noise)
    regress.save_features(features, f"{ns.out}/features.bin")
    regress.write_pair_manifest(f"{ns.out}/pairs.json", "features.bin", "coeffs.bin",
                                "projected", len(coeffs))
    if ns.model:
        save_gem(model, ns.model)
    print(f"dataset: {spec.frame_count} frames, {spec.camera_count} cameras, "
          f"{model.texel_count} texels -> {ns.out}")
    return 0


def cmd_distill(ns):
    clouds = synth.load_dataset_clouds(ns.dataset)
    spec = synth.load_dataset_spec(ns.dataset)
    mask = _dataset_mask(ns.dataset, spec, clouds[0].count)
    model = distill(clouds, ns.components, spec.tex_resolution, spec.tex_resolution,
                    mask, color_source=None if ns.color_frame < 0 else ns.color_frame)
    save_gem(model, ns.out)
    report = {"frames": len(clouds), "texels": model.texel_count,
              "components": model.component_counts(),
              "stddev": {m: list(model.bases[m].stddev) for m in MODALITIES}}
    if ns.report:
        cams = synth.load_dataset_cameras(ns.dataset)
        report["psnr_by_components"] = _compression_report(
            clouds, spec, mask, cams[0], ns.report_components)
        with open(ns.report, "w") as fh:
            json.dump(report, fh, indent=1)
    print(json.dumps({k: report[k] for k in ("frames", "texels", "components")}))
    return 0


def _dataset_mask(dataset, spec, count):
    seq_mesh = synth.generate_sequence(
        synth.SynthSpec(seed=spec.seed, tex_resolution=spec.tex_resolution,
                        frame_count=1, camera_count=1,
                        mesh_rows=spec.mesh_rows, mesh_cols=spec.mesh_cols))
    mask = seq_mesh.canonical_mesh.texel_binding.active_mask
    if int(mask.sum()) != count:
        raise GemError("dataset clouds do not match the regenerated texel layout")
    return mask


def _compression_report(clouds, spec, mask, cam, component_list):
    out = {}
    step = max(1, len(clouds) // 10)
    eval_ids = list(range(0, len(clouds), step))
    targets = {}
    for f in eval_ids:
        img, _ = render_forward(clouds[f], cam)
        targets[f] = img
    for m in component_list:
        model = distill(clouds, m, spec.tex_resolution, spec.tex_resolution, mask)
        vals = []
        for f in eval_ids:
            recon = evaluate(model, project(model, clouds[f]))
            img, _ = render_forward(recon, cam)
            vals.append(metrics.psnr(img, targets[f]))
        out[str(m)] = float(np.mean(vals))
    return out


def cmd_info(ns):
    model = load_gem(ns.model)
    layout = payload_layout(model.tex_width, model.tex_height, model.texel_count,
                            model.component_counts())
    info = {
        "texWidth": model.tex_width, "texHeight": model.tex_height,
        "T": model.texel_count,
        "modalities": {
            m: {"dim": model.bases[m].dim, "M": model.bases[m].components,
                "stddev": list(model.bases[m].stddev),
                "meanFirst3": [float(v) for v in model.bases[m].mean[:3]],
                "meanNorm": float(np.linalg.norm(model.bases[m].mean))}
            for m in MODALITIES},
        "bytes": layout,
    }
    print(json.dumps(info, indent=1))
    return 0


def cmd_render(ns):
    model = load_gem(ns.model)
    k = _load_coeff_json(ns.coeffs, model) if ns.coeffs else CoefficientVector.zeros_for(model)
    cam = load_camera(ns.camera) if ns.camera else orbit_camera(
        ns.size, ns.size, 45.0, ns.azimuth, ns.elevation, ns.distance)
    cloud = evaluate(model, k)
    img, _ = render_forward(cloud, cam, background=tuple(ns.background))
    save_image(img, ns.out)
    print(f"rendered {cam.width}x{cam.height} -> {ns.out}")
    return 0


def cmd_traverse(ns):
    model = load_gem(ns.model)
    basis = model.bases[ns.modality]
    if not 0 <= ns.component < max(basis.components, 1):
        raise GemError(f"component {ns.component} out of range for {ns.modality}")
    sigma = basis.stddev[ns.component] if basis.components else 0.0
    sweep = np.linspace(-3.0 * sigma, 3.0 * sigma, ns.steps) if ns.steps > 1 else np.array([0.0])
    cam = load_camera(ns.camera) if ns.camera else orbit_camera(
        ns.size, ns.size, 45.0, ns.azimuth, ns.elevation, ns.distance)
    frames = []
    for val in sweep:
        k = CoefficientVector.zeros_for(model)
        if basis.components:
            getattr(k, ns.modality)[ns.component] = val
        img, _ = render_forward(evaluate(model, k), cam)
        frames.append(img.pixels)
    strip = ImageBuffer(np.concatenate(frames, axis=1))
    write_ppm(strip, ns.out)
    print(f"traversal strip with {len(frames)} frames -> {ns.out}")
    return 0


def cmd_refine(ns):
    model = load_gem(ns.model)
    clouds = synth.load_dataset_clouds(ns.dataset)
    cams = synth.load_dataset_cameras(ns.dataset)
    frames = []
    for f, cloud in enumerate(clouds):
        k = project(model, cloud)
        for c, cam in enumerate(cams):
            frames.append(TrainingFrame(k.copy(), cam,
                                        load_image(f"{ns.dataset}/images/f{f:04d}_c{c:02d}.pfm")))
    cfg = RefineConfig(omega=ns.omega, lam=ns.lam, gamma=ns.gamma,
                       step_size=ns.step_size, steps=ns.steps,
                       orthogonalize_every=ns.orthogonalize_every, batch=ns.batch)
    refined, history = refine_bases(model, frames, cfg)
    save_checkpoint(refined, history, cfg, ns.out)
    if ns.history:
        write_history_csv(history, ns.history)
    last = history["steps"][-1] if history["steps"] else {}
    print(f"refined {ns.steps} steps, final psnr {last.get('psnr', float('nan')):.2f} -> {ns.out}")
    return 0


def cmd_fit(ns):
    model = load_gem(ns.model)
    cams = [load_camera(p) for p in ns.cameras]
    targets = [load_image(p) for p in ns.images]
    if len(cams) != len(targets):
        raise GemError("need one camera per target image")
    init = _load_coeff_json(ns.init, model) if ns.init else CoefficientVector.zeros_for(model)
    cfg = FitConfig(steps=ns.steps, step_size=ns.step_size, omega=ns.omega)
    k, losses = fit_coefficients(model, list(zip(cams, targets)), init, cfg)
    _save_coeff_json(k, ns.out)
    print(f"fit {len(targets)} views, loss {losses[0]:.5f} -> {losses[-1]:.5f}, out {ns.out}")
    return 0


def cmd_regress_train(ns):
    features = regress.load_features(ns.features)
    coeffs = regress.load_coefficients(ns.coeffs)
    model = load_gem(ns.model)
    pca = regress.build_feature_pca(features, ns.neutral_index, ns.pca_components)
    reg = regress.init_regressor(pca, model, seed=ns.seed)
    pairs = list(zip(features, coeffs))
    reg, losses = regress.train(reg, pairs, regress.TrainHyper(steps=ns.steps, lr=ns.lr,
                                                               seed=ns.seed))
    regress.save_regressor(reg, ns.out)
    print(f"trained on {len(pairs)} pairs, mse {losses[0]:.3e} -> {losses[-1]:.3e}")
    return 0


def cmd_regress_apply(ns):
    reg = regress.load_regressor(ns.regressor)
    features = regress.load_features(ns.features)
    coeffs = [regress.regress(reg, f) for f in features]
    regress.save_coefficients(coeffs, ns.out)
    print(f"regressed {len(coeffs)} coefficient vectors -> {ns.out}")
    return 0


def cmd_metrics(ns):
    a = load_image(ns.a)
    b = load_image(ns.b)
    report = metrics.compare(a, b)
    if ns.json:
        print(report.to_json())
    else:
        print(f"psnr {report.psnr:.4f} dB  ssim {report.ssim:.6f}  l1 {report.l1:.6f}")
    return 0


def cmd_serve(ns):
    model = load_gem(ns.model)
    cameras = synth.load_dataset_cameras(ns.dataset) if ns.dataset else []
    server = create_server(model, cameras, ns.static, host=ns.host, port=ns.port)
    print(f"serving on http://{ns.host}:{server.server_address[1]}/ (ctrl-c stops)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_ply(ns):
    cloud = load_ply(ns.input)
    save_ply(cloud, ns.out)
    print(f"round-tripped {cloud.count} gaussians -> {ns.out}")
    return 0


# -- parser -------------------------------------------------------------------

def _add_camera_flags(p):
    p.add_argument("--camera", default=None, help="camera json path")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--azimuth", type=float, default=None)
    p.add_argument("--elevation", type=float, default=None)
    p.add_argument("--distance", type=float, default=None)


_DEFAULTS = {
    "synth": dict(out=None, seed=0, tex_resolution=24, frames=20, cameras=3, size=64,
                  position_noise=0.0, opacity_amplitude=0.0, components=8,
                  feature_dim=256, model=None),
    "distill": dict(dataset=None, out=None, components=8, color_frame=-1,
                    report=None, report_components=[10, 30, 50]),
    "info": dict(model=None),
    "render": dict(model=None, coeffs=None, out=None, camera=None, size=256,
                   azimuth=0.0, elevation=0.15, distance=4.0, background=[0.0, 0.0, 0.0]),
    "traverse": dict(model=None, modality="position", component=0, steps=5, out=None,
                     camera=None, size=128, azimuth=0.0, elevation=0.15, distance=4.0),
    "refine": dict(model=None, dataset=None, out=None, steps=500, step_size=5e-4,
                   omega=0.2, lam=1e-2, gamma=1e-3, orthogonalize_every=1000, batch=1,
                   history=None),
    "fit": dict(model=None, cameras=[], images=[], init=None, out=None, steps=200,
                step_size=0.05, omega=0.2),
    "regress-train": dict(features=None, coeffs=None, model=None, out=None,
                          neutral_index=0, pca_components=50, steps=2000, lr=1e-3, seed=0),
    "regress-apply": dict(regressor=None, features=None, out=None),
    "metrics": dict(a=None, b=None, json=False),
    "serve": dict(model=None, dataset=None, static=None, host="127.0.0.1", port=8080),
    "ply": dict(input=None, out=None),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def new(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn, command=name)
        p.add_argument("--config", default=None, help="json config file; flags override")
        return p

    p = new("synth", cmd_synth, "generate a deterministic synthetic dataset")
    p.add_argument("out")
    for flag, typ in [("--seed", int), ("--tex-resolution", int), ("--frames", int),
                      ("--cameras", int), ("--size", int), ("--position-noise", float),
                      ("--opacity-amplitude", float), ("--components", int),
                      ("--feature-dim", int)]:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--model", default=None, help="also write the distilled model here")

    p = new("distill", cmd_distill, "fit per-modality bases from a cloud sequence")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--color-frame", type=int, default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--report-components", type=int, nargs="+", default=None)

    p = new("info", cmd_info, "print model metadata as json")
    p.add_argument("model")

    p = new("render", cmd_render, "render a coefficient vector")
    p.add_argument("model")
    p.add_argument("out")
    p.add_argument("--coeffs", default=None, help="coefficient json")
    p.add_argument("--background", type=float, nargs=3, default=None)
    _add_camera_flags(p)

    p = new("traverse", cmd_traverse, "sweep one component over +-3 sigma")
    p.add_argument("model")
    p.add_argument("out")
    p.add_argument("--modality", choices=MODALITIES, default=None)
    p.add_argument("--component", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    _add_camera_flags(p)

    p = new("refine", cmd_refine, "photometric refinement of the bases")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("out")
    for flag, typ in [("--steps", int), ("--step-size", float), ("--omega", float),
                      ("--lam", float), ("--gamma", float),
                      ("--orthogonalize-every", int), ("--batch", int)]:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--history", default=None, help="loss history csv")

    p = new("fit", cmd_fit, "analysis-by-synthesis coefficient fit")
    p.add_argument("model")
    p.add_argument("out")
    p.add_argument("--cameras", nargs="+", default=None)
    p.add_argument("--images", nargs="+", default=None)
    p.add_argument("--init", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--omega", type=float, default=None)

    p = new("regress-train", cmd_regress_train, "train the feature regressor")
    p.add_argument("features")
    p.add_argument("coeffs")
    p.add_argument("model")
    p.add_argument("out")
    for flag, typ in [("--neutral-index", int), ("--pca-components", int),
                      ("--steps", int), ("--lr", float), ("--seed", int)]:
        p.add_argument(flag, type=typ, default=None)

    p = new("regress-apply", cmd_regress_apply, "apply a trained regressor")
    p.add_argument("regressor")
    p.add_argument("features")
    p.add_argument("out")

    p = new("metrics", cmd_metrics, "psnr/ssim/l1 between two images")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--json", action="store_true", default=None)

    p = new("serve", cmd_serve, "serve model + renders over http")
    p.add_argument("model")
    p.add_argument("--dataset", default=None)
    p.add_argument("--static", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)

    p = new("ply", cmd_ply, "round-trip a gaussian ply file")
    p.add_argument("input")
    p.add_argument("out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        ns = _resolve_config(args, dict(_DEFAULTS[args.command]))
        return args.func(ns)
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
