"""Benchmark the numba-compiled splatting kernels against the pure-python path.

The same kernel source runs both ways (numba's .py_func is the uncompiled
fallback selected by GEMSPLAT_NUMBA=0), so this measures compilation benefit
only. Also times model evaluation, which is plain BLAS.

    python3 benchmarks/bench_render.py [--size 64] [--splats 500] [--repeats 5]
"""

import argparse
import time

import numpy as np

from gemsplat import kernels
from gemsplat._accel import USE_NUMBA, uncompiled
from gemsplat.core import Camera
from gemsplat.renderer import render_forward_arrays


def make_scene(rng, n):
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return dict(
        positions=rng.normal(scale=0.4, size=(n, 3)),
        rotations=rot,
        log_scales=np.log(rng.uniform(0.05, 0.2, size=(n, 3))),
        opacity_logits=rng.uniform(-1.0, 1.0, size=n),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
    )


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--splats", type=int, default=500)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    scene = make_scene(rng, args.splats)
    w2c = np.eye(4)
    w2c[2, 3] = 2.0
    cam = Camera(args.size, args.size, 1.2 * args.size, 1.2 * args.size,
                 args.size / 2.0, args.size / 2.0, w2c)

    img, sl = render_forward_arrays(scene["positions"], scene["rotations"],
                                    scene["log_scales"], scene["opacity_logits"],
                                    scene["colors"], cam)
    d_pixels = rng.normal(size=(args.size, args.size, 3))
    fwd_args = (sl.tile_offsets, sl.tile_list, sl.n_tx, sl.n_ty, sl.settings.tile_size,
                sl.bbox[:, 0].copy(), sl.bbox[:, 1].copy(), sl.bbox[:, 2].copy(),
                sl.bbox[:, 3].copy(), sl.centers, sl.cinv, sl.alpha0, scene["colors"],
                np.zeros(3), cam.width, cam.height, 0.999, 1e-4)

    print(f"scene: {args.splats} splats, {args.size}x{args.size} px, "
          f"numba={'on' if USE_NUMBA else 'OFF (GEMSPLAT_NUMBA=0 or missing)'}")

    rows = []
    for name, jit_fn, extra in [
        ("composite_forward", kernels.composite_forward, ()),
        ("composite_backward", kernels.composite_backward, (d_pixels,)),
    ]:
        jit_t = best_of(lambda: jit_fn(*fwd_args, *extra), args.repeats)
        py_fn = uncompiled(jit_fn)
        py_t = best_of(lambda: py_fn(*fwd_args, *extra), max(1, args.repeats // 2))
        rows.append((name, jit_t, py_t))

    print(f"{'kernel':<22}{'jit ms':>10}{'python ms':>12}{'speedup':>9}")
    for name, jit_t, py_t in rows:
        print(f"{name:<22}{jit_t * 1e3:>10.2f}{py_t * 1e3:>12.1f}{py_t / jit_t:>8.0f}x")

    full = best_of(lambda: render_forward_arrays(
        scene["positions"], scene["rotations"], scene["log_scales"],
        scene["opacity_logits"], scene["colors"], cam), args.repeats)
    print(f"\nfull forward (prep + kernels): {full * 1e3:.2f} ms "
          f"({1.0 / full:.0f} renders/s)")


if __name__ == "__main__":
    main()
