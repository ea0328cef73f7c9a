"""Image-quality metrics: PSNR, SSIM (with analytic pixel gradient), L1.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
C2=0.03^2 for unit peak, averaged over channels. Windows are evaluated over
symmetric padding so every pixel contributes; the gradient is exact for that
padding, including the folded borders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .images import ImageBuffer

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
_WIN_SIZE = 11
_WIN_PAD = _WIN_SIZE // 2


def _gaussian_window(size=_WIN_SIZE, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()

_WIN = _gaussian_window()


def _pixels(img):
    return img.pixels if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise InvalidInputError(f"image size mismatch: {a.shape} vs {b.shape}")


def _pad_symmetric(x):
    return np.pad(x, _WIN_PAD, mode="symmetric")


def _fold_symmetric_axis(g, axis):
    """Adjoint of symmetric padding along one axis."""
    p = _WIN_PAD
    g = np.moveaxis(g, axis, 0)
    core = g[p:-p].copy()
    core[:p] += g[:p][::-1]
    core[-p:] += g[-p:][::-1]
    return np.moveaxis(core, 0, axis)


def _correlate_valid_axis(x, axis):
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0] - _WIN_SIZE + 1
    out = np.zeros((n,) + x.shape[1:])
    for k in range(_WIN_SIZE):
        out += _WIN[k] * x[k:k + n]
    return np.moveaxis(out, 0, axis)


def _scatter_full_axis(g, axis):
    """Adjoint of _correlate_valid_axis."""
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0]
    out = np.zeros((n + _WIN_SIZE - 1,) + g.shape[1:])
    for k in range(_WIN_SIZE):
        out[k:k + n] += _WIN[k] * g
    return np.moveaxis(out, 0, axis)


def _windowed_mean(x):
    xp = _pad_symmetric(x)
    return _correlate_valid_axis(_correlate_valid_axis(xp, 0), 1)


def _windowed_mean_adjoint(g):
    gp = _scatter_full_axis(_scatter_full_axis(g, 1), 0)
    return _fold_symmetric_axis(_fold_symmetric_axis(gp, 1), 0)


def psnr(a, b, peak=1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB for identical images."""
    a, b = _pixels(a), _pixels(b)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return 100.0
    return float(min(100.0, 10.0 * np.log10(peak * peak / mse)))


def l1(a, b) -> float:
    a, b = _pixels(a), _pixels(b)
    _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def ssim(a, b, gradient=False):
    """Channel-averaged SSIM; optionally also d(SSIM)/d(a) per pixel."""
    a, b = _pixels(a), _pixels(b)
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < _WIN_SIZE:
        raise InvalidInputError(f"image smaller than the {_WIN_SIZE}x{_WIN_SIZE} ssim window")
    n_ch = a.shape[2]
    total = 0.0
    grad = np.zeros_like(a) if gradient else None
    inv_count = 1.0 / (a.shape[0] * a.shape[1] * n_ch)
    for ch in range(n_ch):
        ac, bc = a[:, :, ch], b[:, :, ch]
        mu_a = _windowed_mean(ac)
        mu_b = _windowed_mean(bc)
        e_aa = _windowed_mean(ac * ac)
        e_ab = _windowed_mean(ac * bc)
        e_bb = _windowed_mean(bc * bc)
        va = e_aa - mu_a * mu_a
        vb = e_bb - mu_b * mu_b
        cab = e_ab - mu_a * mu_b
        n1 = 2.0 * mu_a * mu_b + SSIM_C1
        n2 = 2.0 * cab + SSIM_C2
        d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
        d2 = va + vb + SSIM_C2
        smap = (n1 * n2) / (d1 * d2)
        total += float(smap.sum()) * inv_count
        if gradient:
            g_s = inv_count
            g_n1 = g_s * n2 / (d1 * d2)
            g_n2 = g_s * n1 / (d1 * d2)
            g_d1 = -g_s * n1 * n2 / (d1 * d1 * d2)
            g_d2 = -g_s * n1 * n2 / (d1 * d2 * d2)
            g_cab = 2.0 * g_n2
            g_mu_a = 2.0 * mu_b * g_n1 + 2.0 * mu_a * g_d1 - 2.0 * mu_a * g_d2 - mu_b * g_cab
            grad[:, :, ch] = (_windowed_mean_adjoint(g_mu_a)
                              + 2.0 * ac * _windowed_mean_adjoint(g_d2)
                              + bc * _windowed_mean_adjoint(g_cab))
    if gradient:
        return total, grad
    return total


def dssim(a, b, gradient=False):
    """Structural dissimilarity (1 - SSIM) / 2."""
    if gradient:
        s, g = ssim(a, b, gradient=True)
        return (1.0 - s) / 2.0, -0.5 * g
    return (1.0 - ssim(a, b)) / 2.0


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    l1: float

    def to_json(self) -> str:
        return json.dumps({"psnr": self.psnr, "ssim": self.ssim, "l1": self.l1})


def compare(a, b, peak=1.0) -> MetricReport:
    return MetricReport(psnr(a, b, peak), ssim(a, b), l1(a, b))
