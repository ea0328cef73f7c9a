"""Feature-to-coefficient regressor.

Input features are opaque vectors loaded from files. A PCA layer over
features relative to a neutral frame feeds a 3-layer MLP (256 units, ReLU)
whose output is squashed to +-3 standard deviations of each coefficient by a
scaled tanh, so predictions can never leave the span the model was distilled
on.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .eigenmodel import MODALITIES, CoefficientVector, GemModel, model_stddevs, pca_fit
from .errors import BadMagicError, BadVersionError, InvalidInputError, TruncatedPayloadError
from .optim import Adam

FEATURE_PCA_COMPONENTS = 50
HIDDEN = 256
REGRESSOR_MAGIC = b"GRM1"
REGRESSOR_VERSION = 1


@dataclass
class FeaturePCA:
    feature_dim: int
    neutral: np.ndarray    # (F,)
    mean: np.ndarray       # (F,) mean of relative features
    basis: np.ndarray      # (M, F) orthonormal rows
    truncated: bool = False

    def coefficients(self, feature) -> np.ndarray:
        f = np.asarray(feature, dtype=np.float64).reshape(-1)
        if f.size != self.feature_dim:
            raise InvalidInputError(f"feature dim {f.size} != {self.feature_dim}")
        return self.basis @ (f - self.neutral - self.mean)


def build_feature_pca(features, neutral_index,
                      components=FEATURE_PCA_COMPONENTS) -> FeaturePCA:
    """PCA over features relative to the neutral frame's feature."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < components + 1:
        raise InvalidInputError(f"need at least {components + 1} feature rows")
    neutral = x[int(neutral_index)].copy()
    rel = x - neutral
    res = pca_fit(rel, components)
    if res.basis.shape[0] == 0:
        raise InvalidInputError("features carry no variance relative to the neutral frame")
    if res.truncated:
        warnings.warn(f"feature rank {res.basis.shape[0]} below requested {components}")
    return FeaturePCA(x.shape[1], neutral, res.mean, res.basis, res.truncated)


@dataclass
class RegressorModel:
    feature_pca: FeaturePCA
    weights: list = field(repr=False, default=None)   # [(W, b), ...]
    output_scale: np.ndarray = None                   # (K,) = 3 * stddev
    block_sizes: tuple = None                         # coefficient count per modality

    @property
    def output_dim(self) -> int:
        return self.output_scale.size


def init_regressor(feature_pca: FeaturePCA, gem: GemModel, hidden=HIDDEN, seed=0) -> RegressorModel:
    stddevs = model_stddevs(gem)
    blocks = tuple(gem.bases[m].components for m in MODALITIES)
    dims = [feature_pca.basis.shape[0], hidden, hidden, hidden, stddevs.size]
    rng = np.random.default_rng((seed, 31337))
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                        np.zeros(fan_out)))
    return RegressorModel(feature_pca, weights, 3.0 * stddevs, blocks)


def _mlp_forward(weights, kappa):
    h = kappa
    acts = [h]
    for wi, (w, b) in enumerate(weights):
        h = h @ w.T + b
        if wi < len(weights) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def regress(model: RegressorModel, feature) -> CoefficientVector:
    """Map one feature vector to bounded coefficients. Pure function."""
    kappa = model.feature_pca.coefficients(feature)
    out, _ = _mlp_forward(model.weights, kappa[None, :])
    k = model.output_scale * np.tanh(out[0])
    blocks = []
    at = 0
    for size in model.block_sizes:
        blocks.append(k[at:at + size])
        at += size
    return CoefficientVector(*blocks)


@dataclass(frozen=True)
class TrainHyper:
    steps: int = 3000
    lr: float = 1e-3
    seed: int = 0


def train(model: RegressorModel, pairs, hyper: TrainHyper = TrainHyper()):
    """Full-batch MSE training of the MLP on (feature, coefficients) pairs.

    Targets outside the +-3 sigma output range are clamped (with a warning) to
    slightly inside the bound. The PCA layer and the output scale are fixed;
    only MLP weights move. Deterministic for a given seed.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("empty training set")
    feats = np.stack([model.feature_pca.coefficients(f) for f, _ in pairs])
    targets = np.stack([k.concat() for _, k in pairs])
    bound = model.output_scale
    limit = 0.999 * bound
    over = np.abs(targets) > bound[None, :]
    if np.any(over):
        warnings.warn(f"{int(over.sum())} target entries exceed 3 sigma; clamping")
    targets = np.clip(targets, -limit, limit)

    params = [arr for wb in model.weights for arr in wb]
    opt = Adam(params, hyper.lr)
    losses = []
    for _ in range(hyper.steps):
        loss, grads = mlp_loss_and_gradients(model, feats, targets)
        losses.append(loss)
        opt.step([arr for wb in grads for arr in wb])
    return model, losses


def mlp_loss_and_gradients(model: RegressorModel, feats, targets):
    """One forward/backward pass; used by the finite-difference checks."""
    out, acts = _mlp_forward(model.weights, feats)
    th = np.tanh(out)
    err = model.output_scale[None, :] * th - targets
    loss = float(np.mean(err ** 2))
    delta = (2.0 / err.size) * err * model.output_scale[None, :] * (1.0 - th * th)
    grads = []
    for wi in range(len(model.weights) - 1, -1, -1):
        w, _ = model.weights[wi]
        grads.append((delta.T @ acts[wi], delta.sum(axis=0)))
        if wi > 0:
            delta = (delta @ w) * (acts[wi] > 0.0)
    return loss, list(reversed(grads))


# ---------------------------------------------------------------------------
# feature files: u32 N, u32 dim, then f32 data row-major (little-endian)

def save_features(features, path) -> None:
    x = np.asarray(features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", x.shape[0], x.shape[1]))
        fh.write(x.tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TruncatedPayloadError("feature file shorter than header")
    n, dim = struct.unpack("<II", raw[:8])
    if len(raw) < 8 + 4 * n * dim:
        raise TruncatedPayloadError("feature file truncated")
    return np.frombuffer(raw[8:8 + 4 * n * dim], dtype="<f4").astype(np.float64).reshape(n, dim)


# coefficient records: u32 N, u32 M per modality (4 of them), f32 rows

def save_coefficients(coeffs, path) -> None:
    coeffs = list(coeffs)
    sizes = [getattr(coeffs[0], m).size for m in MODALITIES]
    rows = np.stack([k.concat() for k in coeffs]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<5I", len(coeffs), *sizes))
        fh.write(rows.tobytes())


def load_coefficients(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20:
        raise TruncatedPayloadError("coefficient file shorter than header")
    n, *sizes = struct.unpack("<5I", raw[:20])
    k_total = sum(sizes)
    if len(raw) < 20 + 4 * n * k_total:
        raise TruncatedPayloadError("coefficient file truncated")
    rows = np.frombuffer(raw[20:20 + 4 * n * k_total], dtype="<f4").astype(np.float64)
    rows = rows.reshape(n, k_total)
    out = []
    for row in rows:
        blocks = []
        at = 0
        for s in sizes:
            blocks.append(row[at:at + s])
            at += s
        out.append(CoefficientVector(*blocks))
    return out


def write_pair_manifest(path, feature_file, coefficient_file, provenance, count) -> None:
    """Record which feature rows pair with which coefficient records."""
    manifest = {
        "features": feature_file,
        "coefficients": coefficient_file,
        "provenance": provenance,   # "projected" or "fitted"
        "pairs": [{"feature": i, "coefficient": i} for i in range(count)],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)


# ---------------------------------------------------------------------------
# checkpoint: magic, version, feature pca (dim, M, neutral, mean, basis),
# layer shapes + weights, output scale, block sizes

def save_regressor(model: RegressorModel, path) -> None:
    pca = model.feature_pca
    out = bytearray()
    out += REGRESSOR_MAGIC
    out += struct.pack("<I", REGRESSOR_VERSION)
    out += struct.pack("<II", pca.feature_dim, pca.basis.shape[0])
    out += pca.neutral.astype("<f4").tobytes()
    out += pca.mean.astype("<f4").tobytes()
    out += pca.basis.astype("<f4").tobytes()
    out += struct.pack("<I", len(model.weights))
    for w, b in model.weights:
        out += struct.pack("<II", w.shape[0], w.shape[1])
        out += w.astype("<f4").tobytes()
        out += b.astype("<f4").tobytes()
    out += struct.pack("<I", model.output_dim)
    out += model.output_scale.astype("<f4").tobytes()
    out += struct.pack("<4I", *model.block_sizes)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_regressor(path) -> RegressorModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != REGRESSOR_MAGIC:
        raise BadMagicError(f"bad regressor magic {raw[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedPayloadError("regressor checkpoint truncated")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != REGRESSOR_VERSION:
        raise BadVersionError(f"unsupported regressor version {version}")
    fdim, m = struct.unpack("<II", take(8))
    neutral = np.frombuffer(take(4 * fdim), dtype="<f4").astype(np.float64)
    mean = np.frombuffer(take(4 * fdim), dtype="<f4").astype(np.float64)
    basis = np.frombuffer(take(4 * m * fdim), dtype="<f4").astype(np.float64).reshape(m, fdim)
    (n_layers,) = struct.unpack("<I", take(4))
    weights = []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", take(8))
        w = np.frombuffer(take(4 * rows * cols), dtype="<f4").astype(np.float64).reshape(rows, cols)
        b = np.frombuffer(take(4 * rows), dtype="<f4").astype(np.float64)
        weights.append((w, b))
    (k,) = struct.unpack("<I", take(4))
    scale = np.frombuffer(take(4 * k), dtype="<f4").astype(np.float64)
    blocks = struct.unpack("<4I", take(16))
    pca = FeaturePCA(fdim, neutral, mean, basis)
    return RegressorModel(pca, weights, scale, blocks)
