"""The linear eigenmodel over Gaussian attributes (GEM).

One PCA basis per attribute family (position, rotation, scale, opacity) over
a fixed texel layout, plus a static color texture. An instance is
reconstructed as mean + coefficients . basis per modality; rotations are
renormalized afterwards because linear combinations of quaternions are not
unit-norm.

Attribute vectors are flattened texel-major: all components of texel 0, then
texel 1, and so on, in row-major order over active texels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import GaussianCloud, align_quat_signs
from .errors import (BadMagicError, BadVersionError, ContractViolationError,
                     InvalidInputError, RankDeficiencyError, TruncatedPayloadError)

MODALITIES = ("position", "rotation", "scale", "opacity")
MODALITY_DIMS = {"position": 3, "rotation": 4, "scale": 3, "opacity": 1}

GEM_MAGIC = b"GEM1"
GEM_VERSION = 1
RANK_TOL = 1e-10


@dataclass
class PcaResult:
    mean: np.ndarray     # (D,)
    basis: np.ndarray    # (M, D), orthonormal rows
    stddev: np.ndarray   # (M,), singular / sqrt(N-1), non-increasing
    truncated: bool      # requested components exceeded numerical rank


def pca_fit(samples, max_components) -> PcaResult:
    """Top principal directions of row-sample data via SVD of the centered matrix.

    Basis rows are sign-fixed so the largest-magnitude entry of each row is
    positive, making fits reproducible. Components beyond the numerical rank
    (singular values below 1e-10 of the largest) are dropped and the result is
    flagged truncated.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("need at least 2 samples")
    n, d = x.shape
    if not 0 <= max_components <= min(n - 1, d):
        raise InvalidInputError(
            f"max_components={max_components} outside [0, min(N-1, D)]={min(n - 1, d)}")
    mean = x.mean(axis=0)
    _, sv, vt = np.linalg.svd(x - mean, full_matrices=False)
    # the absolute floor keeps centering round-off of constant data at rank 0
    noise_floor = np.finfo(np.float64).eps * np.sqrt(n) * max(1.0, float(np.abs(x).max(initial=0.0)))
    if sv.size and sv[0] > noise_floor:
        rank = int(np.count_nonzero(sv >= RANK_TOL * sv[0]))
    else:
        rank = 0
    keep = min(max_components, rank)
    basis = vt[:keep].copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    stddev = sv[:keep] / np.sqrt(n - 1)
    return PcaResult(mean, basis, stddev, truncated=keep < max_components)


def orthogonalize(basis) -> np.ndarray:
    """Re-orthonormalize basis rows (QR of the transpose), preserving the span.

    Deterministic: R's diagonal is made non-negative. Raises on rank
    deficiency, naming the offending row.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2:
        raise InvalidInputError("basis must be 2-D")
    m = basis.shape[0]
    if m == 0:
        return basis.copy()
    if m > basis.shape[1]:
        raise InvalidInputError("more rows than dimensions")
    q, r = np.linalg.qr(basis.T)
    diag = np.abs(np.diag(r))
    bad = np.nonzero(diag < RANK_TOL * max(diag.max(), 1e-300))[0]
    if bad.size:
        raise RankDeficiencyError(f"basis row {bad[0]} is linearly dependent", index=int(bad[0]))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return (q * signs).T


# ---------------------------------------------------------------------------

@dataclass
class EigenBasis:
    modality: str
    mean: np.ndarray      # (dim*T,)
    basis: np.ndarray     # (M, dim*T)
    stddev: np.ndarray    # (M,)

    def __post_init__(self):
        if self.modality not in MODALITY_DIMS:
            raise InvalidInputError(f"unknown modality {self.modality!r}")
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64).reshape(-1)
        self.basis = np.ascontiguousarray(self.basis, dtype=np.float64).reshape(-1, self.mean.size)
        self.stddev = np.ascontiguousarray(self.stddev, dtype=np.float64).reshape(-1)
        if self.stddev.size != self.basis.shape[0]:
            raise InvalidInputError("stddev length must match component count")
        if np.any(self.stddev < 0):
            raise InvalidInputError("negative stddev")
        if self.mean.size % self.dim:
            raise InvalidInputError("mean length not divisible by modality dim")
        if self.orthonormality_error() > 1e-5:
            raise InvalidInputError(f"{self.modality} basis is not orthonormal")

    @property
    def dim(self) -> int:
        return MODALITY_DIMS[self.modality]

    @property
    def components(self) -> int:
        return self.basis.shape[0]

    @property
    def texel_count(self) -> int:
        return self.mean.size // self.dim

    def orthonormality_error(self) -> float:
        if self.components == 0:
            return 0.0
        g = self.basis @ self.basis.T
        return float(np.max(np.abs(g - np.eye(self.components))))


@dataclass
class GemModel:
    tex_width: int
    tex_height: int
    active_mask: np.ndarray              # (H, W) bool
    bases: dict = field(repr=False, default=None)   # modality -> EigenBasis
    color_texture: np.ndarray = field(repr=False, default=None)  # (T, 3)

    def __post_init__(self):
        self.active_mask = np.ascontiguousarray(self.active_mask, dtype=bool)
        if self.active_mask.shape != (self.tex_height, self.tex_width):
            raise InvalidInputError("active_mask shape mismatch")
        t = int(self.active_mask.sum())
        for mod in MODALITIES:
            if mod not in self.bases:
                raise InvalidInputError(f"missing {mod} basis")
            if self.bases[mod].texel_count != t:
                raise InvalidInputError(f"{mod} basis texel count != active mask popcount")
        self.color_texture = np.clip(
            np.ascontiguousarray(self.color_texture, dtype=np.float64).reshape(t, 3), 0.0, 1.0)

    @property
    def texel_count(self) -> int:
        return int(self.active_mask.sum())

    def component_counts(self) -> dict:
        return {mod: self.bases[mod].components for mod in MODALITIES}

    def copy(self) -> "GemModel":
        bases = {m: EigenBasis(m, b.mean.copy(), b.basis.copy(), b.stddev.copy())
                 for m, b in self.bases.items()}
        return GemModel(self.tex_width, self.tex_height, self.active_mask.copy(),
                        bases, self.color_texture.copy())


@dataclass
class CoefficientVector:
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray

    def __post_init__(self):
        for mod in MODALITIES:
            arr = np.ascontiguousarray(getattr(self, mod), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"non-finite coefficients in {mod}")
            setattr(self, mod, arr)

    @staticmethod
    def zeros_for(model: GemModel) -> "CoefficientVector":
        return CoefficientVector(*[np.zeros(model.bases[m].components) for m in MODALITIES])

    @staticmethod
    def from_concat(vec, model: GemModel) -> "CoefficientVector":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        sizes = [model.bases[m].components for m in MODALITIES]
        if vec.size != sum(sizes):
            raise InvalidInputError(f"expected {sum(sizes)} coefficients, got {vec.size}")
        out = []
        at = 0
        for s in sizes:
            out.append(vec[at:at + s])
            at += s
        return CoefficientVector(*out)

    def concat(self) -> np.ndarray:
        return np.concatenate([getattr(self, m) for m in MODALITIES])

    def copy(self) -> "CoefficientVector":
        return CoefficientVector(*[getattr(self, m).copy() for m in MODALITIES])


def model_stddevs(model: GemModel) -> np.ndarray:
    """Concatenated per-coefficient standard deviations in modality order."""
    return np.concatenate([model.bases[m].stddev for m in MODALITIES])


# ---------------------------------------------------------------------------

def _attribute_matrix(clouds, modality):
    if modality == "position":
        rows = [c.positions.reshape(-1) for c in clouds]
    elif modality == "rotation":
        ref = clouds[0].rotations
        rows = [align_quat_signs(c.rotations, ref).reshape(-1) for c in clouds]
    elif modality == "scale":
        rows = [c.log_scales.reshape(-1) for c in clouds]
    else:
        rows = [c.opacity_logits.reshape(-1) for c in clouds]
    return np.stack(rows)


def distill(clouds, components, tex_width, tex_height, active_mask,
            color_source=None) -> GemModel:
    """Fit per-modality PCA bases over an aligned cloud sequence.

    `components` is an int or a per-modality mapping. Quaternions are
    sign-aligned per texel against frame 0 before the rotation PCA (the double
    cover makes raw quaternion PCA ill-posed). `color_source` picks the frame
    providing the static color texture; None averages across frames.
    """
    clouds = list(clouds)
    if not clouds:
        raise InvalidInputError("empty sequence")
    active_mask = np.ascontiguousarray(active_mask, dtype=bool)
    t = int(active_mask.sum())
    for i, c in enumerate(clouds):
        if c.count != t:
            raise InvalidInputError(f"cloud {i} has {c.count} gaussians, layout has {t} texels")
    if isinstance(components, dict):
        comp = {m: int(components[m]) for m in MODALITIES}
    else:
        comp = {m: int(components) for m in MODALITIES}

    bases = {}
    for mod in MODALITIES:
        data = _attribute_matrix(clouds, mod)
        res = pca_fit(data, min(comp[mod], len(clouds) - 1, data.shape[1]))
        bases[mod] = EigenBasis(mod, res.mean, res.basis, res.stddev)

    if color_source is None:
        color = np.mean([c.colors for c in clouds], axis=0)
    else:
        color = clouds[int(color_source)].colors.copy()
    return GemModel(tex_width, tex_height, active_mask, bases, color)


def evaluate_attributes(model: GemModel, k: CoefficientVector) -> dict:
    """Raw reconstructed attribute arrays per modality (no renormalization)."""
    out = {}
    for mod in MODALITIES:
        basis = model.bases[mod]
        kb = getattr(k, mod)
        if kb.size != basis.components:
            raise ContractViolationError(
                f"{mod} block has {kb.size} coefficients, basis has {basis.components}")
        vec = basis.mean + kb @ basis.basis if kb.size else basis.mean.copy()
        out[mod] = vec.reshape(basis.texel_count, basis.dim)
    return out


def evaluate(model: GemModel, k: CoefficientVector) -> GaussianCloud:
    """Reconstruct a cloud from coefficients. Pure function of (model, k)."""
    attrs = evaluate_attributes(model, k)
    return GaussianCloud(attrs["position"], attrs["rotation"], attrs["scale"],
                         attrs["opacity"][:, 0], model.color_texture.copy())


def project(model: GemModel, cloud: GaussianCloud) -> CoefficientVector:
    """Per-modality least-squares coefficients of a cloud (orthonormal bases)."""
    if cloud.count != model.texel_count:
        raise InvalidInputError(
            f"cloud has {cloud.count} gaussians, model has {model.texel_count} texels")
    blocks = []
    for mod in MODALITIES:
        basis = model.bases[mod]
        if mod == "position":
            x = cloud.positions.reshape(-1)
        elif mod == "rotation":
            mean_q = basis.mean.reshape(-1, 4)
            x = align_quat_signs(cloud.rotations, mean_q).reshape(-1)
        elif mod == "scale":
            x = cloud.log_scales.reshape(-1)
        else:
            x = cloud.opacity_logits.reshape(-1)
        blocks.append(basis.basis @ (x - basis.mean) if basis.components else np.zeros(0))
    return CoefficientVector(*blocks)


# ---------------------------------------------------------------------------
# binary format: magic "GEM1", u32 version, u32 texW, u32 texH, u32 T,
# mask bits (ceil(W*H/8) bytes, row-major, LSB first), then per modality in
# fixed order: u32 dim, u32 M, f32 mean[dim*T], f32 stddev[M],
# f32 basis[M][dim*T] row-major, and finally f32 color[T][3]. Little-endian.

def serialize(model: GemModel) -> bytes:
    out = bytearray()
    out += GEM_MAGIC
    out += struct.pack("<IIII", GEM_VERSION, model.tex_width, model.tex_height,
                       model.texel_count)
    out += np.packbits(model.active_mask.reshape(-1).astype(np.uint8),
                       bitorder="little").tobytes()
    for mod in MODALITIES:
        basis = model.bases[mod]
        out += struct.pack("<II", basis.dim, basis.components)
        out += basis.mean.astype("<f4").tobytes()
        out += basis.stddev.astype("<f4").tobytes()
        out += basis.basis.astype("<f4").tobytes()
    out += model.color_texture.astype("<f4").tobytes()
    return bytes(out)


def deserialize(data: bytes) -> GemModel:
    if len(data) < 4:
        raise TruncatedPayloadError("payload shorter than magic")
    if data[:4] != GEM_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedPayloadError(f"payload truncated in {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, w, h, t = struct.unpack("<IIII", take(16, "header"))
    if version != GEM_VERSION:
        raise BadVersionError(f"unsupported version {version}")
    mask_bytes = (w * h + 7) // 8
    bits = np.unpackbits(np.frombuffer(take(mask_bytes, "mask"), dtype=np.uint8),
                         bitorder="little")[:w * h]
    mask = bits.reshape(h, w).astype(bool)
    if int(mask.sum()) != t:
        raise TruncatedPayloadError(f"mask popcount {int(mask.sum())} != recorded T {t}")
    bases = {}
    for mod in MODALITIES:
        dim, m = struct.unpack("<II", take(8, f"{mod} header"))
        if dim != MODALITY_DIMS[mod]:
            raise TruncatedPayloadError(f"{mod} dim {dim} != {MODALITY_DIMS[mod]}")
        mean = np.frombuffer(take(4 * dim * t, f"{mod} mean"), dtype="<f4").astype(np.float64)
        stddev = np.frombuffer(take(4 * m, f"{mod} stddev"), dtype="<f4").astype(np.float64)
        basis = np.frombuffer(take(4 * m * dim * t, f"{mod} basis"),
                              dtype="<f4").astype(np.float64).reshape(m, dim * t)
        bases[mod] = EigenBasis(mod, mean, basis, stddev)
    color = np.frombuffer(take(12 * t, "color"), dtype="<f4").astype(np.float64).reshape(t, 3)
    return GemModel(w, h, mask, bases, color)


def payload_layout(tex_width, tex_height, texel_count, components) -> dict:
    """Exact byte accounting of the serialized format for given shapes."""
    mask = (tex_width * tex_height + 7) // 8
    basis_total = 0
    mean_total = 0
    stddev_total = 0
    for mod in MODALITIES:
        dim = MODALITY_DIMS[mod]
        m = components[mod] if isinstance(components, dict) else components
        basis_total += 4 * m * dim * texel_count
        mean_total += 4 * dim * texel_count
        stddev_total += 4 * m
    total = 20 + mask + 8 * len(MODALITIES) + mean_total + stddev_total + basis_total \
        + 12 * texel_count
    return {"header": 20, "mask": mask, "means": mean_total, "stddevs": stddev_total,
            "basis": basis_total, "color": 12 * texel_count, "total": total}


def save_gem(model: GemModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_gem(path) -> GemModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
