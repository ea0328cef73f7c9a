"""gemsplat: linear eigenmodels over animated 3D Gaussian clouds.

Distill a cloud sequence into per-modality PCA bases plus a static color
texture, refine the bases photometrically through a differentiable CPU
splatting renderer, fit or regress coefficients, and serve the result to an
interactive viewer.
"""

from .core import Camera, GaussianCloud, covariance3d, eval_gaussian2d, project_covariance
from .eigenmodel import (CoefficientVector, EigenBasis, GemModel, distill, evaluate,
                         load_gem, orthogonalize, pca_fit, project, save_gem, serialize,
                         deserialize)
from .images import ImageBuffer
from .renderer import (RenderGradients, RenderSettings, RenderStats, SortedSplatList,
                       render_backward, render_forward, render_stats)

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianCloud", "covariance3d", "eval_gaussian2d", "project_covariance",
    "CoefficientVector", "EigenBasis", "GemModel", "distill", "evaluate", "load_gem",
    "orthogonalize", "pca_fit", "project", "save_gem", "serialize", "deserialize",
    "ImageBuffer", "RenderGradients", "RenderSettings", "RenderStats",
    "SortedSplatList", "render_backward", "render_forward", "render_stats",
    "__version__",
]
