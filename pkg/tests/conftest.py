import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gemsplat.core import GaussianCloud, orbit_camera


def random_cloud(rng, n, spread=0.4, scale_lo=0.05, scale_hi=0.25,
                 logit_lo=-1.0, logit_hi=1.5):
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianCloud(
        positions=rng.normal(scale=spread, size=(n, 3)),
        rotations=rot,
        log_scales=np.log(rng.uniform(scale_lo, scale_hi, size=(n, 3))),
        opacity_logits=rng.uniform(logit_lo, logit_hi, size=n),
        colors=rng.uniform(0.05, 0.95, size=(n, 3)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_camera():
    return orbit_camera(32, 32, 45.0, 0.3, 0.15, 3.0)
