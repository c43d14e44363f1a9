"""Semantic-conditioned diffusion for lidar range images.

Library layout:
  geometry    spherical projection, normalization, lidar file IO
  scenegen    seeded synthetic scenes + analytic ray casting
  denoiser    circular-convolution U-Net with semantic projector head
  diffusion   schedules, forward/reverse steps, guidance, sampling
  training    joint conditional/unconditional loop with alignment loss
  translation partial-diffusion domain translation
  metrics     chamfer / voxel JSD / MMD / Frechet feature distance
  formats     .sgt tensors, .sgc checkpoints, dataset manifests
  cli         the `sglidar` command
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    PointCloud,
    RangeImage,
    SemanticMap,
    NormalizedImage,
    SensorSpec,
    project,
    unproject,
    normalize,
    denormalize,
)
from .diffusion import NoiseSchedule, SamplerConfig, linear_schedule  # noqa: F401
from .denoiser import Denoiser, DenoiserConfig  # noqa: F401
