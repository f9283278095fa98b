"""Spherical semantic segmentation of LiDAR pointclouds.

Band-limited harmonic analysis on S2 and SO(3), rotation-equivariant spectral
convolution layers, pointcloud projection/back-projection, a trainable
encoder-decoder segmentation network, and a rotation-robustness benchmark.
"""

from .errors import S2SegError
from .harmonics import iso3ft, isft, rotate_spectrum, sft, so3ft
from .loss_metrics import ConfusionMatrix, compute_weights, lovasz_softmax, total_loss, weighted_xent
from .nn import SegNet, backward, default_architecture, forward, load_checkpoint, save_checkpoint
from .projection import IGNORE, LabeledPointCloud, SphericalScan, back_project, project, rotate_cloud
from .spectral_ops import S2KernelBank, SO3KernelBank, integrate_gamma, s2_conv, so3_conv, so3_pool, so3_unpool
from .sphere import BandLimit, S2Grid, S2Signal, S2Spectrum, SO3Grid, SO3Signal, SO3Spectrum, make_s2_grid, make_so3_grid

__version__ = "0.1.0"
