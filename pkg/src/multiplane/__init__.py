"""Multiplane-representation engine for view synthesis and multi-frame
denoising, with a built-in reverse-mode autodiff core."""

from . import autodiff, compositor, geometry, kernels, metrics, noise, pipeline, scenes, training, warp
from .autodiff import Tape, Tensor, UnetSpec, build_unet
from .compositor import MpiTensor, overcomposite, overcomposite_recursive
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    CameraView,
    DepthPlaneSet,
    Homography,
    invert,
    plane_homography,
    reference_camera,
    relative_view,
    sample_depth_planes,
)
from .metrics import MetricReport, psnr, ssim
from .noise import NoiseParams, add_noise, gain_to_params, sigma_map
from .pipeline import (
    MpinetModel,
    MultiplaneFeatureModel,
    PipelineConfig,
    config_from_preset,
    encode_mpf,
    full_pipeline,
    mpinet_dw_predict,
    mpinet_predict,
    render_views,
)
from .scenes import SceneSpec, SyntheticScene, make_scene, render_ground_truth
from .training import TrainConfig, evaluate, sample_patch, train
from .warp import MpfTensor, ProjectedTensor, PsvTensor, build_psv, project_multiplane, warp_image

__version__ = "0.1.0"
