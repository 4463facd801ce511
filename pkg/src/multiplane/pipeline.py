"""Multiplane feature encoder-renderer and the one-shot/depthwise baselines.

The feature path runs: learned pre-convolution on each input view, forward
warp into plane sweep volumes, a shared-weight encoder applied to each depth
independently (fusing across views), backward warp to each render view, a
1x1 convolution collapsing depths and channels, and a shared-weight renderer
applied to each view independently (fusing across depths). Because the
encoder never mixes depths and the renderer never mixes views, depth and
view permutation equivariance hold exactly.

Channel arithmetic, with C the single width hyperparameter and V views:
C1 = C per-view feature channels, C2 = V*C multiplane feature channels,
C3 = 64 collapsed channels (configurable). In denoise mode each input view
is conditioned on its per-pixel noise sigma estimate (concatenated before
the pre-convolution), and the renderer optionally sees the noisy view itself
through a skip concatenation (C3 + 3 input channels), which requires the
render views to be exactly the input views.
"""

import os
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Conv2d, Tensor, Unet, UnetSpec, assign_parameters, collect_parameters, load_checkpoint, ops, save_checkpoint
from .compositor import MpiTensor, overcomposite
from .geometry import reference_camera, sample_depth_planes
from .noise import sigma_map
from .warp import MpfTensor, build_psv, project_multiplane

MODES = ("synthesis", "denoise")


@dataclass(frozen=True)
class PipelineConfig:
    depth_count: int  # D
    channels: int  # C; per-view features C1 = C, multiplane features C2 = V*C
    scale: float  # s, representation grid upscale
    view_count: int  # V (the encoder width depends on it)
    mode: str = "synthesis"
    skip_connection: bool = False
    collapse_channels: int = 64  # C3
    unet_base: int = 64
    unet_levels: int = 3
    near: float = 0.5
    far: float = 100.0

    def __post_init__(self):
        if self.depth_count < 1 or self.channels < 1 or self.view_count < 1:
            raise ValueError("depth_count, channels, and view_count must be >= 1")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.skip_connection and self.mode != "denoise":
            raise ValueError("skip_connection requires denoise mode")

    @property
    def c1(self):
        return self.channels

    @property
    def c2(self):
        return self.view_count * self.channels

    @property
    def c3(self):
        return self.collapse_channels

    @property
    def input_channels(self):
        """3 color channels, plus the sigma conditioning map in denoise mode."""
        return 3 + (1 if self.mode == "denoise" else 0)


# (D, C, s) model sizes; unet base/levels stay at their defaults. The desk
# preset shrinks every width (including the collapse) to CPU-minutes scale.
PRESETS = {
    "mpfer-16": dict(depth_count=16, channels=8, scale=1.0),
    "mpfer-32": dict(depth_count=32, channels=16, scale=1.25),
    "mpfer-64": dict(depth_count=64, channels=8, scale=1.25),
    "desk": dict(depth_count=8, channels=4, scale=1.0, unet_base=8, unet_levels=2, collapse_channels=16),
}


def config_from_preset(name, view_count, mode="synthesis", **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    kwargs.update(overrides)
    skip = kwargs.pop("skip_connection", mode == "denoise")
    return PipelineConfig(view_count=view_count, mode=mode, skip_connection=skip, **kwargs)


class MultiplaneFeatureModel:
    """Pre-conv + depthwise encoder + collapse + viewwise renderer."""

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        root = np.random.SeedSequence(seed)
        rng_pre, rng_enc, rng_col, rng_ren = (np.random.default_rng(s) for s in root.spawn(4))
        # the pre-convolution is linear: no activation follows it
        self.pre_conv = Conv2d(config.input_channels, config.c1, 3, rng=rng_pre, name="pre", dtype=dtype)
        self.encoder = Unet(
            UnetSpec(config.view_count * config.c1, config.c2, config.unet_base, config.unet_levels),
            rng=rng_enc,
            name="encoder",
            dtype=dtype,
        )
        self.collapse = Conv2d(config.depth_count * config.c2, config.c3, 1, rng=rng_col, name="collapse", dtype=dtype)
        renderer_in = config.c3 + (3 if config.skip_connection else 0)
        self.renderer = Unet(
            UnetSpec(renderer_in, 3, config.unet_base, config.unet_levels), rng=rng_ren, name="renderer", dtype=dtype
        )

    def parameters(self):
        return list(collect_parameters(self.pre_conv, self.encoder, self.collapse, self.renderer).items())

    def named_parameters(self):
        return collect_parameters(self.pre_conv, self.encoder, self.collapse, self.renderer)

    def input_features(self, views, noise_params=None, sigma_maps=None):
        """Stack view images (V, 3(+1), H, W), appending sigma conditioning."""
        images = [np.asarray(v.image, dtype=self.dtype) for v in views]
        if self.config.mode == "denoise":
            if sigma_maps is None:
                if noise_params is None:
                    raise ValueError("denoise mode needs noise_params or sigma_maps")
                sigma_maps = [sigma_map(img, noise_params) for img in images]
            images = [np.concatenate([img, np.asarray(sm, dtype=self.dtype)], axis=0)
                      for img, sm in zip(images, sigma_maps)]
        return [Tensor(img) for img in images]

    def forward(
        self,
        views,
        reference,
        planes,
        render_cameras,
        noise_params=None,
        sigma_maps=None,
        window=None,
        patch_size=None,
        render_windows=None,
        out_size=None,
    ):
        cfg = self.config
        features = self.input_features(views, noise_params, sigma_maps)
        psv = build_psv(
            views,
            reference,
            planes,
            scale=cfg.scale,
            pre_conv=self.pre_conv,
            window=window,
            patch_size=patch_size,
            features=features,
        )
        mpf = encode_mpf(psv, self.encoder)
        skip_inputs = None
        if cfg.skip_connection:
            skip_inputs = _crop_images([v.image for v in views], render_windows, out_size or patch_size, self.dtype)
        return render_views(
            mpf,
            render_cameras,
            self.collapse,
            self.renderer,
            skip_inputs=skip_inputs,
            out_size=out_size or patch_size,
            windows=render_windows,
        )


class MpinetModel:
    """Baseline multiplane-image predictor; variant 'stacked' consumes all
    depths and views in one network pass, 'depthwise' shares one network
    across depths."""

    VARIANTS = ("stacked", "depthwise")

    def __init__(self, config, variant, seed=0, dtype=np.float32):
        if variant not in self.VARIANTS:
            raise ValueError(f"variant must be one of {self.VARIANTS}")
        self.config = config
        self.variant = variant
        d, v = config.depth_count, config.view_count
        in_ch = d * v * 3 if variant == "stacked" else v * 3
        out_ch = d * 4 if variant == "stacked" else 4
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.net = Unet(UnetSpec(in_ch, out_ch, config.unet_base, config.unet_levels), rng=rng, name="mpinet", dtype=dtype)

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return collect_parameters(self.net)

    def forward(self, views, reference, planes, render_cameras, window=None, patch_size=None,
                render_windows=None, out_size=None, **_ignored):
        cfg = self.config
        psv = build_psv(views, reference, planes, scale=cfg.scale, window=window, patch_size=patch_size)
        predict = mpinet_predict if self.variant == "stacked" else mpinet_dw_predict
        mpi = predict(psv, self.net)
        projected = project_multiplane(mpi, render_cameras, out_size=out_size or patch_size, windows=render_windows)
        rendered = [
            overcomposite(ops.reshape(ops.narrow(projected.data, 0, r, 1), projected.data.shape[1:]))
            for r in range(len(render_cameras))
        ]
        return ops.stack(rendered)


class SingleFrameModel:
    """Per-frame denoiser: a chain of Unet blocks with no cross-view path.

    The equal-pass-budget control for the multiplane denoiser: with D planes
    and V views the feature path spends (D + V) / V network passes per
    frame, so the chain length is ceil of that budget. Accepts the same
    forward signature as the multiplane models (the geometry arguments are
    ignored) so the training loop and evaluator treat both identically.
    """

    def __init__(self, config, seed=0, dtype=np.float32):
        if config.mode != "denoise":
            raise ValueError("the single-frame control is a denoiser")
        self.config = config
        self.dtype = dtype
        blocks = int(np.ceil(unet_passes_per_frame(config)))
        root = np.random.SeedSequence(seed)
        self.blocks = [
            Unet(UnetSpec(4, 3, config.unet_base, config.unet_levels), rng=np.random.default_rng(s), name=f"block{i}", dtype=dtype)
            for i, s in enumerate(root.spawn(blocks))
        ]

    def parameters(self):
        return list(collect_parameters(*self.blocks).items())

    def named_parameters(self):
        return collect_parameters(*self.blocks)

    def forward(self, views, reference=None, planes=None, render_cameras=None, noise_params=None,
                sigma_maps=None, window=None, patch_size=None, render_windows=None, out_size=None):
        if render_cameras is not None and len(render_cameras) != len(views):
            raise ValueError("single-frame model denoises its own inputs (render views = input views)")
        images = [np.asarray(v.image, dtype=self.dtype) for v in views]
        if sigma_maps is None:
            if noise_params is None:
                raise ValueError("denoising needs noise_params or sigma_maps")
            sigma_maps = [sigma_map(img, noise_params) for img in images]
        size = out_size or patch_size
        estimate = ops.stack(_crop_images(images, render_windows, size, self.dtype))
        sigma = ops.stack(_crop_images(sigma_maps, render_windows, size, self.dtype))
        for block in self.blocks:
            estimate = block(ops.concat([estimate, sigma], axis=1))
        return estimate


def _crop_images(images, windows, size, dtype=np.float32):
    if size is None:
        crops = [np.asarray(img, dtype=dtype) for img in images]
    else:
        h, w = size
        crops = []
        windows = windows or [(0, 0)] * len(images)
        for img, (x0, y0) in zip(images, windows):
            x0, y0 = int(round(x0)), int(round(y0))
            crops.append(np.asarray(img[:, y0 : y0 + h, x0 : x0 + w], dtype=dtype))
    return [Tensor(c) for c in crops]


def encode_mpf(psv, encoder):
    """Apply a shared-weight encoder to each depth of a PSV independently."""
    d, v, c1 = psv.data.shape[:3]
    expected = v * c1
    if encoder.spec.in_channels != expected:
        raise ValueError(f"encoder expects {encoder.spec.in_channels} input channels, PSV provides {expected}")
    batched = ops.reshape(psv.data, (d, v * c1) + psv.data.shape[3:])
    features = encoder(batched)  # (D, C2, sh, sw)
    return MpfTensor(features, psv.depth_planes, psv.reference, psv.scale, psv.base_shape, psv.window)


def render_views(mpf, render_cameras, collapse_conv, renderer, skip_inputs=None, out_size=None, windows=None):
    """Backward-warp, collapse, and render each view independently.

    skip_inputs, when given, are per-render-view (3, H, W) tensors
    concatenated to the projected features; this requires a one-to-one
    mapping between render views and inputs (R == V).
    """
    projected = project_multiplane(mpf, render_cameras, collapse_conv, out_size=out_size, windows=windows)
    feats = projected.data  # (R, C3, H, W)
    if skip_inputs is not None:
        if len(skip_inputs) != len(render_cameras):
            raise ValueError(
                f"skip connection needs one render view per input, got {len(render_cameras)} views "
                f"and {len(skip_inputs)} inputs"
            )
        skip = ops.stack(skip_inputs)
        feats = ops.concat([feats, skip], axis=1)
    if renderer.spec.in_channels != feats.shape[1]:
        raise ValueError(f"renderer expects {renderer.spec.in_channels} channels, got {feats.shape[1]}")
    return renderer(feats)


def mpinet_predict(psv, net):
    """One-shot baseline: all depths and views stacked into one pass."""
    d, v, c = psv.data.shape[:3]
    if net.spec.in_channels != d * v * c or net.spec.out_channels != d * 4:
        raise ValueError(
            f"one-shot baseline needs {d * v * c} -> {d * 4} channels, "
            f"net has {net.spec.in_channels} -> {net.spec.out_channels}"
        )
    flat = ops.reshape(psv.data, (1, d * v * c) + psv.data.shape[3:])
    planes = ops.sigmoid(net(flat))
    planes = ops.reshape(planes, (d, 4) + psv.data.shape[3:])
    return MpiTensor(planes, psv.depth_planes, psv.reference, psv.scale, psv.base_shape, psv.window)


def mpinet_dw_predict(psv, net):
    """Depthwise baseline: views stacked, one shared pass per depth."""
    d, v, c = psv.data.shape[:3]
    if net.spec.in_channels != v * c or net.spec.out_channels != 4:
        raise ValueError(
            f"depthwise baseline needs {v * c} -> 4 channels, "
            f"net has {net.spec.in_channels} -> {net.spec.out_channels}"
        )
    batched = ops.reshape(psv.data, (d, v * c) + psv.data.shape[3:])
    planes = ops.sigmoid(net(batched))  # (D, 4, sh, sw)
    return MpiTensor(planes, psv.depth_planes, psv.reference, psv.scale, psv.base_shape, psv.window)


def full_pipeline(views, model, render_cameras=None, reference=None, planes=None, image_size=None, **kwargs):
    """Compose the whole pipeline for a model over full frames.

    Denoise mode defaults the render cameras to the input views (the
    one-to-one mapping the skip connection needs). The reference camera and
    depth planes are derived from the model config unless supplied.
    """
    cfg = model.config
    if image_size is None:
        image_size = views[0].image.shape[1:]
    if reference is None:
        reference = reference_camera(views, image_size, far=cfg.far)
    if planes is None:
        planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)
    if render_cameras is None:
        if cfg.mode != "denoise":
            raise ValueError("synthesis mode needs explicit render cameras")
        render_cameras = list(views)
    return model.forward(views, reference, planes, render_cameras, **kwargs)


def unet_passes_per_frame(config):
    """Network passes per frame for the feature path: (D + V) / V."""
    return (config.depth_count + config.view_count) / config.view_count


# ---------------------------------------------------------------------------
# Model persistence: config.json next to a parameter checkpoint directory
# ---------------------------------------------------------------------------

_MODEL_TYPES = {"features": MultiplaneFeatureModel, "mpi-stacked": MpinetModel, "mpi-depthwise": MpinetModel,
                "single-frame": SingleFrameModel}


def model_type_name(model):
    if isinstance(model, MultiplaneFeatureModel):
        return "features"
    if isinstance(model, MpinetModel):
        return f"mpi-{model.variant}"
    if isinstance(model, SingleFrameModel):
        return "single-frame"
    raise ValueError(f"unknown model type {type(model).__name__}")


def save_model(dirpath, model):
    """Write config.json + a bit-exact parameter checkpoint under dirpath."""
    from .scenes import write_json

    os.makedirs(dirpath, exist_ok=True)
    write_json(os.path.join(dirpath, "config.json"), {"type": model_type_name(model), "config": asdict(model.config)})
    save_checkpoint(os.path.join(dirpath, "checkpoint"), model.named_parameters())


def load_model(dirpath):
    """Rebuild a model from config.json and load its checkpoint weights."""
    from .scenes import read_json

    meta_path = os.path.join(dirpath, "config.json")
    if not os.path.exists(meta_path):
        raise ValueError(f"{dirpath}: missing config.json")
    meta = read_json(meta_path)
    type_name = meta.get("type")
    if type_name not in _MODEL_TYPES:
        raise ValueError(f"{dirpath}: unknown model type {type_name!r}")
    config = PipelineConfig(**meta["config"])
    if type_name.startswith("mpi-"):
        model = MpinetModel(config, variant=type_name.removeprefix("mpi-"))
    else:
        model = _MODEL_TYPES[type_name](config)
    assign_parameters(model.named_parameters(), load_checkpoint(os.path.join(dirpath, "checkpoint")))
    return model
