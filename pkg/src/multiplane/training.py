"""End-to-end training: patch sampling with the depth-coverage rule, L1
loss, learning-rate schedule, checkpointing, and evaluation runs.

Patch rule: an example is a random target view plus a random patch window;
the loss only applies to pixels where strictly more than the coverage
threshold (80%) of the depth planes land in-bounds after backward warping.
Coverage is per-pixel. Patches whose mask comes out empty are resampled;
100 consecutive rejections mean the camera frusta do not overlap, which is
a configuration error, not bad luck.

Everything is keyed by the config seed: scene/gain/window draws come from
one Philox stream and per-example noise seeds are drawn from it, so a fixed
seed reproduces the run bit for bit.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, Tape, adam_step, ops, save_checkpoint, zero_grads
from .geometry import CameraView, reference_camera, sample_depth_planes
from .metrics import compare_views
from .noise import add_noise, gain_to_params
from .warp import plane_coverage, scaled_size

COVERAGE_THRESHOLD = 0.8  # strictly-greater-than fraction of planes in bounds
MAX_PATCH_RESAMPLES = 100


class TrainingAborted(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 2
    patch_size: int = 56
    lr: float = 1.5e-3
    lr_drop_factor: float = 0.1
    lr_drop_step: int | None = None  # defaults to 80% of steps
    gains: tuple = (4, 8, 16, 20)  # denoise mode draws a gain per example
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.patch_size < 1:
            raise ValueError("steps, batch_size, and patch_size must be >= 1")
        if self.lr_drop_step is None:
            self.lr_drop_step = min(int(round(0.8 * self.steps)), self.steps - 1)
        if not 0 <= self.lr_drop_step < self.steps:
            raise ValueError(f"lr_drop_step {self.lr_drop_step} must lie in [0, steps)")

    def lr_at(self, step):
        """Learning rate for a 0-based step index; dropped at/after the boundary."""
        return self.lr * self.lr_drop_factor if step >= self.lr_drop_step else self.lr


# Full-scale schedule for reference: 100k steps, batch 4, drop at 80k,
# patch 192 (synthesis) or 256 (denoise).
def paper_schedule(mode="synthesis"):
    return TrainConfig(steps=100_000, batch_size=4, patch_size=192 if mode == "synthesis" else 256, log_every=100)


@dataclass
class SceneBundle:
    """One training scene: clean views plus the input/target split."""

    views: list
    names: list = None
    input_indices: list = None
    target_indices: list = None

    def __post_init__(self):
        if self.names is None:
            self.names = [f"{i:03d}" for i in range(len(self.views))]
        if self.input_indices is None:
            self.input_indices = list(range(len(self.views)))
        if self.target_indices is None:
            self.target_indices = list(self.input_indices)

    @property
    def input_views(self):
        return [self.views[i] for i in self.input_indices]

    @property
    def image_size(self):
        return self.views[0].image.shape[1:]


def bundle_for_denoising(views, names=None):
    return SceneBundle(list(views), names)


def bundle_for_synthesis(views, holdout, names=None):
    """Hold out the last `holdout` views as synthesis targets."""
    if not 0 < holdout < len(views):
        raise ValueError(f"holdout must be in (0, {len(views)}), got {holdout}")
    count = len(views)
    return SceneBundle(
        list(views),
        names,
        input_indices=list(range(count - holdout)),
        target_indices=list(range(count - holdout, count)),
    )


@dataclass
class PatchExample:
    window: tuple  # (x0, y0) ints in reference/target pixels
    target_indices: list
    masks: list  # (1, P, P) float32 per target, 1 where the loss applies
    gain: int | None = None
    noise_seed: int | None = None


def sample_patch(bundle, reference, planes, scale, rng, config, mode):
    """Draw a target set, patch window, and coverage mask; resample empties."""
    h, w = bundle.image_size
    patch = config.patch_size
    if patch > min(h, w):
        raise ValueError(f"patch size {patch} exceeds image size {(h, w)}")
    grid = scaled_size(scale, patch, patch)
    depth_count = len(planes)
    for _ in range(MAX_PATCH_RESAMPLES):
        x0 = int(rng.integers(0, w - patch + 1))
        y0 = int(rng.integers(0, h - patch + 1))
        if mode == "denoise":
            targets = list(bundle.input_indices)
        else:
            targets = [int(rng.choice(np.asarray(bundle.target_indices)))]
        masks = []
        for ti in targets:
            counts = plane_coverage(
                reference,
                planes,
                scale,
                grid,
                bundle.views[ti],
                (patch, patch),
                src_window=(x0, y0),
                dst_window=(x0, y0),
            )
            # strictly more than the threshold fraction, exact in integers
            keep = counts * 10 > int(COVERAGE_THRESHOLD * 10) * depth_count
            masks.append(keep.astype(np.float32)[None])
        if any(m.sum() > 0 for m in masks):
            gain = int(rng.choice(np.asarray(config.gains))) if mode == "denoise" else None
            noise_seed = int(rng.integers(0, 2**63 - 1)) if mode == "denoise" else None
            return PatchExample((x0, y0), targets, masks, gain, noise_seed)
    raise ValueError(
        f"no patch with loss coverage found after {MAX_PATCH_RESAMPLES} draws; input and target frusta do not overlap"
    )


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)  # (step, lr, loss)
    checkpoint_dir: str | None = None
    final_loss: float = float("nan")


def _example_loss(model, bundle, reference, planes, example, config):
    """Forward one patch example and return its masked L1 loss tensor."""
    cfg = model.config
    patch = (config.patch_size, config.patch_size)
    window = example.window
    targets = example.target_indices
    render_cameras = [bundle.views[i] for i in targets]
    render_windows = [window] * len(targets)

    if cfg.mode == "denoise":
        params = gain_to_params(example.gain)
        noisy_views = [
            CameraView(v.intrinsics, v.pose, add_noise(v.image, params, example.noise_seed + 7919 * i))
            for i, v in enumerate(bundle.input_views)
        ]
        out = model.forward(
            noisy_views,
            reference,
            planes,
            render_cameras=noisy_views,
            noise_params=params,
            window=window,
            patch_size=patch,
            render_windows=render_windows,
            out_size=patch,
        )
    else:
        out = model.forward(
            bundle.input_views,
            reference,
            planes,
            render_cameras=render_cameras,
            window=window,
            patch_size=patch,
            render_windows=render_windows,
            out_size=patch,
        )
    x0, y0 = window
    clean = np.stack(
        [bundle.views[i].image[:, y0 : y0 + patch[0], x0 : x0 + patch[1]] for i in targets]
    ).astype(np.float32)
    mask = np.stack(example.masks)  # (R, 1, P, P)
    return ops.l1_loss(out, clean, mask)


def train(config, model, scenes, out_dir=None):
    """Optimize `model` on SceneBundles; returns the loss curve and writes a
    checkpoint plus a line-oriented loss log when `out_dir` is given.

    Deterministic: a fixed config seed yields a bitwise-identical checkpoint.
    A non-finite loss or gradient aborts with the last good parameters
    retained (and checkpointed, when out_dir is set).
    """
    mode = model.config.mode
    rng = np.random.Generator(np.random.Philox(key=np.uint64(config.seed)))
    params = model.named_parameters()
    state = AdamState(lr=config.lr)

    prepared = []
    for bundle in scenes:
        if min(bundle.image_size) < config.patch_size:
            raise ValueError(f"patch size {config.patch_size} exceeds scene size {bundle.image_size}")
        reference = reference_camera(bundle.input_views, bundle.image_size, far=model.config.far)
        planes = sample_depth_planes(model.config.near, model.config.far, model.config.depth_count)
        prepared.append((bundle, reference, planes))

    result = TrainResult()
    log_lines = []
    last_good = {name: p.data.copy() for name, p in params.items()}

    def flush(step_count):
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "checkpoint"), params)
        with open(os.path.join(out_dir, "loss_log.txt"), "w") as fh:
            fh.write("\n".join(log_lines) + ("\n" if log_lines else ""))
        result.checkpoint_dir = os.path.join(out_dir, "checkpoint")

    for step in range(config.steps):
        state.lr = config.lr_at(step)
        zero_grads(params)
        batch_losses = []
        with Tape() as tape:
            for _ in range(config.batch_size):
                bundle, reference, planes = prepared[int(rng.integers(0, len(prepared)))]
                example = sample_patch(bundle, reference, planes, model.config.scale, rng, config, mode)
                batch_losses.append(_example_loss(model, bundle, reference, planes, example, config))
            loss = batch_losses[0]
            for term in batch_losses[1:]:
                loss = ops.add(loss, term)
            loss = ops.scale(loss, 1.0 / len(batch_losses))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                for name, p in params.items():
                    p.data = last_good[name]
                flush(step)
                raise TrainingAborted(f"non-finite loss {loss_value} at step {step}; last good checkpoint retained")
            tape.backward(loss)
        try:
            adam_step(state, params)
        except FloatingPointError as exc:
            for name, p in params.items():
                p.data = last_good[name]
            flush(step)
            raise TrainingAborted(str(exc) + "; last good checkpoint retained") from exc
        for name, p in params.items():
            np.copyto(last_good[name], p.data)
        result.loss_curve.append((step, state.lr, loss_value))
        if step % config.log_every == 0 or step == config.steps - 1:
            log_lines.append(f"step {step} lr {state.lr:.6g} loss {loss_value:.8f}")
    result.final_loss = result.loss_curve[-1][2]
    flush(config.steps)
    return result


def evaluate(model, scenes, gains=None, crop=None, noise_seed=1234):
    """Metric reports per scene (and per gain in denoise mode).

    Synthesis crops a 16-pixel boundary before computing metrics; denoising
    uses the full frame. Returns a list of MetricReport.
    """
    mode = model.config.mode
    if crop is None:
        crop = 16 if mode == "synthesis" else 0
    if gains is None:
        gains = (4, 8, 16, 20) if mode == "denoise" else (None,)
    reports = []
    for si, bundle in enumerate(scenes):
        reference = reference_camera(bundle.input_views, bundle.image_size, far=model.config.far)
        planes = sample_depth_planes(model.config.near, model.config.far, model.config.depth_count)
        for gain in gains:
            if mode == "denoise":
                params = gain_to_params(gain)
                seed = noise_seed + 1_000_003 * si
                noisy_views = [
                    CameraView(v.intrinsics, v.pose, add_noise(v.image, params, seed + 7919 * i))
                    for i, v in enumerate(bundle.input_views)
                ]
                out = model.forward(noisy_views, reference, planes, render_cameras=noisy_views, noise_params=params)
                targets = np.stack([v.image for v in bundle.input_views])
                names = [bundle.names[i] for i in bundle.input_indices]
                label = f"scene{si}-gain{gain}"
            else:
                render_cameras = [bundle.views[i] for i in bundle.target_indices]
                out = model.forward(bundle.input_views, reference, planes, render_cameras=render_cameras)
                targets = np.stack([bundle.views[i].image for i in bundle.target_indices])
                names = [bundle.names[i] for i in bundle.target_indices]
                label = f"scene{si}"
            reports.append(compare_views(out.data, targets, names=names, crop=crop, label=label))
    return reports


def mean_psnr(reports):
    return float(np.mean([r.mean_psnr for r in reports]))


def save_reports(path, reports):
    lines = []
    for report in reports:
        lines.extend(report.to_lines())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return lines
