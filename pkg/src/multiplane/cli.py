"""Command-line entry point wiring the modules into reproducible workflows.

Every subcommand writes a manifest.json next to its outputs recording the
command, a hash of the resolved configuration, the seed, and the library
versions, so a run can be identified and replayed. Identical command +
seed produces byte-identical outputs.

Exit codes: 0 success, 1 internal error, 2 invalid input. Failures print a
single machine-parsable line `error: code=<n> msg="..."` on stderr.

Heavy imports happen inside the handlers so that --threads can cap the
BLAS/OpenMP worker pools before NumPy loads.
"""

import argparse
import hashlib
import json
import os
import sys

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="multiplane",
        description="Multiplane-representation view synthesis and multi-frame denoising.",
    )
    parser.add_argument("--threads", type=int, default=1, metavar="N", help="cap worker threads (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("make-scene", help="generate a synthetic multi-view scene directory")
    p.add_argument("--out", required=True, help="output scene directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=4, help="number of rig cameras")
    p.add_argument("--layers", type=int, default=3, help="number of scene layers (1-8)")
    p.add_argument("--texture", default="mixed", choices=["checker", "noise", "ramp", "mixed"])
    p.add_argument("--height", type=int, default=80)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--near", type=float, default=2.5, help="nearest layer depth (m)")
    p.add_argument("--far", type=float, default=40.0, help="farthest layer depth (m)")
    p.add_argument("--spacing", type=float, default=0.2, help="rig radius (m)")
    p.add_argument("--bit-depth", type=int, default=16, choices=[8, 16])

    p = sub.add_parser("add-noise", help="write a noisy copy of a scene directory")
    p.add_argument("--in", dest="input", required=True, help="clean scene directory")
    p.add_argument("--out", required=True, help="noisy scene directory")
    p.add_argument("--gain", type=int, required=True, help="gain level (1,2,4,8,16,20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bit-depth", type=int, default=16, choices=[8, 16])

    p = sub.add_parser("train", help="train a model on a directory of scene directories")
    p.add_argument("--data", required=True, help="directory containing scene subdirectories")
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--mode", default="denoise", choices=["denoise", "synthesis"])
    p.add_argument("--preset", default="desk", help="pipeline preset (mpfer-16/32/64, desk)")
    p.add_argument("--model", default="features", choices=["features", "mpi-stacked", "mpi-depthwise", "single-frame"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--patch", type=int, default=56)
    p.add_argument("--lr", type=float, default=1.5e-3)
    p.add_argument("--gains", default="4,8,16,20", help="comma-separated denoise gain levels")
    p.add_argument("--holdout", type=int, default=1, help="held-out target views per scene (synthesis)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="pipeline config override (repeatable)")

    p = sub.add_parser("denoise", help="denoise a (noisy) scene directory with a checkpoint")
    p.add_argument("--in", dest="input", required=True, help="noisy scene directory (with noise.json)")
    p.add_argument("--checkpoint", required=True, help="run directory written by train")
    p.add_argument("--out", required=True)
    p.add_argument("--gain", type=int, default=None, help="override the gain recorded in noise.json")
    p.add_argument("--bit-depth", type=int, default=16, choices=[8, 16])

    p = sub.add_parser("synthesize", help="render novel views of a clean scene directory")
    p.add_argument("--in", dest="input", required=True, help="input scene directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--targets", required=True, help="pose file of target cameras")
    p.add_argument("--bit-depth", type=int, default=16, choices=[8, 16])

    p = sub.add_parser("eval", help="evaluate a checkpoint on scene directories")
    p.add_argument("--data", required=True, help="directory containing scene subdirectories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory for the report")
    p.add_argument("--gains", default="4,8,16,20")
    p.add_argument("--noise-seed", type=int, default=1234)
    p.add_argument("--holdout", type=int, default=1, help="held-out target views per scene (synthesis)")

    p = sub.add_parser("dump-mpf", help="visualize multiplane feature planes as images")
    p.add_argument("--in", dest="input", required=True, help="scene directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--planes", default="1,3,5", help="comma-separated 1-based plane indices")
    p.add_argument("--gain", type=int, default=None, help="synthesize noise at this gain if the scene is clean")
    p.add_argument("--seed", type=int, default=0, help="noise seed when --gain is used")
    return parser


def _config_hash(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _write_manifest(out_dir, command, payload, seed):
    import numpy

    from . import __version__
    from .scenes import write_json

    os.makedirs(out_dir, exist_ok=True)
    write_json(
        os.path.join(out_dir, "manifest.json"),
        {
            "command": command,
            "config_sha256": _config_hash(payload),
            "config": payload,
            "seed": seed,
            "versions": {
                "multiplane": __version__,
                "numpy": numpy.__version__,
                "python": "%d.%d" % sys.version_info[:2],
            },
        },
    )


def _load_scene_dirs(root):
    from .scenes import load_scene

    if not os.path.isdir(root):
        raise ValueError(f"{root}: not a directory")
    sub_dirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    scene_dirs = [os.path.join(root, d) for d in sub_dirs if os.path.exists(os.path.join(root, d, "poses.txt"))]
    if not scene_dirs:
        raise ValueError(f"{root}: no scene directories (with poses.txt) found")
    return [(path, *load_scene(path)) for path in scene_dirs]


def _parse_gains(text):
    try:
        return tuple(int(tok) for tok in text.split(",") if tok)
    except ValueError as exc:
        raise ValueError(f"invalid --gains {text!r}: {exc}") from None


def _parse_overrides(pairs):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"override {pair!r} is not KEY=VALUE")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_make_scene(args):
    from dataclasses import asdict

    from .geometry import CameraView
    from .scenes import SceneSpec, make_rig, make_scene, render_dataset, save_scene, write_json

    spec = SceneSpec(
        layer_count=args.layers,
        depth_range=(args.near, args.far),
        texture=args.texture,
        seed=args.seed,
    )
    scene = make_scene(spec)
    rig = make_rig(args.views, (args.height, args.width), seed=args.seed + 1, spacing=args.spacing)
    images = render_dataset(scene, rig, (args.height, args.width))
    views = [CameraView(c.intrinsics, c.pose, img) for c, img in zip(rig, images)]
    save_scene(args.out, views, bit_depth=args.bit_depth)
    payload = {"spec": asdict(spec), "views": args.views, "size": [args.height, args.width],
               "spacing": args.spacing, "bit_depth": args.bit_depth}
    write_json(os.path.join(args.out, "scene.json"), {"generator": payload, "layer_depths": scene.depths})
    _write_manifest(args.out, "make-scene", payload, args.seed)
    print(f"wrote scene with {args.views} views to {args.out}")
    return EXIT_OK


def cmd_add_noise(args):
    import numpy as np

    from .geometry import CameraView
    from .noise import add_noise, gain_to_params
    from .scenes import load_scene, save_scene, write_json

    views, names = load_scene(args.input)
    params = gain_to_params(args.gain)
    noisy = []
    for i, view in enumerate(views):
        img = add_noise(view.image, params, args.seed + 7919 * i)
        noisy.append(CameraView(view.intrinsics, view.pose, np.clip(img, 0.0, 1.0)))
    save_scene(args.out, noisy, names=names, bit_depth=args.bit_depth)
    payload = {"gain": args.gain, "sigma_r": params.sigma_r, "sigma_s": params.sigma_s,
               "source": os.path.abspath(args.input), "bit_depth": args.bit_depth}
    write_json(os.path.join(args.out, "noise.json"), dict(payload, seed=args.seed))
    _write_manifest(args.out, "add-noise", payload, args.seed)
    print(f"wrote gain-{args.gain} noisy copy to {args.out}")
    return EXIT_OK


def _build_model(args, view_count):
    from .pipeline import MpinetModel, MultiplaneFeatureModel, SingleFrameModel, config_from_preset

    overrides = _parse_overrides(args.overrides)
    config = config_from_preset(args.preset, view_count=view_count, mode=args.mode, **overrides)
    if args.model == "features":
        return MultiplaneFeatureModel(config, seed=args.seed)
    if args.model == "single-frame":
        return SingleFrameModel(config, seed=args.seed)
    return MpinetModel(config, variant=args.model.removeprefix("mpi-"), seed=args.seed)


def _bundles_for(scenes, mode, holdout):
    from .training import bundle_for_denoising, bundle_for_synthesis

    bundles = []
    for _, views, names in scenes:
        if mode == "denoise":
            bundles.append(bundle_for_denoising(views, names))
        else:
            bundles.append(bundle_for_synthesis(views, holdout, names))
    return bundles


def cmd_train(args):
    from dataclasses import asdict

    from .pipeline import save_model
    from .training import TrainConfig, train

    scenes = _load_scene_dirs(args.data)
    gains = _parse_gains(args.gains)
    bundles = _bundles_for(scenes, args.mode, args.holdout)
    view_count = len(bundles[0].input_indices)
    model = _build_model(args, view_count)
    tc = TrainConfig(steps=args.steps, batch_size=args.batch, patch_size=args.patch, lr=args.lr,
                     gains=gains, seed=args.seed)
    result = train(tc, model, bundles, out_dir=args.out)
    save_model(args.out, model)
    payload = {"pipeline": asdict(model.config), "model": args.model, "train": asdict(tc),
               "data": os.path.abspath(args.data)}
    _write_manifest(args.out, "train", payload, args.seed)
    print(f"trained {args.steps} steps, final loss {result.final_loss:.6f}; checkpoint in {args.out}")
    return EXIT_OK


def _save_rendered(out_dir, images, names, views, bit_depth):
    import numpy as np

    from .geometry import CameraView
    from .scenes import save_scene

    clipped = [CameraView(v.intrinsics, v.pose, np.clip(img, 0.0, 1.0)) for v, img in zip(views, images)]
    save_scene(out_dir, clipped, names=names, bit_depth=bit_depth)


def cmd_denoise(args):
    from .noise import gain_to_params
    from .pipeline import full_pipeline, load_model
    from .scenes import load_scene, read_json

    views, names = load_scene(args.input)
    model = load_model(args.checkpoint)
    if model.config.mode != "denoise":
        raise ValueError(f"checkpoint {args.checkpoint} is a {model.config.mode} model")
    gain = args.gain
    noise_path = os.path.join(args.input, "noise.json")
    if gain is None:
        if not os.path.exists(noise_path):
            raise ValueError(f"{args.input}: no noise.json; pass --gain explicitly")
        gain = int(read_json(noise_path)["gain"])
    if len(views) != model.config.view_count:
        raise ValueError(f"model expects {model.config.view_count} views, scene has {len(views)}")
    out = full_pipeline(views, model, noise_params=gain_to_params(gain))
    _save_rendered(args.out, out.data, names, views, args.bit_depth)
    payload = {"checkpoint": os.path.abspath(args.checkpoint), "gain": gain, "input": os.path.abspath(args.input)}
    _write_manifest(args.out, "denoise", payload, 0)
    print(f"denoised {len(views)} views at gain {gain} into {args.out}")
    return EXIT_OK


def cmd_synthesize(args):
    from .geometry import CameraView, load_pose_file
    from .pipeline import full_pipeline, load_model
    from .scenes import load_scene

    views, _ = load_scene(args.input)
    model = load_model(args.checkpoint)
    if model.config.mode != "synthesis":
        raise ValueError(f"checkpoint {args.checkpoint} is a {model.config.mode} model")
    if len(views) != model.config.view_count:
        raise ValueError(f"model expects {model.config.view_count} views, scene has {len(views)}")
    targets = [(name, CameraView(intr, pose, None)) for name, intr, pose in load_pose_file(args.targets)]
    out = full_pipeline(views, model, render_cameras=[t for _, t in targets],
                        image_size=views[0].image.shape[1:])
    _save_rendered(args.out, out.data, [n for n, _ in targets], [t for _, t in targets], args.bit_depth)
    payload = {"checkpoint": os.path.abspath(args.checkpoint), "targets": os.path.abspath(args.targets),
               "input": os.path.abspath(args.input)}
    _write_manifest(args.out, "synthesize", payload, 0)
    print(f"synthesized {len(targets)} views into {args.out}")
    return EXIT_OK


def cmd_eval(args):
    from .pipeline import load_model
    from .training import evaluate, save_reports

    model = load_model(args.checkpoint)
    scenes = _load_scene_dirs(args.data)
    bundles = _bundles_for(scenes, model.config.mode, args.holdout)
    gains = _parse_gains(args.gains) if model.config.mode == "denoise" else None
    reports = evaluate(model, bundles, gains=gains, noise_seed=args.noise_seed)
    os.makedirs(args.out, exist_ok=True)
    lines = save_reports(os.path.join(args.out, "report.txt"), reports)
    payload = {"checkpoint": os.path.abspath(args.checkpoint), "data": os.path.abspath(args.data),
               "gains": list(gains) if gains else None, "noise_seed": args.noise_seed}
    _write_manifest(args.out, "eval", payload, args.noise_seed)
    for line in lines:
        if line.startswith("mean"):
            print(line)
    return EXIT_OK


def cmd_dump_mpf(args):
    import numpy as np

    from .geometry import CameraView
    from .noise import add_noise, gain_to_params
    from .pipeline import encode_mpf, load_model
    from .scenes import load_scene, read_json, write_image, write_json
    from .warp import build_psv

    views, _ = load_scene(args.input)
    model = load_model(args.checkpoint)
    if not hasattr(model, "encoder"):
        raise ValueError("dump-mpf needs a multiplane feature checkpoint")
    plane_ids = _parse_gains(args.planes)
    depth_count = model.config.depth_count
    for p in plane_ids:
        if not 1 <= p <= depth_count:
            raise ValueError(f"plane index {p} out of range 1..{depth_count}")

    noise_params = None
    if model.config.mode == "denoise":
        noise_path = os.path.join(args.input, "noise.json")
        if os.path.exists(noise_path):
            noise_params = gain_to_params(int(read_json(noise_path)["gain"]))
        elif args.gain is not None:
            noise_params = gain_to_params(args.gain)
            views = [
                CameraView(v.intrinsics, v.pose, np.clip(add_noise(v.image, noise_params, args.seed + 7919 * i), 0, 1))
                for i, v in enumerate(views)
            ]
        else:
            raise ValueError("denoise checkpoint on a clean scene: pass --gain to synthesize noise")

    from .geometry import reference_camera, sample_depth_planes

    cfg = model.config
    reference = reference_camera(views, views[0].image.shape[1:], far=cfg.far)
    planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)
    features = model.input_features(views, noise_params=noise_params)
    psv = build_psv(views, reference, planes, scale=cfg.scale, pre_conv=model.pre_conv, features=features)
    mpf = encode_mpf(psv, model.encoder)

    os.makedirs(args.out, exist_ok=True)
    ranges = {}
    for p in plane_ids:
        channels = mpf.data.data[p - 1, :3]
        lo, hi = float(channels.min()), float(channels.max())
        span = hi - lo if hi > lo else 1.0
        img = (channels - lo) / span
        name = f"plane_{p:02d}.ppm"
        write_image(os.path.join(args.out, name), img, bit_depth=8)
        ranges[name] = {"min": lo, "max": hi, "normalization": "per-plane min-max"}
    payload = {"checkpoint": os.path.abspath(args.checkpoint), "planes": list(plane_ids),
               "input": os.path.abspath(args.input)}
    write_json(os.path.join(args.out, "normalization.json"), ranges)
    _write_manifest(args.out, "dump-mpf", payload, args.seed)
    print(f"wrote {len(plane_ids)} feature-plane images to {args.out}")
    return EXIT_OK


_HANDLERS = {
    "make-scene": cmd_make_scene,
    "add-noise": cmd_add_noise,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "synthesize": cmd_synthesize,
    "eval": cmd_eval,
    "dump-mpf": cmd_dump_mpf,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = max(1, args.threads)
    # numpy may already be imported (package __init__), so the BLAS pools are
    # capped at runtime; the env vars cover any later-loaded libraries
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))
    try:
        import threadpoolctl

        global _POOL_LIMITS
        _POOL_LIMITS = threadpoolctl.threadpool_limits(limits=threads)
    except ImportError:
        pass
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError) as exc:
        msg = str(exc).replace('"', "'")
        print(f'error: code={EXIT_INVALID} msg="{msg}"', file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        msg = f"{type(exc).__name__}: {exc}".replace('"', "'")
        print(f'error: code={EXIT_INTERNAL} msg="{msg}"', file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
