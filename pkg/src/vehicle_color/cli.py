"""Vehicle colour classifier: prepare data, train, evaluate, predict and benchmark.

Usage: ``vehicle-color <command> [flags]``.

Commands: make-manifest, train, eval, predict, bench, viz-kernels.
Errors exit with status 2 and a single ``error[<code>]: <reason>`` line on
standard error.
"""

import argparse
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics, model
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .colorspace import ColorSpace
from .data import (
    CLASS_NAMES,
    DatasetDescriptor,
    ImageSet,
    apply_split_file,
    compute_mean_image,
    crop,
    ingest,
    preprocess,
    split,
    subsample,
    write_manifest,
)
from .errors import CheckpointError, ConfigError, VehicleColorError
from .layers import softmax
from .optim import TrainConfig
from .ppm import write_ppm
from .tensor import save_tensor
from .training import train
from .viz import kernel_figure

logger = logging.getLogger("vehicle_color")

# Preprocessed images are cached in memory below this many bytes.
CACHE_LIMIT_BYTES = 1 << 30


class UsageError(VehicleColorError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def set_threads(n):
    """Cap the BLAS thread pools used by every GEMM in the network."""
    threadpool_limits(max(1, int(n)))


def _image_set(manifest, split_name, space, size, cache):
    images = ImageSet.from_manifest(manifest, split_name, space, size, cache=False)
    if cache == "on" or (
        cache == "auto" and len(images) * 3 * size * size * 4 < CACHE_LIMIT_BYTES
    ):
        images = ImageSet.from_manifest(manifest, split_name, space, size, cache=True)
    return images


def _load_ckpt_config(ckpt):
    return TrainConfig.from_text(ckpt.config_text) if ckpt.config_text else TrainConfig()


# ------------------------------------------------------------------ commands


def cmd_make_manifest(args):
    seed = args.seed or 0
    manifest = ingest(args.source)
    if args.fraction < 1:
        manifest = subsample(manifest, args.fraction, seed)
    if args.split_file:
        manifest = apply_split_file(manifest, args.split_file)
    elif any(r.split is None for r in manifest.records):
        manifest = split(manifest, seed)
    space = ColorSpace.parse(args.color_space)
    os.makedirs(args.out, exist_ok=True)
    manifest_path = os.path.join(args.out, "manifest.csv")
    write_manifest(manifest, manifest_path)
    train_set = ImageSet.from_manifest(manifest, "train", space, args.resize)
    mean = compute_mean_image(train_set)
    mean_path = os.path.join(args.out, f"mean_{space.value}_{args.resize}.cnt")
    save_tensor(mean_path, mean)
    desc = DatasetDescriptor(
        manifest=manifest_path,
        mean_image=mean_path,
        color_space=space.value,
        seed=seed,
        resize_size=args.resize,
        root=os.path.abspath(args.source),
    )
    desc_path = os.path.join(args.out, "dataset.txt")
    desc.save(desc_path)
    n_train = len(manifest.subset("train"))
    print(f"records,{len(manifest)}")
    print(f"train,{n_train}")
    print(f"test,{len(manifest) - n_train}")
    print(f"descriptor,{desc_path}")


def _open_dataset(desc_path, cfg):
    desc = DatasetDescriptor.load(desc_path)
    if ColorSpace.parse(desc.color_space) is not cfg.space:
        raise ConfigError(
            f"dataset color space {desc.color_space} != config color space {cfg.color_space}"
        )
    if desc.resize_size != cfg.resize_size:
        raise ConfigError(f"dataset resize {desc.resize_size} != config {cfg.resize_size}")
    return desc.open()


def cmd_train(args):
    cfg = TrainConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    manifest = _open_dataset(args.data, cfg)
    train_set = _image_set(manifest, "train", cfg.space, cfg.resize_size, args.cache)
    mean = manifest.mean_image
    if mean is None:
        mean = compute_mean_image(train_set)
    spec = cfg.network_spec(n_classes=len(CLASS_NAMES))
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.state.spec != spec:
            raise CheckpointError("resume checkpoint was built for a different network spec")
        state, optimizer = ckpt.state, ckpt.optimizer
    else:
        state, optimizer = model.build(spec, seed=cfg.seed), None
    until = cfg.max_iter if args.iters is None else args.iters
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.txt"))

    def checkpoint(state_, optimizer_, name=None):
        name = name or f"ckpt_{optimizer_.iteration:08d}.cvc"
        path = os.path.join(args.out, name)
        save_checkpoint(
            path,
            Checkpoint(
                state_,
                optimizer_,
                mean,
                cfg.color_space,
                cfg.to_text(),
                extra={"classes": list(CLASS_NAMES)},
            ),
        )
        return path

    log_fh = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        log_fh.write("iter,lr,train_loss\n")

        def on_log(it, lr, loss):
            log_fh.write(f"{it},{lr:.6g},{loss:.6f}\n")
            log_fh.flush()

        from .optim import OptimizerState

        optimizer = optimizer or OptimizerState.zeros_like(state.params)
        if optimizer.iteration == 0 and not args.resume:
            checkpoint(state, optimizer)
        optimizer, _ = train(
            state,
            train_set,
            mean,
            cfg,
            optimizer=optimizer,
            until=until,
            on_log=on_log,
            on_checkpoint=checkpoint,
        )
    finally:
        if log_fh is not sys.stdout:
            log_fh.close()
    final = checkpoint(state, optimizer, "final.cvc")
    print(f"checkpoint,{final}", file=sys.stderr)


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _load_ckpt_config(ckpt)
    manifest = _open_dataset(args.data, cfg)
    mean = ckpt.mean_image if ckpt.mean_image is not None else manifest.mean_image
    images = _image_set(manifest, args.split, cfg.space, cfg.resize_size, "off")
    report = metrics.evaluate(ckpt.state, images, mean, batch_size=args.batch_size)
    print(metrics.format_table(report, cfg.space.value))
    if args.out:
        metrics.write_report(report, args.out, cfg.space.value)
        print(f"report,{args.out}")


def _center_input(pixels, mean, size):
    origin = (pixels.shape[-1] - size) // 2
    return np.ascontiguousarray(crop(pixels - mean, origin, origin, size)[None])


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _load_ckpt_config(ckpt)
    space = ColorSpace.parse(args.color_space)
    if space is not ColorSpace.parse(ckpt.color_space):
        raise CheckpointError(
            f"checkpoint color space {ckpt.color_space} != requested {space.value}"
        )
    if ckpt.mean_image is None:
        raise CheckpointError("checkpoint has no mean image")
    pixels = preprocess(args.image, space, cfg.resize_size)
    x = _center_input(pixels, ckpt.mean_image, ckpt.state.spec.input_size)
    probs = softmax(model.forward(ckpt.state, x, mode="eval").astype(np.float64))[0]
    names = ckpt.extra.get("classes") or list(CLASS_NAMES)
    print(f"prediction,{names[int(probs.argmax())]}")
    for name, p in zip(names, probs):
        print(f"{name},{p:.6f}")


def cmd_bench(args):
    holder = {}

    def load():
        ckpt = load_checkpoint(args.checkpoint)
        holder["ckpt"] = ckpt
        return ckpt.state, ckpt.mean_image

    def build_input(mean):
        ckpt = holder["ckpt"]
        cfg = _load_ckpt_config(ckpt)
        size = cfg.resize_size
        if args.image:
            pixels = preprocess(args.image, cfg.space, size)
        else:
            rng = np.random.default_rng(args.seed or 0)
            rgb = rng.integers(0, 256, size=(3, size, size)).astype(np.float64)
            from .data import preprocess_pixels

            pixels = preprocess_pixels(rgb, cfg.space, size)
        mean = np.zeros_like(pixels) if mean is None else mean
        return _center_input(pixels, mean, ckpt.state.spec.input_size)

    timing = metrics.bench_inference(load, build_input, args.repetitions)
    print(metrics.format_timing(timing))


def cmd_viz(args):
    ckpt = load_checkpoint(args.checkpoint)
    canvas, _ = kernel_figure(ckpt.state)
    write_ppm(args.out, canvas)
    n = sum(ckpt.state.params[f"{net}.conv1.weights"].shape[0] for net in model.BASE_NETWORKS)
    print(f"kernels,{n}")
    print(f"image,{args.out}")


# -------------------------------------------------------------------- parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser = _Parser(prog="vehicle-color", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kwargs):
        return _add(name, parents=[common], **kwargs)

    sub.add_parser = add_parser

    p = sub.add_parser("make-manifest", help="index images, split train/test, compute mean image")
    p.add_argument("source", help="class-per-directory root or CSV manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--color-space", default="rgb", help="rgb, hsv, lab or xyz")
    p.add_argument("--resize", type=int, default=256, help="resize side (default 256)")
    p.add_argument("--fraction", type=float, default=1.0, help="keep this fraction per class")
    p.add_argument("--split-file", help="CSV of path,split pinning an external split")
    p.set_defaults(func=cmd_make_manifest)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="key=value training config")
    p.add_argument("--data", required=True, help="dataset descriptor from make-manifest")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--iters", type=int, help="train up to this iteration (overrides max_iter)")
    p.add_argument("--log", help="write the CSV training log here instead of stdout")
    p.add_argument("--cache", choices=("auto", "on", "off"), default="auto",
                   help="keep preprocessed training images in memory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class accuracy and confusion matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset descriptor")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out", help="directory for CSV files and the confusion heatmap")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--color-space", default="rgb")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="time model initialisation and single-image inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", help="image to classify (default: seeded random image)")
    p.add_argument("--repetitions", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("viz-kernels", help="render first-layer kernels as a PPM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output .ppm path")
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        set_threads(args.threads)
        args.func(args)
    except VehicleColorError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
