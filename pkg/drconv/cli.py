"""``drconv`` command line: gradient checks, training, cost tables and mask images.

Exit codes: 0 success, 1 a check failed or training diverged, 2 usage or
configuration error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cost import instrumented_madds
from .errors import (
    ConfigError, ConsistencyError, DivergenceError, EvaluationError, FormatError, LayerLookupError, MaskIndexError,
    ShapeError, SizeError,
)
from .train.checkpoint import load_checkpoint, save_checkpoint
from .train.config import DataConfig, load_run_config, parse_data_arg
from .train.data import load_dataset
from .train.loop import MetricsLog, build_network, check_data_fits, train
from .train.network import Network
from .verify import DEFAULT_STEP, LAYER_TOLERANCE, check_drconv_gradients, draw_case
from .viz import adjusted_agreement, mask_statistics, permutation_null, region_agreement, write_mask_images

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

USAGE_ERRORS = (ConfigError, FormatError, ConsistencyError, LayerLookupError, ShapeError, SizeError, MaskIndexError,
                EvaluationError)

CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.log"


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def odd_int(text):
    value = positive_int(text)
    if value % 2 == 0:
        raise argparse.ArgumentTypeError(f"kernel size must be odd, got {value}")
    return value


def positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def size_arg(text):
    h, sep, w = text.lower().partition("x")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return positive_int(h), positive_int(w)


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    passed = True
    for trial in range(args.trials):
        layer, x = draw_case(rng, args.m, args.k, args.channels, args.spatial, batch=args.batch, h=args.step)
        report = check_drconv_gradients(layer, x, tolerance=args.tolerance, h=args.step, rng=rng)
        print(f"trial={trial}")
        print(report.to_text())
        passed = passed and report.passed
    return EXIT_OK if passed else EXIT_FAILED


def cmd_train(args):
    run = load_run_config(args.config)
    data_config = parse_data_arg(args.data, run.data) if args.data else run.data
    if args.seed is not None:
        run.train.seed = args.seed
    if args.threads is not None:
        run.train.threads = args.threads
    train_set, val_set = load_dataset(data_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / METRICS_NAME
    if metrics_path.exists():
        metrics_path.unlink()
    (out / "config.json").write_text(json.dumps(
        {"model": run.model.to_dict(), "train": run.train.to_dict(), "data": data_config.to_dict()},
        indent=2, sort_keys=True) + "\n")
    network = build_network(run.model, run.train.seed)
    try:
        result = train(run.model, train_set, run.train, val_set, MetricsLog(metrics_path), network)
    except DivergenceError as exc:
        save_checkpoint(network, out / CHECKPOINT_NAME)
        print(f"error: {exc}; last good parameters saved to {out / CHECKPOINT_NAME}", file=sys.stderr)
        return EXIT_FAILED
    save_checkpoint(result.network, out / CHECKPOINT_NAME)
    final = result.history[-1]
    print(" ".join(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
                   for key, value in sorted(final.items())))
    return EXIT_OK


def cmd_cost(args):
    run = load_run_config(args.config)
    model = run.model
    if args.input_size is not None:
        model.input_hw = list(args.input_size)
    network = Network.build(model, np.random.default_rng(0))
    rows = network.cost_rows()
    print(f"{'layer':<10} {'kind':<9} {'madds':>12} {'params':>10}")
    ok = True
    h, w = model.input_hw
    for (name, kind, cost), layer_hw in zip(rows, _layer_inputs(network, (h, w))):
        line = f"{name:<10} {kind:<9} {cost.madds:>12d} {cost.params:>10d}"
        if args.check and layer_hw is not None:
            counted = instrumented_madds(network.layer(name), layer_hw)
            ok = ok and counted == cost.madds
            line += f"  counted={counted}"
        print(line)
    print(f"{'total':<10} {'':<9} {sum(r[2].madds for r in rows):>12d} {sum(r[2].params for r in rows):>10d}")
    return EXIT_OK if ok else EXIT_FAILED


def _layer_inputs(network, input_hw):
    """Input size of every convolution layer; ``None`` for the dense head."""
    h, w = input_hw
    sizes = []
    for i, layer in enumerate(network.layers):
        sizes.append((h, w))
        h, w = layer.spec.output_size(h, w)
        if i in network.config.pool_after:
            h, w = max(h // 2, 1), max(w // 2, 1)
    return sizes + [None] * (len(network.modules()) - len(network.layers))


def cmd_visualize(args):
    network = load_checkpoint(args.checkpoint)
    layer = network.layer(args.layer)
    h, w = network.config.input_hw
    base = DataConfig(height=h, width=w, classes=network.config.classes, n_train=args.samples,
                      n_val=0, seed=args.seed)
    data_config = parse_data_arg(args.data, base)
    data, _ = load_dataset(data_config)
    data = data.subset(slice(0, args.samples))
    check_data_fits(network.config, data)
    masks = network.guided_masks(data.images, args.layer)
    m = getattr(layer, "m", 1)
    write_mask_images(args.out, masks, m, args.layer)
    stats = mask_statistics(masks, m)
    print(f"layer={args.layer} m={m} samples={len(masks)} regions_active={stats['active']:.4g}")
    if data.regions is not None:
        observed = region_agreement(masks, data.regions)
        null = permutation_null(masks, data.regions, args.null_trials, args.seed)
        print(f"agreement={observed:.4f} null_p95={np.percentile(null, 95):.4f} "
              f"adjusted={adjusted_agreement(observed, null):.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="drconv", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=positive_int, default=None,
                        help="Evaluation worker threads (default 1; results are deterministic only with 1).")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="Dual-oracle gradient check of a random DRConv layer.")
    p.add_argument("--m", type=positive_int, default=8)
    p.add_argument("--k", type=odd_int, default=1)
    p.add_argument("--channels", type=positive_int, default=4)
    p.add_argument("--spatial", type=positive_int, default=4)
    p.add_argument("--batch", type=positive_int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=positive_float, default=LAYER_TOLERANCE)
    p.add_argument("--step", type=positive_float, default=DEFAULT_STEP)
    p.add_argument("--trials", type=positive_int, default=1)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="Train a model from a run config.")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="'synth' or 'idx:IMAGES,LABELS'; overrides the config.")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cost", help="Per-layer MADDs and parameter counts.")
    p.add_argument("--config", required=True)
    p.add_argument("--input-size", type=size_arg, default=None, help="HxW; defaults to model.input_hw.")
    p.add_argument("--check", action="store_true", help="Compare against an instrumented forward pass.")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("visualize", help="Write guided-mask images of one DRConv layer.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synth")
    p.add_argument("--layer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=positive_int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--null-trials", type=positive_int, default=200)
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
