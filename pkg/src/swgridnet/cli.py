"""Command-line entry point: ``swgridnet <subcommand> ...``.

Failures print one line ``error: <kind>: <message>`` on stderr. Usage and
configuration errors exit 2; data, checkpoint and runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import topology
from .errors import ConfigurationError, SwGridError, UsageError

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message.replace("\n", " "))


def _data_dir(args):
    from .data import DATA_DIR_ENV, default_data_dir

    d = args.data_dir or default_data_dir()
    if not d:
        raise UsageError(f"--data-dir is required (or set {DATA_DIR_ENV})")
    return d


def cmd_paths(args, out):
    hist = topology.enumerate_paths(topology.GridSpec(args.dims, args.side))
    out.write("depth,count\n")
    for depth, count in hist.rows():
        out.write(f"{depth},{count}\n")
    if args.total:
        out.write(f"total,{hist.total}\n")
    return 0


def cmd_channels(args, out):
    spec = topology.GridSpec(args.dims, args.side, args.min_channels, args.max_channels)
    cols = [f"p{i}" for i in range(spec.dims)]
    out.write(",".join(cols + ["rank", "channel_in", "channel_out"]) + "\n")
    for p in topology.topological_order(spec):
        vals = list(p) + [topology.rank(p), topology.channel_in(spec, p), topology.channel_out(spec, p)]
        out.write(",".join(map(str, vals)) + "\n")
    return 0


def _load_split(directory, cfg, split):
    from .data import open_dataset

    data = open_dataset(directory, cfg.data.variant, split)
    limit = cfg.data.train_subset if split == "train" else cfg.data.test_subset
    return data.subset(limit) if limit else data


def cmd_train(args, out):
    from dataclasses import replace

    from .config import load_run_config
    from .data import generate_synth
    from .experiment import run_training

    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, total_epochs=args.epochs)
    if args.synth:
        train_data, test_data = generate_synth(cfg.synth)
    else:
        d = _data_dir(args)
        train_data, test_data = _load_split(d, cfg, "train"), _load_split(d, cfg, "test")
    if train_data.num_classes != cfg.network.num_classes:
        raise ConfigurationError(
            f"data has {train_data.num_classes} classes, network config has {cfg.network.num_classes}")
    if train_data.images.shape[-1] != cfg.network.image_size:
        raise ConfigurationError(
            f"data images are {train_data.images.shape[-1]} px, network expects {cfg.network.image_size}")
    _, rows = run_training(cfg, train_data, test_data, args.out, wall_time=not args.no_wall_time)
    last = rows[-1]
    out.write(f"epochs,{len(rows)},train_acc,{last.train_acc!r},test_acc,{last.test_acc!r}\n")
    return 0


def cmd_eval(args, out):
    from .checkpoint import load_checkpoint
    from .data import open_dataset
    from .train import evaluate

    net = load_checkpoint(args.checkpoint)
    data = open_dataset(_data_dir(args), args.variant, args.split)
    loss, acc = evaluate(net, data, args.batch_size)
    out.write("loss,accuracy\n")
    out.write(f"{loss!r},{acc!r}\n")
    return 0


def cmd_ensemble(args, out):
    from .checkpoint import load_checkpoint
    from .data import open_dataset
    from .train import ensemble_predict

    paths = [p for p in args.checkpoints.split(",") if p]
    if not paths:
        raise UsageError("--checkpoints needs at least one path")
    nets = [load_checkpoint(p) for p in paths]
    data = open_dataset(_data_dir(args), args.variant, args.split)
    labels = []
    for a in range(0, len(data), args.batch_size):
        pred, _ = ensemble_predict(nets, data.images[a:a + args.batch_size])
        labels.append(pred)
    labels = np.concatenate(labels) if labels else np.zeros(0, np.int64)
    acc = float((labels == data.labels).mean()) if len(data) else float("nan")
    if args.predictions:
        with open(args.predictions, "w") as fh:
            fh.write("index,label\n")
            fh.writelines(f"{i},{int(y)}\n" for i, y in enumerate(labels))
    out.write("models,accuracy\n")
    out.write(f"{len(nets)},{acc!r}\n")
    return 0


def cmd_gradcheck(args, out):
    from .config import load_run_config
    from .gradcheck import check_network_gradients

    cfg = load_run_config(args.config)
    max_entries = None if args.full else args.max_entries
    err, _ = check_network_gradients(cfg.network, seed=args.seed, batch=args.batch, max_entries=max_entries)
    ok = err < GRADCHECK_TOLERANCE
    out.write("max_rel_err,tolerance,status\n")
    out.write(f"{err!r},{GRADCHECK_TOLERANCE!r},{'pass' if ok else 'fail'}\n")
    return 0 if ok else 1


def cmd_synth(args, out):
    from dataclasses import replace

    from .config import load_fields
    from .data import SynthSpec, write_synth

    try:
        with open(args.spec) as fh:
            spec = load_fields(SynthSpec, fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read spec {args.spec}: {exc.strerror}") from None
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    write_synth(spec, args.out)
    out.write(f"train,{spec.classes * spec.samples_per_class},test,{spec.classes * spec.test_samples_per_class}\n")
    return 0


def build_parser():
    p = _Parser(prog="swgridnet", description="Grid-topology convolutional networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("paths", help="processing-path histogram as depth,count CSV")
    s.add_argument("--dims", type=int, required=True)
    s.add_argument("--side", type=int, required=True)
    s.add_argument("--total", action="store_true", help="append a total row")
    s.set_defaults(func=cmd_paths)

    s = sub.add_parser("channels", help="per-unit input/output widths")
    s.add_argument("--dims", type=int, required=True)
    s.add_argument("--side", type=int, required=True)
    s.add_argument("--min-channels", type=int, required=True)
    s.add_argument("--max-channels", type=int, required=True)
    s.set_defaults(func=cmd_channels)

    s = sub.add_parser("train", help="train one network")
    s.add_argument("--config", required=True)
    s.add_argument("--data-dir")
    s.add_argument("--out", required=True)
    s.add_argument("--synth", action="store_true", help="use the config's synthetic set instead of --data-dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--no-wall-time", action="store_true", help="write wall_seconds as 0 for byte-stable metrics")
    s.set_defaults(func=cmd_train)

    for name, fn, text in (("eval", cmd_eval, "loss and accuracy of one checkpoint"),
                           ("ensemble", cmd_ensemble, "mean-probability ensemble of several checkpoints")):
        s = sub.add_parser(name, help=text)
        if name == "eval":
            s.add_argument("--checkpoint", required=True)
        else:
            s.add_argument("--checkpoints", required=True, help="comma-separated checkpoint paths")
            s.add_argument("--predictions", help="write index,label CSV here")
        s.add_argument("--data-dir")
        s.add_argument("--variant", type=int, choices=(10, 100), default=10)
        s.add_argument("--split", choices=("train", "test"), default="test")
        s.add_argument("--batch-size", type=int, default=256)
        s.add_argument("--seed", type=int, help="accepted for uniformity; evaluation draws no randomness")
        s.set_defaults(func=fn)

    s = sub.add_parser("gradcheck", help="finite-difference check of every parameter tensor")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch", type=int, default=2)
    s.add_argument("--max-entries", type=int, default=48, help="entries probed per tensor")
    s.add_argument("--full", action="store_true", help="probe every entry (slow)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic dataset in CIFAR-10 record layout")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        return args.func(args, out)
    except SwGridError as exc:
        sys.stderr.write(f"error: {exc.kind}: {exc}\n")
        return 2 if isinstance(exc, (UsageError, ConfigurationError)) else 1


if __name__ == "__main__":
    sys.exit(main())
