"""Train the three equal-size grids (N=1 L=16, N=2 L=4, N=4 L=2) and collect final metrics.

Full-scale runs take 630 epochs each; use --epochs and --train-subset for a
shortened sweep, or --synth to exercise the pipeline without CIFAR data.
"""

import argparse
import os
from dataclasses import replace
from pathlib import Path

from swgridnet.config import load_run_config
from swgridnet.data import DATA_DIR_ENV, SynthSpec, generate_synth, load_cifar
from swgridnet.experiment import run_training

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SWEEP = ["cifar10_n1_l16_k16", "cifar10_n2_l4_k16", "cifar10_n4_l2_k16"]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV))
    ap.add_argument("--synth", action="store_true", help="use the synthetic set instead of CIFAR-10")
    ap.add_argument("--epochs", type=int, help="override total_epochs")
    ap.add_argument("--train-subset", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.synth:
        train_set, test_set = generate_synth(SynthSpec(classes=10, samples_per_class=32, seed=args.seed))
    elif args.data_dir:
        train_set, test_set = load_cifar(args.data_dir, 10, "train"), load_cifar(args.data_dir, 10, "test")
    else:
        ap.error(f"need --data-dir, {DATA_DIR_ENV}, or --synth")
    if args.train_subset:
        train_set = train_set.subset(args.train_subset)

    print("config,epochs,train_loss,train_acc,test_loss,test_acc")
    for name in SWEEP:
        cfg = load_run_config(CONFIGS / f"{name}.cfg")
        cfg.train = replace(cfg.train, seed=args.seed, total_epochs=args.epochs or cfg.train.total_epochs)
        _, rows = run_training(cfg, train_set, test_set, Path(args.out) / name)
        r = rows[-1]
        print(f"{name},{r.epoch + 1},{r.train_loss:.4f},{r.train_acc:.4f},{r.test_loss:.4f},{r.test_acc:.4f}",
              flush=True)


if __name__ == "__main__":
    main()
