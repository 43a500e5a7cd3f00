"""Parameter counts for the shipped full-scale configurations."""

import argparse
from pathlib import Path

from swgridnet.config import load_run_config
from swgridnet.model import SwGridNetwork

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--unit-depth", type=int, nargs="+", default=[1, 2])
    args = ap.parse_args()
    print("config,dims,side,base_channels,unit_depth,parameters")
    for path in sorted(CONFIGS.glob("cifar*.cfg")):
        cfg = load_run_config(path).network
        for depth in args.unit_depth:
            # shapes only, no initialization needed for counting
            net = SwGridNetwork.create(type(cfg)(**{**cfg.__dict__, "unit_depth": depth}))
            print(f"{path.stem},{cfg.dims},{cfg.side},{cfg.base_channels},{depth},{net.num_parameters()}")


if __name__ == "__main__":
    main()
