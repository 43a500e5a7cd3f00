"""Print the per-depth path counts for the three equal-size grids side by side."""

import argparse

from swgridnet.topology import GridSpec, enumerate_paths

GRIDS = [(1, 16), (2, 4), (4, 2)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grids", default=",".join(f"{n}x{l}" for n, l in GRIDS),
                    help="comma-separated NxL list, e.g. 1x16,2x4")
    args = ap.parse_args()
    grids = [tuple(map(int, g.split("x"))) for g in args.grids.split(",")]
    hists = [enumerate_paths(GridSpec(n, l)) for n, l in grids]
    depth = max(h.max_depth for h in hists)
    print("depth," + ",".join(f"N={n} L={l}" for n, l in grids))
    for d in range(1, depth + 1):
        print(f"{d}," + ",".join(str(h.counts.get(d, 0)) for h in hists))
    print("total," + ",".join(str(h.total) for h in hists))


if __name__ == "__main__":
    main()
