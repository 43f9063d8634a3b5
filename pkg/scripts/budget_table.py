"""Print params / MACs / FLOPs for every preset next to the published budgets."""

import argparse

from mixfacenet.complexity import count_flops, count_macs, count_params
from mixfacenet.config import PRESETS, preset
from mixfacenet.network import Network

PUBLISHED = {"mixfacenet-s": (3.07, 451.7), "mixfacenet-xs": (1.04, 161.9), "mixfacenet-m": (3.95, 626.1)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--all", action="store_true", help="include shuffle twins and nano")
    args = ap.parse_args()
    names = PRESETS if args.all else tuple(PUBLISHED)
    print(f"{'preset':<22}{'params (M)':>12}{'MACs (M)':>11}{'FLOPs (M)':>11}{'published':>18}")
    for name in names:
        net = Network(preset(name))
        p, m, f = count_params(net), count_macs(net), count_flops(net)
        pub = PUBLISHED.get(name.removeprefix("shuffle"))
        ref = f"{pub[0]:.2f} / {pub[1]:.1f}" if pub else "-"
        print(f"{name:<22}{p / 1e6:>12.4f}{m / 1e6:>11.2f}{f / 1e6:>11.2f}{ref:>18}")


if __name__ == "__main__":
    main()
