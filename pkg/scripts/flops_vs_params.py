"""CSV of FLOPs and params per preset and input size, for plotting elsewhere."""

import argparse
import csv
import sys
from dataclasses import replace

from mixfacenet.complexity import count_flops, count_macs, count_params
from mixfacenet.config import PRESETS, ConfigError, preset
from mixfacenet.network import Network


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[112])
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args()
    f = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["preset", "input", "params", "macs", "flops"])
    for name in PRESETS:
        for s in args.sizes:
            try:
                net = Network(replace(preset(name), input_size=(s, s)))
            except ConfigError as e:
                print(f"skip: {e}", file=sys.stderr)
                continue
            w.writerow([name, f"{s}x{s}", count_params(net), count_macs(net), count_flops(net)])
    if args.out:
        f.close()


if __name__ == "__main__":
    main()
