#!/usr/bin/env python3
"""Tabulate the convolution decay constant c(D, M) over truncations.

Usage: python3 scripts/decay_constant_table.py [--dimension 3] [--truncations 4 6 8 12 16]
"""

import argparse

from nsgalerkin.decay import convolution_decay_constant


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dimension", type=int, default=3)
    ap.add_argument("--truncations", type=int, nargs="+", default=[4, 6, 8, 12, 16])
    args = ap.parse_args()
    print("M,c,argmax,c_over_M2,tail_bound")
    for m in args.truncations:
        rep = convolution_decay_constant(args.dimension, m)
        argmax = " ".join(map(str, rep.argmax))
        print(f"{m},{rep.c:.6g},{argmax},{rep.c / m ** 2:.4g},{rep.tail_bound:.4g}")


if __name__ == "__main__":
    main()
