#!/usr/bin/env python3
"""Write a synthetic-face dataset (images/, masks/, attributes.csv)."""

import argparse

from facialgan.toy import make_toy_dataset


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--n", type=int, default=16)
    parser.add_argument("--img-size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    root = make_toy_dataset(args.out, n=args.n, image_size=args.img_size, seed=args.seed)
    print(root)


if __name__ == "__main__":
    main()
