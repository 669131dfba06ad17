#!/usr/bin/env python3
"""End-to-end desk-scale run: toy data -> segmenter -> adversarial training -> report.

Usage: python3 scripts/run_smoke_training.py [--workdir DIR] [--iters N]
"""

import argparse
import json
import time
from pathlib import Path

from facialgan.config import TrainConfig
from facialgan.evaluation import run_evaluation
from facialgan.toy import make_toy_dataset
from facialgan.training import train_facialgan, train_segmenter


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--workdir", default="/tmp/facialgan_smoke")
    parser.add_argument("--n", type=int, default=18)
    parser.add_argument("--img-size", type=int, default=64)
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--seg-epochs", type=int, default=200)
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--base-channels", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    root = make_toy_dataset(work / "toyset", n=args.n, image_size=args.img_size,
                            seed=args.seed)
    config = TrainConfig(
        image_size=args.img_size, batch_size=args.batch, total_iters=args.iters,
        base_channels=args.base_channels, max_channels=8 * args.base_channels,
        seg_epochs=args.seg_epochs, seed=args.seed, log_every=50,
        checkpoint_every=max(500, args.iters // 4), data_root=str(root), threads=2,
    )

    t0 = time.time()
    seg = train_segmenter(config, root, out_path=work / "seg.ckpt")
    print(f"stage 1 done: best val acc {seg.best_val_accuracy:.4f} "
          f"({(time.time() - t0) / 60:.1f} min)")

    t1 = time.time()
    result = train_facialgan(config, root, work / "seg.ckpt", work / "run",
                             log_fn=lambda line: print(json.dumps(line)))
    print(f"stage 2 done in {(time.time() - t1) / 60:.1f} min; "
          f"weights at {result.weights_checkpoint}")

    report = run_evaluation(result.weights_checkpoint, root,
                            metrics=["fid", "lpips", "seg-acc", "attr", "identity"],
                            mode="latent", seed=args.seed, n_styles=4,
                            out_path=work / "report.json")
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
