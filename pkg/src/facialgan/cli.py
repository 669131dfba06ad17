"""Command-line entry points: train-seg, train, eval, serve, generate, make-toy-data."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import click

from .config import TrainConfig, load_train_config


@click.group()
def main():
    """Mask- and style-conditioned face synthesis pipeline."""


def _config_from_flags(config_file, **flags) -> TrainConfig:
    if config_file:
        return load_train_config(config_file, overrides=flags)
    base = TrainConfig().to_dict()
    base.update({k: v for k, v in flags.items() if v is not None})
    return TrainConfig.from_dict(base)


@main.command("train-seg")
@click.option("--data", "data_root", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--epochs", type=int, default=50, show_default=True)
@click.option("--batch", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=1e-2, show_default=True)
@click.option("--img-size", type=int, default=256, show_default=True)
@click.option("--base-channels", type=int, default=None)
@click.option("--max-channels", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def train_seg_cmd(data_root, out_path, epochs, batch, lr, img_size, base_channels,
                  max_channels, seed):
    """Stage 1: supervised segmenter training."""
    from .training import train_segmenter

    config = _config_from_flags(None, image_size=img_size, seg_epochs=epochs,
                                seg_batch_size=batch, lr_seg=lr, seed=seed,
                                base_channels=base_channels, max_channels=max_channels,
                                data_root=data_root)
    result = train_segmenter(config, data_root, out_path=out_path)
    click.echo(json.dumps({"checkpoint": str(result.checkpoint_path),
                           "best_val_accuracy": result.best_val_accuracy,
                           "best_epoch": result.best_epoch}))


@main.command("train")
@click.option("--data", "data_root", required=True, type=click.Path(exists=True))
@click.option("--seg-ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--iters", type=int, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--img-size", type=int, default=None)
@click.option("--base-channels", type=int, default=None)
@click.option("--max-channels", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--log-every", type=int, default=None)
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--resume", "resume_from", type=click.Path(exists=True), default=None)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
def train_cmd(data_root, seg_ckpt, out_dir, iters, batch, img_size, base_channels,
              max_channels, seed, log_every, checkpoint_every, resume_from, config_file):
    """Stage 2: adversarial training of G, F, E, D with the frozen segmenter."""
    from .training import train_facialgan

    config = _config_from_flags(config_file, data_root=data_root, total_iters=iters,
                                batch_size=batch, image_size=img_size,
                                base_channels=base_channels, max_channels=max_channels,
                                seed=seed, log_every=log_every,
                                checkpoint_every=checkpoint_every)
    result = train_facialgan(config, data_root, seg_ckpt, out_dir,
                             resume_from=resume_from,
                             log_fn=lambda line: click.echo(json.dumps(line)))
    click.echo(json.dumps({"final_checkpoint": str(result.final_checkpoint),
                           "weights_checkpoint": str(result.weights_checkpoint)}))


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_root", required=True, type=click.Path(exists=True))
@click.option("--metrics", default="fid,lpips,seg-acc", show_default=True,
              help="comma list of fid,lpips,seg-acc,attr,identity")
@click.option("--mode", type=click.Choice(["latent", "reference"]), default="latent",
              show_default=True)
@click.option("--n-styles", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval_cmd(ckpt, data_root, metrics, mode, n_styles, seed, out_path):
    """Score a checkpoint on the configured metrics."""
    from .evaluation import run_evaluation

    report = run_evaluation(ckpt, data_root, metrics=metrics.split(","), mode=mode,
                            seed=seed, n_styles=n_styles, out_path=out_path)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command("serve")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_root", type=click.Path(exists=True), default=None,
              help="dataset dir whose test split becomes the sample catalog")
@click.option("--frontend", "frontend_dir", type=click.Path(), default=None,
              help="static assets dir for the editor UI")
@click.option("--single-flight", is_flag=True, default=False,
              help="serialize requests for deterministic benchmarking")
def serve_cmd(ckpt, port, host, data_root, frontend_dir, single_flight):
    """Serve the HTTP/JSON inference API."""
    from .service import serve

    serve(ckpt, port=port, host=host, data_root=data_root,
          single_flight=single_flight, frontend_dir=frontend_dir)


@main.command("generate")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["latent", "reference"]), default="latent",
              show_default=True)
@click.option("--reference", type=click.Path(exists=True), default=None)
@click.option("--mask", type=click.Path(exists=True), default=None)
@click.option("--domain", type=click.Choice(["female", "male"]), default="female",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--out-mask", type=click.Path(), default=None,
              help="also write the parse of the output as an indexed PNG")
def generate_cmd(ckpt, source, mode, reference, mask, domain, seed, out_path, out_mask):
    """Offline mirror of POST /api/synthesize."""
    from .data import encode_image, encode_index_grid, onehot_to_grid, tensor_to_image
    from .service import ModelService, SynthesisRequest

    def b64_file(path):
        return base64.b64encode(Path(path).read_bytes()).decode("ascii")

    service = ModelService.from_path(ckpt)
    req = SynthesisRequest(
        source=b64_file(source), mode=mode,
        reference=b64_file(reference) if reference else None,
        mask=b64_file(mask) if mask else None,
        domain=domain, seed=seed,
    )
    result = service.synthesize(req)
    Path(out_path).write_bytes(encode_image(tensor_to_image(result.image)))
    if out_mask:
        Path(out_mask).write_bytes(encode_index_grid(onehot_to_grid(result.predicted_mask)))
    click.echo(json.dumps({"out": str(out_path)}))


@main.command("make-toy-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n", type=int, default=16, show_default=True)
@click.option("--img-size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def make_toy_data_cmd(out_dir, n, img_size, seed):
    """Write a synthetic-face dataset for desk-scale runs."""
    from .toy import make_toy_dataset

    root = make_toy_dataset(out_dir, n=n, image_size=img_size, seed=seed)
    click.echo(json.dumps({"root": str(root), "n": n}))


if __name__ == "__main__":
    main()
