"""Two-stage training: supervised segmenter first, then adversarial training
of G, F, E, D against the frozen segmenter.

Every stochastic draw in stage 2 (batch picks, latent noise, target domains,
reference permutations) is a pure function of (seed, iteration), so a fixed
seed fixes the whole trajectory and resuming from a checkpoint replays the
uninterrupted run exactly.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import (DatasetIndex, SampleCache, TrainingBatch, build_index,
                   make_batch, mask_attributes_batch)
from .errors import DivergenceError, EmptySplit, IncompatibleConfig, NonFiniteTerm
from .networks import Networks, Segmenter, build_networks, _init_weights


def lambda_ds_schedule(iteration: int, total_iters: int, lambda_ds_init: float) -> float:
    """Linear decay of the diversity weight, reaching exactly zero at the end."""
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    return lambda_ds_init * (1.0 - iteration / total_iters)


def _apply_threads(config: TrainConfig):
    if config.threads > 0:
        torch.set_num_threads(config.threads)


# ---------------------------------------------------------------------------
# stage 1: segmenter

def _load_stack(index: DatasetIndex, cache: SampleCache, picks):
    pairs = [cache.get(index.records[i]) for i in picks]
    return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])


def _split_accuracy(seg: Segmenter, index: DatasetIndex, cache: SampleCache,
                    batch: int = 32) -> float:
    correct = total = 0
    with torch.no_grad():
        for start in range(0, len(index.records), batch):
            x, m = _load_stack(index, cache, range(start, min(start + batch, len(index.records))))
            pred = seg(x).argmax(dim=1)
            correct += (pred == m.argmax(dim=1)).sum().item()
            total += pred.numel()
    return correct / total


@dataclass
class SegTrainResult:
    segmenter: Segmenter
    best_val_accuracy: float
    best_epoch: int
    step_losses: list
    checkpoint_path: Path | None


def train_segmenter(config: TrainConfig, data_root, out_path=None,
                    split: str = "train", val_split: str = "val") -> SegTrainResult:
    """Stage 1: full-image cross-entropy training; keeps the best-val-accuracy weights."""
    _apply_threads(config)
    train_idx = build_index(data_root, split)
    if not train_idx.records:
        raise EmptySplit(f"split {split!r} is empty")
    try:
        val_idx = build_index(data_root, val_split)
    except ValueError:
        val_idx = DatasetIndex(records=[], split=val_split)
    if not val_idx.records:
        val_idx = train_idx  # tiny toy sets: validate on train

    cache = SampleCache(config.image_size)

    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        seg = Segmenter(config.model)
        seg.apply(_init_weights)
    opt = torch.optim.Adam(seg.parameters(), lr=config.lr_seg)  # stage 1 keeps default betas

    n = len(train_idx.records)
    step_losses = []
    best_acc, best_epoch = -1.0, -1
    best_state = copy.deepcopy(seg.state_dict())
    for epoch in range(config.seg_epochs):
        order = np.random.default_rng([config.seed, 17, epoch]).permutation(n)
        for start in range(0, n, config.seg_batch_size):
            x, m = _load_stack(train_idx, cache, order[start:start + config.seg_batch_size])
            probs = seg(x)
            loss = -(m * torch.log(probs.clamp_min(losses.PROB_CLAMP))).sum(dim=1).mean()
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"segmenter loss non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step_losses.append(loss.item())
        acc = _split_accuracy(seg, val_idx, cache)
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_state = copy.deepcopy(seg.state_dict())

    seg.load_state_dict(best_state)
    path = None
    if out_path is not None:
        path = save_checkpoint(
            out_path, {"S": seg}, kind="weights",
            metadata={
                "stage": "segmenter",
                "epochs": config.seg_epochs,
                "batch_size": config.seg_batch_size,
                "lr": config.lr_seg,
                "best_val_accuracy": best_acc,
                "best_epoch": best_epoch,
                "seed": config.seed,
            },
            model_config=config.model,
        )
    return SegTrainResult(segmenter=seg, best_val_accuracy=best_acc,
                          best_epoch=best_epoch, step_losses=step_losses,
                          checkpoint_path=path)


# ---------------------------------------------------------------------------
# stage 2: adversarial training

EMA_DECAY = 0.999


@dataclass
class TrainState:
    nets: Networks
    optimizers: dict
    iteration: int = 0
    ema_generator: dict | None = None  # shadow G weights when config.ema is on


def _ema_update(shadow: dict, generator, decay: float = EMA_DECAY):
    with torch.no_grad():
        for key, value in generator.state_dict().items():
            shadow[key].mul_(decay).add_(value, alpha=1.0 - decay)


@dataclass
class StepReport:
    iteration: int
    adv_d: float
    adv_g: float
    sty: float
    ds: float
    cyc: float
    seg: float
    lambda_ds: float

    def as_log_line(self) -> dict:
        return {"iter": self.iteration, "L_adv_d": self.adv_d, "L_adv_g": self.adv_g,
                "L_sty": self.sty, "L_ds": self.ds, "L_cyc": self.cyc,
                "L_seg": self.seg, "lambda_ds": self.lambda_ds}


def make_optimizers(nets: Networks, config: TrainConfig) -> dict:
    """Four Adam optimizers, one per trainable network; S stays frozen."""
    betas = (config.beta1, config.beta2)
    return {
        "G": torch.optim.Adam(nets.generator.parameters(), lr=config.lr_g, betas=betas),
        "F": torch.optim.Adam(nets.mapping.parameters(), lr=config.lr_f, betas=betas),
        "E": torch.optim.Adam(nets.style_encoder.parameters(), lr=config.lr_e, betas=betas),
        "D": torch.optim.Adam(nets.discriminator.parameters(), lr=config.lr_d, betas=betas),
    }


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    v = float(value.detach())
    if not math.isfinite(v):
        raise NonFiniteTerm(name, v)
    return value


def _zero_grads(nets: Networks):
    for net in nets.as_dict().values():
        net.zero_grad(set_to_none=True)


def _discriminator_update(state, opt_d, x, gender, fake, fake_domain, lam_adv):
    d = state.nets.discriminator
    loss = lam_adv * losses.adv_loss_d(d(x, gender), d(fake, fake_domain))
    _check_finite("adv_d", loss)
    _zero_grads(state.nets)
    loss.backward()
    opt_d.step()
    return loss.item()


def _generator_terms(state: TrainState, batch: TrainingBatch, config: TrainConfig,
                     s_a: torch.Tensor, s_b: torch.Tensor, target_domain: torch.Tensor,
                     k: int):
    """The shared five-term objective of a latent- or reference-guided pass."""
    nets = state.nets
    channels = batch.masked_channels
    fake_a = nets.generator(batch.x_masked, batch.m, s_a)
    fake_b = nets.generator(batch.x_masked, batch.m, s_b)
    terms = {
        "adv": losses.adv_loss_g(nets.discriminator(fake_a, target_domain)),
        "sty": losses.style_loss(s_a, nets.style_encoder(fake_a, target_domain)),
        "ds": losses.ds_loss(fake_a, fake_b),
    }
    s_org = nets.style_encoder(batch.x, batch.gender)
    fake_a_masked = mask_attributes_batch(fake_a, batch.m, channels)
    x_rec = nets.generator(fake_a_masked, batch.m, s_org)
    terms["cyc"] = losses.cyc_loss(batch.x, x_rec)
    terms["seg"] = losses.local_seg_loss(batch.m, nets.segmenter(fake_a), channels, k)
    return terms


def train_step(state: TrainState, batch: TrainingBatch, config: TrainConfig) -> StepReport:
    """One stage-2 iteration: two D updates, a G/F/E update, then a G/E update.

    state.iteration must already point at the current (1-based) step so the
    diversity weight hits exactly zero on the final iteration.
    """
    nets = state.nets
    opts = state.optimizers
    n = batch.x.shape[0]
    rng = np.random.default_rng([config.seed, 23, state.iteration])
    z1 = torch.from_numpy(rng.standard_normal((n, config.latent_dim), dtype=np.float32))
    z2 = torch.from_numpy(rng.standard_normal((n, config.latent_dim), dtype=np.float32))
    target_domain = torch.from_numpy(rng.integers(0, 2, size=n)).long()
    perm1 = torch.from_numpy(rng.permutation(n)).long()
    perm2 = torch.from_numpy(rng.permutation(n)).long()
    ref1, ref2 = batch.x[perm1], batch.x[perm2]
    ref_domain = batch.gender[perm1]

    lam_ds = lambda_ds_schedule(state.iteration, config.total_iters, config.lambda_ds_init)
    weights = dataclasses.replace(config.weights, lambda_ds=lam_ds)
    k = config.scaled_dilation_radius

    # (a) discriminator: sequential updates on a latent-guided then a
    # reference-guided fake, both detached from the generator graph
    with torch.no_grad():
        fake_lat = nets.generator(batch.x_masked, batch.m, nets.mapping(z1, target_domain))
    d_lat = _discriminator_update(state, opts["D"], batch.x, batch.gender,
                                  fake_lat, target_domain, config.weights.lambda_adv)
    d_ref = d_lat
    if config.dual_pass:
        with torch.no_grad():
            fake_ref = nets.generator(batch.x_masked, batch.m,
                                      nets.style_encoder(ref1, ref_domain))
        d_ref = _discriminator_update(state, opts["D"], batch.x, batch.gender,
                                      fake_ref, ref_domain, config.weights.lambda_adv)

    # (b) latent-guided pass updates G, F, E
    s1 = nets.mapping(z1, target_domain)
    s2 = nets.mapping(z2, target_domain)
    terms_lat = _generator_terms(state, batch, config, s1, s2, target_domain, k)
    g_loss = losses.total_loss(terms_lat, weights)
    _zero_grads(nets)
    g_loss.backward()
    for name in ("G", "F", "E"):
        opts[name].step()

    terms_ref = terms_lat
    if config.dual_pass:
        # (c) reference-guided pass updates G, E
        s_r1 = nets.style_encoder(ref1, ref_domain)
        s_r2 = nets.style_encoder(ref2, ref_domain)
        terms_ref = _generator_terms(state, batch, config, s_r1, s_r2, ref_domain, k)
        g_loss_ref = losses.total_loss(terms_ref, weights)
        _zero_grads(nets)
        g_loss_ref.backward()
        for name in ("G", "E"):
            opts[name].step()

    def avg(key):
        return (float(terms_lat[key].detach()) + float(terms_ref[key].detach())) / 2

    return StepReport(iteration=state.iteration, adv_d=(d_lat + d_ref) / 2,
                      adv_g=avg("adv"), sty=avg("sty"), ds=avg("ds"),
                      cyc=avg("cyc"), seg=avg("seg"), lambda_ds=lam_ds)


@dataclass
class TrainResult:
    logs: list
    final_checkpoint: Path
    weights_checkpoint: Path
    state: TrainState


def _resume_state(ckpt: LoadedCheckpoint, config: TrainConfig) -> TrainState:
    if ckpt.kind != "resume":
        raise IncompatibleConfig("resume requires a resume-kind checkpoint")
    if ckpt.model_config != config.model:
        raise IncompatibleConfig(f"checkpoint model {ckpt.model_config} != {config.model}")
    nets = build_networks(config.model)
    for name, net in nets.as_dict().items():
        net.load_state_dict(ckpt.net_states[name])
    _freeze_segmenter(nets.segmenter)
    optimizers = make_optimizers(nets, config)
    for name, opt in optimizers.items():
        opt.load_state_dict(ckpt.optimizer_states[name])
    ema = None
    if config.ema:
        if "G_ema" not in ckpt.net_states:
            raise IncompatibleConfig("ema is on but the checkpoint has no G_ema shadow")
        ema = {k: v.clone() for k, v in ckpt.net_states["G_ema"].items()}
    return TrainState(nets=nets, optimizers=optimizers, iteration=ckpt.iteration,
                      ema_generator=ema)


def _freeze_segmenter(seg: Segmenter):
    seg.requires_grad_(False)


def _save_state(path, state: TrainState, config: TrainConfig, kind: str,
                last_report: StepReport | None):
    metadata = {
        "iteration": state.iteration,
        "train_config": config.to_dict(),
        "d_update_order": "sequential latent,reference",
        "loss": dataclasses.asdict(last_report) if last_report else {},
    }
    networks = dict(state.nets.as_dict())
    if state.ema_generator is not None:
        if kind == "weights":
            networks["G"] = state.ema_generator  # serve the averaged generator
        else:
            networks["G_ema"] = state.ema_generator
    optimizers = state.optimizers if kind == "resume" else None
    return save_checkpoint(path, networks, kind=kind, metadata=metadata,
                           model_config=config.model, optimizers=optimizers)


def init_train_state(config: TrainConfig, seg_ckpt: str | Path | LoadedCheckpoint) -> TrainState:
    """Fresh stage-2 state: seeded nets with the stage-1 segmenter dropped in and frozen."""
    if not isinstance(seg_ckpt, LoadedCheckpoint):
        seg_ckpt = load_checkpoint(seg_ckpt)
    if seg_ckpt.model_config != config.model:
        raise IncompatibleConfig(f"segmenter model {seg_ckpt.model_config} != {config.model}")
    nets = build_networks(config.model, seed=config.seed)
    nets.segmenter.load_state_dict(seg_ckpt.net_states["S"])
    _freeze_segmenter(nets.segmenter)
    ema = None
    if config.ema:
        ema = {k: v.clone() for k, v in nets.generator.state_dict().items()}
    return TrainState(nets=nets, optimizers=make_optimizers(nets, config), iteration=0,
                      ema_generator=ema)


def train_facialgan(config: TrainConfig, data_root, seg_ckpt, out_dir,
                    resume_from=None, log_fn=None, stop_after=None) -> TrainResult:
    """Stage 2: run train_step for total_iters, periodically checkpointing.

    stop_after simulates an interruption: training halts at that iteration but
    the schedule and metadata still describe the full total_iters run.
    """
    _apply_threads(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = build_index(data_root, "train")
    cache = SampleCache(config.image_size)

    if resume_from is not None:
        state = _resume_state(load_checkpoint(resume_from), config)
    else:
        state = init_train_state(config, seg_ckpt)

    last_iter = config.total_iters if stop_after is None else min(stop_after,
                                                                  config.total_iters)
    logs = []
    log_path = out_dir / "train_log.jsonl"
    report = None
    with open(log_path, "a") as log_file:
        while state.iteration < last_iter:
            state.iteration += 1
            batch = make_batch(index, config.batch_size,
                               rng_seed=[config.seed, 11, state.iteration],
                               image_size=config.image_size, cache=cache)
            report = train_step(state, batch, config)
            if state.ema_generator is not None:
                _ema_update(state.ema_generator, state.nets.generator)
            if state.iteration % config.log_every == 0 or state.iteration == config.total_iters:
                line = report.as_log_line()
                logs.append(line)
                log_file.write(json.dumps(line) + "\n")
                if log_fn is not None:
                    log_fn(line)
            if state.iteration % config.checkpoint_every == 0 \
                    and state.iteration < last_iter:
                _save_state(out_dir / f"ckpt_{state.iteration:08d}.ckpt",
                            state, config, "resume", report)

    final = _save_state(out_dir / "ckpt_final.ckpt", state, config, "resume", report)
    weights = _save_state(out_dir / "weights_final.ckpt", state, config, "weights", report)
    return TrainResult(logs=logs, final_checkpoint=final,
                       weights_checkpoint=weights, state=state)
