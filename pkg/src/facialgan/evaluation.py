"""The four evaluation levels: distribution (FID/LPIPS), attribute, segmentation
and identity, with pluggable feature extractors and embedders so desk-scale and
full-scale runs share one code path.

Desk-scale defaults avoid third-party weights: FID features come from the
frozen stage-1 segmenter's bottleneck ("fid-seg"), LPIPS features from a
fixed-seed random conv stack ("lpips-rand"). Both names are recorded in
reports so numbers are never conflated with Inception-based scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, restore_networks
from .config import ATTRIBUTES
from .data import attribute_channel, build_index, load_sample
from .errors import (DegenerateLabels, DimMismatch, EmptyScope, NumericalError,
                     ShapeMismatch, TooFewSamples)
from .networks import Networks, Segmenter, _init_weights

EIG_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# distribution level

@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def fit_gaussian(features) -> GaussianStats:
    """Sample mean and unbiased covariance of an N×F feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewSamples(f"need an N×F matrix with N >= 2, got shape {x.shape}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return GaussianStats(mean=mean, cov=(cov + cov.T) / 2.0, n=x.shape[0])


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((cov + cov.T) / 2.0)
    if w.min() < -EIG_TOLERANCE:
        raise NumericalError(f"covariance eigenvalue {w.min():.3e} below -{EIG_TOLERANCE}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Fréchet distance between two Gaussians.

    The cross term uses tr((Σa Σb)^1/2) = tr((Σa^1/2 Σb Σa^1/2)^1/2), computed
    by symmetric eigendecomposition; slightly negative eigenvalues are clipped,
    clearly negative ones raise.
    """
    if a.mean.shape != b.mean.shape:
        raise DimMismatch(f"feature dims {a.mean.shape} vs {b.mean.shape}")
    sa = _psd_sqrt(a.cov)
    inner = sa @ b.cov @ sa
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if w.min() < -EIG_TOLERANCE:
        raise NumericalError(f"product eigenvalue {w.min():.3e} below -{EIG_TOLERANCE}")
    diff = a.mean - b.mean
    fd = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov)
               - 2.0 * np.sqrt(np.clip(w, 0.0, None)).sum())
    return max(fd, 0.0)


def lpips_distance(extractor, x: torch.Tensor, y: torch.Tensor) -> float:
    """Layered perceptual distance: squared diffs of channel-unit-normalized
    feature maps, averaged over space, summed over layers."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"{tuple(x.shape)} vs {tuple(y.shape)}")
    with torch.no_grad():
        feats_x = extractor.layer_features(x[None])
        feats_y = extractor.layer_features(y[None])
        total = 0.0
        for fx, fy in zip(feats_x, feats_y):
            nx = fx / torch.sqrt((fx ** 2).sum(dim=1, keepdim=True) + 1e-10)
            ny = fy / torch.sqrt((fy ** 2).sum(dim=1, keepdim=True) + 1e-10)
            total += ((nx - ny) ** 2).sum(dim=1).mean().item()
    return total


class RandomConvExtractor:
    """Fixed-seed random conv stack with three tap layers ("lpips-rand")."""

    name = "lpips-rand"
    version = "1"

    def __init__(self, seed: int = 0, widths=(16, 32, 64)):
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            layers = []
            in_ch = 3
            for w in widths:
                conv = torch.nn.Conv2d(in_ch, w, 3, stride=2, padding=1)
                _init_weights(conv)
                layers.append(conv)
                in_ch = w
        self.layers = layers
        for conv in self.layers:
            conv.requires_grad_(False)

    def layer_features(self, images: torch.Tensor) -> list:
        feats = []
        h = images
        for conv in self.layers:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        return feats


class SegmenterFeatureExtractor:
    """Pooled bottleneck activations of the frozen stage-1 segmenter ("fid-seg")."""

    name = "fid-seg"
    version = "1"

    def __init__(self, segmenter: Segmenter):
        self.segmenter = segmenter
        self.segmenter.requires_grad_(False)

    def extract(self, images: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return self.segmenter.bottleneck_features(images).numpy().astype(np.float64)


def extract_features(extractor, images, batch: int = 16) -> np.ndarray:
    chunks = [extractor.extract(images[i:i + batch]) for i in range(0, len(images), batch)]
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# generation protocol shared by the metrics

def _style_for(nets: Networks, rng: np.random.Generator, mode: str, references):
    if mode == "latent":
        z = torch.from_numpy(
            rng.standard_normal((1, nets.config.latent_dim), dtype=np.float32))
        domain = torch.tensor([int(rng.integers(0, 2))])
        return nets.mapping(z, domain)
    if mode == "reference":
        img, gender = references[int(rng.integers(0, len(references)))]
        return nets.style_encoder(img[None], torch.tensor([gender]))
    raise ValueError(f"mode must be latent or reference, got {mode!r}")


def _generate(nets: Networks, x: torch.Tensor, m: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    return nets.generator(x[None], m[None], s)[0]


def diversity_score(nets: Networks, sources, n_styles: int, mode: str, seed,
                    extractor, references=None) -> float:
    """Mean pairwise perceptual distance over n_styles outputs per source."""
    if n_styles < 2:
        raise ValueError("n_styles must be >= 2")
    rng = np.random.default_rng(seed)
    per_source = []
    with torch.no_grad():
        for x, m in sources:
            outs = [_generate(nets, x, m, _style_for(nets, rng, mode, references))
                    for _ in range(n_styles)]
            dists = [lpips_distance(extractor, outs[i], outs[j])
                     for i in range(n_styles) for j in range(i + 1, n_styles)]
            per_source.append(float(np.mean(dists)))
    return float(np.mean(per_source))


# ---------------------------------------------------------------------------
# segmentation level

def seg_pixel_accuracy(seg: Segmenter, generated: torch.Tensor,
                       target_mask: torch.Tensor, scope: str = "all") -> float:
    """Percentage of pixels where the parse of the generated image matches the
    conditioning mask, over all pixels or restricted to one attribute's support."""
    if generated.shape[-2:] != target_mask.shape[-2:]:
        raise ShapeMismatch(f"{tuple(generated.shape)} vs {tuple(target_mask.shape)}")
    with torch.no_grad():
        pred = seg(generated[None])[0].argmax(dim=0)
    target = target_mask.argmax(dim=0)
    if scope == "all":
        sel = torch.ones_like(target, dtype=torch.bool)
    else:
        sel = target_mask[attribute_channel(scope)] > 0.5
        if not sel.any():
            raise EmptyScope(f"attribute {scope!r} has empty support")
    return 100.0 * int((pred[sel] == target[sel]).sum()) / int(sel.sum())


# ---------------------------------------------------------------------------
# attribute level

class AttrClassifier(torch.nn.Module):
    """Small conv classifier standing in for the full-scale ResNet-18."""

    def __init__(self, depth: int = 3, width: int = 16):
        super().__init__()
        blocks = []
        in_ch = 3
        for i in range(depth):
            out_ch = width * (2 ** i)
            blocks += [torch.nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
                       torch.nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.features = torch.nn.Sequential(*blocks)
        self.head = torch.nn.Linear(in_ch, 1)

    def forward(self, x):
        return self.head(self.features(x).mean(dim=(2, 3))).squeeze(-1)


def train_attr_classifier(images: torch.Tensor, labels: torch.Tensor,
                          epochs: int = 30, lr: float = 1e-3, batch_size: int = 16,
                          depth: int = 3, width: int = 16, seed: int = 0) -> AttrClassifier:
    """Train a binary attribute classifier with cross-entropy."""
    labels = labels.float()
    if labels.min() == labels.max():
        raise DegenerateLabels("all labels identical; cannot train a binary classifier")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        clf = AttrClassifier(depth=depth, width=width)
        clf.apply(_init_weights)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    n = len(labels)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 29, epoch]).permutation(n)
        for start in range(0, n, batch_size):
            pick = order[start:start + batch_size]
            logits = clf(images[pick])
            loss = F.binary_cross_entropy_with_logits(logits, labels[pick])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return clf


def classify_attribute(clf: AttrClassifier, image: torch.Tensor) -> float:
    """P(attribute = 1) for a single image."""
    with torch.no_grad():
        return float(torch.sigmoid(clf(image[None])).item())


# ---------------------------------------------------------------------------
# identity level

class FlattenEmbedder:
    """Weight-free stand-in for a face verification embedder: a downsampled,
    L2-normalized pixel vector. Real deployments plug ArcFace-style models in
    through the same interface."""

    name = "flatten-16"
    version = "1"

    def __init__(self, size: int = 16, tau: float = 0.5):
        self.size = size
        self.tau = tau

    def embed(self, image: torch.Tensor) -> torch.Tensor:
        small = F.interpolate(image[None], size=(self.size, self.size),
                              mode="bilinear", align_corners=False)
        flat = small.reshape(-1)
        return flat / (flat.norm() + 1e-12)


def identity_accuracy(embedder, pairs) -> float:
    """Percentage of (source, generated) pairs whose embeddings pass the
    embedder's verification threshold."""
    hits = 0
    for source, generated in pairs:
        ea, eb = embedder.embed(source), embedder.embed(generated)
        if float(ea @ eb) >= embedder.tau:
            hits += 1
    return 100.0 * hits / len(pairs)


# ---------------------------------------------------------------------------
# report assembly (the `eval` CLI backend)

def run_evaluation(ckpt_path, data_root, metrics, mode: str = "latent",
                   seed: int = 0, n_styles: int = 10, out_path=None) -> dict:
    ckpt = load_checkpoint(ckpt_path)
    nets = restore_networks(ckpt).eval_()
    for net in nets.as_dict().values():
        net.requires_grad_(False)

    test_idx = build_index(data_root, "test")
    if len(test_idx.records) < 2:  # desk-scale toy sets: score against everything
        test_idx = build_index(data_root, "all")
    size = nets.config.image_size
    samples = [load_sample(rec, size) for rec in test_idx.records]
    genders = [rec.gender for rec in test_idx.records]
    sources = [(x, m) for x, m in samples]
    references = [(x, g) for (x, _), g in zip(samples, genders)]

    report = {}
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        generated = [_generate(nets, x, m, _style_for(nets, rng, mode, references))
                     for x, m in sources]

    if "fid" in metrics:
        extractor = SegmenterFeatureExtractor(nets.segmenter)
        real_stats = fit_gaussian(extract_features(extractor, torch.stack([x for x, _ in sources])))
        fake_stats = fit_gaussian(extract_features(extractor, torch.stack(generated)))
        report["fid"] = {"value": frechet_distance(real_stats, fake_stats),
                         "n": len(generated),
                         "extractor": f"{extractor.name}:{extractor.version}",
                         "seed": seed}
    if "lpips" in metrics:
        extractor = RandomConvExtractor(seed=0)
        value = diversity_score(nets, sources, n_styles=n_styles, mode=mode,
                                seed=[seed, 3], extractor=extractor, references=references)
        report["lpips"] = {"value": value, "n": len(sources) * n_styles,
                           "extractor": f"{extractor.name}:{extractor.version}",
                           "seed": seed, "n_styles": n_styles}
    if "seg-acc" in metrics:
        scores = {scope: [] for scope in ("all",) + ATTRIBUTES}
        for (x, m), gen in zip(sources, generated):
            for scope in scores:
                try:
                    scores[scope].append(seg_pixel_accuracy(nets.segmenter, gen, m, scope))
                except EmptyScope:
                    continue
        report["seg-acc"] = {"value": {k: (float(np.mean(v)) if v else None)
                                       for k, v in scores.items()},
                             "n": len(generated), "extractor": "stage1-segmenter",
                             "seed": seed}
    if "attr" in metrics:
        train_recs = build_index(data_root, "train").records
        imgs = torch.stack([load_sample(r, size)[0] for r in train_recs])
        labels = torch.tensor([r.gender for r in train_recs])
        clf = train_attr_classifier(imgs, labels, seed=seed)
        male = torch.tensor([1])
        hits = []
        for x, m in sources:
            z = torch.from_numpy(rng.standard_normal((1, nets.config.latent_dim),
                                                     dtype=np.float32))
            out = _generate(nets, x, m, nets.mapping(z, male))
            hits.append(classify_attribute(clf, out) > 0.5)
        report["attr"] = {"value": 100.0 * float(np.mean(hits)), "n": len(hits),
                          "extractor": "conv-attr-classifier:male", "seed": seed}
    if "identity" in metrics:
        embedder = FlattenEmbedder()
        value = identity_accuracy(embedder, list(zip([x for x, _ in sources], generated)))
        report["identity"] = {"value": value, "n": len(generated),
                              "extractor": f"{embedder.name}:{embedder.version}",
                              "seed": seed, "tau": embedder.tau}

    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
