"""The five networks: generator G, mapping F, style encoder E, segmenter S, discriminator D.

All forwards are pure functions of (parameters, inputs): no dropout, no running
statistics. Domain-conditioned networks (F, E, D) share a trunk and keep one
output head per domain, selected by the domain label.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import ShapeMismatch

NORM_EPS = 1e-5


def adain(features: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
          eps: float = NORM_EPS) -> torch.Tensor:
    """Adaptive instance normalization over spatial dims.

    features: N×ch×h×w; gamma, beta: N×ch. Per sample and channel the output is
    gamma * (features - mean) / sqrt(var + eps) + beta.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = features.mean(dim=(2, 3), keepdim=True)
    var = features.var(dim=(2, 3), unbiased=False, keepdim=True)
    normed = (features - mean) / torch.sqrt(var + eps)
    return gamma[:, :, None, None] * normed + beta[:, :, None, None]


class AdainLayer(nn.Module):
    """Maps a style code to per-channel (gamma, beta) and applies adain."""

    def __init__(self, style_dim, channels):
        super().__init__()
        self.affine = nn.Linear(style_dim, 2 * channels)

    def forward(self, x, s):
        gamma_offset, beta = self.affine(s).chunk(2, dim=1)
        return adain(x, 1.0 + gamma_offset, beta)


def _lrelu(x):
    return F.leaky_relu(x, 0.2)


def _channel_plan(config: ModelConfig) -> list:
    """Channel width per resolution level, from full res down to the bottleneck."""
    return [min(config.base_channels * (2 ** i), config.max_channels)
            for i in range(config.num_stages + 1)]


class ResBlockIN(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.norm1 = nn.InstanceNorm2d(channels, eps=NORM_EPS, affine=False)
        self.norm2 = nn.InstanceNorm2d(channels, eps=NORM_EPS, affine=False)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = self.conv1(_lrelu(self.norm1(x)))
        h = self.conv2(_lrelu(self.norm2(h)))
        return x + h


class ResBlockAdain(nn.Module):
    def __init__(self, channels, style_dim):
        super().__init__()
        self.adain1 = AdainLayer(style_dim, channels)
        self.adain2 = AdainLayer(style_dim, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x, s):
        h = self.conv1(_lrelu(self.adain1(x, s)))
        h = self.conv2(_lrelu(self.adain2(h, s)))
        return x + h


class Generator(nn.Module):
    """Encoder-decoder translator; consumes [masked image ‖ mask], styles the decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        ch = _channel_plan(config)
        self.stem = nn.Conv2d(3 + config.num_classes, ch[0], 3, padding=1)
        self.enc = nn.ModuleList()
        for i in range(config.num_stages):
            self.enc.append(nn.Sequential(
                nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1),
                nn.InstanceNorm2d(ch[i + 1], eps=NORM_EPS, affine=False),
                nn.LeakyReLU(0.2),
            ))
        self.mid_in = nn.ModuleList([ResBlockIN(ch[-1]) for _ in range(2)])
        self.mid_adain = nn.ModuleList([ResBlockAdain(ch[-1], config.style_dim) for _ in range(2)])
        self.dec_conv = nn.ModuleList()
        self.dec_adain = nn.ModuleList()
        for i in reversed(range(config.num_stages)):
            self.dec_conv.append(nn.Conv2d(ch[i + 1], ch[i], 3, padding=1))
            self.dec_adain.append(AdainLayer(config.style_dim, ch[i]))
        self.to_rgb = nn.Conv2d(ch[0], 3, 3, padding=1)

    def forward(self, x_masked, m, s):
        n = self.config
        if x_masked.shape[1] != 3 or m.shape[1] != n.num_classes:
            raise ShapeMismatch(f"expected 3+{n.num_classes} channels, got "
                                f"{x_masked.shape[1]}+{m.shape[1]}")
        if x_masked.shape[-2:] != m.shape[-2:]:
            raise ShapeMismatch(f"image {tuple(x_masked.shape)} vs mask {tuple(m.shape)}")
        if x_masked.shape[-1] != n.image_size:
            raise ShapeMismatch(f"expected size {n.image_size}, got {x_masked.shape[-1]}")
        if s.shape[-1] != n.style_dim:
            raise ShapeMismatch(f"style code length {s.shape[-1]} != {n.style_dim}")
        h = self.stem(torch.cat([x_masked, m], dim=1))
        for block in self.enc:
            h = block(h)
        for block in self.mid_in:
            h = block(h)
        for block in self.mid_adain:
            h = block(h, s)
        for conv, ada in zip(self.dec_conv, self.dec_adain):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = _lrelu(ada(conv(h), s))
        return torch.tanh(self.to_rgb(h))


def _select_head(stacked: torch.Tensor, domain) -> torch.Tensor:
    """Pick one row per sample from an N×domains×... stack."""
    domain = torch.as_tensor(domain, dtype=torch.long)
    if domain.dim() == 0:
        domain = domain.expand(stacked.shape[0])
    return stacked[torch.arange(stacked.shape[0]), domain]


class MappingNetwork(nn.Module):
    """Latent noise -> style code, one head per domain."""

    def __init__(self, config: ModelConfig, num_domains: int = 2, n_layers: int = 4):
        super().__init__()
        hidden = 4 * config.base_channels
        layers = [nn.Linear(config.latent_dim, hidden), nn.LeakyReLU(0.2)]
        for _ in range(n_layers - 1):
            layers += [nn.Linear(hidden, hidden), nn.LeakyReLU(0.2)]
        self.shared = nn.Sequential(*layers)
        self.heads = nn.ModuleList([nn.Linear(hidden, config.style_dim)
                                    for _ in range(num_domains)])

    def forward(self, z, domain):
        h = self.shared(z)
        return _select_head(torch.stack([head(h) for head in self.heads], dim=1), domain)


class _ConvTrunk(nn.Module):
    """Shared conv backbone of E and D: plain strided convs, no normalization."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        ch = _channel_plan(config)
        blocks = [nn.Conv2d(3, ch[0], 3, padding=1), nn.LeakyReLU(0.2)]
        for i in range(config.num_stages):
            blocks += [nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1),
                       nn.LeakyReLU(0.2)]
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = ch[-1]

    def forward(self, x):
        h = self.blocks(x)
        return h.mean(dim=(2, 3))


class StyleEncoder(nn.Module):
    """Reference image -> style code, one head per domain."""

    def __init__(self, config: ModelConfig, num_domains: int = 2):
        super().__init__()
        self.trunk = _ConvTrunk(config)
        width = self.trunk.out_channels
        self.shared = nn.Sequential(nn.Linear(width, width), nn.LeakyReLU(0.2))
        self.heads = nn.ModuleList([nn.Linear(width, config.style_dim)
                                    for _ in range(num_domains)])

    def forward(self, y, domain):
        h = self.shared(self.trunk(y))
        return _select_head(torch.stack([head(h) for head in self.heads], dim=1), domain)


class Discriminator(nn.Module):
    """Multi-task real/fake classifier: one scalar branch per domain."""

    def __init__(self, config: ModelConfig, num_domains: int = 2):
        super().__init__()
        self.trunk = _ConvTrunk(config)
        width = self.trunk.out_channels
        self.shared = nn.Sequential(nn.Linear(width, width), nn.LeakyReLU(0.2))
        self.heads = nn.ModuleList([nn.Linear(width, 1) for _ in range(num_domains)])

    def forward(self, x, domain):
        h = self.shared(self.trunk(x))
        logits = torch.stack([head(h) for head in self.heads], dim=1)
        return _select_head(logits, domain).squeeze(-1)


class Segmenter(nn.Module):
    """U-Net face parser: image -> per-pixel class probabilities."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        ch = _channel_plan(config)
        self.stem = nn.Sequential(nn.Conv2d(3, ch[0], 3, padding=1), nn.LeakyReLU(0.2))
        self.downs = nn.ModuleList()
        for i in range(config.num_stages):
            self.downs.append(nn.Sequential(
                nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1),
                nn.InstanceNorm2d(ch[i + 1], eps=NORM_EPS, affine=False),
                nn.LeakyReLU(0.2),
            ))
        self.bottleneck = nn.Sequential(
            nn.Conv2d(ch[-1], ch[-1], 3, padding=1),
            nn.InstanceNorm2d(ch[-1], eps=NORM_EPS, affine=False),
            nn.LeakyReLU(0.2),
        )
        self.ups = nn.ModuleList()
        for i in reversed(range(config.num_stages)):
            self.ups.append(nn.Sequential(
                nn.Conv2d(ch[i + 1] + ch[i], ch[i], 3, padding=1),
                nn.InstanceNorm2d(ch[i], eps=NORM_EPS, affine=False),
                nn.LeakyReLU(0.2),
            ))
        self.head = nn.Conv2d(ch[0], config.num_classes, 1)

    def _encode(self, x):
        if x.shape[1] != 3 or x.shape[-1] != self.config.image_size:
            raise ShapeMismatch(f"expected 3×{self.config.image_size}px input, "
                                f"got {tuple(x.shape)}")
        skips = []
        h = self.stem(x)
        for down in self.downs:
            skips.append(h)
            h = down(h)
        return self.bottleneck(h), skips

    def forward(self, x):
        h, skips = self._encode(x)
        for up, skip in zip(self.ups, reversed(skips)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = up(torch.cat([h, skip], dim=1))
        return torch.softmax(self.head(h), dim=1)

    def bottleneck_features(self, x):
        """Globally pooled bottleneck activations (the FID-seg embedding)."""
        h, _ = self._encode(x)
        return h.mean(dim=(2, 3))


def _init_weights(module):
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.kaiming_uniform_(module.weight, a=0.2, nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


@dataclass
class Networks:
    generator: Generator
    mapping: MappingNetwork
    style_encoder: StyleEncoder
    segmenter: Segmenter
    discriminator: Discriminator
    config: ModelConfig

    def as_dict(self) -> dict:
        return {"G": self.generator, "F": self.mapping, "E": self.style_encoder,
                "S": self.segmenter, "D": self.discriminator}

    def eval_(self):
        for net in self.as_dict().values():
            net.eval()
        return self


def build_networks(config: ModelConfig, seed: int = 0) -> Networks:
    """Construct all five networks with seeded He-uniform init and zero biases."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        nets = Networks(
            generator=Generator(config),
            mapping=MappingNetwork(config),
            style_encoder=StyleEncoder(config),
            segmenter=Segmenter(config),
            discriminator=Discriminator(config),
            config=config,
        )
        for net in nets.as_dict().values():
            net.apply(_init_weights)
    return nets
