"""The five training objectives and their weighted combination.

The local segmentation loss is the one with teeth: binary cross-entropy on the
edited attribute's channel, restricted to a dilated region around that
attribute, so its gradient is exactly zero everywhere else.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .config import LossWeights
from .data import attribute_channel
from .errors import LengthMismatch, NonFiniteTerm, ShapeMismatch

PROB_CLAMP = 1e-7
TERM_NAMES = ("adv", "sty", "ds", "cyc", "seg")


def adv_loss_d(real_logit: torch.Tensor, fake_logit: torch.Tensor) -> torch.Tensor:
    """Discriminator side of the adversarial loss (saturating minimax form).

    -[log sigma(real) + log(1 - sigma(fake))], batch-meaned per term.
    """
    return F.softplus(-real_logit).mean() + F.softplus(fake_logit).mean()


def adv_loss_g(fake_logit: torch.Tensor) -> torch.Tensor:
    """Generator side, non-saturating variant: -log sigma(fake)."""
    return F.softplus(-fake_logit).mean()


def style_loss(s_target: torch.Tensor, s_rec: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between the injected and re-extracted style codes."""
    if s_target.shape[-1] != s_rec.shape[-1]:
        raise LengthMismatch(f"style lengths {s_target.shape[-1]} vs {s_rec.shape[-1]}")
    return (s_target - s_rec).abs().mean()


def ds_loss(x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Diversity-sensitivity term: minus the mean L1 distance (minimized)."""
    if x1.shape != x2.shape:
        raise ShapeMismatch(f"{tuple(x1.shape)} vs {tuple(x2.shape)}")
    return -(x1 - x2).abs().mean()


def cyc_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    """Cycle reconstruction: mean absolute difference to the source."""
    if x.shape != x_rec.shape:
        raise ShapeMismatch(f"{tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def attribute_region(m: torch.Tensor, c, k: int) -> torch.Tensor:
    """Channel-c support of m dilated by a k-pixel square structuring element.

    Accepts C×H×W or N×C×H×W masks; returns a binary map of matching rank
    (H×W or N×H×W). c may be an attribute name, a channel index, or a
    per-sample index tensor for the batched case.
    """
    if k < 0:
        raise ValueError("dilation radius must be >= 0")
    batched = m.dim() == 4
    if isinstance(c, torch.Tensor):
        idx = c.view(-1, 1, 1, 1).expand(-1, 1, m.shape[-2], m.shape[-1])
        support = m.gather(1, idx)  # N×1×H×W
    else:
        ch = attribute_channel(c)
        support = m[..., ch:ch + 1, :, :] if batched else m[ch:ch + 1][None]
    if k > 0:
        region = F.max_pool2d(support, kernel_size=2 * k + 1, stride=1, padding=k)
    else:
        region = support
    region = (region > 0.5).to(m.dtype)
    return region[:, 0] if batched or isinstance(c, torch.Tensor) else region[0, 0]


def local_seg_loss(m: torch.Tensor, s_pred: torch.Tensor, c, k: int) -> torch.Tensor:
    """Region-restricted BCE between the target mask and the parser's prediction.

    Only pixels inside attribute_region(m, c, k) contribute; the sum is
    normalized by the region size so the weight means the same thing for eyes
    and mouths. Empty region -> 0.
    """
    if m.shape != s_pred.shape:
        raise ShapeMismatch(f"mask {tuple(m.shape)} vs prediction {tuple(s_pred.shape)}")
    batched = m.dim() == 4
    if not batched:
        m, s_pred = m[None], s_pred[None]
        c = torch.tensor([attribute_channel(c)], dtype=torch.long)
    elif not isinstance(c, torch.Tensor):
        c = torch.full((m.shape[0],), attribute_channel(c), dtype=torch.long)

    region = attribute_region(m, c, k)  # N×H×W
    idx = c.view(-1, 1, 1, 1).expand(-1, 1, m.shape[-2], m.shape[-1])
    target = m.gather(1, idx)[:, 0]
    prob = s_pred.gather(1, idx)[:, 0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(target * torch.log(prob) + (1.0 - target) * torch.log(1.0 - prob))
    sizes = region.sum(dim=(1, 2))
    per_sample = (region * bce).sum(dim=(1, 2)) / sizes.clamp_min(1.0)
    per_sample = torch.where(sizes > 0, per_sample, torch.zeros_like(per_sample))
    return per_sample.mean()


def total_loss(terms, weights: LossWeights):
    """Weighted sum of the five terms; raises NonFiniteTerm on NaN/inf.

    terms maps {adv, sty, ds, cyc, seg} to scalars (floats or 0-dim tensors);
    the return type follows the inputs so it can sit on an autograd path.
    """
    missing = [name for name in TERM_NAMES if name not in terms]
    if missing:
        raise KeyError(f"missing loss terms: {missing}")
    for name in TERM_NAMES:
        value = float(terms[name].detach() if isinstance(terms[name], torch.Tensor)
                      else terms[name])
        if not math.isfinite(value):
            raise NonFiniteTerm(name, value)
    return (weights.lambda_adv * terms["adv"]
            + weights.lambda_sty * terms["sty"]
            + weights.lambda_ds * terms["ds"]
            + weights.lambda_cyc * terms["cyc"]
            + weights.lambda_seg * terms["seg"])
