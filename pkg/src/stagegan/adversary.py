"""Discriminators (global and patch) and the adversarial loss menu.

Score maps are raw pre-sigmoid values: (B, 1) for the global discriminator,
(B, 1, h', w') for the patch discriminator.  Patch maps are averaged over all
positions inside the losses.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

LOSS_KINDS = ("hinge", "non_saturating", "lsgan")
DISCRIMINATOR_ARCHS = ("global", "patch")


def _check_kind(kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def d_loss(real: torch.Tensor, fake: torch.Tensor, kind: str) -> torch.Tensor:
    """Discriminator loss; real scores are pushed up, fake scores down."""
    _check_kind(kind)
    if kind == "hinge":
        return F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean()
    if kind == "non_saturating":
        return F.softplus(-real).mean() + F.softplus(fake).mean()
    return 0.5 * ((real - 1.0) ** 2).mean() + 0.5 * (fake ** 2).mean()


def g_loss(fake: torch.Tensor, kind: str) -> torch.Tensor:
    """Generator-side loss on fake scores."""
    _check_kind(kind)
    if kind == "hinge":
        return -fake.mean()
    if kind == "non_saturating":
        return F.softplus(-fake).mean()
    return 0.5 * ((fake - 1.0) ** 2).mean()


def _conv_out(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


# (kernel, stride, padding) schedules; channel counts are filled in per width.
_PATCH_SCHEDULE = ((4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1))


def _global_schedule(image_size: int) -> tuple[tuple[int, int, int], ...]:
    n_down = int(math.log2(image_size)) - 2  # stride-2 convs down to 4x4
    return tuple([(4, 2, 1)] * n_down + [(4, 1, 0)])


def score_map_shape(arch: str, image_size: int) -> tuple[int, ...]:
    """Spatial score-map shape implied by the declared layer schedule
    (excluding the batch dimension)."""
    if arch == "global":
        return (1,)
    if arch != "patch":
        raise ValueError(f"unknown discriminator arch {arch!r}")
    n = image_size
    for k, s, p in _PATCH_SCHEDULE:
        n = _conv_out(n, k, s, p)
    return (1, n, n)


def _maybe_sn(module: nn.Module, enabled: bool) -> nn.Module:
    return nn.utils.spectral_norm(module) if enabled else module


class GlobalDiscriminator(nn.Module):
    """Strided conv stack to a single realism score per image."""

    def __init__(self, image_size: int, in_channels: int = 3, base_channels: int = 64,
                 num_classes: int | None = None, use_spectral_norm: bool = False):
        super().__init__()
        self.image_size = image_size
        self.num_classes = num_classes
        out_scores = num_classes or 1
        schedule = _global_schedule(image_size)
        layers: list[nn.Module] = []
        ch = in_channels
        width = base_channels
        for i, (k, s, p) in enumerate(schedule[:-1]):
            layers.append(_maybe_sn(nn.Conv2d(ch, width, k, s, p, bias=(i == 0)),
                                    use_spectral_norm))
            if i > 0:
                layers.append(nn.BatchNorm2d(width))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            ch = width
            width = min(width * 2, base_channels * 8)
        k, s, p = schedule[-1]
        layers.append(_maybe_sn(nn.Conv2d(ch, out_scores, k, s, p), use_spectral_norm))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.image_size:
            raise ValueError(f"expected {self.image_size}px input, got {x.shape[-1]}px")
        out = self.net(x)
        return out.view(x.shape[0], -1)  # (B, 1) or (B, K)


class PatchDiscriminator(nn.Module):
    """pix2pix-style stack scoring overlapping patches; output (B, 1, h', w')."""

    def __init__(self, image_size: int, in_channels: int = 3, base_channels: int = 64,
                 num_classes: int | None = None, use_spectral_norm: bool = False):
        super().__init__()
        self.image_size = image_size
        self.num_classes = num_classes
        out_scores = num_classes or 1
        layers: list[nn.Module] = []
        ch = in_channels
        width = base_channels
        for i, (k, s, p) in enumerate(_PATCH_SCHEDULE[:-1]):
            layers.append(_maybe_sn(nn.Conv2d(ch, width, k, s, p, bias=(i == 0)),
                                    use_spectral_norm))
            if i > 0:
                layers.append(nn.BatchNorm2d(width))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            ch = width
            width = min(width * 2, base_channels * 8)
        k, s, p = _PATCH_SCHEDULE[-1]
        layers.append(_maybe_sn(nn.Conv2d(ch, out_scores, k, s, p), use_spectral_norm))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.image_size:
            raise ValueError(f"expected {self.image_size}px input, got {x.shape[-1]}px")
        return self.net(x)  # (B, 1|K, h', w')


def make_discriminator(arch: str, image_size: int, in_channels: int = 3,
                       base_channels: int = 64, num_classes: int | None = None,
                       use_spectral_norm: bool = False) -> nn.Module:
    if arch == "global":
        return GlobalDiscriminator(image_size, in_channels, base_channels,
                                   num_classes, use_spectral_norm)
    if arch == "patch":
        return PatchDiscriminator(image_size, in_channels, base_channels,
                                  num_classes, use_spectral_norm)
    raise ValueError(f"unknown discriminator arch {arch!r}; expected one of {DISCRIMINATOR_ARCHS}")


def select_class_scores(scores: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-class discriminator heads: keep each sample's own-class score map."""
    if scores.ndim == 2:  # global (B, K)
        return scores.gather(1, y.view(-1, 1).long())
    b = scores.shape[0]  # patch (B, K, h', w')
    idx = y.view(b, 1, 1, 1).long().expand(b, 1, scores.shape[2], scores.shape[3])
    return scores.gather(1, idx)


def r1_penalty(d: nn.Module, real: torch.Tensor,
               y: torch.Tensor | None = None) -> torch.Tensor:
    """R1 gradient penalty on real samples (optional regularizer, off by default)."""
    real = real.detach().requires_grad_(True)
    scores = d(real)
    if y is not None and getattr(d, "num_classes", None):
        scores = select_class_scores(scores, y)
    grad, = torch.autograd.grad(scores.sum(), real, create_graph=True)
    return grad.pow(2).sum(dim=(1, 2, 3)).mean()
