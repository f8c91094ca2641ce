"""Conditional stochastic generator with explorable per-layer latent subspaces.

A label-conditioned mapper turns (label, base noise) into a conditioning
vector.  The hierarchical generator upsamples from 4x4 to the target
resolution; each up-block input receives a learned linear-subspace
perturbation U diag(l) z_i + mu whose basis directions are the explorable
latent dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from stagegan.rng import make_generator


@dataclass(frozen=True)
class LatentLayout:
    """Shapes of the stochastic inputs: L per-layer codes plus base noise."""

    layer_dims: tuple[int, ...] = (6, 6, 6, 6, 6, 6)
    base_dim: int = 512

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims)


@dataclass
class LatentCode:
    """Per-layer codes z_i of shape (B, q_i) and base noise of shape (B, d_b)."""

    layer_codes: list[torch.Tensor]
    base_noise: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.base_noise.shape[0]

    def clone(self) -> "LatentCode":
        return LatentCode([z.clone() for z in self.layer_codes], self.base_noise.clone())

    def layout(self) -> LatentLayout:
        return LatentLayout(tuple(z.shape[1] for z in self.layer_codes),
                            self.base_noise.shape[1])

    def to_lists(self) -> dict:
        return {
            "layer_codes": [z.tolist() for z in self.layer_codes],
            "base_noise": self.base_noise.tolist(),
        }

    @classmethod
    def from_lists(cls, d: dict) -> "LatentCode":
        return cls([torch.tensor(z, dtype=torch.float32) for z in d["layer_codes"]],
                   torch.tensor(d["base_noise"], dtype=torch.float32))


def sample_latent(layout: LatentLayout, batch: int, rng: torch.Generator) -> LatentCode:
    """Draw all latent components i.i.d. standard normal."""
    codes = [torch.randn(batch, q, generator=rng) for q in layout.layer_dims]
    noise = torch.randn(batch, layout.base_dim, generator=rng)
    return LatentCode(codes, noise)


class SubspaceLayer(nn.Module):
    """Linear subspace injection: z -> U diag(l) z + mu, reshaped to (C, H, W)."""

    def __init__(self, feature_shape: tuple[int, int, int], q: int,
                 init_rng: torch.Generator | None = None):
        super().__init__()
        self.feature_shape = feature_shape
        d = feature_shape[0] * feature_shape[1] * feature_shape[2]
        u = torch.empty(d, q)
        nn.init.orthogonal_(u, generator=init_rng)
        self.U = nn.Parameter(u)
        self.L_diag = nn.Parameter(torch.ones(q))
        self.mu = nn.Parameter(torch.zeros(d))

    @property
    def q(self) -> int:
        return self.U.shape[1]

    def inject(self, z: torch.Tensor) -> torch.Tensor:
        """Flat perturbation (B, d) for codes z of shape (B, q)."""
        return (z * self.L_diag) @ self.U.T + self.mu

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        out = self.inject(z)
        return out.view(z.shape[0], *self.feature_shape)


def orthogonality_penalty(u: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius distance of U^T U from the identity."""
    q = u.shape[1]
    gram = u.T @ u
    eye = torch.eye(q, dtype=u.dtype, device=u.device)
    return ((gram - eye) ** 2).sum()


class LatentMapper(nn.Module):
    """(label, base noise) -> conditioning vector.

    The label enters through an embedding table; for multilabel conditioning
    the embedding is the sum of active attribute embeddings.  The map is
    deterministic — all stochasticity comes from the latent code.
    """

    def __init__(self, num_classes: int, label_kind: str, base_dim: int,
                 d_y: int = 128, d_g: int = 512, hidden: tuple[int, ...] = (512,)):
        super().__init__()
        if label_kind not in ("categorical", "multilabel"):
            raise ValueError(f"unknown label_kind {label_kind!r}")
        self.num_classes = num_classes
        self.label_kind = label_kind
        self.label_embed = nn.Linear(num_classes, d_y, bias=False)
        dims = [d_y + base_dim, *hidden, d_g]
        layers: list[nn.Module] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            layers.append(nn.Linear(a, b))
            if i < len(dims) - 2:
                layers.append(nn.ReLU(inplace=True))
        self.net = nn.Sequential(*layers)

    def label_vector(self, y: torch.Tensor) -> torch.Tensor:
        if self.label_kind == "categorical":
            if y.ndim != 1:
                raise ValueError(f"categorical labels must be (B,), got {tuple(y.shape)}")
            if int(y.min()) < 0 or int(y.max()) >= self.num_classes:
                raise ValueError(f"label index out of range [0, {self.num_classes})")
            return F.one_hot(y.long(), self.num_classes).float()
        if y.ndim != 2 or y.shape[1] != self.num_classes:
            raise ValueError(f"multilabel labels must be (B, {self.num_classes})")
        return y.float()

    def forward(self, y: torch.Tensor, base_noise: torch.Tensor) -> torch.Tensor:
        emb = self.label_embed(self.label_vector(y))
        return self.net(torch.cat([emb, base_noise], dim=1))


def map_latent(y: torch.Tensor, z: LatentCode, mapper: LatentMapper) -> torch.Tensor:
    """Conditioning vector for (y, z); layer codes pass through untouched."""
    mapper.eval()
    with torch.no_grad():
        return mapper(y, z.base_noise)


class UpBlock(nn.Module):
    """Subspace injection at the block input, then 2x upsample + conv."""

    def __init__(self, in_ch: int, out_ch: int, resolution: int, q: int,
                 init_rng: torch.Generator | None = None):
        super().__init__()
        self.subspace = SubspaceLayer((in_ch, resolution, resolution), q, init_rng)
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)

    def forward(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        h = h + self.subspace(z)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        return F.relu(self.bn(self.conv(h)))


@dataclass(frozen=True)
class GeneratorConfig:
    image_size: int = 32
    channels: int = 3
    base_channels: int = 16
    layer_dims: tuple[int, ...] | None = None  # default: 6 per layer
    base_dim: int = 512
    d_g: int = 512
    d_y: int = 128
    mapper_hidden: tuple[int, ...] = (512,)

    @property
    def num_layers(self) -> int:
        return int(math.log2(self.image_size)) - 2

    def layout(self) -> LatentLayout:
        dims = self.layer_dims if self.layer_dims is not None else (6,) * self.num_layers
        if len(dims) != self.num_layers:
            raise ValueError(f"need {self.num_layers} layer dims for size "
                             f"{self.image_size}, got {len(dims)}")
        return LatentLayout(tuple(dims), self.base_dim)


class Generator(nn.Module):
    """Hierarchical conv generator from the conditioning vector, tanh output."""

    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        layout = cfg.layout()
        n = layout.num_layers
        init_rng = make_generator(seed, 0x5B5)
        # channel schedule: widest at 4x4, halving upward, floor at base_channels
        widths = [max(cfg.base_channels, cfg.base_channels * 2 ** (n - i)) for i in range(n + 1)]
        widths = [min(w, cfg.base_channels * 8) for w in widths]
        self.stem = nn.Linear(cfg.d_g, widths[0] * 4 * 4)
        self.blocks = nn.ModuleList()
        res = 4
        for i in range(n):
            self.blocks.append(UpBlock(widths[i], widths[i + 1], res,
                                       layout.layer_dims[i], init_rng))
            res *= 2
        self.to_image = nn.Conv2d(widths[-1], cfg.channels, 3, padding=1)

    def forward(self, eps_g: torch.Tensor, layer_codes: list[torch.Tensor]) -> torch.Tensor:
        if len(layer_codes) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} layer codes, got {len(layer_codes)}")
        h = self.stem(eps_g).view(eps_g.shape[0], -1, 4, 4)
        for block, z in zip(self.blocks, layer_codes):
            h = block(h, z)
        return torch.tanh(self.to_image(h))

    def subspace_parameters(self) -> list[SubspaceLayer]:
        return [b.subspace for b in self.blocks]

    def orthogonality_penalties(self) -> torch.Tensor:
        total = self.blocks[0].subspace.U.new_zeros(())
        for sub in self.subspace_parameters():
            total = total + orthogonality_penalty(sub.U)
        return total


def generate(y: torch.Tensor, z: LatentCode, mapper: LatentMapper,
             generator: Generator) -> torch.Tensor:
    """Images in [-1, 1] for (y, z); pure function of inputs and parameters."""
    mapper.eval()
    generator.eval()
    with torch.no_grad():
        eps_g = mapper(y, z.base_noise)
        return generator(eps_g, z.layer_codes)


def traverse(y: torch.Tensor, z: LatentCode, layer: int, dim: int,
             values: list[float], mapper: LatentMapper,
             generator: Generator) -> list[torch.Tensor]:
    """Sweep one explorable coordinate over `values`, all else frozen."""
    if not 0 <= layer < len(z.layer_codes):
        raise IndexError(f"layer {layer} out of range [0, {len(z.layer_codes)})")
    if not 0 <= dim < z.layer_codes[layer].shape[1]:
        raise IndexError(f"dim {dim} out of range [0, {z.layer_codes[layer].shape[1]})")
    frames = []
    for v in values:
        zz = z.clone()
        zz.layer_codes[layer][:, dim] = float(v)
        frames.append(generate(y, zz, mapper, generator))
    return frames


def init_gan_weights(module: nn.Module, seed: int) -> None:
    """DCGAN-style N(0, 0.02) init for conv/linear weights, except subspace
    layers which keep their orthogonal init."""
    g = make_generator(seed, 0x6A1)
    for m in module.modules():
        if isinstance(m, SubspaceLayer):
            continue
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.normal_(1.0, 0.02, generator=g)
                m.bias.zero_()
