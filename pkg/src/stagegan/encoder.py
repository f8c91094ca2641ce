"""Stage 1: contrastive image encoder trained with the NT-Xent objective.

The backbone maps images to embeddings; a small projection head maps
embeddings to the unit sphere where the contrastive loss operates.  Only the
backbone output is used downstream — the projection head is a training
artifact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from stagegan.checkpoints import (CheckpointError, code_version, hash_many,
                                  load_archive, save_archive)
from stagegan.data import AugmentationConfig, DatasetHandle
from stagegan.rng import mix_seed

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; training aborted."""


@dataclass(frozen=True)
class EncoderConfig:
    base_width: int = 32
    blocks_per_stage: int = 1
    d_e: int = 128
    d_p: int = 64
    temperature: float = 0.5
    batch_size: int = 256
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 2:
            raise ValueError("contrastive batches need at least 2 samples")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(x + h)


class ConvEncoder(nn.Module):
    """Small residual CNN: stem, stride-2 stages down to 4x4, GAP, linear head.

    Width doubles per stage (capped at 8x base) so the same recipe instantiates
    from 32x32 up to 256x256 inputs.
    """

    def __init__(self, image_size: int, in_channels: int = 3, base_width: int = 32,
                 blocks_per_stage: int = 1, d_e: int = 128):
        super().__init__()
        if image_size < 8 or image_size & (image_size - 1):
            raise ValueError(f"image_size must be a power of two >= 8, got {image_size}")
        self.image_size = image_size
        self.d_e = d_e
        n_stages = int(math.log2(image_size)) - 2  # downsample until 4x4

        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, base_width, 3, padding=1, bias=False),
            nn.BatchNorm2d(base_width),
            nn.ReLU(inplace=True),
        ]
        width = base_width
        for _ in range(n_stages):
            for _ in range(blocks_per_stage):
                layers.append(ResidualBlock(width))
            out_width = min(width * 2, base_width * 8)
            layers += [
                nn.Conv2d(width, out_width, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(out_width),
                nn.ReLU(inplace=True),
            ]
            width = out_width
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(width, d_e)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.image_size or x.shape[-2] != self.image_size:
            raise ValueError(f"expected {self.image_size}x{self.image_size} input, "
                             f"got {tuple(x.shape[-2:])}")
        h = self.features(x)
        h = h.mean(dim=(2, 3))
        return self.head(h)


class ProjectionHead(nn.Module):
    def __init__(self, d_e: int, d_p: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d_e, d_e), nn.ReLU(inplace=True),
                                 nn.Linear(d_e, d_p))

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.net(e)


def normalize_rows(x: torch.Tensor) -> torch.Tensor:
    """Project rows onto the unit sphere; zero rows are guarded, not fatal."""
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms < 1e-8).any()):
        logger.warning("near-zero-norm projection row encountered before normalization")
    return x / (norms + 1e-12)


def info_nce_loss(h_a: torch.Tensor, h_b: torch.Tensor, temperature: float) -> torch.Tensor:
    """NT-Xent over 2N anchors: each view must identify its partner among the
    other 2N-1 projections via temperature-scaled cosine similarity.

    Rows are re-normalized internally, so the value depends only on row
    directions.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if h_a.shape != h_b.shape or h_a.ndim != 2:
        raise ValueError(f"paired projections must share an (N, d) shape, "
                         f"got {tuple(h_a.shape)} vs {tuple(h_b.shape)}")
    n = h_a.shape[0]
    z = normalize_rows(torch.cat([h_a, h_b], dim=0))
    sim = z @ z.T / temperature
    eye = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    sim = sim.masked_fill(eye, float("-inf"))
    targets = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)]).to(z.device)
    return F.cross_entropy(sim, targets)


@dataclass
class EncoderBundle:
    """Frozen stage-1 checkpoint loaded for inference."""

    backbone: ConvEncoder
    projector: ProjectionHead
    config: EncoderConfig
    image_size: int
    checkpoint_hash: str

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Deterministic evaluation-mode embeddings, shape (B, d_e)."""
        self.backbone.eval()
        with torch.no_grad():
            return self.backbone(images)

    def encode_grad(self, images: torch.Tensor) -> torch.Tensor:
        """Evaluation-mode forward that keeps the graph to the *input* (the
        classification-regularization path differentiates through it)."""
        self.backbone.eval()
        return self.backbone(images)

    def project(self, e: torch.Tensor) -> torch.Tensor:
        self.projector.eval()
        with torch.no_grad():
            return normalize_rows(self.projector(e))

    def param_hash(self) -> str:
        return hash_many({"backbone": self.backbone.state_dict(),
                          "projector": self.projector.state_dict()})


def train_encoder(data: DatasetHandle, cfg: EncoderConfig,
                  out_path: str | Path) -> EncoderBundle:
    """Run the stage-1 contrastive loop and write the encoder checkpoint.

    The encoder never sees labels or later-stage parameters.
    """
    torch.manual_seed(mix_seed(cfg.seed, 0xE7C0))
    image_size = data.spec.image_size
    backbone = ConvEncoder(image_size, base_width=cfg.base_width,
                           blocks_per_stage=cfg.blocks_per_stage, d_e=cfg.d_e)
    projector = ProjectionHead(cfg.d_e, cfg.d_p)
    params = list(backbone.parameters()) + list(projector.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    steps_per_epoch = max(1, len(data.splits["train"]) // cfg.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(1, cfg.epochs * steps_per_epoch))

    history: list[float] = []
    backbone.train()
    projector.train()
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for view_a, view_b in data.iter_pair_batches(
                "train", cfg.batch_size, cfg.augment, seed=cfg.seed, epoch=epoch):
            h_a = projector(backbone(view_a))
            h_b = projector(backbone(view_b))
            loss = info_nce_loss(h_a, h_b, cfg.temperature)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite contrastive loss at epoch {epoch} (lr={sched.get_last_lr()})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += float(loss.item())
            count += 1
        mean = total / max(count, 1)
        history.append(mean)
        logger.info("encoder epoch %d/%d: loss %.4f", epoch + 1, cfg.epochs, mean)

    save_encoder(out_path, backbone, projector, cfg, image_size, history)
    return load_encoder(out_path)


def _config_to_dict(cfg: EncoderConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


def _config_from_dict(d: dict) -> EncoderConfig:
    d = dict(d)
    aug = d.pop("augment", None)
    if isinstance(aug, dict):
        aug = {k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()}
        d["augment"] = AugmentationConfig(**aug)
    return EncoderConfig(**d)


def save_encoder(path: str | Path, backbone: ConvEncoder, projector: ProjectionHead,
                 cfg: EncoderConfig, image_size: int, history: list[float]) -> None:
    meta = {
        "stage": "encoder",
        "d_e": cfg.d_e,
        "d_p": cfg.d_p,
        "temperature": cfg.temperature,
        "image_size": image_size,
        "seed": cfg.seed,
        "code_version": code_version(),
    }
    payload = {
        "backbone": backbone.state_dict(),
        "projector": projector.state_dict(),
        "config": _config_to_dict(cfg),
        "history": history,
    }
    save_archive(path, meta, payload)


def load_encoder(path: str | Path, *, expect_image_size: int | None = None) -> EncoderBundle:
    meta, payload = load_archive(path)
    if meta.get("stage") != "encoder":
        raise CheckpointError(f"{path} is not an encoder checkpoint")
    if expect_image_size is not None and meta["image_size"] != expect_image_size:
        raise CheckpointError(
            f"encoder checkpoint image size {meta['image_size']} does not match "
            f"pipeline image size {expect_image_size}")
    cfg = _config_from_dict(payload["config"])
    backbone = ConvEncoder(meta["image_size"], base_width=cfg.base_width,
                           blocks_per_stage=cfg.blocks_per_stage, d_e=cfg.d_e)
    backbone.load_state_dict(payload["backbone"])
    projector = ProjectionHead(cfg.d_e, cfg.d_p)
    projector.load_state_dict(payload["projector"])
    backbone.eval()
    projector.eval()
    bundle = EncoderBundle(backbone, projector, cfg, meta["image_size"], "")
    bundle.checkpoint_hash = bundle.param_hash()
    return bundle


def embed_dataset(data: DatasetHandle, enc: EncoderBundle, split: str,
                  batch_size: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
    """Frozen-encoder embeddings and labels for a whole split."""
    embs, labels = [], []
    for images, y in data.iter_batches(split, batch_size):
        embs.append(enc.encode(images))
        labels.append(y)
    return torch.cat(embs), torch.cat(labels)


def linear_probe_accuracy(train_emb: torch.Tensor, train_y: torch.Tensor,
                          val_emb: torch.Tensor, val_y: torch.Tensor,
                          seed: int = 0) -> float:
    """Accuracy of a logistic-regression probe on frozen embeddings."""
    from sklearn.linear_model import LogisticRegression
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit(train_emb.numpy(), train_y.numpy())
    return float(clf.score(val_emb.numpy(), val_y.numpy()))
