"""Stage 2: attribute classifier over frozen encoder embeddings.

Training minimizes cross-entropy between labels and predicted class
probabilities; the encoder is never updated here.  The frozen classifier later
serves as the oracle for the generator's classification regularization and for
attribute-control evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from stagegan.checkpoints import (CheckpointError, code_version, hash_state_dict,
                                  load_archive, save_archive)
from stagegan.data import DatasetHandle
from stagegan.encoder import EncoderBundle, TrainingDiverged, embed_dataset
from stagegan.rng import make_generator, mix_seed

logger = logging.getLogger(__name__)

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: tuple[int, ...] = (256,)
    label_kind: str = "categorical"
    num_classes: int = 3
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-5
    class_weighting: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.label_kind == "categorical" and self.num_classes < 2:
            raise ValueError("categorical classifier needs K >= 2")
        if self.label_kind == "multilabel" and self.num_classes < 1:
            raise ValueError("multilabel classifier needs K >= 1")
        if self.label_kind not in ("categorical", "multilabel"):
            raise ValueError(f"unknown label_kind {self.label_kind!r}")


class AttributeClassifier(nn.Module):
    """MLP from embedding space to K class/attribute logits."""

    def __init__(self, d_e: int, num_classes: int, hidden: tuple[int, ...] = (256,)):
        super().__init__()
        dims = [d_e, *hidden]
        layers: list[nn.Module] = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.ReLU(inplace=True)]
        self.trunk = nn.Sequential(*layers)
        self.out = nn.Linear(dims[-1], num_classes)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.out(self.trunk(e))

    def penultimate(self, e: torch.Tensor) -> torch.Tensor:
        """Last hidden activation — the evaluation feature space for FID."""
        return self.trunk(e)


def probabilities(logits: torch.Tensor, label_kind: str) -> torch.Tensor:
    if label_kind == "categorical":
        return torch.softmax(logits, dim=1)
    return torch.sigmoid(logits)


def classifier_loss(probs: torch.Tensor, y: torch.Tensor, label_kind: str,
                    weights: torch.Tensor | None = None) -> torch.Tensor:
    """Cross-entropy between predicted probabilities and labels.

    categorical: mean -log p[y]; multilabel: mean per-attribute Bernoulli
    cross-entropy.  Probabilities are clamped away from 0 before the log.
    """
    p = probs.clamp(_PROB_FLOOR, 1.0)
    if label_kind == "categorical":
        if y.ndim != 1:
            raise ValueError(f"categorical labels must be (B,), got {tuple(y.shape)}")
        nll = -torch.log(p[torch.arange(p.shape[0]), y])
        if weights is not None:
            nll = nll * weights[y]
        return nll.mean()
    if probs.shape != y.shape:
        raise ValueError(f"multilabel shapes disagree: {tuple(probs.shape)} vs {tuple(y.shape)}")
    q = (1.0 - probs).clamp(_PROB_FLOOR, 1.0)
    bce = -(y * torch.log(p) + (1.0 - y) * torch.log(q))
    if weights is not None:
        bce = bce * torch.where(y > 0.5, weights, torch.ones_like(bce))
    return bce.mean()


def accuracy(probs: torch.Tensor, y: torch.Tensor, label_kind: str) -> float:
    if label_kind == "categorical":
        return float((probs.argmax(dim=1) == y).float().mean())
    return float(((probs >= 0.5).float() == y).float().mean())


@dataclass
class ClassifierBundle:
    """Frozen stage-2 checkpoint loaded for inference."""

    model: AttributeClassifier
    config: ClassifierConfig
    d_e: int
    encoder_hash: str
    checkpoint_hash: str = ""
    attribute_names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def label_kind(self) -> str:
        return self.config.label_kind

    def classify(self, e: torch.Tensor) -> torch.Tensor:
        """Deterministic class probabilities, shape (B, K)."""
        if e.shape[-1] != self.d_e:
            raise ValueError(f"embedding dim {e.shape[-1]} != checkpoint d_e {self.d_e}")
        self.model.eval()
        with torch.no_grad():
            return probabilities(self.model(e), self.label_kind)

    def classify_grad(self, e: torch.Tensor) -> torch.Tensor:
        """Differentiable probabilities (graph kept to the embedding input)."""
        self.model.eval()
        return probabilities(self.model(e), self.label_kind)

    def features(self, e: torch.Tensor) -> torch.Tensor:
        self.model.eval()
        with torch.no_grad():
            return self.model.penultimate(e)

    def param_hash(self) -> str:
        return hash_state_dict(self.model.state_dict())


def _class_weights(labels: torch.Tensor, kind: str, k: int) -> torch.Tensor:
    if kind == "categorical":
        counts = torch.bincount(labels, minlength=k).float().clamp(min=1.0)
        w = labels.shape[0] / (k * counts)
    else:
        pos = labels.sum(dim=0).clamp(min=1.0)
        w = (labels.shape[0] - pos).clamp(min=1.0) / pos
    return w


def train_classifier(data: DatasetHandle, enc: EncoderBundle, cfg: ClassifierConfig,
                     out_path: str | Path) -> ClassifierBundle:
    """Fit the classifier on frozen embeddings; returns the loaded checkpoint.

    The encoder parameter hash is recorded so later stages can verify they run
    against the same stage-1 model.
    """
    if cfg.label_kind != data.label_kind:
        raise ValueError(f"config label_kind {cfg.label_kind!r} != dataset {data.label_kind!r}")
    if cfg.num_classes != data.num_classes:
        raise ValueError(f"config K={cfg.num_classes} != dataset K={data.num_classes}")

    enc_hash_before = enc.param_hash()
    train_emb, train_y = embed_dataset(data, enc, "train")
    val_emb, val_y = embed_dataset(data, enc, "val")

    torch.manual_seed(mix_seed(cfg.seed, 0xC1A))
    model = AttributeClassifier(enc.config.d_e, cfg.num_classes, cfg.hidden)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    weights = _class_weights(train_y, cfg.label_kind, cfg.num_classes) if cfg.class_weighting else None

    n = train_emb.shape[0]
    history: list[dict[str, float]] = []
    g = make_generator(cfg.seed, 0xC1A, 1)
    model.train()
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=g)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start:start + cfg.batch_size]
            probs = probabilities(model(train_emb[sel]), cfg.label_kind)
            loss = classifier_loss(probs, train_y[sel], cfg.label_kind, weights)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite classifier loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.item())
            count += 1
        model.eval()
        with torch.no_grad():
            val_probs = probabilities(model(val_emb), cfg.label_kind)
        val_acc = accuracy(val_probs, val_y, cfg.label_kind)
        model.train()
        history.append({"loss": total / max(count, 1), "val_accuracy": val_acc})
        logger.info("classifier epoch %d/%d: loss %.4f, val acc %.4f",
                    epoch + 1, cfg.epochs, history[-1]["loss"], val_acc)

    if enc.param_hash() != enc_hash_before:
        raise RuntimeError("encoder parameters changed during classifier training")

    save_classifier(out_path, model, cfg, enc.config.d_e, enc_hash_before,
                    data.attribute_names, history)
    return load_classifier(out_path, expect_encoder_hash=enc_hash_before)


def save_classifier(path: str | Path, model: AttributeClassifier, cfg: ClassifierConfig,
                    d_e: int, encoder_hash: str, attribute_names: list[str],
                    history: list[dict[str, float]]) -> None:
    from dataclasses import asdict
    meta = {
        "stage": "classifier",
        "K": cfg.num_classes,
        "label_kind": cfg.label_kind,
        "d_e": d_e,
        "encoder_hash": encoder_hash,
        "code_version": code_version(),
    }
    payload = {
        "model": model.state_dict(),
        "config": asdict(cfg),
        "attribute_names": attribute_names,
        "history": history,
    }
    save_archive(path, meta, payload)


def load_classifier(path: str | Path, *, expect_encoder_hash: str | None = None,
                    allow_encoder_mismatch: bool = False) -> ClassifierBundle:
    meta, payload = load_archive(path)
    if meta.get("stage") != "classifier":
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    if (expect_encoder_hash is not None and meta["encoder_hash"] != expect_encoder_hash
            and not allow_encoder_mismatch):
        raise CheckpointError(
            "classifier was trained against a different encoder checkpoint "
            f"({meta['encoder_hash'][:12]} != {expect_encoder_hash[:12]}); "
            "pass allow_encoder_mismatch to override")
    cfg_d = dict(payload["config"])
    cfg_d["hidden"] = tuple(cfg_d["hidden"])
    cfg = ClassifierConfig(**cfg_d)
    model = AttributeClassifier(meta["d_e"], cfg.num_classes, cfg.hidden)
    model.load_state_dict(payload["model"])
    model.eval()
    bundle = ClassifierBundle(model, cfg, meta["d_e"], meta["encoder_hash"],
                              attribute_names=list(payload.get("attribute_names", [])))
    bundle.checkpoint_hash = bundle.param_hash()
    return bundle
