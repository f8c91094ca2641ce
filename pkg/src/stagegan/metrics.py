"""Evaluation suite: FID, inception-style score, Chamfer distance over 3D
t-SNE of encoder features, and attribute control accuracy.

At desk scale the feature extractor for FID is the stage-2 classifier's last
hidden layer on frozen encoder embeddings, and the class posteriors for the
inception-style score come from the same classifier.  Values are therefore
internally comparable across runs of this codebase, not against scores from
an ImageNet Inception network.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import torch
from scipy.spatial.distance import cdist

from stagegan.classifier import ClassifierBundle
from stagegan.encoder import EncoderBundle
from stagegan.generator import Generator, LatentCode, LatentMapper, sample_latent
from stagegan.rng import make_generator

logger = logging.getLogger(__name__)

_COV_REG = 1e-6


@dataclass
class FeatureSet:
    """Feature matrix (N, d) plus a tag naming the extractor that produced it."""

    features: np.ndarray
    source: str = "classifier-features"

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be (N, d), got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")


def fid(real: FeatureSet, fake: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of the two feature sets.

    Covariances are regularized with +1e-6 I before the matrix square root;
    tiny negative totals from numerics are clamped to zero with a warning.
    """
    a, b = real.features, fake.features
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims disagree: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set for a covariance")
    mu_r, mu_f = a.mean(axis=0), b.mean(axis=0)
    cov_r = np.cov(a, rowvar=False) + _COV_REG * np.eye(a.shape[1])
    cov_f = np.cov(b, rowvar=False) + _COV_REG * np.eye(b.shape[1])
    covmean, _ = scipy.linalg.sqrtm(cov_r @ cov_f, disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    value = float(np.sum((mu_r - mu_f) ** 2)
                  + np.trace(cov_r) + np.trace(cov_f) - 2.0 * np.trace(covmean))
    if value < 0:
        if value < -1e-4:
            logger.warning("FID clamped to 0 from %g (numerical sqrtm error)", value)
        value = 0.0
    return value


def inception_score(probs: np.ndarray, splits: int = 10) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probs must be (N, K), got {probs.shape}")
    if splits < 1:
        raise ValueError("splits must be >= 1")
    row_sums = probs.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-5) or (probs < -1e-9).any():
        raise ValueError("inception score requires categorical rows summing to 1")
    n = probs.shape[0]
    scores = []
    for part in np.array_split(np.arange(n), splits):
        if len(part) == 0:
            continue
        p = probs[part]
        marginal = p.mean(axis=0)
        # 0 * log 0 = 0 convention; p > 0 implies marginal > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer: mean-of-min squared distance in both directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"point sets must be (N, d)/(M, d), got {a.shape} vs {b.shape}")
    d2 = cdist(a, b, metric="sqeuclidean")
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


@dataclass
class ChamferResult:
    value: float
    kl_divergence: float
    converged: bool


def chamfer_embedding_distance(real_images: torch.Tensor, fake_images: torch.Tensor,
                               enc: EncoderBundle, *, perplexity: float = 30.0,
                               max_iter: int = 1000, seed: int = 0,
                               batch_size: int = 256) -> ChamferResult:
    """Encoder features -> joint 3D t-SNE of both sets -> symmetric Chamfer.

    The two sets are embedded jointly; embedding them separately would make
    the distances meaningless.
    """
    n_r, n_f = real_images.shape[0], fake_images.shape[0]
    if min(n_r, n_f) < 10:
        raise ValueError("need at least 10 samples per set")
    if n_r != n_f:
        logger.warning("unequal sample counts (%d real vs %d fake)", n_r, n_f)
    feats = []
    for images in (real_images, fake_images):
        for start in range(0, images.shape[0], batch_size):
            feats.append(enc.encode(images[start:start + batch_size]).numpy())
    joint = np.concatenate(feats).astype(np.float64)

    from sklearn.manifold import TSNE
    eff_perplexity = min(perplexity, (joint.shape[0] - 1) / 3.0)
    tsne = TSNE(n_components=3, perplexity=eff_perplexity, max_iter=max_iter,
                random_state=seed % (2 ** 32), init="pca", method="barnes_hut")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FutureWarning)
        points = tsne.fit_transform(joint)
    kl = float(getattr(tsne, "kl_divergence_", float("nan")))
    converged = bool(np.isfinite(kl))
    if not converged:
        logger.warning("t-SNE reported non-finite KL divergence")
    return ChamferResult(chamfer(points[:n_r], points[n_r:]), kl, converged)


def classifier_features(images: torch.Tensor, enc: EncoderBundle, cls: ClassifierBundle,
                        batch_size: int = 256) -> FeatureSet:
    """Evaluation feature space: classifier's last hidden layer on embeddings."""
    out = []
    for start in range(0, images.shape[0], batch_size):
        emb = enc.encode(images[start:start + batch_size])
        out.append(cls.features(emb).numpy())
    return FeatureSet(np.concatenate(out), source="classifier-features")


def class_posteriors(images: torch.Tensor, enc: EncoderBundle, cls: ClassifierBundle,
                     batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, images.shape[0], batch_size):
        emb = enc.encode(images[start:start + batch_size])
        out.append(cls.classify(emb).numpy())
    return np.concatenate(out)


@dataclass
class AttributeAccuracy:
    overall: float  # percent
    per_attribute: dict[str, float] = field(default_factory=dict)
    samples: int = 0


GenerateFn = Callable[[torch.Tensor, LatentCode], torch.Tensor]


def attribute_control_accuracy(generate_fn: GenerateFn, layout, enc: EncoderBundle,
                               cls: ClassifierBundle, labels: torch.Tensor, *,
                               seed: int = 0, batch_size: int = 64,
                               attribute_names: list[str] | None = None) -> AttributeAccuracy:
    """Generate with each requested label, classify the output through the
    frozen encoder+classifier, and report per-attribute and overall match
    percentages.

    categorical: argmax match; multilabel: per-attribute threshold at 0.5.
    """
    rng = make_generator(seed, 0xACC)
    kind = cls.label_kind
    k = cls.num_classes
    names = attribute_names or [f"attr_{i}" for i in range(k)]
    if kind == "categorical":
        per_class_hits = np.zeros(k)
        per_class_total = np.zeros(k)
    else:
        per_attr_hits = np.zeros(k)
    total = labels.shape[0]
    for start in range(0, total, batch_size):
        y = labels[start:start + batch_size]
        z = sample_latent(layout, y.shape[0], rng)
        fake = generate_fn(y, z)
        probs = cls.classify(enc.encode(fake))
        if kind == "categorical":
            pred = probs.argmax(dim=1)
            for cls_idx in range(k):
                sel = y == cls_idx
                per_class_total[cls_idx] += int(sel.sum())
                per_class_hits[cls_idx] += int((pred[sel] == cls_idx).sum())
        else:
            match = ((probs >= 0.5).float() == y).float()
            per_attr_hits += match.sum(dim=0).numpy()
    if kind == "categorical":
        per_attr = {names[i] if i < len(names) else f"class_{i}":
                    100.0 * per_class_hits[i] / max(per_class_total[i], 1)
                    for i in range(k)}
        overall = 100.0 * per_class_hits.sum() / max(per_class_total.sum(), 1)
    else:
        per_attr = {names[i]: 100.0 * per_attr_hits[i] / total for i in range(k)}
        overall = float(np.mean(list(per_attr.values())))
    return AttributeAccuracy(overall=float(overall), per_attribute=per_attr, samples=total)


@dataclass
class MetricReport:
    """One evaluation row: the columns of the result tables plus bookkeeping."""

    fid: float | None = None
    is_mean: float | None = None
    is_std: float | None = None
    chamfer: float | None = None
    attr_acc: float | None = None
    attr_acc_per_attribute: dict[str, float] = field(default_factory=dict)
    real_samples: int = 0
    fake_samples: int = 0
    config: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.fid is not None and self.fid < -1e-9:
            raise ValueError(f"fid must be >= 0, got {self.fid}")
        if self.is_mean is not None and self.is_mean < 1.0 - 1e-6:
            raise ValueError(f"inception-style score must be >= 1, got {self.is_mean}")
        if self.chamfer is not None and self.chamfer < 0:
            raise ValueError(f"chamfer must be >= 0, got {self.chamfer}")
        if self.attr_acc is not None and not 0.0 <= self.attr_acc <= 100.0:
            raise ValueError(f"attribute accuracy must be in [0, 100], got {self.attr_acc}")

    def to_dict(self) -> dict:
        return {
            "fid": self.fid,
            "is_mean": self.is_mean,
            "is_std": self.is_std,
            "chamfer": self.chamfer,
            "attr_acc": self.attr_acc,
            "attr_acc_per_attribute": self.attr_acc_per_attribute,
            "real_samples": self.real_samples,
            "fake_samples": self.fake_samples,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


def evaluate_generator(generate_fn: GenerateFn, layout, enc: EncoderBundle,
                       cls: ClassifierBundle, real_images: torch.Tensor,
                       real_labels: torch.Tensor, *, n_fake: int | None = None,
                       seed: int = 0, with_chamfer: bool = True,
                       is_splits: int = 10,
                       attribute_names: list[str] | None = None,
                       config_echo: dict | None = None) -> MetricReport:
    """Full metric sweep against a batch of real images."""
    rng = make_generator(seed, 0xE7A1)
    n_fake = n_fake or real_images.shape[0]
    ys = _sample_labels(real_labels, n_fake, cls.label_kind, rng)
    fakes = []
    for start in range(0, n_fake, 64):
        y = ys[start:start + 64]
        z = sample_latent(layout, y.shape[0], rng)
        fakes.append(generate_fn(y, z))
    fake_images = torch.cat(fakes)

    report = MetricReport(real_samples=real_images.shape[0], fake_samples=n_fake,
                          config=config_echo or {})
    report.fid = fid(classifier_features(real_images, enc, cls),
                     classifier_features(fake_images, enc, cls))
    if cls.label_kind == "categorical":
        report.is_mean, report.is_std = inception_score(
            class_posteriors(fake_images, enc, cls), splits=is_splits)
    if with_chamfer:
        report.chamfer = chamfer_embedding_distance(
            real_images, fake_images, enc, seed=seed).value
    acc = attribute_control_accuracy(generate_fn, layout, enc, cls, ys, seed=seed,
                                     attribute_names=attribute_names)
    report.attr_acc = acc.overall
    report.attr_acc_per_attribute = acc.per_attribute
    report.validate()
    return report


def _sample_labels(real_labels: torch.Tensor, n: int, kind: str,
                   rng: torch.Generator) -> torch.Tensor:
    """Draw labels from the empirical label distribution of the real set."""
    idx = torch.randint(real_labels.shape[0], (n,), generator=rng)
    return real_labels[idx]


def make_generate_fn(mapper: LatentMapper, generator: Generator) -> GenerateFn:
    from stagegan.generator import generate

    def fn(y: torch.Tensor, z: LatentCode) -> torch.Tensor:
        return generate(y, z, mapper, generator)

    return fn
