"""Dataset ingestion, synthetic data, contrastive augmentation and pseudo-labels.

On-disk layout for every dataset (real or synthetic):

    root/images/*.png            image files
    root/labels.csv              header ``filename,class`` (int) or
                                 ``filename,attr_1,...,attr_K`` (binary ints)

Images are normalized to [-1, 1] channels-first tensors on load, matching the
generator's tanh output range.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image, UnidentifiedImageError
from sklearn.cluster import KMeans

from stagegan.rng import make_generator, mix_seed

logger = logging.getLogger(__name__)

VALID_SIZES = (32, 64, 128, 256)
_IMAGE_EXTS = (".png", ".jpg", ".jpeg")


class DataConfigError(ValueError):
    """Fatal dataset configuration problem (missing root, bad attribute, ...)."""


def check_image_batch(x: torch.Tensor) -> None:
    """Validate the image-batch contract: (B, C, H, W), C in {1,3}, square
    power-of-two side in [32, 256], values in [-1, 1]."""
    if x.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got shape {tuple(x.shape)}")
    b, c, h, w = x.shape
    if b < 1 or c not in (1, 3):
        raise ValueError(f"bad batch/channel dims: B={b}, C={c}")
    if h != w or h not in VALID_SIZES:
        raise ValueError(f"image side must be square power of two in [32, 256], got {h}x{w}")
    lo, hi = float(x.min()), float(x.max())
    if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
        raise ValueError(f"pixel values outside [-1, 1]: min={lo}, max={hi}")


@dataclass(frozen=True)
class AugmentationConfig:
    """Contrastive view augmentation parameters (SimCLR-style recipe)."""

    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)
    flip_prob: float = 0.5
    color_jitter_prob: float = 0.8
    brightness: float = 0.8
    contrast: float = 0.8
    saturation: float = 0.8
    hue: float = 0.2
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5

    def __post_init__(self) -> None:
        for name in ("flip_prob", "color_jitter_prob", "grayscale_prob", "blur_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale must be within (0, 1], got {self.crop_scale}")
        if self.hue < 0 or self.hue > 0.5:
            raise ValueError(f"hue strength must be in [0, 0.5], got {self.hue}")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        """All probabilities zero, full-image crop: augment is the identity."""
        return cls(crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0), flip_prob=0.0,
                   color_jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0)


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset lives and how to split it."""

    root: str
    image_size: int = 32
    label_kind: str = "categorical"  # categorical | multilabel
    attributes: tuple[str, ...] | None = None  # multilabel column subset, None = all
    split_ratios: tuple[float, ...] = (0.8, 0.2)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.label_kind not in ("categorical", "multilabel"):
            raise DataConfigError(f"unknown label_kind {self.label_kind!r}")
        if self.image_size not in VALID_SIZES:
            raise DataConfigError(f"image_size must be one of {VALID_SIZES}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-8:
            raise DataConfigError(f"split ratios must sum to 1, got {self.split_ratios}")
        if len(self.split_ratios) not in (2, 3):
            raise DataConfigError("expect 2 (train/val) or 3 (train/val/test) split ratios")


_SPLIT_NAMES = ("train", "val", "test")


class DatasetHandle:
    """Loaded dataset: images on disk (lazily decoded, cached), labels in memory,
    deterministic train/val(/test) split derived from the spec seed."""

    def __init__(self, spec: DatasetSpec, files: list[Path], labels: torch.Tensor,
                 attribute_names: list[str], skipped: int):
        self.spec = spec
        self.files = files
        self.labels = labels  # (N,) int64 for categorical, (N, K) float32 for multilabel
        self.attribute_names = attribute_names
        self.skipped = skipped
        self._cache: dict[int, torch.Tensor] = {}
        n = len(files)
        order = torch.randperm(n, generator=make_generator(spec.seed, 0xDA7A)).tolist()
        bounds = []
        acc = 0
        for r in spec.split_ratios[:-1]:
            acc += int(round(r * n))
            bounds.append(acc)
        parts = np.split(np.asarray(order), bounds)
        self.splits: dict[str, list[int]] = {
            _SPLIT_NAMES[i]: sorted(part.tolist()) for i, part in enumerate(parts)
        }

    def __len__(self) -> int:
        return len(self.files)

    @property
    def label_kind(self) -> str:
        return self.spec.label_kind

    @property
    def num_classes(self) -> int:
        if self.label_kind == "categorical":
            return int(self.labels.max().item()) + 1 if len(self.labels) else 0
        return self.labels.shape[1]

    def class_counts(self) -> torch.Tensor:
        if self.label_kind == "categorical":
            return torch.bincount(self.labels, minlength=self.num_classes)
        return self.labels.sum(dim=0).long()

    def image(self, idx: int) -> torch.Tensor:
        """Image idx as a (C, H, W) float tensor in [-1, 1]."""
        cached = self._cache.get(idx)
        if cached is None:
            with Image.open(self.files[idx]) as im:
                im = im.convert("RGB")
                if im.size != (self.spec.image_size, self.spec.image_size):
                    im = im.resize((self.spec.image_size, self.spec.image_size),
                                   Image.Resampling.BILINEAR)
                arr = torch.from_numpy(np.asarray(im, dtype=np.uint8).copy())
            cached = arr.permute(2, 0, 1).contiguous()
            self._cache[idx] = cached
        return cached.float() / 127.5 - 1.0

    def batch(self, indices: Sequence[int]) -> tuple[torch.Tensor, torch.Tensor]:
        imgs = torch.stack([self.image(i) for i in indices])
        labels = self.labels[list(indices)]
        return imgs, labels

    def iter_batches(self, split: str, batch_size: int, *, shuffle: bool = False,
                     seed: int = 0, epoch: int = 0,
                     drop_last: bool = False) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Yield (images, labels) batches for a split.

        The batch sequence is a pure function of (seed, epoch) — prefetch
        workers, if ever added, must not change it.
        """
        idx = list(self.splits[split])
        if shuffle:
            perm = torch.randperm(len(idx), generator=make_generator(seed, epoch, 0xBA7C)).tolist()
            idx = [idx[i] for i in perm]
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            if drop_last and len(chunk) < batch_size:
                break
            yield self.batch(chunk)

    def iter_pair_batches(self, split: str, batch_size: int, cfg: AugmentationConfig,
                          *, seed: int = 0, epoch: int = 0,
                          drop_last: bool = True) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Yield (view_a, view_b) augmented-pair batches for contrastive training.

        Augmentation RNG is keyed by (seed, epoch, sample index), never by
        worker identity, so the stream is reproducible.
        """
        idx = list(self.splits[split])
        perm = torch.randperm(len(idx), generator=make_generator(seed, epoch, 0xBA7C)).tolist()
        idx = [idx[i] for i in perm]
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            if drop_last and len(chunk) < batch_size:
                break
            views_a, views_b = [], []
            for i in chunk:
                rng = make_generator(seed, epoch, i, 0xA06)
                a, b = augment_pair(self.image(i), cfg, rng)
                views_a.append(a)
                views_b.append(b)
            yield torch.stack(views_a), torch.stack(views_b)


def load_dataset(spec: DatasetSpec) -> DatasetHandle:
    """Load a root/images + root/labels.csv dataset per the spec."""
    root = Path(spec.root)
    if not root.is_dir():
        raise DataConfigError(f"dataset root does not exist: {root}")
    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise DataConfigError(f"missing label table: {labels_path}")

    with open(labels_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    if header[0] != "filename":
        raise DataConfigError(f"labels.csv must start with a filename column, got {header}")
    columns = header[1:]

    if spec.label_kind == "categorical":
        if columns != ["class"]:
            raise DataConfigError(f"categorical labels need a single 'class' column, got {columns}")
        attribute_names: list[str] = []
        col_idx: list[int] = []
    else:
        wanted = list(spec.attributes) if spec.attributes else columns
        missing = [a for a in wanted if a not in columns]
        if missing:
            raise DataConfigError(f"attributes not in label table: {missing}")
        attribute_names = wanted
        col_idx = [columns.index(a) for a in wanted]

    files: list[Path] = []
    label_rows: list[list[int]] = []
    skipped = 0
    img_dir = root / "images"
    for row in rows:
        path = img_dir / row[0]
        if not path.is_file() or path.suffix.lower() not in _IMAGE_EXTS:
            skipped += 1
            logger.warning("missing or non-image file skipped: %s", path)
            continue
        try:
            with Image.open(path) as im:
                im.verify()
        except (UnidentifiedImageError, OSError, SyntaxError):
            skipped += 1
            logger.warning("undecodable image skipped: %s", path)
            continue
        files.append(path)
        values = row[1:]
        if spec.label_kind == "categorical":
            label_rows.append([int(values[0])])
        else:
            label_rows.append([int(values[i]) for i in col_idx])

    if skipped:
        logger.warning("skipped %d undecodable/missing images under %s", skipped, root)
    if not files:
        raise DataConfigError(f"no decodable images under {img_dir}")

    if spec.label_kind == "categorical":
        labels = torch.tensor([r[0] for r in label_rows], dtype=torch.int64)
    else:
        labels = torch.tensor(label_rows, dtype=torch.float32)
        if not ((labels == 0) | (labels == 1)).all():
            raise DataConfigError("multilabel entries must be 0/1")
    return DatasetHandle(spec, files, labels, attribute_names, skipped)


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------

SHAPE_NAMES = ("disc", "square", "triangle", "ring", "cross", "diamond")


def _render_shape(size: int, shape: str, cx: float, cy: float, radius: float,
                  bg: np.ndarray, fg: np.ndarray) -> np.ndarray:
    """Draw one antialiased shape on a solid background; returns HxWx3 uint8."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    edge = 1.0  # ~1px soft edge
    if shape == "disc":
        d = np.hypot(dx, dy) - radius
    elif shape == "square":
        d = np.maximum(np.abs(dx), np.abs(dy)) - radius
    elif shape == "diamond":
        d = (np.abs(dx) + np.abs(dy)) - radius * 1.2
    elif shape == "ring":
        d = np.abs(np.hypot(dx, dy) - radius) - radius * 0.35
    elif shape == "cross":
        bar = radius * 0.38
        d = np.minimum(np.maximum(np.abs(dx) - bar, np.abs(dy) - radius),
                       np.maximum(np.abs(dy) - bar, np.abs(dx) - radius))
    elif shape == "triangle":
        # upward triangle: three half-plane distances
        h = radius
        d1 = dy - h
        d2 = -0.5 * dy - (math.sqrt(3) / 2) * dx - h * 0.5
        d3 = -0.5 * dy + (math.sqrt(3) / 2) * dx - h * 0.5
        d = np.maximum.reduce([d1, d2, d3])
    else:
        raise ValueError(f"unknown shape {shape!r}")
    alpha = np.clip(0.5 - d / edge, 0.0, 1.0)
    img = bg[None, None, :] * (1 - alpha[..., None]) + fg[None, None, :] * alpha[..., None]
    return np.clip(img * 255.0, 0, 255).astype(np.uint8)


def make_synthetic_dataset(n: int, k: int, size: int, seed: int,
                           root: str | Path, *,
                           split_ratios: tuple[float, ...] = (0.8, 0.2)) -> DatasetHandle:
    """Render n images in k shape classes under root/ and return a handle.

    Class determines shape identity; position, scale and background color are
    random nuisance factors.  Classes are balanced to within one sample and the
    rendering is byte-deterministic for a fixed seed.
    """
    if k < 2 or n < k:
        raise ValueError(f"need n >= k >= 2, got n={n}, k={k}")
    if k > len(SHAPE_NAMES):
        raise ValueError(f"at most {len(SHAPE_NAMES)} shape classes supported, got k={k}")
    if size not in VALID_SIZES:
        raise ValueError(f"size must be one of {VALID_SIZES}")

    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(mix_seed(seed, 0x57E7))
    rows = []
    for i in range(n):
        cls = i % k  # balanced to within 1
        radius = size * rng.uniform(0.18, 0.30)
        margin = radius + 2
        cx = rng.uniform(margin, size - margin)
        cy = rng.uniform(margin, size - margin)
        # muted random background hue; bright near-white foreground
        bg = rng.uniform(0.05, 0.45, size=3)
        fg = rng.uniform(0.85, 1.0, size=3)
        arr = _render_shape(size, SHAPE_NAMES[cls], cx, cy, radius, bg, fg)
        name = f"{i:06d}.png"
        Image.fromarray(arr).save(img_dir / name)
        rows.append((name, cls))

    with open(root / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["filename", "class"])
        writer.writerows(rows)

    spec = DatasetSpec(root=str(root), image_size=size, label_kind="categorical",
                       split_ratios=split_ratios, seed=seed)
    return load_dataset(spec)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def _rand(rng: torch.Generator, lo: float = 0.0, hi: float = 1.0) -> float:
    return float(torch.empty(1).uniform_(lo, hi, generator=rng).item())


def _augment_once(img01: torch.Tensor, cfg: AugmentationConfig, rng: torch.Generator) -> torch.Tensor:
    """One sampled augmentation of a (C, H, W) image in [0, 1]."""
    c, h, w = img01.shape
    out = img01

    # random resized crop
    scale = _rand(rng, cfg.crop_scale[0], cfg.crop_scale[1])
    log_ratio = _rand(rng, math.log(cfg.crop_ratio[0]), math.log(cfg.crop_ratio[1]))
    ratio = math.exp(log_ratio)
    area = scale * h * w
    ch = min(h, max(1, int(round(math.sqrt(area / ratio)))))
    cw = min(w, max(1, int(round(math.sqrt(area * ratio)))))
    top = int(_rand(rng, 0, h - ch + 1)) if h > ch else 0
    left = int(_rand(rng, 0, w - cw + 1)) if w > cw else 0
    if (ch, cw) != (h, w) or (top, left) != (0, 0):
        out = out[:, top:top + ch, left:left + cw]
        out = TF.resize(out, [h, w], antialias=True)

    if _rand(rng) < cfg.flip_prob:
        out = torch.flip(out, dims=[2])

    if _rand(rng) < cfg.color_jitter_prob:
        # SimCLR applies the four jitters in random order; fixed order is fine
        # at this scale and keeps the sampling stream simple.
        if cfg.brightness > 0:
            out = TF.adjust_brightness(out, _rand(rng, max(0.0, 1 - cfg.brightness), 1 + cfg.brightness))
        if cfg.contrast > 0:
            out = TF.adjust_contrast(out, _rand(rng, max(0.0, 1 - cfg.contrast), 1 + cfg.contrast))
        if cfg.saturation > 0:
            out = TF.adjust_saturation(out, _rand(rng, max(0.0, 1 - cfg.saturation), 1 + cfg.saturation))
        if cfg.hue > 0:
            out = TF.adjust_hue(out, _rand(rng, -cfg.hue, cfg.hue))

    if _rand(rng) < cfg.grayscale_prob:
        out = TF.rgb_to_grayscale(out, num_output_channels=c)

    if _rand(rng) < cfg.blur_prob:
        sigma = _rand(rng, 0.1, 2.0)
        out = TF.gaussian_blur(out, kernel_size=[3, 3], sigma=[sigma, sigma])

    return out.clamp(0.0, 1.0)


def augment_pair(image: torch.Tensor, cfg: AugmentationConfig,
                 rng: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Two independently augmented views of one (C, H, W) image in [-1, 1].

    Views keep the input resolution and value range.
    """
    if image.ndim != 3:
        raise ValueError(f"expected (C, H, W), got {tuple(image.shape)}")
    img01 = (image + 1.0) / 2.0
    view_a = _augment_once(img01, cfg, rng)
    view_b = _augment_once(img01, cfg, rng)
    return view_a * 2.0 - 1.0, view_b * 2.0 - 1.0


# ---------------------------------------------------------------------------
# Pseudo-labels
# ---------------------------------------------------------------------------

@dataclass
class PseudoLabelResult:
    labels: np.ndarray  # (N,) int
    inertia: float
    cluster_sizes: list[int] = field(default_factory=list)


def cluster_pseudo_labels(embeddings: np.ndarray, k: int, seed: int) -> PseudoLabelResult:
    """k-means (k-means++ init, 10 restarts) cluster assignments for embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ValueError(f"embeddings must be (N, d), got {embeddings.shape}")
    n = embeddings.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if not np.isfinite(embeddings).all():
        raise ValueError("embeddings contain non-finite values")
    if k == 1:
        center = embeddings.mean(axis=0)
        inertia = float(((embeddings - center) ** 2).sum())
        return PseudoLabelResult(np.zeros(n, dtype=np.int64), inertia, [n])

    if np.allclose(embeddings, embeddings[0]):
        logger.warning("all embeddings identical: one cluster holds every point")
        return PseudoLabelResult(np.zeros(n, dtype=np.int64), 0.0, [n] + [0] * (k - 1))

    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=mix_seed(seed) % (2**32))
    labels = km.fit_predict(embeddings).astype(np.int64)
    sizes = np.bincount(labels, minlength=k).tolist()
    if min(sizes) == 0:
        logger.warning("k-means produced empty clusters: sizes=%s", sizes)
    return PseudoLabelResult(labels, float(km.inertia_), sizes)


def write_labels_csv(path: str | Path, filenames: Sequence[str], labels: np.ndarray) -> None:
    """Write pseudo-labels in the standard categorical labels.csv layout."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["filename", "class"])
        for name, lab in zip(filenames, labels):
            writer.writerow([name, int(lab)])
