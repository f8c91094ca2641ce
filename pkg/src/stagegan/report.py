"""Report rendering: metric tables (JSON + CSV) and diagnostic figures (PNG).

Everything here is presentation-only; the numbers come from metrics.py and the
JSONL training log written by trainer.py.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import torch
from torchvision.utils import make_grid, save_image

from stagegan.encoder import EncoderBundle
from stagegan.classifier import ClassifierBundle
from stagegan.data import DatasetHandle
from stagegan.generator import sample_latent, traverse
from stagegan.metrics import (MetricReport, evaluate_generator, make_generate_fn)
from stagegan.rng import make_generator
from stagegan.trainer import GanBundle


def load_train_log(path: str | Path) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _series(records, key):
    xs = [r["iter"] for r in records if r.get(key) is not None]
    ys = [r[key] for r in records if r.get(key) is not None]
    return xs, ys


def _rolling(ys, window=50):
    out = []
    acc = 0.0
    for i, y in enumerate(ys):
        acc += y
        if i >= window:
            acc -= ys[i - window]
        out.append(acc / min(i + 1, window))
    return out


def plot_training_curves(records: list[dict], out_path: str | Path) -> Path:
    """Four-panel figure: adversarial losses, classification loss,
    orthogonality penalty, and eval metrics over iterations."""
    out_path = Path(out_path)
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))

    ax = axes[0][0]
    for key, label in (("d_loss", "discriminator"), ("g_loss", "generator")):
        xs, ys = _series(records, key)
        if xs:
            ax.plot(xs, _rolling(ys), label=label)
    ax.set_title("adversarial losses (rolling mean)")
    ax.set_xlabel("iteration")
    if ax.lines:
        ax.legend()

    ax = axes[0][1]
    xs, ys = _series(records, "cls_loss")
    if xs:
        ax.plot(xs, _rolling(ys), color="tab:green")
    ax.set_title("classification regularization loss")
    ax.set_xlabel("iteration")

    ax = axes[1][0]
    xs, ys = _series(records, "orth_penalty")
    if xs:
        ax.plot(xs, ys, color="tab:red")
    ax.set_title("subspace orthogonality penalty")
    ax.set_xlabel("iteration")

    ax = axes[1][1]
    for key, label in (("fid", "FID"), ("is", "IS"), ("attr_acc", "attr acc %")):
        xs, ys = _series(records, key)
        if xs:
            ax.plot(xs, ys, marker="o", label=label)
    ax.set_title("evaluation metrics")
    ax.set_xlabel("iteration")
    if ax.lines:
        ax.legend()

    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _grid_labels(gan: GanBundle, rows: int) -> torch.Tensor:
    if gan.label_kind == "categorical":
        return torch.arange(gan.num_classes).repeat_interleave(rows)
    # multilabel: one row per single-attribute vector, plus an all-off row
    k = gan.num_classes
    ys = torch.cat([torch.zeros(1, k), torch.eye(k)])
    return ys.repeat_interleave(rows, dim=0)


def render_sample_grid(gan: GanBundle, out_path: str | Path, *, per_label: int = 8,
                       seed: int = 0) -> Path:
    """Grid of samples, one column block per label, rows sharing latents."""
    out_path = Path(out_path)
    ys = _grid_labels(gan, per_label)
    rng = make_generator(seed, 0x96D)
    z = sample_latent(gan.layout(), ys.shape[0], rng)
    images = make_generate_fn(gan.mapper, gan.generator)(ys, z)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_image(images, out_path, nrow=per_label, normalize=True, value_range=(-1, 1))
    return out_path


def render_traversal_sheet(gan: GanBundle, out_path: str | Path, *, label: int = 0,
                           steps: int = 7, span: float = 3.0, seed: int = 0,
                           max_rows: int = 12) -> Path:
    """One row per (layer, dim) coordinate, sweeping the value over ±span."""
    out_path = Path(out_path)
    layout = gan.layout()
    rng = make_generator(seed, 0x7A5)
    z = sample_latent(layout, 1, rng)
    if gan.label_kind == "categorical":
        y = torch.tensor([label])
    else:
        y = torch.zeros(1, gan.num_classes)
        if gan.num_classes > label:
            y[0, label] = 1.0
    values = torch.linspace(-span, span, steps).tolist()
    rows = []
    coords = [(li, d) for li, q in enumerate(layout.layer_dims) for d in range(q)]
    for layer_idx, dim in coords[:max_rows]:
        frames = traverse(y, z, layer_idx, dim, values, gan.mapper, gan.generator)
        rows.append(torch.cat(frames, dim=0))
    sheet = torch.cat(rows, dim=0)
    grid = make_grid(sheet, nrow=steps, normalize=True, value_range=(-1, 1))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_image(grid, out_path)
    return out_path


def write_csv_table(rows: list[dict], path: str | Path) -> Path:
    """Delimited table; header is the union of keys in first-seen order."""
    path = Path(path)
    header: list[str] = []
    for row in rows:
        for key in row:
            if key not in header:
                header.append(key)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
    return path


def metric_rows(report: MetricReport) -> list[dict]:
    rows = [{"metric": "fid", "value": report.fid}]
    if report.is_mean is not None:
        rows.append({"metric": "inception_score_mean", "value": report.is_mean})
        rows.append({"metric": "inception_score_std", "value": report.is_std})
    if report.chamfer is not None:
        rows.append({"metric": "chamfer_embedding_distance", "value": report.chamfer})
    rows.append({"metric": "attribute_control_accuracy_pct", "value": report.attr_acc})
    for name, acc in (report.attr_acc_per_attribute or {}).items():
        rows.append({"metric": f"attr_acc_pct[{name}]", "value": acc})
    return rows


def write_evaluation_report(data: DatasetHandle, enc: EncoderBundle,
                            cls: ClassifierBundle, gan: GanBundle,
                            out_dir: str | Path, *, samples: int = 1024,
                            with_chamfer: bool = True, seed: int = 0,
                            train_log: str | Path | None = None) -> MetricReport:
    """Evaluate the generator and write metrics.json / metrics.csv plus
    sample-grid, traversal and (if a log is given) training-curve figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    val_idx = data.splits["val"]
    n = min(samples, len(val_idx))
    real, real_y = data.batch(val_idx[:n])
    report = evaluate_generator(
        make_generate_fn(gan.mapper, gan.generator), gan.layout(), enc, cls,
        real, real_y, n_fake=n, seed=seed, with_chamfer=with_chamfer and n >= 10,
        attribute_names=data.attribute_names or None,
        config_echo={"checkpoint_hash": gan.checkpoint_hash,
                     "image_size": gan.image_size,
                     "label_kind": gan.label_kind, "samples": n})
    with open(out_dir / "metrics.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    write_csv_table(metric_rows(report), out_dir / "metrics.csv")
    render_sample_grid(gan, out_dir / "samples.png", seed=seed)
    render_traversal_sheet(gan, out_dir / "traversals.png", seed=seed)
    if train_log is not None and Path(train_log).is_file():
        plot_training_curves(load_train_log(train_log), out_dir / "training_curves.png")
    return report
