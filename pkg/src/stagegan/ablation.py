"""Ablation over discriminator architecture x adversarial loss.

Runs all six (global | patch) x (hinge | non_saturating | lsgan) combinations
at the configured scale and emits one report row per combination: FID,
inception-style score, Chamfer embedding distance and attribute control
accuracy.  No ranking is asserted anywhere -- orderings at small scale are
noise; the report is for eyeballing and for checking that every combination
trains to completion.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from stagegan.adversary import LOSS_KINDS
from stagegan.classifier import ClassifierBundle
from stagegan.data import DatasetHandle
from stagegan.encoder import EncoderBundle
from stagegan.generator import GeneratorConfig
from stagegan.metrics import MetricReport, evaluate_generator, make_generate_fn
from stagegan.report import write_csv_table
from stagegan.trainer import TrainConfig, load_gan, train_generator

logger = logging.getLogger(__name__)

DISC_ARCHS = ("global", "patch")
COMBOS = tuple((arch, kind) for arch in DISC_ARCHS for kind in LOSS_KINDS)


def ablation_row(arch: str, kind: str, report: MetricReport) -> dict:
    return {
        "discriminator": arch,
        "adversarial_loss": kind,
        "fid": report.fid,
        "is_mean": report.is_mean,
        "is_std": report.is_std,
        "chamfer": report.chamfer,
        "attr_acc_pct": report.attr_acc,
    }


def plot_ablation(rows: list[dict], out_path: str | Path) -> Path:
    """Bar chart per metric, one bar per combination."""
    out_path = Path(out_path)
    names = [f"{r['discriminator']}\n{r['adversarial_loss']}" for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for ax, key, title in zip(axes, ("fid", "is_mean", "attr_acc_pct"),
                              ("FID", "inception-style score", "attr control acc (%)")):
        vals = [r[key] if r[key] is not None else 0.0 for r in rows]
        ax.bar(range(len(rows)), vals, color="tab:blue")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(names, fontsize=7)
        ax.set_title(title)
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def run_ablation(data: DatasetHandle, enc: EncoderBundle, cls: ClassifierBundle,
                 gen_cfg: GeneratorConfig, base_cfg: TrainConfig,
                 out_dir: str | Path, *, eval_samples: int = 256,
                 with_chamfer: bool = True, seed: int = 0) -> list[dict]:
    """Train + evaluate every combination; returns the report rows and writes
    ablation.json / ablation.csv / ablation.png under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    val_idx = data.splits["val"]
    n = min(eval_samples, len(val_idx))
    real, real_y = data.batch(val_idx[:n])

    rows = []
    for arch, kind in COMBOS:
        cfg = dataclasses.replace(base_cfg, disc_arch=arch, loss_kind=kind)
        run_dir = out_dir / f"{arch}_{kind}"
        logger.info("ablation: training %s + %s", arch, kind)
        ckpt = train_generator(data, enc, cls, gen_cfg, cfg, run_dir)
        gan = load_gan(ckpt)
        report = evaluate_generator(
            make_generate_fn(gan.mapper, gan.generator), gan.layout(), enc, cls,
            real, real_y, n_fake=n, seed=seed,
            with_chamfer=with_chamfer and n >= 10,
            attribute_names=data.attribute_names or None,
            config_echo={"discriminator": arch, "adversarial_loss": kind})
        rows.append(ablation_row(arch, kind, report))

    with open(out_dir / "ablation.json", "w") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
        f.write("\n")
    write_csv_table(rows, out_dir / "ablation.csv")
    plot_ablation(rows, out_dir / "ablation.png")
    return rows
