import csv
import json

import pytest

from stagegan.ablation import (COMBOS, ablation_row, plot_ablation,
                               run_ablation)
from stagegan.metrics import MetricReport
from stagegan.trainer import TrainConfig


def test_combo_grid_is_complete():
    assert len(COMBOS) == 6
    archs = {a for a, _ in COMBOS}
    kinds = {k for _, k in COMBOS}
    assert archs == {"global", "patch"}
    assert kinds == {"hinge", "non_saturating", "lsgan"}


def test_row_shape():
    report = MetricReport(fid=1.0, is_mean=2.0, is_std=0.1, chamfer=3.0,
                          attr_acc=90.0)
    row = ablation_row("patch", "lsgan", report)
    assert row == {"discriminator": "patch", "adversarial_loss": "lsgan",
                   "fid": 1.0, "is_mean": 2.0, "is_std": 0.1, "chamfer": 3.0,
                   "attr_acc_pct": 90.0}


def test_plot_handles_missing_metrics(tmp_path):
    rows = [ablation_row(a, k, MetricReport(fid=1.0, attr_acc=50.0))
            for a, k in COMBOS]
    out = plot_ablation(rows, tmp_path / "ab.png")
    assert out.is_file()


@pytest.mark.slow
def test_run_ablation_trains_all_combos(tmp_path, tiny_data, tiny_encoder,
                                        tiny_classifier, tiny_gen_cfg):
    base = TrainConfig(iterations=2, batch_size=8, reg_period=2, eval_every=0,
                       checkpoint_every=0, d_base_channels=8, seed=0)
    rows = run_ablation(tiny_data, tiny_encoder, tiny_classifier, tiny_gen_cfg,
                        base, tmp_path, eval_samples=12, with_chamfer=False)
    assert [(r["discriminator"], r["adversarial_loss"]) for r in rows] == list(COMBOS)
    for r in rows:
        assert r["fid"] is not None and r["fid"] >= 0.0
        assert 0.0 <= r["attr_acc_pct"] <= 100.0

    with open(tmp_path / "ablation.json") as f:
        assert json.load(f) == rows
    with open(tmp_path / "ablation.csv") as f:
        parsed = list(csv.DictReader(f))
    assert len(parsed) == 6
    assert (tmp_path / "ablation.png").is_file()
    for arch, kind in COMBOS:
        assert (tmp_path / f"{arch}_{kind}" / "last.ckpt").is_file()
