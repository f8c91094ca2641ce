"""Command-line entry points tying the three training stages together.

Commands: synth-data, train-encoder, train-classifier, train-gan, evaluate,
generate, pseudo-label, serve, ablation.  All read the same YAML pipeline
config; completed outputs are skipped (delete them or pass --force/--restart
to redo).  --dry-run validates the config and prints the plan only.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

import stagegan
from stagegan.checkpoints import CheckpointError
from stagegan.config import ConfigError, PipelineConfig, load_pipeline_config
from stagegan.data import (DataConfigError, cluster_pseudo_labels, load_dataset,
                           make_synthetic_dataset, write_labels_csv)
from stagegan.encoder import TrainingDiverged, load_encoder, train_encoder
from stagegan.classifier import load_classifier, train_classifier
from stagegan.generator import sample_latent
from stagegan.metrics import make_generate_fn
from stagegan.rng import make_generator
from stagegan.trainer import load_gan, train_generator

logger = logging.getLogger(__name__)


class PrerequisiteError(RuntimeError):
    """A required artifact from an earlier command is missing."""


def _cfg(args) -> PipelineConfig:
    if not getattr(args, "config", None):
        raise ConfigError("this command needs --config")
    return load_pipeline_config(args.config)


def _dataset(cfg: PipelineConfig):
    root = Path(cfg.data.root)
    if not (root / "labels.csv").is_file():
        hint = "run synth-data first" if cfg.data.kind == "synthetic" else \
            f"no labels.csv under {root}"
        raise PrerequisiteError(f"dataset not found at {root}; {hint}")
    return load_dataset(cfg.data.dataset_spec())


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise PrerequisiteError(f"missing {path}; run {producer} first")
    return path


def _load_stage12(cfg: PipelineConfig):
    paths = cfg.artifacts()
    enc = load_encoder(_require(paths["encoder"], "train-encoder"),
                       expect_image_size=cfg.data.image_size)
    cls = load_classifier(_require(paths["classifier"], "train-classifier"),
                          expect_encoder_hash=enc.param_hash())
    return enc, cls


def _plan(args, lines: list[str]) -> bool:
    """With --dry-run, print the execution plan and report True (stop)."""
    if getattr(args, "dry_run", False):
        print("plan (dry run, no side effects):")
        for line in lines:
            print(f"  - {line}")
        return True
    return False


def cmd_synth_data(args) -> int:
    cfg = _cfg(args)
    d = cfg.data
    if d.kind != "synthetic":
        raise ConfigError("synth-data requires data.kind: synthetic")
    root = Path(d.root)
    done = (root / "labels.csv").is_file()
    if _plan(args, [f"render {d.num_images} images, {d.num_classes} shape classes, "
                    f"{d.image_size}x{d.image_size}, seed {d.seed} -> {root}"
                    + (" [exists, would skip]" if done and not args.force else "")]):
        return 0
    if done and not args.force:
        print(f"{root / 'labels.csv'} already exists; skipping (use --force to regenerate)")
        return 0
    handle = make_synthetic_dataset(d.num_images, d.num_classes, d.image_size,
                                    d.seed, root, split_ratios=d.split_ratios)
    print(f"wrote {len(handle)} images in {handle.num_classes} classes to {root}")
    return 0


def cmd_train_encoder(args) -> int:
    cfg = _cfg(args)
    out = cfg.artifacts()["encoder"]
    done = out.is_file()
    if _plan(args, [f"stage 1: contrastive encoder, {cfg.encoder.epochs} epochs, "
                    f"batch {cfg.encoder.batch_size} -> {out}"
                    + (" [exists, would skip]" if done and not args.force else "")]):
        return 0
    if done and not args.force:
        print(f"{out} already exists; skipping (use --force to retrain)")
        return 0
    data = _dataset(cfg)
    enc = train_encoder(data, cfg.encoder, out)
    print(f"wrote {out} (params {enc.param_hash()[:12]})")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _cfg(args)
    paths = cfg.artifacts()
    out = paths["classifier"]
    done = out.is_file()
    if _plan(args, [f"stage 2: classifier on frozen embeddings, "
                    f"{cfg.classifier.epochs} epochs -> {out}"
                    + (" [exists, would skip]" if done and not args.force else "")]):
        return 0
    if done and not args.force:
        print(f"{out} already exists; skipping (use --force to retrain)")
        return 0
    data = _dataset(cfg)
    if cfg.classifier.num_classes != data.num_classes:
        raise ConfigError(f"classifier.num_classes={cfg.classifier.num_classes} but "
                          f"dataset has {data.num_classes} classes")
    if cfg.classifier.label_kind != data.label_kind:
        raise ConfigError(f"classifier.label_kind={cfg.classifier.label_kind!r} but "
                          f"dataset is {data.label_kind!r}")
    enc = load_encoder(_require(paths["encoder"], "train-encoder"),
                       expect_image_size=cfg.data.image_size)
    train_classifier(data, enc, cfg.classifier, out)
    from stagegan.checkpoints import load_archive
    _, payload = load_archive(out)
    best = max((h.get("val_accuracy", 0.0) for h in payload.get("history", [])), default=0.0)
    print(f"wrote {out} (best val accuracy {100 * best:.2f}%)")
    return 0


def cmd_train_gan(args) -> int:
    cfg = _cfg(args)
    paths = cfg.artifacts()
    if _plan(args, [f"stage 3: {cfg.gan.iterations} iterations, "
                    f"{cfg.gan.disc_arch} discriminator + {cfg.gan.loss_kind} loss, "
                    f"classification step every {cfg.gan.reg_period} -> {paths['gan_dir']}"]):
        return 0
    data = _dataset(cfg)
    enc, cls = _load_stage12(cfg)
    if cfg.generator.image_size != cfg.data.image_size:
        raise ConfigError(f"generator.image_size={cfg.generator.image_size} but "
                          f"data.image_size={cfg.data.image_size}")
    ckpt = train_generator(data, enc, cls, cfg.generator, cfg.gan,
                           paths["gan_dir"], resume=not args.restart)
    print(f"wrote {ckpt}")
    return 0


def _gan_checkpoint(cfg: PipelineConfig, override: str | None) -> Path:
    if override:
        return _require(Path(override), "train-gan")
    return _require(cfg.artifacts()["gan_last"], "train-gan")


def cmd_evaluate(args) -> int:
    from stagegan.report import metric_rows, write_evaluation_report

    cfg = _cfg(args)
    paths = cfg.artifacts()
    ckpt = Path(args.checkpoint) if args.checkpoint else paths["gan_last"]
    if _plan(args, [f"evaluate {ckpt} on {cfg.eval.samples} samples "
                    f"(chamfer: {cfg.eval.with_chamfer}) -> {paths['eval_dir']}"]):
        return 0
    data = _dataset(cfg)
    enc, cls = _load_stage12(cfg)
    gan = load_gan(_gan_checkpoint(cfg, args.checkpoint))
    report = write_evaluation_report(
        data, enc, cls, gan, paths["eval_dir"], samples=cfg.eval.samples,
        with_chamfer=cfg.eval.with_chamfer, seed=cfg.eval.seed,
        train_log=paths["train_log"])
    width = max(len(r["metric"]) for r in metric_rows(report))
    for row in metric_rows(report):
        print(f"{row['metric']:<{width}}  {row['value']:.4f}")
    print(f"wrote report to {paths['eval_dir']}")
    return 0


def cmd_generate(args) -> int:
    from torchvision.utils import save_image

    if args.checkpoint:
        ckpt = _require(Path(args.checkpoint), "train-gan")
    else:
        ckpt = _gan_checkpoint(_cfg(args), None)
    if _plan(args, [f"generate {args.count} images for label {args.label!r}, "
                    f"seed {args.seed} from {ckpt} -> {args.out}"]):
        return 0
    gan = load_gan(ckpt)
    if gan.label_kind == "categorical":
        y = torch.tensor([int(args.label)])
        if not 0 <= y.item() < gan.num_classes:
            raise ValueError(f"label must be in [0, {gan.num_classes})")
    else:
        bits = [float(v) for v in args.label.split(",")]
        if len(bits) != gan.num_classes:
            raise ValueError(f"need {gan.num_classes} comma-separated attribute values")
        y = torch.tensor([bits])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen_fn = make_generate_fn(gan.mapper, gan.generator)
    for i in range(args.count):
        z = sample_latent(gan.layout(), 1, make_generator(args.seed, i, 0x5E2))
        img = gen_fn(y, z)
        save_image(img, out / f"sample_{i:03d}.png", normalize=True, value_range=(-1, 1))
    print(f"wrote {args.count} images to {out}")
    return 0


def cmd_pseudo_label(args) -> int:
    from stagegan.encoder import embed_dataset

    cfg = _cfg(args)
    paths = cfg.artifacts()
    k = args.k or cfg.data.num_classes
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "pseudo_labels.csv"
    if _plan(args, [f"embed dataset with {paths['encoder']}, k-means k={k} -> {out}"]):
        return 0
    data = _dataset(cfg)
    enc = load_encoder(_require(paths["encoder"], "train-encoder"),
                       expect_image_size=cfg.data.image_size)
    embs = []
    for start in range(0, len(data), 256):
        imgs, _ = data.batch(range(start, min(start + 256, len(data))))
        embs.append(enc.encode(imgs))
    result = cluster_pseudo_labels(torch.cat(embs).numpy(), k, cfg.data.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_labels_csv(out, [f.name for f in data.files], result.labels)
    sizes = ", ".join(str(s) for s in result.cluster_sizes)
    print(f"wrote {out} (cluster sizes: {sizes}; inertia {result.inertia:.3f})")
    return 0


def cmd_serve(args) -> int:
    from stagegan.service import run_service

    if args.checkpoint:
        ckpt = _require(Path(args.checkpoint), "train-gan")
    else:
        ckpt = _gan_checkpoint(_cfg(args), None)
    if _plan(args, [f"serve {ckpt} on {args.host}:{args.port} "
                    f"(CORS {'off' if args.no_cors else 'on'})"]):
        return 0
    print(f"serving {ckpt} on http://{args.host}:{args.port}")
    run_service(ckpt, host=args.host, port=args.port, cors=not args.no_cors)
    return 0


def cmd_ablation(args) -> int:
    from stagegan.ablation import COMBOS, run_ablation

    cfg = _cfg(args)
    out_dir = Path(cfg.output_dir) / "ablation"
    if _plan(args, [f"train + evaluate {len(COMBOS)} discriminator/loss combinations "
                    f"at {cfg.gan.iterations} iterations each -> {out_dir}"]):
        return 0
    data = _dataset(cfg)
    enc, cls = _load_stage12(cfg)
    rows = run_ablation(data, enc, cls, cfg.generator, cfg.gan, out_dir,
                        eval_samples=cfg.eval.samples,
                        with_chamfer=cfg.eval.with_chamfer, seed=cfg.eval.seed)
    for row in rows:
        print(f"{row['discriminator']:>6} + {row['adversarial_loss']:<15} "
              f"fid {row['fid']:.3f}  attr_acc {row['attr_acc_pct']:.1f}%")
    print(f"wrote report to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagegan",
        description="three-stage conditional image generation pipeline")
    parser.add_argument("--version", action="version", version=stagegan.__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, *, config=True, dry=True):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", help="pipeline YAML config")
        if dry:
            p.add_argument("--dry-run", action="store_true",
                           help="validate config and print the plan only")
        p.set_defaults(func=fn)
        return p

    p = add("synth-data", cmd_synth_data, "render the synthetic shape dataset")
    p.add_argument("--force", action="store_true", help="regenerate existing data")
    p = add("train-encoder", cmd_train_encoder, "stage 1: contrastive encoder")
    p.add_argument("--force", action="store_true")
    p = add("train-classifier", cmd_train_classifier, "stage 2: attribute classifier")
    p.add_argument("--force", action="store_true")
    p = add("train-gan", cmd_train_gan, "stage 3: conditional generator")
    p.add_argument("--restart", action="store_true",
                   help="ignore an existing last.ckpt and start over")
    p = add("evaluate", cmd_evaluate, "metric report + figures for a checkpoint")
    p.add_argument("--checkpoint", help="stage-3 checkpoint (default: <output>/gan/last.ckpt)")
    p = add("generate", cmd_generate, "write sample PNGs from a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--label", default="0", help="class index, or comma-separated 0/1 attributes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", default="samples")
    p = add("pseudo-label", cmd_pseudo_label, "k-means pseudo-labels from encoder embeddings")
    p.add_argument("--k", type=int, help="number of clusters (default: data.num_classes)")
    p.add_argument("--out", help="output CSV path (default: <output>/pseudo_labels.csv)")
    p = add("serve", cmd_serve, "HTTP generation service")
    p.add_argument("--checkpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--no-cors", action="store_true")
    add("ablation", cmd_ablation, "all discriminator x loss combinations + report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataConfigError, CheckpointError, PrerequisiteError,
            TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
