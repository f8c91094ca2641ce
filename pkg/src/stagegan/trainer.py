"""Stage 3: adversarial training with periodic classification regularization.

Every iteration runs one discriminator update and one generator update on the
adversarial loss (plus the subspace orthogonality penalty).  Every n-th
iteration the generator additionally takes a *separate* optimizer step on the
classification loss alone, computed by pushing generated images through the
frozen encoder and classifier.  Encoder and classifier parameters are never
updated here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from stagegan.adversary import (LOSS_KINDS, d_loss, g_loss, make_discriminator,
                                r1_penalty, select_class_scores)
from stagegan.checkpoints import (CheckpointError, code_version, hash_many,
                                  load_archive, save_archive)
from stagegan.classifier import ClassifierBundle, classifier_loss
from stagegan.data import DatasetHandle
from stagegan.encoder import EncoderBundle, TrainingDiverged
from stagegan.generator import (Generator, GeneratorConfig, LatentCode,
                                LatentMapper, init_gan_weights, sample_latent)
from stagegan.metrics import (attribute_control_accuracy, classifier_features,
                              chamfer_embedding_distance, class_posteriors, fid,
                              inception_score, make_generate_fn)
from stagegan.rng import make_generator, mix_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 32
    reg_period: int = 5  # classification-regularization cadence
    loss_kind: str = "lsgan"
    disc_arch: str = "patch"
    lambda_cls: float = 1.0
    lambda_orth: float = 1.0
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    d_base_channels: int = 64
    conditional_discriminator: bool = False
    use_spectral_norm: bool = False
    r1_gamma: float = 0.0
    constant_label: bool = False  # vanilla unconditional baseline
    eval_every: int = 500
    eval_samples: int = 256
    eval_chamfer: bool = False
    checkpoint_every: int = 500
    allow_stage_mismatch: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.reg_period < 1:
            raise ValueError("iterations and reg_period must be >= 1")
        if self.lambda_cls < 0 or self.lambda_orth < 0:
            raise ValueError("loss weights must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class TrainState:
    """Everything needed to continue training bit-exactly."""

    iteration: int
    mapper: LatentMapper
    generator: Generator
    discriminator: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    latent_rng: torch.Generator
    data_rng: torch.Generator
    gen_cfg: GeneratorConfig
    cfg: TrainConfig
    label_pool: torch.Tensor  # training labels, the empirical label distribution
    history: list[dict] = field(default_factory=list)
    best_fid: float = float("inf")
    reg_steps: int = 0

    def rolling_means(self, window: int = 100) -> dict[str, float]:
        recent = self.history[-window:]
        if not recent:
            return {}
        keys = ("d_loss", "g_loss", "orth_penalty")
        return {k: sum(h[k] for h in recent) / len(recent) for k in keys}

    def sample_labels(self, n: int) -> torch.Tensor:
        if self.cfg.constant_label:
            if self.label_pool.ndim == 1:
                return torch.zeros(n, dtype=torch.int64)
            return torch.zeros(n, self.label_pool.shape[1])
        idx = torch.randint(self.label_pool.shape[0], (n,), generator=self.data_rng)
        return self.label_pool[idx]


def _disc_scores(state: TrainState, images: torch.Tensor,
                 y: torch.Tensor) -> torch.Tensor:
    scores = state.discriminator(images)
    if state.cfg.conditional_discriminator:
        if state.cfg.constant_label or y.ndim != 1:
            raise ValueError("conditional discriminator needs categorical labels")
        scores = select_class_scores(scores, y)
    return scores


def regularization_loss(mapper, generator, enc, cls, y: torch.Tensor,
                        z: LatentCode, lambda_cls: float) -> torch.Tensor:
    """Classification loss through the full generate -> encode -> classify chain."""
    eps_g = mapper(y, z.base_noise)
    fake = generator(eps_g, z.layer_codes)
    emb = enc.encode_grad(fake)
    probs = cls.classify_grad(emb)
    return lambda_cls * classifier_loss(probs, y, cls.label_kind)


def adversarial_step(state: TrainState, real: torch.Tensor,
                     real_y: torch.Tensor) -> dict[str, float]:
    """One D update on (real, fresh fakes), then one G update on the
    adversarial loss plus the weighted orthogonality penalty."""
    cfg = state.cfg
    state.mapper.train()
    state.generator.train()
    state.discriminator.train()

    # discriminator update
    y_fake = state.sample_labels(real.shape[0])
    z = sample_latent(state.gen_cfg.layout(), real.shape[0], state.latent_rng)
    with torch.no_grad():
        fake = state.generator(state.mapper(y_fake, z.base_noise), z.layer_codes)
    loss_d = d_loss(_disc_scores(state, real, real_y),
                    _disc_scores(state, fake, y_fake), cfg.loss_kind)
    if cfg.r1_gamma > 0:
        loss_d = loss_d + 0.5 * cfg.r1_gamma * r1_penalty(
            state.discriminator, real, real_y if cfg.conditional_discriminator else None)
    if not torch.isfinite(loss_d):
        raise TrainingDiverged(f"non-finite discriminator loss at iter {state.iteration}")
    state.opt_d.zero_grad()
    loss_d.backward()
    state.opt_d.step()

    # generator update
    y_g = state.sample_labels(real.shape[0])
    z_g = sample_latent(state.gen_cfg.layout(), real.shape[0], state.latent_rng)
    fake_g = state.generator(state.mapper(y_g, z_g.base_noise), z_g.layer_codes)
    orth = state.generator.orthogonality_penalties()
    loss_g = g_loss(_disc_scores(state, fake_g, y_g), cfg.loss_kind) + cfg.lambda_orth * orth
    if not torch.isfinite(loss_g):
        raise TrainingDiverged(f"non-finite generator loss at iter {state.iteration}")
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    return {"d_loss": float(loss_d.item()), "g_loss": float(loss_g.item()),
            "orth_penalty": float(orth.item())}


def classification_regularization_step(state: TrainState, enc: EncoderBundle,
                                       cls: ClassifierBundle) -> float | None:
    """Separate generator update on the classification loss alone.

    With lambda_cls = 0 the update is skipped entirely so an unrelated
    optimizer step cannot drift the parameters.
    """
    cfg = state.cfg
    if cfg.lambda_cls == 0:
        return None
    state.mapper.train()
    state.generator.train()
    y = state.sample_labels(cfg.batch_size)
    z = sample_latent(state.gen_cfg.layout(), cfg.batch_size, state.latent_rng)
    loss = regularization_loss(state.mapper, state.generator, enc, cls, y, z,
                               cfg.lambda_cls)
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite classification loss at iter {state.iteration}")
    state.opt_g.zero_grad()
    loss.backward()
    state.opt_g.step()
    state.reg_steps += 1
    return float(loss.item())


def init_train_state(data: DatasetHandle, gen_cfg: GeneratorConfig,
                     cfg: TrainConfig, num_classes: int, label_kind: str) -> TrainState:
    torch.manual_seed(mix_seed(cfg.seed, 0x6A2))
    mapper = LatentMapper(num_classes, label_kind, gen_cfg.base_dim,
                          d_y=gen_cfg.d_y, d_g=gen_cfg.d_g, hidden=gen_cfg.mapper_hidden)
    generator = Generator(gen_cfg, seed=cfg.seed)
    init_gan_weights(mapper, mix_seed(cfg.seed, 1))
    init_gan_weights(generator, mix_seed(cfg.seed, 2))
    disc = make_discriminator(
        cfg.disc_arch, gen_cfg.image_size, gen_cfg.channels, cfg.d_base_channels,
        num_classes if cfg.conditional_discriminator else None, cfg.use_spectral_norm)
    init_gan_weights(disc, mix_seed(cfg.seed, 3))
    opt_g = torch.optim.Adam(list(mapper.parameters()) + list(generator.parameters()),
                             lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2))
    train_idx = data.splits["train"]
    return TrainState(
        iteration=0, mapper=mapper, generator=generator, discriminator=disc,
        opt_g=opt_g, opt_d=opt_d,
        latent_rng=make_generator(cfg.seed, 0x1A7),
        data_rng=make_generator(cfg.seed, 0xDA7),
        gen_cfg=gen_cfg, cfg=cfg, label_pool=data.labels[train_idx].clone())


def _sample_real(state: TrainState, data: DatasetHandle) -> tuple[torch.Tensor, torch.Tensor]:
    train_idx = data.splits["train"]
    pick = torch.randint(len(train_idx), (state.cfg.batch_size,), generator=state.data_rng)
    indices = [train_idx[i] for i in pick.tolist()]
    return data.batch(indices)


def save_checkpoint(state: TrainState, path: str | Path, *, encoder_hash: str = "",
                    classifier_hash: str = "", attribute_names: list[str] | None = None) -> None:
    layout = state.gen_cfg.layout()
    meta = {
        "stage": "gan",
        "L": layout.num_layers,
        "q": list(layout.layer_dims),
        "d_b": layout.base_dim,
        "d_g": state.gen_cfg.d_g,
        "K": state.mapper.num_classes,
        "label_kind": state.mapper.label_kind,
        "image_size": state.gen_cfg.image_size,
        "iteration": state.iteration,
        "encoder_hash": encoder_hash,
        "classifier_hash": classifier_hash,
        "code_version": code_version(),
    }
    payload = {
        "mapper": state.mapper.state_dict(),
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "latent_rng": state.latent_rng.get_state(),
        "data_rng": state.data_rng.get_state(),
        "gen_cfg": asdict(state.gen_cfg),
        "train_cfg": asdict(state.cfg),
        "label_pool": state.label_pool,
        "history": state.history,
        "best_fid": state.best_fid,
        "reg_steps": state.reg_steps,
        "iteration": state.iteration,
        "attribute_names": attribute_names or [],
    }
    save_archive(path, meta, payload)


def _configs_from_payload(payload: dict) -> tuple[GeneratorConfig, TrainConfig]:
    gd = dict(payload["gen_cfg"])
    if gd.get("layer_dims") is not None:
        gd["layer_dims"] = tuple(gd["layer_dims"])
    gd["mapper_hidden"] = tuple(gd["mapper_hidden"])
    return GeneratorConfig(**gd), TrainConfig(**payload["train_cfg"])


def load_checkpoint(path: str | Path) -> TrainState:
    """Restore a full training state (parameters, optimizers, RNG, history)."""
    meta, payload = load_archive(path)
    if meta.get("stage") != "gan":
        raise CheckpointError(f"{path} is not a stage-3 checkpoint")
    gen_cfg, cfg = _configs_from_payload(payload)
    state = init_train_state_from_parts(gen_cfg, cfg, meta["K"], meta["label_kind"],
                                        payload["label_pool"])
    state.mapper.load_state_dict(payload["mapper"])
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.latent_rng.set_state(payload["latent_rng"])
    state.data_rng.set_state(payload["data_rng"])
    state.history = list(payload["history"])
    state.best_fid = payload["best_fid"]
    state.reg_steps = payload["reg_steps"]
    state.iteration = payload["iteration"]
    return state


def init_train_state_from_parts(gen_cfg: GeneratorConfig, cfg: TrainConfig,
                                num_classes: int, label_kind: str,
                                label_pool: torch.Tensor) -> TrainState:
    class _Stub:
        splits = {"train": list(range(label_pool.shape[0]))}
        labels = label_pool
    return init_train_state(_Stub(), gen_cfg, cfg, num_classes, label_kind)  # type: ignore[arg-type]


@dataclass
class GanBundle:
    """Frozen stage-3 checkpoint loaded for inference."""

    mapper: LatentMapper
    generator: Generator
    gen_cfg: GeneratorConfig
    meta: dict
    checkpoint_hash: str = ""

    @property
    def image_size(self) -> int:
        return self.gen_cfg.image_size

    @property
    def num_classes(self) -> int:
        return self.meta["K"]

    @property
    def label_kind(self) -> str:
        return self.meta["label_kind"]

    @property
    def attribute_names(self) -> list[str]:
        return list(self.meta.get("attribute_names", []))

    def layout(self):
        return self.gen_cfg.layout()

    def param_hash(self) -> str:
        return hash_many({"mapper": self.mapper.state_dict(),
                          "generator": self.generator.state_dict()})


def load_gan(path: str | Path) -> GanBundle:
    meta, payload = load_archive(path)
    if meta.get("stage") != "gan":
        raise CheckpointError(f"{path} is not a stage-3 checkpoint")
    gen_cfg, cfg = _configs_from_payload(payload)
    mapper = LatentMapper(meta["K"], meta["label_kind"], gen_cfg.base_dim,
                          d_y=gen_cfg.d_y, d_g=gen_cfg.d_g, hidden=gen_cfg.mapper_hidden)
    generator = Generator(gen_cfg, seed=cfg.seed)
    mapper.load_state_dict(payload["mapper"])
    generator.load_state_dict(payload["generator"])
    mapper.eval()
    generator.eval()
    meta = dict(meta)
    meta["attribute_names"] = payload.get("attribute_names", [])
    bundle = GanBundle(mapper, generator, gen_cfg, meta)
    bundle.checkpoint_hash = bundle.param_hash()
    return bundle


def _eval_metrics(state: TrainState, data: DatasetHandle, enc: EncoderBundle,
                  cls: ClassifierBundle) -> dict[str, float]:
    cfg = state.cfg
    n = min(cfg.eval_samples, len(data.splits["val"]))
    rng = make_generator(cfg.seed, 0xE7A, state.iteration)
    val_idx = data.splits["val"]
    pick = torch.randint(len(val_idx), (n,), generator=rng)
    real, real_y = data.batch([val_idx[i] for i in pick.tolist()])

    gen_fn = make_generate_fn(state.mapper, state.generator)
    ys = state.sample_labels(n)
    zs = sample_latent(state.gen_cfg.layout(), n, rng)
    fake = gen_fn(ys, zs)

    out: dict[str, float] = {}
    out["fid"] = fid(classifier_features(real, enc, cls),
                     classifier_features(fake, enc, cls))
    if cls.label_kind == "categorical":
        is_mean, _ = inception_score(class_posteriors(fake, enc, cls),
                                     splits=min(10, max(1, n // 16)))
        out["is"] = is_mean
    if cfg.eval_chamfer and n >= 10:
        out["chamfer"] = chamfer_embedding_distance(real, fake, enc, seed=cfg.seed).value
    acc = attribute_control_accuracy(gen_fn, state.gen_cfg.layout(), enc, cls,
                                     state.sample_labels(n), seed=cfg.seed)
    out["attr_acc"] = acc.overall
    state.mapper.train()
    state.generator.train()
    return out


def train_generator(data: DatasetHandle, enc: EncoderBundle, cls: ClassifierBundle,
                    gen_cfg: GeneratorConfig, cfg: TrainConfig, out_dir: str | Path,
                    *, resume: bool = True) -> Path:
    """Run stage 3; writes last.ckpt / best.ckpt and a JSONL loss log.

    Returns the path of the final checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if enc.param_hash() != cls.encoder_hash and not cfg.allow_stage_mismatch:
        raise CheckpointError(
            "classifier was trained against a different encoder; "
            "rerun train-classifier or set allow_stage_mismatch")
    if gen_cfg.image_size != data.spec.image_size:
        raise ValueError(f"generator size {gen_cfg.image_size} != dataset size "
                         f"{data.spec.image_size}")

    enc_hash = enc.param_hash()
    cls_hash = cls.param_hash()
    for p in list(enc.backbone.parameters()) + list(enc.projector.parameters()):
        p.requires_grad_(False)
    for p in cls.model.parameters():
        p.requires_grad_(False)

    last_path = out_dir / "last.ckpt"
    best_path = out_dir / "best.ckpt"
    log_path = out_dir / "train_log.jsonl"
    if resume and last_path.is_file():
        state = load_checkpoint(last_path)
        logger.info("resuming stage 3 from iteration %d", state.iteration)
    else:
        state = init_train_state(data, gen_cfg, cfg,
                                 num_classes=cls.num_classes, label_kind=cls.label_kind)
        log_path.unlink(missing_ok=True)

    def write_ckpt(path: Path) -> None:
        save_checkpoint(state, path, encoder_hash=enc_hash, classifier_hash=cls_hash,
                        attribute_names=data.attribute_names)

    with open(log_path, "a") as log_f:
        while state.iteration < cfg.iterations:
            state.iteration += 1
            real, real_y = _sample_real(state, data)
            record: dict = {"iter": state.iteration}
            record.update(adversarial_step(state, real, real_y))
            record["cls_loss"] = None
            if state.iteration % cfg.reg_period == 0:
                record["cls_loss"] = classification_regularization_step(state, enc, cls)

            if cfg.eval_every and state.iteration % cfg.eval_every == 0:
                if enc.param_hash() != enc_hash or cls.param_hash() != cls_hash:
                    raise RuntimeError("frozen encoder/classifier parameters changed "
                                       "during stage-3 training")
                evals = _eval_metrics(state, data, enc, cls)
                record.update(evals)
                logger.info("iter %d: %s", state.iteration,
                            {k: round(v, 4) for k, v in evals.items()})
                if evals["fid"] < state.best_fid:
                    state.best_fid = evals["fid"]
                    write_ckpt(best_path)

            state.history.append(record)
            log_f.write(json.dumps(record) + "\n")
            if cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                write_ckpt(last_path)

    write_ckpt(last_path)
    if not best_path.is_file():
        write_ckpt(best_path)
    return last_path
