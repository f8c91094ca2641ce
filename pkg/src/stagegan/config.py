"""Pipeline configuration: one YAML file, one section per stage.

Sections: ``data``, ``encoder``, ``classifier``, ``generator``, ``gan``,
``eval`` plus a top-level ``output_dir``.  Unknown sections or keys are
rejected.  Environment variables of the form ``INFOSCC_<SECTION>_<KEY>``
override individual values (parsed as YAML scalars), e.g.
``INFOSCC_GAN_ITERATIONS=200``.  Relative paths are resolved against the
config file's directory.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from stagegan.classifier import ClassifierConfig
from stagegan.data import AugmentationConfig, DatasetSpec
from stagegan.encoder import EncoderConfig
from stagegan.generator import GeneratorConfig
from stagegan.trainer import TrainConfig

ENV_PREFIX = "INFOSCC_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSection:
    kind: str = "folder"  # "folder" (labels.csv on disk) or "synthetic"
    root: str = "data"
    image_size: int = 32
    label_kind: str = "categorical"
    num_classes: int = 3  # synthetic only
    num_images: int = 3000  # synthetic only
    attributes: tuple[str, ...] | None = None
    split_ratios: tuple[float, ...] = (0.9, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("folder", "synthetic"):
            raise ConfigError(f"data.kind must be 'folder' or 'synthetic', got {self.kind!r}")

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(root=self.root, image_size=self.image_size,
                           label_kind=self.label_kind, attributes=self.attributes,
                           split_ratios=self.split_ratios, seed=self.seed)


@dataclass(frozen=True)
class EvalSection:
    samples: int = 1024
    with_chamfer: bool = True
    seed: int = 0


_SECTIONS: dict[str, type] = {
    "data": DataSection,
    "encoder": EncoderConfig,
    "classifier": ClassifierConfig,
    "generator": GeneratorConfig,
    "gan": TrainConfig,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    output_dir: str = "runs/out"
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    gan: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def artifacts(self) -> dict[str, Path]:
        out = Path(self.output_dir)
        return {
            "encoder": out / "encoder.ckpt",
            "classifier": out / "classifier.ckpt",
            "gan_dir": out / "gan",
            "gan_last": out / "gan" / "last.ckpt",
            "gan_best": out / "gan" / "best.ckpt",
            "train_log": out / "gan" / "train_log.jsonl",
            "eval_dir": out / "eval",
        }

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


def _coerce(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin is None:
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            return build_section(hint, value, where)
        # YAML 1.1 reads "1e-3" as a string; cast to the annotated number type
        if hint is float and isinstance(value, (int, str)) and not isinstance(value, bool):
            try:
                return float(value)
            except ValueError as exc:
                raise ConfigError(f"{where}: expected a number, got {value!r}") from exc
        if hint is int and isinstance(value, str):
            try:
                return int(value)
            except ValueError as exc:
                raise ConfigError(f"{where}: expected an integer, got {value!r}") from exc
        return value
    if origin in (typing.Union, types.UnionType):
        if value is None:
            return None
        for arg in typing.get_args(hint):
            if arg is not type(None):
                return _coerce(value, arg, where)
        return value
    if origin is tuple and isinstance(value, (list, tuple)):
        args = typing.get_args(hint)
        if args and args[-1] is not Ellipsis:
            inner = args
        else:
            inner = [args[0]] * len(value) if args else [None] * len(value)
        return tuple(_coerce(v, h, where) if h else v for v, h in zip(value, inner))
    return value


def build_section(cls: type, raw: dict, name: str):
    """Construct a config dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce(value, hints.get(key), f"{name}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def apply_env_overrides(sections: dict, environ=None) -> dict:
    """Fold INFOSCC_<SECTION>_<KEY> variables into the raw section mapping."""
    environ = os.environ if environ is None else environ
    for var, raw_value in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):]
        if rest == "OUTPUT_DIR":
            sections["output_dir"] = raw_value
            continue
        section, _, key = rest.partition("_")
        section, key = section.lower(), key.lower()
        if section not in _SECTIONS:
            raise ConfigError(f"{var}: unknown config section {section!r}")
        if not key:
            raise ConfigError(f"{var}: missing key name after section")
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{var}: unparseable value {raw_value!r}: {exc}") from exc
        sections.setdefault(section, {})
        if not isinstance(sections[section], dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        sections[section][key] = value
    return sections


def load_pipeline_config(path: str | Path, *, environ=None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    raw = apply_env_overrides(dict(raw), environ)

    top_known = {"output_dir"} | set(_SECTIONS)
    unknown = sorted(set(raw) - top_known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")

    base = path.resolve().parent
    kwargs: dict = {}
    output_dir = raw.get("output_dir", "runs/out")
    kwargs["output_dir"] = str((base / output_dir).resolve())
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = build_section(cls, raw[name], name)
    cfg = PipelineConfig(**kwargs)

    root = Path(cfg.data.root)
    if not root.is_absolute():
        cfg = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, root=str((base / root).resolve())))
    return cfg
