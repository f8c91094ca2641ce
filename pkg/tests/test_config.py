import pytest

from stagegan.config import (ConfigError, DataSection, PipelineConfig,
                             apply_env_overrides, build_section,
                             load_pipeline_config)
from stagegan.trainer import TrainConfig


def _write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadPipelineConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, ""), environ={})
        assert cfg.gan.iterations == 3000
        assert cfg.data.kind == "folder"
        assert cfg.eval.samples == 1024

    def test_sections_parsed(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, """
output_dir: runs/demo
data:
  kind: synthetic
  num_images: 120
  split_ratios: [0.8, 0.2]
encoder:
  epochs: 2
gan:
  iterations: 10
  loss_kind: hinge
"""), environ={})
        assert cfg.data.kind == "synthetic"
        assert cfg.data.num_images == 120
        assert cfg.data.split_ratios == (0.8, 0.2)
        assert cfg.encoder.epochs == 2
        assert cfg.gan.iterations == 10
        assert cfg.gan.loss_kind == "hinge"

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        sub = tmp_path / "configs"
        sub.mkdir()
        cfg = load_pipeline_config(_write(sub, """
output_dir: ../runs/x
data:
  root: ../data/y
"""), environ={})
        assert cfg.output_dir == str((tmp_path / "runs/x").resolve())
        assert cfg.data.root == str((tmp_path / "data/y").resolve())

    def test_absolute_root_kept(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, "data:\n  root: /abs/path\n"),
                                   environ={})
        assert cfg.data.root == "/abs/path"

    def test_unknown_top_level_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="trainer"):
            load_pipeline_config(_write(tmp_path, "trainer:\n  iterations: 5\n"),
                                 environ={})

    def test_unknown_section_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="iteration"):
            load_pipeline_config(_write(tmp_path, "gan:\n  iteration: 5\n"),
                                 environ={})

    def test_invalid_value_reported_with_section(self, tmp_path):
        with pytest.raises(ConfigError, match="gan"):
            load_pipeline_config(_write(tmp_path, "gan:\n  loss_kind: bad\n"),
                                 environ={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_pipeline_config(tmp_path / "nope.yaml", environ={})

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_pipeline_config(_write(tmp_path, "gan: [unclosed\n"), environ={})

    def test_non_mapping_top_level(self, tmp_path):
        with pytest.raises(ConfigError, match="mapping"):
            load_pipeline_config(_write(tmp_path, "- a\n- b\n"), environ={})


class TestEnvOverrides:
    def test_scalar_override(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, "gan:\n  iterations: 10\n"),
                                   environ={"INFOSCC_GAN_ITERATIONS": "25"})
        assert cfg.gan.iterations == 25

    def test_override_creates_section(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, ""),
                                   environ={"INFOSCC_ENCODER_EPOCHS": "7"})
        assert cfg.encoder.epochs == 7

    def test_yaml_typed_values(self, tmp_path):
        env = {"INFOSCC_GAN_USE_SPECTRAL_NORM": "true",
               "INFOSCC_GAN_LR_G": "1e-3"}  # YAML 1.1 string; must still become a float
        cfg = load_pipeline_config(_write(tmp_path, ""), environ=env)
        assert cfg.gan.use_spectral_norm is True
        assert cfg.gan.lr_g == pytest.approx(1e-3)

    def test_non_numeric_string_in_float_field_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="expected a number"):
            load_pipeline_config(_write(tmp_path, ""),
                                 environ={"INFOSCC_GAN_LR_G": "fast"})

    def test_output_dir_override(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, "output_dir: runs/a\n"),
                                   environ={"INFOSCC_OUTPUT_DIR": "runs/b"})
        assert cfg.output_dir == str((tmp_path / "runs/b").resolve())

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config section"):
            load_pipeline_config(_write(tmp_path, ""),
                                 environ={"INFOSCC_TRAINER_ITERATIONS": "5"})

    def test_missing_key_rejected(self):
        with pytest.raises(ConfigError, match="missing key"):
            apply_env_overrides({}, environ={"INFOSCC_GAN": "5"})

    def test_unrelated_vars_ignored(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, ""),
                                   environ={"PATH": "/bin", "HOME": "/root"})
        assert cfg.gan.iterations == 3000

    def test_multi_word_key(self, tmp_path):
        cfg = load_pipeline_config(
            _write(tmp_path, ""), environ={"INFOSCC_GAN_REG_PERIOD": "3"})
        assert cfg.gan.reg_period == 3


class TestBuildSection:
    def test_tuple_coercion(self):
        cfg = build_section(TrainConfig, {"iterations": 5}, "gan")
        assert isinstance(cfg, TrainConfig)

    def test_non_mapping_rejected(self):
        with pytest.raises(ConfigError, match="mapping"):
            build_section(TrainConfig, ["iterations"], "gan")

    def test_data_kind_validated(self):
        with pytest.raises(ConfigError):
            build_section(DataSection, {"kind": "database"}, "data")

    def test_dataset_spec_carries_fields(self):
        section = DataSection(kind="synthetic", root="/d", image_size=64,
                              split_ratios=(0.7, 0.3), seed=9)
        spec = section.dataset_spec()
        assert spec.root == "/d"
        assert spec.image_size == 64
        assert spec.split_ratios == (0.7, 0.3)
        assert spec.seed == 9


class TestArtifacts:
    def test_paths_under_output_dir(self):
        arts = PipelineConfig(output_dir="/tmp/run").artifacts()
        assert str(arts["encoder"]) == "/tmp/run/encoder.ckpt"
        assert str(arts["gan_last"]) == "/tmp/run/gan/last.ckpt"
        assert str(arts["eval_dir"]) == "/tmp/run/eval"
        assert set(arts) == {"encoder", "classifier", "gan_dir", "gan_last",
                             "gan_best", "train_log", "eval_dir"}
