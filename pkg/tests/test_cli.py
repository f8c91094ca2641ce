import pytest

from stagegan.checkpoints import file_sha256
from stagegan.cli import main

MINI_CONFIG = """\
output_dir: run
data:
  kind: synthetic
  root: data
  num_images: 60
  num_classes: 3
  image_size: 32
  split_ratios: [0.8, 0.2]
encoder:
  base_width: 8
  d_e: 32
  d_p: 16
  batch_size: 16
  epochs: 1
classifier:
  hidden: [32]
  epochs: 2
  batch_size: 32
generator:
  image_size: 32
  base_channels: 8
  base_dim: 32
  d_g: 64
  d_y: 16
  mapper_hidden: [32]
gan:
  iterations: 2
  batch_size: 8
  d_base_channels: 8
  eval_every: 0
  checkpoint_every: 0
eval:
  samples: 12
  with_chamfer: false
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    (path / "run.yaml").write_text(MINI_CONFIG)
    return path


@pytest.fixture(scope="module")
def cfg_arg(workdir):
    return ["--config", str(workdir / "run.yaml")]


@pytest.fixture(scope="module")
def pipeline(workdir, cfg_arg):
    """Run the full CLI pipeline once; tests inspect codes and artifacts."""
    codes = {}
    for step in ("synth-data", "train-encoder", "train-classifier", "train-gan"):
        codes[step] = main([step, *cfg_arg])
    return codes


class TestArgumentHandling:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip()

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_config_flag(self, capsys):
        assert main(["train-encoder"]) == 1
        assert "--config" in capsys.readouterr().err

    def test_nonexistent_config_file(self, capsys):
        assert main(["train-encoder", "--config", "/nope/run.yaml"]) == 1
        assert "not found" in capsys.readouterr().err


class TestDryRun:
    def test_plan_has_no_side_effects(self, workdir, cfg_arg, capsys):
        assert main(["synth-data", "--dry-run", *cfg_arg]) == 0
        out = capsys.readouterr().out
        assert "dry run" in out
        assert "60 images" in out

    def test_env_override_visible_in_plan(self, cfg_arg, capsys, monkeypatch):
        monkeypatch.setenv("INFOSCC_GAN_ITERATIONS", "123")
        assert main(["train-gan", "--dry-run", *cfg_arg]) == 0
        assert "123 iterations" in capsys.readouterr().out

    def test_invalid_config_fails_even_dry(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("gan:\n  iteration: 5\n")
        assert main(["train-gan", "--dry-run", "--config", str(bad)]) == 1
        assert "iteration" in capsys.readouterr().err


class TestPrerequisites:
    def test_encoder_needs_data(self, tmp_path, capsys):
        cfg = tmp_path / "fresh.yaml"
        cfg.write_text(MINI_CONFIG)
        assert main(["train-encoder", "--config", str(cfg)]) == 1
        assert "synth-data" in capsys.readouterr().err

    def test_evaluate_names_missing_stage(self, tmp_path, capsys):
        cfg = tmp_path / "fresh.yaml"
        cfg.write_text(MINI_CONFIG)
        assert main(["synth-data", "--config", str(cfg)]) == 0
        assert main(["evaluate", "--config", str(cfg)]) == 1
        assert "run train-encoder first" in capsys.readouterr().err

    def test_synth_data_rejects_folder_kind(self, tmp_path, capsys):
        cfg = tmp_path / "folder.yaml"
        cfg.write_text("data:\n  kind: folder\n")
        assert main(["synth-data", "--config", str(cfg)]) == 1
        assert "synthetic" in capsys.readouterr().err


class TestPipeline:
    def test_all_steps_succeed(self, pipeline):
        assert pipeline == {step: 0 for step in pipeline}

    def test_artifacts_exist(self, pipeline, workdir):
        run = workdir / "run"
        assert (workdir / "data" / "labels.csv").is_file()
        assert (run / "encoder.ckpt").is_file()
        assert (run / "classifier.ckpt").is_file()
        assert (run / "gan" / "last.ckpt").is_file()
        assert (run / "gan" / "best.ckpt").is_file()
        assert (run / "gan" / "train_log.jsonl").is_file()

    def test_rerun_skips_completed_stages(self, pipeline, cfg_arg, capsys):
        assert main(["synth-data", *cfg_arg]) == 0
        assert "skipping" in capsys.readouterr().out
        assert main(["train-encoder", *cfg_arg]) == 0
        assert "skipping" in capsys.readouterr().out

    def test_generate_writes_deterministic_pngs(self, pipeline, workdir, cfg_arg):
        outs = []
        for name in ("a", "b"):
            out = workdir / f"samples_{name}"
            assert main(["generate", *cfg_arg, "--label", "1", "--seed", "7",
                         "--count", "3", "--out", str(out)]) == 0
            files = sorted(out.glob("*.png"))
            assert len(files) == 3
            outs.append([file_sha256(f) for f in files])
        assert outs[0] == outs[1]

    def test_generate_rejects_bad_label(self, pipeline, cfg_arg, workdir, capsys):
        assert main(["generate", *cfg_arg, "--label", "9",
                     "--out", str(workdir / "bad")]) == 1
        assert "label" in capsys.readouterr().err

    def test_evaluate_writes_report(self, pipeline, workdir, cfg_arg, capsys):
        assert main(["evaluate", *cfg_arg]) == 0
        out = capsys.readouterr().out
        assert "fid" in out
        eval_dir = workdir / "run" / "eval"
        for name in ("metrics.json", "metrics.csv", "samples.png",
                     "traversals.png", "training_curves.png"):
            assert (eval_dir / name).is_file(), name

    def test_evaluate_missing_checkpoint_names_producer(self, pipeline, workdir,
                                                        cfg_arg, capsys):
        assert main(["evaluate", *cfg_arg, "--checkpoint",
                     str(workdir / "run" / "gan" / "nope.ckpt")]) == 1
        assert "run train-gan first" in capsys.readouterr().err

    def test_pseudo_label_writes_csv(self, pipeline, workdir, cfg_arg, capsys):
        out = workdir / "pseudo.csv"
        assert main(["pseudo-label", *cfg_arg, "--k", "3",
                     "--out", str(out)]) == 0
        assert "cluster sizes" in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert len(lines) == 61  # header + one row per image

    def test_serve_dry_run(self, pipeline, cfg_arg, capsys):
        assert main(["serve", "--dry-run", *cfg_arg]) == 0
        assert "127.0.0.1:8000" in capsys.readouterr().out


class TestInterrupt:
    def test_keyboard_interrupt_exit_code(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "fresh.yaml"
        cfg.write_text(MINI_CONFIG)

        def boom(*a, **k):
            raise KeyboardInterrupt

        monkeypatch.setattr("stagegan.cli.make_synthetic_dataset", boom)
        assert main(["synth-data", "--config", str(cfg)]) == 130
