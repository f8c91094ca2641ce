import math

import pytest
import torch

from _fd import autograd_vs_fd
from stagegan.checkpoints import CheckpointError, load_archive
from stagegan.classifier import (AttributeClassifier, ClassifierConfig,
                                 accuracy, classifier_loss, load_classifier,
                                 probabilities, train_classifier)
from stagegan.rng import make_generator


class TestClassifierLoss:
    def test_perfect_prediction_zero(self):
        p = torch.tensor([[1.0, 0.0, 0.0]])
        y = torch.tensor([0])
        assert classifier_loss(p, y, "categorical").item() == pytest.approx(0.0, abs=1e-9)

    def test_uniform_three_way_is_log3(self):
        p = torch.full((4, 3), 1.0 / 3.0, dtype=torch.float64)
        y = torch.tensor([0, 1, 2, 1])
        assert classifier_loss(p, y, "categorical").item() == pytest.approx(math.log(3.0), abs=1e-6)

    def test_multilabel_half_is_log2(self):
        p = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        y = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        assert classifier_loss(p, y, "multilabel").item() == pytest.approx(math.log(2.0), abs=1e-6)

    def test_zero_probability_clamped_not_inf(self):
        p = torch.tensor([[0.0, 1.0]])
        y = torch.tensor([0])
        loss = classifier_loss(p, y, "categorical")
        assert torch.isfinite(loss)
        assert loss.item() == pytest.approx(-math.log(1e-12), rel=1e-3)

    def test_non_negative(self):
        g = make_generator(0)
        for _ in range(10):
            logits = torch.randn(5, 4, generator=g)
            p = probabilities(logits, "categorical")
            y = torch.randint(4, (5,), generator=g)
            assert classifier_loss(p, y, "categorical").item() >= 0.0

    def test_categorical_gradient_matches_fd(self):
        g = make_generator(1)
        logits = torch.randn(3, 4, generator=g, dtype=torch.float64)
        y = torch.tensor([2, 0, 3])
        err = autograd_vs_fd(
            lambda: classifier_loss(probabilities(logits, "categorical"), y, "categorical"),
            [logits])
        assert err <= 1e-4

    def test_multilabel_gradient_matches_fd(self):
        g = make_generator(2)
        logits = torch.randn(3, 5, generator=g, dtype=torch.float64)
        y = (torch.rand(3, 5, generator=g) > 0.5).double()
        err = autograd_vs_fd(
            lambda: classifier_loss(probabilities(logits, "multilabel"), y, "multilabel"),
            [logits])
        assert err <= 1e-4


class TestProbabilities:
    def test_categorical_rows_sum_to_one(self):
        logits = torch.randn(6, 3, generator=make_generator(3))
        p = probabilities(logits, "categorical")
        assert torch.allclose(p.sum(dim=1), torch.ones(6), atol=1e-6)
        assert (p >= 0).all()

    def test_multilabel_entries_in_unit_interval(self):
        logits = torch.randn(6, 4, generator=make_generator(4)) * 10
        p = probabilities(logits, "multilabel")
        assert (p >= 0).all() and (p <= 1).all()

    def test_argmax_shift_invariant(self):
        logits = torch.randn(5, 3, generator=make_generator(5))
        a = probabilities(logits, "categorical").argmax(dim=1)
        b = probabilities(logits + 7.3, "categorical").argmax(dim=1)
        assert torch.equal(a, b)

    def test_duplicated_rows_identical(self):
        torch.manual_seed(0)
        model = AttributeClassifier(8, 3).eval()
        e = torch.randn(1, 8, generator=make_generator(6)).repeat(3, 1)
        p = probabilities(model(e), "categorical")
        assert torch.equal(p[0], p[1]) and torch.equal(p[0], p[2])


class TestAccuracy:
    def test_categorical(self):
        p = torch.tensor([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        y = torch.tensor([0, 1, 1])
        assert accuracy(p, y, "categorical") == pytest.approx(2.0 / 3.0)

    def test_multilabel_threshold_half(self):
        p = torch.tensor([[0.51, 0.49], [0.3, 0.7]])
        y = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
        assert accuracy(p, y, "multilabel") == pytest.approx(3.0 / 4.0)


class TestSeparableEmbeddings:
    def test_linearly_separable_reaches_100_percent(self, tmp_path):
        """Three tight, well-separated clusters must be fit perfectly."""
        g = make_generator(7)
        centers = torch.tensor([[8.0, 0.0], [-8.0, 8.0], [0.0, -8.0]])
        emb = torch.cat([centers[i] + 0.1 * torch.randn(30, 2, generator=g)
                         for i in range(3)])
        y = torch.repeat_interleave(torch.arange(3), 30)

        torch.manual_seed(1)
        model = AttributeClassifier(2, 3, hidden=(16,))
        opt = torch.optim.Adam(model.parameters(), lr=5e-2)
        for _ in range(200):
            loss = classifier_loss(probabilities(model(emb), "categorical"), y,
                                   "categorical")
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        assert accuracy(probabilities(model(emb), "categorical"), y, "categorical") == 1.0


class TestTrainClassifier:
    def test_trains_and_records_history(self, tiny_dir, tiny_classifier):
        _, payload = load_archive(tiny_dir / "classifier.ckpt")
        assert len(payload["history"]) == 3
        assert all("val_accuracy" in h for h in payload["history"])

    def test_encoder_untouched_by_training(self, tmp_path, tiny_data, tiny_encoder):
        before = tiny_encoder.param_hash()
        cfg = ClassifierConfig(hidden=(16,), num_classes=3, epochs=2, batch_size=32, seed=1)
        train_classifier(tiny_data, tiny_encoder, cfg, tmp_path / "c.ckpt")
        assert tiny_encoder.param_hash() == before

    def test_same_seed_same_hash(self, tmp_path, tiny_data, tiny_encoder):
        cfg = ClassifierConfig(hidden=(16,), num_classes=3, epochs=2, batch_size=32, seed=5)
        h1 = train_classifier(tiny_data, tiny_encoder, cfg, tmp_path / "a.ckpt").param_hash()
        h2 = train_classifier(tiny_data, tiny_encoder, cfg, tmp_path / "b.ckpt").param_hash()
        assert h1 == h2

    def test_records_encoder_hash(self, tiny_encoder, tiny_classifier):
        assert tiny_classifier.encoder_hash == tiny_encoder.param_hash()

    def test_loader_rejects_wrong_encoder(self, tiny_dir, tiny_classifier):
        with pytest.raises(CheckpointError):
            load_classifier(tiny_dir / "classifier.ckpt",
                            expect_encoder_hash="0" * 64)

    def test_loader_override_flag(self, tiny_dir):
        bundle = load_classifier(tiny_dir / "classifier.ckpt",
                                 expect_encoder_hash="0" * 64,
                                 allow_encoder_mismatch=True)
        assert bundle.num_classes == 3

    def test_penultimate_feature_dim(self, tiny_classifier):
        e = torch.randn(4, 32, generator=make_generator(8))
        feats = tiny_classifier.features(e)
        assert feats.shape == (4, 32)

    def test_embedding_dim_mismatch_fatal(self, tiny_classifier):
        with pytest.raises(ValueError):
            tiny_classifier.classify(torch.randn(2, 7))
